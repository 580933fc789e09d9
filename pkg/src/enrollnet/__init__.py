"""Clinical-trial enrollment success prediction pipeline."""

__version__ = "0.1.0"

from .ingest import TrialRecord, LabelRule, SplitConfig, temporal_split, summarize_dataset
from .embeddings import EmbeddingStore, StubConfig, stub_vector, mean_pool, load_store, save_store
from .features import FeatureSchema, FeatureStores, FeatureBundle, fit_schema, assemble
from .model import ModelDims, ModelParams, init_params, forward, backward, save_model, load_model
from .training import TrainConfig, train, oversample_minority, make_validation_split
from .evaluation import metric_report, roc_auc, pr_auc, logistic_baseline, permutation_importance

__all__ = [
    "TrialRecord", "LabelRule", "SplitConfig", "temporal_split", "summarize_dataset",
    "EmbeddingStore", "StubConfig", "stub_vector", "mean_pool", "load_store", "save_store",
    "FeatureSchema", "FeatureStores", "FeatureBundle", "fit_schema", "assemble",
    "ModelDims", "ModelParams", "init_params", "forward", "backward", "save_model", "load_model",
    "TrainConfig", "train", "oversample_minority", "make_validation_split",
    "metric_report", "roc_auc", "pr_auc", "logistic_baseline", "permutation_importance",
]
