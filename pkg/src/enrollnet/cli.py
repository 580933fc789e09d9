"""Single command-line entry point wiring the whole workflow.

Subcommands: ingest, featurize, train, evaluate, predict, explain,
importance, stats, stub-embeddings.  Exit codes: 0 success, 1 validation
error, 2 I/O error.  All randomness flows from --seed (default 42) plus the
seeds recorded in config/schema files, so reruns are byte-identical except
for wall-time fields in the run manifests.
"""

import argparse
import dataclasses
import hashlib
import json
import os
import sys
import time
from collections import Counter

import numpy as np

from . import __version__
from .embeddings import EmbeddingStore, StubConfig, load_store, save_store, stub_vector
from .features import (
    FeatureSchema,
    FeatureStores,
    assemble,
    featurize_records,
    fit_schema,
    read_bundles_jsonl,
    read_schema_json,
    sentence_token_texts,
    write_bundles_jsonl,
    write_schema_json,
)
from .ingest import (
    LabelRule,
    Rejection,
    SplitConfig,
    ingest_xml_dir,
    label_records,
    parse_partial_date,
    read_records_jsonl,
    summarize_dataset,
    temporal_split,
    write_records_jsonl,
    write_rejections_jsonl,
)
from .model import MODEL_FORMAT_VERSION, ModelDims, forward, load_model, save_model
from .evaluation import (
    LogisticConfig,
    format_metric_table,
    logistic_baseline,
    metric_report,
    permutation_importance,
)
from .training import (
    DEFAULT_ATTN,
    DEFAULT_CROSS_LAYERS,
    DEFAULT_HIDDEN,
    TrainConfig,
    format_epoch_table,
    make_validation_split,
    oversample_minority,
    train,
    write_epoch_logs,
)

STORE_SUBDIRS = {
    "drug": "drug",
    "disease": "disease",
    "word": "word",
    "sentence": "sentence",
    "llm_drug": "llm_drug",
    "llm_disease": "llm_disease",
}

STUB_KINDS = ("Word", "CriterionSentence", "DrugName", "DiseaseName", "LlmDrug", "LlmDisease")


class RecordNotFound(ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad flags by default; the contract wants 1.
    def error(self, message):
        self.print_usage(sys.stderr)
        raise SystemExit(1)


def _config_hash(obj) -> str:
    return hashlib.sha256(json.dumps(obj, sort_keys=True).encode("utf-8")).hexdigest()


def _write_manifest(target: str, command: str, inputs, seed, config, started: float) -> None:
    manifest = {
        "command": command,
        "config_hash": _config_hash(config),
        "input_paths": sorted(str(p) for p in inputs if p),
        "seed": seed,
        "artifact_versions": {
            "enrollnet": __version__,
            "model_format": MODEL_FORMAT_VERSION,
        },
        "wall_time_s": time.perf_counter() - started,
    }
    # run.manifest.json inside directories keeps clear of format-owned files
    # (an embedding store carries its own manifest.json).
    if os.path.isdir(target):
        path = os.path.join(target, "run.manifest.json")
    else:
        path = target + ".manifest.json"
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2)
        fh.write("\n")


def _write_json(obj, path: str) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, ensure_ascii=False)
        fh.write("\n")


def _load_stores(schema: FeatureSchema, stores_dir: str | None) -> FeatureStores:
    stub = StubConfig(seed=schema.stub_seed, dimension=schema.embedding_dim)
    if stores_dir is None:
        return FeatureStores(stub=stub)
    loaded = {}
    for attr, subdir in STORE_SUBDIRS.items():
        path = os.path.join(stores_dir, subdir)
        if os.path.isdir(path):
            loaded[attr] = load_store(path, expected_dim=schema.embedding_dim)
    return FeatureStores(stub=stub, **loaded)


def _load_features(features_dir: str):
    schema = read_schema_json(os.path.join(features_dir, "schema.json"))
    bundles = read_bundles_jsonl(os.path.join(features_dir, "bundles.jsonl"), schema)
    return schema, bundles


def _scores(params, bundles):
    return np.array([forward(b, params).y_hat for b in bundles])


def _labels(bundles):
    labels = [b.label for b in bundles]
    if any(l not in (0, 1) for l in labels):
        raise ValueError("every bundle needs a 0/1 label for this command")
    return np.array(labels)


def cmd_ingest(args) -> int:
    started = time.perf_counter()
    warnings: Counter = Counter()
    rejections = []
    if args.xml_dir:
        records, rejections = ingest_xml_dir(args.xml_dir, warnings=warnings)
    else:
        records = read_records_jsonl(args.records_in)
    if not args.no_labels:
        rule = LabelRule.from_json_file(args.label_rule) if args.label_rule else LabelRule()
        records, label_rejects, excluded = label_records(records, rule)
        rejections.extend(label_rejects)
        for status, count in sorted(excluded.items()):
            print(f"excluded {count} records with status {status!r}", file=sys.stderr)
    write_records_jsonl(records, args.out)
    if args.rejects:
        write_rejections_jsonl(rejections, args.rejects)
    if args.summary:
        _write_json(summarize_dataset(records).to_dict(), args.summary)
    if args.train_out or args.test_out:
        cfg = SplitConfig(cutoff_date=parse_partial_date(args.cutoff))
        train_set, test_set, dropped = temporal_split(records, cfg)
        if args.train_out:
            write_records_jsonl(train_set, args.train_out)
        if args.test_out:
            write_records_jsonl(test_set, args.test_out)
        if args.dropped_out:
            write_records_jsonl(dropped, args.dropped_out)
        print(
            f"split: {len(train_set)} train / {len(test_set)} test / {len(dropped)} dropped",
            file=sys.stderr,
        )
    config = {
        "label_rule": args.label_rule,
        "no_labels": args.no_labels,
        "cutoff": args.cutoff,
    }
    _write_manifest(args.out, "ingest", [args.xml_dir, args.records_in], args.seed, config, started)
    print(f"wrote {len(records)} records, {len(rejections)} rejections", file=sys.stderr)
    return 0


def cmd_featurize(args) -> int:
    started = time.perf_counter()
    records = read_records_jsonl(args.records)
    if args.schema:
        schema = read_schema_json(args.schema)
    else:
        schema = fit_schema(
            records,
            embedding_dim=args.dim,
            top_k_countries=args.top_countries,
            criteria_mode=args.criteria_mode,
            stub_seed=args.seed,
        )
    stores = _load_stores(schema, args.stores_dir)
    bundles = featurize_records(records, schema, stores)
    os.makedirs(args.out_dir, exist_ok=True)
    write_schema_json(schema, os.path.join(args.out_dir, "schema.json"))
    write_bundles_jsonl(bundles, os.path.join(args.out_dir, "bundles.jsonl"))
    config = {"schema": schema.to_json(), "stores_dir": args.stores_dir}
    _write_manifest(args.out_dir, "featurize", [args.records, args.stores_dir], args.seed, config, started)
    print(f"wrote {len(bundles)} bundles (cross width {schema.cross_width})", file=sys.stderr)
    return 0


def _resolved_train_config(args) -> tuple[TrainConfig, dict]:
    cfg = TrainConfig.from_json_file(args.config) if args.config else TrainConfig()
    model_section = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            model_section = json.load(fh).get("model", {})
    overrides = {
        "batch_size": args.batch_size,
        "max_epochs": args.max_epochs,
        "patience": args.patience,
        "lr": args.lr,
        "weight_decay": args.weight_decay,
        "seed": args.seed,
        "validation_fraction": args.validation_fraction,
    }
    cfg = dataclasses.replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    dims_cfg = {
        "hidden": args.hidden or model_section.get("hidden", DEFAULT_HIDDEN),
        "attn": args.attn or model_section.get("attn", DEFAULT_ATTN),
        "cross_layers": args.cross_layers or model_section.get("cross_layers", DEFAULT_CROSS_LAYERS),
    }
    return cfg, dims_cfg


def cmd_train(args) -> int:
    started = time.perf_counter()
    schema, bundles = _load_features(args.features)
    cfg, dims_cfg = _resolved_train_config(args)
    fit, val = make_validation_split(bundles, cfg.validation_fraction)
    fit = oversample_minority(fit, seed=cfg.seed)
    dims = ModelDims(
        word_dim=schema.embedding_dim,
        hidden=dims_cfg["hidden"],
        attn=dims_cfg["attn"],
        cross_width=schema.cross_width,
        cross_layers=dims_cfg["cross_layers"],
    )
    params, logs = train(fit, val, cfg, dims=dims)
    save_model(params, args.out, feature_schema=schema.to_json())
    if args.epoch_log:
        write_epoch_logs(logs, args.epoch_log)
    print(format_epoch_table(logs), file=sys.stderr)
    config = {"train": cfg.__dict__, "dims": dims_cfg}
    _write_manifest(args.out, "train", [args.features, args.config], cfg.seed, config, started)
    return 0


def cmd_evaluate(args) -> int:
    started = time.perf_counter()
    params, _, _ = load_model(args.model)
    _, bundles = _load_features(args.features)
    report = metric_report(_scores(params, bundles), _labels(bundles), args.threshold)
    _write_json(report.to_dict(), args.out)
    table = format_metric_table(report)
    if args.table:
        with open(args.table, "w", encoding="utf-8") as fh:
            fh.write(table + "\n")
    print(table, file=sys.stderr)
    _write_manifest(args.out, "evaluate", [args.model, args.features], args.seed,
                    {"threshold": args.threshold}, started)
    return 0


def cmd_predict(args) -> int:
    started = time.perf_counter()
    params, _, _ = load_model(args.model)
    _, bundles = _load_features(args.features)
    scores = _scores(params, bundles)
    with open(args.out, "w", encoding="utf-8") as fh:
        for bundle, score in zip(bundles, scores):
            fh.write(json.dumps({"nct_id": bundle.nct_id, "score": float(score)}) + "\n")
    _write_manifest(args.out, "predict", [args.model, args.features], args.seed, {}, started)
    return 0


def _attention_document(record, schema: FeatureSchema, bundle, trace) -> dict:
    def level(sentences, matrices, group_trace):
        kept = []
        index = 0
        for sentence in sentences:
            texts = sentence_token_texts(sentence, schema.criteria_mode)
            if not texts:
                continue
            sentence_trace = group_trace.sentences[index]
            words = sorted(
                (
                    {"word": text, "weight": float(weight)}
                    for text, weight in zip(texts, sentence_trace.alpha)
                ),
                key=lambda w: -w["weight"],
            )
            kept.append(
                {
                    "sentence": sentence,
                    "weight": float(group_trace.beta[index]),
                    "words": words,
                }
            )
            index += 1
        return sorted(kept, key=lambda s: -s["weight"])

    return {
        "nct_id": record.nct_id,
        "prediction": trace.y_hat,
        "inclusion": level(record.inclusion, bundle.inclusion_words, trace.inclusion),
        "exclusion": level(record.exclusion, bundle.exclusion_words, trace.exclusion),
    }


def cmd_explain(args) -> int:
    started = time.perf_counter()
    params, _, schema_json = load_model(args.model)
    if args.schema:
        schema = read_schema_json(args.schema)
    elif schema_json:
        schema = FeatureSchema.from_json(schema_json)
    else:
        raise ValueError("model file carries no feature schema; pass --schema")
    records = [r for r in read_records_jsonl(args.records) if r.nct_id == args.nct]
    if not records:
        raise RecordNotFound(f"record {args.nct} not found in {args.records}")
    stores = _load_stores(schema, args.stores_dir)
    bundle = assemble(records[0], schema, stores)
    trace = forward(bundle, params)
    _write_json(_attention_document(records[0], schema, bundle, trace), args.out)
    _write_manifest(args.out, "explain", [args.model, args.records], args.seed,
                    {"nct": args.nct}, started)
    return 0


def cmd_importance(args) -> int:
    started = time.perf_counter()
    schema, bundles = _load_features(args.features)
    features = np.stack([b.cross_input for b in bundles])
    labels = _labels(bundles)
    baseline = logistic_baseline(features, labels, LogisticConfig(max_iter=args.max_iter))
    report = permutation_importance(
        baseline.predict_proba,
        features,
        labels,
        schema.groups,
        repeats=args.repeats,
        seed=args.seed,
        per_scalar=args.per_scalar,
    )
    _write_json(report.to_dict(), args.out)
    _write_manifest(args.out, "importance", [args.features], args.seed,
                    {"repeats": args.repeats, "per_scalar": args.per_scalar}, started)
    return 0


def cmd_stats(args) -> int:
    started = time.perf_counter()
    records = read_records_jsonl(args.records)
    _write_json(summarize_dataset(records).to_dict(), args.out)
    _write_manifest(args.out, "stats", [args.records], args.seed, {}, started)
    return 0


def _stub_keys(records, kind: str):
    keys = set()
    if kind in ("DrugName", "LlmDrug"):
        for record in records:
            keys.update(record.drugs)
    elif kind in ("DiseaseName", "LlmDisease"):
        for record in records:
            keys.update(record.diseases)
    elif kind == "CriterionSentence":
        for record in records:
            keys.update(record.inclusion)
            keys.update(record.exclusion)
    elif kind == "Word":
        from .features import tokenize

        for record in records:
            for sentence in record.inclusion + record.exclusion:
                keys.update(tokenize(sentence))
    else:
        raise ValueError(f"unknown stub kind {kind!r}")
    return sorted(keys)


def cmd_stub_embeddings(args) -> int:
    started = time.perf_counter()
    records = read_records_jsonl(args.records)
    cfg = StubConfig(seed=args.seed, dimension=args.dim).derive(args.kind)
    store = EmbeddingStore(kind=args.kind, dimension=args.dim)
    for key in _stub_keys(records, args.kind):
        store.put(key, stub_vector(cfg, key))
    save_store(store, args.out_dir)
    _write_manifest(args.out_dir, "stub-embeddings", [args.records], args.seed,
                    {"kind": args.kind, "dim": args.dim}, started)
    print(f"materialized {len(store)} {args.kind} vectors", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="enrollnet", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def add(name, fn, configure):
        p = sub.add_parser(name)
        p.add_argument("--seed", type=int, default=42)
        configure(p)
        p.set_defaults(func=fn)
        return p

    def ingest_args(p):
        src = p.add_mutually_exclusive_group(required=True)
        src.add_argument("--xml-dir")
        src.add_argument("--records-in")
        p.add_argument("--out", required=True)
        p.add_argument("--rejects")
        p.add_argument("--label-rule")
        p.add_argument("--no-labels", action="store_true")
        p.add_argument("--summary")
        p.add_argument("--train-out")
        p.add_argument("--test-out")
        p.add_argument("--dropped-out")
        p.add_argument("--cutoff", default="2015-01-01")

    def featurize_args(p):
        p.add_argument("--records", required=True)
        p.add_argument("--out-dir", required=True)
        p.add_argument("--schema")
        p.add_argument("--stores-dir")
        p.add_argument("--dim", type=int, default=16)
        p.add_argument("--criteria-mode", choices=("word", "sentence"), default="word")
        p.add_argument("--top-countries", type=int, default=30)

    def train_args(p):
        p.add_argument("--features", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--config")
        p.add_argument("--epoch-log")
        p.add_argument("--batch-size", type=int)
        p.add_argument("--max-epochs", type=int)
        p.add_argument("--patience", type=int)
        p.add_argument("--lr", type=float)
        p.add_argument("--weight-decay", type=float)
        p.add_argument("--validation-fraction", type=float)
        p.add_argument("--hidden", type=int)
        p.add_argument("--attn", type=int)
        p.add_argument("--cross-layers", type=int)
        p.set_defaults(seed=None)

    def evaluate_args(p):
        p.add_argument("--model", required=True)
        p.add_argument("--features", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--threshold", type=float, default=0.5)
        p.add_argument("--table")

    def predict_args(p):
        p.add_argument("--model", required=True)
        p.add_argument("--features", required=True)
        p.add_argument("--out", required=True)

    def explain_args(p):
        p.add_argument("--model", required=True)
        p.add_argument("--records", required=True)
        p.add_argument("--nct", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--schema")
        p.add_argument("--stores-dir")

    def importance_args(p):
        p.add_argument("--features", required=True)
        p.add_argument("--out", required=True)
        p.add_argument("--repeats", type=int, default=3)
        p.add_argument("--per-scalar", action="store_true")
        p.add_argument("--max-iter", type=int, default=5000)

    def stats_args(p):
        p.add_argument("--records", required=True)
        p.add_argument("--out", required=True)

    def stub_args(p):
        p.add_argument("--records", required=True)
        p.add_argument("--kind", choices=STUB_KINDS, required=True)
        p.add_argument("--dim", type=int, default=16)
        p.add_argument("--out-dir", required=True)

    add("ingest", cmd_ingest, ingest_args)
    add("featurize", cmd_featurize, featurize_args)
    add("train", cmd_train, train_args)
    add("evaluate", cmd_evaluate, evaluate_args)
    add("predict", cmd_predict, predict_args)
    add("explain", cmd_explain, explain_args)
    add("importance", cmd_importance, importance_args)
    add("stats", cmd_stats, stats_args)
    add("stub-embeddings", cmd_stub_embeddings, stub_args)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except OSError as exc:
        print(f"enrollnet: I/O error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, RuntimeError, Rejection) as exc:
        print(f"enrollnet: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
