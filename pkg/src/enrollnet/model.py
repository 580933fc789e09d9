"""The customized deep & cross network, self-contained in numpy.

Deep part: two-level additive attention over criteria sentences (word level
then sentence level, with per-group sentence contexts for inclusion and
exclusion).  Cross part: explicit feature-interaction layers
x_{l+1} = x_0 * (x_l . w_l) + b_l + x_l.  A sigmoid head consumes
[u_inc; u_exc; x_L].  Gradients are exact analytic reverse-mode derivations,
verified against central finite differences.
"""

import json
import math
from dataclasses import dataclass, field

import numpy as np


class LengthMismatch(ValueError):
    pass


class EmptySentence(ValueError):
    pass


class DimensionMismatch(ValueError):
    pass


MODEL_FORMAT_VERSION = 1


@dataclass(frozen=True)
class ModelDims:
    word_dim: int        # d: width of word vectors
    hidden: int          # h: encoder output width
    attn: int            # a: attention scorer width
    cross_width: int     # width of the cross-network input
    cross_layers: int    # L >= 1

    def __post_init__(self):
        for name in ("word_dim", "hidden", "attn", "cross_width", "cross_layers"):
            if getattr(self, name) < 1:
                raise DimensionMismatch(f"{name} must be >= 1")

    @property
    def head_width(self) -> int:
        return 2 * self.hidden + self.cross_width


@dataclass
class ModelParams:
    """Every learnable array, keyed stably by param_items() for the optimizer."""

    dims: ModelDims
    word_enc_w: np.ndarray      # (d, h)
    word_enc_b: np.ndarray      # (h,)
    word_attn_w: np.ndarray     # (h, a)
    word_attn_b: np.ndarray     # (a,)
    word_ctx: np.ndarray        # (a,)
    sent_attn_w: np.ndarray     # (h, a)
    sent_attn_b: np.ndarray     # (a,)
    sent_ctx_inclusion: np.ndarray  # (a,)
    sent_ctx_exclusion: np.ndarray  # (a,)
    cross_w: list               # L arrays of (cross_width,)
    cross_b: list               # L arrays of (cross_width,)
    head_w: np.ndarray          # (2h + cross_width,)
    head_b: np.ndarray          # (1,)

    def param_items(self):
        items = [
            ("word_enc_w", self.word_enc_w),
            ("word_enc_b", self.word_enc_b),
            ("word_attn_w", self.word_attn_w),
            ("word_attn_b", self.word_attn_b),
            ("word_ctx", self.word_ctx),
            ("sent_attn_w", self.sent_attn_w),
            ("sent_attn_b", self.sent_attn_b),
            ("sent_ctx_inclusion", self.sent_ctx_inclusion),
            ("sent_ctx_exclusion", self.sent_ctx_exclusion),
        ]
        for layer, (w, b) in enumerate(zip(self.cross_w, self.cross_b)):
            items.append((f"cross_w_{layer}", w))
            items.append((f"cross_b_{layer}", b))
        items.append(("head_w", self.head_w))
        items.append(("head_b", self.head_b))
        return items

    def copy(self) -> "ModelParams":
        return ModelParams(
            dims=self.dims,
            word_enc_w=self.word_enc_w.copy(),
            word_enc_b=self.word_enc_b.copy(),
            word_attn_w=self.word_attn_w.copy(),
            word_attn_b=self.word_attn_b.copy(),
            word_ctx=self.word_ctx.copy(),
            sent_attn_w=self.sent_attn_w.copy(),
            sent_attn_b=self.sent_attn_b.copy(),
            sent_ctx_inclusion=self.sent_ctx_inclusion.copy(),
            sent_ctx_exclusion=self.sent_ctx_exclusion.copy(),
            cross_w=[w.copy() for w in self.cross_w],
            cross_b=[b.copy() for b in self.cross_b],
            head_w=self.head_w.copy(),
            head_b=self.head_b.copy(),
        )

    def zero_grads(self) -> dict:
        return {name: np.zeros_like(arr) for name, arr in self.param_items()}


def init_params(dims: ModelDims, seed: int = 0) -> ModelParams:
    """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) weights, zero biases."""
    rng = np.random.default_rng(seed)

    def uniform(shape, fan_in):
        bound = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    return ModelParams(
        dims=dims,
        word_enc_w=uniform((dims.word_dim, dims.hidden), dims.word_dim),
        word_enc_b=np.zeros(dims.hidden),
        word_attn_w=uniform((dims.hidden, dims.attn), dims.hidden),
        word_attn_b=np.zeros(dims.attn),
        word_ctx=uniform(dims.attn, dims.attn),
        sent_attn_w=uniform((dims.hidden, dims.attn), dims.hidden),
        sent_attn_b=np.zeros(dims.attn),
        sent_ctx_inclusion=uniform(dims.attn, dims.attn),
        sent_ctx_exclusion=uniform(dims.attn, dims.attn),
        cross_w=[uniform(dims.cross_width, dims.cross_width) for _ in range(dims.cross_layers)],
        cross_b=[np.zeros(dims.cross_width) for _ in range(dims.cross_layers)],
        head_w=uniform(dims.head_width, dims.head_width),
        head_b=np.zeros(1),
    )


def sigmoid(z: float) -> float:
    if z >= 0.0:
        return 1.0 / (1.0 + math.exp(-z))
    ez = math.exp(z)
    return ez / (1.0 + ez)


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits)
    exps = np.exp(shifted)
    return exps / np.sum(exps)


def cross_layer(x0: np.ndarray, xl: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """x0 * (xl . w) + b + xl; the scalar-dot form of the outer-product update."""
    if not (x0.shape == xl.shape == w.shape == b.shape):
        raise LengthMismatch(
            f"cross_layer inputs must share one length, got "
            f"{x0.shape}/{xl.shape}/{w.shape}/{b.shape}"
        )
    return x0 * float(xl @ w) + b + xl


@dataclass
class SentenceTrace:
    words: np.ndarray        # (T, d) inputs
    hidden: np.ndarray       # (T, h) tanh word encodings
    attn_act: np.ndarray     # (T, a) tanh scorer activations
    alpha: np.ndarray        # (T,) word attention weights
    summary: np.ndarray      # (h,) attention-pooled sentence vector


@dataclass
class GroupTrace:
    sentences: list                  # SentenceTrace per kept sentence
    scorer_act: np.ndarray | None    # (Q, a) tanh activations of sentence scorer
    beta: np.ndarray                 # (Q,) sentence attention weights
    vector: np.ndarray               # (h,) group vector (zeros when empty)


@dataclass
class ForwardTrace:
    inclusion: GroupTrace
    exclusion: GroupTrace
    cross_states: list           # L+1 arrays of (cross_width,), [0] is the input
    cross_dots: list             # L floats (x_l . w_l)
    head_features: np.ndarray    # (2h + cross_width,)
    logit: float
    y_hat: float


def word_attention(sentence_words: np.ndarray, params: ModelParams) -> SentenceTrace:
    """Encode words, score them against the word context, pool by softmax."""
    words = np.atleast_2d(np.asarray(sentence_words, dtype=np.float64))
    if words.shape[0] == 0:
        raise EmptySentence("word_attention needs at least one word")
    if words.shape[1] != params.dims.word_dim:
        raise DimensionMismatch(
            f"word vectors have width {words.shape[1]}, model expects {params.dims.word_dim}"
        )
    hidden = np.tanh(words @ params.word_enc_w + params.word_enc_b)
    attn_act = np.tanh(hidden @ params.word_attn_w + params.word_attn_b)
    alpha = softmax(attn_act @ params.word_ctx)
    return SentenceTrace(words, hidden, attn_act, alpha, alpha @ hidden)


def sentence_attention(sentence_vectors: list, context: np.ndarray, params: ModelParams):
    """Pool sentence vectors with the group's context; empty group -> zeros.

    Returns (group vector, beta weights, scorer activations).
    """
    if len(sentence_vectors) == 0:
        return np.zeros(params.dims.hidden), np.zeros(0), None
    summaries = np.stack(sentence_vectors)
    scorer_act = np.tanh(summaries @ params.sent_attn_w + params.sent_attn_b)
    beta = softmax(scorer_act @ context)
    return beta @ summaries, beta, scorer_act


def _attend_group(word_matrices, context: np.ndarray, params: ModelParams) -> GroupTrace:
    traces = [word_attention(m, params) for m in word_matrices]
    vector, beta, scorer_act = sentence_attention([t.summary for t in traces], context, params)
    return GroupTrace(traces, scorer_act, beta, vector)


def forward(bundle, params: ModelParams) -> ForwardTrace:
    """Full forward pass over one FeatureBundle, retaining every activation."""
    dims = params.dims
    cross_input = np.asarray(bundle.cross_input, dtype=np.float64)
    if cross_input.shape != (dims.cross_width,):
        raise DimensionMismatch(
            f"cross_input has shape {cross_input.shape}, model expects ({dims.cross_width},)"
        )

    inclusion = _attend_group(bundle.inclusion_words, params.sent_ctx_inclusion, params)
    exclusion = _attend_group(bundle.exclusion_words, params.sent_ctx_exclusion, params)

    states = [cross_input]
    dots = []
    for w, b in zip(params.cross_w, params.cross_b):
        dot = float(states[-1] @ w)
        dots.append(dot)
        states.append(cross_input * dot + b + states[-1])

    feats = np.concatenate([inclusion.vector, exclusion.vector, states[-1]])
    logit = float(feats @ params.head_w + params.head_b[0])
    y_hat = min(max(sigmoid(logit), 1e-12), 1.0 - 1e-12)
    return ForwardTrace(inclusion, exclusion, states, dots, feats, logit, y_hat)


def bce_loss(y_hat, y) -> float:
    """Mean binary cross-entropy over probabilities (clipped at 1e-12)."""
    probs = np.clip(np.atleast_1d(np.asarray(y_hat, dtype=np.float64)), 1e-12, 1.0 - 1e-12)
    labels = np.atleast_1d(np.asarray(y, dtype=np.float64))
    if probs.shape != labels.shape:
        raise LengthMismatch("predictions and labels differ in length")
    return float(np.mean(-labels * np.log(probs) - (1.0 - labels) * np.log(1.0 - probs)))


def bce_with_logits(logit: float, y: float) -> float:
    """Numerically stable single-example BCE straight from the logit."""
    return max(logit, 0.0) - logit * y + math.log1p(math.exp(-abs(logit)))


def batch_loss(params: ModelParams, bundles, labels) -> float:
    total = 0.0
    for bundle, y in zip(bundles, labels):
        total += bce_with_logits(forward(bundle, params).logit, y)
    return total / len(bundles)


def _backward_group(trace: GroupTrace, g_vector: np.ndarray, context_name: str,
                    params: ModelParams, grads: dict) -> None:
    if not trace.sentences:
        return
    summaries = np.stack([t.summary for t in trace.sentences])
    beta, scorer = trace.beta, trace.scorer_act
    context = getattr(params, context_name)

    # vector = beta @ summaries
    g_beta = summaries @ g_vector
    g_summaries = np.outer(beta, g_vector)
    # softmax over f = scorer @ context
    g_f = beta * (g_beta - float(beta @ g_beta))
    grads[context_name] += scorer.T @ g_f
    g_scorer_pre = np.outer(g_f, context) * (1.0 - scorer**2)
    grads["sent_attn_w"] += summaries.T @ g_scorer_pre
    grads["sent_attn_b"] += g_scorer_pre.sum(axis=0)
    g_summaries += g_scorer_pre @ params.sent_attn_w.T

    for sentence, g_summary in zip(trace.sentences, g_summaries):
        hidden, attn_act, alpha = sentence.hidden, sentence.attn_act, sentence.alpha
        # summary = alpha @ hidden
        g_alpha = hidden @ g_summary
        g_hidden = np.outer(alpha, g_summary)
        g_e = alpha * (g_alpha - float(alpha @ g_alpha))
        grads["word_ctx"] += attn_act.T @ g_e
        g_attn_pre = np.outer(g_e, params.word_ctx) * (1.0 - attn_act**2)
        grads["word_attn_w"] += hidden.T @ g_attn_pre
        grads["word_attn_b"] += g_attn_pre.sum(axis=0)
        g_hidden += g_attn_pre @ params.word_attn_w.T
        g_hidden_pre = g_hidden * (1.0 - hidden**2)
        grads["word_enc_w"] += sentence.words.T @ g_hidden_pre
        grads["word_enc_b"] += g_hidden_pre.sum(axis=0)


def backward(trace: ForwardTrace, params: ModelParams, y: float,
             scale: float = 1.0, grads: dict | None = None,
             want_input_grad: bool = False) -> dict:
    """Exact gradients of scale * BCE(trace, y) w.r.t. every parameter.

    Accumulates into `grads` when given (so batch means are a sum of scaled
    per-example calls).  With want_input_grad the returned dict also carries
    "cross_input".
    """
    dims = params.dims
    if grads is None:
        grads = params.zero_grads()
    g_z = (trace.y_hat - y) * scale

    grads["head_w"] += g_z * trace.head_features
    grads["head_b"] += g_z
    h = dims.hidden
    g_feats = g_z * params.head_w
    g_x = g_feats[2 * h :].copy()

    g_x0_direct = np.zeros(dims.cross_width)
    for layer in range(dims.cross_layers - 1, -1, -1):
        x_l = trace.cross_states[layer]
        g_x0_direct += g_x * trace.cross_dots[layer]
        g_dot = float(g_x @ trace.cross_states[0])
        grads[f"cross_w_{layer}"] += g_dot * x_l
        grads[f"cross_b_{layer}"] += g_x
        g_x = g_x + g_dot * params.cross_w[layer]

    _backward_group(trace.inclusion, g_feats[:h], "sent_ctx_inclusion", params, grads)
    _backward_group(trace.exclusion, g_feats[h : 2 * h], "sent_ctx_exclusion", params, grads)

    if want_input_grad:
        grads.setdefault("cross_input", np.zeros(dims.cross_width))
        grads["cross_input"] += g_x + g_x0_direct
    return grads


def batch_gradients(params: ModelParams, bundles, labels):
    """(mean loss, gradients of the mean loss) over a batch."""
    grads = params.zero_grads()
    scale = 1.0 / len(bundles)
    total = 0.0
    for bundle, y in zip(bundles, labels):
        trace = forward(bundle, params)
        total += bce_with_logits(trace.logit, y)
        backward(trace, params, y, scale=scale, grads=grads)
    return total * scale, grads


def finite_diff(params: ModelParams, bundles, labels, step: float = 1e-5) -> dict:
    """Central-difference gradients of the batch loss, one component at a time."""
    if step <= 0:
        raise ValueError("step must be positive")
    grads = {}
    for name, arr in params.param_items():
        grad = np.zeros_like(arr)
        flat = arr.reshape(-1)
        flat_grad = grad.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + step
            above = batch_loss(params, bundles, labels)
            flat[i] = original - step
            below = batch_loss(params, bundles, labels)
            flat[i] = original
            flat_grad[i] = (above - below) / (2.0 * step)
        grads[name] = grad
    return grads


@dataclass
class AdamWConfig:
    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01


@dataclass
class AdamWState:
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)

    @classmethod
    def for_params(cls, params: ModelParams) -> "AdamWState":
        return cls(
            step=0,
            m={name: np.zeros_like(arr) for name, arr in params.param_items()},
            v={name: np.zeros_like(arr) for name, arr in params.param_items()},
        )


def adamw_step(params: ModelParams, grads: dict, state: AdamWState, cfg: AdamWConfig) -> None:
    """One decoupled-weight-decay adaptive-moment update, in place.

    Decay multiplies parameters by (1 - lr * weight_decay) before the moment
    step, so a zero gradient shrinks them by exactly that factor.
    """
    state.step += 1
    t = state.step
    bias1 = 1.0 - cfg.beta1**t
    bias2 = 1.0 - cfg.beta2**t
    for name, arr in params.param_items():
        g = grads[name]
        m = state.m[name]
        v = state.v[name]
        m *= cfg.beta1
        m += (1.0 - cfg.beta1) * g
        v *= cfg.beta2
        v += (1.0 - cfg.beta2) * g * g
        if cfg.weight_decay != 0.0:
            arr *= 1.0 - cfg.lr * cfg.weight_decay
        arr -= cfg.lr * (m / bias1) / (np.sqrt(v / bias2) + cfg.eps)


def save_model(
    params: ModelParams,
    path: str,
    state: AdamWState | None = None,
    feature_schema: dict | None = None,
) -> None:
    """Self-describing JSON: dims, named parameter arrays, optional optimizer
    state and the feature-schema document the model was trained against."""
    doc = {
        "format_version": MODEL_FORMAT_VERSION,
        "dims": {
            "word_dim": params.dims.word_dim,
            "hidden": params.dims.hidden,
            "attn": params.dims.attn,
            "cross_width": params.dims.cross_width,
            "cross_layers": params.dims.cross_layers,
        },
        "params": {name: arr.tolist() for name, arr in params.param_items()},
    }
    if feature_schema is not None:
        doc["feature_schema"] = feature_schema
    if state is not None:
        doc["optimizer"] = {
            "step": state.step,
            "m": {name: arr.tolist() for name, arr in state.m.items()},
            "v": {name: arr.tolist() for name, arr in state.v.items()},
        }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_model(path: str):
    """(params, optimizer state or None, feature schema dict or None).

    Rejects any parameter whose shape disagrees with the declared dims.
    """
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    if doc.get("format_version") != MODEL_FORMAT_VERSION:
        raise DimensionMismatch(f"unsupported model format {doc.get('format_version')!r}")
    dims = ModelDims(**doc["dims"])
    template = init_params(dims, seed=0)
    raw = doc["params"]
    loaded = {}
    for name, arr in template.param_items():
        if name not in raw:
            raise DimensionMismatch(f"model file missing parameter {name}")
        value = np.asarray(raw[name], dtype=np.float64)
        if value.shape != arr.shape:
            raise DimensionMismatch(
                f"parameter {name} has shape {value.shape}, dims imply {arr.shape}"
            )
        loaded[name] = value
    params = ModelParams(
        dims=dims,
        word_enc_w=loaded["word_enc_w"],
        word_enc_b=loaded["word_enc_b"],
        word_attn_w=loaded["word_attn_w"],
        word_attn_b=loaded["word_attn_b"],
        word_ctx=loaded["word_ctx"],
        sent_attn_w=loaded["sent_attn_w"],
        sent_attn_b=loaded["sent_attn_b"],
        sent_ctx_inclusion=loaded["sent_ctx_inclusion"],
        sent_ctx_exclusion=loaded["sent_ctx_exclusion"],
        cross_w=[loaded[f"cross_w_{i}"] for i in range(dims.cross_layers)],
        cross_b=[loaded[f"cross_b_{i}"] for i in range(dims.cross_layers)],
        head_w=loaded["head_w"],
        head_b=loaded["head_b"],
    )
    state = None
    if doc.get("optimizer"):
        opt = doc["optimizer"]
        state = AdamWState(
            step=opt["step"],
            m={k: np.asarray(v, dtype=np.float64) for k, v in opt["m"].items()},
            v={k: np.asarray(v, dtype=np.float64) for k, v in opt["v"].items()},
        )
    return params, state, doc.get("feature_schema")
