"""The cut transformer: scores -> distribution over cut positions."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .tensor import Tensor

LN_EPS = 1e-5
P_INIT_RANGE = 0.05


@dataclass(frozen=True)
class ModelConfig:
    n: int = 300
    d: int = 128
    h: int = 8
    n_layers: int = 3
    seed: int = 0
    standardize_scores: bool = False

    def __post_init__(self):
        if self.n < 1:
            raise ValueError(f"n must be >= 1, got {self.n}")
        if self.d < 2:
            raise ValueError(f"d must be >= 2 (score column + embedding), got {self.d}")
        if self.h < 1:
            raise ValueError(f"h must be >= 1, got {self.h}")
        if self.n_layers < 1:
            raise ValueError(f"n_layers must be >= 1, got {self.n_layers}")
        if self.d % self.h:
            raise ValueError(f"d={self.d} is not divisible by h={self.h}")


def layer_param_names(i: int) -> list[str]:
    p = f"layers.{i}."
    return [p + s for s in ("W_q", "W_k", "W_v", "ln1_gain", "ln1_bias",
                            "W_ff", "b_ff", "ln2_gain", "ln2_bias")]


def param_names(config: ModelConfig) -> list[str]:
    """Parameter names in their fixed serialization order."""
    names = ["P"]
    for i in range(config.n_layers):
        names += layer_param_names(i)
    names.append("W_o")
    return names


def param_shapes(config: ModelConfig) -> dict[str, tuple]:
    n, d = config.n, config.d
    shapes = {"P": (n, d - 1)}
    for i in range(config.n_layers):
        q, k, v, g1, b1, ff, bff, g2, b2 = layer_param_names(i)
        shapes.update({q: (d, d), k: (d, d), v: (d, d), ff: (d, d),
                       g1: (d,), b1: (d,), bff: (d,), g2: (d,), b2: (d,)})
    shapes["W_o"] = (d, 1)
    return shapes


ModelParams = dict  # name -> Tensor, ordered as param_names(config)


def init_params(config: ModelConfig) -> ModelParams:
    """Glorot-uniform weights, small uniform positional embedding, unit LN gains."""
    rng = np.random.default_rng(config.seed)
    shapes = param_shapes(config)
    params = {}
    for name in param_names(config):
        shape = shapes[name]
        leaf = name.rsplit(".", 1)[-1]
        if name == "P":
            arr = rng.uniform(-P_INIT_RANGE, P_INIT_RANGE, size=shape)
        elif leaf.endswith("gain"):
            arr = np.ones(shape)
        elif len(shape) == 1:
            arr = np.zeros(shape)
        else:
            limit = math.sqrt(6.0 / (shape[0] + shape[1]))
            arr = rng.uniform(-limit, limit, size=shape)
        params[name] = Tensor(arr, requires_grad=True, name=name)
    return params


def check_params(config: ModelConfig, params: ModelParams) -> None:
    shapes = param_shapes(config)
    missing = set(shapes) - set(params)
    if missing:
        raise ValueError(f"missing parameters: {sorted(missing)}")
    for name, shape in shapes.items():
        got = params[name].shape
        if got != shape:
            raise ValueError(f"parameter {name} has shape {got}, expected {shape}")
        if not np.all(np.isfinite(params[name].data)):
            raise ValueError(f"parameter {name} has non-finite entries")


# ---------------------------------------------------------------------------
# layers
# ---------------------------------------------------------------------------

def _attend(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    scale = 1.0 / math.sqrt(q.shape[-1])
    weights = T.row_softmax(T.matmul(q, T.transpose(k)), scale=scale)
    return T.matmul(weights, v)


def attention(X: Tensor, W_q: Tensor, W_k: Tensor, W_v: Tensor) -> Tensor:
    """softmax(X W_q W_k^T X^T / sqrt(width)) X W_v, width = columns of W_q."""
    return _attend(T.matmul(X, W_q), T.matmul(X, W_k), T.matmul(X, W_v))


def multi_head_attention(X: Tensor, W_q: Tensor, W_k: Tensor, W_v: Tensor, h: int) -> Tensor:
    """Head i attends with columns [i*d/h, (i+1)*d/h) of each weight; outputs are rConcat-ed."""
    d = X.shape[-1]
    if d % h:
        raise ValueError(f"d={d} is not divisible by h={h}")
    if h == 1:
        return attention(X, W_q, W_k, W_v)
    # X @ W[:, cols] == (X @ W)[:, cols], so project once and slice
    Q, K, V = T.matmul(X, W_q), T.matmul(X, W_k), T.matmul(X, W_v)
    w = d // h
    heads = []
    for i in range(h):
        lo, hi = i * w, (i + 1) * w
        heads.append(_attend(T.column_slice(Q, lo, hi), T.column_slice(K, lo, hi),
                             T.column_slice(V, lo, hi)))
    return T.concat_per_row(*heads)


def transformer_layer(X: Tensor, layer: dict, h: int) -> Tensor:
    """Post-norm block: A = LN(X + MultiAttn(X)); out = LN(A + relu(A W_ff + b_ff)).

    ``layer`` maps the short names (``W_q``, ``ln1_gain``, ...) to tensors.
    """
    att = multi_head_attention(X, layer["W_q"], layer["W_k"], layer["W_v"], h)
    A = T.layer_norm_rows(T.add(X, att), layer["ln1_gain"], layer["ln1_bias"], LN_EPS)
    ff = T.relu(T.add_bias(T.matmul(A, layer["W_ff"]), layer["b_ff"]))
    return T.layer_norm_rows(T.add(A, ff), layer["ln2_gain"], layer["ln2_bias"], LN_EPS)


def layer_view(params: ModelParams, i: int) -> dict:
    prefix = f"layers.{i}."
    return {name[len(prefix):]: params[name] for name in layer_param_names(i)}


# ---------------------------------------------------------------------------
# forward / inference
# ---------------------------------------------------------------------------

@dataclass
class CutDistribution:
    """Probabilities over cut positions 1..n; entries past ``valid_len`` are 0."""

    o: np.ndarray
    valid_len: int

    def argmax(self) -> int:
        return int(np.argmax(self.o[: self.valid_len])) + 1


def prepare_scores(scores, config: ModelConfig) -> tuple[np.ndarray, int]:
    """Validate, optionally standardize and pad one score vector to length n.

    Padded entries sit one below the list minimum.
    """
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 1 or s.size == 0:
        raise ValueError("scores must be a non-empty 1-D sequence")
    if s.size > config.n:
        raise ValueError(f"valid_len {s.size} exceeds model length n={config.n}")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores contain non-finite values")
    if config.standardize_scores:
        sd = s.std()
        s = (s - s.mean()) / sd if sd > 0 else s - s.mean()
    valid = s.size
    if valid < config.n:
        s = np.concatenate([s, np.full(config.n - valid, s.min() - 1.0)])
    return s, valid


def batch_scores(score_lists, config: ModelConfig) -> tuple[np.ndarray, np.ndarray]:
    """Stack score vectors into ``[B, n]`` plus a ``[B, n]`` validity mask."""
    rows, mask = [], np.zeros((len(score_lists), config.n), dtype=bool)
    for b, scores in enumerate(score_lists):
        s, valid = prepare_scores(scores, config)
        rows.append(s)
        mask[b, :valid] = True
    return np.stack(rows), mask


def logits(S: np.ndarray, config: ModelConfig, params: ModelParams) -> Tensor:
    """Pre-softmax projection ``O_trans W_o`` for a ``[B, n]`` score batch -> ``[B, n]``."""
    B, n = S.shape
    X = T.concat_per_row(Tensor(S[..., None]), T.repeat_batch(params["P"], B))
    for i in range(config.n_layers):
        X = transformer_layer(X, layer_view(params, i), config.h)
    return T.squeeze_last(T.project(X, params["W_o"]))


def forward_batch(S: np.ndarray, mask: np.ndarray, config: ModelConfig,
                  params: ModelParams) -> Tensor:
    """Masked softmax over positions, ``[B, n]``; differentiable under a tape."""
    return T.row_softmax(logits(S, config, params), mask=mask)


def forward(scores, config: ModelConfig, params: ModelParams) -> CutDistribution:
    S, mask = batch_scores([scores], config)
    o = forward_batch(S, mask, config, params).data[0]
    return CutDistribution(o=o, valid_len=int(mask[0].sum()))


def predict_cutoff(scores, config: ModelConfig, params: ModelParams) -> int:
    """1-based argmax of the cut distribution, earliest on ties."""
    return forward(scores, config, params).argmax()


def predict_many(score_lists, config: ModelConfig, params: ModelParams,
                 batch_size: int = 64) -> list[CutDistribution]:
    out = []
    for start in range(0, len(score_lists), batch_size):
        chunk = score_lists[start:start + batch_size]
        S, mask = batch_scores(chunk, config)
        o = forward_batch(S, mask, config, params).data
        for b in range(len(chunk)):
            out.append(CutDistribution(o=o[b].copy(), valid_len=int(mask[b].sum())))
    return out
