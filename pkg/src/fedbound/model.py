"""Differentiable classifiers, their loss, exact gradients, and plain SGD.

Parameters live in a single flat float64 vector; all operations are pure
functions of their inputs, with randomness passed in as explicit seeds.

Three model kinds are supported:

* ``softmax``    -- multinomial logistic regression (convex; strongly convex
                    once an l2 penalty is added),
* ``mlp``        -- one tanh hidden layer followed by a softmax readout,
* ``quadratic``  -- a diagnostic objective ``0.5 * w^T diag(h) w`` whose
                    curvature is known exactly; used by tests and selftests
                    to validate the probing machinery against closed forms.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .rng import spawn_rng

# Per-sample probability floor applied before the log in cross-entropy.
# Random probe points can produce extreme logits; the floor caps a sample's
# loss at -log(PROB_FLOOR) and zeroes its gradient beyond that point.
PROB_FLOOR = 1e-12
_LOG_CAP = -math.log(PROB_FLOOR)

ParamVector = np.ndarray

MODEL_KINDS = ("softmax", "mlp", "quadratic")


@dataclass(frozen=True)
class LabeledSample:
    """One classification sample: features in [0, 1]^d, integer class label."""

    features: np.ndarray
    label: int


@dataclass(frozen=True)
class Dataset:
    """Labeled classification samples stored as dense arrays.

    ``features`` is (n, feature_dim) float64 with entries in [0, 1];
    ``labels`` is (n,) integer with values in [0, num_classes).
    """

    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        feats = np.asarray(self.features, dtype=np.float64)
        labels = np.asarray(self.labels, dtype=np.int64)
        if feats.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {feats.shape}")
        if labels.shape != (feats.shape[0],):
            raise ValueError("labels must be 1-D with one entry per sample")
        if not np.all(np.isfinite(feats)):
            raise ValueError("features contain non-finite values")
        if feats.size and (feats.min() < 0.0 or feats.max() > 1.0):
            raise ValueError("features must be normalized to [0, 1]")
        if self.num_classes < 1:
            raise ValueError("num_classes must be positive")
        if labels.size and (labels.min() < 0 or labels.max() >= self.num_classes):
            raise ValueError("labels must lie in [0, num_classes)")
        object.__setattr__(self, "features", feats)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.features.shape[1]

    def sample(self, i: int) -> LabeledSample:
        return LabeledSample(self.features[i].copy(), int(self.labels[i]))

    def subset(self, indices: np.ndarray) -> "Dataset":
        return Dataset(self.features[indices], self.labels[indices], self.num_classes)


@dataclass(frozen=True)
class ModelSpec:
    """Architecture plus regularization; fully determines the parameter layout.

    ``quad_diag`` is only meaningful for the quadratic kind, where it holds
    the diagonal of the curvature matrix.
    """

    kind: str
    feature_dim: int
    num_classes: int
    hidden_width: int = 0
    l2_coefficient: float = 0.0
    quad_diag: tuple[float, ...] = field(default=())

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}")
        if self.l2_coefficient < 0.0:
            raise ValueError("l2_coefficient must be >= 0")
        if self.kind == "quadratic":
            if not self.quad_diag:
                raise ValueError("quadratic kind needs a nonempty quad_diag")
            if any(h <= 0.0 for h in self.quad_diag):
                raise ValueError("quad_diag entries must be positive")
        else:
            if self.feature_dim < 1 or self.num_classes < 2:
                raise ValueError("need feature_dim >= 1 and num_classes >= 2")
            if self.kind == "mlp" and self.hidden_width < 1:
                raise ValueError("mlp needs hidden_width >= 1")


def softmax_spec(feature_dim: int, num_classes: int, l2: float = 0.0) -> ModelSpec:
    return ModelSpec("softmax", feature_dim, num_classes, l2_coefficient=l2)


def mlp_spec(feature_dim: int, num_classes: int, hidden_width: int, l2: float = 0.0) -> ModelSpec:
    return ModelSpec("mlp", feature_dim, num_classes, hidden_width, l2_coefficient=l2)


def quadratic_spec(diag, l2: float = 0.0) -> ModelSpec:
    """Diagnostic objective 0.5 * w^T diag(h) w; ignores dataset contents."""
    diag = tuple(float(h) for h in diag)
    return ModelSpec("quadratic", len(diag), 1, l2_coefficient=l2, quad_diag=diag)


def param_dim(spec: ModelSpec) -> int:
    """Exact flat parameter count for the architecture."""
    d, k, h = spec.feature_dim, spec.num_classes, spec.hidden_width
    if spec.kind == "softmax":
        return k * d + k
    if spec.kind == "mlp":
        return h * d + h + k * h + k
    return len(spec.quad_diag)


def draw_init_like(spec: ModelSpec, rng: np.random.Generator) -> ParamVector:
    """One draw from the initialization distribution.

    Entries are i.i.d. zero-mean normal with per-layer scale 1/sqrt(fan_in),
    which keeps losses at random parameter vectors finite.
    """
    d, k, h = spec.feature_dim, spec.num_classes, spec.hidden_width
    if spec.kind == "softmax":
        return rng.normal(0.0, 1.0 / math.sqrt(d), k * d + k)
    if spec.kind == "mlp":
        first = rng.normal(0.0, 1.0 / math.sqrt(d), h * d + h)
        second = rng.normal(0.0, 1.0 / math.sqrt(h), k * h + k)
        return np.concatenate([first, second])
    dim = len(spec.quad_diag)
    return rng.normal(0.0, 1.0 / math.sqrt(dim), dim)


def init_params(spec: ModelSpec, seed: int) -> ParamVector:
    """Deterministic fresh parameter vector for the given seed."""
    return draw_init_like(spec, spawn_rng("init", seed))


def _check_inputs(spec: ModelSpec, params: ParamVector, data: Dataset) -> np.ndarray:
    params = np.asarray(params, dtype=np.float64)
    if params.shape != (param_dim(spec),):
        raise ValueError(
            f"parameter vector has shape {params.shape}, expected ({param_dim(spec)},)"
        )
    if not np.all(np.isfinite(params)):
        raise ValueError("parameter vector contains non-finite values")
    if len(data) == 0:
        raise ValueError("dataset is empty")
    if spec.kind != "quadratic":
        if data.feature_dim != spec.feature_dim:
            raise ValueError(
                f"dataset feature_dim {data.feature_dim} != spec feature_dim {spec.feature_dim}"
            )
        if data.num_classes != spec.num_classes:
            raise ValueError(
                f"dataset num_classes {data.num_classes} != spec num_classes {spec.num_classes}"
            )
    return params


def _split_softmax(spec: ModelSpec, params: ParamVector):
    d, k = spec.feature_dim, spec.num_classes
    weights = params[: k * d].reshape(k, d)
    bias = params[k * d :]
    return weights, bias


def _split_mlp(spec: ModelSpec, params: ParamVector):
    d, k, h = spec.feature_dim, spec.num_classes, spec.hidden_width
    ofs = 0
    w1 = params[ofs : ofs + h * d].reshape(h, d)
    ofs += h * d
    b1 = params[ofs : ofs + h]
    ofs += h
    w2 = params[ofs : ofs + k * h].reshape(k, h)
    ofs += k * h
    b2 = params[ofs : ofs + k]
    return w1, b1, w2, b2


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _forward_logits(spec: ModelSpec, params: ParamVector, feats: np.ndarray):
    """Logits plus the hidden activations needed for backprop (mlp only)."""
    if spec.kind == "softmax":
        weights, bias = _split_softmax(spec, params)
        return feats @ weights.T + bias, None
    w1, b1, w2, b2 = _split_mlp(spec, params)
    hidden = np.tanh(feats @ w1.T + b1)
    return hidden @ w2.T + b2, hidden


def loss(spec: ModelSpec, params: ParamVector, data: Dataset) -> float:
    """Mean cross-entropy over the dataset plus (l2/2) * ||params||^2.

    The quadratic kind instead evaluates 0.5 * w^T diag(h) w (data ignored).
    """
    params = _check_inputs(spec, params, data)
    penalty = 0.5 * spec.l2_coefficient * float(params @ params)
    if spec.kind == "quadratic":
        diag = np.asarray(spec.quad_diag)
        return 0.5 * float(params @ (diag * params)) + penalty
    logits, _ = _forward_logits(spec, params, data.features)
    logp = _log_softmax(logits)[np.arange(len(data)), data.labels]
    per_sample = np.minimum(-logp, _LOG_CAP)
    return float(per_sample.mean()) + penalty


def gradient(spec: ModelSpec, params: ParamVector, data: Dataset) -> ParamVector:
    """Exact analytic gradient of :func:`loss`; same shape as ``params``."""
    params = _check_inputs(spec, params, data)
    if spec.kind == "quadratic":
        diag = np.asarray(spec.quad_diag)
        return diag * params + spec.l2_coefficient * params

    n = len(data)
    feats = data.features
    logits, hidden = _forward_logits(spec, params, feats)
    logp = _log_softmax(logits)
    probs = np.exp(logp)
    err = probs.copy()
    err[np.arange(n), data.labels] -= 1.0
    # Samples whose true-class probability is below the floor sit on the
    # capped (flat) branch of the loss and contribute no gradient.
    active = logp[np.arange(n), data.labels] >= -_LOG_CAP
    err[~active] = 0.0
    err /= n

    if spec.kind == "softmax":
        grad_w = err.T @ feats
        grad_b = err.sum(axis=0)
        flat = np.concatenate([grad_w.ravel(), grad_b])
    else:
        _, _, w2, _ = _split_mlp(spec, params)
        grad_w2 = err.T @ hidden
        grad_b2 = err.sum(axis=0)
        d_hidden = (err @ w2) * (1.0 - hidden * hidden)
        grad_w1 = d_hidden.T @ feats
        grad_b1 = d_hidden.sum(axis=0)
        flat = np.concatenate([grad_w1.ravel(), grad_b1, grad_w2.ravel(), grad_b2])
    return flat + spec.l2_coefficient * params


def sgd_epoch_traced(
    spec: ModelSpec,
    params: ParamVector,
    data: Dataset,
    lr: float,
    batch_size: int,
    rng_seed: int,
) -> tuple[ParamVector, list[float]]:
    """One shuffled pass of mini-batch SGD, recording each batch-gradient norm.

    Returns the updated parameters and the list of ||grad|| values, one per
    SGD step. The input vector is never mutated.
    """
    if lr < 0.0:
        raise ValueError("lr must be >= 0")
    if batch_size < 1 or batch_size > len(data):
        raise ValueError(f"batch_size must lie in [1, {len(data)}]")
    params = _check_inputs(spec, params, data)
    order = spawn_rng("sgd", rng_seed).permutation(len(data))
    current = params.copy()
    norms: list[float] = []
    for start in range(0, len(data), batch_size):
        batch = data.subset(order[start : start + batch_size])
        grad = gradient(spec, current, batch)
        norms.append(float(np.linalg.norm(grad)))
        current = current - lr * grad
    return current, norms


def sgd_epoch(
    spec: ModelSpec,
    params: ParamVector,
    data: Dataset,
    lr: float,
    batch_size: int,
    rng_seed: int,
) -> ParamVector:
    """One full shuffled pass of mini-batch SGD; deterministic given the seed."""
    updated, _ = sgd_epoch_traced(spec, params, data, lr, batch_size, rng_seed)
    return updated


def finite_difference_gradient(
    spec: ModelSpec, params: ParamVector, data: Dataset, step: float = 1e-5
) -> ParamVector:
    """Central finite-difference gradient; the independent check for ``gradient``."""
    params = np.asarray(params, dtype=np.float64)
    out = np.empty_like(params)
    for i in range(params.size):
        bumped = params.copy()
        bumped[i] = params[i] + step
        hi = loss(spec, bumped, data)
        bumped[i] = params[i] - step
        lo = loss(spec, bumped, data)
        out[i] = (hi - lo) / (2.0 * step)
    return out
