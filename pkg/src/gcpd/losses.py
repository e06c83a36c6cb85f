"""Elementwise generalized loss catalog: values, derivatives in m, link functions.

Six kinds are shipped. For the three kinds whose formulas contain log(m) or a
division by m (gamma, poisson-identity, bernoulli-odds) every such occurrence
is evaluated at m + epsilon so values and derivatives stay finite at m = 0.

kind              loss f(x, m)                 dom x        dom m   link l^-1(m)
----------------  ---------------------------  -----------  ------  -------------
gaussian          (1/2)(x - m)^2               reals        reals   m
gamma             x/(m+e) + log(m+e)           x >= 0       m >= 0  m
poisson-identity  m - x log(m+e)               ints >= 0    m >= 0  m
poisson-log       exp(m) - x m                 ints >= 0    reals   exp(m)
bernoulli-odds    log(m+1) - x log(m+e)        {0, 1}       m >= 0  m/(1+m)
bernoulli-logit   log(1+exp(m)) - x m          {0, 1}       reals   exp(m)/(1+exp(m))
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, LossDomainError
from .tensors import KruskalModel, SparseTensorCOO

KINDS = (
    "gaussian",
    "gamma",
    "poisson-identity",
    "poisson-log",
    "bernoulli-odds",
    "bernoulli-logit",
)

# Kinds whose formulas are guarded by m -> m + epsilon.
GUARDED_KINDS = ("gamma", "poisson-identity", "bernoulli-odds")

# Kinds whose model parameter must stay nonnegative (Table of constraints).
NONNEGATIVE_KINDS = ("gamma", "poisson-identity", "bernoulli-odds")


@dataclass(frozen=True)
class LossSpec:
    """One loss kind plus its epsilon guard."""

    kind: str
    epsilon: float = 1e-9

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown loss kind {self.kind!r}; choose from {KINDS}")
        if self.kind in GUARDED_KINDS and not self.epsilon > 0:
            raise ConfigError(f"loss kind {self.kind!r} requires epsilon > 0")

    @property
    def nonnegative(self) -> bool:
        """True when the model parameter is constrained to m >= 0."""
        return self.kind in NONNEGATIVE_KINDS


def _sigmoid(m):
    pos = m >= 0
    em = np.exp(np.where(pos, -m, m))  # exponent always <= 0, cannot overflow
    return np.where(pos, 1.0 / (1.0 + em), em / (1.0 + em))


def _softplus(m):
    # Stable log(1 + exp(m)); the naive form overflows for m > ~700.
    return np.maximum(m, 0.0) + np.log1p(np.exp(-np.abs(m)))


def _check_domain(spec: LossSpec, x, m):
    kind = spec.kind
    x = np.atleast_1d(x)
    m = np.atleast_1d(m)
    if kind in ("gamma",):
        if x.size and x.min() < 0:
            raise LossDomainError(f"{kind}: data value {x.min()} < 0")
    if kind in ("poisson-identity", "poisson-log"):
        if x.size and (x.min() < 0 or np.any(x != np.floor(x))):
            bad = x.min() if x.min() < 0 else x[x != np.floor(x)].flat[0]
            raise LossDomainError(f"{kind}: data value {bad} is not a nonnegative integer")
    if kind in ("bernoulli-odds", "bernoulli-logit"):
        if x.size and np.any((x != 0) & (x != 1)):
            bad = x[(x != 0) & (x != 1)].flat[0]
            raise LossDomainError(f"{kind}: data value {bad} is not binary")
    if kind in NONNEGATIVE_KINDS:
        if m.size and m.min() < 0:
            raise LossDomainError(f"{kind}: model value {m.min()} < 0")


def loss_value(spec: LossSpec, x, m):
    """f(x, m), elementwise over broadcastable arrays."""
    x = np.asarray(x, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    _check_domain(spec, x, m)
    eps = spec.epsilon
    kind = spec.kind
    if kind == "gaussian":
        return 0.5 * (x - m) ** 2
    if kind == "gamma":
        return x / (m + eps) + np.log(m + eps)
    if kind == "poisson-identity":
        return m - x * np.log(m + eps)
    if kind == "poisson-log":
        return np.exp(m) - x * m
    if kind == "bernoulli-odds":
        return np.log(m + 1.0) - x * np.log(m + eps)
    if kind == "bernoulli-logit":
        return _softplus(m) - x * m
    raise ConfigError(f"unknown loss kind {kind!r}")


def loss_deriv(spec: LossSpec, x, m):
    """df/dm with the same epsilon substitution as :func:`loss_value`."""
    x = np.asarray(x, dtype=np.float64)
    m = np.asarray(m, dtype=np.float64)
    _check_domain(spec, x, m)
    eps = spec.epsilon
    kind = spec.kind
    if kind == "gaussian":
        return m - x
    if kind == "gamma":
        return -x / (m + eps) ** 2 + 1.0 / (m + eps)
    if kind == "poisson-identity":
        return 1.0 - x / (m + eps)
    if kind == "poisson-log":
        return np.exp(m) - x
    if kind == "bernoulli-odds":
        return 1.0 / (m + 1.0) - x / (m + eps)
    if kind == "bernoulli-logit":
        return _sigmoid(m) - x
    raise ConfigError(f"unknown loss kind {kind!r}")


def link_inverse(spec: LossSpec, m):
    """Mean parameter l^-1(m); used only for planted-model sampling."""
    m = np.asarray(m, dtype=np.float64)
    kind = spec.kind
    if kind in ("gaussian", "gamma", "poisson-identity"):
        return m.copy()
    if kind == "poisson-log":
        return np.exp(m)
    if kind == "bernoulli-odds":
        return m / (1.0 + m)
    if kind == "bernoulli-logit":
        return _sigmoid(m)
    raise ConfigError(f"unknown loss kind {kind!r}")


def check_data_domain(spec: LossSpec, values):
    """Reject data outside the kind's x-domain; ingestion aborts, never clamps."""
    values = np.atleast_1d(np.asarray(values, dtype=np.float64))
    _check_domain(spec, values, np.ones(1))


@dataclass(frozen=True)
class ObjectiveValue:
    """Mean elementwise loss over the tensor; `exact` is False for sampled estimates."""

    value: float
    exact: bool
    n_terms: int


# Tensors up to this many entries are evaluated exactly by default.
_MAX_EXACT = 1 << 22


def objective(spec: LossSpec, tensor, model: KruskalModel, sample: int | None = None,
              rng: np.random.Generator | None = None) -> ObjectiveValue:
    """(1/prod I_n) sum_i f(x_i, m_i), exact or sampled without replacement.

    With `sample` >= the entry count (or None at desk scale) the value is exact.
    """
    if tensor.shape.dims != model.shape.dims:
        raise LossDomainError(
            f"tensor shape {tensor.shape.dims} != model shape {model.shape.dims}")
    total = tensor.shape.total
    if sample is None or sample >= total:
        if total > _MAX_EXACT and sample is None:
            raise ConfigError(
                f"tensor has {total} entries; pass sample= for an estimated objective")
        dense = tensor.to_dense() if isinstance(tensor, SparseTensorCOO) else tensor
        value = float(np.mean(loss_value(spec, dense.values, model.to_dense().values)))
        return ObjectiveValue(value=value, exact=True, n_terms=total)
    if rng is None:
        raise ConfigError("sampled objective needs an rng")
    lin = rng.choice(total, size=int(sample), replace=False)
    dims = np.array(tensor.shape.dims, dtype=np.int64)
    idx = np.empty((lin.size, tensor.shape.order), dtype=np.int64)
    r = lin.copy()
    for n, d in enumerate(dims):
        idx[:, n] = r % d
        r //= d
    m = model.entries(idx)
    if isinstance(tensor, SparseTensorCOO):
        x = tensor.values_at_linear(lin)
    else:
        x = tensor.values.ravel(order="F")[lin]
    value = float(np.mean(loss_value(spec, x, m)))
    return ObjectiveValue(value=value, exact=False, n_terms=int(lin.size))
