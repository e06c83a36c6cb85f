"""Stochastic block-gradient estimators: full, fiber-sampled SGD, SAGA, SARAH.

The block partial gradient of the mean elementwise loss decomposes over
mode-n fibers: with D(j, i) the loss derivative at fiber j, coordinate i, and
H the Khatri-Rao rows,

    per-fiber    g_j = D(j, :)^T H(j, :) / I_n          (I_n x R)
    full         (1/J_n) sum_j g_j
    sampled      (1/B)  sum_{j in F} g_j

so full, SGD with B = J_n, and SAGA with B = J_n coincide exactly.

SAGA stores per-fiber gradient matrices (memory O(J_n I_n R) per mode; desk
scale), initialized by one full pass at the initial iterate so the first
estimate is exact. SARAH keeps a per-mode running estimate and restarts from
the full gradient with probability 1/p. Tables for inactive modes go stale
when another block moves; no eager refresh is done.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, StateError
from .losses import LossSpec, loss_deriv
from .tensors import KruskalModel, data_fibers, khatri_rao_rows

ESTIMATOR_KINDS = ("full", "sgd", "saga", "sarah")


@dataclass(frozen=True)
class GradientRequest:
    """One stochastic-gradient evaluation: the factor snapshot has the active
    block already replaced by the extrapolated gradient point."""

    factors: list
    mode: int
    rows: np.ndarray
    loss: LossSpec

    def __post_init__(self):
        rows = np.unique(np.asarray(self.rows, dtype=np.int64))
        if rows.size == 0:
            raise ConfigError("empty fiber set")
        object.__setattr__(self, "rows", rows)


def fiber_gradient_stack(tensor, factors, loss: LossSpec, mode: int, rows) -> np.ndarray:
    """Per-fiber gradient matrices g_j, stacked (B, I_n, R)."""
    kr = khatri_rao_rows(factors, mode, rows)
    m = kr @ factors[mode].T
    x = data_fibers(tensor, mode, rows)
    d = loss_deriv(loss, x, m)
    i_n = factors[mode].shape[0]
    return np.einsum("bi,br->bir", d, kr) / i_n


def batch_gradient(tensor, factors, loss: LossSpec, mode: int, rows) -> np.ndarray:
    """(1/B) sum over the given fibers of g_j, shape (I_n, R)."""
    rows = np.asarray(rows, dtype=np.int64)
    kr = khatri_rao_rows(factors, mode, rows)
    m = kr @ factors[mode].T
    x = data_fibers(tensor, mode, rows)
    d = loss_deriv(loss, x, m)
    i_n = factors[mode].shape[0]
    return d.T @ kr / (i_n * rows.size)


def full_gradient(tensor, factors, loss: LossSpec, mode: int) -> np.ndarray:
    """Exact block partial gradient over all J_n fibers (desk scale)."""
    shape = tensor.shape
    return batch_gradient(tensor, factors, loss, mode, np.arange(shape.fiber_count(mode)))


class EstimatorState:
    """Per-run estimator state; exclusively owned by one solver run."""

    def __init__(self, kind: str, tensor, model: KruskalModel, loss: LossSpec,
                 batch: int, p: int | None = None,
                 rng: np.random.Generator | None = None):
        if kind not in ESTIMATOR_KINDS:
            raise ConfigError(f"unknown estimator {kind!r}; choose from {ESTIMATOR_KINDS}")
        self.kind = kind
        self.tensor = tensor
        self.loss = loss
        self.rank = model.rank
        self.rng = rng if rng is not None else np.random.default_rng()
        shape = tensor.shape
        self.order = shape.order
        self.fiber_counts = [shape.fiber_count(n) for n in range(shape.order)]
        self.batches = [min(int(batch), j) for j in self.fiber_counts]
        if any(b < 1 for b in self.batches):
            raise ConfigError("batch size must be >= 1")
        # One expected restart per effective epoch unless overridden.
        self.p = [int(p) if p is not None else math.ceil(j / b)
                  for j, b in zip(self.fiber_counts, self.batches)]
        if any(q < 1 for q in self.p):
            raise ConfigError("sarah restart period p must be >= 1")

        self.tables = None
        self.table_avg = None
        self._since_sync = None
        self.estimates = None
        self.snapshots = None
        if kind == "saga":
            self.tables = []
            self.table_avg = []
            self._since_sync = [0] * self.order
            for n in range(self.order):
                stack = fiber_gradient_stack(
                    tensor, model.factors, loss, n, np.arange(self.fiber_counts[n]))
                self.tables.append(stack)
                self.table_avg.append(stack.mean(axis=0))
        elif kind == "sarah":
            self.estimates = [None] * self.order
            self.snapshots = [None] * self.order

    def _check_block(self, req: GradientRequest):
        n = req.mode
        i_n = req.factors[n].shape[0]
        if req.factors[n].shape[1] != self.rank:
            raise StateError(
                f"estimator state built for rank {self.rank}, "
                f"got factor with {req.factors[n].shape[1]} columns")
        if self.tables is not None and self.tables[n].shape[1:] != (i_n, self.rank):
            raise StateError("saga table shape does not match the requested block")


def sgd_gradient(state: EstimatorState, req: GradientRequest) -> np.ndarray:
    """Plain fiber-sampled estimate; unbiased under uniform sampling."""
    return batch_gradient(state.tensor, req.factors, req.loss, req.mode, req.rows)


def saga_gradient(state: EstimatorState, req: GradientRequest) -> np.ndarray:
    """SAGA estimate; replaces the touched table entries and updates the average."""
    if state.tables is None:
        raise StateError("saga_gradient called on a non-saga estimator state")
    state._check_block(req)
    n = req.mode
    j_n = state.fiber_counts[n]
    current = fiber_gradient_stack(state.tensor, req.factors, req.loss, n, req.rows)
    stored = state.tables[n][req.rows]
    diff = current - stored
    estimate = diff.sum(axis=0) / req.rows.size + state.table_avg[n]
    state.tables[n][req.rows] = current
    state.table_avg[n] = state.table_avg[n] + diff.sum(axis=0) / j_n
    state._since_sync[n] += 1
    # Incremental average drifts; re-sync once per effective pass over the table.
    if state._since_sync[n] >= math.ceil(j_n / state.batches[n]):
        state.table_avg[n] = state.tables[n].mean(axis=0)
        state._since_sync[n] = 0
    return estimate


def sarah_gradient(state: EstimatorState, req: GradientRequest) -> np.ndarray:
    """SARAH recursive estimate with probability-1/p restarts."""
    if state.estimates is None:
        raise StateError("sarah_gradient called on a non-sarah estimator state")
    state._check_block(req)
    n = req.mode
    restart = state.estimates[n] is None or state.rng.random() < 1.0 / state.p[n]
    if restart:
        estimate = full_gradient(state.tensor, req.factors, req.loss, n)
    else:
        if state.snapshots[n] is None:
            raise StateError("sarah recursive branch without a previous snapshot")
        g_cur = batch_gradient(state.tensor, req.factors, req.loss, n, req.rows)
        g_prev = batch_gradient(state.tensor, state.snapshots[n], req.loss, n, req.rows)
        estimate = g_cur - g_prev + state.estimates[n]
    state.estimates[n] = estimate
    state.snapshots[n] = [a.copy() for a in req.factors]
    return estimate


def estimate_gradient(state: EstimatorState, req: GradientRequest) -> np.ndarray:
    if state.kind == "full":
        return full_gradient(state.tensor, req.factors, req.loss, req.mode)
    if state.kind == "sgd":
        return sgd_gradient(state, req)
    if state.kind == "saga":
        return saga_gradient(state, req)
    if state.kind == "sarah":
        return sarah_gradient(state, req)
    raise ConfigError(f"unknown estimator {state.kind!r}")


def vr_diagnostics(state: EstimatorState, req: GradientRequest,
                   exact: np.ndarray | None = None) -> tuple[float, float]:
    """Realized (Gamma, Upsilon) variance-reduction diagnostics, Frobenius norms.

    SAGA measures table staleness against the request point over all fibers;
    SARAH and SGD measure the current estimate against the exact gradient.
    Desk scale only (SAGA walks the whole table).
    """
    n = req.mode
    if state.kind == "full":
        return 0.0, 0.0
    if state.kind == "saga":
        j_n = state.fiber_counts[n]
        current = fiber_gradient_stack(
            state.tensor, req.factors, req.loss, n, np.arange(j_n))
        diff = current - state.tables[n]
        sq = np.sum(diff * diff, axis=(1, 2))
        b = state.batches[n]
        gamma = float(np.sum(sq) / (b * j_n))
        upsilon = float(np.sum(np.sqrt(sq)) / math.sqrt(b * j_n))
        return gamma, upsilon
    if exact is None:
        exact = full_gradient(state.tensor, req.factors, req.loss, n)
    if state.kind == "sarah":
        if state.estimates[n] is None:
            return 0.0, 0.0
        err = state.estimates[n] - exact
    else:  # sgd
        err = sgd_gradient(state, req) - exact
    sq = float(np.sum(err * err))
    return sq, math.sqrt(sq)
