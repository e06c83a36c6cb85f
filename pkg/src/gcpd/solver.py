"""Inertial block-randomized stochastic mirror descent for generalized CP fitting.

Each iteration samples one mode n and a batch of mode-n fibers, forms two
extrapolated points from the one-step momentum direction A^k - A^{k-1}
(`anchor` for the proximal term with coefficient alpha_k, the gradient point
with coefficient beta_k), estimates the block gradient at the gradient point,
and applies one mirror-prox step to the anchor. All other blocks are copied.
The schedules are alpha_k = c1 (k-1)/(k+2), beta_k = c2 (k-1)/(k+2), so the
first step has no inertia, and A^{-1} := A^0 at the start. `plain_step`
(c1 = c2 = 0) is the no-inertia baseline kept as a named variant so
comparisons are explicit.

The momentum buffers hold the global previous iterates, so the momentum
direction for mode n is nonzero only when mode n also moved at the previous
iteration; this is the literal block-randomized update rule.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .bregman import (GeneratorSpec, RegularizerSpec, bregman_div, mirror_prox_step,
                      regularizer_value)
from .errors import ConfigError, DivergenceError
from .estimators import (ESTIMATOR_KINDS, EstimatorState, GradientRequest,
                         estimate_gradient, vr_diagnostics)
from .losses import LossSpec, objective
from .metrics import lyapunov, model_mse
from .tensors import KruskalModel, TensorShape


@dataclass(frozen=True)
class SolverConfig:
    """All solver hyperparameters; `resolved` fills data-dependent defaults."""

    rank: int
    loss: LossSpec
    generator: GeneratorSpec = GeneratorSpec()
    regularizer: RegularizerSpec | tuple = RegularizerSpec()
    estimator: str = "saga"
    batch: int | None = None          # default 2 * rank
    sarah_p: int | None = None        # default: one expected restart per epoch
    eta: float = 0.1
    stepsize_rule: str = "constant"   # or "decreasing-bound" (needs l_bar)
    l_bar: float | None = None        # user upper-curvature estimate
    l_lower: float = 0.0              # user lower-curvature stand-in for the guard
    m2: float = 1.0                   # Lipschitz modulus surrogate for grad psi
    gamma_bar: float = 0.0            # variance-reduction surrogate constant
    alpha_weak: float = 0.0           # weak-convexity parameter of h
    c1: float = 0.6
    c2: float = 0.8
    extrapolation_check: str = "off"  # or "backtrack"
    delta: float = 0.9
    eps_aux: float = 0.1              # the (delta, eps) pair: 1 > delta > eps > 0
    max_iters: int = 5000
    tol: float = 1e-10
    eval_every: int | None = None     # default: one effective epoch
    eval_samples: int | None = None   # None = exact objective (desk scale)
    seed: int = 0
    init_max: float = 0.5
    max_step: float | None = None     # per-coordinate cap on |eta * gradient|;
                                      # None resolves to 0.02 under entropy
                                      # (log-ratio trust region), inf otherwise
    block_order: str = "random"       # "cyclic" for ablation
    diagnostics: bool = False         # per-mode Gamma tracking at eval points
    lyapunov: bool = False
    lyapunov_v0: float = 0.0
    lyapunov_tau: float = 1.0
    record_timing: bool = True

    def regularizers(self, order: int) -> tuple:
        regs = self.regularizer
        if isinstance(regs, RegularizerSpec):
            return tuple([regs] * order)
        regs = tuple(regs)
        if len(regs) != order:
            raise ConfigError(f"need {order} per-mode regularizers, got {len(regs)}")
        return regs

    def validate(self, order: int):
        if self.rank < 1:
            raise ConfigError("rank must be >= 1")
        if not (0.0 <= self.c1 <= 1.0 and 0.0 <= self.c2 <= 1.0):
            raise ConfigError("inertial coefficients c1, c2 must lie in [0, 1]")
        if not (0.0 < self.eps_aux < self.delta < 1.0):
            raise ConfigError("need 1 > delta > eps_aux > 0")
        if not self.eta > 0:
            raise ConfigError("eta must be positive")
        if self.estimator not in ESTIMATOR_KINDS:
            raise ConfigError(f"unknown estimator {self.estimator!r}")
        if self.stepsize_rule not in ("constant", "decreasing-bound"):
            raise ConfigError(f"unknown stepsize rule {self.stepsize_rule!r}")
        if self.stepsize_rule == "decreasing-bound" and not self.l_bar:
            raise ConfigError("the decreasing-bound stepsize rule needs l_bar")
        if self.extrapolation_check not in ("off", "backtrack"):
            raise ConfigError(f"unknown extrapolation check {self.extrapolation_check!r}")
        if self.block_order not in ("random", "cyclic"):
            raise ConfigError(f"unknown block order {self.block_order!r}")
        if self.max_iters < 0:
            raise ConfigError("max_iters must be >= 0")
        regs = self.regularizers(order)
        if self.loss.nonnegative:
            guarded = self.generator.entropic or all(
                r.enforces_nonnegative for r in regs)
            if not guarded:
                raise ConfigError(
                    f"loss {self.loss.kind!r} needs a nonnegative model: use the "
                    "negative-entropy generator or nonnegative regularizers")
        if self.generator.entropic and any(r.kind == "squared-l2" for r in regs):
            raise ConfigError("no closed-form prox for (negative-entropy, squared-l2)")
        if self.lyapunov:
            if self.stepsize_rule != "constant":
                raise ConfigError("the Lyapunov diagnostic requires a constant stepsize")
            gamma_sup = abs(self.c1 - self.c2) * self.m2
            coeff = (1.0 - self.eta * self.alpha_weak - self.eta * self.gamma_bar
                     - gamma_sup - self.eps_aux / 3.0)
            if coeff < 0:
                raise ConfigError(
                    "Lyapunov forward coefficient negative at configuration: "
                    f"1 - eta*alpha - eta*gamma_bar - |c1-c2|*m2 - eps/3 = {coeff:.3g}")

    def resolved(self, shape: TensorShape) -> "SolverConfig":
        """Fill data-dependent defaults and validate against the tensor shape."""
        batch = self.batch if self.batch is not None else 2 * self.rank
        if batch < 1:
            raise ConfigError("batch must be >= 1")
        fiber_counts = [shape.fiber_count(n) for n in range(shape.order)]
        eval_every = self.eval_every
        if eval_every is None:
            mean_j = sum(fiber_counts) / len(fiber_counts)
            eval_every = max(1, math.ceil(mean_j / batch))
        regs = self.regularizers(shape.order)
        max_step = self.max_step
        if max_step is None:
            # Entropy updates are multiplicative: cap the per-step log change so
            # barrier-zone derivative spikes (~1/eps^2 scale) cannot compound
            # into overflow. Additive euclidean steps are left uncapped.
            max_step = 0.02 if self.generator.entropic else float("inf")
        if not max_step > 0:
            raise ConfigError("max_step must be positive")
        out = dataclasses.replace(self, batch=int(batch), eval_every=int(eval_every),
                                  regularizer=regs, max_step=float(max_step))
        out.validate(shape.order)
        return out

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["regularizer"] = (
            [dataclasses.asdict(r) for r in self.regularizer]
            if isinstance(self.regularizer, tuple)
            else dataclasses.asdict(self.regularizer))
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SolverConfig":
        d = dict(d)
        d["loss"] = LossSpec(**d["loss"])
        d["generator"] = GeneratorSpec(**d["generator"])
        reg = d["regularizer"]
        if isinstance(reg, dict):
            d["regularizer"] = RegularizerSpec(**reg)
        else:
            d["regularizer"] = tuple(RegularizerSpec(**r) for r in reg)
        return cls(**d)

    def config_hash(self) -> str:
        payload = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(payload).hexdigest()[:16]


@dataclass
class TraceRecord:
    iteration: int
    seconds: float
    nre: float
    mse_mean: float | None = None
    mse_modes: tuple | None = None
    lyapunov: float | None = None
    gamma: float | None = None
    gamma_modes: tuple | None = None


@dataclass
class IterationTrace:
    records: list = field(default_factory=list)
    manifest: dict = field(default_factory=dict)
    eta_history: list = field(default_factory=list)


class SolverRunState:
    """Factors plus the one/two-step history and RNG streams of one run."""

    def __init__(self, config: SolverConfig, tensor, factors):
        self.tensor = tensor
        self.factors = list(factors)
        self.prev = list(factors)      # A^{-1} := A^0
        self.prev2 = list(factors)
        self.k = 0
        self.eta_prev = config.eta
        self.eta_history = []
        self.last_alpha = 0.0
        self.last_beta = 0.0
        streams = np.random.SeedSequence(config.seed).spawn(3)
        self.rng = np.random.default_rng(streams[0])
        self.diag_rng = np.random.default_rng(streams[2])
        self.estimator = EstimatorState(
            config.estimator, tensor, KruskalModel(self.factors), config.loss,
            batch=config.batch, p=config.sarah_p,
            rng=np.random.default_rng(streams[1]))


def inertial_coefficients(c1: float, c2: float, k: int) -> tuple[float, float]:
    """alpha_k = c1 (k-1)/(k+2) and beta_k = c2 (k-1)/(k+2); zero at k = 1."""
    ratio = (k - 1) / (k + 2)
    return c1 * ratio, c2 * ratio


def _clamp_gradient_point(config: SolverConfig, point: np.ndarray) -> np.ndarray:
    if config.generator.entropic:
        return np.maximum(point, config.generator.floor)
    if config.loss.nonnegative:
        return np.maximum(point, 0.0)
    return point


def extrapolation_guard(config: SolverConfig, a_cur, a_prev, beta: float,
                        eta_prev: float) -> float:
    """Backtrack beta (halving, at most 30 times, then 0) until the
    extrapolated point satisfies the trust inequality
    D(A^k, point) <= (delta - eps)/(1 + l_lower * eta_prev) * D(A^{k-1}, A^k)."""
    if config.extrapolation_check != "backtrack":
        return beta
    gen = config.generator
    target = ((config.delta - config.eps_aux)
              / (1.0 + config.l_lower * eta_prev)) * bregman_div(gen, a_prev, a_cur)
    for _ in range(31):
        point = _clamp_gradient_point(config, a_cur + beta * (a_cur - a_prev))
        if bregman_div(gen, a_cur, point) <= target:
            return beta
        beta *= 0.5
    return 0.0


def _advance(state: SolverRunState, config: SolverConfig, force_plain: bool = False) -> int:
    """One Algorithm step; exactly one mode is updated. Returns that mode."""
    shape = state.tensor.shape
    order = shape.order
    k = state.k + 1
    if config.block_order == "cyclic":
        n = (k - 1) % order
    else:
        n = int(state.rng.integers(order))
    j_n = shape.fiber_count(n)
    b = state.estimator.batches[n]
    rows = np.sort(state.rng.choice(j_n, size=b, replace=False))

    if force_plain:
        alpha_k, beta_k = 0.0, 0.0
    else:
        alpha_k, beta_k = inertial_coefficients(config.c1, config.c2, k)
    a_cur = state.factors[n]
    a_prev = state.prev[n]
    beta_k = extrapolation_guard(config, a_cur, a_prev, beta_k, state.eta_prev)

    momentum = a_cur - a_prev
    anchor = a_cur + alpha_k * momentum
    if config.generator.entropic:
        anchor = np.maximum(anchor, config.generator.floor)
    gradient_point = _clamp_gradient_point(config, a_cur + beta_k * momentum)

    request_factors = list(state.factors)
    request_factors[n] = gradient_point
    request = GradientRequest(request_factors, n, rows, config.loss)
    grad = estimate_gradient(state.estimator, request)

    if config.stepsize_rule == "constant":
        eta_k = config.eta
    else:
        candidates = [state.eta_prev, 1.0 / config.l_bar]
        denom = config.alpha_weak + 2.0 * config.gamma_bar
        if denom > 0:
            numer = 1.0 - config.delta - 2.0 * abs(alpha_k - beta_k) * config.m2
            if numer <= 0:
                raise ConfigError(
                    "decreasing-bound stepsize is nonpositive; relax delta/m2 surrogates")
            candidates.append(numer / denom)
        eta_k = min(candidates)

    # Trust region: cap |eta * grad| per coordinate. Loss barriers (x/(m+eps)
    # near m = 0) produce ~1/eps^2-scale derivatives that would otherwise turn
    # one update into an overflow; the cap binds only in that zone.
    if np.isfinite(config.max_step):
        bound = config.max_step / eta_k
        grad = np.clip(grad, -bound, bound)

    regs = config.regularizer
    new_block = mirror_prox_step(config.generator, regs[n], anchor, grad, eta_k)
    if not np.all(np.isfinite(new_block)):
        raise DivergenceError(
            f"non-finite factor entries after iteration {k} (mode {n}); "
            "reduce eta or tighten max_step", iteration=k)

    state.prev2 = state.prev
    state.prev = list(state.factors)
    factors = list(state.factors)
    factors[n] = new_block
    state.factors = factors
    state.k = k
    state.eta_prev = eta_k
    state.eta_history.append(eta_k)
    state.last_alpha = alpha_k
    state.last_beta = beta_k
    return n


def inertial_step(state: SolverRunState, config: SolverConfig) -> int:
    """One accelerated step with the configured c1/c2 schedules."""
    return _advance(state, config, force_plain=False)


def plain_step(state: SolverRunState, config: SolverConfig) -> int:
    """The no-inertia baseline: identical update with alpha_k = beta_k = 0."""
    return _advance(state, config, force_plain=True)


def initial_factors(config: SolverConfig, shape: TensorShape,
                    rng: np.random.Generator) -> list:
    """I.i.d. uniform entries on (0, init_max]; strictly positive so entropy
    generators start inside their domain."""
    return [config.init_max * (1.0 - rng.random((d, config.rank)))
            for d in shape.dims]


def _gamma_diagnostics(state: SolverRunState, config: SolverConfig) -> tuple:
    gammas = []
    for n in range(state.tensor.shape.order):
        b = state.estimator.batches[n]
        j_n = state.tensor.shape.fiber_count(n)
        rows = np.sort(state.diag_rng.choice(j_n, size=b, replace=False))
        req = GradientRequest(list(state.factors), n, rows, config.loss)
        gamma, _ = vr_diagnostics(state.estimator, req)
        gammas.append(gamma)
    return tuple(gammas)


def _evaluate(state: SolverRunState, config: SolverConfig, truth, t0) -> TraceRecord:
    model = KruskalModel(state.factors)
    nre_val = objective(config.loss, state.tensor, model,
                        sample=config.eval_samples, rng=state.diag_rng).value
    seconds = (time.perf_counter() - t0) if config.record_timing else 0.0
    rec = TraceRecord(iteration=state.k, seconds=seconds, nre=nre_val)
    if truth is not None:
        report = model_mse(model, truth)
        rec.mse_mean = report["mean"]
        rec.mse_modes = tuple(r.value for r in report["per_mode"])
    if config.diagnostics:
        rec.gamma_modes = _gamma_diagnostics(state, config)
        rec.gamma = float(sum(rec.gamma_modes))
    if config.lyapunov and state.k >= 1:
        phi = nre_val + sum(regularizer_value(r, a)
                            for r, a in zip(config.regularizer, state.factors))
        gamma_next = rec.gamma if rec.gamma is not None else 0.0
        gamma_k = abs(state.last_alpha - state.last_beta) * config.m2
        record = lyapunov(config.generator, state.factors, state.prev, state.prev2,
                          phi, gamma_next, config.eta, v0=config.lyapunov_v0,
                          alpha_weak=config.alpha_weak, gamma_bar=config.gamma_bar,
                          gamma_k=gamma_k, eps_aux=config.eps_aux,
                          tau=config.lyapunov_tau)
        rec.lyapunov = record.value
    return rec


def run(config: SolverConfig, tensor, truth: KruskalModel | None = None,
        initial: list | None = None, step=inertial_step):
    """Run the solver to the stopping rule; returns (IterationTrace, KruskalModel).

    Stops when the relative objective change is below `tol` at two consecutive
    evaluations, at `max_iters`, or with DivergenceError past the guard.
    Deterministic for a given (config, tensor, truth) triple.
    """
    config = config.resolved(tensor.shape)
    if initial is None:
        init_rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(4)[3])
        initial = initial_factors(config, tensor.shape, init_rng)
    state = SolverRunState(config, tensor, initial)

    trace = IterationTrace(manifest={
        "config": config.to_dict(),
        "config_hash": config.config_hash(),
        "seed": config.seed,
        "extrapolation_check": config.extrapolation_check,
        "l_lower_is_surrogate": config.extrapolation_check == "backtrack",
    })
    t0 = time.perf_counter()
    first = _evaluate(state, config, truth, t0)
    trace.records.append(first)
    nre0 = first.nre
    prev_nre = first.nre
    consecutive_small = 0
    guard = 1e6 * max(1.0, abs(nre0))

    # Reconstructions involve order-N products; factors past this bound would
    # overflow inside the objective before the nre guard could see it.
    magnitude_bound = 10.0 ** (250.0 / tensor.shape.order)

    for k in range(1, config.max_iters + 1):
        step(state, config)
        if k % config.eval_every == 0 or k == config.max_iters:
            biggest = max(np.max(np.abs(a)) for a in state.factors)
            if not np.isfinite(biggest) or biggest > magnitude_bound:
                raise DivergenceError(
                    f"factor magnitude {biggest:.3g} exceeded the overflow bound "
                    f"at iteration {k}", iteration=k, value=float(biggest))
            rec = _evaluate(state, config, truth, t0)
            trace.records.append(rec)
            if not np.isfinite(rec.nre) or rec.nre > guard:
                raise DivergenceError(
                    f"objective {rec.nre} exceeded the divergence guard "
                    f"({guard:.3g}) at iteration {k}", iteration=k, value=rec.nre)
            rel = abs(rec.nre - prev_nre) / max(1.0, abs(prev_nre))
            consecutive_small = consecutive_small + 1 if rel < config.tol else 0
            prev_nre = rec.nre
            if consecutive_small >= 2:
                break
    trace.eta_history = list(state.eta_history)
    return trace, KruskalModel(state.factors)


def gaussian_block_curvature(model: KruskalModel, mode: int) -> float:
    """Exact Lipschitz constant of the mode-`mode` block gradient under the
    gaussian loss: lambda_max of the Hadamard product of the other factor
    Gram matrices, divided by the entry count."""
    g = np.ones((model.rank, model.rank))
    for m, a in enumerate(model.factors):
        if m == mode:
            continue
        g *= a.T @ a
    lam = float(np.linalg.eigvalsh(g)[-1])
    return lam / model.shape.total
