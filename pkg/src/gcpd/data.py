"""Planted-model synthetic generators, .tns sparse-text ingestion, and trace files.

The .tns text format: optional '#'-prefixed comment lines, then one entry per
line as N whitespace-separated 1-based integer indices followed by one real
value. Files written here carry a "# shape: I_1 ... I_N" comment so reads
recover the declared shape even when trailing slices are empty; reading an
external file without it infers the shape from the largest index per mode.

Trace CSV columns (fixed): iteration, seconds, nre, mse_mean,
mse_mode_1..mse_mode_N, lyapunov, gamma_k. Empty cells mean "not recorded".
The JSON format mirrors the record structure and embeds the run manifest.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ConfigError, DataError, ParseError
from .solver import IterationTrace, TraceRecord
from .tensors import DenseTensor, KruskalModel, SparseTensorCOO, TensorShape

DISTRIBUTIONS = ("gamma", "poisson", "bernoulli-odds", "gaussian")


@dataclass(frozen=True)
class SyntheticSpec:
    """Planted-model recipe: factor sizes, rank, entry distribution, seed."""

    shape: tuple[int, ...]
    rank: int
    distribution: str
    a_max: float = 0.5
    noise_sigma: float = 0.1   # gaussian only
    seed: int = 0

    def __post_init__(self):
        TensorShape(self.shape)
        object.__setattr__(self, "shape", tuple(int(d) for d in self.shape))
        if self.distribution not in DISTRIBUTIONS:
            raise ConfigError(
                f"unknown distribution {self.distribution!r}; choose from {DISTRIBUTIONS}")
        if not self.a_max > 0:
            raise ConfigError("a_max must be positive")
        if self.rank < 1:
            raise ConfigError("rank must be >= 1")


def planted_factors(spec: SyntheticSpec, rng: np.random.Generator) -> KruskalModel:
    """Factor entries i.i.d. uniform on (0, a_max]."""
    return KruskalModel([spec.a_max * (1.0 - rng.random((d, spec.rank)))
                         for d in spec.shape])


def sample_tensor(model: KruskalModel, distribution: str,
                  rng: np.random.Generator, noise_sigma: float = 0.1) -> DenseTensor:
    """Sample each entry independently with mean/odds set by the model entry.

    gamma uses shape 1 and scale m (mean m; the shape parameter is a modeling
    choice recorded in run manifests), poisson uses mean m, bernoulli-odds uses
    success probability m/(1+m), gaussian adds N(0, noise_sigma^2) noise.
    """
    m = model.to_dense().values
    if np.any(m < 0) and distribution != "gaussian":
        raise ConfigError(f"{distribution} sampling needs a nonnegative model")
    if distribution == "gamma":
        values = rng.gamma(shape=1.0, scale=m)
    elif distribution == "poisson":
        values = rng.poisson(lam=m).astype(np.float64)
    elif distribution == "bernoulli-odds":
        values = (rng.random(m.shape) < m / (1.0 + m)).astype(np.float64)
    elif distribution == "gaussian":
        values = m + noise_sigma * rng.standard_normal(m.shape)
    else:
        raise ConfigError(f"unknown distribution {distribution!r}")
    return DenseTensor(values)


def generate(spec: SyntheticSpec) -> tuple[DenseTensor, KruskalModel]:
    """Planted factors plus one observed tensor; deterministic per seed."""
    rng = np.random.default_rng(spec.seed)
    model = planted_factors(spec, rng)
    tensor = sample_tensor(model, spec.distribution, rng, spec.noise_sigma)
    return tensor, model


def write_tns(tensor, path, manifest: dict | None = None):
    """Write nonzero entries as 1-based '.tns' lines with a shape header."""
    path = Path(path)
    if isinstance(tensor, DenseTensor):
        dims = tensor.dims
        flat = tensor.values.ravel(order="F")
        nz = np.flatnonzero(flat)
        indices = np.empty((nz.size, len(dims)), dtype=np.int64)
        r = nz.copy()
        for n, d in enumerate(dims):
            indices[:, n] = r % d
            r //= d
        values = flat[nz]
    elif isinstance(tensor, SparseTensorCOO):
        dims = tensor.dims
        indices = tensor.indices
        values = tensor.values
    else:
        raise DataError(f"cannot write {type(tensor).__name__} as .tns")
    with path.open("w") as fh:
        fh.write("# shape: " + " ".join(str(d) for d in dims) + "\n")
        if manifest:
            fh.write("# manifest: " + json.dumps(manifest, sort_keys=True) + "\n")
        for idx, v in zip(indices, values):
            fh.write(" ".join(str(int(i) + 1) for i in idx) + f" {v:.17g}\n")


def read_tns(path, shape=None) -> SparseTensorCOO:
    """Stream-parse a .tns file; indices are 1-based on disk.

    `shape` (or a '# shape:' header) declares mode sizes; otherwise they are
    inferred as the largest index seen per mode.
    """
    path = Path(path)
    declared = tuple(int(d) for d in shape) if shape is not None else None
    indices = []
    values = []
    order = None
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            stripped = line.strip()
            if not stripped:
                continue
            if stripped.startswith("#"):
                body = stripped.lstrip("#").strip()
                if body.startswith("shape:") and declared is None:
                    try:
                        declared = tuple(int(t) for t in body[len("shape:"):].split())
                    except ValueError:
                        raise ParseError("malformed shape header", path, lineno)
                continue
            parts = stripped.split()
            if order is None:
                if len(parts) < 3:
                    raise ParseError(
                        f"need at least 2 indices and a value, got {len(parts)} fields",
                        path, lineno)
                order = len(parts) - 1
            if len(parts) != order + 1:
                raise ParseError(
                    f"expected {order + 1} fields, got {len(parts)}", path, lineno)
            try:
                idx = [int(p) for p in parts[:-1]]
                val = float(parts[-1])
            except ValueError:
                raise ParseError(f"malformed entry line {stripped!r}", path, lineno)
            if any(i < 1 for i in idx):
                raise ParseError(
                    f"indices are 1-based; got {idx}", path, lineno)
            if declared is not None and any(i > d for i, d in zip(idx, declared)):
                raise ParseError(
                    f"index {idx} outside declared shape {declared}", path, lineno)
            indices.append([i - 1 for i in idx])
            values.append(val)
    if order is None and declared is None:
        raise ParseError("file declares no shape and has no entries", path)
    if declared is None:
        declared = tuple(int(np.max([i[n] for i in indices]) + 1) for n in range(order))
    if order is not None and len(declared) != order:
        raise ParseError(
            f"entries have {order} indices but shape has {len(declared)} modes", path)
    indices = np.array(indices, dtype=np.int64).reshape(len(values), len(declared))
    return SparseTensorCOO(declared, indices, np.array(values))


def write_factors(model: KruskalModel, prefix, manifest: dict | None = None) -> list[Path]:
    """One CSV per mode: <prefix>.factor<n>.csv holding the (I_n, R) matrix."""
    prefix = Path(prefix)
    header = "manifest: " + json.dumps(manifest, sort_keys=True) if manifest else ""
    paths = []
    for n, a in enumerate(model.factors):
        p = prefix.with_name(prefix.name + f".factor{n}.csv")
        np.savetxt(p, a, delimiter=",", fmt="%.17g", header=header)
        paths.append(p)
    return paths


def read_factors(prefix, order: int | None = None) -> KruskalModel:
    """Read the factor CSVs written by :func:`write_factors`."""
    prefix = Path(prefix)
    factors = []
    n = 0
    while True:
        p = prefix.with_name(prefix.name + f".factor{n}.csv")
        if not p.exists():
            break
        factors.append(np.atleast_2d(np.loadtxt(p, delimiter=",")))
        n += 1
        if order is not None and n == order:
            break
    if not factors:
        raise DataError(f"no factor files found at {prefix}.factor*.csv")
    if order is not None and len(factors) != order:
        raise DataError(f"expected {order} factor files, found {len(factors)}")
    return KruskalModel(factors)


def _num(x) -> str:
    return "" if x is None else f"{x:.17g}"


def trace_header(n_modes: int) -> list[str]:
    return (["iteration", "seconds", "nre", "mse_mean"]
            + [f"mse_mode_{n + 1}" for n in range(n_modes)]
            + ["lyapunov", "gamma_k"])


def _record_row(rec: TraceRecord, n_modes: int) -> list[str]:
    mse_modes = rec.mse_modes if rec.mse_modes is not None else [None] * n_modes
    return ([str(rec.iteration), _num(rec.seconds), _num(rec.nre), _num(rec.mse_mean)]
            + [_num(v) for v in mse_modes]
            + [_num(rec.lyapunov), _num(rec.gamma)])


def write_trace_csv(trace: IterationTrace, path, n_modes: int):
    path = Path(path)
    with path.open("w", newline="") as fh:
        if trace.manifest:
            fh.write("# manifest: " + json.dumps(trace.manifest, sort_keys=True) + "\n")
        writer = csv.writer(fh)
        writer.writerow(trace_header(n_modes))
        for rec in trace.records:
            writer.writerow(_record_row(rec, n_modes))


def read_trace_csv(path) -> tuple[list[str], list[list[str]], dict | None]:
    """(header, rows, embedded manifest or None) from a trace CSV."""
    path = Path(path)
    manifest = None
    rows = []
    header = None
    with path.open(newline="") as fh:
        for line in fh:
            if line.startswith("#"):
                body = line.lstrip("#").strip()
                if body.startswith("manifest:"):
                    manifest = json.loads(body[len("manifest:"):])
                continue
            cells = next(csv.reader([line]))
            if header is None:
                header = cells
            else:
                rows.append(cells)
    if header is None:
        raise ParseError("trace CSV has no header row", path)
    return header, rows, manifest


def write_trace_json(trace: IterationTrace, path, n_modes: int):
    path = Path(path)
    records = []
    for rec in trace.records:
        records.append({
            "iteration": rec.iteration,
            "seconds": rec.seconds,
            "nre": rec.nre,
            "mse_mean": rec.mse_mean,
            "mse_modes": list(rec.mse_modes) if rec.mse_modes is not None else None,
            "lyapunov": rec.lyapunov,
            "gamma_k": rec.gamma,
            "gamma_modes": list(rec.gamma_modes) if rec.gamma_modes is not None else None,
        })
    payload = {
        "manifest": trace.manifest,
        "n_modes": n_modes,
        "records": records,
        "eta_history": trace.eta_history,
    }
    with path.open("w") as fh:
        json.dump(payload, fh, indent=1, sort_keys=True)
        fh.write("\n")


def write_trace(trace: IterationTrace, path, n_modes: int, fmt: str = "csv"):
    if fmt == "csv":
        write_trace_csv(trace, path, n_modes)
    elif fmt == "json":
        write_trace_json(trace, path, n_modes)
    else:
        raise ConfigError(f"unknown trace format {fmt!r}; use csv or json")
