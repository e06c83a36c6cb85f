"""Tensor containers, Kruskal (CP) models, and mode-n fiber index algebra.

Conventions used everywhere in this package:

* Modes and fiber rows are 0-based in code. Only the ``.tns`` text format
  (see :mod:`gcpd.data`) is 1-based on disk.
* Dense entries are linearized mode-0-fastest, i.e. ``values.ravel(order="F")``
  is the canonical flat order.
* The mode-n unfolding ``X_(n)`` has shape ``(J_n, I_n)`` with
  ``J_n = prod(I_m, m != n)``. Within a fiber row index the smallest remaining
  mode varies fastest, which makes the stacked rows of
  :func:`khatri_rao_rows` agree with the Khatri-Rao product
  ``A_{N-1} (.) ... (.) A_{n+1} (.) A_{n-1} (.) ... (.) A_0``
  (rightmost factor fastest) by construction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError


@dataclass(frozen=True)
class TensorShape:
    """Mode sizes I_0..I_{N-1} of an order-N tensor (N >= 2)."""

    dims: tuple[int, ...]

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        if len(dims) < 2:
            raise DataError(f"tensor order must be >= 2, got {len(dims)}")
        if any(d < 1 for d in dims):
            raise DataError(f"all mode sizes must be >= 1, got {dims}")
        object.__setattr__(self, "dims", dims)

    @property
    def order(self) -> int:
        return len(self.dims)

    @property
    def total(self) -> int:
        n = 1
        for d in self.dims:
            n *= d
        return n

    def fiber_count(self, mode: int) -> int:
        """J_n: the number of mode-`mode` fibers (= total / I_mode)."""
        self._check_mode(mode)
        return self.total // self.dims[mode]

    def _check_mode(self, mode: int):
        if not 0 <= mode < self.order:
            raise IndexError(f"mode {mode} out of range for order-{self.order} tensor")


class DenseTensor:
    """Dense order-N tensor; ``values`` is an N-d float64 array."""

    def __init__(self, values):
        values = np.ascontiguousarray(np.asarray(values, dtype=np.float64))
        if values.ndim < 2:
            raise DataError("dense tensor must have order >= 2")
        if not np.all(np.isfinite(values)):
            raise DataError("dense tensor contains non-finite entries")
        self.values = values
        self.shape = TensorShape(values.shape)

    @property
    def dims(self) -> tuple[int, ...]:
        return self.shape.dims


class SparseTensorCOO:
    """Sparse coordinate tensor with implicit-zero semantics.

    A per-mode fiber index (fiber row -> slice of nonzeros) is built once at
    construction so fiber extraction is O(nnz in fiber), not O(nnz total).
    Instances are immutable after construction.
    """

    def __init__(self, shape, indices, values, implicit_zeros=True):
        self.shape = shape if isinstance(shape, TensorShape) else TensorShape(tuple(shape))
        indices = np.asarray(indices, dtype=np.int64).reshape(-1, self.shape.order)
        values = np.asarray(values, dtype=np.float64).reshape(-1)
        if indices.shape[0] != values.shape[0]:
            raise DataError("indices and values length mismatch")
        if values.size > self.shape.total:
            raise DataError("more stored entries than tensor positions")
        if values.size and not np.all(np.isfinite(values)):
            raise DataError("sparse tensor contains non-finite values")
        dims = np.array(self.shape.dims, dtype=np.int64)
        if values.size:
            if indices.min() < 0 or np.any(indices >= dims[None, :]):
                raise DataError("sparse index out of bounds")
        # Linear ids (mode-0 fastest) detect duplicates and support random reads.
        strides = np.cumprod(np.concatenate(([1], dims[:-1])))
        linear = indices @ strides
        order = np.argsort(linear, kind="stable")
        linear = linear[order]
        if values.size and np.any(np.diff(linear) == 0):
            dup = indices[order[np.flatnonzero(np.diff(linear) == 0)[0] + 1]]
            raise DataError(f"duplicate coordinate {tuple(int(i) for i in dup)} in sparse input")
        self.indices = indices[order]
        self.values = values[order]
        self.implicit_zeros = bool(implicit_zeros)
        self._linear = linear
        self._build_fiber_index()

    @property
    def dims(self) -> tuple[int, ...]:
        return self.shape.dims

    @property
    def nnz(self) -> int:
        return int(self.values.size)

    def _build_fiber_index(self):
        self._fiber_order = []
        self._fiber_starts = []
        for mode in range(self.shape.order):
            fid = multi_index_to_fiber_array(self.shape, mode, self.indices)
            order = np.argsort(fid, kind="stable")
            starts = np.searchsorted(fid[order], np.arange(self.shape.fiber_count(mode) + 1))
            self._fiber_order.append(order)
            self._fiber_starts.append(starts)

    def fiber_rows(self, mode: int, rows) -> np.ndarray:
        """Rows of the mode-`mode` unfolding at the given fiber indices, (B, I_mode)."""
        rows = _check_rows(self.shape, mode, rows)
        out = np.zeros((rows.size, self.shape.dims[mode]))
        order = self._fiber_order[mode]
        starts = self._fiber_starts[mode]
        for b, j in enumerate(rows):
            sel = order[starts[j]:starts[j + 1]]
            out[b, self.indices[sel, mode]] = self.values[sel]
        return out

    def values_at_linear(self, linear_ids) -> np.ndarray:
        """Entries at the given mode-0-fastest linear positions (absent = 0)."""
        linear_ids = np.asarray(linear_ids, dtype=np.int64)
        pos = np.searchsorted(self._linear, linear_ids)
        pos = np.minimum(pos, max(self.nnz - 1, 0))
        out = np.zeros(linear_ids.shape)
        if self.nnz:
            hit = self._linear[pos] == linear_ids
            out[hit] = self.values[pos[hit]]
        return out

    def to_dense(self) -> DenseTensor:
        flat = np.zeros(self.shape.total)
        flat[self._linear] = self.values
        return DenseTensor(flat.reshape(self.shape.dims, order="F"))


class KruskalModel:
    """Rank-R CP model: factor matrices A_n of shape (I_n, R)."""

    def __init__(self, factors):
        factors = [np.ascontiguousarray(np.asarray(a, dtype=np.float64)) for a in factors]
        if len(factors) < 2:
            raise DataError("a Kruskal model needs at least 2 factors")
        ranks = {a.shape[1] for a in factors if a.ndim == 2}
        if any(a.ndim != 2 for a in factors) or len(ranks) != 1:
            raise DataError("factors must be matrices sharing one column count")
        if any(not np.all(np.isfinite(a)) for a in factors):
            raise DataError("factor matrices contain non-finite entries")
        self.factors = factors
        self.rank = factors[0].shape[1]
        self.shape = TensorShape(tuple(a.shape[0] for a in factors))

    @property
    def order(self) -> int:
        return len(self.factors)

    def entry(self, index) -> float:
        """Model value at one multi-index: sum_r prod_n A_n[i_n, r]."""
        return float(self.entries(np.asarray(index, dtype=np.int64).reshape(1, -1))[0])

    def entries(self, indices) -> np.ndarray:
        """Model values at (S, N) multi-indices."""
        indices = np.asarray(indices, dtype=np.int64)
        if indices.ndim != 2 or indices.shape[1] != self.order:
            raise DataError("multi-index array must be (S, N)")
        dims = np.array(self.shape.dims)
        if indices.size and (indices.min() < 0 or np.any(indices >= dims[None, :])):
            raise IndexError("multi-index out of bounds")
        prod = np.ones((indices.shape[0], self.rank))
        for n, a in enumerate(self.factors):
            prod *= a[indices[:, n], :]
        return prod.sum(axis=1)

    def to_dense(self) -> DenseTensor:
        """Full dense reconstruction sum_r A_0(:,r) o ... o A_{N-1}(:,r)."""
        n = self.order
        args = []
        for mode, a in enumerate(self.factors):
            args.extend([a, [mode, n]])
        args.append(list(range(n)))
        return DenseTensor(np.einsum(*args))

    def copy(self) -> "KruskalModel":
        return KruskalModel([a.copy() for a in self.factors])

    def replace(self, mode: int, factor) -> "KruskalModel":
        factors = list(self.factors)
        factors[mode] = factor
        return KruskalModel(factors)


def fiber_to_multi_index(shape: TensorShape, mode: int, row: int) -> tuple[int, ...]:
    """Multi-index over modes != mode for one fiber row (smallest mode fastest)."""
    shape._check_mode(mode)
    j_n = shape.fiber_count(mode)
    row = int(row)
    if not 0 <= row < j_n:
        raise IndexError(f"fiber row {row} out of range [0, {j_n}) for mode {mode}")
    out = []
    r = row
    for m, d in enumerate(shape.dims):
        if m == mode:
            continue
        out.append(r % d)
        r //= d
    return tuple(out)


def multi_index_to_fiber(shape: TensorShape, mode: int, multi) -> int:
    """Inverse of :func:`fiber_to_multi_index`."""
    shape._check_mode(mode)
    multi = tuple(int(i) for i in multi)
    others = [m for m in range(shape.order) if m != mode]
    if len(multi) != len(others):
        raise IndexError("multi-index length must be order - 1")
    row = 0
    stride = 1
    for i, m in zip(multi, others):
        if not 0 <= i < shape.dims[m]:
            raise IndexError(f"index {i} out of range for mode {m}")
        row += i * stride
        stride *= shape.dims[m]
    return row


def multi_index_to_fiber_array(shape: TensorShape, mode: int, indices: np.ndarray) -> np.ndarray:
    """Vectorized fiber rows for (S, N) multi-indices (mode column ignored)."""
    rows = np.zeros(indices.shape[0], dtype=np.int64)
    stride = 1
    for m in range(shape.order):
        if m == mode:
            continue
        rows += indices[:, m] * stride
        stride *= shape.dims[m]
    return rows


def _check_rows(shape: TensorShape, mode: int, rows) -> np.ndarray:
    shape._check_mode(mode)
    rows = np.atleast_1d(np.asarray(rows, dtype=np.int64))
    j_n = shape.fiber_count(mode)
    if rows.size and (rows.min() < 0 or rows.max() >= j_n):
        raise IndexError(f"fiber row out of range [0, {j_n}) for mode {mode}")
    return rows


def _fiber_digits(shape: TensorShape, mode: int, rows: np.ndarray):
    """Per-mode index arrays (modes != mode, increasing) for a batch of rows."""
    digits = []
    r = rows.copy()
    for m, d in enumerate(shape.dims):
        if m == mode:
            continue
        digits.append(r % d)
        r //= d
    return digits


def khatri_rao_rows(factors, mode: int, rows) -> np.ndarray:
    """Rows of the Khatri-Rao product of all factors except `mode`, shape (B, R).

    Row b for fiber row j is the elementwise product over m != mode of
    A_m[i_m, :] at the fiber's multi-index; never materializes the full product.
    """
    factors = list(factors)
    shape = TensorShape(tuple(a.shape[0] for a in factors))
    rows = _check_rows(shape, mode, rows)
    rank = factors[0].shape[1]
    out = np.ones((rows.size, rank))
    r = rows.copy()
    for m, a in enumerate(factors):
        if m == mode:
            continue
        d = shape.dims[m]
        out *= a[r % d, :]
        r //= d
    return out


def model_fibers(model: KruskalModel, mode: int, rows) -> np.ndarray:
    """Rows of the model's mode-n unfolding H_n A_n^T at the given fibers, (B, I_n)."""
    kr = khatri_rao_rows(model.factors, mode, rows)
    return kr @ model.factors[mode].T


def data_fibers(tensor, mode: int, rows) -> np.ndarray:
    """Rows X_(mode)[rows, :] of the data unfolding, (B, I_mode); sparse absent = 0."""
    if isinstance(tensor, SparseTensorCOO):
        return tensor.fiber_rows(mode, rows)
    rows = _check_rows(tensor.shape, mode, rows)
    digits = _fiber_digits(tensor.shape, mode, rows)
    moved = np.moveaxis(tensor.values, mode, -1)
    return moved[tuple(digits)]


def unfold(tensor: DenseTensor, mode: int) -> np.ndarray:
    """Full mode-n unfolding X_(n) of a dense tensor, shape (J_n, I_n)."""
    tensor.shape._check_mode(mode)
    i_n = tensor.dims[mode]
    return np.reshape(np.moveaxis(tensor.values, mode, 0), (i_n, -1), order="F").T
