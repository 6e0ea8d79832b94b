"""Hard and relaxed sorting operators.

Every operator accepts scores of shape ``(..., n)``; leading axes are batch
axes and relaxed outputs have shape ``(..., n, n)``.  Row ``i`` of a relaxed
matrix is a distribution over which input element holds rank ``i`` (rank 0 is
the largest).  Indices are 0-based throughout the code.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class InvalidInputError(ValueError):
    """Raised when an operator receives inputs outside its domain."""


@dataclass(frozen=True)
class SemiMetric:
    """Pointwise distance ``d(x, y) = |x - y| ** power``."""

    power: float = 1.0

    def __post_init__(self):
        if not (math.isfinite(self.power) and self.power > 0):
            raise InvalidInputError(f"semi-metric power must be finite and > 0, got {self.power}")

    def __call__(self, x, y):
        return self.of_difference(np.subtract(x, y))

    def of_difference(self, diff: np.ndarray) -> np.ndarray:
        if self.power == 1.0:
            return np.abs(diff)
        if self.power == 2.0:
            return np.square(diff)
        return np.abs(diff) ** self.power

    def derivative(self, diff: np.ndarray) -> np.ndarray:
        """d/dx |x|^p evaluated at ``diff``, taking the value 0 at the origin."""
        if self.power == 1.0:
            return np.sign(diff)
        if self.power == 2.0:
            return 2.0 * diff
        a = np.abs(diff)
        with np.errstate(divide="ignore", invalid="ignore"):
            out = self.power * np.sign(diff) * a ** (self.power - 1.0)
        out[a == 0] = 0.0
        return out


L1 = SemiMetric(1.0)
L2 = SemiMetric(2.0)


def as_metric(d) -> SemiMetric:
    if isinstance(d, SemiMetric):
        return d
    return SemiMetric(float(d))


def check_scores(s, *, name: str = "scores") -> np.ndarray:
    """Validate and convert scores to a float64 array of shape (..., n)."""
    try:
        arr = np.asarray(s, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise InvalidInputError(f"{name} must be a rectangular array of reals") from exc
    if arr.ndim == 0:
        raise InvalidInputError(f"{name} must have at least one axis")
    if arr.shape[-1] == 0:
        raise InvalidInputError(f"{name} must not be empty")
    if not np.all(np.isfinite(arr)):
        raise InvalidInputError(f"{name} must be finite")
    return arr


def check_tau(tau) -> float:
    tau = float(tau)
    if not (math.isfinite(tau) and tau > 0):
        raise InvalidInputError(f"temperature must be finite and > 0, got {tau}")
    return tau


def argsort_desc(s) -> np.ndarray:
    """Permutation sorting ``s`` in decreasing order; ties keep the lower index first.

    >>> argsort_desc([9, 1, 5, 2]).tolist()
    [0, 2, 3, 1]
    """
    s = check_scores(s)
    return np.argsort(-s, axis=-1, kind="stable")


def sort_desc(s) -> np.ndarray:
    s = check_scores(s)
    return np.take_along_axis(s, argsort_desc(s), axis=-1)


def is_permutation(p) -> bool:
    p = np.asarray(p)
    if p.ndim == 0 or not np.issubdtype(p.dtype, np.integer):
        return False
    n = p.shape[-1]
    return bool(np.array_equal(np.sort(p, axis=-1), np.broadcast_to(np.arange(n), p.shape)))


def perm_matrix(p) -> np.ndarray:
    """One-hot matrix with ``P[i, p[i]] = 1``, so that ``P @ s`` equals ``s[p]``."""
    arr = np.asarray(p)
    if arr.ndim >= 1 and arr.dtype.kind == "f" and np.all(arr == np.round(arr)):
        arr = arr.astype(np.int64)
    if not is_permutation(arr):
        raise InvalidInputError("perm_matrix expects a bijection on {0..n-1}")
    n = arr.shape[-1]
    out = np.zeros(arr.shape + (n,), dtype=np.float64)
    np.put_along_axis(out, arr[..., None], 1.0, axis=-1)
    return out


def _softmax_lastaxis_(x: np.ndarray) -> np.ndarray:
    """In-place row softmax of ``x`` over its last axis."""
    x -= x.max(axis=-1, keepdims=True)
    np.exp(x, out=x)
    x /= x.sum(axis=-1, keepdims=True)
    return x


def row_softmax(m, tau: float = 1.0) -> np.ndarray:
    """Row-wise ``softmax(m / tau)``, shifted by each row's maximum."""
    m = np.asarray(m, dtype=np.float64)
    if m.ndim < 1 or m.shape[-1] == 0 or not np.all(np.isfinite(m)):
        raise InvalidInputError("row_softmax expects a finite, non-empty array")
    tau = check_tau(tau)
    return _softmax_lastaxis_(m / tau)


def soft_sort(s, tau: float = 1.0, d=L1) -> np.ndarray:
    """Relaxed permutation matrix ``softmax(-d(sort(s) 1^T, 1 s^T) / tau)``.

    Row ``i`` is the softmax of the negative distances from every score to
    the ``i``-th largest score.
    """
    s = check_scores(s)
    tau = check_tau(tau)
    d = as_metric(d)
    t = sort_desc(s)
    x = d.of_difference(t[..., :, None] - s[..., None, :])
    np.divide(x, -tau, out=x)
    return _softmax_lastaxis_(x)


_BLOCK = 128


def neural_sort_logits(s) -> np.ndarray:
    """Logit matrix whose row ``i`` is ``(n - 1 - 2i) s - A_s 1`` (0-based ``i``).

    ``A_s 1`` is reduced to an n-vector before being broadcast, which keeps
    the cost at O(n^2) instead of the O(n^3) of multiplying by ``1 1^T``.
    """
    s = check_scores(s)
    n = s.shape[-1]
    row_sums = np.empty_like(s)
    # blocks of rows keep the |s_j - s_k| temporaries cache-sized
    for start in range(0, n, _BLOCK):
        part = s[..., start:start + _BLOCK, None] - s[..., None, :]
        np.abs(part, out=part)
        row_sums[..., start:start + _BLOCK] = part.sum(axis=-1)
    scaling = (n - 1 - 2 * np.arange(n)).astype(np.float64)
    out = np.multiply(scaling[:, None], s[..., None, :])
    out -= row_sums[..., None, :]
    return out


def neural_sort(s, tau: float = 1.0) -> np.ndarray:
    tau = check_tau(tau)
    x = neural_sort_logits(s)
    np.divide(x, tau, out=x)
    return _softmax_lastaxis_(x)


def hard_project(p_hat) -> np.ndarray:
    """Row-wise argmax of a relaxed permutation matrix.

    Raises InvalidInputError if two rows share an argmax.
    """
    p_hat = np.asarray(p_hat, dtype=np.float64)
    if p_hat.ndim < 2 or p_hat.shape[-1] != p_hat.shape[-2]:
        raise InvalidInputError("hard_project expects square matrices of shape (..., n, n)")
    u = np.argmax(p_hat, axis=-1)
    if not is_permutation(u):
        raise InvalidInputError("row argmaxes collide; the input is not unimodal row stochastic")
    return u


def urs_violations(p_hat, atol: float = 1e-9) -> list[str]:
    """Names of the unimodal-row-stochastic conditions that ``p_hat`` breaks."""
    p_hat = np.asarray(p_hat, dtype=np.float64)
    bad = []
    if np.any(p_hat < 0):
        bad.append("non-negativity")
    if np.any(np.abs(p_hat.sum(axis=-1) - 1.0) > atol):
        bad.append("row affinity")
    if not is_permutation(np.argmax(p_hat, axis=-1)):
        bad.append("argmax permutation")
    return bad


def _check_batch(batch) -> np.ndarray:
    batch = check_scores(batch, name="batch")
    if batch.ndim != 2:
        raise InvalidInputError(f"a score batch must have layout (B, n), got shape {batch.shape}")
    return batch


def soft_sort_batch(batch, tau: float = 1.0, d=L1) -> np.ndarray:
    return soft_sort(_check_batch(batch), tau, d)


def neural_sort_batch(batch, tau: float = 1.0) -> np.ndarray:
    return neural_sort(_check_batch(batch), tau)


def min_gap(s) -> float:
    """Smallest absolute difference between two entries of each vector (inf if n == 1)."""
    t = sort_desc(s)
    if t.shape[-1] < 2:
        return math.inf
    return float(np.min(t[..., :-1] - t[..., 1:]))
