"""Closed-form backward passes for the relaxed sorting operators.

A vector-Jacobian product maps an upstream cotangent ``U = dL/dP_hat`` of
shape ``(..., n, n)`` to ``dL/ds`` of shape ``(..., n)``.  Both operators are
differentiable only where the scores have no ties, so the VJPs refuse tied
inputs instead of returning an arbitrary subgradient.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np

from . import core
from .core import L1, InvalidInputError, as_metric, check_scores, check_tau


class IllDefinedGradientError(ValueError):
    """The scores contain ties, where the operators are not differentiable."""


def _require_distinct(t: np.ndarray) -> None:
    # t is sorted in decreasing order along the last axis
    if t.shape[-1] > 1 and np.any(t[..., :-1] - t[..., 1:] <= 0):
        raise IllDefinedGradientError(
            "scores contain ties; the gradient is only defined almost everywhere "
            "(perturb the input and retry)"
        )


def _check_upstream(upstream, shape) -> np.ndarray:
    u = np.asarray(upstream, dtype=np.float64)
    if u.shape != shape:
        raise InvalidInputError(f"upstream has shape {u.shape}, expected {shape}")
    return u


def _softmax_vjp(p: np.ndarray, u: np.ndarray) -> np.ndarray:
    # gradient w.r.t. the softmax input: P * (U - <U, P>_row)
    g = u * p
    r = g.sum(axis=-1, keepdims=True)
    np.subtract(u, r, out=g)
    g *= p
    return g


def _scatter(values: np.ndarray, order: np.ndarray) -> np.ndarray:
    out = np.zeros_like(values)
    np.put_along_axis(out, order, values, axis=-1)
    return out


def soft_sort_with_vjp(s, tau: float = 1.0, d=L1, *, allow_ties: bool = False):
    """Forward pass plus a closure computing the VJP at ``s``.

    The closure reuses the forward intermediates, which is what the training
    loops call once per step.  With ``allow_ties`` the closure returns the
    one-sided gradient of the stable tie-break order at tied inputs instead of
    raising, as training loops need.
    """
    s = check_scores(s)
    tau = check_tau(tau)
    d = as_metric(d)
    order = core.argsort_desc(s)
    t = np.take_along_axis(s, order, axis=-1)
    diff = t[..., :, None] - s[..., None, :]
    x = d.of_difference(diff)
    np.divide(x, -tau, out=x)
    p_hat = core._softmax_lastaxis_(x)

    def vjp(upstream) -> np.ndarray:
        u = _check_upstream(upstream, p_hat.shape)
        if s.shape[-1] == 1:
            return np.zeros_like(s)
        if not allow_ties:
            _require_distinct(t)
        g = _softmax_vjp(p_hat, u)
        # logit[i, j] = -d(t_i - s_j) / tau; the self pair j = order[i] is
        # constant in s and drops out because d'(0) is taken as 0
        if d.power == 2.0:
            # in place: saves an n x n temporary on the training hot path
            g *= diff
            g *= 2.0 / tau
        else:
            g *= d.derivative(diff)
            g /= tau
        grad_t = -g.sum(axis=-1)
        return g.sum(axis=-2) + _scatter(grad_t, order)

    return p_hat, vjp


def neural_sort_with_vjp(s, tau: float = 1.0, *, allow_ties: bool = False):
    s = check_scores(s)
    tau = check_tau(tau)
    n = s.shape[-1]
    x = core.neural_sort_logits(s)
    np.divide(x, tau, out=x)
    p_hat = core._softmax_lastaxis_(x)

    def vjp(upstream) -> np.ndarray:
        u = _check_upstream(upstream, p_hat.shape)
        if n == 1:
            return np.zeros_like(s)
        order = core.argsort_desc(s)
        if not allow_ties:
            _require_distinct(np.take_along_axis(s, order, axis=-1))
        g = _softmax_vjp(p_hat, u)
        g /= tau
        scaling = (n - 1 - 2 * np.arange(n)).astype(np.float64)
        grad = scaling @ g
        # -b_j with b_j = sum_k |s_j - s_k| gives, for h = column sums of g,
        # dL/ds_m -= h_m sum_k sgn(s_m - s_k) + sum_k h_k sgn(s_m - s_k)
        h = g.sum(axis=-2)
        h_sorted = np.take_along_axis(h, order, axis=-1)
        csum = np.cumsum(h_sorted, axis=-1)
        above = csum - h_sorted
        below = csum[..., -1:] - csum
        rank = np.arange(n, dtype=np.float64)
        sign_count = (n - 1 - rank) - rank
        sorted_term = h_sorted * sign_count + (below - above)
        return grad - _scatter(sorted_term, order)

    return p_hat, vjp


def soft_sort_vjp(s, tau, d, upstream) -> np.ndarray:
    """``sum_ij upstream[i, j] * dP_hat[i, j] / ds`` for SoftSort.

    The sort inside the operator acts locally as the fixed permutation
    ``argsort_desc(s)``, so gradients reaching ``sort(s)`` are scattered back
    through it and added to the gradient of the direct occurrence of ``s``.
    """
    return soft_sort_with_vjp(s, tau, d)[1](upstream)


def neural_sort_vjp(s, tau, upstream) -> np.ndarray:
    return neural_sort_with_vjp(s, tau)[1](upstream)


OPERATORS = ("softsort", "neuralsort")


def resolve_operator(op, tau: float = 1.0, d=L1) -> Callable[[np.ndarray], np.ndarray]:
    """Turn an operator id (or a callable) into ``f(s) -> matrix``."""
    if callable(op):
        return op
    if op == "softsort":
        return lambda s: core.soft_sort(s, tau, d)
    if op == "neuralsort":
        return lambda s: core.neural_sort(s, tau)
    raise InvalidInputError(f"unknown operator {op!r}; expected one of {OPERATORS}")


def analytic_vjp(op: str, s, tau, d, upstream) -> np.ndarray:
    if op == "softsort":
        return soft_sort_vjp(s, tau, d, upstream)
    if op == "neuralsort":
        return neural_sort_vjp(s, tau, upstream)
    raise InvalidInputError(f"unknown operator {op!r}; expected one of {OPERATORS}")


def finite_diff_vjp(op, s, tau=1.0, d=L1, upstream=None, h: float = 1e-6) -> np.ndarray:
    """Central-difference estimate of the VJP of ``op`` at a single vector ``s``.

    ``op`` is an operator id or any callable mapping a vector to an array
    shaped like ``upstream``.  For the sorting operators the scores must be
    separated by at least ``10 * h`` so no step crosses a tie.
    """
    s = check_scores(s)
    if s.ndim != 1:
        raise InvalidInputError("finite_diff_vjp works on a single score vector")
    if not (math.isfinite(h) and h > 0):
        raise InvalidInputError(f"step h must be finite and > 0, got {h}")
    if not callable(op) and core.min_gap(s) < 10 * h:
        raise InvalidInputError(
            f"scores have a gap below 10h = {10 * h:g}; resample the scores or shrink h"
        )
    f = resolve_operator(op, tau, d)
    u = np.asarray(upstream, dtype=np.float64)
    grad = np.empty_like(s)
    for k in range(s.size):
        plus = s.copy()
        minus = s.copy()
        plus[k] += h
        minus[k] -= h
        grad[k] = np.sum(u * (f(plus) - f(minus))) / (2 * h)
    return grad


def sample_separated_scores(rng: np.random.Generator, n: int, min_gap: float = 0.05,
                            spread: float = 0.5) -> np.ndarray:
    """Random scores whose sorted neighbours differ by at least ``min_gap``."""
    gaps = min_gap + rng.exponential(spread, size=n - 1)
    values = np.concatenate([[0.0], np.cumsum(gaps)])
    values -= values.mean()
    values += rng.normal()
    return rng.permutation(values)


def relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Normwise relative error ``|a - f|_inf / max(|a|_inf, |f|_inf)``."""
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)))
    err = np.max(np.abs(analytic - numeric))
    if scale == 0:
        return 0.0 if err == 0 else math.inf
    return float(err / scale)


@dataclass
class GradCheckReport:
    op: str
    n: int
    trials: int
    tol: float
    seed: int
    tau: float
    p: float | None
    h: float
    max_abs_err: float
    max_rel_err: float
    passed: bool
    # coordinates of the worst trial
    per_coordinate: list[dict] = field(default_factory=list)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["pass"] = out.pop("passed")
        return out

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def gradcheck(op: str = "softsort", n: int = 10, trials: int = 100, tol: float = 1e-5,
              seed: int = 0, tau: float = 1.0, p: float = 1.0, h: float = 1e-6,
              min_gap: float = 0.05) -> GradCheckReport:
    """Compare the analytic VJP against central differences on random inputs.

    Each trial draws separated scores and a standard-normal upstream from its
    own child stream of ``seed``, so the report does not depend on how trials
    are scheduled.
    """
    if trials < 1:
        raise InvalidInputError("trials must be >= 1")
    if op not in OPERATORS:
        raise InvalidInputError(f"unknown operator {op!r}; expected one of {OPERATORS}")
    d = core.SemiMetric(p)
    # the logits depend on gap**p / tau, so gaps are drawn on that scale;
    # far larger gaps drive the true gradient below the finite-difference noise
    spread = 0.5 * tau ** (1.0 / (p if op == "softsort" else 1.0))
    worst_abs = 0.0
    worst_rel = -1.0
    table: list[dict] = []
    for child in np.random.SeedSequence(seed).spawn(trials):
        rng = np.random.default_rng(child)
        s = sample_separated_scores(rng, n, min_gap, spread)
        u = rng.normal(size=(n, n))
        a = analytic_vjp(op, s, tau, d, u)
        f = finite_diff_vjp(op, s, tau, d, u, h)
        worst_abs = max(worst_abs, float(np.max(np.abs(a - f))))
        rel = relative_error(a, f)
        if rel > worst_rel:
            worst_rel = rel
            table = [
                {"index": k, "analytic": float(a[k]), "numeric": float(f[k]),
                 "abs_err": float(abs(a[k] - f[k]))}
                for k in range(n)
            ]
    return GradCheckReport(
        op=op, n=n, trials=trials, tol=tol, seed=seed, tau=tau,
        p=p if op == "softsort" else None, h=h,
        max_abs_err=worst_abs, max_rel_err=worst_rel,
        passed=bool(worst_rel <= tol), per_coordinate=table,
    )
