"""Registry of the library's invariants, runnable suite by suite.

Each property is a named check returning ``(passed, detail)``.  Checks look
operators up on their modules at call time, so a patched operator is the one
under test.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import core, dknn, gradients, harness, stochastic
from .core import InvalidInputError

URS_NS = (2, 5, 10, 50)
URS_TAUS = (0.1, 1.0, 100.0)
GRAD_NS = (2, 5, 10, 50)
GRAD_TAUS = (0.1, 1.0, 10.0)


@dataclass(frozen=True)
class Property:
    name: str
    suite: str
    check: Callable[[int], tuple[bool, str]]


@dataclass
class PropertyResult:
    name: str
    suite: str
    passed: bool
    detail: str
    seconds: float


def _operators():
    # (label, f(s, tau)) for every operator variant under test
    return [
        ("softsort p=1", lambda s, tau: core.soft_sort(s, tau, core.L1)),
        ("softsort p=2", lambda s, tau: core.soft_sort(s, tau, core.L2)),
        ("neuralsort", lambda s, tau: core.neural_sort(s, tau)),
    ]


def _urs_batches(seed: int, vectors: int = 1000):
    rng = np.random.default_rng(seed)
    for n in URS_NS:
        s = rng.normal(size=(vectors, n))
        for tau in URS_TAUS:
            for label, f in _operators():
                yield label, n, tau, s, f(s, tau)


def _check_nonneg(seed: int):
    for label, n, tau, _, p in _urs_batches(seed):
        if np.any(p < 0):
            return False, f"negative entry ({label}, n={n}, tau={tau})"
    return True, "no negative entries"


def _check_row_affinity(seed: int):
    worst = 0.0
    for label, n, tau, _, p in _urs_batches(seed):
        err = float(np.max(np.abs(p.sum(axis=-1) - 1.0)))
        worst = max(worst, err)
        if err > 1e-9:
            return False, f"row sum off by {err:.3g} ({label}, n={n}, tau={tau})"
    return True, f"max |row sum - 1| = {worst:.3g}"


def _check_argmax_perm(seed: int):
    for label, n, tau, s, p in _urs_batches(seed):
        if not np.array_equal(np.argmax(p, axis=-1), core.argsort_desc(s)):
            return False, f"row argmax differs from argsort ({label}, n={n}, tau={tau})"
    return True, "row argmax equals argsort in every case"


def _separated(rng, n, gap=0.1):
    return gradients.sample_separated_scores(rng, n, min_gap=gap, spread=0.5)


def _check_limit(seed: int):
    # gap 0.1: p=1 and NeuralSort saturate by tau=1e-3, but p=2 sees
    # gap^2 / tau = 10 there, so it is checked at tau=1e-5
    rng = np.random.default_rng(seed)
    cases = [
        ("softsort p=1", 1e-3, lambda s, t: core.soft_sort(s, t, core.L1)),
        ("softsort p=2", 1e-5, lambda s, t: core.soft_sort(s, t, core.L2)),
        ("neuralsort", 1e-3, lambda s, t: core.neural_sort(s, t)),
    ]
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 11))
        s = _separated(rng, n)
        hard = core.perm_matrix(core.argsort_desc(s))
        for label, tau, f in cases:
            err = float(np.max(np.abs(f(s, tau) - hard)))
            worst = max(worst, err)
            if err > 1e-6:
                return False, f"{label}: |P_hat - P|_inf = {err:.3g} at tau={tau}"
    return True, f"max |P_hat - P|_inf = {worst:.3g}"


def _check_equivariance(seed: int):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 21))
        s = rng.normal(size=n)
        tau = float(rng.choice([0.1, 1.0, 10.0]))
        perm = core.perm_matrix(core.argsort_desc(s))
        for label, f in _operators():
            err = float(np.max(np.abs(f(s, tau) - f(core.sort_desc(s), tau) @ perm)))
            worst = max(worst, err)
            if err > 1e-12:
                return False, f"{label}: deviation {err:.3g} at n={n}"
    return True, f"max deviation {worst:.3g}"


def _check_first_row(seed: int):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(100):
        s = rng.normal(size=int(rng.integers(1, 21)))
        tau = float(rng.choice([0.1, 1.0, 10.0]))
        err = float(np.max(np.abs(core.soft_sort(s, tau, core.L1)[0] - core.row_softmax(s, tau))))
        worst = max(worst, err)
    return worst <= 1e-12, f"max deviation {worst:.3g}"


def _rel_err(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.max(np.abs(a - b) / np.abs(b)))


def _density_rows(seed: int, power: float):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(50):
        n = int(rng.integers(2, 13))
        s = rng.normal(size=n)
        tau = float(rng.choice([0.5, 1.0, 2.0]))
        p_hat = core.soft_sort(s, tau, core.SemiMetric(power))
        for i, centre in enumerate(sorted(s.tolist(), reverse=True)):
            dens = np.array([math.exp(-abs(centre - x) ** power / tau) for x in s.tolist()])
            worst = max(worst, _rel_err(p_hat[i], dens / math.fsum(dens)))
    return worst <= 1e-9, f"max relative error {worst:.3g}"


def _check_neuralsort_gaussian(seed: int):
    rng = np.random.default_rng(seed)
    cases = [(1.0, 0.0, 8, 2.0)]
    cases += [(float(rng.uniform(0.2, 2.0)), float(rng.normal()), int(rng.integers(2, 12)),
               float(rng.uniform(0.5, 4.0))) for _ in range(20)]
    worst = 0.0
    for a, b, n, tau in cases:
        s = b - a * np.arange(1, n + 1)
        p_hat = core.neural_sort(s, tau)
        for i in range(n):
            dens = np.array([math.exp(-(s[i] - x) ** 2 / (a * tau)) for x in s.tolist()])
            worst = max(worst, _rel_err(p_hat[i], dens / math.fsum(dens)))
    return worst <= 1e-9, f"max relative error {worst:.3g}"


def _check_shift_invariance(seed: int):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(100):
        s = rng.normal(size=int(rng.integers(1, 21)))
        c = float(rng.normal())
        tau = float(rng.choice([0.1, 1.0, 10.0]))
        err = float(np.max(np.abs(core.soft_sort(s + c, tau, core.L1) - core.soft_sort(s, tau, core.L1))))
        worst = max(worst, err)
    return worst <= 1e-12, f"max deviation {worst:.3g}"


def _best_time(f, repeats: int = 5) -> float:
    best = math.inf
    for _ in range(repeats):
        start = time.perf_counter()
        f()
        best = min(best, time.perf_counter() - start)
    return best


def _check_logits_quadratic(seed: int):
    rng = np.random.default_rng(seed)
    small, large = rng.normal(size=500), rng.normal(size=2000)
    ratio = _best_time(lambda: core.neural_sort_logits(large)) / _best_time(
        lambda: core.neural_sort_logits(small))
    return ratio <= 25.0, f"time(2000)/time(500) = {ratio:.1f}"


def _check_gradcheck(seed: int):
    worst = 0.0
    for op, powers in (("softsort", (1.0, 2.0)), ("neuralsort", (1.0,))):
        for p in powers:
            for tau in GRAD_TAUS:
                for n in GRAD_NS:
                    rep = gradients.gradcheck(op, n=n, trials=100, tol=1e-5, seed=seed, tau=tau, p=p)
                    worst = max(worst, rep.max_rel_err)
                    if not rep.passed:
                        return False, (f"{op} p={p} tau={tau} n={n}: "
                                       f"relative error {rep.max_rel_err:.3g}")
    return True, f"max relative error {worst:.3g}"


def _vjp_cases(rng, trials=50):
    for _ in range(trials):
        n = int(rng.integers(2, 12))
        s = _separated(rng, n, gap=0.05)
        tau = float(rng.choice(GRAD_TAUS))
        yield s, tau, "softsort p=1", lambda u, s=s, t=tau: gradients.soft_sort_vjp(s, t, core.L1, u)
        yield s, tau, "softsort p=2", lambda u, s=s, t=tau: gradients.soft_sort_vjp(s, t, core.L2, u)
        yield s, tau, "neuralsort", lambda u, s=s, t=tau: gradients.neural_sort_vjp(s, t, u)


def _check_row_conservation(seed: int):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for s, _, label, vjp in _vjp_cases(rng):
        n = s.size
        for i in range(n):
            u = np.zeros((n, n))
            u[i] = 1.0
            worst = max(worst, float(np.max(np.abs(vjp(u)))))
    return worst <= 1e-10, f"max |gradient| = {worst:.3g}"


def _check_vjp_linearity(seed: int):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for s, _, label, vjp in _vjp_cases(rng):
        n = s.size
        u1, u2 = rng.normal(size=(n, n)), rng.normal(size=(n, n))
        a, b = rng.normal(size=2)
        err = float(np.max(np.abs(vjp(a * u1 + b * u2) - (a * vjp(u1) + b * vjp(u2)))))
        worst = max(worst, err)
    return worst <= 1e-10, f"max deviation {worst:.3g}"


def _check_scale_covariance(seed: int):
    rng = np.random.default_rng(seed)
    worst_fwd = worst_grad = 0.0
    for _ in range(50):
        n = int(rng.integers(2, 12))
        s = _separated(rng, n, gap=0.05)
        tau = float(rng.choice(GRAD_TAUS))
        c = float(rng.choice([0.5, 2.0, 4.0]))
        u = rng.normal(size=(n, n))
        worst_fwd = max(worst_fwd, float(np.max(np.abs(
            core.soft_sort(c * s, c * tau, core.L1) - core.soft_sort(s, tau, core.L1)))))
        g = gradients.soft_sort_vjp(s, tau, core.L1, u)
        gc = gradients.soft_sort_vjp(c * s, c * tau, core.L1, u)
        worst_grad = max(worst_grad, float(np.max(np.abs(gc - g / c))))
    ok = worst_fwd <= 1e-12 and worst_grad <= 1e-10
    return ok, f"forward deviation {worst_fwd:.3g}, gradient deviation {worst_grad:.3g}"


def _check_stochastic_urs(seed: int):
    rng = np.random.default_rng(seed)
    for trial in range(20):
        s = rng.normal(size=int(rng.integers(2, 12)))
        for op in ("softsort", "neuralsort"):
            samples = stochastic.stochastic_relaxed_sort(s, 1.0, core.L1, n_s=5,
                                                         seed=seed + trial, operator=op)
            bad = core.urs_violations(samples)
            if bad:
                return False, f"{op} sample violates {', '.join(bad)}"
    return True, "all samples URS"


def _check_stochastic_determinism(seed: int):
    s = np.array([2.0, 5.0, 4.0, -1.0])
    for op in ("softsort", "neuralsort"):
        a = stochastic.stochastic_relaxed_sort(s, 0.5, core.L2, n_s=8, seed=seed, operator=op)
        b = stochastic.stochastic_relaxed_sort(s, 0.5, core.L2, n_s=8, seed=seed, operator=op)
        if not np.array_equal(a, b):
            return False, f"{op}: repeated seed gave different samples"
    return True, "bit-identical"


def _check_gumbel_max(seed: int):
    s = np.array([1.0, 0.0, 2.0, -0.5])
    m = 100_000
    z = stochastic.sample_gumbel(m, s.size, seed)
    freq = np.bincount(np.argmax(s + z, axis=1), minlength=s.size) / m
    p = core.row_softmax(s)
    zscore = float(np.max(np.abs(freq - p) / np.sqrt(p * (1 - p) / m)))
    return zscore <= 3.0, f"max |z-score| = {zscore:.2f}"


def _random_episode(rng, n=10, dim=3, classes=3):
    return dknn.Episode(rng.normal(size=dim), int(rng.integers(classes)),
                        rng.normal(size=(n, dim)), rng.integers(classes, size=n))


def _check_dknn_perm_invariance(seed: int):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(100):
        ep = _random_episode(rng)
        phi = dknn.fixed_linear(rng.normal(size=(4, 3)))
        k = int(rng.integers(1, ep.n + 1))
        perm = rng.permutation(ep.n)
        shuffled = dknn.Episode(ep.query, ep.query_label, ep.candidates[perm], ep.labels[perm])
        err = abs(dknn.dknn_prob(ep, phi, k, 1.0) - dknn.dknn_prob(shuffled, phi, k, 1.0))
        worst = max(worst, err)
    return worst <= 1e-12, f"max deviation {worst:.3g}"


def _check_dknn_class_sum(seed: int):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(100):
        ep = _random_episode(rng)
        phi = dknn.fixed_linear(rng.normal(size=(4, 3)))
        k = int(rng.integers(1, ep.n + 1))
        total = sum(dknn.dknn_prob(ep, phi, k, 1.0, label=c) for c in range(3))
        worst = max(worst, abs(total - 1.0))
    return worst <= 1e-9, f"max |sum - 1| = {worst:.3g}"


def matching_networks_prob(ep: dknn.Episode, phi: dknn.Embedding) -> float:
    """Attention-weighted label probability ``sum_{y_i = y} e^{q.c_i} / sum_i e^{q.c_i}``."""
    q = phi(ep.query)
    weights = [math.exp(float(np.dot(q, c))) for c in phi(ep.candidates)]
    hit = [w for w, y in zip(weights, ep.labels.tolist()) if y == ep.query_label]
    return math.fsum(hit) / math.fsum(weights)


def _check_dknn_identity(seed: int):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(100):
        ep = _random_episode(rng, n=int(rng.integers(1, 16)))
        phi = dknn.fixed_linear(rng.normal(size=(4, 3)), unit_norm=True)
        err = abs(dknn.dknn_prob(ep, phi, 1, 2.0, core.L1) - matching_networks_prob(ep, phi))
        worst = max(worst, err)
    return worst <= 1e-10, f"max deviation {worst:.3g}"


def _random_urs(rng, n):
    return core.soft_sort(rng.normal(size=n), float(rng.uniform(0.1, 3.0)), core.L1)


def _check_diag_ce(seed: int):
    rng = np.random.default_rng(seed)
    for _ in range(100):
        n = int(rng.integers(2, 10))
        loss = harness.diag_cross_entropy(_random_urs(rng, n))
        if loss < 0:
            return False, f"negative loss {loss}"
    if harness.diag_cross_entropy(np.eye(5)) != 0.0:
        return False, "identity matrix has non-zero loss"
    near = np.eye(3) * (1 - 1e-9) + 1e-9 / 3
    if not harness.diag_cross_entropy(near) > 0:
        return False, "loss is zero for a diagonal below 1"
    return True, "non-negative, zero exactly at a unit diagonal"


def _check_perm_ce_consistency(seed: int):
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 10))
        p_hat = _random_urs(rng, n)
        p_true = core.perm_matrix(rng.permutation(n))
        q = core.perm_matrix(rng.permutation(n))
        err = abs(harness.perm_cross_entropy(p_hat @ q, p_true @ q)
                  - harness.perm_cross_entropy(p_hat, p_true))
        worst = max(worst, err)
    return worst <= 1e-12, f"max deviation {worst:.3g}"


def _check_bench_determinism(seed: int):
    for op in ("softsort", "neuralsort"):
        cfg = harness.BenchConfig(n=30, epochs=10, operator=op, seed=seed)
        a, b = harness.run_sort_yourself(cfg), harness.run_sort_yourself(cfg)
        if a.loss_curve != b.loss_curve or a.spearman_curve != b.spearman_curve:
            return False, f"{op}: curves differ across equal-seed runs"
    return True, "bit-identical curves"


def _check_sort_yourself(seed: int):
    worst = []
    ok = True
    for n in (100, 500):
        for op in ("softsort", "neuralsort"):
            rep = harness.run_sort_yourself(harness.BenchConfig(n=n, operator=op, seed=seed))
            rho = rep.final_spearman_min
            worst.append(f"{op} n={n}: {rho:.9g}")
            ok &= rho == 1.0
    return ok, "min Spearman " + "; ".join(worst)


PROPERTIES: tuple[Property, ...] = (
    Property("non-negativity", "urs", _check_nonneg),
    Property("row affinity", "urs", _check_row_affinity),
    Property("argmax permutation", "urs", _check_argmax_perm),
    Property("limit to hard permutation", "limit", _check_limit),
    Property("equivariance", "equivariance", _check_equivariance),
    Property("first row is softmax", "core", _check_first_row),
    Property("shift invariance p=1", "core", _check_shift_invariance),
    Property("neural_sort_logits quadratic runtime", "core", _check_logits_quadratic),
    Property("laplace rows p=1", "densities", lambda seed: _density_rows(seed, 1.0)),
    Property("gaussian rows p=2", "densities", lambda seed: _density_rows(seed, 2.0)),
    Property("neuralsort gaussian rows", "densities", _check_neuralsort_gaussian),
    Property("vjp matches finite differences", "gradients", _check_gradcheck),
    Property("row-sum conservation", "gradients", _check_row_conservation),
    Property("vjp linearity", "gradients", _check_vjp_linearity),
    Property("scale covariance p=1", "gradients", _check_scale_covariance),
    Property("stochastic samples URS", "stochastic", _check_stochastic_urs),
    Property("stochastic seed determinism", "stochastic", _check_stochastic_determinism),
    Property("gumbel-max frequencies", "stochastic", _check_gumbel_max),
    Property("dknn permutation invariance", "dknn", _check_dknn_perm_invariance),
    Property("dknn class probabilities sum to 1", "dknn", _check_dknn_class_sum),
    Property("dknn matching-networks identity", "dknn", _check_dknn_identity),
    Property("diag cross-entropy non-negative", "harness", _check_diag_ce),
    Property("perm cross-entropy permutation consistency", "harness", _check_perm_ce_consistency),
    Property("benchmark determinism", "harness", _check_bench_determinism),
    Property("sort-yourself reaches Spearman 1", "training", _check_sort_yourself),
)

SUITES = tuple(dict.fromkeys(p.suite for p in PROPERTIES))


def run_properties(suite: str = "all", seed: int = 0) -> list[PropertyResult]:
    """Run every property of ``suite`` (or all of them) and collect results.

    A check that raises counts as a failure; the exception is the detail.
    """
    if suite != "all" and suite not in SUITES:
        raise InvalidInputError(f"unknown suite {suite!r}; expected 'all' or one of {SUITES}")
    results = []
    for prop in PROPERTIES:
        if suite != "all" and prop.suite != suite:
            continue
        start = time.perf_counter()
        try:
            passed, detail = prop.check(seed)
        except Exception as exc:  # a crashing check is a failing check
            passed, detail = False, f"{type(exc).__name__}: {exc}"
        results.append(PropertyResult(prop.name, prop.suite, bool(passed), detail,
                                      time.perf_counter() - start))
    return results
