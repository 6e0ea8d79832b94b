"""Losses, metrics and the synthetic training benchmarks.

Two tasks live here:

* sort-yourself: a ``(batch, n)`` parameter matrix is min-max scaled per
  row, pushed through a relaxed sorting operator and trained so that each
  relaxed matrix concentrates on its diagonal, which happens exactly when the
  row is sorted in decreasing order.  It exists to time the operators'
  forward and backward passes inside a realistic training loop.
* learn-to-sort: a small scalar scorer is trained from ground-truth
  permutations alone to order lists of uniform random numbers.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from . import core
from .core import InvalidInputError
from .gradients import neural_sort_with_vjp, soft_sort_with_vjp
from .optim import OptimizerConfig, OptimizerState, TrainingError, optimizer_step
from .stochastic import sample_gumbel

__all__ = [
    "LOG_FLOOR", "BenchConfig", "BenchReport", "LearnToSortReport",
    "OptimizerConfig", "OptimizerState", "TrainingError", "optimizer_step",
    "perm_cross_entropy", "perm_cross_entropy_grad", "diag_cross_entropy",
    "diag_cross_entropy_grad", "spearman", "run_sort_yourself", "run_speed_compare",
    "run_learn_to_sort", "write_bench_csv", "write_curves_csv", "BENCH_FIELDS",
]

LOG_FLOOR = 1e-30


def perm_cross_entropy(p_hat, p_true):
    """``-(1/n) sum_ij 1{P[i,j] = 1} log P_hat[i,j]`` over the trailing two axes."""
    p_hat = np.asarray(p_hat, dtype=np.float64)
    p_true = np.asarray(p_true, dtype=np.float64)
    if p_hat.shape != p_true.shape or p_hat.ndim < 2:
        raise InvalidInputError(f"shape mismatch: {p_hat.shape} vs {p_true.shape}")
    n = p_hat.shape[-1]
    logs = np.log(np.maximum(p_hat, LOG_FLOOR))
    out = -np.sum(np.where(p_true == 1, logs, 0.0), axis=(-2, -1)) / n
    return float(out) if out.ndim == 0 else out


def perm_cross_entropy_grad(p_hat, p_true) -> np.ndarray:
    p_hat = np.asarray(p_hat, dtype=np.float64)
    p_true = np.asarray(p_true, dtype=np.float64)
    n = p_hat.shape[-1]
    hit = (p_true == 1) & (p_hat >= LOG_FLOOR)
    return np.where(hit, -1.0 / (n * np.maximum(p_hat, LOG_FLOOR)), 0.0)


def diag_cross_entropy(p_hat):
    """``-(1/n) sum_i log P_hat[i, i]``: cross-entropy against the identity."""
    p_hat = np.asarray(p_hat, dtype=np.float64)
    diag = np.diagonal(p_hat, axis1=-2, axis2=-1)
    out = -np.log(np.maximum(diag, LOG_FLOOR)).mean(axis=-1)
    return float(out) if out.ndim == 0 else out


def diag_cross_entropy_grad(p_hat) -> np.ndarray:
    p_hat = np.asarray(p_hat, dtype=np.float64)
    n = p_hat.shape[-1]
    diag = np.diagonal(p_hat, axis1=-2, axis2=-1)
    g = np.zeros_like(p_hat)
    idx = np.arange(n)
    g[..., idx, idx] = np.where(diag >= LOG_FLOOR, -1.0 / (n * np.maximum(diag, LOG_FLOOR)), 0.0)
    return g


def _ranks(x: np.ndarray) -> np.ndarray:
    # rank 0 for the largest value; ties broken by original index
    order = core.argsort_desc(x)
    r = np.empty_like(order)
    r[order] = np.arange(x.size)
    return r


def spearman(a, b) -> float:
    """Spearman rank correlation, computed as ``1 - 6 sum d^2 / (n (n^2 - 1))``.

    Ranks are assigned with the stable tie-break, so they are always
    distinct and the formula equals the Pearson correlation of the ranks.
    """
    a = core.check_scores(a, name="a")
    b = core.check_scores(b, name="b")
    if a.ndim != 1 or a.shape != b.shape:
        raise InvalidInputError("spearman expects two vectors of equal length")
    n = a.size
    if n < 2:
        raise InvalidInputError("spearman needs n >= 2")
    if np.all(a == a[0]) or np.all(b == b[0]):
        raise InvalidInputError("correlation is undefined for a constant vector")
    d = _ranks(a).astype(np.int64) - _ranks(b).astype(np.int64)
    return 1.0 - 6.0 * float(np.sum(d * d)) / (n * (n * n - 1))


# -- sort-yourself benchmark -------------------------------------------------

DEFAULT_TAU = {"softsort": 0.03, "neuralsort": 100.0}
# how each parameter row is mapped to [0, 1] before sorting: "detached" treats
# the row min and range as constants in the backward pass, "full" also
# differentiates through them, "none" feeds the raw parameters
SCALINGS = ("detached", "full", "affine", "none")


@dataclass(frozen=True)
class BenchConfig:
    n: int = 100
    batch: int = 20
    epochs: int = 100
    operator: str = "softsort"
    tau: float | None = None
    p: float = 2.0
    l2_coeff: float = 1.0 / 200.0
    optimizer: OptimizerConfig = field(default_factory=OptimizerConfig)
    seed: int = 0
    init: str = "uniform"
    scaling: str = "detached"

    def __post_init__(self):
        if self.scaling not in SCALINGS:
            raise InvalidInputError(f"unknown scaling {self.scaling!r}; expected one of {SCALINGS}")
        if self.n < 2:
            raise InvalidInputError("sort-yourself needs n >= 2")
        if self.batch < 1 or self.epochs < 0:
            raise InvalidInputError("batch must be >= 1 and epochs >= 0")
        if self.operator not in DEFAULT_TAU:
            raise InvalidInputError(f"unknown operator {self.operator!r}")
        if self.init not in ("uniform", "reversed"):
            raise InvalidInputError(f"unknown init {self.init!r}")
        if self.tau is None:
            object.__setattr__(self, "tau", DEFAULT_TAU[self.operator])
        core.check_tau(self.tau)


@dataclass
class BenchReport:
    config: BenchConfig
    total_seconds: float
    epoch_seconds: list[float]
    mean_epoch_seconds: float
    stddev_seconds: float
    final_spearman: list[float]
    loss_curve: list[float]
    spearman_curve: list[float]

    @property
    def final_spearman_min(self) -> float:
        return min(self.final_spearman)


def _operator_with_vjp(cfg: BenchConfig):
    if cfg.operator == "softsort":
        d = core.SemiMetric(cfg.p)
        return lambda x: soft_sort_with_vjp(x, cfg.tau, d, allow_ties=True)
    return lambda x: neural_sort_with_vjp(x, cfg.tau, allow_ties=True)


def _minmax(theta_row: np.ndarray, scaling: str = "detached"):
    """Scale a row to [0, 1]; returns ``(x, backward)``, backward None if constant."""
    if scaling == "none":
        return theta_row, lambda gx: gx
    if scaling == "affine":
        return (theta_row + 1.0) / 2.0, lambda gx: gx / 2.0
    lo_i = int(np.argmin(theta_row))
    hi_i = int(np.argmax(theta_row))
    r = theta_row[hi_i] - theta_row[lo_i]
    if r == 0:
        return np.full_like(theta_row, 0.5), None
    x = (theta_row - theta_row[lo_i]) / r
    if scaling == "detached":
        return x, lambda gx: gx / r

    def backward(gx: np.ndarray) -> np.ndarray:
        s1 = gx.sum()
        s2 = gx @ x
        g = gx / r
        g[lo_i] += (s2 - s1) / r
        g[hi_i] -= s2 / r
        return g

    return x, backward


def _init_theta(cfg: BenchConfig) -> np.ndarray:
    rng = np.random.default_rng(cfg.seed)
    theta = rng.uniform(-1.0, 1.0, size=(cfg.batch, cfg.n))
    if cfg.init == "reversed":
        theta.sort(axis=-1)
    return theta


def _sort_yourself_loss_and_grad(theta: np.ndarray, cfg: BenchConfig, op):
    batch, n = theta.shape
    grad = np.zeros_like(theta)
    loss = 0.0
    idx = np.arange(n)
    for b in range(batch):
        with np.errstate(over="ignore", invalid="ignore"):
            x, backward = _minmax(theta[b], cfg.scaling)
        if not np.all(np.isfinite(x)):
            raise TrainingError(f"row {b} of theta overflowed while scaling to [0, 1]")
        p_hat, vjp = op(x)
        diag = p_hat[idx, idx]
        loss += -np.log(np.maximum(diag, LOG_FLOOR)).mean()
        if backward is None:
            continue
        u = np.zeros_like(p_hat)
        u[idx, idx] = np.where(diag >= LOG_FLOOR, -1.0 / (n * batch * np.maximum(diag, LOG_FLOOR)), 0.0)
        grad[b] = backward(vjp(u))
    loss = float(loss) / batch
    loss += cfg.l2_coeff * float(np.sum(theta * theta))
    grad += 2.0 * cfg.l2_coeff * theta
    return loss, grad


def _row_spearmans(theta: np.ndarray) -> list[float]:
    target = np.arange(theta.shape[1], 0, -1, dtype=np.float64)
    return [spearman(row, target) for row in theta]


def run_sort_yourself(cfg: BenchConfig) -> BenchReport:
    """Train the ``(batch, n)`` parameter matrix and time every epoch.

    The first epoch is a burn-in and is left out of the timing statistics
    (unless it is the only epoch).  Spearman is measured against a
    decreasing target, so 1.0 means the row is sorted in decreasing order.
    """
    theta = _init_theta(cfg)
    op = _operator_with_vjp(cfg)
    state = OptimizerState()
    times: list[float] = []
    losses: list[float] = []
    curve: list[float] = []
    for epoch in range(1, cfg.epochs + 1):
        start = time.perf_counter()
        if not np.all(np.isfinite(theta)):
            raise TrainingError(f"parameters became non-finite before epoch {epoch} "
                                f"(n={cfg.n}, operator={cfg.operator})")
        loss, grad = _sort_yourself_loss_and_grad(theta, cfg, op)
        if not math.isfinite(loss):
            raise TrainingError(f"non-finite loss at epoch {epoch} (n={cfg.n}, operator={cfg.operator})")
        state, theta = optimizer_step(state, theta, grad, cfg.optimizer)
        times.append(time.perf_counter() - start)
        losses.append(loss)
        curve.append(float(np.mean(_row_spearmans(theta))))
    timed = times[1:] if len(times) > 1 else times
    mean = float(np.mean(timed)) if timed else 0.0
    std = float(np.std(timed)) if timed else 0.0
    return BenchReport(
        config=cfg, total_seconds=float(np.sum(timed)), epoch_seconds=timed,
        mean_epoch_seconds=mean, stddev_seconds=std,
        final_spearman=_row_spearmans(theta), loss_curve=losses, spearman_curve=curve,
    )


BENCH_FIELDS = ["operator", "n", "batch", "epochs", "tau", "p",
                "mean_epoch_seconds", "stddev_seconds", "final_spearman_min"]


def run_speed_compare(n_list, operators=("softsort", "neuralsort"), *, epochs: int = 100,
                      batch: int = 20, seed: int = 0, p: float = 2.0,
                      softsort_tau: float = DEFAULT_TAU["softsort"],
                      neuralsort_tau: float = DEFAULT_TAU["neuralsort"],
                      include_reversed: bool = False) -> list[dict]:
    """One timing row per ``(operator, n)``; every cell uses the same seed."""
    if any(int(n) < 2 for n in n_list):
        raise InvalidInputError("all n must be >= 2")
    taus = {"softsort": softsort_tau, "neuralsort": neuralsort_tau}
    inits = ("uniform", "reversed") if include_reversed else ("uniform",)
    rows = []
    for n in n_list:
        for op in operators:
            for init in inits:
                cfg = BenchConfig(n=int(n), batch=batch, epochs=epochs, operator=op,
                                  tau=taus[op], p=p, seed=seed, init=init)
                rep = run_sort_yourself(cfg)
                rows.append({
                    "operator": op if init == "uniform" else f"{op}_reversed",
                    "n": cfg.n, "batch": cfg.batch, "epochs": cfg.epochs, "tau": cfg.tau,
                    "p": cfg.p if op == "softsort" else "",
                    "mean_epoch_seconds": rep.mean_epoch_seconds,
                    "stddev_seconds": rep.stddev_seconds,
                    "final_spearman_min": rep.final_spearman_min,
                })
    return rows


def write_bench_csv(rows: list[dict], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=BENCH_FIELDS)
        writer.writeheader()
        writer.writerows(rows)


def write_curves_csv(report: BenchReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss", "spearman_mean"])
        for i, (loss, rho) in enumerate(zip(report.loss_curve, report.spearman_curve), 1):
            writer.writerow([i, repr(loss), repr(rho)])


# -- learn-to-sort -----------------------------------------------------------

@dataclass(frozen=True)
class LearnToSortConfig:
    n: int = 5
    train_size: int = 2000
    test_size: int = 1000
    epochs: int = 50
    operator: str = "softsort"
    tau: float = 1.0
    p: float = 1.0
    hidden: int = 8
    batch_size: int = 20
    learning_rate: float = 0.005
    n_samples: int = 0
    seed: int = 0


@dataclass
class LearnToSortReport:
    n: int
    exact_perm_acc: float
    elementwise_acc: float
    seed: int
    config: LearnToSortConfig
    loss_curve: list[float]

    def to_dict(self) -> dict:
        return {"n": self.n, "exact_perm_acc": self.exact_perm_acc,
                "elementwise_acc": self.elementwise_acc, "seed": self.seed,
                "config": asdict(self.config)}


class _TanhScorer:
    """Per-element scorer ``s(x) = v . tanh(a x + c)`` with packed parameters."""

    def __init__(self, hidden: int):
        self.hidden = hidden

    def init(self, rng: np.random.Generator) -> np.ndarray:
        h = self.hidden
        return np.concatenate([rng.normal(0.0, 2.0, h), rng.uniform(-1.0, 1.0, h),
                               rng.normal(0.0, 1.0 / math.sqrt(h), h)])

    def unpack(self, theta):
        h = self.hidden
        return theta[:h], theta[h:2 * h], theta[2 * h:]

    def forward(self, theta, x):
        a, c, v = self.unpack(theta)
        act = np.tanh(x[..., None] * a + c)
        return act @ v, act

    def backward(self, theta, x, act, gs) -> np.ndarray:
        _, _, v = self.unpack(theta)
        h = self.hidden
        act = act.reshape(-1, h)
        gs = gs.reshape(-1)
        gv = gs @ act
        gz = gs[:, None] * v * (1.0 - act * act)
        ga = x.reshape(-1) @ gz
        gc = gz.sum(axis=0)
        return np.concatenate([ga, gc, gv])


def _sort_accuracy(scores: np.ndarray, x: np.ndarray) -> tuple[float, float]:
    pred = core.argsort_desc(scores)
    true = core.argsort_desc(x)
    hits = pred == true
    return float(np.mean(np.all(hits, axis=-1))), float(np.mean(hits))


def run_learn_to_sort(n: int = 5, train_size: int = 2000, epochs: int = 50,
                      operator: str = "softsort", tau: float = 1.0, seed: int = 0,
                      **options) -> LearnToSortReport:
    """Learn to sort lists of ``n`` uniform numbers from permutation supervision.

    Each list is scored element-wise by a small tanh network; the loss is
    :func:`perm_cross_entropy` between the relaxed matrix of the scores and
    the true permutation matrix.  With ``n_samples > 0`` the scores are
    perturbed by Gumbel noise and the per-sample losses are summed.  The
    report gives the share of test lists ordered exactly and the share of
    positions placed correctly.
    """
    cfg = LearnToSortConfig(n=n, train_size=train_size, epochs=epochs, operator=operator,
                            tau=tau, seed=seed, **options)
    if cfg.n < 2 or cfg.train_size < 1 or cfg.test_size < 1 or cfg.epochs < 0:
        raise InvalidInputError("learn-to-sort needs n >= 2 and positive sizes")
    if cfg.operator not in DEFAULT_TAU:
        raise InvalidInputError(f"unknown operator {cfg.operator!r}")
    tau = core.check_tau(cfg.tau)
    d = core.SemiMetric(cfg.p)
    rng = np.random.default_rng(cfg.seed)
    x_train = rng.uniform(size=(cfg.train_size, cfg.n))
    x_test = rng.uniform(size=(cfg.test_size, cfg.n))
    p_train = core.perm_matrix(core.argsort_desc(x_train))
    scorer = _TanhScorer(cfg.hidden)
    theta = scorer.init(rng)
    opt = OptimizerConfig(kind="adam", learning_rate=cfg.learning_rate)
    state = OptimizerState()
    noise_seed = int(rng.integers(2**63))
    step = 0
    losses = []
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(cfg.train_size)
        total = 0.0
        for start in range(0, cfg.train_size, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            x, target = x_train[idx], p_train[idx]
            s, act = scorer.forward(theta, x)
            if cfg.n_samples > 0:
                z = sample_gumbel(len(idx) * cfg.n_samples, cfg.n, seed=noise_seed + step)
                scores = s[:, None, :] + z.reshape(len(idx), cfg.n_samples, cfg.n)
                target = np.broadcast_to(target[:, None], scores.shape + (cfg.n,))
            else:
                scores = s
            if cfg.operator == "softsort":
                p_hat, vjp = soft_sort_with_vjp(scores, tau, d, allow_ties=True)
            else:
                p_hat, vjp = neural_sort_with_vjp(scores, tau, allow_ties=True)
            batch_loss = np.sum(perm_cross_entropy(p_hat, target)) / len(idx)
            if not math.isfinite(batch_loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}")
            gs = vjp(perm_cross_entropy_grad(p_hat, target) / len(idx))
            if cfg.n_samples > 0:
                gs = gs.sum(axis=1)
            state, theta = optimizer_step(state, theta, scorer.backward(theta, x, act, gs), opt)
            total += batch_loss * len(idx)
            step += 1
        losses.append(float(total) / cfg.train_size)
    exact, elementwise = _sort_accuracy(scorer.forward(theta, x_test)[0], x_test)
    return LearnToSortReport(n=cfg.n, exact_perm_acc=exact, elementwise_acc=elementwise,
                             seed=cfg.seed, config=cfg, loss_curve=losses)

