"""Differentiable k-nearest-neighbour classification head.

A query is compared with ``n`` labelled candidates through the negative
squared distances of their embeddings.  SoftSort relaxes the ordering of the
candidates, so the probability that the query carries its label, taken as
the mean over the first ``k`` relaxed neighbours, is differentiable in the
embedding parameters.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from . import core
from .core import L1, InvalidInputError
from .gradients import soft_sort_with_vjp
from .optim import OptimizerConfig, OptimizerState, TrainingError, optimizer_step

LOSSES = ("neg_prob", "cross_entropy")


@dataclass
class Episode:
    query: np.ndarray
    query_label: int
    candidates: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.query = np.asarray(self.query, dtype=np.float64)
        self.candidates = np.asarray(self.candidates, dtype=np.float64)
        self.labels = np.asarray(self.labels)
        if self.query.ndim != 1 or self.candidates.ndim != 2:
            raise InvalidInputError("query must be a vector and candidates a matrix")
        if self.candidates.shape[1] != self.query.size:
            raise InvalidInputError(
                f"query has dimension {self.query.size}, candidates {self.candidates.shape[1]}"
            )
        if self.labels.shape != (self.candidates.shape[0],):
            raise InvalidInputError("need exactly one label per candidate")
        if not np.issubdtype(self.labels.dtype, np.integer):
            raise InvalidInputError("labels must be integers")

    @property
    def n(self) -> int:
        return self.candidates.shape[0]


@dataclass
class Embedding:
    """Linear map ``x -> W x``, optionally projected onto the unit sphere.

    ``weight=None`` is the identity.  Only ``trainable`` embeddings are
    updated by :func:`train_dknn`.
    """

    weight: np.ndarray | None = None
    trainable: bool = False
    unit_norm: bool = False

    def __post_init__(self):
        if self.weight is not None:
            self.weight = np.array(self.weight, dtype=np.float64)
            if self.weight.ndim != 2:
                raise InvalidInputError("embedding weight must be a matrix")
        if self.trainable and self.weight is None:
            raise InvalidInputError("a trainable embedding needs an explicit weight")

    def _linear(self, x: np.ndarray) -> np.ndarray:
        if self.weight is None:
            return x.copy()
        if x.shape[-1] != self.weight.shape[1]:
            raise InvalidInputError(
                f"input dimension {x.shape[-1]} does not match weight {self.weight.shape}"
            )
        return x @ self.weight.T

    def forward(self, x) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(embedding, pre_norm)`` for inputs of shape ``(..., dim)``."""
        x = np.asarray(x, dtype=np.float64)
        z = self._linear(x)
        if not self.unit_norm:
            return z, z
        norm = np.linalg.norm(z, axis=-1, keepdims=True)
        if np.any(norm == 0):
            raise InvalidInputError("cannot normalise a zero embedding")
        return z / norm, z

    def __call__(self, x) -> np.ndarray:
        return self.forward(x)[0]

    def backward(self, x, pre_norm, grad_out) -> np.ndarray:
        """Gradient with respect to ``weight`` given ``dL/dembedding``."""
        if self.weight is None:
            raise InvalidInputError("the identity embedding has no parameters")
        x = np.asarray(x, dtype=np.float64)
        g = np.asarray(grad_out, dtype=np.float64)
        if self.unit_norm:
            norm = np.linalg.norm(pre_norm, axis=-1, keepdims=True)
            e = pre_norm / norm
            g = (g - e * np.sum(e * g, axis=-1, keepdims=True)) / norm
        return g.reshape(-1, g.shape[-1]).T @ x.reshape(-1, x.shape[-1])


def identity_embedding(unit_norm: bool = False) -> Embedding:
    return Embedding(None, trainable=False, unit_norm=unit_norm)


def fixed_linear(weight, unit_norm: bool = False) -> Embedding:
    return Embedding(weight, trainable=False, unit_norm=unit_norm)


def trainable_linear(weight, unit_norm: bool = False) -> Embedding:
    return Embedding(weight, trainable=True, unit_norm=unit_norm)


def _check_k(k: int, n: int) -> int:
    if not 1 <= int(k) <= n:
        raise InvalidInputError(f"k must lie in [1, n={n}], got {k}")
    return int(k)


def _scores(query_e: np.ndarray, cand_e: np.ndarray) -> np.ndarray:
    diff = cand_e - query_e[..., None, :]
    return -np.sum(diff * diff, axis=-1)


def neg_sq_distances(ep: Episode, phi: Embedding) -> np.ndarray:
    """``s_i = -|phi(x_i) - phi(query)|^2`` for every candidate."""
    return _scores(phi(ep.query), phi(ep.candidates))


def _prob_from_scores(s, hit, k, tau, d):
    # hit[..., j] = 1 where candidate j carries the query label
    p_hat, vjp = soft_sort_with_vjp(s, tau, d, allow_ties=True)
    prob = np.einsum("...rj,...j->...", p_hat[..., :k, :], hit) / k
    return prob, vjp


def dknn_prob(ep: Episode, phi: Embedding, k: int = 1, tau: float = 1.0, d=L1,
              label: int | None = None) -> float:
    """Relaxed kNN probability that the query has ``label`` (default: its own)."""
    k = _check_k(k, ep.n)
    core.check_tau(tau)
    target = ep.query_label if label is None else label
    hit = (ep.labels == target).astype(np.float64)
    prob, _ = _prob_from_scores(neg_sq_distances(ep, phi), hit, k, tau, core.as_metric(d))
    return float(prob)


def _batch_loss_and_grad(queries, query_labels, cands, labels, phi, k, tau, d, loss):
    """Mean loss over a batch of episodes and its gradient w.r.t. ``phi.weight``."""
    qe, qz = phi.forward(queries)
    ce, cz = phi.forward(cands)
    diff = ce - qe[:, None, :]
    s = -np.sum(diff * diff, axis=-1)
    hit = (labels == query_labels[:, None]).astype(np.float64)
    prob, vjp = _prob_from_scores(s, hit, k, tau, d)
    m = len(queries)
    if loss == "neg_prob":
        values = -prob
        dprob = np.full(m, -1.0 / m)
    else:
        values = -np.log(np.maximum(prob, 1e-30))
        dprob = np.where(prob > 1e-30, -1.0 / (m * np.maximum(prob, 1e-30)), 0.0)
    n = s.shape[-1]
    u = np.zeros((m, n, n))
    u[:, :k, :] = (dprob[:, None] * hit / k)[:, None, :]
    gs = vjp(u)
    # s_i = -|c_i - q|^2
    g_ce = -2.0 * gs[..., None] * diff
    g_qe = -g_ce.sum(axis=1)
    grad = None
    if phi.weight is not None:
        grad = phi.backward(cands, cz, g_ce) + phi.backward(queries, qz, g_qe)
    return float(np.mean(values)), grad


def dknn_loss(ep: Episode, phi: Embedding, k: int = 1, tau: float = 1.0, d=L1,
              loss: str = "neg_prob") -> float:
    """``-P(query label)``, or ``-log P`` with ``loss="cross_entropy"``."""
    return dknn_loss_and_grad(ep, phi, k, tau, d, loss)[0]


def dknn_loss_and_grad(ep: Episode, phi: Embedding, k: int = 1, tau: float = 1.0, d=L1,
                       loss: str = "neg_prob") -> tuple[float, np.ndarray | None]:
    """Loss of one episode and its gradient w.r.t. the embedding weight.

    The gradient is ``None`` for the parameter-free identity embedding.
    """
    if loss not in LOSSES:
        raise InvalidInputError(f"unknown loss {loss!r}; expected one of {LOSSES}")
    k = _check_k(k, ep.n)
    core.check_tau(tau)
    return _batch_loss_and_grad(
        ep.query[None], np.array([ep.query_label]), ep.candidates[None], ep.labels[None],
        phi, k, tau, core.as_metric(d), loss,
    )


# -- synthetic blobs ---------------------------------------------------------

@dataclass(frozen=True)
class BlobSpec:
    """Isotropic Gaussian classes with centres evenly spaced on a circle.

    Neighbouring centres sit ``separation`` standard deviations apart.
    """

    classes: int = 3
    dim: int = 2
    separation: float = 5.0
    sigma: float = 1.0
    n_train: int = 300
    n_test: int = 300
    seed: int = 0

    def __post_init__(self):
        if self.classes < 2:
            raise InvalidInputError("a blob dataset needs at least 2 classes")
        if self.dim < 2:
            raise InvalidInputError("blob centres need dim >= 2")
        if not (self.sigma > 0 and self.separation >= 0):
            raise InvalidInputError("sigma must be > 0 and separation >= 0")
        if self.n_train < 2 or self.n_test < 1:
            raise InvalidInputError("need n_train >= 2 and n_test >= 1")

    def centres(self) -> np.ndarray:
        radius = self.separation * self.sigma / (2.0 * math.sin(math.pi / self.classes))
        angle = 2.0 * math.pi * np.arange(self.classes) / self.classes
        c = np.zeros((self.classes, self.dim))
        c[:, 0] = radius * np.cos(angle)
        c[:, 1] = radius * np.sin(angle)
        return c

    def sample(self) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """``(x_train, y_train, x_test, y_test)``."""
        rng = np.random.default_rng(self.seed)
        c = self.centres()

        def draw(m):
            y = rng.integers(self.classes, size=m)
            return c[y] + rng.normal(0.0, self.sigma, size=(m, self.dim)), y

        x_tr, y_tr = draw(self.n_train)
        x_te, y_te = draw(self.n_test)
        return x_tr, y_tr, x_te, y_te


def hard_knn_accuracy(phi: Embedding, x_train, y_train, x_test, y_test, k: int) -> float:
    """Majority-vote kNN accuracy in embedding space; vote ties go to the nearest."""
    k = _check_k(k, len(x_train))
    e_tr, e_te = phi(x_train), phi(x_test)
    dist = np.sum((e_te[:, None, :] - e_tr[None, :, :]) ** 2, axis=-1)
    nearest = np.argsort(dist, axis=1, kind="stable")[:, :k]
    votes = np.asarray(y_train)[nearest]
    correct = 0
    for row, truth in zip(votes, y_test):
        counts = np.bincount(row)
        best = np.flatnonzero(counts == counts.max())
        # earliest neighbour among the tied classes wins
        pred = next(v for v in row if v in best)
        correct += int(pred == truth)
    return correct / len(y_test)


@dataclass(frozen=True)
class DknnConfig:
    k: int = 3
    tau: float = 16.0
    p: float = 1.0
    epochs: int = 50
    learning_rate: float = 0.05
    momentum: float = 0.9
    episodes_per_batch: int = 20
    batches_per_epoch: int = 5
    n_candidates: int = 50
    loss: str = "neg_prob"
    unit_norm: bool = False
    seed: int = 0


@dataclass
class DknnReport:
    config: DknnConfig
    blobs: BlobSpec
    test_accuracy: float
    initial_test_accuracy: float
    loss_curve: list[float]
    weight: list[list[float]] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"config": asdict(self.config), "blobs": asdict(self.blobs),
                "test_accuracy": self.test_accuracy,
                "initial_test_accuracy": self.initial_test_accuracy,
                "loss_curve": self.loss_curve, "weight": self.weight}

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


def write_dknn_curves_csv(report: DknnReport, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "loss"])
        for i, loss in enumerate(report.loss_curve, 1):
            writer.writerow([i, repr(loss)])


def train_dknn(blobs: BlobSpec | None = None, cfg: DknnConfig | None = None,
               phi: Embedding | None = None) -> tuple[Embedding, DknnReport]:
    """Train a linear embedding on blob episodes with momentum SGD.

    Each episode draws a query and ``n_candidates`` other training points.
    ``phi`` defaults to a trainable identity-initialised linear map.
    """
    blobs = blobs or BlobSpec()
    cfg = cfg or DknnConfig()
    if cfg.loss not in LOSSES:
        raise InvalidInputError(f"unknown loss {cfg.loss!r}; expected one of {LOSSES}")
    if cfg.epochs < 0 or cfg.episodes_per_batch < 1 or cfg.batches_per_epoch < 1:
        raise InvalidInputError("epochs must be >= 0 and batch counts >= 1")
    x_tr, y_tr, x_te, y_te = blobs.sample()
    if not 1 <= cfg.n_candidates < len(x_tr):
        raise InvalidInputError("n_candidates must lie in [1, n_train - 1]")
    k = _check_k(cfg.k, cfg.n_candidates)
    tau = core.check_tau(cfg.tau)
    d = core.SemiMetric(cfg.p)
    if phi is None:
        phi = trainable_linear(np.eye(blobs.dim), unit_norm=cfg.unit_norm)
    else:
        phi = Embedding(None if phi.weight is None else phi.weight.copy(),
                        phi.trainable, phi.unit_norm)
    opt = OptimizerConfig(kind="sgd_momentum", learning_rate=cfg.learning_rate,
                          momentum=cfg.momentum)
    state = OptimizerState()
    rng = np.random.default_rng(cfg.seed)
    initial = hard_knn_accuracy(phi, x_tr, y_tr, x_te, y_te, k)
    m, n = cfg.episodes_per_batch, cfg.n_candidates
    curve = []
    for epoch in range(1, cfg.epochs + 1):
        total = 0.0
        for _ in range(cfg.batches_per_epoch):
            q_idx = rng.integers(len(x_tr), size=m)
            c_idx = np.empty((m, n), dtype=np.int64)
            for e, q in enumerate(q_idx):
                pick = rng.choice(len(x_tr) - 1, size=n, replace=False)
                c_idx[e] = pick + (pick >= q)
            loss, grad = _batch_loss_and_grad(x_tr[q_idx], y_tr[q_idx], x_tr[c_idx],
                                              y_tr[c_idx], phi, k, tau, d, cfg.loss)
            if not math.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}")
            if phi.trainable:
                state, phi.weight = optimizer_step(state, phi.weight, grad, opt)
            total += loss
        curve.append(total / cfg.batches_per_epoch)
    acc = hard_knn_accuracy(phi, x_tr, y_tr, x_te, y_te, k)
    report = DknnReport(
        config=cfg, blobs=blobs, test_accuracy=acc, initial_test_accuracy=initial,
        loss_curve=curve, weight=[] if phi.weight is None else phi.weight.tolist(),
    )
    return phi, report
