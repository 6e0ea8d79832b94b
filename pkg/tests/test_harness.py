import csv
import math

import numpy as np
import pytest
from scipy.stats import spearmanr

from softsort import core, harness
from softsort.core import InvalidInputError
from softsort.harness import (
    BenchConfig,
    diag_cross_entropy,
    diag_cross_entropy_grad,
    perm_cross_entropy,
    perm_cross_entropy_grad,
    run_learn_to_sort,
    run_sort_yourself,
    run_speed_compare,
    spearman,
)
from softsort.optim import OptimizerConfig, OptimizerState, TrainingError, optimizer_step

WEIGHTS_254 = np.array([[0.04, 0.70, 0.26], [0.09, 0.24, 0.67], [0.85, 0.04, 0.11]])


def random_urs(rng, n):
    return core.soft_sort(rng.normal(size=n), float(rng.uniform(0.2, 2.0)), core.L1)


# -- losses --------------------------------------------------------------------

def test_perm_cross_entropy_examples():
    p = core.perm_matrix([2, 0, 1])
    assert perm_cross_entropy(p, p) == 0.0
    assert math.isclose(perm_cross_entropy(np.full((4, 4), 0.25), np.eye(4)), math.log(4))
    expected = -(math.log(0.70) + math.log(0.67) + math.log(0.85)) / 3
    loss = perm_cross_entropy(WEIGHTS_254, core.perm_matrix(np.array([2, 3, 1]) - 1))
    assert abs(loss - expected) <= 1e-12 and abs(loss - 0.306) <= 1e-3


def test_perm_cross_entropy_clamps_zeros():
    loss = perm_cross_entropy(np.array([[0.0, 1.0], [1.0, 0.0]]), np.eye(2))
    assert loss == pytest.approx(-math.log(1e-30))


def test_diag_cross_entropy_examples():
    assert diag_cross_entropy(np.eye(3)) == 0.0
    assert math.isclose(diag_cross_entropy(np.full((5, 5), 0.2)), math.log(5))


def test_diag_equals_perm_against_identity():
    rng = np.random.default_rng(0)
    for _ in range(100):
        n = int(rng.integers(2, 10))
        p = random_urs(rng, n)
        assert abs(diag_cross_entropy(p) - perm_cross_entropy(p, np.eye(n))) <= 1e-12


def test_loss_gradients_match_finite_differences():
    rng = np.random.default_rng(1)
    p = random_urs(rng, 4)
    target = core.perm_matrix(rng.permutation(4))
    for loss, grad, args in [(perm_cross_entropy, perm_cross_entropy_grad, (target,)),
                             (diag_cross_entropy, diag_cross_entropy_grad, ())]:
        g = grad(p, *args)
        for idx in np.ndindex(p.shape):
            e = np.zeros_like(p)
            e[idx] = 1e-7
            numeric = (loss(p + e, *args) - loss(p - e, *args)) / 2e-7
            assert abs(g[idx] - numeric) <= 1e-6 * max(1.0, abs(numeric))


def test_batched_losses():
    rng = np.random.default_rng(2)
    ps = np.stack([random_urs(rng, 5) for _ in range(3)])
    batched = diag_cross_entropy(ps)
    assert batched.shape == (3,)
    assert np.allclose(batched, [diag_cross_entropy(p) for p in ps])


def test_shape_mismatch():
    with pytest.raises(InvalidInputError):
        perm_cross_entropy(np.eye(3), np.eye(2))


# -- spearman -----------------------------------------------------------------------

def test_spearman_examples():
    a = np.array([1.0, 2.0, 3.0, 4.0])
    assert spearman(a, a) == 1.0
    assert spearman(a, a[::-1]) == -1.0
    assert spearman(a, [1.0, 3.0, 2.0, 4.0]) == pytest.approx(0.8, abs=1e-15)


def test_spearman_matches_scipy():
    rng = np.random.default_rng(3)
    for _ in range(50):
        a, b = rng.normal(size=(2, int(rng.integers(2, 30))))
        assert spearman(a, b) == pytest.approx(spearmanr(a, b).statistic, abs=1e-12)


def test_spearman_errors():
    with pytest.raises(InvalidInputError):
        spearman([1.0, 1.0, 1.0], [1.0, 2.0, 3.0])
    with pytest.raises(InvalidInputError):
        spearman([1.0], [2.0])
    with pytest.raises(InvalidInputError):
        spearman([1.0, 2.0], [1.0, 2.0, 3.0])


# -- optimizer ------------------------------------------------------------------------

def test_zero_gradient_leaves_params():
    cfg = OptimizerConfig()
    st, x = optimizer_step(OptimizerState(), np.ones(3), np.ones(3), cfg)
    st, y = optimizer_step(st, x, np.zeros(3), cfg)
    # momentum carries the old velocity
    assert np.allclose(y, x - 10 * 0.5 * np.ones(3))
    st, z = optimizer_step(OptimizerState(), x, np.zeros(3), cfg)
    assert np.array_equal(z, x)
    assert np.array_equal(st.velocity, np.zeros(3))


def test_first_momentum_step():
    g = np.array([0.1, -0.2])
    _, x = optimizer_step(OptimizerState(), np.zeros(2), g, OptimizerConfig("sgd_momentum", 10, 0.5))
    assert np.array_equal(x, -10 * g)


def test_adam_trajectory_reference():
    # reference values produced by an independent Adam implementation
    c = np.array([2.0, 1.0])
    x = np.array([0.5, -1.0])
    st = OptimizerState()
    cfg = OptimizerConfig("adam", 0.1)
    for _ in range(3):
        st, x = optimizer_step(st, x, x - c, cfg)
    assert np.allclose(x, [0.7990971284546328, -0.7006233928121138], rtol=0, atol=1e-15)


def test_adam_quadratic_bowl_converges():
    c = np.array([1.5, -2.0, 0.3])
    x = np.zeros(3)
    st = OptimizerState()
    cfg = OptimizerConfig("adam", learning_rate=0.5, beta1=0.5)
    for _ in range(200):
        st, x = optimizer_step(st, x, x - c, cfg)
    assert np.max(np.abs(x - c)) <= 1e-6


def test_optimizer_rejects_nonfinite_and_bad_config():
    with pytest.raises(TrainingError):
        optimizer_step(OptimizerState(), np.zeros(2), np.array([np.nan, 0.0]), OptimizerConfig())
    with pytest.raises(ValueError):
        OptimizerConfig(momentum=1.0)
    with pytest.raises(ValueError):
        OptimizerConfig(kind="rmsprop")
    with pytest.raises(ValueError):
        OptimizerConfig(learning_rate=-1.0)


# -- sort-yourself --------------------------------------------------------------------

@pytest.mark.parametrize("op", ["softsort", "neuralsort"])
def test_sort_yourself_n100_sorts_every_row(op):
    rep = run_sort_yourself(BenchConfig(n=100, operator=op))
    assert rep.final_spearman == [1.0] * 20
    assert len(rep.epoch_seconds) == 99 and all(t >= 0 for t in rep.epoch_seconds)
    assert rep.loss_curve[-1] < rep.loss_curve[0]


def test_sort_yourself_zero_epochs_is_random():
    rep = run_sort_yourself(BenchConfig(n=100, epochs=0))
    assert abs(np.mean(rep.final_spearman)) <= 0.5
    assert rep.loss_curve == [] and rep.mean_epoch_seconds == 0.0


def test_sort_yourself_deterministic():
    cfg = BenchConfig(n=20, epochs=8, operator="neuralsort", seed=4)
    a, b = run_sort_yourself(cfg), run_sort_yourself(cfg)
    assert a.loss_curve == b.loss_curve and a.final_spearman == b.final_spearman


def test_sort_yourself_frozen_with_zero_lr():
    cfg = BenchConfig(n=10, epochs=3, optimizer=OptimizerConfig(learning_rate=0.0))
    rep = run_sort_yourself(cfg)
    start = harness._row_spearmans(harness._init_theta(cfg))
    assert rep.final_spearman == start


def test_reversed_init_is_anti_sorted():
    theta = harness._init_theta(BenchConfig(n=10, init="reversed"))
    assert all(r == -1.0 for r in harness._row_spearmans(theta))


def test_bench_config_defaults_and_validation():
    assert BenchConfig(operator="softsort").tau == 0.03
    assert BenchConfig(operator="neuralsort").tau == 100.0
    for kwargs in ({"n": 1}, {"operator": "x"}, {"init": "x"}, {"scaling": "x"}, {"tau": 0.0}):
        with pytest.raises(InvalidInputError):
            BenchConfig(**kwargs)


@pytest.mark.parametrize("scaling", harness.SCALINGS)
def test_minmax_backward_matches_finite_differences(scaling):
    rng = np.random.default_rng(5)
    row = rng.uniform(-1, 1, size=7)
    gx = rng.normal(size=7)
    x, backward = harness._minmax(row, scaling)
    assert x.min() >= 0 and x.max() <= 1 or scaling == "none"
    analytic = backward(gx)
    if scaling == "detached":
        # statistics held constant
        lo, r = row.min(), np.ptp(row)
        f = lambda v: gx @ ((v - lo) / r)
    else:
        f = lambda v: gx @ harness._minmax(v, scaling)[0]
    numeric = np.array([(f(row + e) - f(row - e)) / 2e-7 for e in np.eye(7) * 1e-7])
    assert np.allclose(analytic, numeric, atol=1e-7)


def test_minmax_constant_row():
    x, backward = harness._minmax(np.full(4, 0.3))
    assert x.tolist() == [0.5] * 4 and backward is None


def test_nonfinite_loss_raises_training_error():
    cfg = BenchConfig(n=5, epochs=2, optimizer=OptimizerConfig(learning_rate=1e308))
    with pytest.raises(TrainingError):
        run_sort_yourself(cfg)


# -- speed table -------------------------------------------------------------------

def test_speed_compare_schema(tmp_path):
    rows = run_speed_compare([10, 20], epochs=3, include_reversed=True)
    assert len(rows) == 8
    assert {r["operator"] for r in rows} == {"softsort", "neuralsort", "softsort_reversed",
                                             "neuralsort_reversed"}
    assert all(r["mean_epoch_seconds"] > 0 for r in rows)
    assert all(r["p"] == "" for r in rows if r["operator"].startswith("neuralsort"))
    path = tmp_path / "bench.csv"
    harness.write_bench_csv(rows, path)
    with open(path) as fh:
        reader = csv.DictReader(fh)
        assert reader.fieldnames == harness.BENCH_FIELDS
        assert len(list(reader)) == 8


def test_speed_compare_single_operator_and_validation():
    assert len(run_speed_compare([10, 12], operators=("softsort",), epochs=2)) == 2
    with pytest.raises(InvalidInputError):
        run_speed_compare([1])


def test_timings_grow_with_n():
    small, large = run_speed_compare([50, 400], operators=("softsort",), epochs=4)
    assert large["mean_epoch_seconds"] >= small["mean_epoch_seconds"] / 2


def test_curves_csv(tmp_path):
    rep = run_sort_yourself(BenchConfig(n=10, epochs=4))
    path = tmp_path / "curves.csv"
    harness.write_curves_csv(rep, path)
    rows = list(csv.reader(open(path)))
    assert rows[0] == ["epoch", "loss", "spearman_mean"]
    assert len(rows) == 5 and float(rows[1][1]) == rep.loss_curve[0]


# -- learn-to-sort ---------------------------------------------------------------

def test_scorer_backward_matches_finite_differences():
    rng = np.random.default_rng(6)
    scorer = harness._TanhScorer(4)
    theta = scorer.init(rng)
    x = rng.uniform(size=(3, 5))
    gs = rng.normal(size=(3, 5))
    _, act = scorer.forward(theta, x)
    analytic = scorer.backward(theta, x, act, gs)
    f = lambda t: float(np.sum(gs * scorer.forward(t, x)[0]))
    numeric = np.array([(f(theta + e) - f(theta - e)) / 2e-6 for e in np.eye(theta.size) * 1e-6])
    assert np.allclose(analytic, numeric, atol=1e-8)


@pytest.mark.parametrize("op", ["softsort", "neuralsort"])
def test_learn_to_sort_accuracy(op):
    rep = run_learn_to_sort(n=5, train_size=2000, epochs=50, operator=op, tau=1.0, seed=0)
    assert rep.exact_perm_acc >= 0.95
    assert rep.elementwise_acc >= rep.exact_perm_acc


def test_learn_to_sort_metric_dominance_when_untrained():
    rep = run_learn_to_sort(n=5, train_size=100, epochs=0, seed=1)
    assert rep.elementwise_acc >= rep.exact_perm_acc
    assert rep.exact_perm_acc < 0.5


def test_learn_to_sort_deterministic_and_json():
    a = run_learn_to_sort(n=4, train_size=200, epochs=3, seed=2)
    b = run_learn_to_sort(n=4, train_size=200, epochs=3, seed=2)
    assert a.to_dict() == b.to_dict() and a.loss_curve == b.loss_curve
    assert set(a.to_dict()) == {"n", "exact_perm_acc", "elementwise_acc", "seed", "config"}


def test_learn_to_sort_with_gumbel_samples():
    rep = run_learn_to_sort(n=4, train_size=400, epochs=10, seed=3, n_samples=3)
    assert all(math.isfinite(v) for v in rep.loss_curve)
    assert rep.exact_perm_acc >= 0.9


def test_learn_to_sort_validation():
    with pytest.raises(InvalidInputError):
        run_learn_to_sort(n=1)
    with pytest.raises(InvalidInputError):
        run_learn_to_sort(operator="bogus")
