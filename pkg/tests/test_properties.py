import numpy as np
import pytest

from softsort import cli, core, properties
from softsort.core import InvalidInputError

CHEAP_SUITES = [s for s in properties.SUITES if s != "training"]


@pytest.mark.parametrize("suite", CHEAP_SUITES)
def test_suite_passes_on_healthy_build(suite):
    results = properties.run_properties(suite, seed=0)
    assert results and all(r.suite == suite for r in results)
    failed = [(r.name, r.detail) for r in results if not r.passed]
    assert not failed


def test_every_suite_has_properties():
    names = [p.name for p in properties.PROPERTIES]
    assert len(names) == len(set(names))
    assert {"urs", "limit", "equivariance", "densities", "gradients", "dknn"} <= set(properties.SUITES)


def test_unknown_suite():
    with pytest.raises(InvalidInputError):
        properties.run_properties("nope")


def _broken_soft_sort(real):
    def broken(s, tau=1.0, d=core.L1):
        return real(s, tau, d) * 1.5
    return broken


def test_fault_injection_names_row_affinity(monkeypatch):
    monkeypatch.setattr(core, "soft_sort", _broken_soft_sort(core.soft_sort))
    results = {r.name: r for r in properties.run_properties("urs", seed=0)}
    assert not results["row affinity"].passed
    assert results["non-negativity"].passed


def test_fault_injection_through_cli(monkeypatch, capsys):
    monkeypatch.setattr(core, "soft_sort", _broken_soft_sort(core.soft_sort))
    assert cli.main(["properties", "--suite", "urs"]) == 1
    out = capsys.readouterr().out
    assert "failed: row affinity" in out


def test_crashing_check_is_a_failure(monkeypatch):
    def boom(*args, **kwargs):
        raise RuntimeError("broken operator")
    monkeypatch.setattr(core, "neural_sort", boom)
    results = properties.run_properties("equivariance", seed=0)
    assert not results[0].passed and "broken operator" in results[0].detail


def test_matching_networks_oracle_is_exact_softmax():
    rng = np.random.default_rng(0)
    from softsort import dknn
    ep = dknn.Episode(rng.normal(size=3), 0, rng.normal(size=(5, 3)), np.array([0, 1, 0, 2, 0]))
    phi = dknn.identity_embedding(unit_norm=True)
    q, c = phi(ep.query), phi(ep.candidates)
    w = np.exp(c @ q)
    expected = w[ep.labels == 0].sum() / w.sum()
    assert abs(properties.matching_networks_prob(ep, phi) - expected) <= 1e-15
