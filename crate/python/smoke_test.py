"""Smoke test for the Python extension. Run with `pytest python/` or directly."""

import json
import math

import pytest

import chain_surgeon_py as cs


def test_chain_spec_and_exact_variance():
    spec = cs.ChainSpec(8, 1.0, 4.0)
    assert spec.n == 8 and spec.q is None
    var = cs.real_chain_variance(spec)
    g = cs.Graph.chain(spec)
    assert g.num_vertices() == 16
    assert math.isclose(g.real_variance(0), var, rel_tol=1e-10)


def test_validation_errors_are_value_errors():
    with pytest.raises(ValueError):
        cs.ChainSpec(4, 1.0, 0.5)
    with pytest.raises(ValueError):
        cs.run_pipeline("nope", cs.ChainSpec(4, 1.0, 4.0))


def test_discrete_gaussian():
    assert cs.dg_variance(1.0) <= 0.5
    assert math.isclose(cs.dg_variance(1.0), 0.49897913083282, rel_tol=1e-12)


def test_surgery_moves_and_text_round_trip():
    g = cs.Graph.random(5, seed=3)
    base = g.real_variance(1)
    u, v, _ = g.edges()[0]
    chain = cs.Graph.chain(cs.ChainSpec(4, 1.0, 3.0))
    assert chain.delete_edge(0, 1).real_variance(0) > chain.real_variance(0)
    merged = g.identify(1, 2)
    assert merged.num_vertices() == 4
    split, new = g.split_theta(u, v, 2.0)
    assert math.isclose(split.real_variance(1), base, rel_tol=1e-9)
    assert new not in (u, v)
    back = cs.Graph.from_text(g.to_text())
    assert back.edges() == g.edges()


def test_integer_variance_and_heat_bath():
    g = cs.Graph.random(4, seed=1)
    exact = g.integer_variance(1)
    value, se, method = g.mcmc_variance(1, seed=2, sweeps=20000)
    assert method == "mcmc"
    assert abs(value - exact) < 5 * se


def test_pipelines_and_sandwich():
    spec = cs.ChainSpec(16, 1.0, 3.0)
    lower, exact, upper = cs.sandwich(spec)
    assert lower < exact < upper
    graph, var, cert = cs.run_pipeline("upper-3", spec)
    assert math.isclose(var, upper, rel_tol=1e-12)
    assert json.loads(cert)["pipeline"] == "upper-3"
    assert graph.num_edges() >= 1


def test_qsos():
    draws = cs.sample_mixture(1.0, 1000, seed=4)
    assert len(draws) == 1000 and min(draws) > 0
    spec = cs.ChainSpec(1, 1.0, 3.0, q=1.0)
    exact, _, _ = cs.qsos_exact(spec)
    value, se, _ = cs.qsos_mcmc(spec, seed=5, sweeps=40000)
    assert abs(value - exact) < 5 * se
    lo, lo_se, _ = cs.annealed(cs.ChainSpec(2, 1.0, 3.0, q=1.0), draws=8, inner="real")
    assert lo > 0 and lo_se >= 0
    field = cs.conductance_field(cs.ChainSpec(2, 1.0, 3.0, q=1.0), draw=0)
    assert field.num_vertices() == 4


def test_derivative_identity():
    g = cs.Graph.random(3, seed=6)
    k, l, c = g.edges()[0]
    fd, identity, rel = cs.derivative_identity(g, k, l, 1.0)
    assert rel < 1e-4 and math.isclose(fd, identity, rel_tol=1e-4)


def test_fits_and_sweeps():
    ns = [16, 32, 64, 128]
    a, p = cs.fit_exponent(ns, [2.0 * n**0.7 for n in ns], "power")
    assert math.isclose(p, 0.7, rel_tol=1e-9) and math.isclose(a, 2.0, rel_tol=1e-9)
    assert json.loads(cs.regime(2.5)) == {"regime": "power", "exponent": 0.5}
    fit = json.loads(cs.sweep([64, 128, 256, 512], 4.0))
    assert abs(fit["fitted_params"]["p"] - 1.0) < 0.05


def test_selftest():
    checks = cs.selftest(1)
    assert len(checks) >= 9
    assert all(ok for _, ok, _ in checks), checks


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
