import numpy as np
import pytest

from isinglab.equilibrium import (InferenceResult, infer_bm, infer_nmf, infer_plm, infer_tap,
                                  plm_objective)
from isinglab.errors import NumericalError, ParameterError
from isinglab.model import CouplingModel, SampleTable, exact_gibbs_moments, gibbs_sample_table
from isinglab.stats import MomentSet, sample_moments

from conftest import symmetric_model


def exact_moments(model):
    m, c, _ = exact_gibbs_moments(model)
    return MomentSet(m=m, c0=c)


def test_nmf_identity():
    res = infer_nmf(MomentSet(m=np.zeros(3), c0=np.eye(3)))
    assert np.all(res.J_star == 0) and np.all(res.theta_star == 0)


def test_nmf_two_spin_bias():
    model = CouplingModel(np.zeros(2), np.array([[0.0, 0.2], [0.2, 0.0]]))
    res = infer_nmf(exact_moments(model))
    c = np.tanh(0.2)
    assert res.J_star[0, 1] == pytest.approx(c / (1 - c**2), rel=1e-12)
    assert abs(res.J_star[0, 1] - 0.2) > 1e-3


def test_nmf_errors():
    with pytest.raises(NumericalError) as exc:
        infer_nmf(MomentSet(m=np.zeros(2), c0=np.ones((2, 2))))
    assert "condition_number" in exc.value.diagnostics
    with pytest.raises(NumericalError):
        infer_nmf(MomentSet(m=np.array([1.0, 0.0]), c0=np.eye(2)))


def test_tap_equals_nmf_at_zero_field():
    model = symmetric_model(5, 0.5, 3, theta_range=0.0)
    mom = exact_moments(model)
    mom.m[:] = 0.0
    assert np.array_equal(infer_tap(mom).J_star, infer_nmf(mom).J_star)


def test_tap_identity_with_field():
    res = infer_tap(MomentSet(m=np.array([0.3, -0.5, 0.1]), c0=np.eye(3)))
    assert np.all(res.J_star == 0)


def test_tap_quadratic_residual():
    model = symmetric_model(6, 0.4, 7, theta_range=0.8)
    mom = exact_moments(model)
    res = infer_tap(mom)
    rhs = -np.linalg.inv(mom.c0)
    J = res.J_star
    r = J + 2 * np.outer(mom.m, mom.m) * J**2 - rhs
    off = ~np.eye(6, dtype=bool)
    assert np.max(np.abs(r[off])) < 1e-12
    assert res.diagnostics["fallback_entries"] == []


def test_plm_fair_coins(rng):
    N = 20_000
    tab = SampleTable(np.where(rng.random((N, 4)) < 0.5, -1, 1))
    res = infer_plm(tab, lam=0.0)
    assert np.max(np.abs(res.J_star)) < 5 / np.sqrt(N)
    assert np.max(np.abs(res.theta_star)) < 5 / np.sqrt(N)


def test_plm_consistency_exact_sample():
    model = symmetric_model(5, 0.3, 13)
    res = infer_plm(gibbs_sample_table(model), lam=0.0)
    assert np.max(np.abs(res.J_star - model.J)) <= 1e-4
    assert np.max(np.abs(res.theta_star - model.theta)) <= 1e-4
    assert res.diagnostics["converged"]


def test_plm_strong_regularizer():
    res = infer_plm(gibbs_sample_table(symmetric_model(4, 1.0, 2)), lam=1e6)
    assert np.max(np.abs(res.J_star)) < 1e-6 and np.max(np.abs(res.theta_star)) < 1e-6


def test_plm_gradient_finite_differences(rng):
    states = np.where(rng.random((100, 5)) < 0.5, -1.0, 1.0)
    w = np.full(100, 0.01)
    x = rng.normal(0, 0.5, 6)
    x[1 + 2] = 0.0
    _, g = plm_objective(x, 2, states, w, 0.1)
    h = 1e-6
    fd = np.zeros_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        fd[k] = (plm_objective(x + e, 2, states, w, 0.1)[0]
                 - plm_objective(x - e, 2, states, w, 0.1)[0]) / (2 * h)
    fd[1 + 2] = 0.0
    assert np.linalg.norm(g - fd) / np.linalg.norm(fd) < 1e-6


def test_plm_bad_lambda():
    with pytest.raises(ParameterError):
        infer_plm(SampleTable(np.array([[1, -1], [1, 1]])), lam=-1.0)


def test_bm_fixed_point():
    model = symmetric_model(4, 0.5, 9)
    res = infer_bm(exact_moments(model), theta0=model.theta, J0=model.J)
    assert res.diagnostics["sweeps"] == 1
    assert np.array_equal(res.J_star, model.J)


def test_bm_recovers_truth():
    model = symmetric_model(5, 0.3, 4)
    res = infer_bm(exact_moments(model), tol=1e-8)
    assert np.max(np.abs(res.J_star - model.J)) < 1e-6
    assert np.max(np.abs(res.theta_star - model.theta)) < 1e-6


def test_bm_agrees_with_plm():
    model = symmetric_model(5, 0.3, 6)
    bm = infer_bm(exact_moments(model))
    plm = infer_plm(gibbs_sample_table(model), lam=0.0)
    assert np.max(np.abs(bm.J_star - plm.J_star)) <= 1e-3


def test_bm_divergence():
    model = symmetric_model(4, 1.0, 1)
    with pytest.raises(NumericalError):
        infer_bm(exact_moments(model), eta=50.0, max_sweeps=2000)


def test_bm_table_input_and_capacity():
    tab = SampleTable(np.array([[1, -1], [1, 1], [-1, -1], [1, 1], [-1, 1]]))
    assert infer_bm(tab).diagnostics["converged"]
    with pytest.raises(ParameterError):
        infer_bm(MomentSet(m=np.zeros(17), c0=np.eye(17)))


def test_nmf_fixed_point_of_own_output():
    """The nMF self-consistency m = tanh(theta + J m) holds at the nMF solution."""
    mom = exact_moments(symmetric_model(5, 0.4, 8))
    res = infer_nmf(mom)
    assert np.allclose(np.tanh(res.theta_star + res.J_star @ mom.m), mom.m, atol=1e-12)


@pytest.mark.parametrize("method", ["nmf", "tap", "plm", "bm"])
def test_symmetric_zero_diagonal(method):
    model = symmetric_model(5, 0.4, 12)
    mom = exact_moments(model)
    res = {"nmf": lambda: infer_nmf(mom), "tap": lambda: infer_tap(mom),
           "plm": lambda: infer_plm(gibbs_sample_table(model)),
           "bm": lambda: infer_bm(mom)}[method]()
    assert np.array_equal(res.J_star, res.J_star.T)
    assert np.all(np.diag(res.J_star) == 0)
    assert res.diagnostics


def test_result_roundtrip_and_validation():
    res = infer_nmf(exact_moments(symmetric_model(3, 0.4, 1)))
    back = InferenceResult.from_dict(res.to_dict())
    assert np.array_equal(back.J_star, res.J_star) and back.method == "nMF"
    with pytest.raises(ParameterError):
        InferenceResult(np.zeros(2), np.zeros((2, 2)), "magic")
    with pytest.raises(NumericalError):
        InferenceResult(np.zeros(2), np.array([[0, np.nan], [0, 0]]), "nMF")


def test_pseudocount_rescues_frozen_spin():
    tab = SampleTable(np.array([[1, 1], [1, -1], [1, 1], [1, -1]]))
    with pytest.raises(NumericalError):
        infer_nmf(sample_moments(tab))
    res = infer_nmf(sample_moments(tab, pseudocount=0.1))
    assert np.all(np.isfinite(res.theta_star))
