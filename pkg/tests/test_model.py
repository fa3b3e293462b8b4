import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from isinglab.errors import CapacityError, DomainError, ParameterError
from isinglab.model import (CouplingModel, SKParams, SampleTable, all_states, exact_gibbs_moments,
                            generate_sk, gibbs_distribution, split_symmetry)

from conftest import symmetric_model


def test_sk_symmetric_variance():
    m = generate_sk(SKParams(L=20, g=0.3, k=0, seed=1))
    assert np.array_equal(m.J, m.J.T)
    off = m.J[~np.eye(20, dtype=bool)]
    assert abs(off.var() - 0.09 / 20) < 4 * 0.09 / 20 * np.sqrt(2 / 190)
    assert np.all(np.diag(m.J) == 0)


def test_sk_k0_antisymmetric_part_zero():
    _, anti = split_symmetry(generate_sk(SKParams(L=7, g=1.3, k=0, seed=3)))
    assert np.all(anti == 0)


def test_sk_k1_pairs_decorrelate():
    J = generate_sk(SKParams(L=500, g=0.3, k=1, seed=7)).J
    iu = np.triu_indices(500, 1)
    assert abs(np.corrcoef(J[iu], J.T[iu])[0, 1]) < 0.1


def test_sk_variance_independent_of_k():
    J = generate_sk(SKParams(L=400, g=0.5, k=2.0, seed=2)).J
    off = J[~np.eye(400, dtype=bool)]
    n = 400 * 399 / 2  # independent pairs
    assert abs(off.var() - 0.25 / 400) < 3 * 0.25 / 400 * np.sqrt(2 / n) * 1.5


def test_sk_reproducible():
    a = generate_sk(SKParams(L=10, g=0.3, k=0.5, seed=9))
    b = generate_sk(SKParams(L=10, g=0.3, k=0.5, seed=9))
    assert np.array_equal(a.J, b.J)


@pytest.mark.parametrize("kw", [dict(L=1, g=0.3), dict(L=5, g=0.0), dict(L=5, g=-1.0),
                                dict(L=5, g=0.3, k=-1)])
def test_sk_bad_params(kw):
    with pytest.raises(ParameterError):
        generate_sk(SKParams(**kw))


def test_split_examples():
    J = np.array([[0.0, 1.0], [-1.0, 0.0]])
    sym, anti = split_symmetry(CouplingModel(np.zeros(2), J))
    assert np.all(sym == 0) and np.array_equal(anti, J)
    m = generate_sk(SKParams(L=9, g=1.0, k=0.7, seed=4))
    sym, anti = split_symmetry(m)
    assert np.max(np.abs(sym + anti - m.J)) < 1e-12


def test_model_validation():
    with pytest.raises(ParameterError):
        CouplingModel(np.zeros(2), np.eye(2))
    CouplingModel(np.zeros(2), np.eye(2), self_allowed=True)
    with pytest.raises(ParameterError):
        CouplingModel(np.zeros(2), np.array([[0, np.inf], [0, 0]]))
    with pytest.raises(ParameterError):
        CouplingModel(np.zeros(3), np.zeros((2, 2)))


def test_model_json_roundtrip():
    m = generate_sk(SKParams(L=6, g=0.4, k=1, seed=5))
    d = m.to_dict()
    assert set(d) >= {"L", "theta", "J", "self_allowed", "meta"}
    m2 = CouplingModel.from_dict(d)
    assert np.array_equal(m.J, m2.J) and np.array_equal(m.theta, m2.theta)


def test_exact_free_spins():
    m, c, logZ = exact_gibbs_moments(CouplingModel(np.zeros(3), np.zeros((3, 3))))
    assert np.allclose(m, 0) and np.allclose(c, np.eye(3))
    assert logZ == pytest.approx(3 * np.log(2), abs=1e-14)


def test_exact_single_spin():
    m, c, logZ = exact_gibbs_moments(CouplingModel(np.array([0.7]), np.zeros((1, 1))))
    assert m[0] == pytest.approx(np.tanh(0.7), abs=1e-14)
    assert logZ == pytest.approx(np.log(2 * np.cosh(0.7)), abs=1e-14)


def test_exact_pair():
    J = np.array([[0.0, 0.5], [0.5, 0.0]])
    m, c, _ = exact_gibbs_moments(CouplingModel(np.zeros(2), J))
    assert c[0, 1] + m[0] * m[1] == pytest.approx(np.tanh(0.5), abs=1e-14)


def test_exact_errors():
    with pytest.raises(CapacityError):
        exact_gibbs_moments(CouplingModel(np.zeros(17), np.zeros((17, 17))))
    with pytest.raises(DomainError):
        exact_gibbs_moments(generate_sk(SKParams(L=4, g=0.3, k=1, seed=0)))


def test_exact_invariants():
    model = symmetric_model(6, 0.8, 11)
    m, c, _ = exact_gibbs_moments(model)
    assert np.allclose(c, c.T)
    assert np.allclose(np.diag(c), 1 - m**2, atol=1e-13)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000))
def test_logz_permutation_invariant(seed):
    model = symmetric_model(5, 1.0, seed)
    perm = np.random.default_rng(seed).permutation(5)
    pm = CouplingModel(model.theta[perm], model.J[np.ix_(perm, perm)])
    assert exact_gibbs_moments(pm)[2] == pytest.approx(exact_gibbs_moments(model)[2], abs=1e-12)


def test_all_states_encoding():
    s = all_states(3)
    assert s.shape == (8, 3)
    assert list(s[5]) == [1, -1, 1]
    _, p, _ = gibbs_distribution(CouplingModel(np.zeros(3), np.zeros((3, 3))))
    assert np.allclose(p, 1 / 8)


def test_sample_table_validation():
    with pytest.raises(ParameterError):
        SampleTable(np.array([[0, 1]]))
    t = SampleTable(np.array([[1, -1], [1, 1]]), weights=np.array([1.0, 3.0]))
    assert np.allclose(t.normalized_weights(), [0.25, 0.75])
