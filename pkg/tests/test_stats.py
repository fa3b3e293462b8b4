import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from isinglab.dynamics import SpinTrajectory, sample_snapshots, simulate_gillespie
from isinglab.errors import ParameterError
from isinglab.model import CouplingModel, SampleTable, exact_gibbs_moments
from isinglab.stats import (MomentSet, batch_standard_errors, estimate_dC0, flip_decompose,
                            pack_states, sample_moments, trajectory_moments, unpack_states)

from conftest import symmetric_model


def free(L):
    return CouplingModel(np.zeros(L), np.zeros((L, L)))


# --- sample moments ------------------------------------------------------------------

def test_identical_rows():
    mom = sample_moments(SampleTable(np.array([[1, -1, 1]] * 4)))
    assert np.allclose(mom.c0, 0.0)
    assert np.allclose(mom.m, [1, -1, 1])


def test_two_rows_hand():
    mom = sample_moments(SampleTable(np.array([[1, 1], [-1, -1]])))
    assert np.allclose(mom.m, 0.0)
    assert np.allclose(mom.c0, [[1, 1], [1, 1]])


def test_full_pseudocount():
    mom = sample_moments(SampleTable(np.array([[1, 1], [1, -1], [1, 1]])), pseudocount=1.0)
    assert np.allclose(mom.m, 0.0) and np.allclose(mom.c0, np.eye(2))


def test_sample_moments_errors():
    with pytest.raises(ParameterError):
        sample_moments(SampleTable(np.array([[1, 1]])))
    with pytest.raises(ParameterError):
        sample_moments(SampleTable(np.array([[1, 1], [1, 1]])), pseudocount=1.5)


def test_weighted_exact_table_matches_enumeration():
    from isinglab.model import gibbs_sample_table
    m = symmetric_model(4, 0.7, 1)
    mom = sample_moments(gibbs_sample_table(m))
    m_ex, c_ex, _ = exact_gibbs_moments(m)
    assert np.allclose(mom.m, m_ex, atol=1e-14) and np.allclose(mom.c0, c_ex, atol=1e-14)


def test_moments_json_roundtrip():
    mom = MomentSet(m=[0.1, 0.2], c0=np.eye(2), lags=[0.0, 0.5],
                    C_lags=np.stack([np.eye(2)] * 2), dC0=-np.eye(2))
    back = MomentSet.from_dict(mom.to_dict())
    assert np.array_equal(back.C_lags, mom.C_lags) and np.array_equal(back.dC0, mom.dC0)
    assert back.dm is None


# --- trajectory moments ---------------------------------------------------------------

@pytest.fixture(scope="module")
def free_replicas():
    lags = [0.5, 1.0]
    out = []
    for seed in range(20):
        traj = simulate_gillespie(free(3), 1.0, 1000.0, seed=100 + seed)
        out.append(trajectory_moments(traj, lags=lags))
    return out


def test_free_autocorrelation(free_replicas):
    # raw lagged products; subtracting m m^T adds an O(1/T) bias on the diagonal
    C = np.array([r.C_lags + np.outer(r.m, r.m)[None] for r in free_replicas])
    mean, se = C.mean(axis=0), C.std(axis=0, ddof=1) / np.sqrt(C.shape[0])
    lags = free_replicas[0].lags
    for k, tau in enumerate(lags):
        diag_err = np.abs(np.diag(mean[k]) - np.exp(-tau))
        assert np.all(diag_err < 3 * np.diag(se[k]) + 1e-12)
        off = ~np.eye(3, dtype=bool)
        assert np.all(np.abs(mean[k][off]) < 3 * se[k][off] + 1e-12)


def test_free_slope(free_replicas):
    D = np.array([np.diag(r.dC0) + np.diag(r.c0) for r in free_replicas])
    mean, se = D.mean(axis=0), D.std(axis=0, ddof=1) / np.sqrt(D.shape[0])
    assert np.all(np.abs(mean) < 3 * se)


def test_zero_lag_symmetric_and_bounded(free_replicas):
    for r in free_replicas:
        assert np.allclose(r.c0, r.c0.T)
        assert np.allclose(np.diag(r.c0), 1 - r.m**2, atol=1e-12)
        assert np.all(np.abs(r.C_lags) <= 1 + 1e-12)


def test_symmetric_c0_matches_exact():
    m = symmetric_model(5, 0.3, 31)
    traj = simulate_gillespie(m, 1.0, 2e4, seed=8)
    mom = trajectory_moments(traj, burn_in=10.0)
    _, se_c = batch_standard_errors(traj, burn_in=10.0)
    _, c_ex, _ = exact_gibbs_moments(m)
    off = ~np.eye(5, dtype=bool)
    assert np.all(np.abs(mom.c0 - c_ex)[off] < 3 * se_c[off])


def test_sample_and_trajectory_moments_agree():
    m = symmetric_model(4, 0.3, 5)
    traj = simulate_gillespie(m, 1.0, 2e4, seed=3)
    mom_t = trajectory_moments(traj, burn_in=10.0)
    tab = sample_snapshots(traj, 10.0, 5.0, 3000)
    mom_s = sample_moments(tab)
    se = np.sqrt((1 - mom_s.m**2) / tab.N)
    assert np.all(np.abs(mom_s.m - mom_t.m) < 3 * se)


def test_trajectory_too_short():
    traj = simulate_gillespie(free(2), 1.0, 5.0, seed=0)
    with pytest.raises(ParameterError):
        trajectory_moments(traj, lags=[10.0])


def test_linear_fit_and_two_point_exact_on_linear_data():
    lags = np.array([0.0, 0.1, 0.2, 0.3])
    A = np.array([[0.5, -0.2], [0.1, 0.9]])
    B = np.array([[-1.0, 0.3], [0.7, -2.0]])
    C = A[None] + lags[:, None, None] * B[None]
    assert np.allclose(estimate_dC0(lags, C, "linear-fit"), B, atol=1e-12)
    assert np.allclose(estimate_dC0(lags, C, "two-point"), B, atol=1e-12)
    assert np.allclose(estimate_dC0(lags, C, "linear-fit", fit_points=[0.0, 0.2, 0.3]), B, atol=1e-12)


def test_estimate_dC0_errors():
    with pytest.raises(ParameterError):
        estimate_dC0([0.0, 0.1], np.zeros((3, 2, 2)))
    with pytest.raises(ParameterError):
        estimate_dC0([0.0, 0.1], np.zeros((2, 2, 2)), fit_points=[0.0, 0.05])


def test_linear_fit_window_shrinks_error():
    traj = simulate_gillespie(free(2), 1.0, 1e5, seed=11)
    wide = trajectory_moments(traj, lags=np.linspace(0, 0.6, 4), derivative="linear-fit")
    narrow = trajectory_moments(traj, lags=np.linspace(0, 0.15, 4), derivative="linear-fit")
    err = lambda mom: np.max(np.abs(np.diag(mom.dC0) + 1.0))
    assert err(narrow) < err(wide)


# --- flip decomposition ------------------------------------------------------------------

def test_flip_decompose_empty():
    traj = SpinTrajectory(L=3, gamma=1.0, t_end=1.0, initial=[1, 1, -1], times=[], spins=[])
    g = flip_decompose(traj, 0.01)
    assert g.n_flip_records == 0
    assert g.n_noflip_records == 100 * 3


def test_flip_decompose_single_event():
    traj = SpinTrajectory(L=3, gamma=1.0, t_end=1.0, initial=[1, 1, -1], times=[0.3712], spins=[2])
    g = flip_decompose(traj, 0.01)
    cells, spins, before, after = g.flip_records()
    assert list(cells) == [37] and list(spins) == [2]
    assert before[0] == -1 and after[0] == 1


def test_flip_decompose_counts_events():
    traj = simulate_gillespie(symmetric_model(4, 0.5, 2), 1.0, 500.0, seed=1)
    g = flip_decompose(traj, 1e-3)
    assert g.n_flip_records == traj.n_events == g.n_events_raw


def test_flip_decompose_refines():
    traj = SpinTrajectory(L=1, gamma=1.0, t_end=1.0, initial=[1], times=[0.101, 0.102], spins=[0, 0])
    g = flip_decompose(traj, 0.01)
    assert g.refinements > 0 and g.n_flip_records == 2


def test_flip_decompose_too_coarse():
    traj = SpinTrajectory(L=1, gamma=1.0, t_end=1.0, initial=[1], times=[], spins=[])
    with pytest.raises(ParameterError):
        flip_decompose(traj, 0.5)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 40), st.integers(1, 30), st.integers(0, 2**31))
def test_pack_roundtrip(n, L, seed):
    s = np.where(np.random.default_rng(seed).random((n, L)) < 0.5, -1, 1).astype(np.int8)
    assert np.array_equal(unpack_states(pack_states(s), L), s)
