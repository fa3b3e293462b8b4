import warnings

import numpy as np
import pytest

from isinglab.dynamics import (SpinTrajectory, integrate_master_equation, rate, sample_snapshots,
                               simulate_discrete, simulate_gillespie)
from isinglab.errors import CapacityError, ParameterError
from isinglab.model import CouplingModel, gibbs_distribution, exact_gibbs_moments
from isinglab.stats import batch_standard_errors, trajectory_moments

from conftest import symmetric_model


def free(L, theta=0.0):
    return CouplingModel(np.full(L, float(theta)), np.zeros((L, L)))


# --- rate ---------------------------------------------------------------------

def test_rate_free_is_half_gamma():
    m = free(3)
    for cfg in ([1, 1, 1], [-1, 1, -1]):
        for i in range(3):
            assert rate(m, cfg, i, gamma=2.0) == pytest.approx(1.0, abs=1e-15)


def test_rate_saturation():
    up = CouplingModel(np.array([800.0]), np.zeros((1, 1)))
    down = CouplingModel(np.array([-800.0]), np.zeros((1, 1)))
    assert rate(up, [1], 0, 1.5) == 0.0
    assert rate(down, [1], 0, 1.5) == pytest.approx(1.5, abs=1e-15)


def test_rate_pair():
    m = CouplingModel(np.zeros(2), np.array([[0.0, 1.0], [1.0, 0.0]]))
    expected = 0.5 * (1 - np.tanh(1.0))
    assert rate(m, [1, 1], 0) == pytest.approx(expected, rel=1e-14)
    assert rate(m, [1, 1], 1) == pytest.approx(expected, rel=1e-14)


def test_rate_bad_index():
    with pytest.raises(ParameterError):
        rate(free(2), [1, 1], 2)


# --- gillespie ---------------------------------------------------------------

def test_gillespie_free_flip_count():
    L, t, g = 5, 1000.0, 1.0
    traj = simulate_gillespie(free(L), g, t, seed=3)
    mean = g * L * t / 2
    assert abs(traj.n_events - mean) < 4 * np.sqrt(mean)


def test_gillespie_frozen():
    traj = simulate_gillespie(free(4, 10.0), 1.0, 100.0, initial=np.ones(4), seed=1)
    # expected number of flips is 4*100/(1+e^20) ~ 8e-7
    assert traj.n_events == 0


def test_gillespie_three_spin_cycle_direction():
    J = np.zeros((3, 3))
    J[0, 1] = J[1, 2] = J[2, 0] = 2.0
    traj = simulate_gillespie(CouplingModel(np.zeros(3), J), 1.0, 20000.0, seed=5)
    step = (traj.spins[1:] - traj.spins[:-1]) % 3
    # spin i follows spin i+1, so the flip propagates to lower indices
    forward, backward = np.sum(step == 2), np.sum(step == 1)
    # binomial z-score of the excess of forward over backward shifts
    assert (forward - backward) / np.sqrt(forward + backward) > 5


def test_gillespie_reproducible_and_valid():
    m = symmetric_model(6, 0.5, 2)
    a = simulate_gillespie(m, 1.0, 50.0, seed=9)
    b = simulate_gillespie(m, 1.0, 50.0, seed=9)
    assert np.array_equal(a.times, b.times) and np.array_equal(a.spins, b.spins)
    assert np.all(np.diff(a.times) > 0) and a.times[-1] <= 50.0


def test_gillespie_incremental_field_matches_recomputation():
    """Replays the path and checks every waiting-time-weighted rate against direct evaluation."""
    m = symmetric_model(5, 1.0, 4)
    traj = simulate_gillespie(m, 1.0, 200.0, seed=2)
    s = traj.initial.astype(float).copy()
    # probability that the flipped spin is i equals w_i/w_tot; average over events
    log_p = 0.0
    for i in traj.spins[:2000]:
        h = m.theta + m.J @ s
        w = 1.0 / (1.0 + np.exp(2 * s * h))
        log_p += np.log(w[i] / w.sum())
        s[i] = -s[i]
    # under the correct kinetics the mean log-probability of the chosen spin
    # is far above the uniform-choice value log(1/5)
    assert log_p / 2000 > np.log(1 / 5)


def test_gillespie_errors():
    with pytest.raises(ParameterError):
        simulate_gillespie(free(2), 1.0, 0.0)
    with pytest.raises(ParameterError):
        simulate_gillespie(free(2), 1.0, 1.0, initial=[1, 0])


def test_gillespie_stationary_matches_exact():
    m = symmetric_model(5, 0.3, 21)
    traj = simulate_gillespie(m, 1.0, 2e4, seed=4)
    mom = trajectory_moments(traj, burn_in=10.0)
    se_m, se_c = batch_standard_errors(traj, burn_in=10.0)
    m_ex, c_ex, _ = exact_gibbs_moments(m)
    assert np.all(np.abs(mom.m - m_ex) < 3 * se_m + 1e-12)
    off = ~np.eye(5, dtype=bool)
    assert np.all(np.abs(mom.c0 - c_ex)[off] < 3 * se_c[off] + 1e-12)


# --- discrete schemes ----------------------------------------------------------

@pytest.mark.parametrize("scheme,dt", [("random-pick", 0.1), ("per-spin-bernoulli", 0.005)])
def test_discrete_free_magnetization(scheme, dt):
    traj = simulate_discrete(free(3), 1.0, dt, int(4000 / dt), seed=1, scheme=scheme)
    mom = trajectory_moments(traj, burn_in=10.0)
    se_m, _ = batch_standard_errors(traj, burn_in=10.0)
    assert np.all(np.abs(mom.m) < 3 * se_m)


@pytest.mark.parametrize("scheme,dt", [("random-pick", 0.05), ("per-spin-bernoulli", 0.005)])
def test_discrete_symmetric_matches_exact(scheme, dt):
    m = symmetric_model(5, 0.3, 8)
    traj = simulate_discrete(m, 1.0, dt, int(1e4 / dt), seed=6, scheme=scheme)
    mom = trajectory_moments(traj, burn_in=10.0)
    se_m, se_c = batch_standard_errors(traj, burn_in=10.0)
    m_ex, c_ex, _ = exact_gibbs_moments(m)
    assert np.all(np.abs(mom.m - m_ex) < 3 * se_m)
    off = ~np.eye(5, dtype=bool)
    assert np.all(np.abs(mom.c0 - c_ex)[off] < 3 * se_c[off])


def test_random_pick_flip_rate():
    h = 0.4
    m = free(1, h)
    dt = 0.5
    traj = simulate_discrete(m, 1.0, dt, 400_000, seed=3, scheme="random-pick")
    times = np.concatenate([[0.0], traj.times, [traj.t_end]])
    state = traj.initial[0] * (-1) ** np.arange(traj.n_events + 1)
    dur = np.diff(times)
    for s in (1, -1):
        t_in = dur[state == s].sum()
        flips = np.sum(state[:-1] == s) if traj.n_events else 0
        expected = 1.0 / (1.0 + np.exp(2 * h * s))
        assert abs(flips / t_in - expected) < 3 * np.sqrt(expected / t_in)


def test_discrete_errors_and_warning():
    with pytest.raises(ParameterError):
        simulate_discrete(free(2), 1.0, 0.2, 10, scheme="per-spin-bernoulli")
    with pytest.raises(ParameterError):
        simulate_discrete(free(4), 1.0, 0.5, 10, scheme="random-pick")
    with pytest.warns(UserWarning):
        simulate_discrete(free(2), 1.0, 0.05, 10, scheme="per-spin-bernoulli")
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        simulate_discrete(free(2), 1.0, 0.005, 10, scheme="per-spin-bernoulli")


# --- master equation ---------------------------------------------------------------

def test_master_stationary_at_gibbs():
    m = symmetric_model(4, 0.8, 3)
    _, p, _ = gibbs_distribution(m)
    out = integrate_master_equation(m, 1.0, 5.0, p)
    assert np.max(np.abs(out.p - p)) < 1e-8
    assert abs(out.p.sum() - 1) < 1e-12 and np.all(out.p >= 0)


@pytest.mark.parametrize("t", [0.3, 1.0, 2.5])
def test_master_free_relaxation(t):
    p0 = np.zeros(8)
    p0[7] = 1.0  # all spins +1
    out = integrate_master_equation(free(3), 1.0, t, p0)
    up = (out.magnetizations() + 1) / 2
    assert np.allclose(up, (1 + np.exp(-t)) / 2, atol=1e-9)


def test_master_single_spin_stationary():
    out = integrate_master_equation(free(1, 0.7), 1.0, 40.0, np.array([1.0, 0.0]))
    assert out.magnetizations()[0] == pytest.approx(np.tanh(0.7), abs=1e-9)


def test_master_errors():
    with pytest.raises(CapacityError):
        integrate_master_equation(free(13), 1.0, 1.0, np.full(2**13, 2.0**-13))
    with pytest.raises(ParameterError):
        integrate_master_equation(free(2), 1.0, 1.0, np.array([0.5, 0.5, 0.5, 0.5]))


# --- snapshots -------------------------------------------------------------------

def test_snapshots_shape_and_errors():
    traj = simulate_gillespie(symmetric_model(4, 0.3, 1), 1.0, 100.0, seed=0)
    tab = sample_snapshots(traj, 10.0, 1.0, 50)
    assert tab.states.shape == (50, 4) and set(np.unique(tab.states)) <= {-1, 1}
    with pytest.raises(ParameterError):
        sample_snapshots(traj, 10.0, 0.0, 5)
    with pytest.raises(ParameterError):
        sample_snapshots(traj, 10.0, 1.0, 200)


def test_snapshots_frozen():
    traj = SpinTrajectory(L=3, gamma=1.0, t_end=10.0, initial=[1, -1, 1],
                          times=[0.5], spins=[1])
    tab = sample_snapshots(traj, 1.0, 0.5, 10)
    assert np.all(tab.states == tab.states[0])
    assert list(tab.states[0]) == [1, 1, 1]
