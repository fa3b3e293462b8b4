"""Numba kernels for the inner loops over spin-flip events.

Random numbers are generated by the callers (numpy ``Generator``) and passed in
as arrays so that results depend only on the seed, not on numba's RNG state.
"""
import numpy as np
from numba import njit

_REFRESH = 1 << 16


@njit(cache=True)
def _rate(gamma, s, h):
    # gamma / (1 + exp(2 s h)) == gamma/2 (1 - s tanh h), stable for large |h|
    x = 2.0 * s * h
    if x > 0:
        e = np.exp(-x)
        return gamma * e / (1.0 + e)
    return gamma / (1.0 + np.exp(x))


@njit(cache=True)
def gillespie_chunk(J, theta, gamma, s, H, t, t_end, u, times_out, spins_out, counter):
    """Advance an exact event-driven path.

    ``s`` and ``H`` are updated in place. Returns ``(n_events, n_uniforms_used,
    t, status)`` with status 0 = reached ``t_end``, 1 = uniforms exhausted,
    2 = output buffer full.
    """
    L = s.shape[0]
    rates = np.empty(L)
    n = 0
    k = 0
    nu = u.shape[0]
    cap = times_out.shape[0]
    while True:
        if n >= cap:
            return n, k, t, 2
        if k + 2 > nu:
            return n, k, t, 1
        total = 0.0
        for i in range(L):
            rates[i] = _rate(gamma, s[i], H[i])
            total += rates[i]
        u1 = u[k]
        u2 = u[k + 1]
        k += 2
        if total <= 0.0:
            return n, k, t_end, 0
        t_new = t - np.log(1.0 - u1) / total
        if t_new > t_end:
            return n, k, t_end, 0
        t = t_new
        target = u2 * total
        acc = 0.0
        j = L - 1
        for i in range(L):
            acc += rates[i]
            if target < acc:
                j = i
                break
        s[j] = -s[j]
        d = 2.0 * s[j]
        for i in range(L):
            H[i] += J[i, j] * d
        times_out[n] = t
        spins_out[n] = j
        n += 1
        counter[0] += 1
        if counter[0] % _REFRESH == 0:
            for i in range(L):
                h = theta[i]
                for m in range(L):
                    h += J[i, m] * s[m]
                H[i] = h


@njit(cache=True)
def random_pick_chunk(J, theta, gamma, dt, s, H, step0, n_steps, u, times_out, spins_out):
    """Random-pick heat-bath updates; one candidate spin per step.

    Each step updates a uniformly chosen spin with probability ``gamma * L * dt``
    (clipped at 1). Returns the number of events written.
    """
    L = s.shape[0]
    p_upd = gamma * L * dt
    n = 0
    for step in range(n_steps):
        u1 = u[3 * step]
        if p_upd < 1.0 and u1 >= p_upd:
            continue
        i = int(u[3 * step + 1] * L)
        if i >= L:
            i = L - 1
        p_up = 1.0 / (1.0 + np.exp(-2.0 * H[i]))
        new = 1 if u[3 * step + 2] < p_up else -1
        if new != s[i]:
            s[i] = new
            d = 2.0 * new
            for m in range(L):
                H[m] += J[m, i] * d
            times_out[n] = (step0 + step + 1) * dt
            spins_out[n] = i
            n += 1
    return n


@njit(cache=True)
def bernoulli_chunk(J, theta, gamma, dt, s, H, step0, n_steps, u, times_out, spins_out):
    """Per-spin Bernoulli flips with probability ``omega_i * dt`` from the state at step start."""
    L = s.shape[0]
    n = 0
    flip = np.zeros(L, dtype=np.bool_)
    for step in range(n_steps):
        any_flip = False
        for i in range(L):
            flip[i] = u[step * L + i] < _rate(gamma, s[i], H[i]) * dt
            any_flip = any_flip or flip[i]
        if not any_flip:
            continue
        for i in range(L):
            if flip[i]:
                s[i] = -s[i]
                d = 2.0 * s[i]
                for m in range(L):
                    H[m] += J[m, i] * d
                times_out[n] = (step0 + step + 1) * dt
                spins_out[n] = i
                n += 1
    return n


@njit(cache=True)
def lagged_products(s0, times, spins, t0, t1, tau):
    """``P[i, j] = integral over [t0, t1 - tau] of s_i(t + tau) s_j(t) dt``.

    ``s0`` is the state at ``t0``; ``times``/``spins`` are the events in
    ``(t0, t1]`` in time order. Exact for piecewise-constant paths.
    """
    L = s0.shape[0]
    n = times.shape[0]
    a = s0.astype(np.float64)
    b = s0.astype(np.float64)
    pa = 0
    while pa < n and times[pa] <= t0 + tau:
        a[spins[pa]] = -a[spins[pa]]
        pa += 1
    pb = 0
    P = np.zeros((L, L))
    last = np.full((L, L), t0)
    t_stop = t1 - tau
    while True:
        ta = times[pa] - tau if pa < n else np.inf
        tb = times[pb] if pb < n else np.inf
        if ta <= tb:
            t = ta
            if t > t_stop:
                break
            k = spins[pa]
            for j in range(L):
                P[k, j] += a[k] * b[j] * (t - last[k, j])
                last[k, j] = t
            a[k] = -a[k]
            pa += 1
        else:
            t = tb
            if t > t_stop:
                break
            k = spins[pb]
            for i in range(L):
                P[i, k] += a[i] * b[k] * (t - last[i, k])
                last[i, k] = t
            b[k] = -b[k]
            pb += 1
    for i in range(L):
        for j in range(L):
            P[i, j] += a[i] * b[j] * (t_stop - last[i, j])
    return P


@njit(cache=True)
def time_integrals(s0, times, spins, t0, t1):
    """Integrals of ``s_i`` over ``[t0, t1]`` (for the means)."""
    L = s0.shape[0]
    s = s0.astype(np.float64)
    acc = np.zeros(L)
    last = np.full(L, t0)
    for e in range(times.shape[0]):
        k = spins[e]
        acc[k] += s[k] * (times[e] - last[k])
        last[k] = times[e]
        s[k] = -s[k]
    for i in range(L):
        acc[i] += s[i] * (t1 - last[i])
    return acc


@njit(cache=True)
def flip_jumps(s0, times, spins):
    """Sum over flips of spin i of ``(s_i(after) - s_i(before)) * s_j(before)``.

    Column ``L`` holds the jump sum against the constant spin ``s_0 = 1``.
    """
    L = s0.shape[0]
    s = s0.astype(np.float64)
    D = np.zeros((L, L + 1))
    for e in range(times.shape[0]):
        k = spins[e]
        jump = -2.0 * s[k]
        for j in range(L):
            D[k, j] += jump * s[j]
        D[k, L] += jump
        s[k] = -s[k]
    return D


@njit(cache=True)
def path_segments(s0, spins, nbytes):
    """Packed configurations of the ``n + 1`` constant segments of a path."""
    L = s0.shape[0]
    n = spins.shape[0]
    out = np.zeros((n + 1, nbytes), dtype=np.uint8)
    cur = np.zeros(nbytes, dtype=np.uint8)
    for i in range(L):
        if s0[i] > 0:
            cur[i >> 3] |= np.uint8(1 << (i & 7))
    out[0, :] = cur
    for e in range(n):
        k = spins[e]
        cur[k >> 3] ^= np.uint8(1 << (k & 7))
        out[e + 1, :] = cur
    return out


@njit(cache=True)
def grid_runs(s0, spins, cells, K, nbytes):
    """Runs of identical grid-point states on the grid ``0..K``.

    ``cells[e]`` is the grid cell (between points c and c+1) holding event ``e``;
    events must satisfy ``cells < K``. Returns packed run states and the
    number of grid points in each run.
    """
    L = s0.shape[0]
    n = spins.shape[0]
    out = np.zeros((n + 1, nbytes), dtype=np.uint8)
    counts = np.zeros(n + 1, dtype=np.int64)
    cur = np.zeros(nbytes, dtype=np.uint8)
    for i in range(L):
        if s0[i] > 0:
            cur[i >> 3] |= np.uint8(1 << (i & 7))
    r = 0
    prev = 0
    e = 0
    while e < n:
        c = cells[e]
        out[r, :] = cur
        counts[r] = c - prev + 1
        r += 1
        while e < n and cells[e] == c:
            k = spins[e]
            cur[k >> 3] ^= np.uint8(1 << (k & 7))
            e += 1
        prev = c + 1
    out[r, :] = cur
    counts[r] = K - prev + 1
    r += 1
    return out[:r], counts[:r]
