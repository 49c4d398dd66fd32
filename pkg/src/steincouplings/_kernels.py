"""Hot numeric kernels, numba-compiled when available.

Every kernel has a pure NumPy/Python fallback.  Setting the environment
variable ``STEINCOUPLINGS_DISABLE_NUMBA=1`` (before import) forces the
fallback path.  All kernels consume pre-drawn uniforms instead of owning an
RNG, so the accelerated and fallback paths produce bit-identical output;
``benchmarks/bench_kernels.py`` compares their speed.
"""

from __future__ import annotations

import math
import os

import numpy as np

_DISABLE = os.environ.get("STEINCOUPLINGS_DISABLE_NUMBA", "") not in ("", "0")

try:
    if _DISABLE:
        raise ImportError
    from numba import njit

    NUMBA_ENABLED = True
except ImportError:
    NUMBA_ENABLED = False

    def njit(*args, **kwargs):  # type: ignore[misc]
        if args and callable(args[0]):
            return args[0]

        def deco(fn):
            return fn

        return deco


@njit(cache=True)
def union_find_labels(n_vertices, edges_u, edges_v):
    """Connected-component roots for a graph given as parallel edge arrays.

    Returns an int64 array mapping each vertex to the canonical root of its
    component (path-halving union-find, union by attaching to the smaller
    root index so labels are deterministic).
    """
    parent = np.arange(n_vertices, dtype=np.int64)
    for k in range(edges_u.shape[0]):
        a = edges_u[k]
        b = edges_v[k]
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        while parent[b] != b:
            parent[b] = parent[parent[b]]
            b = parent[b]
        if a == b:
            continue
        if a < b:
            parent[b] = a
        else:
            parent[a] = b
    for v in range(n_vertices):
        r = v
        while parent[r] != r:
            r = parent[r]
        a = v
        while parent[a] != r:
            nxt = parent[a]
            parent[a] = r
            a = nxt
    return parent


@njit(cache=True)
def sum_sq_component_sizes(labels, sizes_buf):
    """U = sum over vertices of the size of the vertex's component.

    Equals sum over components of |C|^2, the same-component pair count.
    ``sizes_buf`` is a scratch int64 array of length >= n_vertices.
    """
    n = labels.shape[0]
    for i in range(n):
        sizes_buf[i] = 0
    for i in range(n):
        sizes_buf[labels[i]] += 1
    total = 0.0
    for i in range(n):
        c = sizes_buf[labels[i]]
        total += c
    return total


@njit(cache=True)
def batched_same_component_u(n_vertices, edges_u, edges_v, offsets, out):
    """U(H) per draw for the same-component statistic, draws concatenated.

    ``offsets`` has length n_draws+1 and delimits each draw's edge slice.
    """
    sizes = np.zeros(n_vertices, dtype=np.int64)
    for d in range(offsets.shape[0] - 1):
        lo = offsets[d]
        hi = offsets[d + 1]
        labels = union_find_labels(n_vertices, edges_u[lo:hi], edges_v[lo:hi])
        out[d] = sum_sq_component_sizes(labels, sizes)


@njit(cache=True)
def remove_balls_weighted(counts, n_remove, uniforms):
    """Remove balls one at a time, each uniform over the remaining balls.

    ``counts`` (float64, modified in place) holds per-urn ball counts;
    uniform removal over balls equals sequential urn sampling proportional
    to current counts.  ``uniforms`` supplies one U(0,1) per removal.
    """
    total = 0.0
    for j in range(counts.shape[0]):
        total += counts[j]
    for b in range(n_remove):
        r = uniforms[b] * total
        acc = 0.0
        pick = counts.shape[0] - 1
        for j in range(counts.shape[0]):
            acc += counts[j]
            if r < acc:
                pick = j
                break
        counts[pick] -= 1.0
        total -= 1.0


@njit(cache=True)
def glauber_curie_weiss(
    spins,
    beta,
    bh,
    site_updates,
    u_updates,
    n_burn,
    thin,
    sample_sites,
    sample_unifs,
    approx_w,
    w_out,
    wp_out,
    g_out,
):
    """Run heat-bath single-site dynamics and emit coupling samples.

    The chain state is ``spins`` (int8, +-1, modified in place).  After
    ``n_burn`` updates and then every ``thin`` updates, one coupling sample
    is emitted: site I = sample_sites[k] is re-drawn from its conditional
    law using sample_unifs[k] (the chain itself is NOT advanced by this).
    Conditional field at site i is beta*m_i + bh with m_i the mean of the
    other spins.  approx_w selects W = m - tanh(beta*m + bh) instead of the
    exact site-averaged version.
    """
    n = spins.shape[0]
    s_sum = 0.0
    for i in range(n):
        s_sum += spins[i]
    t = 0
    for k in range(w_out.shape[0]):
        n_steps = n_burn if k == 0 else thin
        for _ in range(n_steps):
            i = site_updates[t]
            f = beta * (s_sum - spins[i]) / n + bh
            p_plus = 1.0 / (1.0 + math.exp(-2.0 * f))
            new = 1 if u_updates[t] < p_plus else -1
            s_sum += new - spins[i]
            spins[i] = new
            t += 1
        i = sample_sites[k]
        f_i = beta * (s_sum - spins[i]) / n + bh
        p_plus = 1.0 / (1.0 + math.exp(-2.0 * f_i))
        new = 1 if sample_unifs[k] < p_plus else -1
        m = s_sum / n
        if approx_w:
            w = m - math.tanh(beta * m + bh)
        else:
            acc = 0.0
            for j in range(n):
                acc += math.tanh(beta * (s_sum - spins[j]) / n + bh)
            w = m - acc / n
        s_sum_p = s_sum - spins[i] + new
        m_p = s_sum_p / n
        if approx_w:
            wp = m_p - math.tanh(beta * m_p + bh)
        else:
            old = spins[i]
            spins[i] = new
            acc = 0.0
            for j in range(n):
                acc += math.tanh(beta * (s_sum_p - spins[j]) / n + bh)
            wp = m_p - acc / n
            spins[i] = old
        w_out[k] = w
        wp_out[k] = wp
        g_out[k] = -0.5 * (spins[i] - new)


@njit(cache=True)
def geometric_edge_walk(gaps, n_draws, m_pairs, out_pos, out_offsets):
    """Split a stream of geometric gaps into per-draw Bernoulli edge positions.

    Each draw's present pair indices are the partial sums of gaps (minus 1)
    below m_pairs; the gap that overshoots m_pairs ends the draw.  Returns
    (edges_written, gaps_consumed, draws_completed); the caller re-draws more
    gaps when the stream runs out mid-way.
    """
    cnt = 0
    t = 0
    for d in range(n_draws):
        out_offsets[d] = cnt
        pos = -1
        while True:
            if t >= gaps.shape[0]:
                return cnt, t, d
            pos += gaps[t]
            t += 1
            if pos >= m_pairs:
                break
            out_pos[cnt] = pos
            cnt += 1
    out_offsets[n_draws] = cnt
    return cnt, t, n_draws


@njit(cache=True)
def pair_chain_coupling_time(x0, y0, cum_rows, uniforms, t_max):
    """Independent evolution of two chains until first meeting.

    ``cum_rows`` is the row-wise cumulative transition matrix.  Returns
    (T, trajectory_x, trajectory_y) with T = -1 when no meeting happened
    within t_max steps.  Trajectories hold states at times 0..T-1.
    """
    traj_x = np.empty(t_max, dtype=np.int64)
    traj_y = np.empty(t_max, dtype=np.int64)
    x = x0
    y = y0
    t = 0
    while t < t_max:
        traj_x[t] = x
        traj_y[t] = y
        ux = uniforms[2 * t]
        uy = uniforms[2 * t + 1]
        nx = np.searchsorted(cum_rows[x], ux)
        ny = np.searchsorted(cum_rows[y], uy)
        x = nx
        y = ny
        t += 1
        if x == y:
            return t, traj_x[:t], traj_y[:t]
    return -1, traj_x[:0], traj_y[:0]
