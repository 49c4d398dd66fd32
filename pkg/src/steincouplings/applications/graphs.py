"""Component functionals of sub-critical Erdos-Renyi graphs G(n, lambda/n).

U(H) = sum_{i,j} h(H, i, j) for pair functionals h that are symmetric,
component-local and vanish across components.  The coupling resamples, from
an independent copy H*, every potential edge touching the component of a
uniformly chosen vertex I; the auxiliary graph H'' repeats the construction
over the affected vertex set V_I using a second independent copy H**.  The
pair (H, H'_I) has equal marginals but is NOT exchangeable, and nothing here
assumes exchangeability.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from .. import _kernels
from ..core import (
    CouplingSampler,
    EnumeratedOutcomes,
    InvalidParameterError,
    batch_from_arrays,
    check_enumeration_size,
)
from ..estimation import graph_log_gap


# ---------------------------------------------------------------------------
# Pair statistics
# ---------------------------------------------------------------------------


class GraphStatistic:
    """Interface: U(H) and the per-vertex column sum sum_{j in C(H,i)} h(H,i,j).

    ``fused`` marks statistics whose U only needs component labels/sizes, so
    batched sampling can run through the compiled union-find kernel.
    """

    name = "statistic"
    h_norm = 1.0
    dh_norm = 1.0
    fused = False
    vertex_exchangeable = True

    def u_of(self, graph) -> float:
        raise NotImplementedError

    def colsum(self, graph, i: int) -> float:
        raise NotImplementedError

    def h(self, graph, i: int, j: int) -> float:
        raise NotImplementedError


class _Graph:
    """Per-draw scratch: vertex count, edge array, labels and component sizes."""

    __slots__ = ("n", "edges", "labels", "sizes")

    def __init__(self, n: int, edges: np.ndarray):
        self.n = n
        self.edges = edges
        if edges.shape[0]:
            self.labels = _kernels.union_find_labels(
                n, edges[:, 0].astype(np.int64), edges[:, 1].astype(np.int64)
            )
        else:
            self.labels = np.arange(n, dtype=np.int64)
        self.sizes = np.bincount(self.labels, minlength=n)

    def comp_size(self, i: int) -> int:
        return int(self.sizes[self.labels[i]])

    def component_of(self, i: int) -> np.ndarray:
        return np.nonzero(self.labels == self.labels[i])[0]

    def adjacency(self) -> list[list[int]]:
        adj: list[list[int]] = [[] for _ in range(self.n)]
        for u, v in self.edges:
            adj[int(u)].append(int(v))
            adj[int(v)].append(int(u))
        return adj


class SameComponent(GraphStatistic):
    """h = I[i and j in the same component]; U = sum over components |C|^2."""

    name = "same_component"
    fused = True

    def u_of(self, graph):
        return float(graph.sizes[graph.labels].sum())

    def colsum(self, graph, i):
        return float(graph.comp_size(i))

    def h(self, graph, i, j):
        return float(graph.labels[i] == graph.labels[j])


class SingletonCount(GraphStatistic):
    """Diagonal h0(H, i) = I[|C(H,i)| = 1]; U = number of isolated vertices."""

    name = "singletons"
    fused = True

    def u_of(self, graph):
        return float((graph.sizes[graph.labels] == 1).sum())

    def colsum(self, graph, i):
        return float(graph.comp_size(i) == 1)

    def h(self, graph, i, j):
        return float(i == j and graph.comp_size(i) == 1)


class InverseComponentWeight(GraphStatistic):
    """h = I[same component]/|C(H,i)| (the de-biased component average);
    U = n identically."""

    name = "inverse_component"
    fused = True

    def u_of(self, graph):
        return float(graph.n)

    def colsum(self, graph, i):
        return 1.0

    def h(self, graph, i, j):
        if graph.labels[i] != graph.labels[j]:
            return 0.0
        return 1.0 / graph.comp_size(i)


class DistanceCapped(GraphStatistic):
    """h = I[i, j connected with graph distance <= m0] (BFS; small n only)."""

    name = "distance_capped"

    def __init__(self, m0: int):
        if m0 < 0:
            raise InvalidParameterError("m0 must be >= 0")
        self.m0 = m0
        self.name = f"distance_capped_{m0}"

    def _within(self, graph, i):
        adj = graph.adjacency()
        dist = {i: 0}
        frontier = [i]
        for _ in range(self.m0):
            nxt = []
            for u in frontier:
                for v in adj[u]:
                    if v not in dist:
                        dist[v] = dist[u] + 1
                        nxt.append(v)
            frontier = nxt
        return dist

    def colsum(self, graph, i):
        return float(len(self._within(graph, i)))

    def u_of(self, graph):
        return math.fsum(self.colsum(graph, i) for i in range(graph.n))

    def h(self, graph, i, j):
        return float(j in self._within(graph, i))


class SameCycle(GraphStatistic):
    """h = I[i and j lie on a common simple cycle]: same biconnected block of
    size >= 3.  Reference implementation for n <= 1000."""

    name = "same_cycle"

    def _blocks(self, graph):
        if graph.n > 1000:
            raise InvalidParameterError("same_cycle reference limited to n <= 1000")
        adj = graph.adjacency()
        n = graph.n
        disc = [-1] * n
        low = [0] * n
        stack: list[tuple[int, int]] = []
        blocks: list[set[int]] = []
        timer = [0]

        def dfs(root):
            work = [(root, -1, iter(adj[root]))]
            disc[root] = low[root] = timer[0]
            timer[0] += 1
            while work:
                u, parent, it = work[-1]
                advanced = False
                for v in it:
                    if v == parent:
                        continue
                    if disc[v] == -1:
                        stack.append((u, v))
                        disc[v] = low[v] = timer[0]
                        timer[0] += 1
                        work.append((v, u, iter(adj[v])))
                        advanced = True
                        break
                    if disc[v] < disc[u]:
                        stack.append((u, v))
                        low[u] = min(low[u], disc[v])
                if advanced:
                    continue
                work.pop()
                if work:
                    p = work[-1][0]
                    low[p] = min(low[p], low[u])
                    if low[u] >= disc[p]:
                        comp = set()
                        while stack and stack[-1] != (p, u):
                            a, b = stack.pop()
                            comp |= {a, b}
                        if stack:
                            a, b = stack.pop()
                            comp |= {a, b}
                        if comp:
                            blocks.append(comp)

        for r in range(n):
            if disc[r] == -1:
                dfs(r)
        return [b for b in blocks if len(b) >= 3]

    def u_of(self, graph):
        tot = 0.0
        for b in self._blocks(graph):
            tot += len(b) ** 2
        return tot

    def colsum(self, graph, i):
        for b in self._blocks(graph):
            if i in b:
                return float(len(b))
        return 0.0

    def h(self, graph, i, j):
        for b in self._blocks(graph):
            if i in b and j in b:
                return 1.0
        return 0.0


def graph_statistics_library() -> dict:
    return {
        "same_component": SameComponent,
        "singletons": SingletonCount,
        "inverse_component": InverseComponentWeight,
        "distance_capped": DistanceCapped,
        "same_cycle": SameCycle,
    }


def check_singleton_cap(stat: GraphStatistic, n: int = 4) -> bool:
    """0 <= h(H,i,j) <= 2 ||dh|| whenever both components are singletons."""
    g = _Graph(n, np.empty((0, 2), dtype=np.int64))
    for i in range(n):
        for j in range(n):
            v = stat.h(g, i, j)
            if not 0.0 <= v <= 2.0 * stat.dh_norm:
                return False
    return True


def check_symmetry(stat: GraphStatistic, graph: _Graph) -> float:
    worst = 0.0
    for i in range(graph.n):
        for j in range(graph.n):
            worst = max(worst, abs(stat.h(graph, i, j) - stat.h(graph, j, i)))
            if graph.labels[i] != graph.labels[j] and stat.h(graph, i, j) != 0.0:
                raise InvalidParameterError("h must vanish across components")
    return worst


# ---------------------------------------------------------------------------
# Instance and coupling
# ---------------------------------------------------------------------------


def _decode_pairs(k: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of the row-major upper-triangle pair index
    k = i(2n - i - 1)/2 + (j - i - 1)."""
    k = k.astype(np.float64)
    i = np.floor((2 * n - 1 - np.sqrt((2 * n - 1) ** 2 - 8 * k)) / 2).astype(np.int64)
    base = i * (2 * n - i - 1) // 2
    over = base > k.astype(np.int64)
    i = np.where(over, i - 1, i)
    base = i * (2 * n - i - 1) // 2
    j = k.astype(np.int64) - base + i + 1
    return i, j


def _sample_distinct(rng, m: int, k: int) -> np.ndarray:
    """k distinct uniform indices from range(m) without O(m) allocation.

    Rejection of duplicates is cheap for k << m; falls back to
    Generator.choice when k is a sizable fraction of m.
    """
    if k <= 0:
        return np.empty(0, dtype=np.int64)
    if k * 4 >= m:
        return rng.choice(m, size=k, replace=False).astype(np.int64)
    idx = np.unique(rng.integers(0, m, size=k))
    while idx.size < k:
        extra = rng.integers(0, m, size=k - idx.size)
        idx = np.unique(np.concatenate([idx, extra]))
    return idx.astype(np.int64)


def sample_graph_edges(rng, n: int, lam: float) -> np.ndarray:
    """Edge list of G(n, lam/n): binomial edge count, then a uniform subset."""
    m_pairs = n * (n - 1) // 2
    ne = int(rng.binomial(m_pairs, lam / n))
    if ne == 0:
        return np.empty((0, 2), dtype=np.int64)
    idx = _sample_distinct(rng, m_pairs, ne)
    u, v = _decode_pairs(idx, n)
    return np.stack([u, v], axis=1)


class GraphInstance:
    def __init__(
        self,
        n: int,
        lam: float,
        statistic: GraphStatistic | None = None,
        sigma2: float | None = None,
        mu: float | None = None,
        pilot_draws: int = 4000,
        pilot_seed: int = 20_250_808,
    ):
        if n < 2:
            raise InvalidParameterError("need n >= 2")
        graph_log_gap(lam)  # validates 0 < lam < 1 (sub-critical only)
        self.n = n
        self.lam = lam
        self.statistic = statistic or SameComponent()
        self.a = graph_log_gap(lam)
        self._mu = mu
        self._sigma2 = sigma2
        self.pilot_draws = pilot_draws
        self.pilot_seed = pilot_seed

    def draw_graph(self, rng) -> _Graph:
        return _Graph(self.n, sample_graph_edges(rng, self.n, self.lam))

    def u_samples(self, rng, size: int) -> np.ndarray:
        """Fast U(H) draws (fused kernel path for label-only statistics).

        The fused path samples each draw's edge set by geometric skips over
        the pair indices (the exact product-Bernoulli law, no subset
        rejection), then runs the batched union-find kernel.
        """
        stat = self.statistic
        if stat.fused and isinstance(stat, SameComponent):
            m_pairs = self.n * (self.n - 1) // 2
            p = self.lam / self.n
            expected = size * (m_pairs * p + 1.0)
            budget = int(expected + 10.0 * math.sqrt(expected) + 64)
            positions = np.empty(0, dtype=np.int64)
            offsets = np.empty(0, dtype=np.int64)
            while True:
                gaps = rng.geometric(p, size=budget).astype(np.int64)
                # each gap yields at most one edge, so `budget` slots suffice
                positions = np.empty(budget, dtype=np.int64)
                offsets = np.empty(size + 1, dtype=np.int64)
                cnt, _used, done = _kernels.geometric_edge_walk(
                    gaps, size, m_pairs, positions, offsets
                )
                if done == size:
                    break
                budget *= 2  # gap stream ran out: redraw a longer one
            positions = positions[:cnt]
            eu, ev = _decode_pairs(positions, self.n)
            out = np.empty(size)
            _kernels.batched_same_component_u(self.n, eu, ev, offsets, out)
            return out
        return np.array([stat.u_of(self.draw_graph(rng)) for _ in range(size)])

    def _run_pilot(self):
        rng = np.random.default_rng(self.pilot_seed)
        if self.statistic.vertex_exchangeable:
            u = self.u_samples(rng, self.pilot_draws)
            self._mu = float(u.mean()) if self._mu is None else self._mu
            self._sigma2 = float(u.var()) if self._sigma2 is None else self._sigma2
            # pilot standardization error, in W units (see mu_halfwidth)
            self._mu_hw = 2.5758 * float(u.std()) / math.sqrt(u.size)
        else:
            u = np.empty(self.pilot_draws)
            cols = np.zeros(self.n)
            for r in range(self.pilot_draws):
                g = self.draw_graph(rng)
                u[r] = self.statistic.u_of(g)
                cols += [self.statistic.colsum(g, i) for i in range(self.n)]
            self._mu = float(u.mean()) if self._mu is None else self._mu
            self._sigma2 = float(u.var()) if self._sigma2 is None else self._sigma2
            self._mu_i = cols / self.pilot_draws

    @property
    def mu(self) -> float:
        if self._mu is None:
            self._run_pilot()
        return self._mu

    @property
    def sigma2(self) -> float:
        if self._sigma2 is None:
            self._run_pilot()
        if self._sigma2 <= 0:
            raise InvalidParameterError("degenerate statistic (Var U = 0)")
        return self._sigma2

    def mu_i(self, i: int) -> float:
        if self.statistic.vertex_exchangeable:
            return self.mu / self.n
        if not hasattr(self, "_mu_i"):
            self._run_pilot()
        return float(self._mu_i[i])

    def mu_halfwidth(self) -> float:
        """99% half-width of the pilot mean estimate, in W units.

        Pilot-standardized samples have E W offset by up to this much; probes
        comparing E W against 0 should allow it as slack.
        """
        if self._mu is None or not hasattr(self, "_mu_hw"):
            return 0.0
        return self._mu_hw / math.sqrt(self.sigma2)


def _resample_touching(rng, n, lam, members: np.ndarray, edges: np.ndarray):
    """Replace all potential edges touching ``members`` by fresh Be(lam/n)
    draws from an independent copy; other edges are kept."""
    in_set = np.zeros(n, dtype=bool)
    in_set[members] = True
    if edges.shape[0]:
        keep = edges[~(in_set[edges[:, 0]] | in_set[edges[:, 1]])]
    else:
        keep = edges
    c = members.shape[0]
    outside = np.nonzero(~in_set)[0]
    m_within = c * (c - 1) // 2
    m_cross = c * (n - c)
    p = lam / n
    new = []
    k1 = int(rng.binomial(m_within, p)) if m_within else 0
    if k1:
        idx = _sample_distinct(rng, m_within, k1)
        u, v = _decode_pairs(idx, c)
        new.append(np.stack([members[u], members[v]], axis=1))
    k2 = int(rng.binomial(m_cross, p)) if m_cross else 0
    if k2:
        idx = _sample_distinct(rng, m_cross, k2)
        u = members[idx // (n - c)]
        v = outside[idx % (n - c)]
        new.append(np.stack([u, v], axis=1))
    if new:
        return np.concatenate([keep] + new, axis=0)
    return keep


class GraphCoupling(CouplingSampler):
    name = "graph_component"
    marginals_equal = True
    #: (H, H') has equal marginals but is not exchangeable; never asserted.
    pair_exchangeable = False

    def __init__(self, inst: GraphInstance):
        self.inst = inst
        self.sigma = math.sqrt(inst.sigma2)

    def draw(self, rng):
        inst = self.inst
        n, lam = inst.n, inst.lam
        sc = self.sigma
        g_h = inst.draw_graph(rng)
        u = inst.statistic.u_of(g_h)
        i = int(rng.integers(n))
        comp = g_h.component_of(i)
        g_val = -n * (inst.statistic.colsum(g_h, i) - inst.mu_i(i)) / sc
        edges_hp = _resample_touching(rng, n, lam, comp, g_h.edges)
        g_hp = _Graph(n, edges_hp)
        u_p = inst.statistic.u_of(g_hp)
        # V_I: all vertices whose H'-component meets C(H, I)
        v_roots = np.unique(g_hp.labels[comp])
        v_set = np.nonzero(np.isin(g_hp.labels, v_roots))[0]
        edges_hdd = _resample_touching(rng, n, lam, v_set, g_h.edges)
        g_hdd = _Graph(n, edges_hdd)
        u_dd = inst.statistic.u_of(g_hdd)
        mu = inst.mu
        return batch_from_arrays(
            [(u - mu) / sc], [(u_p - mu) / sc], [g_val], [(u_dd - mu) / sc]
        ).row(0)

    def detailed_draw(self, rng) -> dict:
        """One draw plus the affected vertex sets: C(H, I), V_I (components
        touched by the H -> H' resampling) and V'_I (touched by H -> H'')."""
        inst = self.inst
        n, lam = inst.n, inst.lam
        g_h = inst.draw_graph(rng)
        i = int(rng.integers(n))
        comp = g_h.component_of(i)
        g_hp = _Graph(n, _resample_touching(rng, n, lam, comp, g_h.edges))
        v_roots = np.unique(g_hp.labels[comp])
        v_set = np.nonzero(np.isin(g_hp.labels, v_roots))[0]
        g_hdd = _Graph(n, _resample_touching(rng, n, lam, v_set, g_h.edges))
        vp_roots = np.unique(g_hdd.labels[v_set])
        vp_set = np.nonzero(np.isin(g_hdd.labels, vp_roots))[0]
        return {
            "graph": g_h,
            "graph_prime": g_hp,
            "graph_dd": g_hdd,
            "index": i,
            "component": comp,
            "v_set": v_set,
            "v_prime_set": vp_set,
        }

    # -- exact enumeration at n <= 4 (fixed vertex, vertex-exchangeable h) ----

    def enumerate(self, fixed_vertex: int = 0):
        """Joint enumeration of (H, H*, H**) at the fixed vertex.

        Valid as a Stein-coupling outcome space when the statistic is
        vertex-exchangeable: the per-vertex identity already holds for each
        fixed I = i, so the index randomization is not enumerated.
        """
        inst = self.inst
        if inst.n > 4:
            raise InvalidParameterError("graph enumeration limited to n <= 4")
        if not inst.statistic.vertex_exchangeable:
            raise InvalidParameterError("enumeration requires a vertex-exchangeable h")
        n = inst.n
        pairs = list(itertools.combinations(range(n), 2))
        m = len(pairs)
        check_enumeration_size((2**m) ** 3)
        p_edge = inst.lam / n
        n_cfg = 2**m
        graphs = []
        for mask in range(n_cfg):
            edges = np.array(
                [pairs[b] for b in range(m) if mask >> b & 1], dtype=np.int64
            ).reshape(-1, 2)
            graphs.append(_Graph(n, edges))
        log_p = np.array(
            [
                bin(mask).count("1") * math.log(p_edge)
                + (m - bin(mask).count("1")) * math.log1p(-p_edge)
                for mask in range(n_cfg)
            ]
        )
        p_cfg = np.exp(log_p)
        u_tab = np.array([inst.statistic.u_of(g) for g in graphs])
        col_tab = np.array([inst.statistic.colsum(g, fixed_vertex) for g in graphs])
        # exact mu, sigma, mu_i from the H-marginal
        mu = float(p_cfg @ u_tab)
        sigma = math.sqrt(float(p_cfg @ (u_tab - mu) ** 2))
        mu_i = float(p_cfg @ col_tab)
        comp_mask = np.zeros(n_cfg, dtype=np.int64)
        for idx, g in enumerate(graphs):
            members = g.component_of(fixed_vertex)
            comp_mask[idx] = int(np.sum(1 << members))
        # transition tables: hprime[h, hstar] and the affected set V
        edge_touch = np.array(
            [
                sum(1 << b for b, (x, y) in enumerate(pairs) if (vmask >> x & 1) or (vmask >> y & 1))
                for vmask in range(2**n)
            ],
            dtype=np.int64,
        )
        vset_mask = np.zeros((n_cfg, n_cfg), dtype=np.int64)
        hp_tab = np.zeros((n_cfg, n_cfg), dtype=np.int64)
        for h_idx in range(n_cfg):
            cmask = comp_mask[h_idx]
            touch = edge_touch[cmask]
            for hs in range(n_cfg):
                hp = (hs & touch) | (h_idx & ~touch)
                hp_tab[h_idx, hs] = hp
                vm = 0
                g_hp = graphs[hp]
                comp_vertices = [v for v in range(n) if cmask >> v & 1]
                roots = {int(g_hp.labels[v]) for v in comp_vertices}
                for v in range(n):
                    if int(g_hp.labels[v]) in roots:
                        vm |= 1 << v
                vset_mask[h_idx, hs] = vm
        probs, w, wp, g_arr, wdd = [], [], [], [], []
        for h_idx in range(n_cfg):
            g_here = -n * (col_tab[h_idx] - mu_i) / sigma
            w_here = (u_tab[h_idx] - mu) / sigma
            for hs in range(n_cfg):
                hp = hp_tab[h_idx, hs]
                wp_here = (u_tab[hp] - mu) / sigma
                touch2 = edge_touch[vset_mask[h_idx, hs]]
                p2 = p_cfg[h_idx] * p_cfg[hs]
                for hss in range(n_cfg):
                    hdd = (hss & touch2) | (h_idx & ~touch2)
                    probs.append(p2 * p_cfg[hss])
                    w.append(w_here)
                    wp.append(wp_here)
                    g_arr.append(g_here)
                    wdd.append((u_tab[hdd] - mu) / sigma)
        return EnumeratedOutcomes(np.array(probs), batch_from_arrays(w, wp, g_arr, wdd))


def graph_coupling(inst: GraphInstance) -> GraphCoupling:
    return GraphCoupling(inst)


def component_tail_check(
    n: int,
    lam: float,
    c_value: float,
    n_draws: int,
    rng: np.random.Generator,
) -> dict:
    """Empirical P(|C(H,1)| >= C) against the sub-critical tail e^{-aC}/lambda.

    All vertices of each draw are used (exchangeability); the reported mc_se
    is the standard error over per-draw fractions.
    """
    a = graph_log_gap(lam)
    fracs = np.empty(n_draws)
    for r in range(n_draws):
        g = _Graph(n, sample_graph_edges(rng, n, lam))
        fracs[r] = float((g.sizes[g.labels] >= c_value).mean())
    emp = float(fracs.mean())
    se = float(fracs.std() / math.sqrt(n_draws))
    return {
        "empirical": emp,
        "bound": math.exp(-a * c_value) / lam,
        "mc_se": se,
        "a": a,
    }
