"""Graph-theoretic measurements of trained recurrent weight matrices.

Modularity with a seeded two-phase greedy partitioner, binary and weighted
clustering, binary and (literal inverse-weight) weighted path length,
small-worldness, wiring efficiency against the delay matrix, Shannon
entropy of incoming weights, and communicability entropy via the matrix
exponential of the strength-normalized adjacency.

Trained matrices are signed and directed while the metric definitions
assume nonnegative symmetric input, so callers preprocess with sym_abs
(absolute values, then symmetrize) for modularity, clustering, path
length and communicability. Wiring efficiency and Shannon entropy are
elementwise definitions and use absolute values without symmetrizing.

Null models: binary metrics draw Erdos-Renyi graphs with the same number
of edges; weighted metrics permute the off-diagonal weight multiset. All
sampling is seeded.
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np
from scipy.linalg import expm

__all__ = [
    "sym_abs",
    "modularity",
    "find_partition",
    "clustering_binary",
    "clustering_binary_normalized",
    "clustering_weighted",
    "path_length_binary",
    "path_length_weighted",
    "small_worldness",
    "is_small_world",
    "wiring_efficiency",
    "WiringEfficiency",
    "shannon_entropy",
    "communicability_entropy",
    "TopologyReport",
    "build_report",
]


def sym_abs(W: np.ndarray) -> np.ndarray:
    """Standard preprocessing: (|W| + |W|.T) / 2."""
    A = np.abs(np.asarray(W, dtype=np.float64))
    return (A + A.T) / 2.0


def _check_sym_nonneg(W: np.ndarray, name: str) -> np.ndarray:
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise ValueError(f"{name} must be square")
    if W.size and W.min() < 0:
        raise ValueError(f"{name} must be nonnegative; preprocess with sym_abs")
    if not np.array_equal(W, W.T):
        raise ValueError(f"{name} must be symmetric; preprocess with sym_abs")
    return W


def modularity(W: np.ndarray, partition: np.ndarray) -> float:
    """Degree-corrected within-module weight fraction of a partition.

    Q = (1/l) * sum_ij (w_ij - k_i k_j / l) * [m_i == m_j], where l is the
    total weight and k the node strengths. Input must be nonnegative and
    symmetric. Raises on an empty graph (l = 0).
    """
    W = _check_sym_nonneg(W, "W")
    part = np.asarray(partition, dtype=np.int64)
    if part.shape != (W.shape[0],):
        raise ValueError("partition length must match the node count")
    l = float(W.sum())
    if l == 0:
        raise ValueError("modularity undefined for an empty graph")
    k = W.sum(axis=1)
    same = part[:, None] == part[None, :]
    return float(np.sum((W - np.outer(k, k) / l)[same]) / l)


def _relabel(part: np.ndarray) -> np.ndarray:
    # contiguous ids from 0 in order of first appearance
    _, inv = np.unique(part, return_inverse=True)
    order = {}
    out = np.empty_like(inv)
    nxt = 0
    for i, v in enumerate(inv):
        if v not in order:
            order[v] = nxt
            nxt += 1
        out[i] = order[v]
    return out


def _louvain_once(W: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """One two-phase greedy modularity maximization run."""
    n0 = W.shape[0]
    node_groups = [[i] for i in range(n0)]  # original nodes inside each supernode
    A = W.copy()
    while True:
        n = A.shape[0]
        l = A.sum()
        k = A.sum(axis=1)
        comm = np.arange(n)
        # strength of each community, updated as nodes move
        comm_k = k.copy()
        improved_any = False
        improved = True
        while improved:
            improved = False
            for u in rng.permutation(n):
                cu = comm[u]
                # weight from u to each community, self weight excluded
                row = A[u].copy()
                row[u] = 0.0
                w_to = np.bincount(comm, weights=row, minlength=n)
                comm_k[cu] -= k[u]
                # gain of joining community c: (w_to[c] - k_u * comm_k[c] / l) * 2/l
                gain = w_to - k[u] * comm_k / l
                best = int(np.argmax(gain))
                if gain[best] > gain[cu] + 1e-12:
                    comm[u] = best
                    improved = True
                    improved_any = True
                comm_k[comm[u]] += k[u]
        if not improved_any:
            break
        # aggregate communities into supernodes
        labels = _relabel(comm)
        n_new = labels.max() + 1
        if n_new == A.shape[0]:
            break
        agg = np.zeros((n_new, A.shape[0]))
        agg[labels, np.arange(A.shape[0])] = 1.0
        A = agg @ A @ agg.T
        node_groups = [
            [orig for v in np.nonzero(labels == c)[0] for orig in node_groups[v]]
            for c in range(n_new)
        ]
    out = np.empty(n0, dtype=np.int64)
    for c, group in enumerate(node_groups):
        out[group] = c
    return _relabel(out)


def find_partition(W: np.ndarray, seed: int = 0, n_restarts: int = 20) -> np.ndarray:
    """Best partition over seeded greedy restarts; ids contiguous from 0.

    Deterministic in seed. A graph with no weight returns all singletons.
    """
    W = _check_sym_nonneg(W, "W")
    n = W.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64)
    if W.sum() == 0 or n == 1:
        return np.arange(n, dtype=np.int64)
    rng = np.random.default_rng(seed)
    best_part = np.zeros(n, dtype=np.int64)
    best_q = -np.inf
    for _ in range(n_restarts):
        part = _louvain_once(W, rng)
        q = modularity(W, part)
        if q > best_q + 1e-15:
            best_q = q
            best_part = part
    return best_part


def _er_graph(n: int, n_edges: int, rng: np.random.Generator) -> np.ndarray:
    """Erdos-Renyi G(n, m): exactly n_edges undirected edges, no self loops."""
    iu = np.triu_indices(n, k=1)
    n_pairs = iu[0].size
    pick = rng.choice(n_pairs, size=n_edges, replace=False)
    A = np.zeros((n, n))
    A[iu[0][pick], iu[1][pick]] = 1.0
    return A + A.T


def clustering_binary(A: np.ndarray) -> float:
    """Mean triangle-based clustering coefficient of a binary graph.

    Nodes with degree < 2 contribute 0. The diagonal is ignored.
    """
    A = _check_sym_nonneg(A, "A")
    A = (A > 0).astype(np.float64)
    np.fill_diagonal(A, 0.0)
    deg = A.sum(axis=1)
    tri2 = np.diagonal(A @ A @ A)  # closed 3-walks = 2 * triangles per node
    denom = deg * (deg - 1)
    with np.errstate(invalid="ignore", divide="ignore"):
        c = np.where(denom > 0, tri2 / denom, 0.0)
    return float(c.mean()) if c.size else 0.0


def clustering_binary_normalized(
    A: np.ndarray, n_null: int = 100, seed: int = 0
) -> tuple[float, float | None]:
    """(C, Gamma): clustering and its ratio to same-density random graphs.

    Gamma is None when the null mean is zero or the density is degenerate
    (no edges, or complete).
    """
    A = _check_sym_nonneg(A, "A")
    Ab = (A > 0).astype(np.float64)
    np.fill_diagonal(Ab, 0.0)
    c = clustering_binary(Ab)
    n = Ab.shape[0]
    n_edges = int(Ab.sum() // 2)
    n_pairs = n * (n - 1) // 2
    if n_edges == 0 or n_edges == n_pairs:
        return c, None
    rng = np.random.default_rng(seed)
    null = [clustering_binary(_er_graph(n, n_edges, rng)) for _ in range(n_null)]
    mean_null = float(np.mean(null))
    return c, (c / mean_null if mean_null > 0 else None)


def _permute_offdiag(W: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    """Random permutation of the upper-triangle weights, mirrored down."""
    n = W.shape[0]
    iu = np.triu_indices(n, k=1)
    vals = W[iu]
    out = np.zeros_like(W)
    out[iu] = rng.permutation(vals)
    return out + out.T


def clustering_weighted(
    W: np.ndarray, n_null: int = 100, seed: int = 0
) -> tuple[float, float | None]:
    """Mean geometric-mean-weight clustering and its permutation-null ratio.

    Per node i: sum_jk (w_ij w_jk w_ik)^(1/3) / (k_i (k_i - 1)) with k_i
    the degree on the support. Nodes with degree < 2 contribute 0.
    """
    W = _check_sym_nonneg(W, "W")
    W = W.copy()
    np.fill_diagonal(W, 0.0)

    def cw(M: np.ndarray) -> float:
        R = np.cbrt(M)
        num = np.diagonal(R @ R @ R)
        deg = (M > 0).sum(axis=1).astype(np.float64)
        denom = deg * (deg - 1)
        with np.errstate(invalid="ignore", divide="ignore"):
            c = np.where(denom > 0, num / denom, 0.0)
        return float(c.mean()) if c.size else 0.0

    c = cw(W)
    if not np.any(W > 0):
        return c, None
    rng = np.random.default_rng(seed)
    null = [cw(_permute_offdiag(W, rng)) for _ in range(n_null)]
    mean_null = float(np.mean(null))
    return c, (c / mean_null if mean_null > 0 else None)


def _bfs_all_pairs(A: np.ndarray) -> np.ndarray:
    """Hop distances; np.inf where unreachable. Plain BFS per source."""
    n = A.shape[0]
    neighbors = [np.nonzero(A[i] > 0)[0] for i in range(n)]
    dist = np.full((n, n), np.inf)
    for s in range(n):
        dist[s, s] = 0.0
        frontier = [s]
        d = 0
        while frontier:
            d += 1
            nxt = []
            for u in frontier:
                for v in neighbors[u]:
                    if not np.isfinite(dist[s, v]):
                        dist[s, v] = d
                        nxt.append(v)
            frontier = nxt
    return dist


def path_length_binary(
    A: np.ndarray, n_null: int = 100, seed: int = 0
) -> tuple[float, float | None, int]:
    """(L, Lambda, n_unreachable): mean BFS hop distance over reachable pairs.

    Unreachable ordered pairs are excluded from the mean and counted.
    Lambda is the ratio to the same-density random-graph mean; None when
    either side is undefined.
    """
    A = _check_sym_nonneg(A, "A")
    Ab = (A > 0).astype(np.float64)
    np.fill_diagonal(Ab, 0.0)
    n = Ab.shape[0]

    def mean_path(M: np.ndarray) -> tuple[float | None, int]:
        dist = _bfs_all_pairs(M)
        off = ~np.eye(M.shape[0], dtype=bool)
        vals = dist[off]
        finite = np.isfinite(vals)
        if not finite.any():
            return None, int(vals.size)
        return float(vals[finite].mean()), int((~finite).sum())

    L, n_unreach = mean_path(Ab)
    if L is None:
        return np.nan, None, n_unreach
    n_edges = int(Ab.sum() // 2)
    n_pairs = n * (n - 1) // 2
    if n_edges == 0 or n_edges == n_pairs:
        return L, None, n_unreach
    rng = np.random.default_rng(seed)
    null_vals = []
    for _ in range(n_null):
        ln, _ = mean_path(_er_graph(n, n_edges, rng))
        if ln is not None:
            null_vals.append(ln)
    if not null_vals:
        return L, None, n_unreach
    return L, L / float(np.mean(null_vals)), n_unreach


def path_length_weighted(
    W: np.ndarray, n_null: int = 100, seed: int = 0
) -> tuple[float, float | None, int]:
    """(L_w, normalized, n_zero): literal mean of inverse weights.

    L_w = (1/(N(N-1))) * sum over nonzero off-diagonal entries of 1/w_ij.
    Zero-weight pairs are excluded from the sum but the denominator stays
    N(N-1), exactly as the definition is written. The permutation null
    preserves the weight multiset, hence also L_w; the normalized value is
    identically 1 and kept only for interface uniformity.
    """
    W = _check_sym_nonneg(W, "W")
    n = W.shape[0]
    if n < 2:
        raise ValueError("need at least two nodes")
    off = ~np.eye(n, dtype=bool)
    vals = W[off]
    nz = vals > 0
    if not nz.any():
        raise ValueError("weighted path length undefined for an all-zero matrix")
    L_w = float(np.sum(1.0 / vals[nz]) / (n * (n - 1)))
    rng = np.random.default_rng(seed)
    null = []
    for _ in range(n_null):
        P = _permute_offdiag(W, rng)
        pv = P[off]
        pnz = pv > 0
        null.append(float(np.sum(1.0 / pv[pnz]) / (n * (n - 1))))
    mean_null = float(np.mean(null))
    return L_w, (L_w / mean_null if mean_null > 0 else None), int((~nz).sum())


def small_worldness(gamma: float, lam: float) -> float:
    """sigma = Gamma / Lambda."""
    if lam == 0:
        raise ValueError("small-worldness undefined for Lambda = 0")
    return gamma / lam


def is_small_world(gamma: float, lam: float, band: float = 0.05) -> bool:
    """Small-world classification: sigma > 1, Gamma > 1, Lambda within 1 +/- band."""
    sigma = small_worldness(gamma, lam)
    return bool(sigma > 1 and gamma > 1 and abs(lam - 1.0) <= band)


@dataclass
class WiringEfficiency:
    wire: float
    wire_min: float
    wire_max: float
    wire_norm: float
    degenerate: bool


def wiring_efficiency(W: np.ndarray, D: np.ndarray) -> WiringEfficiency:
    """How close total wiring cost sum |w_ij| d_ij sits to its rearrangement bounds.

    wire_min pairs the largest weights with the shortest delays (efficient),
    wire_max pairs largest with longest (wasteful); wire_norm = 1 - (wire -
    wire_min)/(wire_max - wire_min), so 1 is maximally efficient. All
    entries of both matrices participate. When every pairing costs the same
    (constant |W| or constant D) the value is defined as 1 and flagged.
    """
    w = np.abs(np.asarray(W, dtype=np.float64)).ravel()
    d = np.asarray(D, dtype=np.float64).ravel()
    if w.size != d.size:
        raise ValueError("W and D must have the same number of entries")
    wire = float(np.dot(w, d))
    ws = np.sort(w)
    ds = np.sort(d)
    wire_max = float(np.dot(ws, ds))
    wire_min = float(np.dot(ws, ds[::-1]))
    if wire_max == wire_min:
        return WiringEfficiency(wire, wire_min, wire_max, 1.0, True)
    norm = 1.0 - (wire - wire_min) / (wire_max - wire_min)
    return WiringEfficiency(wire, wire_min, wire_max, float(np.clip(norm, 0.0, 1.0)), False)


def shannon_entropy(W: np.ndarray) -> float:
    """Mean over targets of the entropy of normalized incoming |weights|.

    Column j is normalized to p_ij = |w_ij| / sum_i |w_ij|; its entropy is
    -sum p log2 p with 0 log 0 = 0. Columns with zero in-strength are
    excluded from the mean. Raises when the whole matrix is zero.
    """
    A = np.abs(np.asarray(W, dtype=np.float64))
    if A.ndim != 2:
        raise ValueError("W must be a matrix")
    strengths = A.sum(axis=0)
    keep = strengths > 0
    if not keep.any():
        raise ValueError("Shannon entropy undefined for an all-zero matrix")
    P = A[:, keep] / strengths[keep]
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(P > 0, P * np.log2(P), 0.0)
    return float(np.mean(-terms.sum(axis=0)))


def communicability_entropy(W: np.ndarray) -> tuple[float, int]:
    """(H_comm, n_dropped): Shannon entropy of the communicability matrix.

    The adjacency is preprocessed with sym_abs, strength-normalized as
    S^(-1/2) A S^(-1/2), and exponentiated; entropy is then taken exactly
    as shannon_entropy. Zero-strength nodes are dropped first (counted),
    except for a 1x1 input, where exp(0) = 1 gives entropy 0 directly.
    """
    A = sym_abs(W)
    n = A.shape[0]
    if n == 1:
        return 0.0, 0
    s = A.sum(axis=1)
    keep = s > 0
    n_dropped = int((~keep).sum())
    A = A[np.ix_(keep, keep)]
    if A.shape[0] == 0:
        raise ValueError("communicability undefined: every node is isolated")
    s = s[keep]
    inv_sqrt = 1.0 / np.sqrt(s)
    M = inv_sqrt[:, None] * A * inv_sqrt[None, :]
    C = expm(M)
    return shannon_entropy(C), n_dropped


@dataclass
class TopologyReport:
    """Flat scalar summary of one weight/delay matrix pair."""

    Q: float
    gamma: float | None
    lam: float | None
    sigma: float | None
    small_world: bool | None
    C_binary: float
    C_w: float
    C_w_norm: float | None
    L_binary: float
    L_w: float
    L_w_norm: float | None
    wire_norm: float
    wire_degenerate: bool
    H: float
    H_comm: float
    n_partition_modules: int
    binary: bool
    n_null: int
    seed: int
    n_unreachable_pairs: int
    n_dropped_comm: int

    def to_dict(self) -> dict:
        return asdict(self)


def build_report(
    w_rec: np.ndarray,
    delays: np.ndarray,
    binary: bool = False,
    n_null: int = 100,
    seed: int = 0,
    support_eps: float = 1e-8,
) -> TopologyReport:
    """All metrics for one model. binary=True scores Q on the binarized support."""
    Wsym = sym_abs(w_rec)
    A = (Wsym > support_eps).astype(np.float64)
    np.fill_diagonal(A, 0.0)

    q_input = A if binary else Wsym
    part = find_partition(q_input, seed=seed)
    Q = modularity(q_input, part) if q_input.sum() > 0 else np.nan

    c_bin, gamma = clustering_binary_normalized(A, n_null=n_null, seed=seed)
    L, lam, n_unreach = path_length_binary(A, n_null=n_null, seed=seed)
    sigma = None
    small = None
    if gamma is not None and lam is not None and lam != 0:
        sigma = small_worldness(gamma, lam)
        small = is_small_world(gamma, lam)
    c_w, c_w_norm = clustering_weighted(Wsym, n_null=n_null, seed=seed)
    try:
        l_w, l_w_norm, _ = path_length_weighted(Wsym, n_null=n_null, seed=seed)
    except ValueError:
        l_w, l_w_norm = np.nan, None
    eff = wiring_efficiency(w_rec, delays)
    try:
        H = shannon_entropy(w_rec)
    except ValueError:
        H = np.nan
    try:
        H_comm, n_dropped = communicability_entropy(w_rec)
    except ValueError:
        H_comm, n_dropped = np.nan, w_rec.shape[0]
    return TopologyReport(
        Q=float(Q),
        gamma=gamma,
        lam=lam,
        sigma=sigma,
        small_world=small,
        C_binary=c_bin,
        C_w=c_w,
        C_w_norm=c_w_norm,
        L_binary=L,
        L_w=l_w,
        L_w_norm=l_w_norm,
        wire_norm=eff.wire_norm,
        wire_degenerate=eff.degenerate,
        H=H,
        H_comm=H_comm,
        n_partition_modules=int(part.max()) + 1 if part.size else 0,
        binary=binary,
        n_null=n_null,
        seed=seed,
        n_unreachable_pairs=n_unreach,
        n_dropped_comm=n_dropped,
    )
