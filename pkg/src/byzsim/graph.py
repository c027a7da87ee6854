"""Agent topologies, Metropolis mixing matrices and their spectral quantities."""
from dataclasses import dataclass, field

import numpy as np

from .errors import ConnectivityFailure, DisconnectedHonestSubgraph, NonStochasticInput

POWER_ITER_CAP = 10_000
POWER_ITER_TOL = 1e-10
ROW_SUM_TOL = 1e-9


@dataclass(frozen=True)
class Topology:
    n_total: int
    edges: frozenset
    byzantine: frozenset = field(default_factory=frozenset)

    def __post_init__(self):
        edges = set()
        for a, b in self.edges:
            a, b = int(a), int(b)
            if a == b:
                raise ValueError(f"self-loop on agent {a}")
            if not (0 <= a < self.n_total and 0 <= b < self.n_total):
                raise ValueError(f"edge ({a}, {b}) out of range for {self.n_total} agents")
            edges.add((min(a, b), max(a, b)))
        object.__setattr__(self, "edges", frozenset(edges))
        byz = frozenset(int(b) for b in self.byzantine)
        if any(not 0 <= b < self.n_total for b in byz):
            raise ValueError("byzantine index out of range")
        object.__setattr__(self, "byzantine", byz)

    @property
    def honest(self):
        return [n for n in range(self.n_total) if n not in self.byzantine]

    def neighbors(self, n):
        out = [b if a == n else a for a, b in self.edges if n in (a, b)]
        return sorted(out)

    def degree(self, n):
        return len(self.neighbors(n))

    def adjacency(self):
        a = np.zeros((self.n_total, self.n_total), dtype=bool)
        for i, j in self.edges:
            a[i, j] = a[j, i] = True
        return a

    def is_connected(self, nodes=None):
        nodes = list(range(self.n_total)) if nodes is None else list(nodes)
        return _connected(self.adjacency(), nodes)

    def with_byzantine(self, byzantine):
        return Topology(self.n_total, self.edges, frozenset(byzantine))

    def to_dict(self):
        return {
            "n_total": self.n_total,
            "edges": sorted(list(e) for e in self.edges),
            "byzantine": sorted(self.byzantine),
        }


@dataclass(frozen=True, eq=False)
class MixingMatrix:
    """Row-stochastic weights over ``agents`` (global agent ids, in row order)."""

    weights: np.ndarray
    lam: float
    chi_sq: float
    agents: tuple = ()

    def to_dict(self):
        return {
            "agents": list(self.agents),
            "weights": self.weights.tolist(),
            "lambda": self.lam,
            "chi_sq": self.chi_sq,
        }


def _connected(adj, nodes):
    nodes = list(nodes)
    if not nodes:
        return False
    allowed = set(nodes)
    seen = {nodes[0]}
    stack = [nodes[0]]
    while stack:
        u = stack.pop()
        for v in np.flatnonzero(adj[u]):
            v = int(v)
            if v in allowed and v not in seen:
                seen.add(v)
                stack.append(v)
    return len(seen) == len(allowed)


def generate_erdos_renyi(n, p, seed, max_retries=100):
    """Sample a connected G(n, p) graph.

    Each attempt draws the upper triangle from one generator seeded by
    ``seed``; disconnected draws are rejected. Raises ``ConnectivityFailure``
    after ``max_retries`` rejections.
    """
    if n < 2:
        raise ValueError("erdos-renyi topology needs n >= 2")
    if not 0 < p <= 1:
        raise ValueError("edge probability must lie in (0, 1]")
    rng = np.random.default_rng(seed)
    iu, ju = np.triu_indices(n, k=1)
    for _ in range(max_retries):
        keep = rng.random(iu.size) < p
        t = Topology(n, frozenset(zip(iu[keep].tolist(), ju[keep].tolist())))
        if t.is_connected():
            return t
    raise ConnectivityFailure(f"no connected G({n}, {p}) after {max_retries} draws")


def complete_graph(n):
    return Topology(n, frozenset((i, j) for i in range(n) for j in range(i + 1, n)))


def path_graph(n):
    return Topology(n, frozenset((i, i + 1) for i in range(n - 1)))


def ring_graph(n):
    if n < 3:
        return path_graph(n)
    return Topology(n, frozenset((i, (i + 1) % n) for i in range(n)))


def place_byzantine(t, count, seed, max_retries=100):
    """Mark ``count`` agents Byzantine, uniformly without replacement.

    Placements that disconnect the honest subgraph are redrawn.
    """
    if count == 0:
        return t.with_byzantine(())
    if count >= t.n_total:
        raise ValueError("at least one honest agent is required")
    rng = np.random.default_rng(seed)
    for _ in range(max_retries):
        byz = rng.choice(t.n_total, size=count, replace=False)
        cand = t.with_byzantine(byz.tolist())
        if cand.is_connected(cand.honest):
            return cand
    raise DisconnectedHonestSubgraph(
        f"no placement of {count} Byzantine agents keeps the honest subgraph connected"
    )


def metropolis_weights(t):
    """Metropolis-Hastings weights on the full topology (all agents)."""
    n = t.n_total
    deg = np.array([t.degree(i) for i in range(n)])
    w = np.zeros((n, n))
    for i, j in sorted(t.edges):
        w[i, j] = w[j, i] = 1.0 / (1.0 + max(deg[i], deg[j]))
    w[np.diag_indices(n)] = 1.0 - w.sum(axis=1)
    lam, chi_sq = spectral_quantities(w)
    return MixingMatrix(w, lam, chi_sq, tuple(range(n)))


def _top_eigenvalue_psd(a):
    """Largest eigenvalue of a symmetric PSD matrix by power iteration."""
    n = a.shape[0]
    # fixed generic start; the all-ones vector lies in the kernel whenever W is doubly stochastic
    v = np.random.default_rng(0).standard_normal(n)
    v /= np.linalg.norm(v)
    est = 0.0
    for _ in range(POWER_ITER_CAP):
        y = a @ v
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0
        new = float(v @ y)
        v = y / ny
        if abs(new - est) <= POWER_ITER_TOL * abs(new):
            est = new
            break
        est = new
    return float(v @ (a @ v))


def spectral_norm(m):
    """Spectral norm of a dense matrix via power iteration on ``m.T @ m``."""
    m = np.asarray(m, dtype=float)
    return float(np.sqrt(max(_top_eigenvalue_psd(m.T @ m), 0.0)))


def spectral_quantities(w):
    """Return ``(lambda, chi_sq)`` for a row-stochastic matrix ``w``.

    lambda = 1 - ||(I - 11^T/N) W||^2 and chi_sq = ||W^T 1 - 1||^2 / N.
    """
    w = np.asarray(w, dtype=float)
    rows = w.sum(axis=1)
    if np.any(np.abs(rows - 1.0) > ROW_SUM_TOL):
        raise NonStochasticInput(f"row sums deviate from 1 by up to {np.abs(rows - 1).max():.3g}")
    n = w.shape[0]
    centered = w - w.mean(axis=0, keepdims=True)
    norm_sq = _top_eigenvalue_psd(centered.T @ centered)
    lam = 1.0 - norm_sq
    col_dev = w.sum(axis=0) - 1.0
    chi_sq = float(col_dev @ col_dev) / n
    return lam, chi_sq


def induced_nonbyzantine_matrix(t, full):
    """Restrict ``full`` to the honest agents and renormalize each row."""
    honest = t.honest
    if not t.is_connected(honest):
        raise DisconnectedHonestSubgraph("honest agents do not form a connected subgraph")
    sub = np.asarray(full.weights, dtype=float)[np.ix_(honest, honest)]
    sub = sub / sub.sum(axis=1, keepdims=True)
    lam, chi_sq = spectral_quantities(sub)
    return MixingMatrix(sub, lam, chi_sq, tuple(honest))
