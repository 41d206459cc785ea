"""Graph topology, combination matrices, and the benign-subnetwork limit.

The combination matrix follows the left-stochastic convention throughout:
column k holds the weights agent k assigns to its neighbors, and every
column sums to one. Self-loops are mandatory so that uniform weights on a
ring still yield a primitive benign submatrix.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

COLUMN_SUM_TOL = 1e-9
PERRON_RESIDUAL_TOL = 1e-10


class AssumptionViolationError(RuntimeError):
    """A contamination-rate or connectivity requirement does not hold."""


class ConvergenceError(RuntimeError):
    """Power iteration failed to reach its fixed point."""


class TopologyKind(Enum):
    FULLY_CONNECTED = "fully_connected"
    RING = "ring"
    ERDOS_RENYI = "erdos_renyi"


@dataclass
class Topology:
    """Symmetric adjacency with self-loops plus benign/malicious labels."""

    adjacency: np.ndarray
    malicious: np.ndarray

    def __post_init__(self):
        self.adjacency = np.asarray(self.adjacency, dtype=bool)
        self.malicious = np.asarray(self.malicious, dtype=bool)
        K = self.adjacency.shape[0]
        if self.adjacency.ndim != 2 or self.adjacency.shape != (K, K) or K < 1:
            raise ValueError("adjacency must be a square matrix with K >= 1")
        if self.malicious.shape != (K,):
            raise ValueError("need one benign/malicious flag per agent")
        if not np.array_equal(self.adjacency, self.adjacency.T):
            raise ValueError("adjacency must be symmetric")
        if not np.all(np.diag(self.adjacency)):
            raise ValueError("every agent must have a self-loop")

    @property
    def num_agents(self) -> int:
        return self.adjacency.shape[0]

    @property
    def benign(self) -> np.ndarray:
        return ~self.malicious

    @property
    def benign_indices(self) -> np.ndarray:
        return np.flatnonzero(~self.malicious)

    @property
    def malicious_indices(self) -> np.ndarray:
        return np.flatnonzero(self.malicious)

    def neighborhood(self, k: int) -> np.ndarray:
        return np.flatnonzero(self.adjacency[:, k])


@dataclass
class CombinationMatrix:
    """Non-negative K x K matrix whose columns each sum to one."""

    A: np.ndarray

    def __post_init__(self):
        self.A = np.asarray(self.A, dtype=np.float64)
        K = self.A.shape[0]
        if self.A.ndim != 2 or self.A.shape != (K, K) or K < 1:
            raise ValueError("combination matrix must be square with K >= 1")
        if not np.all(np.isfinite(self.A)) or np.any(self.A < 0):
            raise ValueError("combination weights must be finite and non-negative")
        sums = self.A.sum(axis=0)
        if np.any(np.abs(sums - 1.0) > COLUMN_SUM_TOL):
            bad = int(np.argmax(np.abs(sums - 1.0)))
            raise ValueError(
                f"column {bad} sums to {sums[bad]!r}, not 1 (left-stochastic required)"
            )

    @property
    def num_agents(self) -> int:
        return self.A.shape[0]


@dataclass
class PerronVector:
    """Positive unit-sum fixed vector of a primitive left-stochastic matrix."""

    p: np.ndarray
    residual: float

    def __post_init__(self):
        self.p = np.asarray(self.p, dtype=np.float64)
        if self.p.ndim != 1 or self.p.size < 1:
            raise ValueError("p must be a non-empty vector")
        if np.any(self.p <= 0):
            raise ValueError("Perron vector entries must be positive")
        if abs(float(self.p.sum()) - 1.0) > 1e-10:
            raise ValueError("Perron vector must sum to 1")

    def __len__(self) -> int:
        return self.p.size


@dataclass
class Assumption1Report:
    """Outcome of the contamination-rate and connectivity check.

    ``violating_agents`` lists every benign agent whose neighborhood fails
    the benign-majority ratio at the given epsilon.
    """

    passed: bool
    epsilon: float
    violating_agents: tuple[int, ...]
    benign_connected: bool


def _connected(adjacency: np.ndarray) -> bool:
    n = adjacency.shape[0]
    if n == 0:
        return False
    seen = np.zeros(n, dtype=bool)
    stack = [0]
    seen[0] = True
    while stack:
        k = stack.pop()
        for j in np.flatnonzero(adjacency[:, k]):
            if not seen[j]:
                seen[j] = True
                stack.append(int(j))
    return bool(seen.all())


def build_topology(
    kind: TopologyKind,
    K: int,
    malicious=(),
    *,
    edge_prob: float | None = None,
    seed: int | None = None,
) -> Topology:
    """Construct a topology with self-loops and benign/malicious labels.

    Erdos-Renyi requires ``edge_prob`` and ``seed``; a draw whose benign
    subgraph is disconnected is rejected with AssumptionViolationError since
    no aggregation rule can rescue a split benign network.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    mal = np.zeros(K, dtype=bool)
    for m in malicious:
        if not 0 <= int(m) < K:
            raise ValueError(f"malicious index {m} out of range for K={K}")
        mal[int(m)] = True
    if kind is TopologyKind.FULLY_CONNECTED:
        adj = np.ones((K, K), dtype=bool)
    elif kind is TopologyKind.RING:
        adj = np.eye(K, dtype=bool)
        for k in range(K):
            adj[k, (k + 1) % K] = True
            adj[(k + 1) % K, k] = True
    elif kind is TopologyKind.ERDOS_RENYI:
        if edge_prob is None or not 0 <= edge_prob <= 1:
            raise ValueError("erdos_renyi requires edge_prob in [0, 1]")
        if seed is None:
            raise ValueError("erdos_renyi requires an explicit seed")
        rng = np.random.default_rng(seed)
        upper = rng.random((K, K)) < edge_prob
        adj = np.triu(upper, 1)
        adj = adj | adj.T | np.eye(K, dtype=bool)
    else:
        raise TypeError(f"unknown topology kind {kind!r}")
    topo = Topology(adj, mal)
    if kind is TopologyKind.ERDOS_RENYI:
        benign = topo.benign_indices
        if benign.size and not _connected(adj[np.ix_(benign, benign)]):
            raise AssumptionViolationError(
                "Erdos-Renyi draw disconnects the benign subgraph; "
                "use a different seed or a higher edge probability"
            )
    return topo


def uniform_combination(t: Topology) -> CombinationMatrix:
    """Uniform weights over each neighborhood: a_lk = 1/|N_k| for l in N_k."""
    adj = t.adjacency.astype(np.float64)
    return CombinationMatrix(adj / adj.sum(axis=0, keepdims=True))


def validate_assumption1(t: Topology, epsilon: float) -> Assumption1Report:
    """Check the benign-majority ratio of every benign neighborhood and the
    connectivity of the benign-induced subgraph.

    Passes iff |N_k benign| / |N_k| > 1 - epsilon for every benign agent k
    and the benign agents form a connected subgraph.
    """
    if not 0 <= epsilon < 0.5:
        raise ValueError(f"epsilon must lie in [0, 0.5), got {epsilon}")
    benign = t.benign
    violating = []
    for k in np.flatnonzero(benign):
        nbrs = t.adjacency[:, k]
        ratio = float(benign[nbrs].sum()) / float(nbrs.sum())
        if not ratio > 1.0 - epsilon:
            violating.append(int(k))
    bidx = t.benign_indices
    connected = bool(bidx.size) and _connected(t.adjacency[np.ix_(bidx, bidx)])
    return Assumption1Report(
        passed=not violating and connected,
        epsilon=epsilon,
        violating_agents=tuple(violating),
        benign_connected=connected,
    )


def benign_reduced_matrix(A: CombinationMatrix, t: Topology) -> CombinationMatrix:
    """Restrict A to benign agents, rescaling each column by its surviving
    benign mass so columns again sum to one."""
    if A.num_agents != t.num_agents:
        raise ValueError("combination matrix and topology sizes differ")
    bidx = t.benign_indices
    if bidx.size == 0:
        raise AssumptionViolationError("no benign agents to reduce to")
    block = A.A[np.ix_(bidx, bidx)]
    mass = block.sum(axis=0)
    if np.any(mass <= 0):
        k = int(bidx[np.argmax(mass <= 0)])
        raise AssumptionViolationError(
            f"agent {k} has no benign weight mass in its neighborhood"
        )
    return CombinationMatrix(block / mass[None, :])


def perron_vector(
    Ab: CombinationMatrix, *, max_iters: int = 10_000, tol: float = 1e-12
) -> PerronVector:
    """Fixed vector of a primitive left-stochastic matrix by power iteration,
    from a deterministic uniform start."""
    A = Ab.A
    n = A.shape[0]
    p = np.full(n, 1.0 / n)
    for _ in range(max_iters):
        nxt = A @ p
        nxt = nxt / nxt.sum()
        if float(np.max(np.abs(nxt - p))) < tol:
            p = nxt
            break
        p = nxt
    residual = float(np.max(np.abs(A @ p - p)))
    if residual > PERRON_RESIDUAL_TOL or np.any(p <= 0):
        raise ConvergenceError(
            f"power iteration residual {residual:.3e} after cap; "
            "matrix is likely not primitive"
        )
    return PerronVector(p=p, residual=residual)
