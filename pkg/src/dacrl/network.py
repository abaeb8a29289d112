"""Communication graph, consensus weight matrices and simulated links."""

from collections import Counter, deque
from dataclasses import dataclass, field

import numpy as np

from .errors import AssumptionViolation, ConfigError, LocalityError


@dataclass(frozen=True)
class TopologyGraph:
    n: int
    edges: frozenset

    def __post_init__(self):
        if self.n < 1:
            raise ConfigError("graph needs at least one node")
        norm = set()
        for i, j in self.edges:
            i, j = int(i), int(j)
            if i == j:
                raise ConfigError(f"self-loop at node {i}")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise ConfigError(f"edge ({i}, {j}) references a missing node")
            norm.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", frozenset(norm))
        if not self.is_connected():
            raise ConfigError("communication graph is not connected")

    def neighbors(self, i):
        return sorted({b if a == i else a for a, b in self.edges if i in (a, b)})

    def degree(self, i):
        return len(self.neighbors(i))

    def adjacency(self):
        A = np.zeros((self.n, self.n))
        for i, j in self.edges:
            A[i, j] = A[j, i] = 1.0
        return A

    def is_connected(self):
        adj = {i: [] for i in range(self.n)}
        for i, j in self.edges:
            adj[i].append(j)
            adj[j].append(i)
        seen = {0}
        queue = deque([0])
        while queue:
            for k in adj[queue.popleft()]:
                if k not in seen:
                    seen.add(k)
                    queue.append(k)
        return len(seen) == self.n

    def sorted_edges(self):
        return sorted(self.edges)

    def directed_edges(self):
        return sorted([(i, j) for i, j in self.edges] + [(j, i) for i, j in self.edges])

    @classmethod
    def grid(cls, rows, cols):
        """Nodes numbered row-major; links to up/down/left/right neighbours."""
        edges = set()
        for r in range(rows):
            for c in range(cols):
                k = r * cols + c
                if c + 1 < cols:
                    edges.add((k, k + 1))
                if r + 1 < rows:
                    edges.add((k, k + cols))
        return cls(rows * cols, frozenset(edges))

    @classmethod
    def complete(cls, n):
        return cls(n, frozenset((i, j) for i in range(n) for j in range(i + 1, n)))

    @classmethod
    def ring(cls, n):
        if n < 3:
            return cls.complete(n)
        return cls(n, frozenset((i, (i + 1) % n) for i in range(n)))

    @classmethod
    def parse(cls, text, n=None):
        """``grid:RxC``, ``complete:N``, ``ring:N`` or an edge list ``0-1,1-2``."""
        text = text.strip()
        kind, _, arg = text.partition(":")
        try:
            if kind == "grid":
                r, c = arg.lower().split("x")
                return cls.grid(int(r), int(c))
            if kind == "complete":
                return cls.complete(int(arg))
            if kind == "ring":
                return cls.ring(int(arg))
            pairs = [p.split("-") for p in text.replace(" ", "").split(",") if p]
            edges = frozenset((int(a), int(b)) for a, b in pairs)
        except ValueError as exc:
            raise ConfigError(f"cannot parse topology {text!r}") from exc
        if n is None:
            n = 1 + max(max(e) for e in edges) if edges else 1
        return cls(n, edges)


def metropolis_weights(graph):
    """Symmetric doubly stochastic ``W_ij = 1 / (1 + max(deg_i, deg_j))``."""
    deg = np.array([graph.degree(i) for i in range(graph.n)])
    W = np.zeros((graph.n, graph.n))
    for i, j in graph.edges:
        W[i, j] = W[j, i] = 1.0 / (1.0 + max(deg[i], deg[j]))
    W[np.diag_indices(graph.n)] = 1.0 - W.sum(axis=1)
    return W


def pair_average_matrix(n, i, j):
    W = np.eye(n)
    W[i, i] = W[j, j] = W[i, j] = W[j, i] = 0.5
    return W


SCHEMES = ("metropolis", "gossip", "identity")


class WeightMatrixSampler:
    """Source of consensus matrices ``W_t`` on a fixed graph.

    ``metropolis`` always returns the Metropolis matrix, ``gossip`` averages
    one uniformly chosen edge per draw (lazy random gossip) and ``identity``
    performs no mixing. The gossip draw uses its own RNG stream.
    """

    def __init__(self, graph, scheme="metropolis", seed=0):
        if scheme not in SCHEMES:
            raise ConfigError(f"unknown weight scheme {scheme!r}; choose from {SCHEMES}")
        if scheme == "gossip" and not graph.edges:
            raise ConfigError("gossip needs at least one edge")
        self.graph = graph
        self.scheme = scheme
        self.rng = np.random.default_rng(seed)
        self._edges = graph.sorted_edges()
        if scheme == "metropolis":
            self._fixed = metropolis_weights(graph)
        elif scheme == "identity":
            self._fixed = np.eye(graph.n)
        else:
            self._fixed = None
        if self._fixed is not None:
            self._fixed.flags.writeable = False

    @property
    def is_random(self):
        return self._fixed is None

    def sample(self):
        if self._fixed is not None:
            return self._fixed
        i, j = self._edges[self.rng.integers(len(self._edges))]
        return pair_average_matrix(self.graph.n, i, j)

    def expected_matrix(self):
        """Closed-form ``E[W]``."""
        if self._fixed is not None:
            return self._fixed.copy()
        return np.mean([pair_average_matrix(self.graph.n, i, j) for i, j in self._edges], axis=0)

    def expected_contraction_matrix(self):
        """Closed-form ``E[W^T (I - 11^T/N) W]``."""
        mats = [self._fixed] if self._fixed is not None else [
            pair_average_matrix(self.graph.n, i, j) for i, j in self._edges]
        return np.mean([_contraction_matrix(W) for W in mats], axis=0)

    def get_state(self):
        return self.rng.bit_generator.state

    def set_state(self, state):
        self.rng.bit_generator.state = state


def _contraction_matrix(W):
    n = W.shape[0]
    return W.T @ (np.eye(n) - np.full((n, n), 1.0 / n)) @ W


def check_weight_matrix(W, graph=None, tol=1e-9):
    """Raise unless ``W`` is row stochastic and supported on ``graph``."""
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[0] != W.shape[1]:
        raise AssumptionViolation("weight matrix must be square", assumption="row_stochastic")
    rows = W.sum(axis=1)
    if np.max(np.abs(rows - 1.0)) > tol:
        raise AssumptionViolation(f"weight matrix is not row stochastic (row sums {rows})",
                                  assumption="row_stochastic", value=rows)
    if graph is not None:
        allowed = graph.adjacency() + np.eye(graph.n)
        if np.any((W != 0) & (allowed == 0)):
            raise LocalityError("weight matrix mixes agents that are not neighbours")
    return W


def power_iteration(M, tol=1e-13, max_iter=100000, seed=0):
    """Largest-magnitude eigenvalue of a symmetric matrix by power iteration."""
    x = np.random.default_rng(seed).standard_normal(M.shape[0])
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(max_iter):
        y = M @ x
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return 0.0
        x_new = y / ny
        lam_new = float(x_new @ M @ x_new)
        if abs(lam_new - lam) < tol and np.linalg.norm(x_new - np.sign(x_new @ x) * x) < 1e-9:
            return abs(lam_new)
        x, lam = x_new, lam_new
    return abs(lam)


def spectral_contraction(source, n_samples=None, method="eigh", strict=False, seed=0):
    """Spectral norm of ``E[W^T (I - 11^T/N) W]``.

    ``source`` is either a fixed matrix or a :class:`WeightMatrixSampler`.
    Samplers use the closed-form expectation unless ``n_samples`` is given,
    in which case the expectation is estimated from fresh draws of an
    independent sampler seeded with ``seed``. With ``strict`` a value ``>= 1``
    raises :class:`AssumptionViolation`.
    """
    if isinstance(source, WeightMatrixSampler):
        if n_samples is None:
            M = source.expected_contraction_matrix()
        else:
            probe = WeightMatrixSampler(source.graph, source.scheme, seed)
            M = np.mean([_contraction_matrix(probe.sample()) for _ in range(n_samples)], axis=0)
    else:
        M = _contraction_matrix(np.asarray(source, dtype=float))
    M = 0.5 * (M + M.T)
    if method == "eigh":
        rho = float(np.max(np.abs(np.linalg.eigvalsh(M))))
    elif method == "power":
        rho = power_iteration(M)
    else:
        raise ValueError(f"unknown method {method!r}")
    if strict and rho >= 1.0 - 1e-12:
        raise AssumptionViolation(
            f"consensus contraction rho_W = {rho:.6f} is not below 1; the weight "
            "scheme cannot drive the agents to agreement", assumption="contraction", value=rho)
    return rho


def empirical_mean_matrix(sampler, n_draws):
    """Monte-Carlo ``E[W]`` plus the per-draw column sums (for standard errors)."""
    total = np.zeros((sampler.graph.n,) * 2)
    col_sums = np.zeros((n_draws, sampler.graph.n))
    for k in range(n_draws):
        W = sampler.sample()
        total += W
        col_sums[k] = W.sum(axis=0)
    return total / n_draws, col_sums


@dataclass
class Channel:
    """Simulated links that only deliver along graph edges (plus self).

    Every delivered message is counted by ``kind`` so callers can assert
    what crossed the network.
    """

    graph: TopologyGraph
    counts: Counter = field(default_factory=Counter)
    reads: list = field(default_factory=list)
    record_reads: bool = False

    def __post_init__(self):
        self._allowed = {i: set(self.graph.neighbors(i)) | {i} for i in range(self.graph.n)}

    def deliver(self, sender, receiver, payload, kind):
        if sender not in self._allowed[receiver]:
            raise LocalityError(f"agent {receiver} cannot hear agent {sender}")
        self.counts[kind] += 1
        if self.record_reads:
            self.reads.append((sender, receiver, kind))
        return payload
