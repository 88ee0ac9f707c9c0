"""Worst-case quadratic instances, hard gossip matrices and lower-bound curves.

The hard instance splits a tridiagonal chain over two node sets ``A`` and
``far`` (nodes at hop distance at least ``d_split`` from ``A``).  Nodes in
``A`` hold the couplings ``(2,3), (4,5), ...`` plus the linear term on the
first coordinate, nodes in ``far`` hold ``(1,2), (3,4), ...``.  Starting from
zero, a node can only reveal one new coordinate per local computation, and
the next one is held at distance ``d_split``; so after time ``t`` no memory
has a non-zero past coordinate ``t / (1 + d_split * tau) + 1``.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import GossipMatrixError, ParameterError, SupportViolation
from .objectives import GlobalObjective, QuadraticObjective
from .topology import Graph, GossipMatrix, build_graph, gossip_matrix, graph_from_edges, path_gamma

#: default number of retained coordinates
DEFAULT_TRUNCATION = 200

#: bisection stops once the eigengap is this close to the target
GAMMA_TOL = 1e-9


def chain_rate(kappa: float) -> float:
    """``(sqrt(kappa) - 1) / (sqrt(kappa) + 1)``."""
    s = math.sqrt(kappa)
    return (s - 1) / (s + 1)


def odd_pairs(D: int) -> np.ndarray:
    """Block diagonal of ``[[1, -1], [-1, 1]]`` on coordinates ``(1,2), (3,4), ...``."""
    M = np.zeros((D, D))
    for k in range(0, D - 1, 2):
        M[k:k + 2, k:k + 2] += [[1.0, -1.0], [-1.0, 1.0]]
    return M


def even_pairs(D: int) -> np.ndarray:
    """``e1 e1'`` plus the blocks on ``(2,3), (4,5), ...``; the last diagonal entry closes the chain."""
    M = np.zeros((D, D))
    M[0, 0] = 1.0
    for k in range(1, D - 1, 2):
        M[k:k + 2, k:k + 2] += [[1.0, -1.0], [-1.0, 1.0]]
    M[D - 1, D - 1] += 1.0
    return M


@dataclass(frozen=True, eq=False)
class HardInstance:
    objectives: list
    set_A: tuple
    set_far: tuple
    d_split: int
    alpha: float
    beta: float
    D: int
    theta_star: np.ndarray
    graph: Graph
    meta: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.graph.n

    @property
    def rate(self) -> float:
        return chain_rate(self.beta / self.alpha)

    @property
    def tail(self) -> float:
        """Truncation error bound ``q^(2D)``."""
        return self.rate ** (2 * self.D)

    @property
    def kappa_l(self) -> float:
        return max(o.beta for o in self.objectives) / min(o.alpha for o in self.objectives)

    @property
    def local_alpha(self) -> float:
        return self.alpha / self.n

    def global_objective(self) -> GlobalObjective:
        return GlobalObjective(self.objectives)

    def to_dict(self) -> dict:
        return {
            "task": "hard_instance",
            "graph": self.graph.to_dict(),
            "A": list(self.set_A),
            "d_split": self.d_split,
            "alpha": self.alpha,
            "beta": self.beta,
            "D": self.D,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)


def hard_instance_from_dict(data: dict) -> HardInstance:
    if data.get("task") != "hard_instance":
        raise ParameterError("not a hard-instance document")
    g = Graph.from_dict(data["graph"])
    return build_hard_instance(g, data["A"], int(data["d_split"]), float(data["alpha"]),
                               float(data["beta"]), int(data["D"]))


def far_set(g: Graph, A: Sequence[int], d_split: int) -> tuple:
    """Nodes at hop distance at least ``d_split`` from every node of ``A``."""
    dist = g.hop_distances()[list(A)].min(axis=0)
    return tuple(int(v) for v in np.flatnonzero(dist >= d_split))


def build_hard_instance(g: Graph, A: Sequence[int], d_split: int, alpha: float, beta: float,
                        D: int = DEFAULT_TRUNCATION) -> HardInstance:
    """Split chain quadratic on ``g``.

    ``alpha`` and ``beta`` are the moduli of the sum ``sum_i f_i``; each node
    carries ``(alpha / n) I`` plus its share of the chain.
    """
    A = tuple(sorted({int(a) for a in A}))
    if not A:
        raise ParameterError("set A must be non-empty")
    if any(a < 0 or a >= g.n for a in A):
        raise ParameterError("set A contains nodes outside the graph")
    if not (alpha > 0 and beta >= alpha):
        raise ParameterError(f"need beta >= alpha > 0, got alpha={alpha}, beta={beta}")
    if D < 4 or D % 2:
        raise ParameterError(f"truncation D must be even and >= 4, got {D}")
    if d_split < 1:
        raise ParameterError("d_split must be positive")
    far = far_set(g, A, d_split)
    if not far:
        raise ParameterError(f"no node lies at distance >= {d_split} from A; the instance is invalid")
    n = g.n
    base = (alpha / n) * np.eye(D)
    sA = (beta - alpha) / (4 * len(A))
    sF = (beta - alpha) / (4 * len(far))
    M_A, M_F = even_pairs(D), odd_pairs(D)
    e1 = np.zeros(D)
    e1[0] = 1.0
    # the extra modulus from each pair block is at most 2 * scale
    objs = []
    for i in range(n):
        if i in A:
            objs.append(QuadraticObjective(base + sA * M_A, sA * e1, alpha=alpha / n, beta=alpha / n + 2 * sA))
        elif i in far:
            objs.append(QuadraticObjective(base + sF * M_F, np.zeros(D), alpha=alpha / n, beta=alpha / n + 2 * sF))
        else:
            objs.append(QuadraticObjective(base, np.zeros(D), alpha=alpha / n, beta=alpha / n))
    q = chain_rate(beta / alpha)
    theta_star = q ** np.arange(1, D + 1)
    return HardInstance(objs, A, far, int(d_split), float(alpha), float(beta), int(D), theta_star, g)


def default_split_sizes(n: int) -> tuple:
    """``(|A|, d_split) = (ceil(n / 32), (1 - 1/16) n - 1)`` rounded down."""
    return math.ceil(n / 32), int(math.floor((1 - 1 / 16) * n - 1))


def default_hard_instance(n: int = 16, kappa_l: float = 1024.0, D: int = DEFAULT_TRUNCATION,
                           alpha: float = 1.0, graph: Optional[Graph] = None) -> HardInstance:
    """Path instance with ``|A| = ceil(n/32)``, ``d = (1 - 1/16) n - 1``, tuned to a local condition number."""
    g = graph or build_graph("path", {"n": n})
    size_A, d = default_split_sizes(g.n)
    A = tuple(range(size_A))
    far = far_set(g, A, d)
    if not far:
        raise ParameterError(f"graph too small for the default split: nothing at distance {d}")
    smallest = min(len(A), len(far))
    # kappa_l = 1 + n (kappa - 1) / (2 |smallest set|)
    kappa = 1 + 2 * smallest * (kappa_l - 1) / g.n
    inst = build_hard_instance(g, A, d, alpha, alpha * kappa, D)
    inst.meta.update({"preset": "default_split", "target_kappa_l": kappa_l})
    return inst


# ---------------------------------------------------------------------------
# gossip matrices with a prescribed eigengap


def weighted_path_laplacian(n: int, a: float) -> np.ndarray:
    """Path Laplacian on ``n`` nodes with first edge weight ``1 - a``."""
    L = np.zeros((n, n))
    for i in range(n - 1):
        w = 1.0 - a if i == 0 else 1.0
        L[i, i] += w
        L[i + 1, i + 1] += w
        L[i, i + 1] -= w
        L[i + 1, i] -= w
    return L


def weighted_triangle_laplacian(a: float) -> np.ndarray:
    """Path ``0-1-2`` plus edge ``(0, 2)`` of weight ``a``; interpolates gaps ``1/3`` to ``1``."""
    L = weighted_path_laplacian(3, 0.0)
    L[0, 0] += a
    L[2, 2] += a
    L[0, 2] -= a
    L[2, 0] -= a
    return L


def _gap(L) -> float:
    ev = np.linalg.eigvalsh(L)
    return float(ev[1] / ev[-1])


def path_size_for_gamma(gamma: float) -> int:
    """Largest ``n`` with ``gamma_n >= gamma``."""
    n = 2
    while path_gamma(n + 1) >= gamma:
        n += 1
    return n


def hard_gossip_matrix(gamma_target: float, tol: float = GAMMA_TOL, max_iter: int = 200) -> GossipMatrix:
    """Weighted path (or triangle) whose Laplacian has eigengap ``gamma_target``."""
    if not 0 < gamma_target <= 1:
        raise ParameterError(f"target eigengap must lie in (0, 1], got {gamma_target}")
    n = path_size_for_gamma(gamma_target)
    if n == 2:
        build, lo, hi, increasing = weighted_triangle_laplacian, 0.0, 1.0, True
        edges = lambda a: [(0, 1, 1.0), (1, 2, 1.0)] + ([(0, 2, a)] if a > 0 else [])  # noqa: E731
        size = 3
    else:
        build, lo, hi, increasing = (lambda a: weighted_path_laplacian(n, a)), 0.0, 1.0, False
        edges = lambda a: [(i, i + 1, 1.0 - a if i == 0 else 1.0) for i in range(n - 1)]  # noqa: E731
        size = n
    g_lo = _gap(build(lo))
    if abs(g_lo - gamma_target) <= tol:
        a = lo
    else:
        # gap at hi: 1 for the complete triangle, 0 for the cut path
        g_hi = 1.0 if increasing else 0.0
        if not (min(g_lo, g_hi) - tol <= gamma_target <= max(g_lo, g_hi) + tol):
            raise GossipMatrixError(f"bisection does not bracket gamma={gamma_target}")
        for _ in range(max_iter):
            a = 0.5 * (lo + hi)
            g = _gap(build(a))
            if abs(g - gamma_target) <= tol:
                break
            if (g < gamma_target) == increasing:
                lo = a
            else:
                hi = a
        else:
            raise GossipMatrixError(f"bisection stalled at a={a}, gamma={g}")
    graph = graph_from_edges(size, edges(a), kind="weighted_path" if size == n and n != 2 else "weighted_triangle")
    W = gossip_matrix(build(a), graph)
    return W


# ---------------------------------------------------------------------------
# lower-bound curves


def lb_curve_centralized(t, kappa_g: float, delta: int, tau: float, R0: float, alpha: float = 1.0):
    """``(alpha/2) (1 - 4/sqrt(kappa_g))^(1 + t/(1 + delta tau)) R0``; zero when ``kappa_g <= 16``."""
    t = np.asarray(t, dtype=float)
    if kappa_g <= 16:
        return np.zeros_like(t) if t.ndim else 0.0
    base = 1 - 4 / math.sqrt(kappa_g)
    out = 0.5 * alpha * base ** (1 + t / (1 + delta * tau)) * R0
    return out if t.ndim else float(out)


def lb_curve_decentralized(t, kappa_l: float, gamma: float, tau: float, R0: float, alpha: float = 1.0):
    """``(3 alpha/2) (1 - 16/sqrt(kappa_l))^(1 + t/(1 + tau/(5 sqrt(gamma)))) R0``; zero when ``kappa_l <= 256``."""
    t = np.asarray(t, dtype=float)
    if kappa_l <= 256:
        return np.zeros_like(t) if t.ndim else 0.0
    base = 1 - 16 / math.sqrt(kappa_l)
    out = 1.5 * alpha * base ** (1 + t / (1 + tau / (5 * math.sqrt(gamma)))) * R0
    return out if t.ndim else float(out)


# ---------------------------------------------------------------------------
# support tracking


def last_nonzero(block) -> np.ndarray:
    """1-indexed position of the last exactly non-zero row in each column (0 if none)."""
    B = np.asarray(block)
    nz = B != 0
    idx = B.shape[0] - np.argmax(nz[::-1], axis=0)
    return np.where(nz.any(axis=0), idx, 0)


@dataclass
class SupportProfile:
    times: list = field(default_factory=list)
    k: list = field(default_factory=list)

    def as_array(self) -> np.ndarray:
        return np.array(self.k, dtype=int)

    def ceiling(self, d_split: int, tau: float) -> np.ndarray:
        return np.asarray(self.times, dtype=float) / (1 + d_split * tau) + 1

    def violations(self, d_split: int, tau: float) -> list:
        """``(time, node, k)`` triples exceeding ``t / (1 + d tau) + 1``."""
        K = self.as_array()
        if K.size == 0:
            return []
        cap = self.ceiling(d_split, tau)
        bad = np.argwhere(K > cap[:, None] + 1e-12)
        return [(self.times[r], int(c), int(K[r, c])) for r, c in bad]

    def is_monotone(self) -> bool:
        K = self.as_array()
        return bool(np.all(np.diff(K, axis=0) >= 0)) if len(K) > 1 else True


class SupportTracker:
    """Solver callback recording the support of every node's memory."""

    def __init__(self):
        self.profile = SupportProfile()
        self._running = None

    def __call__(self, solver):
        ks = np.max([last_nonzero(b) for b in solver.memory()], axis=0)
        # memory is cumulative: once seen, a coordinate stays known
        self._running = ks if self._running is None else np.maximum(self._running, ks)
        self.profile.times.append(float(solver.clock))
        self.profile.k.append(self._running.copy())


def track_support(solver, T: int) -> SupportProfile:
    """Step ``solver`` ``T`` times and return its support profile."""
    tracker = SupportTracker()
    tracker(solver)
    for _ in range(T):
        solver.step()
        tracker(solver)
    return tracker.profile


def certify_support(profile: SupportProfile, d_split: int, tau: float) -> None:
    bad = profile.violations(d_split, tau)
    if bad:
        t, i, k = bad[0]
        raise SupportViolation(f"node {i} reached coordinate {k} at time {t}, above the propagation ceiling",
                               bad)
