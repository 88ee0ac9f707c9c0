"""Network topologies, gossip matrices and their spectra.

Graphs are undirected, simple and connected.  Nodes are 0-based integers and
each edge is stored once as ``(i, j, w)`` with ``i < j`` and ``w > 0``.

Random graphs draw from ``numpy.random.Generator(PCG64(seed))``, so a given
seed produces the same graph on every platform that numpy supports.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components, shortest_path

from .errors import GossipMatrixError, ParameterError

KINDS = ("path", "grid", "star", "complete", "erdos_renyi")

#: relative slack used when checking the gossip-matrix axioms
GOSSIP_TOL = 1e-9

#: upper bound on the number of Erdos-Renyi resamples before giving up
MAX_RESAMPLES = 1000


@dataclass(frozen=True)
class Graph:
    n: int
    edges: tuple[tuple[int, int, float], ...]
    kind: str = "custom"
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        if self.n < 1:
            raise ParameterError(f"graph needs at least one node, got n={self.n}")
        seen = set()
        clean = []
        for i, j, w in self.edges:
            i, j, w = int(i), int(j), float(w)
            if i == j:
                raise ParameterError(f"self-loop at node {i}")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise ParameterError(f"edge ({i}, {j}) out of range for n={self.n}")
            if not w > 0:
                raise ParameterError(f"edge ({i}, {j}) has non-positive weight {w}")
            key = (min(i, j), max(i, j))
            if key in seen:
                raise ParameterError(f"duplicate edge {key}")
            seen.add(key)
            clean.append((key[0], key[1], w))
        object.__setattr__(self, "edges", tuple(sorted(clean)))

    @property
    def num_edges(self) -> int:
        return len(self.edges)

    def adjacency(self) -> np.ndarray:
        A = np.zeros((self.n, self.n))
        for i, j, w in self.edges:
            A[i, j] = A[j, i] = w
        return A

    def _sparse_pattern(self) -> csr_matrix:
        if not self.edges:
            return csr_matrix((self.n, self.n))
        rows, cols, _ = zip(*self.edges)
        ones = np.ones(len(rows))
        return csr_matrix((ones, (rows, cols)), shape=(self.n, self.n))

    def is_connected(self) -> bool:
        ncomp, _ = connected_components(self._sparse_pattern(), directed=False)
        return ncomp == 1

    def hop_distances(self) -> np.ndarray:
        """All-pairs unweighted hop distances (``inf`` between components)."""
        return shortest_path(self._sparse_pattern(), method="D", directed=False, unweighted=True)

    def degrees(self) -> np.ndarray:
        deg = np.zeros(self.n, dtype=int)
        for i, j, _ in self.edges:
            deg[i] += 1
            deg[j] += 1
        return deg

    def to_dict(self) -> dict:
        return {"n": self.n, "edges": [[i, j, w] for i, j, w in self.edges], "kind": self.kind}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, data: dict) -> "Graph":
        try:
            n = int(data["n"])
            edges = [tuple(e) if len(e) == 3 else (e[0], e[1], 1.0) for e in data["edges"]]
        except (KeyError, TypeError, IndexError) as exc:
            raise ParameterError(f"malformed graph document: {exc}") from exc
        return cls(n=n, edges=tuple(edges), kind=str(data.get("kind", "custom")))

    @classmethod
    def from_json(cls, text: str) -> "Graph":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class SpectralInfo:
    lambda_max: float
    lambda_second_smallest: float
    gamma: float
    full_spectrum: Optional[np.ndarray] = None


@dataclass(frozen=True, eq=False)
class GossipMatrix:
    """A validated gossip matrix together with its spectral constants."""

    entries: np.ndarray
    lambda_max: float
    lambda_second_smallest: float
    gamma: float
    graph: Optional[Graph] = None

    @property
    def n(self) -> int:
        return self.entries.shape[0]

    def spectral(self) -> SpectralInfo:
        return SpectralInfo(self.lambda_max, self.lambda_second_smallest, self.gamma)


# ---------------------------------------------------------------------------
# generators


def _edges_path(n):
    return [(i, i + 1, 1.0) for i in range(n - 1)]


def _edges_grid(rows, cols):
    edges = []
    for r in range(rows):
        for c in range(cols):
            v = r * cols + c
            if c + 1 < cols:
                edges.append((v, v + 1, 1.0))
            if r + 1 < rows:
                edges.append((v, v + cols, 1.0))
    return edges


def _edges_star(n):
    return [(0, i, 1.0) for i in range(1, n)]


def _edges_complete(n):
    return [(i, j, 1.0) for i in range(n) for j in range(i + 1, n)]


def _edges_erdos_renyi(n, p, rng):
    iu, ju = np.triu_indices(n, k=1)
    keep = rng.random(iu.size) < p
    return [(int(i), int(j), 1.0) for i, j in zip(iu[keep], ju[keep])]


def _require_int(params, key, minimum):
    if key not in params:
        raise ParameterError(f"missing parameter '{key}'")
    value = params[key]
    if int(value) != value or value < minimum:
        raise ParameterError(f"'{key}' must be an integer >= {minimum}, got {value!r}")
    return int(value)


def build_graph(kind: str, params: Optional[dict] = None, seed: int = 0, **kwargs) -> Graph:
    """Build a connected graph of the given topology.

    Parameters
    ----------
    kind : str
        One of ``path``, ``grid``, ``star``, ``complete`` or ``erdos_renyi``.
    params : dict, optional
        ``n`` for path/star/complete, ``rows`` and ``cols`` for grid, ``n``
        and ``p`` for erdos_renyi.  Keyword arguments are merged in.
    seed : int
        Seed of the PCG64 generator (erdos_renyi only).  A disconnected sample
        is discarded and redrawn with ``seed + 1``, ``seed + 2``, ...; the
        number of redraws is stored in ``graph.meta["resamples"]``.
    """
    params = {**(params or {}), **kwargs}
    if kind == "grid":
        rows = _require_int(params, "rows", 1)
        cols = _require_int(params, "cols", 1)
        if rows * cols < 2:
            raise ParameterError("grid needs at least two nodes")
        return Graph(rows * cols, tuple(_edges_grid(rows, cols)), "grid", {"rows": rows, "cols": cols})

    n = _require_int(params, "n", 2)
    if kind == "path":
        return Graph(n, tuple(_edges_path(n)), "path")
    if kind == "star":
        return Graph(n, tuple(_edges_star(n)), "star")
    if kind == "complete":
        return Graph(n, tuple(_edges_complete(n)), "complete")
    if kind == "erdos_renyi":
        p = float(params.get("p", float("nan")))
        if not 0 < p <= 1:
            raise ParameterError(f"erdos_renyi needs 0 < p <= 1, got p={p}")
        for attempt in range(MAX_RESAMPLES):
            rng = np.random.Generator(np.random.PCG64(int(seed) + attempt))
            g = Graph(n, tuple(_edges_erdos_renyi(n, p, rng)), "erdos_renyi",
                      {"p": p, "seed": int(seed), "resamples": attempt})
            if g.is_connected():
                return g
        raise ParameterError(f"no connected erdos_renyi sample in {MAX_RESAMPLES} draws (n={n}, p={p})")
    raise ParameterError(f"unknown topology kind {kind!r}; expected one of {KINDS}")


# ---------------------------------------------------------------------------
# spectra


def diameter(g: Graph) -> int:
    """Exact hop diameter of a connected graph."""
    if g.n == 1:
        return 0
    dist = g.hop_distances()
    if not np.all(np.isfinite(dist)):
        raise GossipMatrixError("diameter undefined: graph is disconnected")
    return int(dist.max())


def _eigvalsh(M):
    try:
        ev = np.linalg.eigvalsh(M)
    except np.linalg.LinAlgError as exc:
        raise GossipMatrixError(f"symmetric eigensolve failed: {exc}") from exc
    if not np.all(np.isfinite(ev)):
        raise GossipMatrixError("symmetric eigensolve returned non-finite eigenvalues")
    return ev


def spectral_info(W, full: bool = False) -> SpectralInfo:
    """Largest and second-smallest eigenvalues of a gossip matrix and their ratio.

    Accepts a :class:`GossipMatrix` or a raw symmetric array.  The smallest
    eigenvalue is assumed to be the zero of the consensus direction.
    """
    M = W.entries if isinstance(W, GossipMatrix) else np.asarray(W, dtype=float)
    ev = _eigvalsh(0.5 * (M + M.T))
    lam_max = float(ev[-1])
    lam2 = float(ev[1]) if ev.size > 1 else 0.0
    if lam_max <= 0:
        raise GossipMatrixError("gossip matrix has no positive eigenvalue")
    lam2 = max(lam2, 0.0)
    return SpectralInfo(lam_max, lam2, lam2 / lam_max, ev if full else None)


def validate_gossip(M, graph: Optional[Graph] = None, tol: float = GOSSIP_TOL) -> SpectralInfo:
    """Check the four gossip-matrix conditions and return the spectrum.

    Raises :class:`GossipMatrixError` naming the first condition violated.
    """
    M = np.asarray(M, dtype=float)
    n = M.shape[0]
    if M.ndim != 2 or M.shape[1] != n:
        raise GossipMatrixError(f"gossip matrix must be square, got shape {M.shape}")
    scale = max(np.abs(M).max(), 1.0)
    if np.abs(M - M.T).max() > tol * scale:
        raise GossipMatrixError("gossip matrix is not symmetric")
    ev = _eigvalsh(0.5 * (M + M.T))
    lam_max = ev[-1]
    if lam_max <= 0:
        raise GossipMatrixError("gossip matrix has no positive eigenvalue")
    if ev[0] < -tol * lam_max:
        raise GossipMatrixError(f"gossip matrix is not PSD (min eigenvalue {ev[0]:.3e})")
    if np.abs(M @ np.ones(n)).max() > tol * scale * n:
        raise GossipMatrixError("constant vector is not in the kernel")
    if n > 1 and ev[1] <= tol * lam_max:
        raise GossipMatrixError("kernel has dimension > 1 (disconnected network)")
    if graph is not None:
        allowed = np.eye(n, dtype=bool)
        for i, j, _ in graph.edges:
            allowed[i, j] = allowed[j, i] = True
        if np.any(np.abs(M[~allowed]) > tol * scale):
            raise GossipMatrixError("gossip matrix has entries outside the network edges")
    lam2 = float(ev[1]) if n > 1 else 0.0
    return SpectralInfo(float(lam_max), lam2, lam2 / float(lam_max), ev)


def gossip_matrix(M, graph: Optional[Graph] = None) -> GossipMatrix:
    """Wrap a raw matrix as a validated :class:`GossipMatrix`."""
    M = np.array(M, dtype=float)
    info = validate_gossip(M, graph)
    return GossipMatrix(M, info.lambda_max, info.lambda_second_smallest, info.gamma, graph)


def laplacian_matrix(g: Graph) -> np.ndarray:
    A = g.adjacency()
    return np.diag(A.sum(axis=1)) - A


def laplacian(g: Graph) -> GossipMatrix:
    """Weighted graph Laplacian ``D - A`` as a gossip matrix."""
    if not g.is_connected():
        raise GossipMatrixError("Laplacian kernel has dimension > 1: graph is disconnected")
    return gossip_matrix(laplacian_matrix(g), g)


def path_gamma(n: int) -> float:
    """Eigengap of the unweighted path Laplacian on ``n`` nodes."""
    c = math.cos(math.pi / n)
    return (1 - c) / (1 + c)


def describe(g: Graph) -> dict:
    W = laplacian(g)
    return {
        "n": g.n,
        "edges": g.num_edges,
        "kind": g.kind,
        "diameter": diameter(g),
        "lambda_max": W.lambda_max,
        "lambda_second_smallest": W.lambda_second_smallest,
        "gamma": W.gamma,
        "inv_sqrt_gamma": 1.0 / math.sqrt(W.gamma),
    }


def graph_from_edges(n: int, edges: Iterable, kind: str = "custom") -> Graph:
    return Graph(n, tuple((i, j, w) for i, j, w in edges), kind)
