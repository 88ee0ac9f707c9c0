"""Gossip communication and Chebyshev-accelerated gossip.

Node values are stored as ``d x n`` blocks whose column ``i`` lives on node
``i``.  A communication round is right-multiplication by the gossip matrix.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import GossipMatrixError, ParameterError
from .topology import GossipMatrix, validate_gossip

#: past this value of c2 the recursion is run on normalised iterates
LOG_SPACE_C2 = 1e6


@dataclass(frozen=True)
class ChebyshevParams:
    c1: float
    c2: float
    c3: float
    K: int
    gamma: float


def _entries(W):
    return W.entries if isinstance(W, GossipMatrix) else np.asarray(W, dtype=float)


def as_block(X, n: int) -> np.ndarray:
    """Coerce ``X`` to a finite ``d x n`` float block."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim != 2 or X.shape[1] != n:
        raise ParameterError(f"expected a block with {n} columns, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ParameterError("parameter block has non-finite entries")
    return X


def gossip_round(X, W) -> np.ndarray:
    """One synchronous exchange: ``X @ W``."""
    M = _entries(W)
    X = as_block(X, M.shape[0])
    return X @ M


def chebyshev_params(gamma: float, lambda_max: float) -> ChebyshevParams:
    if not gamma > 0:
        raise ParameterError(f"eigengap must be positive, got {gamma}")
    if gamma >= 1:
        raise ParameterError("eigengap >= 1 leaves c2 undefined; use single-step gossip (SSDA)")
    if not lambda_max > 0:
        raise ParameterError(f"lambda_max must be positive, got {lambda_max}")
    s = math.sqrt(gamma)
    return ChebyshevParams(
        c1=(1 - s) / (1 + s),
        c2=(1 + gamma) / (1 - gamma),
        c3=2.0 / ((1 + gamma) * lambda_max),
        K=int(math.floor(1.0 / s)),
        gamma=gamma,
    )


def params_for(W: GossipMatrix, K: int | None = None) -> ChebyshevParams:
    p = chebyshev_params(W.gamma, W.lambda_max)
    if K is not None:
        p = ChebyshevParams(p.c1, p.c2, p.c3, int(K), p.gamma)
    return p


def chebyshev_t(k: int, x):
    """Chebyshev polynomial ``T_k`` by the three-term recursion."""
    x = np.asarray(x, dtype=float)
    t_prev, t = np.ones_like(x), x.copy()
    if k == 0:
        return t_prev
    for _ in range(k - 1):
        t_prev, t = t, 2 * x * t - t_prev
    return t


def accelerated_gossip(X, W, params: ChebyshevParams) -> np.ndarray:
    """K rounds of Chebyshev-weighted gossip.

    Returns ``X @ P_K(c3 W)`` with ``P_K(x) = 1 - T_K(c2 (1 - x)) / T_K(c2)``,
    computed by the three-term recursion so that only K products with ``W``
    are formed.
    """
    M = _entries(W)
    X = as_block(X, M.shape[0])
    K, c2, c3 = params.K, params.c2, params.c3
    if K < 1:
        raise ParameterError(f"accelerated gossip needs K >= 1, got {K}")

    def shift(v):
        return v - c3 * (v @ M)

    if c2 <= LOG_SPACE_C2:
        a_prev, a = 1.0, c2
        x_prev, x = X, c2 * shift(X)
        with np.errstate(over="ignore", invalid="ignore"):
            for _ in range(K - 1):
                a_prev, a = a, 2 * c2 * a - a_prev
                x_prev, x = x, 2 * c2 * shift(x) - x_prev
        if not (math.isfinite(a) and np.all(np.isfinite(x))):
            raise GossipMatrixError(
                f"Chebyshev normaliser overflowed (c2={c2:.3e}, K={K}); "
                "the eigengap is too close to 1, use SSDA instead")
        return X - x / a

    # normalised recursion u_k = x_k / a_k, ratios r_k = a_{k-1} / a_k
    r = 1.0 / c2
    u_prev, u = X, shift(X)
    for _ in range(K - 1):
        r_next = 1.0 / (2 * c2 - r)
        u_prev, u = u, 2 * c2 * r_next * shift(u) - r * r_next * u_prev
        r = r_next
    if not np.all(np.isfinite(u)):
        raise GossipMatrixError(f"Chebyshev recursion overflowed (c2={c2:.3e}, K={K}); use SSDA instead")
    return X - u


def poly_gossip_matrix(W: GossipMatrix, params: ChebyshevParams) -> GossipMatrix:
    """Dense ``P_K(c3 W)``, validated as a gossip matrix.

    Diagnostic only: O(n^3).  Solvers use :func:`accelerated_gossip`.
    """
    n = W.n
    P = accelerated_gossip(np.eye(n), W, params)
    P = 0.5 * (P + P.T)
    try:
        info = validate_gossip(P)
    except GossipMatrixError as exc:
        raise GossipMatrixError(f"P_K(c3 W) is not a gossip matrix: {exc}") from exc
    return GossipMatrix(P, info.lambda_max, info.lambda_second_smallest, info.gamma, W.graph)


def chebyshev_gamma_bound(params: ChebyshevParams) -> float:
    """Guaranteed lower bound ``((1 - c1^K) / (1 + c1^K))^2`` on the eigengap of ``P_K``."""
    q = params.c1 ** params.K
    return ((1 - q) / (1 + q)) ** 2


def chebyshev_lambda_max_bound(params: ChebyshevParams) -> float:
    """Upper bound ``(1 + c1^K)^2 / (1 + c1^{2K})`` on the top eigenvalue of ``P_K``."""
    q = params.c1 ** params.K
    return (1 + q) ** 2 / (1 + q * q)
