"""Local objective oracles and the global averaged objective.

Every local function exposes its value, gradient, Hessian, the gradient of
its Fenchel conjugate, and its strong convexity / smoothness moduli.  The
conjugate gradient is the primal point at which the gradient equals ``x``::

    conj_grad(x) = argmin_theta f(theta) - x . theta

so ``grad(conj_grad(x)) == x`` up to solver tolerance.
"""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np
from scipy.linalg import cho_factor, cho_solve, eigh
from scipy.special import expit

from .errors import ConvergenceError, ParameterError

#: relative tolerance of the inner Newton solve for logistic conjugates
CONJ_TOL = 1e-10
CONJ_MAX_ITER = 100


def softplus_neg(s):
    """``log(1 + exp(-s))`` elementwise, overflow-safe."""
    s = np.asarray(s, dtype=float)
    out = np.maximum(-s, 0.0)
    out += np.log1p(np.exp(-np.abs(s)))
    return out


class LocalObjective:
    """Interface for a strongly convex, smooth local function."""

    kind = "abstract"
    alpha: float
    beta: float
    dim: int

    def value(self, theta):
        raise NotImplementedError

    def grad(self, theta):
        raise NotImplementedError

    def hessian(self, theta):
        raise NotImplementedError

    def conj_grad(self, x, warm_start=None):
        raise NotImplementedError

    def shifted(self, s: float) -> "LocalObjective":
        """Return ``theta -> f(theta) - (s/2) ||theta||^2``."""
        raise NotImplementedError

    @property
    def kappa(self) -> float:
        return self.beta / self.alpha


class QuadraticObjective(LocalObjective):
    """``f(theta) = 0.5 theta' H theta - b' theta + const`` with ``H`` positive definite."""

    kind = "quadratic"

    def __init__(self, H, b, const: float = 0.0, alpha=None, beta=None):
        H = np.array(H, dtype=float)
        b = np.array(b, dtype=float).reshape(-1)
        if H.ndim != 2 or H.shape != (b.size, b.size):
            raise ParameterError(f"H has shape {H.shape} but b has size {b.size}")
        self.H = 0.5 * (H + H.T)
        self.b = b
        self.const = float(const)
        self.dim = b.size
        if alpha is None or beta is None:
            ev = eigh(self.H, eigvals_only=True)
            alpha = ev[0] if alpha is None else alpha
            beta = ev[-1] if beta is None else beta
        if not alpha > 0:
            raise ParameterError(f"quadratic is not strongly convex (alpha={alpha})")
        self.alpha = float(alpha)
        self.beta = float(beta)
        self._chol = cho_factor(self.H)

    def value(self, theta):
        theta = np.asarray(theta, dtype=float)
        return float(0.5 * theta @ self.H @ theta - self.b @ theta + self.const)

    def grad(self, theta):
        return self.H @ np.asarray(theta, dtype=float) - self.b

    def hessian(self, theta=None):
        return self.H

    def conj_grad(self, x, warm_start=None):
        return cho_solve(self._chol, np.asarray(x, dtype=float) + self.b)

    def minimizer(self):
        return cho_solve(self._chol, self.b)

    def shifted(self, s):
        return QuadraticObjective(self.H - s * np.eye(self.dim), self.b, self.const,
                                  alpha=self.alpha - s, beta=self.beta - s)


class LeastSquaresObjective(QuadraticObjective):
    """``(1/m) ||y - X' theta||^2 + c ||theta||^2`` on a shard ``X`` of shape ``d x m``."""

    kind = "least_squares"

    def __init__(self, X, y, c):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float).reshape(-1)
        if c <= 0:
            raise ParameterError(f"regularisation c must be positive for strong convexity, got {c}")
        if X.ndim != 2 or X.shape[1] != y.size:
            raise ParameterError(f"X has shape {X.shape} but y has {y.size} entries")
        d, m = X.shape
        self.X, self.y, self.c, self.m = X, y, float(c), m
        if m == 0:
            G, b, const = np.zeros((d, d)), np.zeros(d), 0.0
        else:
            G = (2.0 / m) * (X @ X.T)
            b = (2.0 / m) * (X @ y)
            const = float(y @ y) / m
        ev = eigh(G, eigvals_only=True) if d else np.zeros(1)
        super().__init__(G + 2 * c * np.eye(d), b, const,
                         alpha=2 * c + max(ev[0], 0.0), beta=2 * c + ev[-1])


def make_least_squares(X_i, y_i, c) -> LeastSquaresObjective:
    return LeastSquaresObjective(X_i, y_i, c)


class LogisticObjective(LocalObjective):
    """``(1/m) sum_j log(1 + exp(-y_j x_j' theta)) + c ||theta||^2``."""

    kind = "logistic"

    def __init__(self, X, y, c):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float).reshape(-1)
        if c <= 0:
            raise ParameterError(f"regularisation c must be positive for strong convexity, got {c}")
        if X.ndim != 2 or X.shape[1] != y.size:
            raise ParameterError(f"X has shape {X.shape} but y has {y.size} entries")
        if y.size and not np.all(np.isin(y, (-1.0, 1.0))):
            raise ParameterError("logistic labels must be -1 or 1")
        self.X, self.y, self.c = X, y, float(c)
        self.dim, self.m = X.shape
        self.Z = X * y  # column j is y_j x_j
        top = eigh(X @ X.T, eigvals_only=True)[-1] if self.m else 0.0
        self.alpha = 2 * self.c
        self.beta = 2 * self.c + top / (4 * self.m) if self.m else 2 * self.c
        self._warm = None

    def value(self, theta):
        theta = np.asarray(theta, dtype=float)
        loss = softplus_neg(self.Z.T @ theta).mean() if self.m else 0.0
        return float(loss + self.c * theta @ theta)

    def grad(self, theta):
        theta = np.asarray(theta, dtype=float)
        g = 2 * self.c * theta
        if self.m:
            g = g - self.Z @ expit(-(self.Z.T @ theta)) / self.m
        return g

    def hessian(self, theta):
        theta = np.asarray(theta, dtype=float)
        H = 2 * self.c * np.eye(self.dim)
        if self.m:
            s = expit(self.Z.T @ theta)
            H = H + (self.Z * (s * (1 - s))) @ self.Z.T / self.m
        return H

    def conj_grad(self, x, warm_start=None):
        """Damped Newton on ``f(theta) - x' theta``, warm-started from the last solution."""
        x = np.asarray(x, dtype=float)
        if self.m == 0:
            return x / (2 * self.c)
        theta0 = warm_start if warm_start is not None else self._warm
        theta0 = np.zeros(self.dim) if theta0 is None else np.asarray(theta0, dtype=float)
        theta = _logistic_conj_newton(self.Z[None], np.array([self.c]), x[:, None], theta0[:, None])[:, 0]
        self._warm = theta
        return theta

    def shifted(self, s):
        return LogisticObjective(self.X, self.y, self.c - s / 2)


def make_logistic(X_i, y_i, c) -> LogisticObjective:
    return LogisticObjective(X_i, y_i, c)


def _logistic_conj_newton(Zs, cs, Xt, theta0, tol=CONJ_TOL, max_iter=CONJ_MAX_ITER):
    """Batched damped Newton for ``grad f_i(theta_i) = x_i``.

    ``Zs`` has shape ``(n, d, m)`` (labels folded in), ``cs`` shape ``(n,)``,
    ``Xt`` and ``theta0`` shape ``(d, n)``.
    """
    n, d, m = Zs.shape
    theta = np.array(theta0, dtype=float)
    eye = np.eye(d)
    thresh = tol * np.maximum(1.0, np.linalg.norm(Xt, axis=0))

    def phi(th):
        s = np.einsum("ndm,dn->nm", Zs, th)
        return softplus_neg(s).mean(axis=1) + cs * (th * th).sum(axis=0) - (Xt * th).sum(axis=0)

    for _ in range(max_iter):
        s = np.einsum("ndm,dn->nm", Zs, theta)
        sig = expit(-s)
        g = 2 * cs * theta - np.einsum("ndm,nm->dn", Zs, sig) / m - Xt
        res = np.linalg.norm(g, axis=0)
        active = res > thresh
        if not active.any():
            return theta
        w = sig * (1 - sig)
        H = np.einsum("ndm,nm,nem->nde", Zs, w, Zs) / m + 2 * cs[:, None, None] * eye
        step = -np.linalg.solve(H, g.T[:, :, None])[:, :, 0].T
        step[:, ~active] = 0.0
        # backtracking on the nodes still moving
        f0 = phi(theta)
        slope = (g * step).sum(axis=0)
        t = np.ones(n)
        for _ls in range(50):
            trial = theta + t * step
            ok = phi(trial) <= f0 + 1e-4 * t * slope + 1e-15 * np.abs(f0)
            if ok.all():
                break
            t = np.where(ok, t, 0.5 * t)
        theta = theta + t * step
    s = np.einsum("ndm,dn->nm", Zs, theta)
    g = 2 * cs * theta - np.einsum("ndm,nm->dn", Zs, expit(-s)) / m - Xt
    res = np.linalg.norm(g, axis=0)
    if np.any(res > thresh):
        raise ConvergenceError(
            f"logistic conjugate Newton did not converge in {max_iter} iterations "
            f"(max residual {res.max():.3e})", residual=float(res.max()))
    return theta


def _batched_apply(mats, X):
    """Column ``i`` of the result is ``mats[i] @ X[:, i]``."""
    return np.matmul(mats, X.T[:, :, None])[:, :, 0].T


class NodeOracles:
    """Batched oracles for all nodes acting on ``d x n`` blocks.

    Homogeneous quadratic or equal-size logistic stacks are vectorised;
    anything else falls back to a per-node loop.  The logistic warm-start
    cache lives here, so each solver run should own its own instance.
    """

    def __init__(self, objs: Sequence[LocalObjective]):
        objs = list(objs)
        if not objs:
            raise ParameterError("need at least one local objective")
        dims = {o.dim for o in objs}
        if len(dims) != 1:
            raise ParameterError(f"local objectives disagree on dimension: {sorted(dims)}")
        self.objs = objs
        self.n = len(objs)
        self.dim = dims.pop()
        self.alphas = np.array([o.alpha for o in objs])
        self.betas = np.array([o.beta for o in objs])
        self.mode = "loop"
        if all(isinstance(o, QuadraticObjective) for o in objs):
            self.mode = "quadratic"
            self.Hs = np.stack([o.H for o in objs])
            self.Hinv = np.linalg.inv(self.Hs)
            self.bs = np.stack([o.b for o in objs], axis=1)
        elif all(isinstance(o, LogisticObjective) for o in objs) and len({o.m for o in objs}) == 1 and objs[0].m > 0:
            self.mode = "logistic"
            self.Zs = np.stack([o.Z for o in objs])
            self.cs = np.array([o.c for o in objs])
        self._warm = np.zeros((self.dim, self.n))

    @property
    def alpha(self) -> float:
        return float(self.alphas.min())

    @property
    def beta(self) -> float:
        return float(self.betas.max())

    @property
    def kappa_l(self) -> float:
        return self.beta / self.alpha

    def grads(self, Theta):
        if self.mode == "quadratic":
            return _batched_apply(self.Hs, Theta) - self.bs
        if self.mode == "logistic":
            s = np.einsum("ndm,dn->nm", self.Zs, Theta)
            m = self.Zs.shape[2]
            return 2 * self.cs * Theta - np.einsum("ndm,nm->dn", self.Zs, expit(-s)) / m
        return np.stack([o.grad(Theta[:, i]) for i, o in enumerate(self.objs)], axis=1)

    def conj_grads(self, X):
        if self.mode == "quadratic":
            return _batched_apply(self.Hinv, X + self.bs)
        if self.mode == "logistic":
            self._warm = _logistic_conj_newton(self.Zs, self.cs, X, self._warm)
            return self._warm.copy()
        out = np.stack([o.conj_grad(X[:, i], warm_start=self._warm[:, i])
                        for i, o in enumerate(self.objs)], axis=1)
        self._warm = out.copy()
        return out


class GlobalObjective:
    """The average ``(1/n) sum_i f_i`` of the local functions."""

    def __init__(self, locals_: Sequence[LocalObjective]):
        self.locals = list(locals_)
        if not self.locals:
            raise ParameterError("need at least one local objective")
        self.n = len(self.locals)
        self.dim = self.locals[0].dim
        self.kind = "mixed"
        if all(isinstance(o, QuadraticObjective) for o in self.locals):
            self.kind = "quadratic"
            self.H = sum(o.H for o in self.locals) / self.n
            self.b = sum(o.b for o in self.locals) / self.n
            self.const = sum(o.const for o in self.locals) / self.n
            ev = eigh(self.H, eigvals_only=True)
            self.alpha_g, self.beta_g = float(ev[0]), float(ev[-1])
        elif all(isinstance(o, LogisticObjective) for o in self.locals):
            self.kind = "logistic"
            self.Z = np.concatenate([o.Z for o in self.locals], axis=1)
            self.weights = np.concatenate([np.full(o.m, 1.0 / (self.n * o.m)) for o in self.locals])
            self.c_bar = float(np.mean([o.c for o in self.locals]))
            total = self.Z.shape[1]
            top = eigh(self.Z @ self.Z.T, eigvals_only=True)[-1] if total else 0.0
            self.alpha_g = 2 * self.c_bar
            self.beta_g = 2 * self.c_bar + (top / (4 * total) if total else 0.0)
        else:
            self.alpha_g = float(np.mean([o.alpha for o in self.locals]))
            self.beta_g = float(np.mean([o.beta for o in self.locals]))

    @property
    def kappa_g(self) -> float:
        return self.beta_g / self.alpha_g

    @property
    def kappa_l(self) -> float:
        return max(o.beta for o in self.locals) / min(o.alpha for o in self.locals)

    def value(self, theta) -> float:
        return float(self.values(np.asarray(theta, dtype=float)[:, None])[0])

    def values(self, Theta) -> np.ndarray:
        """``f_bar`` evaluated at every column of ``Theta``."""
        Theta = np.asarray(Theta, dtype=float)
        if self.kind == "quadratic":
            return 0.5 * np.einsum("in,ij,jn->n", Theta, self.H, Theta) - self.b @ Theta + self.const
        if self.kind == "logistic":
            loss = self.weights @ softplus_neg(self.Z.T @ Theta)
            return loss + self.c_bar * (Theta * Theta).sum(axis=0)
        return np.array([np.mean([o.value(Theta[:, k]) for o in self.locals]) for k in range(Theta.shape[1])])

    def suboptimality(self, Theta, theta_star) -> np.ndarray:
        """``f_bar(theta_k) - f_bar(theta*)`` per column; exact quadratic form for quadratics."""
        Theta = np.asarray(Theta, dtype=float)
        if self.kind == "quadratic":
            D = Theta - np.asarray(theta_star)[:, None]
            return 0.5 * np.einsum("in,ij,jn->n", D, self.H, D)
        return self.values(Theta) - self.value(theta_star)

    def grad(self, theta):
        theta = np.asarray(theta, dtype=float)
        if self.kind == "quadratic":
            return self.H @ theta - self.b
        if self.kind == "logistic":
            return 2 * self.c_bar * theta - self.Z @ (self.weights * expit(-(self.Z.T @ theta)))
        return sum(o.grad(theta) for o in self.locals) / self.n

    def hessian(self, theta):
        theta = np.asarray(theta, dtype=float)
        if self.kind == "quadratic":
            return self.H
        if self.kind == "logistic":
            s = expit(self.Z.T @ theta)
            return 2 * self.c_bar * np.eye(self.dim) + (self.Z * (self.weights * s * (1 - s))) @ self.Z.T
        return sum(o.hessian(theta) for o in self.locals) / self.n


def rescale_average_strong_convexity(locals_: Sequence[LocalObjective]):
    """Shift quadratic mass between nodes so every node has the average modulus.

    Node ``i`` gets ``g_i(theta) = f_i(theta) - ((alpha_i - alpha_bar)/2) ||theta||^2``,
    which is ``alpha_bar``-strongly convex and ``(beta_i - alpha_i + alpha_bar)``-smooth.
    The shifts sum to zero, so the global function is unchanged.

    Returns
    -------
    (list of LocalObjective, float)
        The proxy functions and ``max_i (beta_i - alpha_i) / alpha_bar - 1``.
    """
    locals_ = list(locals_)
    alphas = np.array([o.alpha for o in locals_])
    betas = np.array([o.beta for o in locals_])
    alpha_bar = float(alphas.mean())
    if not alpha_bar > 0:
        raise ParameterError("average strong convexity must be positive")
    proxies = [o.shifted(a - alpha_bar) if a != alpha_bar else o for o, a in zip(locals_, alphas)]
    kappa = float((betas - alphas).max() / alpha_bar - 1)
    return proxies, kappa


def reference_solution(glob: GlobalObjective, tol: float = 1e-13, max_iter: int = 100) -> np.ndarray:
    """Minimiser of ``f_bar`` by full-batch Newton, to gradient norm ``tol``."""
    theta = np.zeros(glob.dim)
    if glob.kind == "quadratic":
        theta = np.linalg.solve(glob.H, glob.b)
    best, best_norm = theta, math.inf
    for _ in range(max_iter):
        g = glob.grad(theta)
        gnorm = float(np.linalg.norm(g))
        if gnorm < best_norm:
            best, best_norm = theta, gnorm
        if gnorm <= tol:
            return theta
        step = np.linalg.solve(glob.hessian(theta), g)
        if glob.kind == "quadratic":
            theta = theta - step
            continue
        f0, t = glob.value(theta), 1.0
        while t > 1e-12 and glob.value(theta - t * step) > f0 - 1e-4 * t * (g @ step) + 1e-15 * abs(f0):
            t *= 0.5
        theta = theta - t * step
    # floating point may stall a hair above tol; accept a stall at round-off level
    if best_norm <= max(tol, 64 * np.finfo(float).eps * max(1.0, float(np.linalg.norm(glob.grad(np.zeros(glob.dim)))))):
        return best
    raise ConvergenceError(f"reference Newton solve stalled at gradient norm {best_norm:.3e}", residual=best_norm)
