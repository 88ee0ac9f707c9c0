"""Distributed solvers with a simulated-time cost model.

One local gradient or conjugate-gradient evaluation costs one time unit, one
synchronous gossip round costs ``tau``.  Every solver is a small stepping
object; :func:`run` drives it and records a :class:`Trace`.

Algorithms
----------
``ssda``    dual Nesterov with one gossip round per iteration
``msda``    dual Nesterov with K Chebyshev-weighted gossip rounds per iteration
``dagd``    Nesterov on the average function through a master node
``extra``   EXTRA baseline
``diging``  DIGing gradient-tracking baseline
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import DivergenceError, ParameterError
from .gossip import (accelerated_gossip, chebyshev_params)
from .objectives import GlobalObjective, LocalObjective, NodeOracles, reference_solution
from .topology import GossipMatrix

DIVERGENCE_THRESHOLD = 1e12

#: eigengap above which MSDA falls back to SSDA
MSDA_GAMMA_CUTOFF = 0.9

CSV_HEADER = ("algorithm", "iteration", "clock", "error", "consensus_residual")


@dataclass(frozen=True)
class TimeModel:
    tau: float = 1.0
    grad_cost: float = 1.0

    def __post_init__(self):
        if not self.tau > 0:
            raise ParameterError(f"communication time tau must be positive, got {self.tau}")


@dataclass
class Trace:
    algorithm: str
    records: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def append(self, iteration, clock, error, residual):
        self.records.append((int(iteration), float(clock), float(error), float(residual)))

    @property
    def iterations(self):
        return np.array([r[0] for r in self.records])

    @property
    def clocks(self):
        return np.array([r[1] for r in self.records])

    @property
    def errors(self):
        return np.array([r[2] for r in self.records])

    @property
    def residuals(self):
        return np.array([r[3] for r in self.records])

    @property
    def final_error(self):
        return self.records[-1][2] if self.records else math.nan

    def first_hit(self, target):
        if target is None:
            return None
        for rec in self.records:
            if rec[2] <= target:
                return rec
        return None

    def time_to_target(self, target) -> Optional[float]:
        rec = self.first_hit(target)
        return None if rec is None else rec[1]

    def iterations_to_target(self, target) -> Optional[int]:
        rec = self.first_hit(target)
        return None if rec is None else rec[0]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for it, clock, err, res in self.records:
            w.writerow((self.algorithm, it, repr(clock), repr(err), repr(res)))
        return buf.getvalue()

    def metadata_json(self) -> str:
        return json.dumps({"algorithm": self.algorithm, **self.metadata}, indent=2, sort_keys=True, default=_jsonable)

    @classmethod
    def from_csv(cls, text: str, metadata=None) -> "Trace":
        rows = list(csv.reader(io.StringIO(text)))
        if not rows or tuple(rows[0]) != CSV_HEADER:
            raise ParameterError("trace CSV has an unexpected header")
        algo = rows[1][0] if len(rows) > 1 else ""
        tr = cls(algo, metadata=dict(metadata or {}))
        for r in rows[1:]:
            tr.append(int(r[1]), float(r[2]), float(r[3]), float(r[4]))
        return tr


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialise {type(obj).__name__}")


class ErrorMetric:
    """Maximum global suboptimality over nodes plus consensus residual ``||Theta sqrt(W)||_F``."""

    def __init__(self, glob: GlobalObjective, theta_star, W: Optional[GossipMatrix] = None):
        self.glob = glob
        self.theta_star = np.asarray(theta_star, dtype=float)
        self._f_star = glob.value(self.theta_star)
        self.W = None if W is None else (W.entries if isinstance(W, GossipMatrix) else np.asarray(W))

    def error(self, Theta) -> float:
        if self.glob.kind == "quadratic":
            return float(np.max(self.glob.suboptimality(Theta, self.theta_star)))
        # round-off can put a value a hair below f(theta*)
        return max(float(np.max(self.glob.values(Theta)) - self._f_star), 0.0)

    def residual(self, Theta) -> float:
        if self.W is None:
            dev = Theta - Theta.mean(axis=1, keepdims=True)
            return float(np.linalg.norm(dev))
        return float(math.sqrt(max(np.sum(Theta * (Theta @ self.W)), 0.0)))

    def __call__(self, Theta):
        return self.error(Theta), self.residual(Theta)


# ---------------------------------------------------------------------------
# stepping solvers


class Solver:
    name = "solver"
    cost = 1.0

    def __init__(self):
        self.t = 0
        self.clock = 0.0

    @property
    def theta(self) -> np.ndarray:
        raise NotImplementedError

    def memory(self) -> list:
        """Blocks held in node memory, column ``i`` on node ``i``."""
        return [self.theta]

    def parameters(self) -> dict:
        return {}

    def _advance(self):
        self.t += 1
        # clock(t) = t * cost exactly, no accumulated round-off
        self.clock = self.t * self.cost


class DualAccelerated(Solver):
    """Nesterov's method on the dual, with a pluggable communication operator.

    ``theta_t = conj_grad(x_t)``, ``y_{t+1} = x_t - eta * comm(Theta_t)``,
    ``x_{t+1} = (1 + mu) y_{t+1} - mu y_t``, starting from ``x_0 = y_0 = 0``.
    """

    def __init__(self, oracles: NodeOracles, comm: Callable, eta: float, mu: float, cost: float, name: str):
        super().__init__()
        self.oracles = oracles
        self.comm = comm
        self.eta, self.mu = float(eta), float(mu)
        self.cost = float(cost)
        self.name = name
        shape = (oracles.dim, oracles.n)
        self.x = np.zeros(shape)
        self.y = np.zeros(shape)
        self._theta = oracles.conj_grads(self.x)

    @property
    def theta(self):
        return self._theta

    def memory(self):
        return [self.x, self.y, self._theta]

    def step(self):
        y_next = self.x - self.eta * self.comm(self._theta)
        self.x = (1 + self.mu) * y_next - self.mu * self.y
        self.y = y_next
        self._theta = self.oracles.conj_grads(self.x)
        self._advance()

    def parameters(self):
        return {"eta": self.eta, "mu": self.mu, "cost_per_iteration": self.cost}


def make_ssda(oracles: NodeOracles, W: GossipMatrix, tm: TimeModel) -> DualAccelerated:
    kl, g = oracles.kappa_l, W.gamma
    eta = oracles.alpha / W.lambda_max
    mu = (math.sqrt(kl) - math.sqrt(g)) / (math.sqrt(kl) + math.sqrt(g))
    M = W.entries
    s = DualAccelerated(oracles, lambda T: T @ M, eta, mu, tm.grad_cost + tm.tau, "ssda")
    s.extra_params = {"gamma": g, "lambda_max": W.lambda_max, "kappa_l": kl, "alpha": oracles.alpha}
    return s


def make_msda(oracles: NodeOracles, W: GossipMatrix, tm: TimeModel, K: Optional[int] = None) -> DualAccelerated:
    if W.gamma > MSDA_GAMMA_CUTOFF:
        s = make_ssda(oracles, W, tm)
        s.name = "msda"
        s.extra_params["delegated_to"] = "ssda"
        return s
    p = chebyshev_params(W.gamma, W.lambda_max)
    if K is not None:
        p = type(p)(p.c1, p.c2, p.c3, int(K), p.gamma)
    kl = oracles.kappa_l
    q = p.c1 ** p.K
    eta = oracles.alpha * (1 + q * q) / (1 + q) ** 2
    mu = ((1 + q) * math.sqrt(kl) - 1 + q) / ((1 + q) * math.sqrt(kl) + 1 - q)
    M = W.entries
    s = DualAccelerated(oracles, lambda T: accelerated_gossip(T, M, p), eta, mu,
                        tm.grad_cost + p.K * tm.tau, "msda")
    s.extra_params = {"gamma": W.gamma, "lambda_max": W.lambda_max, "kappa_l": kl, "alpha": oracles.alpha,
                      "K": p.K, "c1": p.c1, "c2": p.c2, "c3": p.c3}
    return s


class DAGD(Solver):
    """Nesterov's accelerated gradient on the average function via a master node.

    Each iteration gathers local gradients over a spanning tree (``delta``
    rounds) and broadcasts the new iterate (``delta`` more rounds).
    """

    name = "dagd"

    def __init__(self, oracles: NodeOracles, alpha_g, beta_g, delta: int, tm: TimeModel):
        super().__init__()
        self.oracles = oracles
        self.step_size = 1.0 / beta_g
        kg = beta_g / alpha_g
        self.momentum = (math.sqrt(kg) - 1) / (math.sqrt(kg) + 1)
        self.delta = int(delta)
        self.cost = tm.grad_cost + 2 * self.delta * tm.tau
        self.kappa_g = kg
        self.x = np.zeros(oracles.dim)
        self.y = np.zeros(oracles.dim)

    def _avg_grad(self, v):
        n = self.oracles.n
        return self.oracles.grads(np.repeat(v[:, None], n, axis=1)).mean(axis=1)

    @property
    def theta(self):
        return np.repeat(self.x[:, None], self.oracles.n, axis=1)

    def memory(self):
        n = self.oracles.n
        return [self.theta, np.repeat(self.y[:, None], n, axis=1)]

    def step(self):
        x_next = self.y - self.step_size * self._avg_grad(self.y)
        self.y = x_next + self.momentum * (x_next - self.x)
        self.x = x_next
        self._advance()

    def parameters(self):
        return {"step": self.step_size, "momentum": self.momentum, "delta": self.delta,
                "kappa_g": self.kappa_g, "cost_per_iteration": self.cost}


def mixing_matrix(W: GossipMatrix) -> np.ndarray:
    """Symmetric doubly stochastic mixing ``I - W / lambda_max``."""
    return np.eye(W.n) - W.entries / W.lambda_max


class EXTRA(Solver):
    name = "extra"

    def __init__(self, oracles: NodeOracles, W: GossipMatrix, tm: TimeModel, step: float):
        super().__init__()
        if not step > 0:
            raise ParameterError(f"EXTRA step must be positive, got {step}")
        self.oracles, self.step_size = oracles, float(step)
        self.M = mixing_matrix(W)
        self.cost = tm.grad_cost + tm.tau
        self.x_prev = None
        self.x = np.zeros((oracles.dim, oracles.n))
        self.g = oracles.grads(self.x)
        self.xM = self.x @ self.M

    @property
    def theta(self):
        return self.x

    def step(self):
        if self.x_prev is None:
            x_next = self.xM - self.step_size * self.g
        else:
            # x_{k+1}(I + M) - x_k (I + M)/2 - s (g_{k+1} - g_k)
            x_next = (self.x + self.xM) - 0.5 * (self.x_prev + self.xM_prev) - self.step_size * (self.g - self.g_prev)
        self.x_prev, self.xM_prev, self.g_prev = self.x, self.xM, self.g
        self.x = x_next
        self.xM = x_next @ self.M
        self.g = self.oracles.grads(x_next)
        self._advance()

    def parameters(self):
        return {"step": self.step_size, "cost_per_iteration": self.cost}


class DIGing(Solver):
    name = "diging"

    def __init__(self, oracles: NodeOracles, W: GossipMatrix, tm: TimeModel, step: float):
        super().__init__()
        if not step > 0:
            raise ParameterError(f"DIGing step must be positive, got {step}")
        self.oracles, self.step_size = oracles, float(step)
        self.M = mixing_matrix(W)
        self.cost = tm.grad_cost + 2 * tm.tau
        self.x = np.zeros((oracles.dim, oracles.n))
        self.g = oracles.grads(self.x)
        self.tracker = self.g.copy()

    @property
    def theta(self):
        return self.x

    def memory(self):
        return [self.x, self.tracker]

    def step(self):
        x_next = self.x @ self.M - self.step_size * self.tracker
        g_next = self.oracles.grads(x_next)
        self.tracker = self.tracker @ self.M + g_next - self.g
        self.x, self.g = x_next, g_next
        self._advance()

    def parameters(self):
        return {"step": self.step_size, "cost_per_iteration": self.cost}


# ---------------------------------------------------------------------------
# driver


def run(solver: Solver, metric: ErrorMetric, T: int, target: Optional[float] = None,
        record_every: int = 1, max_time: Optional[float] = None, callback=None,
        divergence: float = DIVERGENCE_THRESHOLD) -> Trace:
    """Step ``solver`` up to ``T`` times, recording errors.

    Stops early once a recorded error reaches ``target`` or the clock passes
    ``max_time``.  ``callback(solver)`` runs after initialisation and after
    every step.
    """
    if T < 0:
        raise ParameterError("iteration count must be non-negative")
    record_every = max(int(record_every), 1)
    trace = Trace(solver.name)
    stop_reason = "max_iterations"

    def record():
        err, res = metric(solver.theta)
        if not math.isfinite(err) or err > divergence:
            params = {**solver.parameters(), "iteration": solver.t, "error": err}
            raise DivergenceError(f"{solver.name} diverged at iteration {solver.t} (error {err:.3e})", params)
        trace.append(solver.t, solver.clock, err, res)
        return err

    if callback is not None:
        callback(solver)
    err = record()
    hit = target is not None and err <= target
    if hit:
        stop_reason = "target"
    while not hit and solver.t < T:
        solver.step()
        if callback is not None:
            callback(solver)
        last = solver.t == T
        over_time = max_time is not None and solver.clock >= max_time
        if solver.t % record_every == 0 or last or over_time:
            err = record()
            if target is not None and err <= target:
                stop_reason = "target"
                break
        if over_time:
            stop_reason = "max_time"
            break
    trace.metadata.update({
        "parameters": {**solver.parameters(), **getattr(solver, "extra_params", {})},
        "stop_reason": stop_reason,
        "target_error": target,
        "iterations_run": solver.t,
        "record_every": record_every,
    })
    return trace


def _oracles(objs):
    if isinstance(objs, NodeOracles):
        return NodeOracles(objs.objs)
    return NodeOracles(list(objs))


def _metric(objs, W, theta_star):
    glob = GlobalObjective(objs.objs if isinstance(objs, NodeOracles) else list(objs))
    if theta_star is None:
        theta_star = reference_solution(glob)
    return ErrorMetric(glob, theta_star, W)


def ssda(objs: Sequence[LocalObjective], W: GossipMatrix, T: int, tm: Optional[TimeModel] = None, *,
         theta_star=None, target=None, record_every=1, max_time=None, callback=None) -> Trace:
    tm = tm or TimeModel()
    solver = make_ssda(_oracles(objs), W, tm)
    return run(solver, _metric(objs, W, theta_star), T, target, record_every, max_time, callback)


def msda(objs: Sequence[LocalObjective], W: GossipMatrix, T: int, tm: Optional[TimeModel] = None, *,
         K=None, theta_star=None, target=None, record_every=1, max_time=None, callback=None) -> Trace:
    tm = tm or TimeModel()
    solver = make_msda(_oracles(objs), W, tm, K)
    return run(solver, _metric(objs, W, theta_star), T, target, record_every, max_time, callback)


def dagd(glob: GlobalObjective, delta: int, T: int, tm: Optional[TimeModel] = None, *,
         W=None, theta_star=None, target=None, record_every=1, max_time=None, callback=None) -> Trace:
    tm = tm or TimeModel()
    solver = DAGD(NodeOracles(glob.locals), glob.alpha_g, glob.beta_g, delta, tm)
    if theta_star is None:
        theta_star = reference_solution(glob)
    return run(solver, ErrorMetric(glob, theta_star, W), T, target, record_every, max_time, callback)


STEP_GRID = tuple(2.0 ** (k / 2) for k in range(-14, 5))


def tune_step(factory: Callable[[float], Solver], metric: ErrorMetric, pilot: int = 300,
              grid: Sequence[float] = STEP_GRID, scale: float = 1.0):
    """Pick the step from ``scale * grid`` with the lowest error after ``pilot`` iterations.

    Returns ``(step, scores)`` where scores maps each step to its pilot error
    (``inf`` when the pilot diverged).
    """
    scores = {}
    for g in grid:
        step = g * scale
        solver = factory(step)
        with np.errstate(over="ignore", invalid="ignore"):
            for _ in range(pilot):
                solver.step()
                if not np.all(np.isfinite(solver.theta)) or np.abs(solver.theta).max() > 1e100:
                    break
            err = metric.error(solver.theta) if np.all(np.isfinite(solver.theta)) else math.inf
        scores[step] = err if math.isfinite(err) and err < DIVERGENCE_THRESHOLD else math.inf
    best = min(scores, key=lambda s: (scores[s], -s))
    if not math.isfinite(scores[best]):
        raise DivergenceError("every step in the tuning grid diverged", {"grid": list(scores)})
    return best, scores


def _baseline(cls, objs, W, T, tm, step, theta_star, target, record_every, max_time, callback, pilot):
    tm = tm or TimeModel()
    metric = _metric(objs, W, theta_star)
    base = _oracles(objs)
    tuned = None
    if step is None:
        step, scores = tune_step(lambda s: cls(_oracles(base), W, tm, s), metric,
                                 pilot=min(pilot, max(T, 1)), scale=1.0 / base.beta)
        tuned = {"grid": sorted(scores), "pilot_errors": [scores[s] for s in sorted(scores)], "pilot": min(pilot, max(T, 1))}
    solver = cls(base, W, tm, step)
    trace = run(solver, metric, T, target, record_every, max_time, callback)
    trace.metadata["step_selection"] = "grid_search" if tuned else "fixed"
    if tuned:
        trace.metadata["tuning"] = tuned
    return trace


def extra(objs, W: GossipMatrix, T: int, tm: Optional[TimeModel] = None, step: Optional[float] = None, *,
          theta_star=None, target=None, record_every=1, max_time=None, callback=None, pilot=300) -> Trace:
    return _baseline(EXTRA, objs, W, T, tm, step, theta_star, target, record_every, max_time, callback, pilot)


def diging(objs, W: GossipMatrix, T: int, tm: Optional[TimeModel] = None, step: Optional[float] = None, *,
           theta_star=None, target=None, record_every=1, max_time=None, callback=None, pilot=300) -> Trace:
    return _baseline(DIGing, objs, W, T, tm, step, theta_star, target, record_every, max_time, callback, pilot)


ALGORITHMS = ("ssda", "msda", "dagd", "extra", "diging")
