"""Synthetic datasets, sharding and config-driven experiments.

An experiment builds a network and per-node objectives, solves the global
problem once to high accuracy, runs each requested algorithm under the
simulated-time model and writes one CSV trace per algorithm, a JSON sidecar
with its parameters, and a ``summary.json`` with time-to-target and ranking.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import solvers
from .composite import composite_dual, logistic_composite, squared_loss_composite
from .errors import ConfigError, GossipOptError, ParameterError
from .lower_bounds import HardInstance, default_hard_instance, hard_instance_from_dict
from .objectives import GlobalObjective, make_least_squares, make_logistic, reference_solution
from .topology import KINDS, build_graph, diameter, laplacian

TASKS = ("least_squares", "logistic", "hard_instance")
ALGORITHMS = solvers.ALGORITHMS + ("composite_dual",)


def _rng(seed) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


@dataclass(frozen=True, eq=False)
class Dataset:
    """Features ``X`` (``d x m``, one sample per column) and targets ``y``."""

    X: np.ndarray
    y: np.ndarray
    task: str

    def __post_init__(self):
        if self.X.ndim != 2 or self.y.ndim != 1 or self.X.shape[1] != self.y.size:
            raise ParameterError(f"inconsistent dataset shapes X{self.X.shape}, y{self.y.shape}")
        if self.task == "logistic" and not np.all(np.isin(self.y, (-1.0, 1.0))):
            raise ParameterError("logistic labels must be -1 or 1")

    @property
    def m(self) -> int:
        return self.y.size

    @property
    def d(self) -> int:
        return self.X.shape[0]

    def to_dict(self) -> dict:
        return {"task": self.task, "X": self.X.tolist(), "y": self.y.tolist()}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"x{k}" for k in range(self.d)] + ["y"])
        for j in range(self.m):
            w.writerow([repr(float(v)) for v in self.X[:, j]] + [repr(float(self.y[j]))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, task: str) -> "Dataset":
        rows = list(csv.reader(io.StringIO(text)))
        data = np.array(rows[1:], dtype=float).reshape(-1, len(rows[0]))
        return cls(data[:, :-1].T.copy(), data[:, -1].copy(), task)


def dataset_from_dict(data: dict):
    """Inverse of ``to_dict`` for datasets and hard instances."""
    task = data.get("task")
    if task == "hard_instance":
        return hard_instance_from_dict(data)
    if task not in ("least_squares", "logistic"):
        raise ParameterError(f"unknown dataset task {task!r}")
    return Dataset(np.array(data["X"], dtype=float), np.array(data["y"], dtype=float), task)


def load_dataset_json(path):
    return dataset_from_dict(json.loads(Path(path).read_text()))


def save_dataset_json(ds, path) -> None:
    Path(path).write_text(ds.to_json())


def gen_regression_dataset(m: int = 10_000, d: int = 10, seed: int = 0, noise_std: float = 0.5) -> Dataset:
    """``y = X'1 + cos(X'1) + xi`` with standard normal features and ``xi ~ N(0, noise_std^2)``."""
    if m < 1 or d < 1:
        raise ParameterError("m and d must be positive")
    rng = _rng(seed)
    X = rng.standard_normal((d, m))
    s = X.sum(axis=0)
    y = s + np.cos(s) + noise_std * rng.standard_normal(m)
    return Dataset(X, y, "least_squares")


def gen_classification_dataset(m: int = 10_000, d: int = 10, seed: int = 0) -> Dataset:
    """Two Gaussian classes ``N(y 1, I)``; the first half of the samples has label ``+1``."""
    if m < 2 or m % 2:
        raise ParameterError(f"classification needs an even number of samples, got {m}")
    if d < 1:
        raise ParameterError("d must be positive")
    rng = _rng(seed)
    y = np.where(np.arange(m) < m // 2, 1.0, -1.0)
    X = y[None, :] + rng.standard_normal((d, m))
    return Dataset(X, y, "logistic")


def shard(ds: Dataset, n: int, seed: int = 0) -> list:
    """Random permutation followed by ``n`` equal contiguous blocks."""
    if n < 1 or ds.m % n:
        raise ParameterError(f"cannot split {ds.m} samples evenly over {n} nodes")
    perm = _rng(seed).permutation(ds.m)
    size = ds.m // n
    return [Dataset(ds.X[:, idx].copy(), ds.y[idx].copy(), ds.task)
            for idx in (perm[k * size:(k + 1) * size] for k in range(n))]


def error_metric(theta_block, glob: GlobalObjective, theta_star) -> float:
    """Largest global suboptimality over the columns of ``theta_block``."""
    return float(np.max(glob.suboptimality(np.asarray(theta_block, dtype=float), theta_star)))


# ---------------------------------------------------------------------------
# configuration


@dataclass
class ExperimentConfig:
    task: str = "least_squares"
    network: dict = field(default_factory=lambda: {"kind": "grid", "rows": 10, "cols": 10})
    tau: float = 10.0
    algorithms: list = field(default_factory=lambda: list(solvers.ALGORITHMS))
    m: int = 10_000
    d: int = 10
    c: float = 0.1
    noise_std: float = 0.5
    seeds: list = field(default_factory=lambda: [0])
    target_error: float = 1e-6
    max_iterations: int = 10_000
    max_time: Optional[float] = None
    record_every: int = 1
    hard_instance: dict = field(default_factory=dict)
    output: str = "results"

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            cfg = cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc
        cfg.validate()
        return cfg

    @classmethod
    def from_json(cls, text: str) -> "ExperimentConfig":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        return asdict(self)

    def n_nodes(self) -> int:
        net = self.network
        if net.get("kind") == "grid":
            return int(net.get("rows", 0)) * int(net.get("cols", 0))
        return int(net.get("n", 0))

    def validate(self) -> None:
        if self.task not in TASKS:
            raise ConfigError(f"task must be one of {TASKS}, got {self.task!r}")
        if not isinstance(self.network, dict) or self.network.get("kind") not in KINDS:
            raise ConfigError(f"network.kind must be one of {KINDS}")
        if not (isinstance(self.tau, (int, float)) and self.tau > 0):
            raise ConfigError(f"tau must be positive, got {self.tau!r}")
        if not (isinstance(self.c, (int, float)) and self.c > 0):
            raise ConfigError(f"c must be positive, got {self.c!r}")
        if not self.algorithms:
            raise ConfigError("no algorithms requested")
        for spec in self.algorithms:
            name = spec if isinstance(spec, str) else (spec or {}).get("name")
            if name not in ALGORITHMS:
                raise ConfigError(f"unknown algorithm {name!r}; expected one of {ALGORITHMS}")
            if name == "composite_dual" and self.task == "hard_instance":
                raise ConfigError("composite_dual needs a data task")
        n = self.n_nodes()
        if n < 1:
            raise ConfigError("network has no nodes")
        if self.task != "hard_instance":
            if self.m < 1 or self.d < 1:
                raise ConfigError("m and d must be positive")
            if self.m % n:
                raise ConfigError(f"m={self.m} is not divisible by n={n}")
            if self.task == "logistic" and self.m % 2:
                raise ConfigError("logistic task needs an even m")
        if not self.seeds or not all(isinstance(s, int) for s in self.seeds):
            raise ConfigError("seeds must be a non-empty list of integers")
        if not (self.target_error is None or self.target_error > 0):
            raise ConfigError("target_error must be positive")
        if self.max_iterations < 0 or self.record_every < 1:
            raise ConfigError("max_iterations must be >= 0 and record_every >= 1")


def _algorithm_specs(cfg):
    for spec in cfg.algorithms:
        if isinstance(spec, str):
            yield spec, {}
        else:
            spec = dict(spec)
            yield spec.pop("name"), spec


# ---------------------------------------------------------------------------
# orchestration


@dataclass
class Problem:
    graph: object
    W: object
    objectives: list
    glob: GlobalObjective
    theta_star: np.ndarray
    composites: Optional[list] = None
    instance: Optional[HardInstance] = None


def build_problem(cfg: ExperimentConfig, seed: int) -> Problem:
    net = dict(cfg.network)
    kind = net.pop("kind")
    g = build_graph(kind, net, seed=seed)
    W = laplacian(g)
    composites = None
    instance = None
    if cfg.task == "hard_instance":
        opts = {"kappa_l": 1024.0, "D": 200, "alpha": 1.0, **cfg.hard_instance}
        instance = default_hard_instance(kappa_l=float(opts["kappa_l"]), D=int(opts["D"]),
                                          alpha=float(opts["alpha"]), graph=g)
        objs = instance.objectives
    else:
        gen = gen_regression_dataset if cfg.task == "least_squares" else gen_classification_dataset
        kwargs = {"noise_std": cfg.noise_std} if cfg.task == "least_squares" else {}
        ds = gen(cfg.m, cfg.d, seed, **kwargs)
        parts = shard(ds, g.n, seed + 1)
        make = make_least_squares if cfg.task == "least_squares" else make_logistic
        objs = [make(p.X, p.y, cfg.c) for p in parts]
        if any(name == "composite_dual" for name, _ in _algorithm_specs(cfg)):
            mk = squared_loss_composite if cfg.task == "least_squares" else logistic_composite
            composites = [mk(p.X, p.y, cfg.c) for p in parts]
    glob = GlobalObjective(objs)
    return Problem(g, W, objs, glob, reference_solution(glob), composites, instance)


def run_algorithm(name: str, options: dict, prob: Problem, cfg: ExperimentConfig, target=None):
    tm = solvers.TimeModel(tau=float(options.get("tau", cfg.tau)))
    T = int(options.get("max_iterations", cfg.max_iterations))
    common = dict(theta_star=prob.theta_star, target=target,
                  record_every=int(options.get("record_every", cfg.record_every)))
    max_time = options.get("max_time", cfg.max_time)
    if name == "ssda":
        return solvers.ssda(prob.objectives, prob.W, T, tm, max_time=max_time, **common)
    if name == "msda":
        return solvers.msda(prob.objectives, prob.W, T, tm, K=options.get("K"), max_time=max_time, **common)
    if name == "dagd":
        return solvers.dagd(prob.glob, diameter(prob.graph), T, tm, W=prob.W, max_time=max_time, **common)
    if name in ("extra", "diging"):
        fn = solvers.extra if name == "extra" else solvers.diging
        return fn(prob.objectives, prob.W, T, tm, options.get("step"), pilot=int(options.get("pilot", 300)),
                  max_time=max_time, **common)
    if name == "composite_dual":
        return composite_dual(prob.composites, prob.W, T, tm, chebyshev=bool(options.get("chebyshev", False)),
                              **common)
    raise ConfigError(f"unknown algorithm {name!r}")


def rank(results: dict) -> list:
    """Algorithms ordered by time-to-target; misses follow, ordered by final error."""
    def key(name):
        r = results[name]
        ttt = r.get("time_to_target")
        fe = r.get("final_error")
        fe = math.inf if fe is None or not math.isfinite(fe) else fe
        return (0, ttt, name) if ttt is not None else (1, fe, name)
    return sorted(results, key=key)


@dataclass
class ExperimentResult:
    traces: dict
    summary: dict


def run_experiment(cfg: ExperimentConfig, seed: Optional[int] = None, out_dir=None,
                   target_error: Optional[float] = None) -> ExperimentResult:
    """Run every configured algorithm on one seed; solver failures are recorded, not raised."""
    seed = cfg.seeds[0] if seed is None else int(seed)
    target = cfg.target_error if target_error is None else target_error
    prob = build_problem(cfg, seed)
    traces, results = {}, {}
    for name, options in _algorithm_specs(cfg):
        try:
            tr = run_algorithm(name, options, prob, cfg, target)
        except GossipOptError as exc:
            results[name] = {"status": type(exc).__name__, "message": str(exc),
                             "parameters": getattr(exc, "parameters", {}),
                             "time_to_target": None, "iterations": None, "final_error": None}
            continue
        traces[name] = tr
        results[name] = {"status": "ok", "time_to_target": tr.time_to_target(target),
                         "iterations": tr.iterations_to_target(target), "final_error": tr.final_error,
                         "parameters": tr.metadata.get("parameters", {})}
    summary = {
        "algorithms": results,
        "ranking": rank(results),
        "seed": seed,
        "target_error": target,
        "network": {"kind": prob.graph.kind, "n": prob.graph.n, "gamma": prob.W.gamma,
                    "diameter": diameter(prob.graph)},
        "kappa_l": prob.glob.kappa_l, "kappa_g": prob.glob.kappa_g,
    }
    if out_dir is not None:
        write_outputs(out_dir, traces, summary)
    return ExperimentResult(traces, summary)


def _json_default(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


def write_outputs(out_dir, traces: dict, summary: dict) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name, tr in traces.items():
        (out / f"{name}.csv").write_text(tr.to_csv())
        (out / f"{name}.json").write_text(tr.metadata_json())
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True, default=_json_default))
