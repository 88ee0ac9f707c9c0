"""End-to-end acceptance checks, one test per criterion.

Each test records a single ``[criterion N] PASS|FAIL`` line; the lines are
printed together in an "acceptance criteria" section at the end of the run.
"""

import json
import math
import time

import numpy as np
import pytest

from conftest import CRITERIA_LINES
from gossipopt import cli
from gossipopt.bench import ExperimentConfig, gen_regression_dataset, run_experiment, shard
from gossipopt.composite import (choose_rho, composite_dual, composite_primal_recover, logistic_conj_1d,
                                 logistic_prox_scaled, q_form, q_lower, q_upper, squared_loss_composite)
from gossipopt.gossip import chebyshev_gamma_bound, chebyshev_params, params_for, accelerated_gossip, \
    poly_gossip_matrix
from gossipopt.lower_bounds import default_hard_instance, lb_curve_decentralized, track_support
from gossipopt.objectives import GlobalObjective, NodeOracles, make_least_squares, make_logistic, \
    reference_solution
from gossipopt.solvers import TimeModel, dagd, diging, extra, make_msda, make_ssda, msda, ssda
from gossipopt.topology import build_graph, diameter, laplacian, path_gamma, validate_gossip

TOPOLOGIES = [
    ("path", {"n": 2}), ("path", {"n": 10}), ("path", {"n": 100}),
    ("grid", {"rows": 3, "cols": 4}), ("grid", {"rows": 10, "cols": 10}),
    ("star", {"n": 5}), ("star", {"n": 100}),
    ("complete", {"n": 3}), ("complete", {"n": 100}),
    ("erdos_renyi", {"n": 30, "p": 0.2}), ("erdos_renyi", {"n": 100, "p": 0.06}),
]


def report(number, ok, detail=""):
    line = f"[criterion {number}] {'PASS' if ok else 'FAIL'}" + (f": {detail}" if detail else "")
    CRITERIA_LINES.append(line)
    print("\n" + line, flush=True)
    assert ok, line


def grid100_least_squares(seed=0):
    g = build_graph("grid", {"rows": 10, "cols": 10})
    parts = shard(gen_regression_dataset(10_000, 10, seed), 100, seed + 1)
    return g, laplacian(g), [make_least_squares(p.X, p.y, 0.1) for p in parts]


# ---------------------------------------------------------------------------


def test_criterion_1_gossip_axioms():
    start = time.perf_counter()
    failures = []
    for kind, params in TOPOLOGIES:
        for seed in range(3 if kind == "erdos_renyi" else 1):
            g = build_graph(kind, params, seed=seed)
            W = laplacian(g)
            try:
                validate_gossip(W.entries, g, tol=1e-9)
            except Exception as exc:  # noqa: BLE001
                failures.append(f"{kind}{params}: {exc}")
    elapsed = time.perf_counter() - start
    report(1, not failures and elapsed < 5.0, f"{len(TOPOLOGIES)} topologies in {elapsed:.2f}s {failures}")


def test_criterion_2_spectral_closed_forms():
    worst_path = max(abs(laplacian(build_graph("path", {"n": n})).gamma
                         - (1 - math.cos(math.pi / n)) / (1 + math.cos(math.pi / n))) for n in range(3, 51))
    worst_star = max(abs(laplacian(build_graph("star", {"n": n})).gamma - 1 / n) for n in range(3, 101))
    assert all(path_gamma(n) > path_gamma(n + 1) for n in range(2, 50))
    report(2, worst_path <= 1e-9 and worst_star <= 1e-9, f"path err {worst_path:.1e}, star err {worst_star:.1e}")


def test_criterion_3_chebyshev_guarantee():
    checked, bad = 0, []
    for kind, params in TOPOLOGIES:
        W = laplacian(build_graph(kind, params))
        if W.gamma >= 0.9:
            continue
        p = chebyshev_params(W.gamma, W.lambda_max)
        assert p.K == math.floor(1 / math.sqrt(W.gamma))
        P = poly_gossip_matrix(W, p)
        checked += 1
        if P.gamma < chebyshev_gamma_bound(p) - 1e-9 or 1 / math.sqrt(P.gamma) > 2 + 1e-9:
            bad.append((kind, params, P.gamma))
    report(3, checked >= 8 and not bad, f"{checked} topologies checked, violations {bad}")


def dense_chebyshev(W, p):
    n = W.shape[0]
    A = p.c2 * (np.eye(n) - p.c3 * W)
    T_prev, T = np.eye(n), A
    for _ in range(p.K - 1):
        T_prev, T = T, 2 * A @ T - T_prev
    T_K = np.cosh(p.K * np.arccosh(p.c2))
    return np.eye(n) - T / T_K


def test_criterion_4_accelerated_gossip_oracle():
    rng = np.random.default_rng(2024)
    worst = 0.0
    for trial in range(20):
        K = int(rng.integers(1, 13))
        n = int(rng.integers(3, 51))
        kind = ("path", "erdos_renyi", "grid")[trial % 3]
        params = {"n": n, "p": 0.3} if kind == "erdos_renyi" else {"n": n}
        if kind == "grid":
            params = {"rows": max(2, n // 7), "cols": 7}
        W = laplacian(build_graph(kind, params, seed=trial))
        p = params_for(W, K)
        X = rng.standard_normal((4, W.n))
        ref = X @ dense_chebyshev(W.entries, p)
        worst = max(worst, np.linalg.norm(accelerated_gossip(X, W, p) - ref) / np.linalg.norm(ref))
    report(4, worst <= 1e-10, f"worst relative deviation {worst:.1e}")


def test_criterion_5_rate_bounds():
    g, W, objs = grid100_least_squares()
    glob = GlobalObjective(objs)
    kl, kg = glob.kappa_l, glob.kappa_g
    tm = TimeModel(tau=1.0)
    results = {}
    start = time.perf_counter()
    tr = ssda(objs, W, 50_000, tm, target=1e-6)
    e0 = tr.errors[0]
    results["ssda"] = (tr.iterations_to_target(1e-6), 10 * math.sqrt(kl / W.gamma) * math.log(e0 / 1e-6))
    tr = msda(objs, W, 50_000, tm, target=1e-6)
    results["msda"] = (tr.time_to_target(1e-6),
                       10 * math.sqrt(kl) * (1 + tm.tau / math.sqrt(W.gamma)) * math.log(tr.errors[0] / 1e-6))
    tr = dagd(glob, diameter(g), 50_000, tm, target=1e-6)
    results["dagd"] = (tr.iterations_to_target(1e-6), 10 * math.sqrt(kg) * math.log(tr.errors[0] / 1e-6))
    elapsed = time.perf_counter() - start
    ok = all(v is not None and v <= b for v, b in results.values()) and elapsed < 3 * 60
    detail = ", ".join(f"{k} {v} <= {b:.0f}" for k, (v, b) in results.items())
    report(5, ok, f"{detail} ({elapsed:.1f}s)")


# ---------------------------------------------------------------------------
# rankings


SEEDS = range(5)


def ranking_run(task, network, tau, algorithms, seed):
    cfg = ExperimentConfig.from_dict({
        "task": task, "network": network, "tau": tau, "algorithms": algorithms,
        "m": 10_000, "d": 10, "c": 0.1, "seeds": [seed], "target_error": 1e-6,
        "max_iterations": 6000, "record_every": 1})
    return run_experiment(cfg).summary


def ttt(summary, name):
    v = summary["algorithms"][name]["time_to_target"]
    return math.inf if v is None else v


GRID = {"kind": "grid", "rows": 10, "cols": 10}
ER = {"kind": "erdos_renyi", "n": 100, "p": 0.06}
ALL = ["dagd", "msda", "ssda", "extra", "diging"]


def test_criterion_6_experiment_rankings():
    votes = {}
    table = []

    def vote(claim, ok):
        votes.setdefault(claim, []).append(bool(ok))

    for seed in SEEDS:
        for label, net in (("grid", GRID), ("er", ER)):
            s = ranking_run("least_squares", net, 10.0, ALL, seed)
            times = {a: ttt(s, a) for a in ALL}
            table.append((f"ls/{label}/tau=10/seed={seed}", times))
            vote(f"least squares {label} tau=10: DAGD fastest",
                 s["ranking"][0] == "dagd" and math.isfinite(times["dagd"]))
            decentral = min(("msda", "ssda", "extra", "diging"), key=lambda a: (times[a], a))
            vote(f"least squares {label} tau=10: MSDA fastest decentralized",
                 decentral == "msda" and math.isfinite(times["msda"]))

        s = ranking_run("logistic", GRID, 10.0, ["msda", "dagd"], seed)
        table.append((f"logistic/grid/tau=10/seed={seed}", {a: ttt(s, a) for a in ("msda", "dagd")}))
        vote("logistic grid tau=10: MSDA <= DAGD", ttt(s, "msda") <= ttt(s, "dagd") and math.isfinite(ttt(s, "msda")))

        for task, label, net in (("least_squares", "grid", GRID), ("least_squares", "er", ER),
                                 ("logistic", "grid", GRID)):
            s = ranking_run(task, net, 0.1, ["msda", "ssda"], seed)
            table.append((f"{task}/{label}/tau=0.1/seed={seed}", {a: ttt(s, a) for a in ("msda", "ssda")}))
            vote(f"{task} {label} tau=0.1: MSDA < SSDA", ttt(s, "msda") < ttt(s, "ssda"))

    for name, times in table:
        print(f"  {name}: " + ", ".join(f"{a}={t:.1f}" for a, t in times.items()))
    failed = []
    for claim, vs in votes.items():
        majority = sum(vs) * 2 > len(vs)
        print(f"  {'ok  ' if majority else 'MISS'} {claim}: {sum(vs)}/{len(vs)} seeds")
        if not majority:
            failed.append(claim)
    report(6, not failed, f"claims without majority: {failed}" if failed else f"{len(votes)} claims hold")


# ---------------------------------------------------------------------------
# lower bound and support propagation


def hard_instance_traces(inst, tau):
    """Run every solver on the hard instance long enough to cover the checked horizon."""
    W = laplacian(inst.graph)
    objs = inst.objectives
    glob = inst.global_objective()
    ts = reference_solution(glob)
    tm = TimeModel(tau=tau)
    R0 = float(ts @ ts)
    horizon = bound_horizon(inst, W.gamma, tau, R0)
    cap = lambda cost: int(math.ceil(horizon / cost)) + 2  # noqa: E731
    traces = {
        "ssda": ssda(objs, W, cap(1 + tau), tm, theta_star=ts),
        "msda": msda(objs, W, cap(1 + tau), tm, theta_star=ts),
        "dagd": dagd(glob, diameter(inst.graph), cap(1 + 2 * diameter(inst.graph) * tau), tm, W=W, theta_star=ts),
        "extra": extra(objs, W, cap(1 + tau), tm, theta_star=ts, pilot=200),
        "diging": diging(objs, W, cap(1 + 2 * tau), tm, theta_star=ts, pilot=200),
    }
    return traces, W, R0, horizon


def bound_horizon(inst, gamma, tau, R0):
    """Largest time at which the truncation tail is still below 1% of the bound."""
    alpha = inst.local_alpha
    lo, hi = 0.0, 1.0
    while lb_curve_decentralized(hi, inst.kappa_l, gamma, tau, R0, alpha=alpha) > 100 * inst.tail:
        hi *= 2
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if lb_curve_decentralized(mid, inst.kappa_l, gamma, tau, R0, alpha=alpha) > 100 * inst.tail:
            lo = mid
        else:
            hi = mid
    return lo


def test_criterion_7_lower_bound_dominance():
    inst = default_hard_instance(n=16, kappa_l=1024, D=200)
    assert inst.n == 16 and inst.D == 200 and inst.kappa_l == pytest.approx(1024)
    worst, bad = math.inf, []
    for tau in (0.1, 1.0, 10.0):
        traces, W, R0, horizon = hard_instance_traces(inst, tau)
        for name, tr in traces.items():
            t, e = tr.clocks, tr.errors
            keep = t <= horizon
            assert keep.sum() >= 2, (name, tau)
            lb = lb_curve_decentralized(t[keep], inst.kappa_l, W.gamma, tau, R0, alpha=inst.local_alpha)
            ratio = (e[keep] + inst.tail) / lb
            worst = min(worst, float(ratio.min()))
            if np.any(e[keep] < lb - inst.tail):
                bad.append((name, tau, float(t[keep][np.argmin(ratio)])))
    report(7, not bad, f"min e_t / bound over all runs {worst:.2f}; violations {bad}")


def test_criterion_8_support_propagation():
    inst = default_hard_instance(n=16, kappa_l=1024, D=200)
    W = laplacian(inst.graph)
    bad, reached = [], []
    for tau in (0.1, 1.0, 10.0):
        for maker in (make_ssda, make_msda):
            solver = maker(NodeOracles(inst.objectives), W, TimeModel(tau=tau))
            prof = track_support(solver, 400)
            viol = prof.violations(inst.d_split, tau)
            if viol or not prof.is_monotone():
                bad.append((solver.name, tau, viol[:3]))
            reached.append(int(prof.as_array()[-1].max()))
    report(8, not bad, f"max support reached {max(reached)} of {inst.D}; violations {bad}")


# ---------------------------------------------------------------------------
# oracles and reproducibility


def test_criterion_9_conjugate_correctness():
    rng = np.random.default_rng(9)
    worst_inv, worst_fd = 0.0, 0.0
    for family in (make_least_squares, make_logistic):
        X = rng.standard_normal((10, 100))
        y = rng.choice([-1.0, 1.0], 100) if family is make_logistic else rng.standard_normal(100)
        f = family(X, y, 0.1)
        for _ in range(100):
            x = 3 * rng.standard_normal(10)
            worst_inv = max(worst_inv, np.linalg.norm(f.grad(f.conj_grad(x)) - x) / max(1.0, np.linalg.norm(x)))
        for _ in range(10):
            theta = rng.standard_normal(10)
            h = 1e-6
            fd = np.array([(f.value(theta + h * e) - f.value(theta - h * e)) / (2 * h) for e in np.eye(10)])
            worst_fd = max(worst_fd, np.linalg.norm(fd - f.grad(theta)) / max(1.0, np.linalg.norm(fd)))
    report(9, worst_inv <= 1e-8 and worst_fd <= 1e-5, f"inversion {worst_inv:.1e}, finite difference {worst_fd:.1e}")


def test_criterion_10_composite_equivalence():
    rng = np.random.default_rng(10)
    W = laplacian(build_graph("grid", {"rows": 2, "cols": 3}))
    objs = [squared_loss_composite(rng.standard_normal((4, 10)), rng.standard_normal(10), 0.1) for _ in range(6)]
    ts = reference_solution(GlobalObjective([o.local for o in objs]))
    tr = composite_dual(objs, W, 50_000, theta_star=ts, target=1e-15)
    primal_err = float(np.abs(composite_primal_recover(tr.final_state, objs) - ts[:, None]).max())

    prox_err = 0.0
    for m in (1, 3):
        grid = np.arange(-1.0 / m, 1e-12, 1e-6)
        for w, step in ((0.4, 0.5), (-0.7, 2.0), (3.0, 0.05), (-4.0, 1.0)):
            ref = grid[np.argmin(logistic_conj_1d(m * grid) / m + (grid - w) ** 2 / (2 * step))]
            prox_err = max(prox_err, abs(logistic_prox_scaled(np.array([w]), step, m)[0] - ref))

    ev, V = np.linalg.eigh(W.entries)
    S = (V * np.sqrt(np.clip(ev, 0, None))) @ V.T
    c, mu, M = objs[0].c, objs[0].mu_g, max(o.M for o in objs)
    rho = choose_rho(c, mu, M, W.lambda_max)
    q_bad = 0
    for _ in range(100):
        nu = [rng.standard_normal(o.m) for o in objs]
        lam = rng.standard_normal((4, 6))
        q = q_form(nu, lam, objs, S, rho, mu)
        tol = 1e-9 * max(1.0, abs(q))
        q_bad += not (q_lower(nu, lam, objs, S, rho, mu) - tol <= q <= q_upper(nu, lam, objs, S, rho, mu) + tol)
    ok = primal_err <= 1e-6 and prox_err <= 1e-5 and q_bad == 0
    report(10, ok, f"primal {primal_err:.1e}, prox {prox_err:.1e}, Q-inequality failures {q_bad}/100")


def test_criterion_11_determinism(tmp_path):
    configs = {
        "ls": {"task": "least_squares", "network": {"kind": "erdos_renyi", "n": 20, "p": 0.3}, "tau": 1.0,
               "m": 400, "d": 5, "algorithms": ALL + ["composite_dual"], "max_iterations": 300},
        "logistic": {"task": "logistic", "network": {"kind": "grid", "rows": 3, "cols": 3}, "tau": 10.0,
                     "m": 360, "d": 4, "algorithms": ALL + ["composite_dual"], "max_iterations": 200},
        "hard": {"task": "hard_instance", "network": {"kind": "path", "n": 16}, "tau": 1.0,
                 "algorithms": ALL, "max_iterations": 150, "hard_instance": {"D": 60}},
    }
    mismatched, files = [], 0
    for key, cfg in configs.items():
        path = tmp_path / f"{key}.json"
        path.write_text(json.dumps(cfg))
        outs = [tmp_path / f"{key}_{k}" for k in range(2)]
        for out in outs:
            assert cli.main(["run", str(path), "--out-dir", str(out)]) == 0
        for f in sorted(outs[0].iterdir()):
            files += 1
            if f.read_bytes() != (outs[1] / f.name).read_bytes():
                mismatched.append(f"{key}/{f.name}")
    report(11, not mismatched and files > 0, f"{files} files compared, mismatches {mismatched}")
