import math

import numpy as np
import pytest

from gossipopt.bench import gen_classification_dataset, gen_regression_dataset, shard
from gossipopt.errors import DivergenceError, ParameterError
from gossipopt.objectives import (GlobalObjective, NodeOracles, QuadraticObjective, make_least_squares,
                                  make_logistic, reference_solution)
from gossipopt.solvers import (CSV_HEADER, DIGing, EXTRA, ErrorMetric, TimeModel, Trace, dagd, diging, extra,
                               make_msda, make_ssda, msda, run, ssda)
from gossipopt.topology import build_graph, diameter, gossip_matrix, laplacian


def identical_quadratics(n, a):
    a = np.asarray(a, dtype=float)
    return [QuadraticObjective(np.eye(a.size), a) for _ in range(n)]


def ls_problem(kind, params, n_samples=2000, seed=0, c=0.1):
    g = build_graph(kind, params, seed=seed)
    parts = shard(gen_regression_dataset(n_samples, 10, seed), g.n, seed + 1)
    objs = [make_least_squares(p.X, p.y, c) for p in parts]
    return g, laplacian(g), objs


def test_time_model_rejects_non_positive_tau():
    with pytest.raises(ParameterError):
        TimeModel(tau=0.0)


def test_identical_quadratics_complete_graph_fixed_point():
    a = np.array([1.0, -2.0, 0.5])
    g = build_graph("complete", {"n": 6})
    W = laplacian(g)
    objs = identical_quadratics(6, a)
    for tr_fn in (lambda: ssda(objs, W, 50, theta_star=a), lambda: msda(objs, W, 50, theta_star=a),
                  lambda: extra(objs, W, 200, theta_star=a), lambda: diging(objs, W, 200, theta_star=a),
                  lambda: dagd(GlobalObjective(objs), diameter(g), 10, W=W, theta_star=a)):
        tr = tr_fn()
        assert tr.final_error <= 1e-12


def test_ssda_path10_iteration_bound():
    g, W, objs = ls_problem("path", {"n": 10}, n_samples=1000)
    tr = ssda(objs, W, 20_000, target=1e-6)
    kl = NodeOracles(objs).kappa_l
    bound = 10 * math.sqrt(kl / W.gamma) * math.log(tr.errors[0] / 1e-6)
    assert tr.iterations_to_target(1e-6) is not None
    assert tr.iterations_to_target(1e-6) <= bound


def test_ssda_reaches_consensus():
    g, W, objs = ls_problem("path", {"n": 10}, n_samples=1000)
    orc = NodeOracles(objs)
    solver = make_ssda(orc, W, TimeModel())
    for _ in range(3000):
        solver.step()
    Th = solver.theta
    resid = math.sqrt(np.sum(Th * (Th @ W.entries)))
    assert resid <= 1e-6 * np.linalg.norm(Th)


def test_dual_iterates_stay_orthogonal_to_consensus():
    g, W, objs = ls_problem("grid", {"rows": 4, "cols": 5}, n_samples=1000)
    for make in (make_ssda, make_msda):
        solver = make(NodeOracles(objs), W, TimeModel(tau=1.0))
        for _ in range(200):
            solver.step()
            assert np.abs(solver.x.sum(axis=1)).max() <= 1e-8 * max(1.0, np.abs(solver.x).max())
            assert np.abs(solver.y.sum(axis=1)).max() <= 1e-8 * max(1.0, np.abs(solver.y).max())


def test_msda_with_k1_equals_ssda_on_scaled_matrix():
    g, W, objs = ls_problem("path", {"n": 3}, n_samples=300)
    msda_solver = make_msda(NodeOracles(objs), W, TimeModel(tau=2.0))
    assert msda_solver.extra_params["K"] == 1
    c3 = msda_solver.extra_params["c3"]
    Ws = gossip_matrix(c3 * W.entries, g)
    ssda_solver = make_ssda(NodeOracles(objs), Ws, TimeModel(tau=2.0))
    assert msda_solver.eta == pytest.approx(ssda_solver.eta, rel=1e-12)
    assert msda_solver.mu == pytest.approx(ssda_solver.mu, rel=1e-12)
    for _ in range(100):
        msda_solver.step()
        ssda_solver.step()
        assert np.allclose(msda_solver.x, ssda_solver.x, rtol=1e-12, atol=1e-12)
        assert msda_solver.clock == ssda_solver.clock


def test_msda_delegates_when_gap_is_large():
    W = laplacian(build_graph("complete", {"n": 5}))
    s = make_msda(NodeOracles(identical_quadratics(5, [1.0])), W, TimeModel())
    assert s.extra_params["delegated_to"] == "ssda"
    assert s.cost == 2.0


def test_msda_time_bound_grid():
    g, W, objs = ls_problem("grid", {"rows": 10, "cols": 10})
    tm = TimeModel(tau=1.0)
    tr = msda(objs, W, 20_000, tm, target=1e-6)
    kl = NodeOracles(objs).kappa_l
    bound = 10 * math.sqrt(kl) * (1 + tm.tau / math.sqrt(W.gamma)) * math.log(tr.errors[0] / 1e-6)
    assert tr.time_to_target(1e-6) <= bound


def test_msda_beats_ssda_with_cheap_communication():
    g, W, objs = ls_problem("grid", {"rows": 10, "cols": 10})
    tm = TimeModel(tau=0.1)
    t_s = ssda(objs, W, 20_000, tm, target=1e-6).time_to_target(1e-6)
    t_m = msda(objs, W, 20_000, tm, target=1e-6).time_to_target(1e-6)
    assert t_m < t_s


def test_dagd_perfect_conditioning():
    a = np.array([0.3, -1.0])
    glob = GlobalObjective(identical_quadratics(4, a))
    tr = dagd(glob, 3, 3, theta_star=a)
    assert tr.errors[-1] <= 1e-10
    assert tr.metadata["parameters"]["cost_per_iteration"] == 1 + 2 * 3 * 1.0


def test_dagd_iteration_bound():
    g, W, objs = ls_problem("path", {"n": 10}, n_samples=1000, c=0.01)
    glob = GlobalObjective(objs)
    tr = dagd(glob, diameter(g), 5000, target=1e-6)
    bound = 10 * math.sqrt(glob.kappa_g) * math.log(tr.errors[0] / 1e-6)
    assert tr.iterations_to_target(1e-6) <= bound


def test_extra_linear_rate_fit():
    g, W, objs = ls_problem("grid", {"rows": 5, "cols": 5}, n_samples=1000)
    tr = extra(objs, W, 400, TimeModel(tau=1.0))
    err = tr.errors
    keep = err > 1e-13
    x, y = tr.clocks[keep][5:], np.log(err[keep][5:])
    slope, icpt = np.polyfit(x, y, 1)
    r2 = 1 - np.sum((y - (slope * x + icpt)) ** 2) / np.sum((y - y.mean()) ** 2)
    assert slope < 0
    assert r2 >= 0.98
    assert tr.metadata["step_selection"] == "grid_search"


def test_diging_tracking_invariant():
    g, W, objs = ls_problem("grid", {"rows": 4, "cols": 4}, n_samples=800)
    orc = NodeOracles(objs)
    solver = DIGing(orc, W, TimeModel(), step=0.05 / orc.beta)
    for _ in range(100):
        solver.step()
        assert np.allclose(solver.tracker.mean(axis=1), orc.grads(solver.x).mean(axis=1), atol=1e-8)


def test_diging_linear_convergence_logistic():
    g = build_graph("erdos_renyi", {"n": 100, "p": 0.06}, seed=0)
    parts = shard(gen_classification_dataset(2000, 10, 0), g.n, 1)
    objs = [make_logistic(p.X, p.y, 0.1) for p in parts]
    tr = diging(objs, laplacian(g), 600, TimeModel(tau=1.0), pilot=100)
    slope = np.polyfit(tr.clocks[10:], np.log(np.maximum(tr.errors[10:], 1e-300)), 1)[0]
    assert slope < 0


def test_all_solvers_agree_on_the_minimiser():
    g, W, objs = ls_problem("grid", {"rows": 4, "cols": 4}, n_samples=800)
    glob = GlobalObjective(objs)
    ts = reference_solution(glob)
    metric = ErrorMetric(glob, ts, W)
    orc = lambda: NodeOracles(objs)  # noqa: E731
    tm = TimeModel()
    from gossipopt.solvers import DAGD
    step = 1.0 / orc().beta
    solvers = [make_ssda(orc(), W, tm), make_msda(orc(), W, tm), DAGD(orc(), glob.alpha_g, glob.beta_g, 6, tm),
               EXTRA(orc(), W, tm, step), DIGing(orc(), W, tm, 0.5 * step)]
    for s in solvers:
        run(s, metric, 20_000, target=1e-14)
        assert np.abs(s.theta - ts[:, None]).max() <= 2e-5, s.name


def test_clock_is_iteration_times_cost():
    g, W, objs = ls_problem("grid", {"rows": 4, "cols": 4}, n_samples=800)
    tm = TimeModel(tau=0.3)
    for tr, cost in ((ssda(objs, W, 40, tm), 1.3),
                     (dagd(GlobalObjective(objs), 6, 40, tm), 1 + 2 * 6 * 0.3),
                     (extra(objs, W, 40, tm, 1e-3), 1.3),
                     (diging(objs, W, 40, tm, 1e-3), 1.6)):
        assert np.array_equal(tr.clocks, tr.iterations * cost)
        assert np.all(np.diff(tr.clocks) > 0)
    tr = msda(objs, W, 40, tm)
    K = tr.metadata["parameters"]["K"]
    assert np.array_equal(tr.clocks, tr.iterations * (1 + K * 0.3))


def test_runs_are_deterministic():
    g, W, objs = ls_problem("grid", {"rows": 4, "cols": 4}, n_samples=800)
    a = msda(objs, W, 100).to_csv()
    b = msda(objs, W, 100).to_csv()
    assert a == b
    a = extra(objs, W, 100, pilot=50).to_csv()
    b = extra(objs, W, 100, pilot=50).to_csv()
    assert a == b


def test_divergence_raises_with_parameters():
    g, W, objs = ls_problem("grid", {"rows": 4, "cols": 4}, n_samples=800)
    with pytest.raises(DivergenceError) as info:
        extra(objs, W, 2000, step=100.0)
    assert info.value.parameters["step"] == 100.0


def test_trace_csv_roundtrip_and_header():
    g, W, objs = ls_problem("path", {"n": 5}, n_samples=500)
    tr = ssda(objs, W, 30, record_every=7)
    text = tr.to_csv()
    assert text.splitlines()[0] == ",".join(CSV_HEADER)
    back = Trace.from_csv(text)
    assert back.records == tr.records
    assert list(tr.iterations) == [0, 7, 14, 21, 28, 30]


def test_stops_at_target_and_max_time():
    g, W, objs = ls_problem("path", {"n": 5}, n_samples=500)
    tr = ssda(objs, W, 10_000, target=1e-4)
    assert tr.metadata["stop_reason"] == "target"
    assert tr.final_error <= 1e-4
    tr = ssda(objs, W, 10_000, TimeModel(tau=1.0), max_time=50)
    assert tr.metadata["stop_reason"] == "max_time"
    assert tr.clocks[-1] == 50


def test_error_metric_two_node_scalar():
    # f1 = (theta - 1)^2 / 2, f2 = (theta + 1)^2 / 2; f_bar = theta^2/2 + 1/2, theta* = 0
    objs = [QuadraticObjective([[1.0]], [1.0], 0.5), QuadraticObjective([[1.0]], [-1.0], 0.5)]
    glob = GlobalObjective(objs)
    metric = ErrorMetric(glob, np.zeros(1))
    assert metric.error(np.array([[0.5, -2.0]])) == pytest.approx(2.0)
