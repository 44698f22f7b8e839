"""Randomized property checks shared by the CLI `verify` command and tests.

Each check runs over seed-derived random strongly connected graphs and
returns a CheckResult listing any failing seeds, so a reported failure can
be reproduced directly.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.linalg import expm

from .controller import (
    FrameRotationLaw,
    RotationConfig,
    run_centering,
    single_pulse_map,
)
from .dynamics import ModelParams, Trace, simulate
from .errors import BittideError
from .frame_oracle import compare_fluid_oracle, oracle_simulate
from .graph import (
    DirectedGraph,
    build_incidence,
    consistent_ordering,
    cycle_basis,
    integer_determinant,
    is_strongly_connected,
    load_graph,
    outward_spanning_tree,
    precedes,
    smith_partition,
    validate_ordering,
)
from .controller import ProportionalLaw
from .scenarios import omega_spread, random_graph, triangle
from .spectral import (
    laplacian,
    metzler_left_eigenvector,
    projector_and_ginverse,
    spectral_gap,
    steady_state,
)

IDENTITY_TOL = 1e-10
CYCLE_TOL = 1e-9


@dataclass
class CheckResult:
    name: str
    runs: int = 0
    failures: list[str] = field(default_factory=list)
    elapsed: float = 0.0

    @property
    def passed(self) -> bool:
        return not self.failures


def _graph_for_seed(seed: int, max_n: int, min_n: int = 2, dense: bool = False) -> DirectedGraph:
    n = min_n + seed % (max_n - min_n + 1)
    extra = (seed // 3) % (n + 1) + (n if dense else 0)
    return random_graph(n, seed=seed * 7919 + 13, extra_edges=extra)


def cycle_conservation_residual(beta: np.ndarray, basis: np.ndarray) -> float:
    """Largest |u^T beta(t)| over all samples and cycle-basis vectors u."""
    if basis.shape[1] == 0:
        return 0.0
    return float(np.abs(beta @ basis.astype(float)).max())


def range_membership_residual(beta: np.ndarray, B: np.ndarray) -> float:
    """Largest least-squares misfit of beta(t) against the row space of B."""
    Bt = B.T.astype(float)
    sol, *_ = np.linalg.lstsq(Bt, beta.T, rcond=None)
    return float(np.abs(Bt @ sol - beta.T).max())


def validate_trace_csv(graph_source, csv_path: str | Path, tol: float = CYCLE_TOL) -> dict:
    """Post-hoc validation of an emitted trace CSV against its graph.

    Returns the residuals; raises nothing so callers can decide severity.
    """
    graph, _ = load_graph(graph_source) if not isinstance(graph_source, DirectedGraph) else (graph_source, None)
    inc = build_incidence(graph)
    tree = outward_spanning_tree(graph, 1)
    basis = cycle_basis(smith_partition(inc, tree))
    with open(csv_path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = [[float(v) for v in row] for row in reader]
    data = np.asarray(rows)
    m = graph.edge_count
    beta = data[:, -m:]
    cycle_res = cycle_conservation_residual(beta, basis)
    range_res = range_membership_residual(beta, inc.B)
    return {
        "samples": len(rows),
        "columns": len(header),
        "cycle_residual": cycle_res,
        "range_residual": range_res,
        "ok": cycle_res <= tol and range_res <= tol,
    }


# -- individual checks -------------------------------------------------------


def check_incidence(seeds: int, max_n: int) -> CheckResult:
    res = CheckResult("incidence-structure")
    start = time.perf_counter()
    for seed in range(seeds):
        graph = _graph_for_seed(seed, max_n)
        inc = build_incidence(graph)
        res.runs += 1
        if not np.array_equal(inc.B, inc.S - inc.D):
            res.failures.append(f"seed {seed}: B != S - D")
        if np.any(inc.S.sum(axis=0) != 1) or np.any(inc.D.sum(axis=0) != 1):
            res.failures.append(f"seed {seed}: incidence columns are not one-hot")
        if np.any(inc.B.sum(axis=0) != 0):
            res.failures.append(f"seed {seed}: B columns do not sum to zero")
        if not is_strongly_connected(graph):
            res.failures.append(f"seed {seed}: generator produced a reducible graph")
    res.elapsed = time.perf_counter() - start
    return res


def check_spanning_tree(seeds: int, max_n: int) -> CheckResult:
    res = CheckResult("spanning-tree-and-order")
    start = time.perf_counter()
    for seed in range(seeds):
        graph = _graph_for_seed(seed, max_n)
        root = 1 + seed % graph.node_count
        tree = outward_spanning_tree(graph, root)
        res.runs += 1
        if len(tree.tree_edges) != graph.node_count - 1:
            res.failures.append(f"seed {seed}: tree does not have n-1 edges")
            continue
        dsts = {graph.destination(e) for e in tree.tree_edges}
        if dsts != set(range(1, graph.node_count + 1)) - {root}:
            res.failures.append(f"seed {seed}: tree does not reach every non-root node once")
        order = consistent_ordering(tree)
        if not validate_ordering(tree, order):
            res.failures.append(f"seed {seed}: produced ordering fails its own validator")
    res.elapsed = time.perf_counter() - start
    return res


def check_unimodular_partition(seeds: int, max_n: int) -> CheckResult:
    res = CheckResult("unimodular-partition")
    start = time.perf_counter()
    for seed in range(seeds):
        graph = _graph_for_seed(seed, max_n)
        root = 1 + seed % graph.node_count
        inc = build_incidence(graph)
        tree = outward_spanning_tree(graph, root)
        res.runs += 1
        try:
            part = smith_partition(inc, tree)
        except BittideError as exc:
            res.failures.append(f"seed {seed}: {exc}")
            continue
        det = integer_determinant(part.B11)
        if abs(det) != 1:
            res.failures.append(f"seed {seed}: |det B11| = {abs(det)}")
        if not np.array_equal(part.B11 @ part.N, part.B12):
            res.failures.append(f"seed {seed}: N is not integral")
        U = cycle_basis(part)
        if U.size and np.any(inc.B @ U != 0):
            res.failures.append(f"seed {seed}: cycle basis not in null(B)")
    res.elapsed = time.perf_counter() - start
    return res


def check_range_forcing(seeds: int, max_n: int) -> CheckResult:
    """Zeroing the tree coordinates of any row-space vector forces it to zero."""
    res = CheckResult("tree-coordinate-forcing")
    start = time.perf_counter()
    for seed in range(seeds):
        graph = _graph_for_seed(seed, max_n)
        inc = build_incidence(graph)
        tree = outward_spanning_tree(graph, 1)
        part = smith_partition(inc, tree)
        rng = np.random.default_rng(seed)
        x = rng.standard_normal(graph.node_count)
        y = inc.B.T.astype(float) @ x
        res.runs += 1
        # lift the tree coordinates back through the tree block and compare
        tree_idx = [e - 1 for e in part.tree_edge_ids]
        coeffs = np.linalg.solve(part.B11.T.astype(float), y[tree_idx])
        lifted = np.zeros(graph.node_count)
        for r, v in zip(part.row_nodes, coeffs):
            lifted[r - 1] = v
        y_hat = inc.B.T.astype(float) @ lifted
        if float(np.abs(y - y_hat).max()) > IDENTITY_TOL * max(1.0, float(np.abs(y).max())):
            res.failures.append(f"seed {seed}: nonzero row-space vector with zero tree coordinates")
    res.elapsed = time.perf_counter() - start
    return res


def check_spectral_identities(seeds: int, max_n: int) -> CheckResult:
    res = CheckResult("spectral-identities")
    start = time.perf_counter()
    for seed in range(seeds):
        graph = _graph_for_seed(seed, max_n)
        inc = build_incidence(graph)
        Q = laplacian(inc)
        res.runs += 1
        try:
            z = metzler_left_eigenvector(Q)
            spec = projector_and_ginverse(Q, z)
            gap = spectral_gap(Q)
        except BittideError as exc:
            res.failures.append(f"seed {seed}: {exc}")
            continue
        W, Qg = spec.projector, spec.ginverse
        n = len(z)
        checks = {
            "rows": np.abs(Q.sum(axis=1)).max(),
            "W=1z^T": np.abs(W - np.outer(np.ones(n), z)).max(),
            "W^2=W": np.abs(W @ W - W).max(),
            "WQ": np.abs(W @ Q).max(),
            "QW": np.abs(Q @ W).max(),
            "WQg": np.abs(W @ Qg).max(),
            "QgW": np.abs(Qg @ W).max(),
            "QQgQ=Q": np.abs(Q @ Qg @ Q - Q).max(),
            "BtW": np.abs(inc.B.T @ W).max(),
        }
        t_limit = 28.0 / gap
        E = expm(Q * t_limit)
        checks["e^{Qt}->W"] = np.abs(E - W).max()
        t_mid = 2.0 / gap
        E_mid = expm(Q * t_mid)
        checks["e^{Qt}=W+Qg Q e^{Qt}"] = np.abs(E_mid - (W + Qg @ Q @ E_mid)).max()
        for label, value in checks.items():
            if float(value) > IDENTITY_TOL:
                res.failures.append(f"seed {seed}: {label} residual {float(value):.3g}")
    res.elapsed = time.perf_counter() - start
    return res


def _sim_setup(seed: int, max_n: int, delta: float, k: float):
    graph = _graph_for_seed(seed, max_n, min_n=3)
    inc = build_incidence(graph)
    omega = omega_spread(graph.node_count, delta=delta, seed=seed + 1)
    params = ModelParams(omega_u=omega, incidence=inc)
    Q = laplacian(inc)
    z = metzler_left_eigenvector(Q)
    spec = projector_and_ginverse(Q, z)
    gap = spectral_gap(Q)
    return graph, inc, params, Q, spec, gap


def check_steady_state_vs_sim(seeds: int, max_n: int) -> CheckResult:
    res = CheckResult("steady-state-vs-simulation")
    start = time.perf_counter()
    k = 0.5
    for seed in range(seeds):
        graph, inc, params, Q, spec, gap = _sim_setup(seed, max_n, delta=1e-4, k=k)
        res.runs += 1
        t_end = 20.0 / (k * gap)
        dt = min(0.05, t_end / 2000.0, 2.0 / (k * float(np.abs(Q).max()) * 2.0 + 1e-12))
        trace = simulate(params, ProportionalLaw(k), t_end, dt=dt, sample_stride=10 ** 9)
        omega_ss, beta_ss = steady_state(spec, inc.B, k, params.omega_u)
        beta_err = float(np.abs(trace.beta[-1] - beta_ss).max())
        omega_err = float(np.abs(trace.omega[-1] - omega_ss).max())
        if beta_err > 1e-6 or omega_err > 1e-8:
            res.failures.append(f"seed {seed}: beta err {beta_err:.3g}, omega err {omega_err:.3g}")
    res.elapsed = time.perf_counter() - start
    return res


def _centering_setup(seed: int, max_n: int):
    graph = _graph_for_seed(seed, max_n, min_n=3)
    inc = build_incidence(graph)
    root = 1 + seed % graph.node_count
    tree = outward_spanning_tree(graph, root)
    schedule = consistent_ordering(tree)
    omega = omega_spread(graph.node_count, delta=0.05, seed=seed + 1)
    params = ModelParams(omega_u=omega, incidence=inc)
    config = RotationConfig(k=0.5, k2=0.2, epsilon=1e-3)
    return graph, inc, tree, schedule, params, config


def check_centering_pipeline(seeds: int, max_n: int) -> CheckResult:
    """Pulse-map factorization, ordered tree coverage, and the final bound."""
    res = CheckResult("centering-pipeline")
    start = time.perf_counter()
    for seed in range(seeds):
        graph, inc, tree, schedule, params, config = _centering_setup(seed, max_n)
        res.runs += 1
        trace, report = run_centering(graph, tree, schedule, params, config, dt=0.02, sample_stride=50)
        eps = config.epsilon
        if not report.converged:
            res.failures.append(f"seed {seed}: run did not converge ({report.abort_reason})")
            continue
        map_tol = 1e-6 + eps
        for rec in report.phases:
            M = single_pulse_map(inc, rec.edge)
            residual = float(np.abs(rec.beta_after - M @ rec.beta_before).max())
            if residual > map_tol:
                res.failures.append(f"seed {seed}: pulse map residual {residual:.3g} on edge {rec.edge}")
        processed: list[int] = []
        for rec in report.phases:
            processed.append(rec.edge)
            worst = max(abs(float(rec.beta_after[e - 1])) for e in processed)
            if worst > 5 * eps:
                res.failures.append(f"seed {seed}: processed edge exceeds 5*eps at boundary t={rec.t_end:.3g}")
                break
        if report.max_final_beta > 5 * eps:
            res.failures.append(f"seed {seed}: final max |beta| = {report.max_final_beta:.3g}")
        part = smith_partition(inc, tree)
        basis = cycle_basis(part)
        if cycle_conservation_residual(trace.beta, basis) > CYCLE_TOL:
            res.failures.append(f"seed {seed}: cycle conservation violated")
        if range_membership_residual(trace.beta, inc.B) > IDENTITY_TOL:
            res.failures.append(f"seed {seed}: trace left the row space of B")
    res.elapsed = time.perf_counter() - start
    return res


def check_frozen_offset(seeds: int, max_n: int) -> CheckResult:
    """At the freeze the latched correction equals (W - I) omega_u."""
    res = CheckResult("frozen-offset-identity")
    start = time.perf_counter()
    for seed in range(seeds):
        graph, inc, tree, schedule, params, config = _centering_setup(seed, max_n)
        res.runs += 1
        Q = laplacian(inc)
        spec = projector_and_ginverse(Q, metzler_left_eigenvector(Q))
        law = FrameRotationLaw(inc, tree, schedule, config, dt=0.02, prop_time_limit=10 ** 6)
        simulate(params, law, t_end=10 ** 6, dt=0.02, sample_stride=10 ** 9)
        if law.frozen_y is None:
            res.failures.append(f"seed {seed}: proportional phase never froze")
            continue
        target = (spec.projector - np.eye(len(params.omega_u))) @ params.omega_u
        err = float(np.abs(config.k * law.frozen_y - target).max())
        if err > 1e-5:
            res.failures.append(f"seed {seed}: frozen correction off by {err:.3g}")
    res.elapsed = time.perf_counter() - start
    return res


def check_oracle_agreement(seeds: int, max_n: int) -> CheckResult:
    """Frame-accurate and fluid runs of the same pipeline stay within 2 frames."""
    res = CheckResult("fluid-oracle-agreement")
    start = time.perf_counter()
    for seed in range(seeds):
        outcome = centering_comparison(seed=seed, max_n=max_n)
        res.runs += 1
        if outcome["deviation"] > 2.0:
            res.failures.append(f"seed {seed}: deviation {outcome['deviation']:.3g} frames")
        if outcome["oracle_cycle_residual"] != 0:
            res.failures.append(f"seed {seed}: oracle cycle sums drifted")
    res.elapsed = time.perf_counter() - start
    return res


def fixed_schedule_for(
    inc, tree, targets, params, config: RotationConfig, dt: float
) -> RotationConfig:
    """Fixed phase times sized from the predicted equilibrium occupancies.

    Windows cover the worst predicted pulse plus quantization slack, and
    every boundary lands on the dt grid so fluid and frame-accurate runs
    share it exactly.
    """
    Q = laplacian(inc)
    gap = spectral_gap(Q)
    spec = projector_and_ginverse(Q, metzler_left_eigenvector(Q))
    _, beta_ss = steady_state(spec, inc.B, config.k, params.omega_u)
    est = float(np.abs(beta_ss).max()) + 3.0
    margin = config.resolve_margin(dt)
    window = est / config.k2 + 2.0 * margin + 5.0 * dt
    t1 = 30.0 / (config.k * gap)
    grid = lambda x: math.ceil(x / dt) * dt
    times = tuple(grid(t1 + j * window) for j in range(len(targets) + 1))
    return RotationConfig(
        k=config.k,
        k2=config.k2,
        epsilon=config.epsilon,
        convergence_tol=config.convergence_tol,
        window=config.window,
        phase_times=times,
        margin=config.margin,
        hold_time=config.hold_time,
        expected_max_beta=est,
    )


def centering_comparison(
    seed: int | None = None,
    max_n: int = 10,
    scenario=None,
    dt: float = 0.5,
    capacity: int = 64,
) -> dict:
    """Run the same fixed-time centering pipeline on both simulators.

    Returns the deviation plus the residuals used by the conservation
    checks.  Capacity defaults high enough that quantization flicker plus
    multi-frame equilibrium offsets stay inside the buffers.
    """
    if scenario is None:
        n = 3 + (seed % (max_n - 2))
        graph = random_graph(n, seed=seed * 104729 + 7, extra_edges=2 * n)
        omega = omega_spread(n, delta=2e-3, seed=seed + 11)
        root = 1 + seed % n
        base = RotationConfig(k=2e-3, k2=0.5, epsilon=1e-3)
    else:
        graph = scenario.graph
        omega = scenario.omega_u
        root = scenario.root
        base = scenario.config
    inc = build_incidence(graph)
    tree = outward_spanning_tree(graph, root)
    targets = consistent_ordering(tree)
    params = ModelParams(omega_u=omega, incidence=inc)
    config = fixed_schedule_for(inc, tree, targets, params, config=base, dt=dt)
    offset = capacity // 2

    fluid_law = FrameRotationLaw(inc, tree, targets, config, dt)
    oracle_law = FrameRotationLaw(inc, tree, targets, config, dt)
    t_end = config.phase_times[-1] + config.resolve_hold(dt) + 10 * dt
    fluid = simulate(params, fluid_law, t_end, dt=dt, sample_stride=1)
    oracle = oracle_simulate(
        params, oracle_law, t_end, dt=dt, sample_stride=1, offset=offset, capacity=capacity
    )
    deviation = compare_fluid_oracle(fluid, oracle, offset)
    part = smith_partition(inc, tree)
    basis = cycle_basis(part)
    occ = oracle.beta.astype(np.int64)
    if basis.shape[1]:
        sums = occ @ basis
        oracle_cycle = int(np.abs(sums - sums[0]).max())
    else:
        oracle_cycle = 0
    return {
        "deviation": deviation,
        "fluid_cycle_residual": cycle_conservation_residual(fluid.beta, basis),
        "oracle_cycle_residual": oracle_cycle,
        "fluid_trace": fluid,
        "oracle_trace": oracle,
        "offset": offset,
        "report_edges": [len(fluid_law.phase_records), len(oracle_law.phase_records)],
    }


def self_test(detect_tol: float = 1e-3) -> tuple[bool, str]:
    """Inject a wrong-signed pulse and confirm the harness catches it."""
    scen = triangle(delta=1e-3, k=0.05, k2=0.05, epsilon=1e-3)
    inc = build_incidence(scen.graph)
    tree = outward_spanning_tree(scen.graph, scen.root)
    targets = consistent_ordering(tree)
    params = ModelParams(omega_u=scen.omega_u, incidence=inc)
    law = FrameRotationLaw(inc, tree, targets, scen.config, scen.dt,
                           prop_time_limit=5000.0, invert_pulse_sign=True)
    simulate(params, law, t_end=5000.0, dt=scen.dt, sample_stride=10 ** 6)
    if law.aborted is not None and not law.phase_records:
        return True, f"injected fault detected: {law.aborted}"
    for rec in law.phase_records:
        M = single_pulse_map(inc, rec.edge)
        residual = float(np.abs(rec.beta_after - M @ rec.beta_before).max())
        if residual > 1e-6 + detect_tol:
            return True, f"injected fault detected: pulse map residual {residual:.3g}"
    return False, "injected fault was NOT detected; the harness is broken"


CHECKS = (
    ("incidence-structure", check_incidence, 1.0),
    ("spanning-tree-and-order", check_spanning_tree, 1.0),
    ("unimodular-partition", check_unimodular_partition, 1.0),
    ("tree-coordinate-forcing", check_range_forcing, 1.0),
    ("spectral-identities", check_spectral_identities, 0.5),
    ("steady-state-vs-simulation", check_steady_state_vs_sim, 0.2),
    ("centering-pipeline", check_centering_pipeline, 0.2),
    ("frozen-offset-identity", check_frozen_offset, 0.1),
    ("fluid-oracle-agreement", check_oracle_agreement, 0.05),
)


def run_all(seeds: int = 100, max_n: int = 12) -> list[CheckResult]:
    results = []
    for _, fn, fraction in CHECKS:
        count = max(2, int(round(seeds * fraction)))
        results.append(fn(count, max_n))
    return results
