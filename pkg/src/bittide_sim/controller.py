"""Feedback laws: proportional control and the pulsed buffer-centering sequence.

The centering controller runs in four regimes:

  1. proportional, c = k * y, until the correction signal is stationary,
  2. freeze: every node latches its current correction k * y_i, which at
     equilibrium equals the offset that keeps all clocks at the common
     frequency without feedback,
  3. one pulse per scheduled edge: the edge's destination node adds
     k2 * sign(beta_g) on top of its frozen correction until that edge's
     relative occupancy reaches zero, while everyone else holds,
  4. hold the frozen corrections.

A single pulse on edge g moves the occupancy vector by exactly
(I + B^T D E^g), which zeroes coordinate g and leaves every edge not
touching dst(g) unchanged.  Processing tree edges so that every edge comes
after its tree ancestors therefore never disturbs an already-centered tree
edge, and once all n-1 tree occupancies are zero the remaining ones are
forced to zero too, because beta stays in the row space of B.

Each pulse latches its drive sign when the phase starts and holds it until
the occupancy crosses zero, which the integrator resolves exactly through
the guard mechanism; afterwards the dead-zone comparator (output 0 for
|x| <= epsilon) keeps the drive off, so there is no chatter.  Latching
rather than re-reading the dead-zoned sign matters: a live dead zone would
park every tree edge at the zone boundary instead of zero, and those +-eps
leftovers accumulate along tree paths into non-tree occupancies several
times eps.  With the latch, the realized pulse equals the ideal on-off
drive and the map above holds to integration precision.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .dynamics import ModelParams, SystemState, Trace, simulate
from .errors import ConfigError, ScheduleError
from .graph import IncidenceSet, SpanningTree, validate_ordering
from .spectral import laplacian, metzler_left_eigenvector, projector_and_ginverse, spectral_gap, steady_state


def sign_deadzone(x: float, epsilon: float) -> float:
    """Sign of x, zeroed inside the dead zone |x| <= epsilon."""
    if abs(x) <= epsilon:
        return 0.0
    return 1.0 if x > 0 else -1.0


def proportional_control(y: np.ndarray, k: float) -> np.ndarray:
    """Plain proportional feedback c = k * y."""
    if k <= 0:
        raise ConfigError("gain k must be positive")
    return k * np.asarray(y, dtype=float)


def pulse_duration(beta_g: float, k2: float) -> float:
    """Time for a pulse of magnitude k2 to drain an occupancy of beta_g frames."""
    if k2 <= 0:
        raise ConfigError("pulse magnitude k2 must be positive")
    return abs(beta_g) / k2


def single_pulse_map(incidence: IncidenceSet, g: int) -> np.ndarray:
    """The m x m linear map I + B^T D E^g applied to beta by one full pulse on edge g.

    Only column g differs from the identity: it adds B's row for dst(g), so
    (M x)_g = 0, edges out of dst(g) gain x_g, edges into dst(g) lose x_g,
    and everything else is untouched.
    """
    B = incidence.B
    n, m = B.shape
    if not 1 <= g <= m:
        raise ConfigError(f"edge id {g} not in 1..{m}")
    dst_row = int(np.nonzero(incidence.D[:, g - 1])[0][0])
    M = np.eye(m)
    M[:, g - 1] += B[dst_row, :].astype(float)
    return M


@dataclass(frozen=True)
class RotationConfig:
    """Gains and phase policy for one centering run.

    phase_times selects the fixed-time policy: strictly increasing times
    (t_1, ..., t_n) where the proportional phase ends at t_1 and pulse j
    owns [t_j, t_{j+1}).  Leaving it None selects the adaptive policy,
    which freezes once the correction signal has been stationary over
    `window` time units and advances each pulse after its edge is centered
    plus a dwell margin.  margin and hold_time default to 10 * dt at run
    time.  expected_max_beta bounds |beta| for validating fixed windows
    when no buffer capacity is configured.
    """

    k: float = 2e-3
    k2: float = 5e-2
    epsilon: float = 1e-3
    convergence_tol: float = 1e-9
    window: float = 1.0
    phase_times: tuple[float, ...] | None = None
    margin: float | None = None
    hold_time: float | None = None
    expected_max_beta: float | None = None

    def __post_init__(self) -> None:
        if self.k <= 0 or self.k2 <= 0:
            raise ConfigError("gains k and k2 must be positive")
        if self.epsilon <= 0:
            raise ConfigError("dead-zone epsilon must be positive")
        if self.convergence_tol <= 0 or self.window <= 0:
            raise ConfigError("convergence_tol and window must be positive")
        if self.phase_times is not None:
            times = tuple(float(t) for t in self.phase_times)
            object.__setattr__(self, "phase_times", times)
            if len(times) < 2 or any(b <= a for a, b in zip(times, times[1:])) or times[0] <= 0:
                raise ConfigError("phase_times must be strictly increasing and start after 0")

    def resolve_margin(self, dt: float) -> float:
        return self.margin if self.margin is not None else 10.0 * dt

    def resolve_hold(self, dt: float) -> float:
        return self.hold_time if self.hold_time is not None else 10.0 * dt

    def validate_phase_times(self, max_beta: float, dt: float) -> None:
        """Reject fixed windows shorter than the worst-case pulse plus margin."""
        if self.phase_times is None:
            return
        margin = self.resolve_margin(dt)
        need = pulse_duration(max_beta, self.k2) + margin
        for j, (a, b) in enumerate(zip(self.phase_times, self.phase_times[1:]), start=1):
            if b - a < need:
                raise ConfigError(
                    f"phase window {j} is {b - a:.6g} but worst-case pulse needs {need:.6g}"
                )


@dataclass
class ControllerState:
    """Externally visible phase of the centering controller.

    phase is 'proportional', 'pulse', or 'hold'; during a pulse,
    pulse_index points into the schedule (0-based) and pulse_sign holds
    the latched drive sign.  frozen_y is the measurement latched when the
    proportional phase ended.
    """

    phase: str
    schedule: tuple[int, ...]
    tree: SpanningTree
    pulse_index: int | None = None
    frozen_y: np.ndarray | None = None
    pulse_sign: float | None = None


def frame_rotation_control(
    t: float,
    state: ControllerState,
    beta_tilde: np.ndarray,
    y: np.ndarray,
    config: RotationConfig,
    allow_root_target: bool = False,
) -> np.ndarray:
    """Control vector for the current phase of the centering sequence.

    Proportional phase: c = k y.  Pulse j: the destination of the active
    edge gets k * frozen_y + k2 * s, where s is the latched pulse sign if
    one is set and otherwise the dead-zoned sign of that edge's occupancy;
    every other node, the root included, gets its frozen correction.
    Hold: frozen corrections only.  Pulsing the root is a schedule error
    unless explicitly allowed (the deliberately broken counter-example
    mode).
    """
    if state.phase == "proportional":
        return proportional_control(y, config.k)
    if state.frozen_y is None:
        raise ConfigError("frozen measurement is required after the proportional phase")
    c = config.k * state.frozen_y
    if state.phase == "pulse":
        if state.pulse_index is None:
            raise ConfigError("pulse phase needs a pulse_index")
        g = state.schedule[state.pulse_index]
        node = state.tree.graph.destination(g)
        if node == state.tree.root and not allow_root_target:
            raise ScheduleError(f"edge {g} would pulse the root node {node}")
        if state.pulse_sign is not None:
            s = state.pulse_sign
        else:
            s = sign_deadzone(float(beta_tilde[g - 1]), config.epsilon)
        c = c.copy()
        c[node - 1] += config.k2 * s
    elif state.phase != "hold":
        raise ConfigError(f"unknown controller phase {state.phase!r}")
    return c


class ZeroLaw:
    """No control input; clocks free-run at their uncontrolled frequencies."""

    def __call__(self, t: float, state: SystemState) -> np.ndarray:
        return np.zeros(len(state.y))


class ProportionalLaw:
    """Stateless proportional feedback c = k * y."""

    def __init__(self, k: float) -> None:
        if k <= 0:
            raise ConfigError("gain k must be positive")
        self.k = k

    def __call__(self, t: float, state: SystemState) -> np.ndarray:
        return self.k * state.y


@dataclass(eq=False)
class PhaseRecord:
    """Occupancy snapshots at the boundaries of one pulse phase."""

    edge: int
    t_start: float
    t_end: float
    beta_before: np.ndarray
    beta_after: np.ndarray


_PROP = "proportional"
_PULSE = "pulse"
_DWELL = "dwell"
_HOLD = "hold"
_DONE = "done"


class FrameRotationLaw:
    """Stateful control law executing the full centering sequence.

    Mode updates happen only in observe(), which the integrator calls at
    committed step boundaries, so __call__ stays a pure function of
    (t, state) for the current mode.  During a pulse the guard exposes the
    active edge's occupancy, letting the integrator land exactly on its
    zero crossing.

    The law sees only controller-visible quantities: y for the frozen
    corrections and the active edge's occupancy for the pulse comparator.
    """

    def __init__(
        self,
        incidence: IncidenceSet,
        tree: SpanningTree,
        targets: Sequence[int],
        config: RotationConfig,
        dt: float,
        allow_root_targets: bool = False,
        prop_time_limit: float | None = None,
        invert_pulse_sign: bool = False,
    ) -> None:
        self.incidence = incidence
        self.tree = tree
        self.targets = tuple(int(g) for g in targets)
        self.config = config
        self.margin = config.resolve_margin(dt)
        self.hold_duration = config.resolve_hold(dt)
        self.allow_root = allow_root_targets
        self.prop_time_limit = prop_time_limit
        self._flip = invert_pulse_sign

        graph = tree.graph
        m = incidence.B.shape[1]
        for g in self.targets:
            if not 1 <= g <= m:
                raise ScheduleError(f"target edge {g} not in 1..{m}")
            if graph.destination(g) == tree.root and not allow_root_targets:
                raise ScheduleError(f"edge {g} would pulse the root node {tree.root}")
        if config.phase_times is not None and len(config.phase_times) != len(self.targets) + 1:
            raise ConfigError(
                f"fixed policy needs {len(self.targets) + 1} phase times, got {len(config.phase_times)}"
            )

        self.mode = _PROP
        self.idx = 0
        self.frozen_y: np.ndarray | None = None
        self._frozen_c: np.ndarray | None = None
        self.converged = False
        self.aborted: str | None = None
        self.finished = False
        self.t1: float | None = None
        self.phase_records: list[PhaseRecord] = []
        self._events: list[tuple[float, str]] = []
        self._hist: deque[tuple[float, np.ndarray]] = deque()
        self._dwell_until = math.inf
        self._deadline = math.inf
        self._hold_until = math.inf
        self._phase_start = 0.0
        self._beta_before: np.ndarray | None = None
        self._pulse_sign = 0.0
        self._pulse_start_mag = 0.0

    # -- control output ----------------------------------------------------

    def __call__(self, t: float, state: SystemState) -> np.ndarray:
        if self.mode == _PROP:
            return self.config.k * state.y
        assert self._frozen_c is not None
        c = self._frozen_c.copy()
        if self.mode == _PULSE:
            g = self.targets[self.idx]
            node = self.tree.graph.destination(g)
            c[node - 1] += self.config.k2 * self._pulse_sign
        return c

    @property
    def constant_rhs(self) -> bool:
        return self.mode != _PROP

    def guard(self, t: float, state: SystemState) -> float | None:
        if self.mode != _PULSE:
            return None
        return float(state.beta_tilde[self.targets[self.idx] - 1])

    def drain_events(self) -> list[tuple[float, str]]:
        out = self._events
        self._events = []
        return out

    def controller_state(self) -> ControllerState:
        """Snapshot in the externally documented form."""
        phase = {_PROP: "proportional", _PULSE: "pulse"}.get(self.mode, "hold")
        return ControllerState(
            phase=phase,
            schedule=self.targets,
            tree=self.tree,
            pulse_index=self.idx if self.mode == _PULSE else None,
            frozen_y=self.frozen_y,
            pulse_sign=self._pulse_sign if self.mode == _PULSE else None,
        )

    # -- mode machine (committed boundaries only) ---------------------------

    def observe(self, t: float, state: SystemState) -> None:
        cfg = self.config
        if self.mode == _PROP:
            self._track(t, state)
            if cfg.phase_times is not None:
                if t >= cfg.phase_times[0] - 1e-9:
                    self.converged = self._stationary(t)
                    self._freeze(t, state)
            elif self._stationary(t):
                self.converged = True
                self._freeze(t, state)
            elif self.prop_time_limit is not None and t > self.prop_time_limit:
                self._abort(t, f"correction signal not stationary by t = {t:.6g}")
        elif self.mode == _PULSE:
            g = self.targets[self.idx]
            bg = float(state.beta_tilde[g - 1])
            if self._pulse_sign * bg <= max(1e-10, 1e-9 * self._pulse_start_mag):
                self._events.append((t, f"pulse_end edge={g}"))
                self._enter_dwell(t)
            elif t > self._deadline:
                self._abort(t, f"pulse for edge {g} exceeded its budget")
        elif self.mode == _DWELL:
            if t >= self._dwell_until - 1e-9:
                self._finish_phase(t, state)
        elif self.mode == _HOLD:
            if t >= self._hold_until - 1e-9:
                self.mode = _DONE
                self.finished = True

    def _track(self, t: float, state: SystemState) -> None:
        c = self.config.k * state.y
        self._hist.append((t, c))
        horizon = t - self.config.window
        while len(self._hist) >= 2 and self._hist[1][0] <= horizon:
            self._hist.popleft()

    def _stationary(self, t: float) -> bool:
        t_old, c_old = self._hist[0]
        if t_old > t - self.config.window:
            return False
        c_now = self._hist[-1][1]
        return float(np.abs(c_now - c_old).max()) < self.config.convergence_tol

    def _freeze(self, t: float, state: SystemState) -> None:
        self.t1 = t
        self.frozen_y = state.y.copy()
        self._frozen_c = self.config.k * self.frozen_y
        self._events.append((t, "freeze"))
        if not self.targets:
            self._enter_hold(t)
        else:
            self._begin_phase(t, state)

    def _begin_phase(self, t: float, state: SystemState) -> None:
        g = self.targets[self.idx]
        cfg = self.config
        node = self.tree.graph.destination(g)
        if node == self.tree.root and not self.allow_root:
            raise ScheduleError(f"edge {g} would pulse the root node {node}")
        self._phase_start = t
        self._beta_before = state.beta_tilde.copy()
        self._events.append((t, f"phase_start edge={g}"))
        bg = float(state.beta_tilde[g - 1])
        if cfg.phase_times is not None:
            self._deadline = cfg.phase_times[self.idx + 1]
        else:
            self._deadline = t + 2.0 * pulse_duration(bg, cfg.k2) + 10.0 * self.margin + 1.0
        s = sign_deadzone(bg, cfg.epsilon)
        if s == 0.0:
            self._events.append((t, f"pulse_skip edge={g}"))
            self._enter_dwell(t)
        else:
            self._pulse_sign = -s if self._flip else s
            self._pulse_start_mag = abs(bg)
            self.mode = _PULSE

    def _enter_dwell(self, t: float) -> None:
        self.mode = _DWELL
        if self.config.phase_times is not None:
            self._dwell_until = self.config.phase_times[self.idx + 1]
        else:
            self._dwell_until = t + self.margin

    def _finish_phase(self, t: float, state: SystemState) -> None:
        assert self._beta_before is not None
        g = self.targets[self.idx]
        self.phase_records.append(
            PhaseRecord(
                edge=g,
                t_start=self._phase_start,
                t_end=t,
                beta_before=self._beta_before,
                beta_after=state.beta_tilde.copy(),
            )
        )
        self._events.append((t, f"phase_end edge={g}"))
        self.idx += 1
        if self.idx >= len(self.targets):
            self._enter_hold(t)
        else:
            self._begin_phase(t, state)

    def _enter_hold(self, t: float) -> None:
        self.mode = _HOLD
        self._hold_until = t + self.hold_duration
        self._events.append((t, "hold"))

    def _abort(self, t: float, reason: str) -> None:
        self.aborted = reason
        self._events.append((t, f"abort: {reason}"))
        self.mode = _DONE
        self.finished = True


@dataclass(eq=False)
class CenteringReport:
    """Outcome of one centering run."""

    phases: list[PhaseRecord]
    max_final_beta: float
    converged: bool
    t1: float | None = None
    abort_reason: str | None = None

    def as_dict(self) -> dict:
        return {
            "phases": [
                {
                    "edge": rec.edge,
                    "t_start": rec.t_start,
                    "t_end": rec.t_end,
                    "beta_before": [float(v) for v in rec.beta_before],
                    "beta_after": [float(v) for v in rec.beta_after],
                }
                for rec in self.phases
            ],
            "max_final_beta": self.max_final_beta,
            "converged": self.converged,
            "t1": self.t1,
            "abort_reason": self.abort_reason,
        }

    def write_json(self, path: str | Path) -> None:
        import json

        Path(path).write_text(json.dumps(self.as_dict(), indent=2, sort_keys=True) + "\n")


def _default_budgets(
    incidence: IncidenceSet,
    params: ModelParams,
    config: RotationConfig,
    n_targets: int,
    margin: float,
    hold: float,
) -> tuple[float, float]:
    """Proportional time limit and total budget from the spectral timescale."""
    Q = laplacian(incidence)
    gap = spectral_gap(Q)
    z = metzler_left_eigenvector(Q)
    spec = projector_and_ginverse(Q, z)
    _, beta_ss = steady_state(spec, incidence.B, config.k, params.omega_u)
    span = float(params.omega_u.max() - params.omega_u.min())
    ratio = (config.k * max(span, 1.0) + config.convergence_tol) / config.convergence_tol
    prop_limit = 2.0 * math.log(ratio) / (config.k * gap) + 5.0 * config.window
    worst = float(np.abs(beta_ss).max())
    per_pulse = 2.0 * pulse_duration(worst, config.k2) + 2.0 * margin + 1.0
    total = prop_limit + n_targets * per_pulse + hold + 5.0 * margin + 1.0
    return prop_limit, total


def run_centering(
    graph,
    tree: SpanningTree,
    schedule: Sequence[int],
    params: ModelParams,
    config: RotationConfig,
    dt: float = 0.01,
    sample_stride: int = 1,
    targets: Sequence[int] | None = None,
    enforce_order: bool = True,
    allow_root_targets: bool = False,
    prop_time_limit: float | None = None,
    t_end: float | None = None,
) -> tuple[Trace, CenteringReport]:
    """Run the full pipeline: proportional, freeze, pulses, hold.

    `targets` overrides the schedule with an arbitrary pulse list (the
    counter-example mode); with the default schedule path the ordering is
    validated against the tree first.  Failure to converge or a pulse
    overrunning its budget ends the run early; the partial trace and a
    report with converged=False are returned rather than raised.
    """
    inc = params.incidence
    n, m = inc.B.shape
    if n != graph.node_count or m != graph.edge_count:
        raise ConfigError("params.incidence does not match the graph")
    if targets is None:
        if enforce_order and not validate_ordering(tree, schedule):
            raise ScheduleError("schedule violates the tree's processing order")
        targets = tuple(int(e) for e in schedule)
    else:
        targets = tuple(int(e) for e in targets)

    margin = config.resolve_margin(dt)
    hold = config.resolve_hold(dt)
    if config.phase_times is not None:
        max_beta = config.expected_max_beta
        if max_beta is None and params.buffer_capacity is not None:
            max_beta = params.buffer_capacity / 2
        if max_beta is None:
            raise ConfigError("fixed phase times need expected_max_beta or a buffer capacity")
        config.validate_phase_times(max_beta, dt)
        prop_limit = None
        budget = config.phase_times[-1] + hold + 2.0 * margin + 1.0
    else:
        auto_prop, auto_budget = _default_budgets(inc, params, config, len(targets), margin, hold)
        prop_limit = prop_time_limit if prop_time_limit is not None else auto_prop
        budget = t_end if t_end is not None else (auto_budget if prop_time_limit is None else
                                                  prop_limit + auto_budget)
    if t_end is not None:
        budget = t_end

    law = FrameRotationLaw(
        inc,
        tree,
        targets,
        config,
        dt,
        allow_root_targets=allow_root_targets,
        prop_time_limit=prop_limit,
        invert_pulse_sign=False,
    )
    trace = simulate(params, law, budget, dt=dt, sample_stride=sample_stride)
    max_final = float(np.abs(trace.beta[-1]).max())
    completed = law.aborted is None and law.idx >= len(targets) and law.t1 is not None
    report = CenteringReport(
        phases=law.phase_records,
        max_final_beta=max_final,
        converged=bool(law.converged and completed),
        t1=law.t1,
        abort_reason=law.aborted,
    )
    return trace, report
