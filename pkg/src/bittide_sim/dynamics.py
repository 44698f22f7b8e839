"""Continuous-time simulation of the normalized buffer-flow model.

State is the normalized phase vector theta (frames), integrated from
theta(0) = 0 under d theta/dt = omega_u + c(t).  Relative occupancies are
beta = B^T theta and the per-node measurement is y = D beta, so beta stays
in the row space of B by construction and every cycle sum of beta is
conserved exactly.

Control laws are callables `law(t, state) -> c` receiving a SystemState
with the derived measurements.  A law may additionally provide:

  observe(t, state)   called once per committed step (never on trial RK4
                      stages), the only place a stateful law may update
                      its mode,
  guard(t, state)     a scalar whose zero crossing must be resolved; the
                      integrator splits the step at the crossing so pulse
                      phases terminate at machine precision instead of one
                      step late,
  constant_rhs        True while the law's output is measurement-frozen,
                      letting the integrator take exact linear steps,
  drain_events()      labelled (t, label) pairs merged into the trace,
  finished            True once the law wants the run to stop early.

The integrator is fixed-step classic Runge-Kutta.  Within every controller
regime used here the right-hand side is affine in theta, for which RK4
reproduces equilibria exactly; accuracy is limited only by the resolved
switching times, which the guard mechanism pins down.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Protocol

import numpy as np

from .errors import ConfigError, NumericsError
from .graph import IncidenceSet


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Uncontrolled frequencies plus topology (and optional buffer capacity).

    buffer_capacity only arms overflow warnings; the fluid model itself is
    unbounded.
    """

    omega_u: np.ndarray
    incidence: IncidenceSet
    buffer_capacity: float | None = None

    def __post_init__(self) -> None:
        omega = np.asarray(self.omega_u, dtype=float)
        object.__setattr__(self, "omega_u", omega)
        n, _ = self.incidence.B.shape
        if omega.shape != (n,):
            raise ConfigError(f"omega_u has shape {omega.shape}, expected ({n},)")
        if np.any(omega <= 0):
            raise ConfigError("uncontrolled frequencies must be positive")
        if self.buffer_capacity is not None and self.buffer_capacity <= 0:
            raise ConfigError("buffer_capacity must be positive")


@dataclass(frozen=True, eq=False)
class SystemState:
    """Simulation snapshot: phases plus the derived measurements."""

    t: float
    theta_tilde: np.ndarray
    beta_tilde: np.ndarray
    y: np.ndarray


class ControlLaw(Protocol):
    def __call__(self, t: float, state: SystemState) -> np.ndarray: ...


def buffer_occupancy(theta_tilde: np.ndarray, B: np.ndarray) -> np.ndarray:
    """Relative occupancies beta = B^T theta."""
    return B.T.astype(float) @ np.asarray(theta_tilde, dtype=float)


def measurement(beta_tilde: np.ndarray, D: np.ndarray) -> np.ndarray:
    """Per-node sum of incoming relative occupancies, y = D beta."""
    return D.astype(float) @ np.asarray(beta_tilde, dtype=float)


@dataclass(eq=False)
class Trace:
    """Sampled series of one run plus labelled controller events."""

    times: np.ndarray
    theta: np.ndarray
    omega: np.ndarray
    beta: np.ndarray
    events: list[tuple[float, str]] = field(default_factory=list)

    @property
    def sample_count(self) -> int:
        return len(self.times)

    def write_csv(self, path: str | Path) -> None:
        """CSV with header t, omega_1..omega_n, beta_1..beta_m, 12 significant digits."""
        n = self.omega.shape[1]
        m = self.beta.shape[1]
        header = ",".join(
            ["t"] + [f"omega_{i}" for i in range(1, n + 1)] + [f"beta_{e}" for e in range(1, m + 1)]
        )
        lines = [header]
        for i in range(len(self.times)):
            row = [self.times[i], *self.omega[i], *self.beta[i]]
            lines.append(",".join(format(v, ".12g") for v in row))
        Path(path).write_text("\n".join(lines) + "\n")

    def write_events(self, path: str | Path) -> None:
        import json

        doc = [{"t": float(t), "label": label} for t, label in self.events]
        Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def _locate_crossing(guard_fn, advance, make_state, t, theta, state, h_full, g0, g1):
    """Step length in (0, h_full) where the guard crosses zero.

    The guard is linear in time whenever the law's output is frozen, so the
    first interpolation is already exact; a few regula-falsi rounds cover
    the general case.
    """
    h_lo, g_lo = 0.0, g0
    h_hi, g_hi = h_full, g1
    h = h_full * g0 / (g0 - g1)
    tol = 1e-10 * max(1.0, abs(g0))
    for _ in range(8):
        h = min(max(h, 1e-9 * h_full), (1.0 - 1e-12) * h_full)
        theta_c = advance(t, theta, state, h)
        g = guard_fn(t + h, make_state(t + h, theta_c))
        if g is None or abs(g) <= tol:
            return h
        if (g > 0) == (g0 > 0):
            h_lo, g_lo = h, g
        else:
            h_hi, g_hi = h, g
        if g_lo == g_hi:
            return h
        h = h_lo + (h_hi - h_lo) * g_lo / (g_lo - g_hi)
    return h


def simulate(
    params: ModelParams,
    law: ControlLaw,
    t_end: float,
    dt: float = 0.01,
    sample_stride: int = 1,
) -> Trace:
    """Integrate the controlled model from theta(0) = 0 and sample the run.

    Samples land every `sample_stride` steps on the uniform grid i * dt
    (plus the final point); guard-induced sub-steps never disturb the grid.
    A warning event is recorded the first time any |beta_e| exceeds half
    the configured buffer capacity.  Non-finite states abort the run.
    """
    if dt <= 0:
        raise ConfigError("dt must be positive")
    if t_end <= 0:
        raise ConfigError("t_end must be positive")
    if sample_stride < 1:
        raise ConfigError("sample_stride must be at least 1")

    inc = params.incidence
    Bt = inc.B.T.astype(float)
    Dmat = inc.D.astype(float)
    omega_u = params.omega_u
    n = len(omega_u)
    cap_half = params.buffer_capacity / 2 if params.buffer_capacity is not None else None

    observe = getattr(law, "observe", None)
    guard_fn = getattr(law, "guard", None)
    drain = getattr(law, "drain_events", None)

    def make_state(t: float, theta: np.ndarray) -> SystemState:
        beta = Bt @ theta
        return SystemState(t=t, theta_tilde=theta, beta_tilde=beta, y=Dmat @ beta)

    def rhs(t_eval: float, theta_eval: np.ndarray) -> np.ndarray:
        st = make_state(t_eval, theta_eval)
        return omega_u + np.asarray(law(t_eval, st), dtype=float)

    def advance(t0: float, theta0: np.ndarray, state0: SystemState, h: float) -> np.ndarray:
        if getattr(law, "constant_rhs", False):
            v = omega_u + np.asarray(law(t0, state0), dtype=float)
            return theta0 + h * v
        k1 = rhs(t0, theta0)
        k2 = rhs(t0 + 0.5 * h, theta0 + 0.5 * h * k1)
        k3 = rhs(t0 + 0.5 * h, theta0 + 0.5 * h * k2)
        k4 = rhs(t0 + h, theta0 + h * k3)
        return theta0 + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    theta = np.zeros(n)
    t = 0.0
    state = make_state(t, theta)
    events: list[tuple[float, str]] = []
    if observe is not None:
        observe(t, state)
    if drain is not None:
        events.extend(drain())

    times: list[float] = []
    thetas: list[np.ndarray] = []
    omegas: list[np.ndarray] = []
    betas: list[np.ndarray] = []

    def push_sample(t_s: float, state_s: SystemState) -> None:
        c = np.asarray(law(t_s, state_s), dtype=float)
        times.append(t_s)
        thetas.append(state_s.theta_tilde.copy())
        omegas.append(omega_u + c)
        betas.append(state_s.beta_tilde.copy())

    push_sample(t, state)
    flagged: set[int] = set()
    n_steps = int(math.ceil(t_end / dt - 1e-9))

    for step in range(1, n_steps + 1):
        t_block = min(step * dt, t_end)
        while t_block - t > 1e-12 * dt:
            h = t_block - t
            g0 = guard_fn(t, state) if guard_fn is not None else None
            theta_new = advance(t, theta, state, h)
            state_new = make_state(t + h, theta_new)
            if g0 is not None and g0 != 0.0:
                g1 = guard_fn(t + h, state_new)
                if g1 is not None and (g0 > 0) != (g1 > 0):
                    h = _locate_crossing(guard_fn, advance, make_state, t, theta, state, h, g0, g1)
                    theta_new = advance(t, theta, state, h)
                    state_new = make_state(t + h, theta_new)
            if not np.all(np.isfinite(theta_new)):
                raise NumericsError(f"non-finite state at t = {t + h:.6g}; reduce dt or the gains")
            theta = theta_new
            t = t + h
            state = state_new
            if observe is not None:
                observe(t, state)
            if drain is not None:
                events.extend(drain())
            if cap_half is not None:
                over = np.nonzero(np.abs(state.beta_tilde) > cap_half)[0]
                for ei in over:
                    if ei not in flagged:
                        flagged.add(int(ei))
                        events.append((t, f"buffer_warning edge={ei + 1}"))
        t = t_block
        finished = bool(getattr(law, "finished", False))
        if step % sample_stride == 0 or step == n_steps or finished:
            if times[-1] < t:
                push_sample(t, state)
        if finished:
            break

    return Trace(
        times=np.asarray(times, dtype=float),
        theta=np.vstack(thetas),
        omega=np.vstack(omegas),
        beta=np.vstack(betas),
        events=events,
    )
