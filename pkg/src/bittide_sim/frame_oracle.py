"""Frame-accurate integer tick simulation, used as an independent oracle.

Clock phases advance continuously, but buffers change only at ticks: when
a node's phase crosses an integer it removes one frame from each incoming
buffer and emits one frame on each outgoing link (zero link latency).  The
occupancy of every edge therefore satisfies the exact identity

    occupancy_e(t) = occupancy_e(0) + floor(theta_src(t)) - floor(theta_dst(t))

which also conserves every cycle sum exactly, in integers.

Control laws see the same SystemState interface as the fluid simulator,
except beta_tilde is the integer occupancy minus the configured offset, so
quantization effects (plus-minus one frame flicker, limit cycling at the
dead zone) are fed to the controller rather than hidden.  Because the
quantized measurement never goes exactly stationary, centering runs
through this oracle must use the fixed-time phase policy.
"""

from __future__ import annotations

import math

import numpy as np

from .dynamics import ModelParams, SystemState, Trace
from .errors import ConfigError, NumericsError

DEFAULT_CAPACITY = 32


def oracle_simulate(
    params: ModelParams,
    law,
    t_end: float,
    dt: float = 0.01,
    sample_stride: int = 1,
    beta_init: np.ndarray | None = None,
    offset: int | None = None,
    capacity: int | None = None,
) -> Trace:
    """Integrate phases and tick the integer buffers, sampling like `simulate`.

    beta_init defaults to every buffer at the offset (the feasible boot);
    a custom beta_init must have its deviation from the offset inside the
    row space of B^T, otherwise the cycle constants cannot all be zero.
    Occupancy hitting 0 or the capacity emits an underflow/overflow event
    and ends the run (fatal for a real system).  dt must keep every node
    below one tick per step.
    """
    if dt <= 0 or t_end <= 0:
        raise ConfigError("dt and t_end must be positive")
    if sample_stride < 1:
        raise ConfigError("sample_stride must be at least 1")
    inc = params.incidence
    n, m = inc.B.shape
    cap = int(capacity if capacity is not None else (params.buffer_capacity or DEFAULT_CAPACITY))
    off = int(offset) if offset is not None else cap // 2
    if beta_init is None:
        occupancy = np.full(m, off, dtype=np.int64)
    else:
        occupancy = np.asarray(beta_init, dtype=np.int64)
        if occupancy.shape != (m,):
            raise ConfigError(f"beta_init has shape {occupancy.shape}, expected ({m},)")
        dev = (occupancy - off).astype(float)
        Bt = inc.B.T.astype(float)
        lift, *_ = np.linalg.lstsq(Bt, dev, rcond=None)
        if float(np.abs(Bt @ lift - dev).max()) > 1e-9:
            raise ConfigError("beta_init is not a feasible boot: cycle sums do not match the offset")
    if np.any(occupancy <= 0) or np.any(occupancy >= cap):
        raise ConfigError("beta_init must start strictly inside (0, capacity)")

    omega_u = params.omega_u
    Bt_int = inc.B.T
    Dmat = inc.D.astype(float)
    observe = getattr(law, "observe", None)
    drain = getattr(law, "drain_events", None)

    theta = np.zeros(n)
    floors = np.zeros(n, dtype=np.int64)

    def make_state(t: float) -> SystemState:
        beta = (occupancy - off).astype(float)
        return SystemState(t=t, theta_tilde=theta.copy(), beta_tilde=beta, y=Dmat @ beta)

    t = 0.0
    state = make_state(t)
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
        thetas.append(state_s.theta_tilde)
        omegas.append(omega_u + c)
        betas.append(occupancy.astype(float))

    push_sample(t, state)
    n_steps = int(math.ceil(t_end / dt - 1e-9))
    fatal = False

    for step in range(1, n_steps + 1):
        c = np.asarray(law(t, state), dtype=float)
        velocity = omega_u + c
        if float(np.abs(velocity).max()) * dt >= 1.0:
            raise NumericsError(
                f"dt = {dt:.6g} allows more than one tick per step at t = {t:.6g}; reduce dt"
            )
        theta = theta + velocity * dt
        if not np.all(np.isfinite(theta)):
            raise NumericsError(f"non-finite phase at t = {t:.6g}")
        new_floors = np.floor(theta).astype(np.int64)
        ticks = new_floors - floors
        if np.any(ticks):
            occupancy = occupancy + Bt_int @ ticks
            floors = new_floors
        t = min(step * dt, t_end)
        state = make_state(t)
        if observe is not None:
            observe(t, state)
        if drain is not None:
            events.extend(drain())
        under = np.nonzero(occupancy <= 0)[0]
        over = np.nonzero(occupancy >= cap)[0]
        for ei in under:
            events.append((t, f"underflow edge={ei + 1}"))
        for ei in over:
            events.append((t, f"overflow edge={ei + 1}"))
        fatal = len(under) > 0 or len(over) > 0
        finished = bool(getattr(law, "finished", False))
        if step % sample_stride == 0 or step == n_steps or finished or fatal:
            if times[-1] < t:
                push_sample(t, state)
        if finished or fatal:
            break

    return Trace(
        times=np.asarray(times, dtype=float),
        theta=np.vstack(thetas),
        omega=np.vstack(omegas),
        beta=np.vstack(betas),
        events=events,
    )


def compare_fluid_oracle(fluid: Trace, oracle: Trace, offset: float) -> float:
    """Largest |oracle occupancy - offset - fluid occupancy| over shared samples.

    The traces must share the sampling grid and edge count.
    """
    if fluid.beta.shape[1] != oracle.beta.shape[1]:
        raise ConfigError("traces cover different edge sets")
    n_shared = min(len(fluid.times), len(oracle.times))
    if n_shared == 0:
        raise ConfigError("traces share no samples")
    ft, ot = fluid.times[:n_shared], oracle.times[:n_shared]
    if float(np.abs(ft - ot).max()) > 1e-9:
        raise ConfigError("sampling grids do not match")
    dev = oracle.beta[:n_shared] - offset - fluid.beta[:n_shared]
    return float(np.abs(dev).max())
