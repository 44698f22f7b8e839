"""Spectral analysis of the directed buffer-flow Laplacian.

The Laplacian here is Q = D B^T, an irreducible rate matrix when the graph
is strongly connected: off-diagonal entry (i, j) counts edges j -> i and
every row sums to zero.  Its positive stationary left vector z (z^T Q = 0,
sum z = 1) defines the rank-one consensus projector W = 1 z^T, and the
group generalized inverse (Q + W)^-1 - W yields closed forms for the
proportionally controlled loop: the common equilibrium frequency z^T w and
the relative buffer equilibrium -B^T Qg w / k.

The group-inverse route avoids the eigendecomposition entirely, so it also
covers non-diagonalizable Laplacians; when the eigendecomposition exists
the two constructions agree because Q + W shares Q's eigenvectors with the
zero eigenvalue replaced by one.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import expm

from .errors import ConfigError, SpectralError
from .graph import IncidenceSet


def laplacian(incidence: IncidenceSet) -> np.ndarray:
    """Rate-matrix Laplacian Q = D B^T of the graph."""
    return (incidence.D @ incidence.B.T).astype(float)


def metzler_left_eigenvector(Q: np.ndarray, residual_tol: float = 1e-12) -> np.ndarray:
    """Positive left null vector z of Q with sum(z) = 1.

    Solved as a linear system: the rows of Q^T are linearly dependent, so
    replacing the last one with the normalization constraint gives a square
    nonsingular system whenever Q is irreducible.  Positivity and the
    residual are checked; failure signals a reducible graph.
    """
    Q = np.asarray(Q, dtype=float)
    n = Q.shape[0]
    if n == 1:
        return np.ones(1)
    A = Q.T.copy()
    A[-1, :] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    try:
        z = np.linalg.solve(A, rhs)
    except np.linalg.LinAlgError as exc:
        raise SpectralError("stationary system is singular; graph is not irreducible") from exc
    total = z.sum()
    if not np.isfinite(total) or abs(total) < 1e-300:
        raise SpectralError("stationary solve produced a degenerate vector")
    z = z / total
    if np.any(z <= 0.0):
        raise SpectralError("stationary vector has non-positive entries; graph is not irreducible")
    scale = max(1.0, float(np.abs(Q).max()))
    residual = float(np.abs(z @ Q).max())
    if residual > residual_tol * scale:
        raise SpectralError(f"stationary residual {residual:.3g} exceeds tolerance")
    return z


@dataclass(frozen=True, eq=False)
class SpectralData:
    """Stationary vector z, projector W = 1 z^T, and group inverse of Q."""

    z: np.ndarray
    projector: np.ndarray
    ginverse: np.ndarray


def projector_and_ginverse(Q: np.ndarray, z: np.ndarray) -> SpectralData:
    """Consensus projector and generalized inverse, via (Q + W)^-1 - W.

    The result satisfies Q Qg Q = Q and W Qg = Qg W = 0.
    """
    Q = np.asarray(Q, dtype=float)
    z = np.asarray(z, dtype=float)
    n = len(z)
    W = np.outer(np.ones(n), z)
    try:
        inv = np.linalg.inv(Q + W)
    except np.linalg.LinAlgError as exc:
        raise SpectralError(
            "Q + W is singular; z is not the stationary vector or the graph is reducible"
        ) from exc
    return SpectralData(z=z, projector=W, ginverse=inv - W)


def spectral_data(incidence: IncidenceSet) -> tuple[np.ndarray, SpectralData]:
    """Convenience: Laplacian plus its spectral data in one call."""
    Q = laplacian(incidence)
    z = metzler_left_eigenvector(Q)
    return Q, projector_and_ginverse(Q, z)


def steady_state(
    spectral: SpectralData,
    B: np.ndarray,
    k: float,
    omega_u: np.ndarray,
) -> tuple[np.ndarray, np.ndarray]:
    """Equilibrium of the proportional loop with gain k.

    Every frequency settles at the weighted average z^T omega_u, and the
    relative occupancies settle at -B^T Qg omega_u / k (so doubling the
    gain halves the equilibrium offsets).
    """
    if k <= 0:
        raise ConfigError("gain k must be positive")
    omega_u = np.asarray(omega_u, dtype=float)
    consensus = float(spectral.z @ omega_u)
    omega_ss = np.full(len(omega_u), consensus)
    beta_ss = -(B.T.astype(float) @ (spectral.ginverse @ omega_u)) / k
    return omega_ss, beta_ss


def closed_form_theta(
    spectral: SpectralData,
    Q: np.ndarray,
    k: float,
    omega_u: np.ndarray,
    theta0: np.ndarray,
    t: float,
) -> np.ndarray:
    """Exact solution of d theta/dt = k Q theta + omega_u at time t.

    Computed densely as (W t + Qg (e^{kQt} - I) / k) omega_u + e^{kQt} theta0.
    """
    if t < 0:
        raise ConfigError("time must be nonnegative")
    if k <= 0:
        raise ConfigError("gain k must be positive")
    Q = np.asarray(Q, dtype=float)
    n = Q.shape[0]
    E = expm(k * Q * t)
    drift = spectral.projector * t + (spectral.ginverse @ (E - np.eye(n))) / k
    return drift @ np.asarray(omega_u, dtype=float) + E @ np.asarray(theta0, dtype=float)


def spectral_gap(Q: np.ndarray, zero_tol: float = 1e-9) -> float:
    """Smallest decay rate among the nonzero modes: min -Re(lambda).

    Sets the convergence timescale of the proportional loop (time constant
    1 / (k * gap)).
    """
    eigs = np.linalg.eigvals(np.asarray(Q, dtype=float))
    scale = max(1.0, float(np.abs(eigs).max()))
    nonzero = [ev for ev in eigs if abs(ev) > zero_tol * scale]
    if len(nonzero) != len(eigs) - 1:
        raise SpectralError("expected exactly one zero eigenvalue; graph may be reducible")
    gap = min(-ev.real for ev in nonzero)
    if gap <= 0:
        raise SpectralError("found a nonzero eigenvalue with nonnegative real part")
    return float(gap)
