"""Covariance numerics for alternating observed/unobserved phases.

The estimation-error covariance of a target obeys a matrix Riccati equation
while observed and a Lyapunov (linear) equation while not.  Both flows over a
fixed duration are linear-fractional maps of the covariance, obtained from a
single block matrix exponential:

* unobserved: ``Omega(t) = F Omega0 F' + V`` with ``F = e^{At}`` and ``V`` the
  accumulated noise Gramian, both read off ``expm([[A, Q], [0, -A']] t)``;
* observed: ``Omega(t) = (E21 + E22 Omega0)(E11 + E12 Omega0)^{-1}`` with the
  ``E`` blocks from ``expm([[-A', G], [Q, A]] t)``.

Scalar (1x1) targets additionally get closed float kernels (exp / tanh forms)
used by the hot iteration loops; the public propagators always go through the
block exponentials.

The periodic steady state of an on/off visit pattern is the fixed point of the
one-period composition of these maps; it is unique and attractive whenever the
target is observed for part of the period, so plain map iteration from the
always-observed steady state both finds it and certifies it.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import scipy.linalg

from .config import DEFAULT_CONFIG
from .model import TargetSpec

__all__ = [
    "EngineError",
    "ConvergenceError",
    "SteadyStates",
    "PeakSet",
    "cov_norm",
    "symmetrize",
    "propagate_unobserved",
    "propagate_observed",
    "solve_steady_states",
    "periodic_steady_state",
    "lower_bound",
    "observed_flow",
    "unobserved_flow",
]


class EngineError(RuntimeError):
    """Numerical failure inside the covariance engine."""


class ConvergenceError(EngineError):
    """Iteration failed to converge; carries the last residual."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (last residual {residual:.3e})")
        self.residual = residual


def symmetrize(mat: np.ndarray) -> np.ndarray:
    return 0.5 * (mat + mat.T)


def cov_norm(mat: np.ndarray | float) -> float:
    """Matrix norm used by the cost: the trace (identity on scalars)."""
    if isinstance(mat, (int, float)):
        return float(mat)
    return float(np.trace(mat))


def _as_cov(value, name: str = "omega0") -> np.ndarray:
    mat = np.atleast_2d(np.asarray(value, dtype=float))
    if mat.shape[0] != mat.shape[1]:
        raise ValueError(f"{name} must be square")
    if not np.allclose(mat, mat.T, atol=1e-8 * max(1.0, float(np.abs(mat).max()))):
        raise ValueError(f"{name} must be symmetric")
    return symmetrize(mat)


# ---------------------------------------------------------------------------
# scalar float kernels (hot paths)
# ---------------------------------------------------------------------------

def _scalar_unobs_coeffs(a: float, q: float, t: float) -> tuple[float, float]:
    """Affine map w -> alpha*w + beta for the unobserved phase."""
    if t == 0.0:
        return 1.0, 0.0
    x = 2.0 * a * t
    if x > 700.0:
        return math.inf, math.inf
    alpha = math.exp(x)
    if a == 0.0:
        beta = q * t
    else:
        beta = q * math.expm1(x) / (2.0 * a)
    return alpha, beta


def _scalar_obs_coeffs(a: float, q: float, g: float, t: float) -> tuple[float, float, float, float]:
    """Projective map coefficients (m11, m12, m21, m22) for the observed phase.

    Acting on homogeneous coordinates (x, y) with w = y/x:
    w -> (m21 + m22 w) / (m11 + m12 w).  Scaled by cosh so coefficients never
    overflow for long dwells.
    """
    if t == 0.0:
        return 1.0, 0.0, 0.0, 1.0
    s = math.sqrt(a * a + q * g)
    if s == 0.0:
        u = t
    else:
        u = math.tanh(s * t) / s
    return 1.0 - a * u, g * u, q * u, 1.0 + a * u


def _scalar_compose(coeffs: Sequence[tuple[float, float, float, float]]) -> tuple[float, float, float, float]:
    """Compose projective maps; coeffs[0] applies first."""
    p11, p12, p21, p22 = 1.0, 0.0, 0.0, 1.0
    for (m11, m12, m21, m22) in coeffs:
        p11, p12, p21, p22 = (
            m11 * p11 + m12 * p21,
            m11 * p12 + m12 * p22,
            m21 * p11 + m22 * p21,
            m21 * p12 + m22 * p22,
        )
        scale = max(abs(p11), abs(p12), abs(p21), abs(p22))
        if scale > 1e100:
            p11, p12, p21, p22 = p11 / scale, p12 / scale, p21 / scale, p22 / scale
    return p11, p12, p21, p22


def _scalar_apply(m: tuple[float, float, float, float], w: float) -> float:
    m11, m12, m21, m22 = m
    return (m21 + m22 * w) / (m11 + m12 * w)


# ---------------------------------------------------------------------------
# phase flows (precomputed propagators for a fixed duration)
# ---------------------------------------------------------------------------

class _ScalarFlow:
    """Projective map on scalar covariances."""

    __slots__ = ("m",)

    def __init__(self, m: tuple[float, float, float, float]):
        self.m = m

    def apply(self, omega: float) -> float:
        return _scalar_apply(self.m, omega)


class _MatrixUnobservedFlow:
    __slots__ = ("F", "V")

    def __init__(self, A: np.ndarray, Q: np.ndarray, t: float):
        dim = A.shape[0]
        block = np.zeros((2 * dim, 2 * dim))
        block[:dim, :dim] = A
        block[:dim, dim:] = Q
        block[dim:, dim:] = -A.T
        with np.errstate(over="ignore", invalid="ignore"):
            E = scipy.linalg.expm(block * t)
        self.F = E[:dim, :dim]
        self.V = symmetrize(E[:dim, dim:] @ self.F.T)

    def apply(self, omega: np.ndarray) -> np.ndarray:
        return symmetrize(self.F @ omega @ self.F.T + self.V)


class _MatrixObservedFlow:
    __slots__ = ("E11", "E12", "E21", "E22", "chunks")

    def __init__(self, A: np.ndarray, Q: np.ndarray, G: np.ndarray, t: float):
        dim = A.shape[0]
        M = np.zeros((2 * dim, 2 * dim))
        M[:dim, :dim] = -A.T
        M[:dim, dim:] = G
        M[dim:, :dim] = Q
        M[dim:, dim:] = A
        # keep per-chunk exponent moderate so the X-block solve stays well
        # conditioned over long dwells
        scale = float(np.abs(M).sum(axis=1).max()) * t
        self.chunks = max(1, min(100_000, math.ceil(scale / 20.0)))
        E = scipy.linalg.expm(M * (t / self.chunks))
        self.E11 = E[:dim, :dim]
        self.E12 = E[:dim, dim:]
        self.E21 = E[dim:, :dim]
        self.E22 = E[dim:, dim:]

    def apply(self, omega: np.ndarray) -> np.ndarray:
        for _ in range(self.chunks):
            num = self.E21 + self.E22 @ omega
            den = self.E11 + self.E12 @ omega
            omega = symmetrize(np.linalg.solve(den.T, num.T).T)
        return omega


class _IdentityFlow:
    __slots__ = ()

    def apply(self, omega):
        return omega


_IDENTITY = _IdentityFlow()


def unobserved_flow(A: np.ndarray, Q: np.ndarray, t: float):
    """Reusable propagator for an unobserved stretch of length ``t``."""
    if t == 0.0:
        return _IDENTITY
    if A.shape == (1, 1):
        a, b = _scalar_unobs_coeffs(float(A[0, 0]), float(Q[0, 0]), t)
        return _ScalarFlow((1.0, 0.0, b, a))
    return _MatrixUnobservedFlow(A, Q, t)


def observed_flow(A: np.ndarray, Q: np.ndarray, G: np.ndarray, t: float):
    """Reusable propagator for an observed stretch of length ``t``."""
    if t == 0.0:
        return _IDENTITY
    if A.shape == (1, 1):
        m = _scalar_obs_coeffs(float(A[0, 0]), float(Q[0, 0]), float(G[0, 0]), t)
        return _ScalarFlow(m)
    return _MatrixObservedFlow(A, Q, G, t)


# ---------------------------------------------------------------------------
# public propagators
# ---------------------------------------------------------------------------

def propagate_unobserved(omega0, A, Q, t: float) -> np.ndarray:
    """Propagate the covariance over ``t`` time units with no observation."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    A = np.atleast_2d(np.asarray(A, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    omega0 = _as_cov(omega0)
    if t == 0.0:
        return omega0
    result = _MatrixUnobservedFlow(A, Q, t).apply(omega0)
    return result


def propagate_observed(omega0, A, Q, G, t: float) -> np.ndarray:
    """Propagate the covariance over ``t`` time units under observation."""
    if t < 0:
        raise ValueError("t must be nonnegative")
    A = np.atleast_2d(np.asarray(A, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    G = np.atleast_2d(np.asarray(G, dtype=float))
    omega0 = _as_cov(omega0)
    if np.linalg.eigvalsh(omega0).min() < -DEFAULT_CONFIG.psd_tol:
        raise ValueError("omega0 must be positive semidefinite")
    if t == 0.0:
        return omega0
    result = _MatrixObservedFlow(A, Q, G, t).apply(omega0)
    if not np.all(np.isfinite(result)):
        raise EngineError("observed propagation produced non-finite values")
    return result


# ---------------------------------------------------------------------------
# steady states
# ---------------------------------------------------------------------------

@dataclass
class SteadyStates:
    """Always-observed Riccati fixed point and, when A is Hurwitz, the
    never-observed Lyapunov fixed point."""

    omega_ss: np.ndarray
    omega_inf_finite: np.ndarray | None
    a_is_hurwitz: bool


def solve_steady_states(A, Q, G, H=None, R=None, residual_tol: float | None = None) -> SteadyStates:
    """Solve the algebraic Riccati / Lyapunov equations for one target.

    ``H`` and ``R`` are used when available (the solver prefers the factored
    observation model); otherwise ``G`` is factored internally.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    G = np.atleast_2d(np.asarray(G, dtype=float))
    tol = DEFAULT_CONFIG.residual_tol if residual_tol is None else residual_tol
    if H is not None and R is not None:
        b = np.atleast_2d(np.asarray(H, dtype=float)).T
        r = np.atleast_2d(np.asarray(R, dtype=float))
    else:
        # G = C' C with C from the eigendecomposition; R = identity
        w, v = np.linalg.eigh(symmetrize(G))
        w = np.clip(w, 0.0, None)
        c = (v * np.sqrt(w)) @ v.T
        b = c.T
        r = np.eye(G.shape[0])
    omega_ss = scipy.linalg.solve_continuous_are(A.T, b, Q, r)
    omega_ss = symmetrize(omega_ss)
    res = A @ omega_ss + omega_ss @ A.T + Q - omega_ss @ G @ omega_ss
    if np.linalg.norm(res) > tol * (1.0 + np.linalg.norm(omega_ss)):
        raise EngineError(
            f"Riccati solution residual {np.linalg.norm(res):.3e} above tolerance"
        )
    hurwitz = bool(np.all(np.linalg.eigvals(A).real < 0))
    omega_inf = None
    if hurwitz:
        omega_inf = symmetrize(scipy.linalg.solve_continuous_lyapunov(A, -Q))
        res_inf = A @ omega_inf + omega_inf @ A.T + Q
        if np.linalg.norm(res_inf) > tol * (1.0 + np.linalg.norm(omega_inf)):
            raise EngineError(
                f"Lyapunov solution residual {np.linalg.norm(res_inf):.3e} above tolerance"
            )
    return SteadyStates(omega_ss=omega_ss, omega_inf_finite=omega_inf, a_is_hurwitz=hurwitz)


def steady_states_for(target: TargetSpec, residual_tol: float | None = None) -> SteadyStates:
    return solve_steady_states(target.A, target.Q, target.G, target.H, target.R, residual_tol)


# ---------------------------------------------------------------------------
# periodic steady state
# ---------------------------------------------------------------------------

@dataclass
class PeakSet:
    """Per-visit covariance extrema of the periodic steady state.

    ``upper[k]`` is the covariance at the start of visit k (the off->on
    switch, where the per-visit maximum occurs); ``lower[k]`` at its end.
    Switch instants are measured from the start of visit 0.
    """

    upper: list[np.ndarray]
    lower: list[np.ndarray]
    tau_upper: list[float]
    tau_lower: list[float]
    iterations: int
    residual: float

    def upper_norms(self) -> list[float]:
        return [cov_norm(m) for m in self.upper]


def _scalar_periodic_peaks(
    a: float,
    q: float,
    g: float,
    t_on: Sequence[float],
    t_off: Sequence[float],
    seed: float,
    tol: float,
    max_iters: int,
) -> tuple[list[float], list[float], int, float]:
    phase_maps: list[tuple[float, float, float, float]] = []
    for on, off in zip(t_on, t_off):
        phase_maps.append(_scalar_obs_coeffs(a, q, g, on))
        al, be = _scalar_unobs_coeffs(a, q, off)
        phase_maps.append((1.0, 0.0, be, al))
    p = _scalar_compose(phase_maps)
    p11, p12, p21, p22 = p
    x, y = 1.0, seed
    omega = seed
    residual = math.inf
    iters = 0
    for iters in range(1, max_iters + 1):
        x, y = p11 * x + p12 * y, p21 * x + p22 * y
        scale = max(abs(x), abs(y))
        if scale == 0.0 or not math.isfinite(scale):
            raise EngineError("periodic map iteration produced a degenerate state")
        x /= scale
        y /= scale
        new_omega = y / x
        residual = abs(new_omega - omega)
        omega = new_omega
        if residual <= tol:
            break
    else:
        raise ConvergenceError("periodic covariance did not converge", residual)
    uppers, lowers = [], []
    w = omega
    for on, off in zip(t_on, t_off):
        uppers.append(w)
        w = _scalar_apply(_scalar_obs_coeffs(a, q, g, on), w)
        lowers.append(w)
        al, be = _scalar_unobs_coeffs(a, q, off)
        w = al * w + be
    return uppers, lowers, iters, residual


def periodic_steady_state(
    A,
    Q,
    G,
    t_on: Sequence[float],
    t_off: Sequence[float],
    omega_ss: np.ndarray | None = None,
    omega_seed: np.ndarray | float | None = None,
    tol: float | None = None,
    max_iters: int | None = None,
) -> PeakSet:
    """Fixed point of the one-period covariance map for one target.

    ``t_on[k]`` / ``t_off[k]`` describe visit k and the gap after it; the
    period starts at the off->on switch of visit 0.  Iterates the period map
    from the always-observed steady state (or ``omega_seed`` when given; the
    fixed point is unique either way) until the period-start covariance moves
    by at most ``tol`` in any entry.
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    Q = np.atleast_2d(np.asarray(Q, dtype=float))
    G = np.atleast_2d(np.asarray(G, dtype=float))
    tol = DEFAULT_CONFIG.periodic_tol if tol is None else tol
    max_iters = DEFAULT_CONFIG.periodic_max_iters if max_iters is None else max_iters
    t_on = [float(v) for v in t_on]
    t_off = [float(v) for v in t_off]
    if len(t_on) != len(t_off) or not t_on:
        raise ValueError("t_on and t_off must be non-empty and equal length")
    if any(v < 0 for v in t_on + t_off):
        raise ValueError("dwell and gap durations must be nonnegative")
    if sum(t_on) + sum(t_off) <= 0:
        raise ValueError("period must be positive")
    if sum(t_on) == 0:
        raise ValueError("at least one dwell must be positive")
    if omega_ss is None:
        omega_ss = solve_steady_states(A, Q, G).omega_ss

    taus_u, taus_l = [], []
    t = 0.0
    for on, off in zip(t_on, t_off):
        taus_u.append(t)
        t += on
        taus_l.append(t)
        t += off

    if A.shape == (1, 1):
        seed = float(np.atleast_2d(omega_seed)[0, 0]) if omega_seed is not None else float(omega_ss[0, 0])
        uppers, lowers, iters, residual = _scalar_periodic_peaks(
            float(A[0, 0]), float(Q[0, 0]), float(G[0, 0]), t_on, t_off, seed, tol, max_iters
        )
        return PeakSet(
            upper=[np.array([[u]]) for u in uppers],
            lower=[np.array([[l]]) for l in lowers],
            tau_upper=taus_u,
            tau_lower=taus_l,
            iterations=iters,
            residual=residual,
        )

    flows = []
    for on, off in zip(t_on, t_off):
        flows.append(observed_flow(A, Q, G, on))
        flows.append(unobserved_flow(A, Q, off))
    omega = _as_cov(omega_seed) if omega_seed is not None else omega_ss.copy()
    residual = math.inf
    iters = 0
    for iters in range(1, max_iters + 1):
        new_omega = omega
        for flow in flows:
            new_omega = flow.apply(new_omega)
        residual = float(np.abs(new_omega - omega).max())
        omega = new_omega
        if residual <= tol:
            break
    if residual > tol:
        raise ConvergenceError("periodic covariance did not converge", residual)
    uppers, lowers = [], []
    w = omega
    for k in range(len(t_on)):
        uppers.append(w)
        w = flows[2 * k].apply(w)
        lowers.append(w)
        w = flows[2 * k + 1].apply(w)
    return PeakSet(
        upper=uppers,
        lower=lowers,
        tau_upper=taus_u,
        tau_lower=taus_l,
        iterations=iters,
        residual=residual,
    )


# ---------------------------------------------------------------------------
# revisit-time lower bound
# ---------------------------------------------------------------------------

def lower_bound(target: TargetSpec, gap: float, omega_ss: np.ndarray) -> float:
    """Weighted cost reached by growing the covariance from the
    always-observed steady state over an unobserved stretch of length ``gap``.

    Strictly increasing in ``gap``; a cheap floor for the peak cost of any
    schedule that revisits the target at most every ``gap`` time units.
    """
    if gap < 0:
        raise ValueError("gap must be nonnegative")
    if target.is_scalar:
        a = float(target.A[0, 0])
        q = float(target.Q[0, 0])
        al, be = _scalar_unobs_coeffs(a, q, gap)
        return target.g(al * float(omega_ss[0, 0]) + be)
    if gap == 0.0:
        return target.g(cov_norm(omega_ss))
    grown = _MatrixUnobservedFlow(target.A, target.Q, gap).apply(omega_ss)
    return target.g(cov_norm(grown))
