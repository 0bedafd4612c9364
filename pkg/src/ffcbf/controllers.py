"""Control laws: LQR nominal tracking plus CBF-QP safety filters.

The nominal controller tracks a desired planar trajectory q* = [x*, y*,
xdot*, ydot*] with an LQR gain for a per-axis double integrator, then maps
the commanded planar acceleration mu = -K (zeta - q*) into bicycle inputs

    [omega0, a0] = S^{-1} [mu_x + ydot*psidot, mu_y - xdot*psidot],

falling back to omega0 = 0, a0 = ||mu|| when |v| is below the S-matrix
singularity threshold.  The slip-angle rate is saturated to [-omega_bar,
omega_bar] before the QP; the rear-wheel accelerations are then filtered
through one strictly convex QP per tick:

* centralized: one program over all vehicles' accelerations, with box rows
  |a_i| <= a_bar, one speed-limit row per vehicle and one pairwise barrier
  row per unordered pair (both saturated omegas folded into the row drift).
* decentralized: one program per ego over its own acceleration; pair rows
  keep both agents' drift but only the ego's gamma coefficient, and a small
  epsilon is subtracted from each row's left-hand side.

An infeasible QP applies maximum braking and reports feasible=False.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import qp
from .barriers import RffParams, constraint_row, h_speed
from .dynamics import ControlInput, VehicleParams, VehicleState

__all__ = [
    "NominalTarget",
    "ControllerConfig",
    "StepResult",
    "lqr_gain",
    "nominal_control",
    "saturate_omega",
    "centralized_step",
    "decentralized_step",
    "build_centralized_qp",
    "build_decentralized_qp",
]


@dataclass(frozen=True)
class NominalTarget:
    """Desired planar state [x*, y*, xdot*, ydot*] at the current time."""

    q_star: np.ndarray

    def __post_init__(self) -> None:
        q = np.asarray(self.q_star, dtype=float)
        if q.shape != (4,) or not np.all(np.isfinite(q)):
            raise ValueError(f"q_star must be a finite 4-vector, got {self.q_star!r}")
        object.__setattr__(self, "q_star", q)


def lqr_gain(q_pos: float, q_vel: float, r: float) -> np.ndarray:
    """2x4 LQR gain for the planar double integrator, block-diagonal over axes.

    Closed-form continuous-time Riccati solution per axis (state [pos, vel],
    dynamics posdot = vel, veldot = u, weights Q = diag(q_pos, q_vel), R = r):
    k1 = sqrt(q_pos / r), k2 = sqrt(q_vel / r + 2 k1).
    """
    if not (q_pos > 0 and q_vel > 0 and r > 0):
        raise ValueError("LQR weights must be positive")
    k1 = math.sqrt(q_pos / r)
    k2 = math.sqrt(q_vel / r + 2.0 * k1)
    return np.array([[k1, 0.0, k2, 0.0], [0.0, k1, 0.0, k2]])


@dataclass
class ControllerConfig:
    """Tunables of the safety-filtered controller (defaults per the benchmark)."""

    cbf_kind: str = "rff"                 # zero | ff | rff
    mode: str = "centralized"             # centralized | decentralized
    alpha_gain: float = 10.0              # linear class-K slope for the pairwise rows
    speed_alpha: float = 30.0             # class-K slope of the speed-limit row
    omega_bar: float = math.pi / 2        # slip-angle rate bound (rad/s)
    a_bar: float = 9.81                   # acceleration bound (m/s^2)
    v_max: float = 10.0                   # speed limit (m/s)
    lqr_q_pos: float = 16.0
    lqr_q_vel: float = 8.0
    lqr_r: float = 1.0
    hocbf_gain: float = 2.1               # stage slope of the second-order distance row
    zero_margin: float = 0.05             # enforcement pad (m) on the distance row boundary
    beta_max: float = 1.45                # slip-angle envelope guard (rad), < pi/2
    omega_v_ref: float = 2.0              # speed (m/s) giving full slip-rate authority
    v_eps: float = 1e-3                   # S-matrix singular branch threshold (m/s)
    decentral_eps: float = 1e-9           # subtracted from decentralized pair rows
    vehicle: VehicleParams = field(default_factory=VehicleParams)
    rff: RffParams = field(default_factory=RffParams)
    lqr_gain: np.ndarray | None = None    # filled from the weights when left unset

    def __post_init__(self) -> None:
        if self.cbf_kind not in ("zero", "ff", "rff"):
            raise ValueError(f"unknown cbf_kind {self.cbf_kind!r}")
        if self.mode not in ("centralized", "decentralized"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if not (self.alpha_gain > 0 and self.omega_bar > 0 and self.a_bar > 0 and self.v_max > 0):
            raise ValueError("gains and bounds must be positive")
        if self.lqr_gain is None:
            self.lqr_gain = lqr_gain(self.lqr_q_pos, self.lqr_q_vel, self.lqr_r)


def nominal_control(
    state: VehicleState,
    target: NominalTarget,
    gain: np.ndarray,
    params: VehicleParams,
    v_eps: float = 1e-3,
) -> tuple[float, float]:
    """LQR planar acceleration mapped to (omega0, a0) through the S matrix."""
    c, s = math.cos(state.psi), math.sin(state.psi)
    tb = math.tan(state.beta)
    xd = state.v * (c - s * tb)
    yd = state.v * (s + c * tb)
    q = target.q_star
    ex, ey = state.x - q[0], state.y - q[1]
    evx, evy = xd - q[2], yd - q[3]
    mu_x = -(gain[0, 0] * ex + gain[0, 2] * evx)
    mu_y = -(gain[1, 1] * ey + gain[1, 3] * evy)
    if abs(state.v) < v_eps:
        return 0.0, math.hypot(mu_x, mu_y)
    psid = (state.v / params.lr) * tb
    rx = mu_x + yd * psid
    ry = mu_y - xd * psid
    sec2 = 1.0 + tb * tb
    s11 = -state.v * s * sec2
    s12 = c - s * tb
    s21 = state.v * c * sec2
    s22 = s + c * tb
    det = s11 * s22 - s12 * s21  # = -v * sec^2(beta), nonzero here
    omega0 = (s22 * rx - s12 * ry) / det
    a0 = (-s21 * rx + s11 * ry) / det
    return omega0, a0


def saturate_omega(omega0: float, omega_bar: float) -> float:
    """Clamp the slip-angle rate to [-omega_bar, omega_bar]."""
    return min(max(omega0, -omega_bar), omega_bar)


@dataclass(frozen=True)
class StepResult:
    """Filtered inputs for one tick plus feasibility and warm-start state."""

    inputs: tuple
    feasible: bool
    active_set: tuple = ()
    qp_iterations: int = 0


def _nominals(states, targets, config):
    omegas = []
    accels = []
    for st, tg in zip(states, targets):
        w0, a0 = nominal_control(st, tg, config.lqr_gain, config.vehicle, config.v_eps)
        # Nominal slip-rate shaping: full authority at speed, attenuated at a
        # crawl (in-lane steering does nothing useful near standstill and its
        # lateral coupling needlessly disturbs the barrier rows of stopped
        # clusters).
        bar = config.omega_bar * min(1.0, abs(st.v) / config.omega_v_ref)
        w = saturate_omega(w0, bar)
        # slip-angle envelope: the bicycle model needs |beta| < pi/2, which
        # rate saturation alone cannot guarantee; stop steering outward near
        # the envelope (overshoot stays below omega_bar * dt)
        if (st.beta >= config.beta_max and w > 0.0) or (st.beta <= -config.beta_max and w < 0.0):
            w = 0.0
        omegas.append(w)
        accels.append(a0)
    return omegas, accels


def _max_braking(state: VehicleState, config: ControllerConfig) -> float:
    """Strongest deceleration that still respects the speed-limit row.

    Used as the fallback when the pairwise program is infeasible: brake as
    hard as possible without reversing (the speed barrier bounds a >= -10 v
    near standstill, so v decays to zero instead of crossing it).
    """
    _, phi, gamma = h_speed(state, config.v_max, config.speed_alpha)
    if gamma > 0.0:
        return max(-config.a_bar, -phi / gamma)
    return -config.a_bar


def build_centralized_qp(states, targets, config: ControllerConfig):
    """QP over all vehicles' accelerations; returns (problem, omegas, accels).

    Row order is stable across ticks (speed rows, then pair rows in (i, j)
    lexicographic order) so active sets warm-start the next tick.
    """
    n = len(states)
    omegas, accels = _nominals(states, targets, config)
    rows = []
    for idx, st in enumerate(states):
        _, phi, gam = h_speed(st, config.v_max, config.speed_alpha)
        coeff = np.zeros(n)
        coeff[idx] = gam
        rows.append((coeff, -phi))
    for i in range(n):
        for j in range(i + 1, n):
            ev = constraint_row(
                config.cbf_kind, states[i], states[j], omegas[i], omegas[j],
                config.alpha_gain, config.vehicle, config.rff, config.hocbf_gain,
                config.zero_margin,
            )
            coeff = np.zeros(n)
            coeff[i] = ev.gamma_i
            coeff[j] = ev.gamma_j
            rows.append((coeff, -ev.phi))
    box = (np.full(n, -config.a_bar), np.full(n, config.a_bar))
    problem = qp.QpProblem(dim=n, target=np.array(accels), rows=tuple(rows), box=box)
    return problem, omegas, accels


def centralized_step(states, targets, config: ControllerConfig, warm_start=None) -> StepResult:
    """One tick of the centralized filter over every vehicle's acceleration."""
    problem, omegas, _ = build_centralized_qp(states, targets, config)
    sol = qp.solve(problem, warm_start)
    if sol.status == "optimal":
        inputs = tuple(ControlInput(w, float(a)) for w, a in zip(omegas, sol.u))
        return StepResult(inputs, True, sol.active_set, sol.iterations)
    # Infeasible program: brake to a stop, slip rates per the saturated nominal.
    inputs = tuple(
        ControlInput(w, _max_braking(st, config)) for w, st in zip(omegas, states)
    )
    return StepResult(inputs, False, (), sol.iterations)


def build_decentralized_qp(ego_index, states, target_ego, config: ControllerConfig):
    """Single-variable QP for one ego; returns (problem, omega_star, a0)."""
    ego = states[ego_index]
    w0, a0 = nominal_control(ego, target_ego, config.lqr_gain, config.vehicle, config.v_eps)
    w_star = saturate_omega(w0, config.omega_bar)
    rows = []
    _, phi, gam = h_speed(ego, config.v_max, config.speed_alpha)
    rows.append((np.array([gam]), -phi))
    for j, other in enumerate(states):
        if j == ego_index:
            continue
        # The ego knows the neighbors' states but not their inputs: the row
        # keeps both drift terms (neighbor inputs taken as zero) and only the
        # ego's acceleration coefficient.
        ev = constraint_row(
            config.cbf_kind, ego, other, w_star, 0.0,
            config.alpha_gain, config.vehicle, config.rff, config.hocbf_gain,
            config.zero_margin,
        )
        rows.append((np.array([ev.gamma_i]), -(ev.phi - config.decentral_eps)))
    box = (np.array([-config.a_bar]), np.array([config.a_bar]))
    problem = qp.QpProblem(dim=1, target=np.array([a0]), rows=tuple(rows), box=box)
    return problem, w_star, a0


def decentralized_step(
    ego_index, states, target_ego, config: ControllerConfig, warm_start=None
) -> StepResult:
    """One tick of the decentralized filter for a single ego vehicle."""
    problem, w_star, _ = build_decentralized_qp(ego_index, states, target_ego, config)
    sol = qp.solve(problem, warm_start)
    if sol.status == "optimal":
        return StepResult(
            (ControlInput(w_star, float(sol.u[0])),), True, sol.active_set, sol.iterations
        )
    return StepResult(
        (ControlInput(w_star, _max_braking(states[ego_index], config)),),
        False, (), sol.iterations,
    )
