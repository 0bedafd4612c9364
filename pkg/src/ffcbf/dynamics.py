"""Kinematic bicycle vehicle model.

State of one vehicle is z = [x, y, psi, beta, v]:

    xdot   = v * (cos(psi) - sin(psi) * tan(beta))
    ydot   = v * (sin(psi) + cos(psi) * tan(beta))
    psidot = (v / lr) * tan(beta)
    betadot = omega
    vdot   = a

with input u = [omega, a] (slip-angle rate, rear-wheel acceleration).
The slip angle must satisfy |beta| < pi/2.

Besides the derivative and an RK4 integrator, this module exposes the
planar-acceleration structure needed by the barrier rows and the LQR
input mapping: [xddot, yddot] = drift + S @ [omega, a], where S is the
2x2 coupling matrix (invertible iff v != 0).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "VehicleState",
    "VehicleParams",
    "ControlInput",
    "PlanarKinematics",
    "bicycle_derivative",
    "step",
    "predict_position",
    "planar_kinematics",
]

_HALF_PI = math.pi / 2.0


@dataclass(frozen=True)
class VehicleState:
    """Pose, slip and speed of one vehicle: z = [x, y, psi, beta, v]."""

    x: float        # position east (m)
    y: float        # position north (m)
    psi: float      # heading angle (rad)
    beta: float     # slip angle (rad), |beta| < pi/2
    v: float        # rear-wheel speed (m/s)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.psi, self.beta, self.v])

    @staticmethod
    def from_array(z) -> "VehicleState":
        return VehicleState(float(z[0]), float(z[1]), float(z[2]), float(z[3]), float(z[4]))


@dataclass(frozen=True)
class VehicleParams:
    """Geometry of the vehicle: c.g. to rear/front axle distances and safety radius."""

    lr: float = 1.0   # c.g. to rear axle (m)
    lf: float = 1.0   # c.g. to front axle (m)
    R: float = 1.25   # safety radius (m); vehicles are discs of radius R at the c.g.

    def __post_init__(self) -> None:
        if not (self.lr > 0.0 and self.lf > 0.0 and self.R > 0.0):
            raise ValueError(f"lr, lf, R must be positive, got {self}")


@dataclass(frozen=True)
class ControlInput:
    """u = [omega, a]: slip-angle rate (rad/s) and rear-wheel acceleration (m/s^2)."""

    omega: float
    a: float


@dataclass(frozen=True)
class PlanarKinematics:
    """Planar velocity and control-affine acceleration structure of one vehicle.

    [xddot, yddot] = [drift_ax, drift_ay] + coupling @ [omega, a].
    coupling is singular iff v == 0 (its omega column scales with v).
    """

    xdot: float
    ydot: float
    drift_ax: float
    drift_ay: float
    coupling: np.ndarray  # 2x2


def _check_beta(beta: float) -> None:
    if not abs(beta) < _HALF_PI:
        raise ValueError(f"slip angle |beta|={abs(beta):.6f} outside (-pi/2, pi/2)")


def bicycle_derivative(
    state: VehicleState, inp: ControlInput, params: VehicleParams
) -> np.ndarray:
    """Time derivative [xdot, ydot, psidot, betadot, vdot] of the bicycle state."""
    _check_beta(state.beta)
    c, s = math.cos(state.psi), math.sin(state.psi)
    tb = math.tan(state.beta)
    v = state.v
    return np.array([
        v * (c - s * tb),
        v * (s + c * tb),
        (v / params.lr) * tb,
        inp.omega,
        inp.a,
    ])


def _deriv_tuple(z, omega, a, lr):
    # Tuple-based derivative for the RK4 hot path (no array allocation).
    x, y, psi, beta, v = z
    if not abs(beta) < _HALF_PI:
        raise ValueError(f"slip angle |beta|={abs(beta):.6f} outside (-pi/2, pi/2)")
    c, s = math.cos(psi), math.sin(psi)
    tb = math.tan(beta)
    return (v * (c - s * tb), v * (s + c * tb), (v / lr) * tb, omega, a)


def step(
    state: VehicleState, inp: ControlInput, params: VehicleParams, dt: float
) -> VehicleState:
    """One fixed-step RK4 integration with the input held constant over the step."""
    if not dt > 0.0:
        raise ValueError(f"dt must be positive, got {dt}")
    omega, a, lr = inp.omega, inp.a, params.lr
    z0 = (state.x, state.y, state.psi, state.beta, state.v)
    k1 = _deriv_tuple(z0, omega, a, lr)
    z1 = tuple(z0[i] + 0.5 * dt * k1[i] for i in range(5))
    k2 = _deriv_tuple(z1, omega, a, lr)
    z2 = tuple(z0[i] + 0.5 * dt * k2[i] for i in range(5))
    k3 = _deriv_tuple(z2, omega, a, lr)
    z3 = tuple(z0[i] + dt * k3[i] for i in range(5))
    k4 = _deriv_tuple(z3, omega, a, lr)
    sixth = dt / 6.0
    return VehicleState(
        z0[0] + sixth * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
        z0[1] + sixth * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        z0[2] + sixth * (k1[2] + 2.0 * k2[2] + 2.0 * k3[2] + k4[2]),
        z0[3] + sixth * (k1[3] + 2.0 * k2[3] + 2.0 * k3[3] + k4[3]),
        z0[4] + sixth * (k1[4] + 2.0 * k2[4] + 2.0 * k3[4] + k4[4]),
    )


def planar_velocity(state: VehicleState) -> tuple[float, float]:
    """(xdot, ydot) of the c.g. at the current state."""
    _check_beta(state.beta)
    c, s = math.cos(state.psi), math.sin(state.psi)
    tb = math.tan(state.beta)
    return state.v * (c - s * tb), state.v * (s + c * tb)


def predict_position(state: VehicleState, tau: float) -> tuple[float, float]:
    """Constant-velocity position forecast (x + xdot*tau, y + ydot*tau).

    Exact for straight zero-input motion; deliberately ignores any heading
    change, which is the approximation the relaxed barrier compensates for.
    """
    if tau < 0.0:
        raise ValueError(f"tau must be nonnegative, got {tau}")
    xd, yd = planar_velocity(state)
    return state.x + xd * tau, state.y + yd * tau


def planar_kinematics(state: VehicleState, params: VehicleParams) -> PlanarKinematics:
    """Planar velocity plus the control coupling S and drift of [xddot, yddot].

    Differentiating the position kinematics in time gives

        xddot = -ydot * psidot + S[0] @ u
        yddot =  xdot * psidot + S[1] @ u

    with S = [[-v sin(psi) sec^2(beta), cos(psi) - sin(psi) tan(beta)],
              [ v cos(psi) sec^2(beta), sin(psi) + cos(psi) tan(beta)]].
    det S = -v sec^2(beta), so S is invertible iff v != 0.
    """
    _check_beta(state.beta)
    c, s = math.cos(state.psi), math.sin(state.psi)
    tb = math.tan(state.beta)
    sec2 = 1.0 + tb * tb
    v = state.v
    xd = v * (c - s * tb)
    yd = v * (s + c * tb)
    psid = (v / params.lr) * tb
    coupling = np.array([
        [-v * s * sec2, c - s * tb],
        [v * c * sec2, s + c * tb],
    ])
    return PlanarKinematics(
        xdot=xd, ydot=yd, drift_ax=-yd * psid, drift_ay=xd * psid, coupling=coupling
    )
