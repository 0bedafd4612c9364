"""Barrier functions and their QP constraint rows.

Four barriers are provided for a pair of bicycle-model vehicles i, j with
differential position xi = (x_i - x_j, y_i - y_j), velocity nu and
acceleration alpha:

* speed barrier      h_s  = (v_max - v) * v            (per vehicle)
* distance barrier   h_0  = ||xi||^2 - (2R)^2
* future-focused     h_ff = ||xi + nu*tau_hat||^2 - (2R)^2
* relaxed ff         H    = h_ff + k0(tau_hat) * h_0

tau_hat is a smooth clamp of the regularized minimizer of the predicted
squared distance under a zero-acceleration (constant velocity) forecast:

    tau_star_hat = -(xi . nu) / (||nu||^2 + eps)
    K_delta(s)   = 1/2 + 1/2 * tanh(k * (s - delta))
    tau_hat      = tau_star_hat * K_0 + (tau_bar - tau_star_hat) * K_tau_bar

Each barrier can be assembled into a QP row  phi + gamma_i*a_i + gamma_j*a_j >= 0
equivalent to hdot >= -alpha_gain * h.  Slip-angle rates omega are fixed
before the QP (exogenous), so their effect on the differential acceleration
is folded into phi; only the rear-wheel accelerations remain as decision
variables.  All derivatives are analytic; finite-difference tests guard them.

The distance barrier h_0 has no acceleration term in its first derivative,
so its row ("zero" kind) is the second-order construction
    h_1 = h_0' + alpha_gain*h_0,   enforce  h_1' + alpha_gain*h_1 >= 0,
which is the standard treatment for relative-degree-2 distance constraints.

Scalar functions are written in plain float math (they sit on the per-tick
control path); *_batch variants are vectorized over leading array dimensions
for the large randomized property suites.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dynamics import VehicleParams, VehicleState

__all__ = [
    "FfParams",
    "RffParams",
    "RelativeKinematics",
    "BarrierEval",
    "h_speed",
    "h0",
    "tau_star_hat",
    "smooth_switch",
    "tau_hat",
    "h_ff",
    "h_rff",
    "relative_kinematics",
    "constraint_row",
    "h0_batch",
    "tau_hat_batch",
    "ff_batch",
    "rff_batch",
]


@dataclass(frozen=True)
class FfParams:
    """Future-focused barrier parameters."""

    tau_bar: float = 5.0      # look-ahead horizon (s)
    k: float = 1000.0         # switch sharpness; k >= 1 keeps the ordering property
    epsilon: float = 1e-9     # regularizer in the tau_star_hat denominator
    R: float = 1.25           # safety radius (m); barrier boundary is 2R separation

    def __post_init__(self) -> None:
        if not (self.tau_bar > 0 and self.k >= 1.0 and 0 < self.epsilon < 1 and self.R > 0):
            raise ValueError(f"invalid FfParams {self}")


@dataclass(frozen=True)
class RffParams:
    """Relaxation gain k0 = k0_scale * max(tau_hat - 1, k0_floor) on top of FfParams."""

    ff: FfParams = FfParams()
    k0_scale: float = 0.1
    k0_floor: float = 0.001

    def __post_init__(self) -> None:
        if not (self.k0_scale > 0 and self.k0_floor > 0):
            raise ValueError(f"invalid RffParams {self}")


@dataclass(frozen=True)
class RelativeKinematics:
    """Differential kinematics of a vehicle pair.

    alpha (differential acceleration) is control-affine:
        alpha = alpha_drift + alpha_coupling_i @ u_i - alpha_coupling_j @ u_j
    """

    xi: np.ndarray             # (2,) position difference
    nu: np.ndarray             # (2,) velocity difference
    alpha_drift: np.ndarray    # (2,) control-independent part of alpha
    alpha_coupling_i: np.ndarray  # (2,2) S matrix of vehicle i
    alpha_coupling_j: np.ndarray  # (2,2) S matrix of vehicle j


@dataclass(frozen=True)
class BarrierEval:
    """Barrier value and its QP constraint row phi + gamma_i*a_i + gamma_j*a_j >= 0.

    phi bundles every term not multiplied by a decision variable: the drift
    of hdot (including the contribution of the fixed slip-angle rates) plus
    the class-K term alpha_gain * value.
    """

    value: float
    phi: float
    gamma_i: float
    gamma_j: float


# ---------------------------------------------------------------------------
# scalar operations
# ---------------------------------------------------------------------------

def h_speed(state: VehicleState, v_max: float, alpha_gain: float = 10.0):
    """Speed barrier (v_max - v) * v with its QP row.

    vdot = a exactly, so the drift Lie term vanishes and the row is
    phi + gamma * a >= 0 with gamma = v_max - 2v and phi = alpha_gain * h.
    Returns (value, phi, gamma).
    """
    if not v_max > 0:
        raise ValueError(f"v_max must be positive, got {v_max}")
    value = (v_max - state.v) * state.v
    gamma = v_max - 2.0 * state.v
    return value, alpha_gain * value, gamma


def h0(state_i: VehicleState, state_j: VehicleState, R: float) -> float:
    """Physical distance barrier: squared distance minus (2R)^2."""
    dx = state_i.x - state_j.x
    dy = state_i.y - state_j.y
    return dx * dx + dy * dy - 4.0 * R * R


def tau_star_hat(xi, nu, epsilon: float) -> float:
    """Regularized minimizer of predicted squared distance over future offset."""
    if not epsilon > 0:
        raise ValueError(f"epsilon must be positive, got {epsilon}")
    p = xi[0] * nu[0] + xi[1] * nu[1]
    return -p / (nu[0] * nu[0] + nu[1] * nu[1] + epsilon)


def smooth_switch(s: float, delta: float, k: float) -> float:
    """Sigmoid switch K_delta(s) = 1/2 + 1/2 tanh(k (s - delta)), in (0, 1)."""
    return 0.5 + 0.5 * math.tanh(k * (s - delta))


def tau_hat(tau_star_hat: float, tau_bar: float, k: float) -> float:
    """Smooth clamp of tau_star_hat into approximately [0, tau_bar]."""
    if not tau_bar > 0:
        raise ValueError(f"tau_bar must be positive, got {tau_bar}")
    ts = tau_star_hat
    k0 = 0.5 + 0.5 * math.tanh(k * ts)
    kt = 0.5 + 0.5 * math.tanh(k * (ts - tau_bar))
    return ts * k0 + (tau_bar - ts) * kt


def _pair_core(state_i: VehicleState, state_j: VehicleState, ff: FfParams):
    """(xi_x, xi_y, nu_x, nu_y, p, q, D, ts, th) for a vehicle pair."""
    xi_x = state_i.x - state_j.x
    xi_y = state_i.y - state_j.y
    ci, si = math.cos(state_i.psi), math.sin(state_i.psi)
    cj, sj = math.cos(state_j.psi), math.sin(state_j.psi)
    tbi, tbj = math.tan(state_i.beta), math.tan(state_j.beta)
    nu_x = state_i.v * (ci - si * tbi) - state_j.v * (cj - sj * tbj)
    nu_y = state_i.v * (si + ci * tbi) - state_j.v * (sj + cj * tbj)
    p = xi_x * nu_x + xi_y * nu_y
    q = nu_x * nu_x + nu_y * nu_y
    D = q + ff.epsilon
    ts = -p / D
    k = ff.k
    K0 = 0.5 + 0.5 * math.tanh(k * ts)
    Kt = 0.5 + 0.5 * math.tanh(k * (ts - ff.tau_bar))
    th = ts * K0 + (ff.tau_bar - ts) * Kt
    return xi_x, xi_y, nu_x, nu_y, p, q, D, ts, K0, Kt, th


def h_ff(state_i: VehicleState, state_j: VehicleState, ff: FfParams) -> float:
    """Future-focused barrier: predicted squared distance at tau_hat minus (2R)^2."""
    xi_x, xi_y, nu_x, nu_y, p, q, _, _, _, _, th = _pair_core(state_i, state_j, ff)
    base = xi_x * xi_x + xi_y * xi_y - 4.0 * ff.R * ff.R
    return base + 2.0 * th * p + th * th * q


def _k0_gain(th: float, rff: RffParams) -> float:
    return rff.k0_scale * max(th - 1.0, rff.k0_floor)


def h_rff(state_i: VehicleState, state_j: VehicleState, rff: RffParams) -> float:
    """Relaxed future-focused barrier H = h_ff + k0(tau_hat) * h_0."""
    ff = rff.ff
    xi_x, xi_y, nu_x, nu_y, p, q, _, _, _, _, th = _pair_core(state_i, state_j, ff)
    base = xi_x * xi_x + xi_y * xi_y - 4.0 * ff.R * ff.R
    return base + 2.0 * th * p + th * th * q + _k0_gain(th, rff) * base


def _vehicle_planar(state: VehicleState, lr: float):
    """Per-vehicle planar terms: xd, yd, S columns (s_w, s_a) and drift."""
    c, s = math.cos(state.psi), math.sin(state.psi)
    tb = math.tan(state.beta)
    sec2 = 1.0 + tb * tb
    v = state.v
    sax = c - s * tb
    say = s + c * tb
    xd = v * sax
    yd = v * say
    swx = -v * s * sec2
    swy = v * c * sec2
    psid = (v / lr) * tb
    return xd, yd, swx, swy, sax, say, -yd * psid, xd * psid


def relative_kinematics(
    state_i: VehicleState, state_j: VehicleState, params: VehicleParams
) -> RelativeKinematics:
    """Differential position/velocity and the control-affine structure of alpha."""
    if not (abs(state_i.beta) < math.pi / 2 and abs(state_j.beta) < math.pi / 2):
        raise ValueError("slip angle outside (-pi/2, pi/2)")
    xdi, ydi, swxi, swyi, saxi, sayi, daxi, dayi = _vehicle_planar(state_i, params.lr)
    xdj, ydj, swxj, swyj, saxj, sayj, daxj, dayj = _vehicle_planar(state_j, params.lr)
    return RelativeKinematics(
        xi=np.array([state_i.x - state_j.x, state_i.y - state_j.y]),
        nu=np.array([xdi - xdj, ydi - ydj]),
        alpha_drift=np.array([daxi - daxj, dayi - dayj]),
        alpha_coupling_i=np.array([[swxi, saxi], [swyi, sayi]]),
        alpha_coupling_j=np.array([[swxj, saxj], [swyj, sayj]]),
    )


def _sech2(x: float) -> float:
    if abs(x) > 300.0:
        return 0.0
    c = math.cosh(x)
    return 1.0 / (c * c)


def constraint_row(
    kind: str,
    state_i: VehicleState,
    state_j: VehicleState,
    exogenous_omega_i: float,
    exogenous_omega_j: float,
    alpha_gain: float,
    vehicle: VehicleParams,
    rff: RffParams,
    hocbf_gain: float = 2.1,
    zero_margin: float = 0.05,
) -> BarrierEval:
    """Assemble the QP row of a pairwise barrier for decision variables (a_i, a_j).

    kind selects the barrier: "zero" (second-order distance row), "ff", or
    "rff".  The fixed slip-angle rates enter the differential acceleration
    through the omega columns of each vehicle's S matrix and are folded into
    phi together with the class-K term alpha_gain * value.

    The distance barrier has relative degree two in the accelerations, so its
    row stacks two first-order conditions with slope hocbf_gain.  That slope
    is deliberately independent of alpha_gain: it must respect the braking
    authority a_bar or the program loses feasibility exactly when the
    constraint matters (the default respects a_bar at benchmark speeds).
    The enforced boundary is padded by zero_margin
    (meters of separation) because the condition only holds at sample times;
    without the pad, crawling standoffs graze h0 = 0 between samples.

    For ff/rff, hdot is affine in the differential acceleration alpha:
    hdot = c0 + c . alpha, with

        c0 = 2 M (1 + W A0),   c = 2 M W A + 2 tau_hat (xi + tau_hat nu),
        M  = p + tau_hat q,    A0 = -q / D,   A = -(xi + 2 tau_star_hat nu) / D,

    where W is the derivative of the smooth clamp at tau_star_hat.  The rff
    row adds d/dt [k0 h_0]; at the (measure-zero) kink of k0 the one-sided
    derivative of the floor branch is used.
    """
    ff = rff.ff
    xi_x, xi_y, nu_x, nu_y, p, q, D, ts, K0, Kt, th = _pair_core(state_i, state_j, ff)
    lr = vehicle.lr
    xdi, ydi, swxi, swyi, saxi, sayi, daxi, dayi = _vehicle_planar(state_i, lr)
    xdj, ydj, swxj, swyj, saxj, sayj, daxj, dayj = _vehicle_planar(state_j, lr)
    # Differential acceleration with accelerations a_i = a_j = 0:
    # alpha0 = alpha_drift + s_w_i * omega_i - s_w_j * omega_j
    a0x = (daxi - daxj) + swxi * exogenous_omega_i - swxj * exogenous_omega_j
    a0y = (dayi - dayj) + swyi * exogenous_omega_i - swyj * exogenous_omega_j

    base = xi_x * xi_x + xi_y * xi_y - 4.0 * ff.R * ff.R

    if kind == "zero":
        # h1 = h0' + g*h0; row is h1' + g*h1 >= 0, i.e.
        # 2q + 2 xi.alpha + 4 g p + g^2 h0 >= 0, on the padded boundary.
        g = hocbf_gain
        pad = 2.0 * ff.R + zero_margin
        base = xi_x * xi_x + xi_y * xi_y - pad * pad
        phi = (
            2.0 * q
            + 4.0 * g * p
            + g * g * base
            + 2.0 * (xi_x * a0x + xi_y * a0y)
        )
        gamma_i = 2.0 * (xi_x * saxi + xi_y * sayi)
        gamma_j = -2.0 * (xi_x * saxj + xi_y * sayj)
        return BarrierEval(value=base, phi=phi, gamma_i=gamma_i, gamma_j=gamma_j)

    if kind not in ("ff", "rff"):
        raise ValueError(f"unknown barrier kind {kind!r}")

    k = ff.k
    G0 = 0.5 * k * _sech2(k * ts)
    Gt = 0.5 * k * _sech2(k * (ts - ff.tau_bar))
    W = (K0 - Kt) + ts * (G0 - Gt) + ff.tau_bar * Gt
    A0 = -q / D
    Ax = -(xi_x + 2.0 * ts * nu_x) / D
    Ay = -(xi_y + 2.0 * ts * nu_y) / D
    M = p + th * q
    c0 = 2.0 * M * (1.0 + W * A0)
    mw = 2.0 * M * W
    cx = mw * Ax + 2.0 * th * (xi_x + th * nu_x)
    cy = mw * Ay + 2.0 * th * (xi_y + th * nu_y)

    value = base + 2.0 * th * p + th * th * q

    if kind == "rff":
        k0g = _k0_gain(th, rff)
        kd = rff.k0_scale if (th - 1.0) > rff.k0_floor else 0.0
        hw = base * kd * W
        c0 = c0 + 2.0 * k0g * p + hw * A0
        cx = cx + hw * Ax
        cy = cy + hw * Ay
        value = value + k0g * base

    drift = c0 + cx * a0x + cy * a0y
    gamma_i = cx * saxi + cy * sayi
    gamma_j = -(cx * saxj + cy * sayj)
    return BarrierEval(
        value=value, phi=drift + alpha_gain * value, gamma_i=gamma_i, gamma_j=gamma_j
    )


# ---------------------------------------------------------------------------
# vectorized batch evaluation (leading dimensions broadcast)
# ---------------------------------------------------------------------------

def _planar_batch(z: np.ndarray):
    psi, beta, v = z[..., 2], z[..., 3], z[..., 4]
    c, s = np.cos(psi), np.sin(psi)
    tb = np.tan(beta)
    sec2 = 1.0 + tb * tb
    sax = c - s * tb
    say = s + c * tb
    return v * sax, v * say, -v * s * sec2, v * c * sec2, sax, say


def _sech2_batch(x: np.ndarray) -> np.ndarray:
    out = np.zeros_like(x)
    small = np.abs(x) < 300.0
    c = np.cosh(np.where(small, x, 0.0))
    np.divide(1.0, c * c, out=out, where=small)
    return out


def h0_batch(zi: np.ndarray, zj: np.ndarray, R: float) -> np.ndarray:
    dx = zi[..., 0] - zj[..., 0]
    dy = zi[..., 1] - zj[..., 1]
    return dx * dx + dy * dy - 4.0 * R * R


def _core_batch(zi: np.ndarray, zj: np.ndarray, ff: FfParams):
    xdi, ydi, swxi, swyi, saxi, sayi = _planar_batch(zi)
    xdj, ydj, swxj, swyj, saxj, sayj = _planar_batch(zj)
    xi_x = zi[..., 0] - zj[..., 0]
    xi_y = zi[..., 1] - zj[..., 1]
    nu_x = xdi - xdj
    nu_y = ydi - ydj
    p = xi_x * nu_x + xi_y * nu_y
    q = nu_x * nu_x + nu_y * nu_y
    D = q + ff.epsilon
    ts = -p / D
    K0 = 0.5 + 0.5 * np.tanh(ff.k * ts)
    Kt = 0.5 + 0.5 * np.tanh(ff.k * (ts - ff.tau_bar))
    th = ts * K0 + (ff.tau_bar - ts) * Kt
    per_vehicle = (
        (ydi, xdi, swxi, swyi, saxi, sayi),
        (ydj, xdj, swxj, swyj, saxj, sayj),
    )
    return xi_x, xi_y, nu_x, nu_y, p, q, D, ts, K0, Kt, th, per_vehicle


def tau_hat_batch(zi: np.ndarray, zj: np.ndarray, ff: FfParams) -> np.ndarray:
    """tau_hat for each pair; used by the range and ordering property suites."""
    return _core_batch(zi, zj, ff)[10]


def _assemble_grads(gxi_x, gxi_y, gnu_x, gnu_y, per_vehicle):
    (ydi, xdi, swxi, swyi, saxi, sayi), (ydj, xdj, swxj, swyj, saxj, sayj) = per_vehicle
    gi = np.stack([
        gxi_x,
        gxi_y,
        gnu_x * (-ydi) + gnu_y * xdi,
        gnu_x * swxi + gnu_y * swyi,
        gnu_x * saxi + gnu_y * sayi,
    ], axis=-1)
    gj = np.stack([
        -gxi_x,
        -gxi_y,
        -(gnu_x * (-ydj) + gnu_y * xdj),
        -(gnu_x * swxj + gnu_y * swyj),
        -(gnu_x * saxj + gnu_y * sayj),
    ], axis=-1)
    return gi, gj


def ff_batch(zi: np.ndarray, zj: np.ndarray, ff: FfParams, grad: bool = False):
    """h_ff values (and optionally gradients w.r.t. both 5-dim states)."""
    xi_x, xi_y, nu_x, nu_y, p, q, D, ts, K0, Kt, th, per_vehicle = _core_batch(zi, zj, ff)
    base = xi_x * xi_x + xi_y * xi_y - 4.0 * ff.R * ff.R
    value = base + 2.0 * th * p + th * th * q
    if not grad:
        return value
    G0 = 0.5 * ff.k * _sech2_batch(ff.k * ts)
    Gt = 0.5 * ff.k * _sech2_batch(ff.k * (ts - ff.tau_bar))
    W = (K0 - Kt) + ts * (G0 - Gt) + ff.tau_bar * Gt
    M = p + th * q
    mw = 2.0 * M * W
    # dh/dxi = 2(xi + th*nu) + 2MW * dts/dxi, dts/dxi = -nu/D (same pattern for nu)
    gxi_x = 2.0 * (xi_x + th * nu_x) + mw * (-nu_x / D)
    gxi_y = 2.0 * (xi_y + th * nu_y) + mw * (-nu_y / D)
    gnu_x = 2.0 * th * (xi_x + th * nu_x) + mw * (-(xi_x + 2.0 * ts * nu_x) / D)
    gnu_y = 2.0 * th * (xi_y + th * nu_y) + mw * (-(xi_y + 2.0 * ts * nu_y) / D)
    gi, gj = _assemble_grads(gxi_x, gxi_y, gnu_x, gnu_y, per_vehicle)
    return value, gi, gj


def rff_batch(zi: np.ndarray, zj: np.ndarray, rff: RffParams, grad: bool = False):
    """H values (and optionally gradients w.r.t. both 5-dim states)."""
    ff = rff.ff
    xi_x, xi_y, nu_x, nu_y, p, q, D, ts, K0, Kt, th, per_vehicle = _core_batch(zi, zj, ff)
    base = xi_x * xi_x + xi_y * xi_y - 4.0 * ff.R * ff.R
    k0g = rff.k0_scale * np.maximum(th - 1.0, rff.k0_floor)
    value = base + 2.0 * th * p + th * th * q + k0g * base
    if not grad:
        return value
    G0 = 0.5 * ff.k * _sech2_batch(ff.k * ts)
    Gt = 0.5 * ff.k * _sech2_batch(ff.k * (ts - ff.tau_bar))
    W = (K0 - Kt) + ts * (G0 - Gt) + ff.tau_bar * Gt
    M = p + th * q
    kd = np.where(th - 1.0 > rff.k0_floor, rff.k0_scale, 0.0)
    tw = (2.0 * M + kd * base) * W
    one_k0 = 1.0 + k0g
    gxi_x = 2.0 * (xi_x * one_k0 + th * nu_x) + tw * (-nu_x / D)
    gxi_y = 2.0 * (xi_y * one_k0 + th * nu_y) + tw * (-nu_y / D)
    gnu_x = 2.0 * th * (xi_x + th * nu_x) + tw * (-(xi_x + 2.0 * ts * nu_x) / D)
    gnu_y = 2.0 * th * (xi_y + th * nu_y) + tw * (-(xi_y + 2.0 * ts * nu_y) / D)
    gi, gj = _assemble_grads(gxi_x, gxi_y, gnu_x, gnu_y, per_vehicle)
    return value, gi, gj
