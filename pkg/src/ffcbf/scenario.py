"""Four-way unsignaled intersection benchmark.

Two perpendicular two-lane roads meet at the origin; the intersection box is
2*box_half on a side and lane centerlines sit lane_width/2 from the road
axis (right-hand traffic).  One vehicle approaches per lane, placed d_i
meters before the box with speed s_i, both drawn uniformly per trial.
Straight vehicles track their lane centerline at constant reference speed;
in the left-turn scenario vehicle 0 follows lane -> quarter-circle arc
(radius box_half + lane_width/2) -> exit lane, slowing to a constant arc
speed with ramps so the reference speed stays continuous.

A trial first rejection-samples initial conditions until the constant
velocity forecast keeps every pair at least 2R apart over the look-ahead
horizon, then alternates controller ticks with RK4 integration until all
vehicles exit at their designated lane (success), every moving vehicle has
been stopped for 3 s (deadlock), or the time cap is hit (timeout).  Batches
aggregate the Success / Feas / DLock / Unsafe / Avg-Time metrics over
deterministically seeded trials.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .barriers import FfParams, RffParams, h0, h_ff, h_rff
from .controllers import ControllerConfig, NominalTarget, centralized_step, decentralized_step
from .dynamics import VehicleParams, VehicleState, planar_velocity, step

__all__ = [
    "ScenarioConfig",
    "ScenarioError",
    "TrialResult",
    "TrajectoryLog",
    "BatchSummary",
    "World",
    "build_world",
    "randomize_initial",
    "check_assumption1",
    "detect_deadlock",
    "run_trial",
    "run_batch",
    "default_config",
    "resolve_workers",
]


class ScenarioError(ValueError):
    """Configuration or sampling problem that prevents running a trial."""


@dataclass
class ScenarioConfig:
    """Full description of one benchmark setup (world, sampling, controller)."""

    scenario: str = "all_straight"        # all_straight | one_left_turn
    num_vehicles: int = 4
    d0: float = 12.0                      # initial-distance center (m, from the box)
    delta_d: float = 5.0                  # initial-distance half-width (m)
    s0: float = 6.0                       # initial-speed center (m/s)
    delta_s: float = 3.0                  # initial-speed half-width (m/s)
    v_max: float = 10.0                   # speed limit (m/s)
    dt: float = 0.01                      # integration/control timestep (s)
    t_max: float = 30.0                   # trial cap (s)
    seed: int = 0
    lane_width: float = 2.7               # m
    box_half: float = 2.7                 # half-size of the intersection box (m)
    R: float = 1.25                       # vehicle safety radius (m)
    turn_speed: float = 3.0               # reference speed on the left-turn arc (m/s)
    ref_accel: float = 6.0                # reference speed ramp magnitude (m/s^2)
    exit_lateral_tol: float = 0.5         # m from the exit centerline
    stop_speed: float = 0.01              # deadlock stop threshold (m/s)
    deadlock_window: float = 3.0          # s
    max_resamples: int = 100
    controller: ControllerConfig = field(default_factory=ControllerConfig)

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        if self.scenario not in ("all_straight", "one_left_turn"):
            raise ScenarioError(f"unknown scenario {self.scenario!r}")
        if not 1 <= self.num_vehicles <= 4:
            raise ScenarioError("num_vehicles must be in 1..4 (one vehicle per lane)")
        if not (self.d0 > self.delta_d >= 0.0):
            raise ScenarioError("need d0 > delta_d >= 0")
        if not (self.s0 > self.delta_s >= 0.0):
            raise ScenarioError("need s0 > delta_s >= 0")
        if not (self.dt > 0 and self.t_max > 0):
            raise ScenarioError("dt and t_max must be positive")
        if self.seed < 0:
            raise ScenarioError("seed must be nonnegative")
        if not (self.lane_width > 0 and self.box_half > 0 and self.R > 0):
            raise ScenarioError("geometry lengths must be positive")
        if self.lane_width / 2.0 > self.box_half:
            raise ScenarioError("lane centerlines must fall inside the box")

    def ff_params(self) -> FfParams:
        return self.controller.rff.ff


def default_config(
    cbf_kind: str = "rff",
    mode: str = "centralized",
    scenario: str = "all_straight",
    seed: int = 0,
    **overrides,
) -> ScenarioConfig:
    """Benchmark defaults with a consistently wired controller/barrier stack."""
    R = float(overrides.pop("R", 1.25))
    v_max = float(overrides.pop("v_max", 10.0))
    ff = FfParams(
        tau_bar=float(overrides.pop("tau_bar", 5.0)),
        k=float(overrides.pop("k", 1000.0)),
        epsilon=float(overrides.pop("epsilon", 1e-9)),
        R=R,
    )
    rff = RffParams(
        ff=ff,
        k0_scale=float(overrides.pop("k0_scale", 0.1)),
        k0_floor=float(overrides.pop("k0_floor", 0.001)),
    )
    vehicle = VehicleParams(
        lr=float(overrides.pop("lr", 1.0)), lf=float(overrides.pop("lf", 1.0)), R=R
    )
    ctrl_keys = (
        "alpha_gain", "speed_alpha", "omega_bar", "a_bar", "lqr_q_pos", "lqr_q_vel", "lqr_r",
        "hocbf_gain", "zero_margin", "beta_max", "omega_v_ref", "v_eps", "decentral_eps",
    )
    ctrl_overrides = {k: overrides.pop(k) for k in ctrl_keys if k in overrides}
    controller = ControllerConfig(
        cbf_kind=cbf_kind, mode=mode, v_max=v_max, vehicle=vehicle, rff=rff,
        **ctrl_overrides,
    )
    return ScenarioConfig(
        scenario=scenario, seed=seed, v_max=v_max, R=R, controller=controller, **overrides
    )


# ---------------------------------------------------------------------------
# world geometry and reference trajectories
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Lane:
    """One approach lane: centerline entry point at the box edge and heading."""

    entry: np.ndarray      # point where the centerline meets the box edge
    direction: np.ndarray  # unit travel direction
    normal: np.ndarray     # unit left normal of the travel direction
    psi: float             # heading angle


def _rot90(v: np.ndarray) -> np.ndarray:
    return np.array([-v[1], v[0]])


class _SpeedProfile:
    """Piecewise constant-acceleration arclength profile sigma(t)."""

    def __init__(self, segments):
        # segments: list of (t_start, sigma_start, speed_start, accel); the
        # last segment extends forever.
        self._segments = segments

    @staticmethod
    def constant(speed: float) -> "_SpeedProfile":
        return _SpeedProfile([(0.0, 0.0, speed, 0.0)])

    @staticmethod
    def turn(cruise: float, arc_speed: float, ramp: float,
             approach_len: float, arc_len: float) -> "_SpeedProfile":
        if arc_speed >= cruise:
            return _SpeedProfile.constant(cruise)
        brake_dist = (cruise * cruise - arc_speed * arc_speed) / (2.0 * ramp)
        brake_at = max(0.0, approach_len - brake_dist)
        segs = []
        t = s = 0.0
        if brake_at > 0.0:
            segs.append((t, s, cruise, 0.0))
            t += brake_at / cruise
            s = brake_at
        segs.append((t, s, cruise, -ramp))
        t += (cruise - arc_speed) / ramp
        s += brake_dist
        arc_end = approach_len + arc_len
        if s < arc_end:
            segs.append((t, s, arc_speed, 0.0))
            t += (arc_end - s) / arc_speed
            s = arc_end
        segs.append((t, s, arc_speed, ramp))
        t += (cruise - arc_speed) / ramp
        s += brake_dist
        segs.append((t, s, cruise, 0.0))
        return _SpeedProfile(segs)

    def __call__(self, t: float) -> tuple[float, float]:
        seg = self._segments[0]
        for cand in self._segments[1:]:
            if cand[0] > t:
                break
            seg = cand
        t0, s0, v0, a = seg
        dt = t - t0
        return s0 + v0 * dt + 0.5 * a * dt * dt, v0 + a * dt


class _StraightRef:
    def __init__(self, start: np.ndarray, direction: np.ndarray, speed: float):
        self._start = start
        self._dir = direction
        self._speed = speed

    def __call__(self, t: float) -> NominalTarget:
        p = self._start + self._dir * (self._speed * t)
        v = self._dir * self._speed
        return NominalTarget(np.array([p[0], p[1], v[0], v[1]]))


class _TurnRef:
    """Lane -> quarter-circle left-turn arc -> exit lane reference."""

    def __init__(self, lane: Lane, d_i: float, speed: float, radius: float,
                 arc_speed: float, ramp: float):
        self._lane = lane
        self._start = lane.entry - lane.direction * d_i
        self._center = lane.entry + lane.normal * radius
        self._radius = radius
        self._theta0 = math.atan2(lane.entry[1] - self._center[1],
                                  lane.entry[0] - self._center[0])
        self._approach = d_i
        self._arc_len = radius * math.pi / 2.0
        self._exit_dir = _rot90(lane.direction)
        self._exit_point = self._center + _rot90(lane.entry - self._center)
        self._profile = _SpeedProfile.turn(
            speed, min(speed, arc_speed), ramp, d_i, self._arc_len
        )

    def __call__(self, t: float) -> NominalTarget:
        sigma, spd = self._profile(t)
        if sigma <= self._approach:
            p = self._start + self._lane.direction * sigma
            tan = self._lane.direction
        elif sigma <= self._approach + self._arc_len:
            theta = self._theta0 + (sigma - self._approach) / self._radius
            c, s = math.cos(theta), math.sin(theta)
            p = self._center + self._radius * np.array([c, s])
            tan = np.array([-s, c])
        else:
            p = self._exit_point + self._exit_dir * (sigma - self._approach - self._arc_len)
            tan = self._exit_dir
        return NominalTarget(np.array([p[0], p[1], tan[0] * spd, tan[1] * spd]))


class World:
    """Lane geometry, reference-trajectory factories and exit predicates."""

    def __init__(self, config: ScenarioConfig):
        self.config = config
        half = config.lane_width / 2.0
        b = config.box_half
        self.lanes = (
            Lane(np.array([half, -b]), np.array([0.0, 1.0]),
                 np.array([-1.0, 0.0]), math.pi / 2),            # from south, north-bound
            Lane(np.array([-half, b]), np.array([0.0, -1.0]),
                 np.array([1.0, 0.0]), -math.pi / 2),            # from north, south-bound
            Lane(np.array([b, half]), np.array([-1.0, 0.0]),
                 np.array([0.0, -1.0]), math.pi),                # from east, west-bound
            Lane(np.array([-b, -half]), np.array([1.0, 0.0]),
                 np.array([0.0, 1.0]), 0.0),                     # from west, east-bound
        )
        self.turn_radius = b + half
        self.turn_vehicle = 0 if config.scenario == "one_left_turn" else None

    def reference(self, index: int, d_i: float, s_i: float):
        """Time-parameterized NominalTarget generator for one vehicle."""
        lane = self.lanes[index]
        if index == self.turn_vehicle:
            return _TurnRef(lane, d_i, s_i, self.turn_radius,
                            self.config.turn_speed, self.config.ref_accel)
        return _StraightRef(lane.entry - lane.direction * d_i, lane.direction, s_i)

    def exit_frame(self, index: int):
        """(exit point on the box boundary, exit direction) for one vehicle."""
        lane = self.lanes[index]
        if index == self.turn_vehicle:
            center = lane.entry + lane.normal * self.turn_radius
            return center + _rot90(lane.entry - center), _rot90(lane.direction)
        return lane.entry + lane.direction * (2.0 * self.config.box_half), lane.direction

    def is_exited(self, index: int, state: VehicleState) -> bool:
        """Past the intersection box and within the exit-lane lateral band."""
        point, direction = self.exit_frame(index)
        p = np.array([state.x, state.y]) - point
        along = p[0] * direction[0] + p[1] * direction[1]
        lateral = abs(-p[0] * direction[1] + p[1] * direction[0])
        return along >= 0.0 and lateral <= self.config.exit_lateral_tol


def build_world(config: ScenarioConfig) -> World:
    config.validate()
    return World(config)


def randomize_initial(config: ScenarioConfig, rng: np.random.Generator):
    """Per-vehicle uniform draws d_i, s_i placed on the lane centerlines."""
    world = build_world(config)
    states = []
    for i in range(config.num_vehicles):
        d_i = config.d0 + rng.uniform(-config.delta_d, config.delta_d)
        s_i = config.s0 + rng.uniform(-config.delta_s, config.delta_s)
        lane = world.lanes[i]
        pos = lane.entry - lane.direction * d_i
        states.append(VehicleState(float(pos[0]), float(pos[1]), lane.psi, 0.0, s_i))
    return states


def check_assumption1(states, tau_bar: float, R: float) -> bool:
    """Accept iff every pair stays >= 2R apart under the constant-velocity
    forecast over [0, tau_bar] (closed-form clamped minimizer of the
    quadratic predicted squared distance)."""
    limit = 4.0 * R * R
    n = len(states)
    vels = [planar_velocity(s) for s in states]
    for i in range(n):
        for j in range(i + 1, n):
            xi_x = states[i].x - states[j].x
            xi_y = states[i].y - states[j].y
            nu_x = vels[i][0] - vels[j][0]
            nu_y = vels[i][1] - vels[j][1]
            q = nu_x * nu_x + nu_y * nu_y
            if q > 0.0:
                tau = min(max(-(xi_x * nu_x + xi_y * nu_y) / q, 0.0), tau_bar)
            else:
                tau = 0.0
            dx = xi_x + nu_x * tau
            dy = xi_y + nu_y * tau
            if dx * dx + dy * dy < limit:
                return False
    return True


def detect_deadlock(speeds, exited, dt: float, stop_speed: float = 0.01,
                    window: float = 3.0) -> bool:
    """True iff some contiguous stretch spanning >= window seconds has every
    not-yet-exited vehicle slower than stop_speed."""
    speeds = np.asarray(speeds, dtype=float)
    exited = np.asarray(exited, dtype=bool)
    stopped = np.all((speeds < stop_speed) | exited, axis=1) & ~np.all(exited, axis=1)
    run = 0
    for flag in stopped:
        run = run + 1 if flag else 0
        if (run - 1) * dt >= window - 1e-12:
            return True
    return False


# ---------------------------------------------------------------------------
# trial execution
# ---------------------------------------------------------------------------

@dataclass
class TrajectoryLog:
    """Per-step record of one trial (states, inputs, barrier series)."""

    t: np.ndarray          # (T,)
    states: np.ndarray     # (T, A, 5)
    inputs: np.ndarray     # (T, A, 2)
    barrier: np.ndarray    # (T, P) active-kind barrier per pair, (i<j) lexicographic
    h0: np.ndarray         # (T, P) physical barrier per pair
    feasible: np.ndarray   # (T,) bool
    pairs: tuple           # ((i, j), ...)


@dataclass
class TrialResult:
    """Outcome flags and metrics of one trial."""

    trial_index: int
    success: bool
    always_feasible: bool
    deadlock: bool
    unsafe: bool
    timeout: bool
    completion_time: float | None
    min_h0: float
    initial_barrier_min: float
    resamples: int
    trajectory: TrajectoryLog | None = None

    def flags(self) -> dict:
        return {
            "success": self.success,
            "always_feasible": self.always_feasible,
            "deadlock": self.deadlock,
            "unsafe": self.unsafe,
            "timeout": self.timeout,
        }


def trial_rng(config: ScenarioConfig, trial_index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence((config.seed, trial_index)))


def _barrier_value(kind: str, zi: VehicleState, zj: VehicleState, rff: RffParams) -> float:
    if kind == "zero":
        return h0(zi, zj, rff.ff.R)
    if kind == "ff":
        return h_ff(zi, zj, rff.ff)
    return h_rff(zi, zj, rff)


def run_trial(config: ScenarioConfig, trial_index: int,
              log_trajectory: bool = False) -> TrialResult:
    """Sample, screen, simulate and score a single trial."""
    rng = trial_rng(config, trial_index)
    ff = config.ff_params()
    resamples = 0
    states = randomize_initial(config, rng)
    while not check_assumption1(states, ff.tau_bar, config.R):
        resamples += 1
        if resamples > config.max_resamples:
            raise ScenarioError(
                f"trial {trial_index}: no safe initial condition after "
                f"{config.max_resamples} resamples"
            )
        states = randomize_initial(config, rng)

    world = build_world(config)
    lanes = world.lanes
    refs = []
    for i, st in enumerate(states):
        d_i = float((lanes[i].entry[0] - st.x) * lanes[i].direction[0]
                    + (lanes[i].entry[1] - st.y) * lanes[i].direction[1])
        refs.append(world.reference(i, d_i, st.v))

    ctrl = config.controller
    n = config.num_vehicles
    pairs = tuple((i, j) for i in range(n) for j in range(i + 1, n))
    params = ctrl.vehicle
    dt = config.dt

    exited = [False] * n
    exit_time = [None] * n
    min_h0 = math.inf
    always_feasible = True
    deadlock = False
    success = False
    stopped_run = 0
    warm_central = None
    warm_decentral = [None] * n

    initial_barrier_min = math.inf
    for i, j in pairs:
        initial_barrier_min = min(
            initial_barrier_min, _barrier_value(ctrl.cbf_kind, states[i], states[j], ctrl.rff)
        )

    log = ([], [], [], [], []) if log_trajectory else None  # t, z, u, hb, h0

    t = 0.0
    completion_time = None
    max_steps = int(round(config.t_max / dt))
    for _ in range(max_steps + 1):
        for i in range(n):
            if not exited[i] and world.is_exited(i, states[i]):
                exited[i] = True
                exit_time[i] = t
        if all(exited):
            success = True
            completion_time = max(exit_time)
            break
        if t >= config.t_max - 1e-12:
            break

        h0_now = [h0(states[i], states[j], config.R) for i, j in pairs]
        if h0_now:
            min_h0 = min(min_h0, min(h0_now))

        if all(exited[i] or states[i].v < config.stop_speed for i in range(n)):
            stopped_run += 1
            if (stopped_run - 1) * dt >= config.deadlock_window - 1e-12:
                deadlock = True
                break
        else:
            stopped_run = 0

        targets = [refs[i](t) for i in range(n)]
        if ctrl.mode == "centralized":
            res = centralized_step(states, targets, ctrl, warm_central)
            warm_central = res.active_set or None
            inputs = res.inputs
            feasible = res.feasible
        else:
            inputs = []
            feasible = True
            for i in range(n):
                res = decentralized_step(i, states, targets[i], ctrl, warm_decentral[i])
                warm_decentral[i] = res.active_set or None
                inputs.append(res.inputs[0])
                feasible = feasible and res.feasible
        if not feasible:
            always_feasible = False

        if log is not None:
            log[0].append(t)
            log[1].append([(s.x, s.y, s.psi, s.beta, s.v) for s in states])
            log[2].append([(u.omega, u.a) for u in inputs])
            log[3].append([_barrier_value(ctrl.cbf_kind, states[i], states[j], ctrl.rff)
                           for i, j in pairs])
            log[4].append((h0_now, feasible))

        states = [step(states[i], inputs[i], params, dt) for i in range(n)]
        t += dt

    timeout = not success and not deadlock
    trajectory = None
    if log is not None and log[0]:
        h0_arr = np.array([row[0] for row in log[4]])
        trajectory = TrajectoryLog(
            t=np.array(log[0]),
            states=np.array(log[1]),
            inputs=np.array(log[2]),
            barrier=np.array(log[3]),
            h0=h0_arr,
            feasible=np.array([row[1] for row in log[4]], dtype=bool),
            pairs=pairs,
        )
    return TrialResult(
        trial_index=trial_index,
        success=success,
        always_feasible=always_feasible,
        deadlock=deadlock,
        unsafe=bool(min_h0 < 0.0),
        timeout=timeout,
        completion_time=completion_time,
        min_h0=float(min_h0),
        initial_barrier_min=float(initial_barrier_min),
        resamples=resamples,
        trajectory=trajectory,
    )


# ---------------------------------------------------------------------------
# batches
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class BatchSummary:
    """Aggregated Success / Feas / DLock / Unsafe / Avg-Time metrics."""

    n_trials: int
    success_rate: float
    feas_rate: float
    deadlock_rate: float
    unsafe_rate: float
    avg_time: float | None   # mean completion time over successful trials
    n_timeout: int = 0

    @staticmethod
    def from_results(results) -> "BatchSummary":
        n = len(results)
        if n == 0:
            raise ScenarioError("empty batch")
        times = [r.completion_time for r in results if r.success]
        return BatchSummary(
            n_trials=n,
            success_rate=sum(r.success for r in results) / n,
            feas_rate=sum(r.always_feasible for r in results) / n,
            deadlock_rate=sum(r.deadlock for r in results) / n,
            unsafe_rate=sum(r.unsafe for r in results) / n,
            avg_time=float(np.mean(times)) if times else None,
            n_timeout=sum(r.timeout for r in results),
        )


def resolve_workers(workers: int | None = None) -> int:
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get("FFCBF_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _trial_task(args):
    config, index, log_policy = args
    keep_log = log_policy in ("failures", "all")
    result = run_trial(config, index, log_trajectory=keep_log)
    if log_policy == "failures" and result.success and result.always_feasible \
            and not result.unsafe:
        result = replace(result, trajectory=None)
    return result


def run_batch(config: ScenarioConfig, n_trials: int, workers: int | None = None,
              log_policy: str = "none"):
    """Run n_trials deterministic trials; returns (BatchSummary, results list).

    Trials are pure functions of (config, trial_index), so the outcome is
    identical for any worker count; FFCBF_THREADS caps the default pool size.
    """
    if n_trials < 1:
        raise ScenarioError("n_trials must be >= 1")
    if log_policy not in ("none", "failures", "all"):
        raise ScenarioError(f"unknown log policy {log_policy!r}")
    nworkers = resolve_workers(workers)
    tasks = [(config, idx, log_policy) for idx in range(n_trials)]
    if nworkers > 1 and n_trials > 1:
        with ProcessPoolExecutor(max_workers=nworkers) as pool:
            results = list(pool.map(_trial_task, tasks, chunksize=max(1, n_trials // (4 * nworkers))))
    else:
        results = [_trial_task(t) for t in tasks]
    return BatchSummary.from_results(results), results
