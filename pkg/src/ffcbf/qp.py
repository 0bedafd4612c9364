"""Small dense strictly convex QP solver for the safety-filter control laws.

Solves   min 1/2 ||u - u0||^2   s.t.  coeff_r . u >= lb_r  (rows),  lo <= u <= hi

with a primal active-set method.  The identity Hessian makes every subproblem
a Euclidean projection: the equality-constrained step is u0 + G_W^T lambda
with (G_W G_W^T) lambda = b_W - G_W u0, factored by Cholesky (least-squares
fallback near rank deficiency).  Rows are normalized internally so the result
is invariant to row scaling.

A feasible starting point is taken from (in order) the warm-started working
set, the box-clipped target, or a phase-1 minimum-slack LP (HiGHS via scipy);
the problem is declared infeasible when the minimum slack exceeds 1e-7.
Problems here are tiny (a handful of variables, tens of rows) and solved
thousands of times per simulation, so determinism and cheap warm starts
matter more than asymptotics.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

__all__ = ["QpProblem", "QpSolution", "solve", "verify_kkt"]

FEAS_TOL = 1e-8        # row feasibility, absolute + relative in the bound
DUAL_TOL = 1e-9        # multipliers may be this negative at the optimum
PHASE1_TOL = 1e-7      # min slack above this means infeasible
MAX_ITER = 200
_STEP_EPS = 1e-12
_NORM_EPS = 1e-13


@dataclass(frozen=True)
class QpProblem:
    """1/2 ||u - target||^2 under rows coeff.u >= lower_bound and box bounds.

    rows is a sequence of (coeffs, lower_bound); box is (lower, upper) arrays
    or None for an unbounded variable vector.
    """

    dim: int
    target: np.ndarray
    rows: tuple = ()
    box: tuple | None = None

    def __post_init__(self) -> None:
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        object.__setattr__(self, "target", np.asarray(self.target, dtype=float))
        if self.target.shape != (self.dim,):
            raise ValueError(f"target shape {self.target.shape} != ({self.dim},)")
        if not np.all(np.isfinite(self.target)):
            raise ValueError("non-finite target")
        rows = tuple((np.asarray(c, dtype=float), float(lb)) for c, lb in self.rows)
        object.__setattr__(self, "rows", rows)
        if self.box is not None:
            lo = np.asarray(self.box[0], dtype=float)
            hi = np.asarray(self.box[1], dtype=float)
            if lo.shape != (self.dim,) or hi.shape != (self.dim,):
                raise ValueError("box shape mismatch")
            if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
                raise ValueError("non-finite box")
            if np.any(lo > hi):
                raise ValueError("box lower > upper")
            object.__setattr__(self, "box", (lo, hi))
        # Internal normalized row system (box bounds appended as rows), built
        # once: solve() is called thousands of times per simulated second.
        n_user = len(rows)
        m = n_user + (2 * self.dim if self.box is not None else 0)
        G = np.zeros((m, self.dim))
        b = np.zeros(m)
        for r, (c, lb) in enumerate(rows):
            if c.shape != (self.dim,):
                raise ValueError(f"row shape {c.shape} != ({self.dim},)")
            G[r] = c
            b[r] = lb
        if self.box is not None:
            lo, hi = self.box
            idx = np.arange(self.dim)
            G[n_user + idx, idx] = 1.0
            b[n_user + idx] = lo
            G[n_user + self.dim + idx, idx] = -1.0
            b[n_user + self.dim + idx] = -hi
        if not (np.all(np.isfinite(G)) and np.all(np.isfinite(b))):
            raise ValueError("non-finite row")
        norms = np.linalg.norm(G, axis=1)
        scale = np.where(norms > _NORM_EPS, norms, 1.0)
        object.__setattr__(self, "_G", G / scale[:, None])
        object.__setattr__(self, "_b", b / scale)
        object.__setattr__(self, "_degenerate", norms <= _NORM_EPS)


@dataclass(frozen=True)
class QpSolution:
    """Outcome of solve().

    active_set indexes internal rows: the user's rows first, then box lower
    bounds (one per variable), then box upper bounds.  Pass it back as
    warm_start on the next, similarly-structured problem.  iteration_limited
    marks problems abandoned at the iteration cap (reported infeasible but
    logged distinctly from certified infeasibility).
    """

    status: str                      # "optimal" | "infeasible"
    u: np.ndarray | None
    active_set: tuple = ()
    kkt_residual: float = float("nan")
    iterations: int = 0
    iteration_limited: bool = False
    phase1_slack: float = field(default=float("nan"))


def _internal_rows(problem: QpProblem):
    """Normalized row matrix and bounds, box bounds appended as rows."""
    return problem._G, problem._b


def _feas_margin(G: np.ndarray, b: np.ndarray, u: np.ndarray) -> float:
    """Most-violated row margin (negative means infeasible) with mixed tolerance."""
    if G.shape[0] == 0:
        return 0.0
    return float(np.min(G @ u - b + FEAS_TOL * (1.0 + np.abs(b))))


def _eqp(G: np.ndarray, b: np.ndarray, u0: np.ndarray, work: list):
    """Projection of u0 onto the working-set equalities; returns (x, lambda)."""
    if not work:
        return u0.copy(), np.zeros(0)
    Gw = G[work]
    rhs = b[work] - Gw @ u0
    gram = Gw @ Gw.T
    try:
        lam = np.linalg.solve(gram, rhs)
    except np.linalg.LinAlgError:
        lam = np.linalg.lstsq(gram, rhs, rcond=None)[0]
    return u0 + Gw.T @ lam, lam


def _phase1(G: np.ndarray, b: np.ndarray, dim: int):
    """Minimum-slack LP: min s s.t. G u + s >= b, s >= 0. Returns (u, slack)."""
    m = G.shape[0]
    c = np.zeros(dim + 1)
    c[-1] = 1.0
    a_ub = np.hstack([-G, -np.ones((m, 1))])
    bounds = [(None, None)] * dim + [(0.0, None)]
    res = linprog(c, A_ub=a_ub, b_ub=-b, bounds=bounds, method="highs")
    if not res.success:  # the LP is always feasible and bounded below by 0
        raise RuntimeError(f"phase-1 LP failed: {res.message}")
    return res.x[:dim], float(res.x[-1])


def solve(problem: QpProblem, warm_start=None) -> QpSolution:
    """Solve the QP; never raises on infeasibility (reported in the status)."""
    G, b = problem._G, problem._b
    m = G.shape[0]
    u0 = problem.target

    # Rows with ~zero coefficients are vacuous or certify infeasibility outright.
    if np.any(problem._degenerate) and np.any(b[problem._degenerate] > FEAS_TOL):
        return QpSolution(
            status="infeasible", u=None,
            phase1_slack=float(np.max(b[problem._degenerate])),
        )

    # Fast path: if the box-clipped target satisfies every row it is already
    # the projection (the box projection lower-bounds any subset's), which is
    # the typical no-conflict control tick.
    if problem.box is not None:
        uc = np.clip(u0, problem.box[0], problem.box[1])
    else:
        uc = u0
    slack = G @ uc - b if m else np.zeros(0)
    if m == 0 or np.min(slack + FEAS_TOL * (1.0 + np.abs(b))) >= 0.0:
        active = []
        if problem.box is not None:
            n_user = len(problem.rows)
            lo, hi = problem.box
            for i in range(problem.dim):
                if u0[i] < lo[i]:
                    active.append(n_user + i)
                elif u0[i] > hi[i]:
                    active.append(n_user + problem.dim + i)
        primal = float(max(0.0, -np.min(slack, initial=-0.0)))
        return QpSolution(
            status="optimal", u=uc, active_set=tuple(active),
            kkt_residual=primal, iterations=0,
        )

    phase1_slack = float("nan")
    u = None
    work: list = []

    if warm_start:
        cand = [int(r) for r in warm_start if 0 <= int(r) < m]
        if cand:
            x, _ = _eqp(G, b, u0, cand)
            if _feas_margin(G, b, x) >= 0.0:
                u, work = x, list(cand)
    if u is None:
        # project onto the most violated rows before paying for the LP
        order = np.argsort(slack)
        cand = [int(r) for r in order[: problem.dim] if slack[r] < 0.0]
        if cand:
            x, _ = _eqp(G, b, u0, cand)
            if _feas_margin(G, b, x) >= 0.0:
                u, work = x, cand
    if u is None:
        x, phase1_slack = _phase1(G, b, problem.dim)
        if phase1_slack > PHASE1_TOL:
            return QpSolution(status="infeasible", u=None, phase1_slack=phase1_slack)
        u = x

    lam = np.zeros(0)
    iterations = 0
    optimal = False
    for iterations in range(1, MAX_ITER + 1):
        x, lam = _eqp(G, b, u0, work)
        d = x - u
        if np.max(np.abs(d), initial=0.0) <= 1e-11 * (1.0 + np.max(np.abs(u))):
            if lam.size == 0 or np.min(lam) >= -DUAL_TOL:
                u = x
                optimal = True
                break
            # drop the most negative multiplier; ties to the lowest row index
            worst = np.min(lam)
            drop = min(k for k in range(len(work)) if lam[k] <= worst + 1e-15)
            work.pop(drop)
            continue
        gd = G @ d
        t = 1.0
        blocker = -1
        for r in range(m):
            if r in work or gd[r] >= -_STEP_EPS:
                continue
            tr = (b[r] - G[r] @ u) / gd[r]
            if tr < 0.0:
                tr = 0.0
            if tr < t - 1e-15:
                t = tr
                blocker = r
        u = u + t * d
        if blocker >= 0:
            work.append(blocker)
        elif t >= 1.0:
            # full unblocked step: next pass runs the dual check at x
            u = x

    if not optimal:
        return QpSolution(
            status="infeasible",
            u=None,
            iterations=iterations,
            iteration_limited=True,
            phase1_slack=phase1_slack,
        )

    # KKT residual from the final working-set multipliers.
    order = np.argsort(work)
    active = tuple(work[k] for k in order)
    lam_sorted = lam[order] if lam.size else lam
    if active:
        Ga = G[list(active)]
        stationarity = float(np.max(np.abs(u - u0 - Ga.T @ lam_sorted)))
        dual = float(max(0.0, -np.min(lam_sorted)))
        comp = float(np.max(np.abs(lam_sorted * (Ga @ u - b[list(active)]))))
    else:
        stationarity = float(np.max(np.abs(u - u0), initial=0.0))
        dual = comp = 0.0
    primal = float(max(0.0, np.max(b - G @ u))) if m else 0.0
    return QpSolution(
        status="optimal",
        u=u,
        active_set=active,
        kkt_residual=max(stationarity, primal, dual, comp),
        iterations=iterations,
        phase1_slack=phase1_slack,
    )


def _kkt_residual(G, b, u0, u, active) -> float:
    act = list(active)
    if act:
        Ga = G[act]
        lam = np.linalg.lstsq(Ga.T, u - u0, rcond=None)[0]
        stationarity = float(np.max(np.abs(u - u0 - Ga.T @ lam)))
        dual = float(max(0.0, -np.min(lam)))
        comp = float(np.max(np.abs(lam * (Ga @ u - b[act]))))
    else:
        stationarity = float(np.max(np.abs(u - u0), initial=0.0))
        dual = 0.0
        comp = 0.0
    primal = 0.0
    if G.shape[0]:
        primal = float(max(0.0, np.max(b - G @ u)))
    return max(stationarity, primal, dual, comp)


def verify_kkt(problem: QpProblem, u, active_set=()) -> float:
    """Max KKT violation (stationarity, primal, dual, complementarity) at u."""
    G, b = _internal_rows(problem)
    return _kkt_residual(G, b, problem.target, np.asarray(u, dtype=float), tuple(active_set))
