"""ODE problem abstraction and the three integrators used by the experiments.

Solvers operate on plain float tuples internally (the benchmark systems have
1-3 components and the reference oracle takes ~10^6 steps, so per-step numpy
overhead would dominate).  Trajectories are returned as read-only numpy
arrays.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

State = tuple[float, ...]
Rhs = Callable[[float, State], Sequence[float]]
Jacobian = Callable[[float, State], Sequence[Sequence[float]]]

RK4_FIXED = "rk4_fixed"
RK4_ADAPTIVE = "rk4_adaptive"
TRAPEZOID_ADAPTIVE = "trapezoid_adaptive"


class NonFiniteState(ArithmeticError):
    """A state component became inf/nan (blow-up or instability)."""

    def __init__(self, t: float, message: str = ""):
        self.t = t
        super().__init__(message or f"non-finite state encountered at t={t!r}")


class NewtonDivergence(ArithmeticError):
    """Newton iteration failed to converge even at the floor step size."""


class OracleNotConverged(ArithmeticError):
    """Reference solution failed its step-halving self-consistency check."""


@dataclass(frozen=True)
class OdeProblem:
    """First-order system du/dt = f(t, u) with analytic Jacobian.

    ``rhs`` and ``jacobian`` receive the state as a tuple of floats and must
    return a sequence (tuple per component / tuple of rows).  ``rhs_dt`` is
    the explicit time derivative of the right-hand side; when present it
    enables exact chain-rule curvature evaluation along trajectories.
    """

    name: str
    dim: int
    params: dict[str, float]
    rhs: Rhs
    jacobian: Jacobian
    u0: State
    t_span: tuple[float, float]
    rhs_dt: Callable[[float, State], Sequence[float]] | None = None

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        if len(self.u0) != self.dim:
            raise ValueError(f"u0 has {len(self.u0)} components, expected {self.dim}")
        t0, t1 = self.t_span
        if not t1 > t0:
            raise ValueError(f"t_span must satisfy t_end > t_start, got {self.t_span}")
        object.__setattr__(self, "u0", tuple(float(x) for x in self.u0))

    @property
    def horizon(self) -> float:
        return self.t_span[1] - self.t_span[0]


@dataclass(frozen=True)
class Trajectory:
    """Ordered (time, state) samples plus solver bookkeeping.

    ``times`` is strictly increasing; ``states[0]`` equals the initial state
    of the generating run exactly.  Arrays are frozen after construction.
    """

    times: np.ndarray
    states: np.ndarray
    solver_id: str
    steps_taken: int
    steps_rejected: int = 0
    stagnated: bool = False
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        times = np.ascontiguousarray(self.times, dtype=float)
        states = np.ascontiguousarray(self.states, dtype=float)
        if times.ndim != 1 or states.ndim != 2 or len(times) != len(states):
            raise ValueError("times must be (n,), states (n, dim) with matching n")
        if len(times) < 1:
            raise ValueError("a trajectory needs at least the initial sample")
        times.setflags(write=False)
        states.setflags(write=False)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)

    @property
    def t_reached(self) -> float:
        return float(self.times[-1])

    @property
    def dim(self) -> int:
        return self.states.shape[1]

    def state_at(self, index: int) -> State:
        return tuple(self.states[index])


@dataclass(frozen=True)
class AdaptiveConfig:
    """Step-size controller settings shared by the adaptive solvers."""

    tol: float
    dt_init: float
    dt_min: float = 1e-12
    dt_max: float = math.inf
    max_steps: int = 100_000

    def __post_init__(self):
        if not self.tol > 0:
            raise ValueError("tol must be > 0")
        if not (0 < self.dt_min <= self.dt_init <= self.dt_max):
            raise ValueError("need 0 < dt_min <= dt_init <= dt_max")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")


# ---------------------------------------------------------------------------
# RK4 stepping kernels.  The dim-3 and dim-1 variants are unrolled because
# the Lorenz oracle takes ~10^6 steps per test session.

def _rk4_step3(f: Rhs, t: float, u: State, h: float) -> State:
    x, y, z = u
    h2 = 0.5 * h
    a1, b1, c1 = f(t, u)
    a2, b2, c2 = f(t + h2, (x + h2 * a1, y + h2 * b1, z + h2 * c1))
    a3, b3, c3 = f(t + h2, (x + h2 * a2, y + h2 * b2, z + h2 * c2))
    a4, b4, c4 = f(t + h, (x + h * a3, y + h * b3, z + h * c3))
    s = h / 6.0
    return (
        x + s * (a1 + 2.0 * (a2 + a3) + a4),
        y + s * (b1 + 2.0 * (b2 + b3) + b4),
        z + s * (c1 + 2.0 * (c2 + c3) + c4),
    )


def _rk4_step1(f: Rhs, t: float, u: State, h: float) -> State:
    x = u[0]
    h2 = 0.5 * h
    k1 = f(t, u)[0]
    k2 = f(t + h2, (x + h2 * k1,))[0]
    k3 = f(t + h2, (x + h2 * k2,))[0]
    k4 = f(t + h, (x + h * k3,))[0]
    return (x + h / 6.0 * (k1 + 2.0 * (k2 + k3) + k4),)


def _rk4_stepn(f: Rhs, t: float, u: State, h: float) -> State:
    h2 = 0.5 * h
    k1 = f(t, u)
    k2 = f(t + h2, tuple(ui + h2 * ki for ui, ki in zip(u, k1)))
    k3 = f(t + h2, tuple(ui + h2 * ki for ui, ki in zip(u, k2)))
    k4 = f(t + h, tuple(ui + h * ki for ui, ki in zip(u, k3)))
    s = h / 6.0
    return tuple(
        ui + s * (a + 2.0 * (b + c) + d)
        for ui, a, b, c, d in zip(u, k1, k2, k3, k4)
    )


def rk4_step(f: Rhs, t: float, u: State, h: float, dim: int) -> State:
    if dim == 3:
        return _rk4_step3(f, t, u, h)
    if dim == 1:
        return _rk4_step1(f, t, u, h)
    return _rk4_stepn(f, t, u, h)


def _is_bad(u: State) -> bool:
    # sum(u) is nan/inf iff some component is (or the state already overflowed)
    s = sum(u)
    return (s - s) != 0.0


def solve_rk4_fixed(problem: OdeProblem, n_steps: int) -> Trajectory:
    """Classical 4-stage Runge-Kutta with equidistant steps.

    Raises ``NonFiniteState`` as soon as a component blows up.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    t0, t1 = problem.t_span
    h = (t1 - t0) / n_steps
    dim = problem.dim
    f = problem.rhs
    step = _rk4_step3 if dim == 3 else (_rk4_step1 if dim == 1 else _rk4_stepn)

    times = t0 + h * np.arange(n_steps + 1)
    states = np.empty((n_steps + 1, dim))
    u = problem.u0
    states[0] = u
    for i in range(n_steps):
        u = step(f, t0 + i * h, u, h)
        if _is_bad(u):
            raise NonFiniteState(t0 + (i + 1) * h)
        states[i + 1] = u
    return Trajectory(times, states, RK4_FIXED, steps_taken=n_steps)


def _scaled_diff(full: State, half: State, u_start: State, floor: float) -> float:
    # max abs difference, components weighted by 1/(floor + |u|) at the step
    # START: the Robertson components span ten orders of magnitude, and
    # scaling by the pre-step state keeps a blown-up trial pair from
    # endorsing itself.
    m = 0.0
    for a, b, u in zip(full, half, u_start):
        d = abs(a - b) / (floor + abs(u))
        if d > m:
            m = d
    return m


_GROW_MAX = 4.0
_SHRINK_MAX = 0.25
_SAFETY = 0.9


def _adaptive_loop(
    problem: OdeProblem,
    cfg: AdaptiveConfig,
    attempt: Callable[[float, State, float], tuple[State, float]],
    exponent: float,
    solver_id: str,
) -> Trajectory:
    """Shared accept/reject loop: step-doubling estimate, power-law resize.

    ``attempt(t, u, h)`` returns (proposed state, scaled error estimate); an
    inf estimate marks a failed/non-finite attempt.  A step is accepted when
    est <= tol, and the step is resized by 0.9 * (tol/est)**exponent,
    clamped to [h/4, 4h].
    """
    t0, t1 = problem.t_span
    end_eps = 1e-12 * max(1.0, abs(t1))

    times = [t0]
    states = [problem.u0]
    t = t0
    u = problem.u0
    h = min(cfg.dt_init, t1 - t0)
    taken = 0
    rejected = 0
    stagnated = False

    while t < t1 - end_eps:
        if taken >= cfg.max_steps:
            stagnated = True
            break
        h = min(h, t1 - t)
        u_new, est = attempt(t, u, h)
        target = cfg.tol
        if est <= target:
            t += h
            u = u_new
            times.append(t)
            states.append(u)
            taken += 1
        else:
            rejected += 1
            if h <= cfg.dt_min * (1.0 + 1e-12):
                stagnated = True
                break
        if est > 0.0 and math.isfinite(est):
            factor = _SAFETY * (target / est) ** exponent
            factor = min(_GROW_MAX, max(_SHRINK_MAX, factor))
        elif est == 0.0:
            factor = _GROW_MAX
        else:
            factor = _SHRINK_MAX
        h = min(cfg.dt_max, max(cfg.dt_min, h * factor))

    return Trajectory(
        np.array(times),
        np.array(states),
        solver_id,
        steps_taken=taken,
        steps_rejected=rejected,
        stagnated=stagnated,
    )


_STAGE_BLOWUP = 10.0


def _rk4_stage_spread(f: Rhs, t: float, u: State, h: float) -> tuple[State, float, float]:
    """One RK4 step plus the first-stage and max-over-stages derivative
    magnitudes (the spread flags steps taken beyond the stability boundary)."""
    h2 = 0.5 * h
    k1 = f(t, u)
    k2 = f(t + h2, tuple(ui + h2 * ki for ui, ki in zip(u, k1)))
    k3 = f(t + h2, tuple(ui + h2 * ki for ui, ki in zip(u, k2)))
    k4 = f(t + h, tuple(ui + h * ki for ui, ki in zip(u, k3)))
    s = h / 6.0
    out = tuple(
        ui + s * (a + 2.0 * (b + c) + d)
        for ui, a, b, c, d in zip(u, k1, k2, k3, k4)
    )
    m0 = max(abs(v) for v in k1)
    m = m0
    for k in (k2, k3, k4):
        mk = max(abs(v) for v in k)
        if mk > m:
            m = mk
    return out, m0, m


def solve_rk4_adaptive(problem: OdeProblem, cfg: AdaptiveConfig) -> Trajectory:
    """RK4 with step-doubling error control.

    One full step is compared against two half steps; the scaled difference
    /15 estimates the local error of the half-step result, which is the one
    propagated.  The error norm is relative per component (scale
    1e-6 + |u_i|): beyond the stability boundary a trial can move a small
    component (Robertson's y) across zero by an amount that is far below any
    absolute tolerance yet lethal, because the negative-y branch has a
    finite-time singularity.  Relative control rejects such steps and keeps
    the solver marching at the stability limit, which is the documented
    Robertson behavior.  A trial whose internal stage derivatives exceed the
    step-start derivative scale by an order of magnitude is rejected
    outright as well.  Hitting dt_min or the step budget before t_end is not
    an error: the partial trajectory is returned with ``stagnated=True``
    (the expected outcome on Robertson).
    """
    f = problem.rhs
    dim = problem.dim
    step = _rk4_step3 if dim == 3 else (_rk4_step1 if dim == 1 else _rk4_stepn)

    def attempt(t: float, u: State, h: float) -> tuple[State, float]:
        full, m0, mstage = _rk4_stage_spread(f, t, u, h)
        h2 = 0.5 * h
        half = step(f, t + h2, step(f, t, u, h2), h2)
        if _is_bad(half) or _is_bad(full):
            return u, math.inf
        if not mstage <= _STAGE_BLOWUP * m0 + 1.0:
            return u, math.inf
        return half, _scaled_diff(full, half, u, floor=1e-6) / 15.0

    return _adaptive_loop(problem, cfg, attempt, exponent=0.2,
                          solver_id=RK4_ADAPTIVE)


# ---------------------------------------------------------------------------
# Implicit trapezoid with Newton iteration.

def gauss_solve(a: list[list[float]], b: list[float]) -> list[float] | None:
    """Solve a small dense system by Gaussian elimination with partial
    pivoting.  Returns None on a (numerically) singular matrix."""
    n = len(b)
    m = [row[:] + [b[i]] for i, row in enumerate(a)]
    for col in range(n):
        piv = max(range(col, n), key=lambda r: abs(m[r][col]))
        if abs(m[piv][col]) < 1e-300:
            return None
        if piv != col:
            m[col], m[piv] = m[piv], m[col]
        inv = 1.0 / m[col][col]
        for r in range(col + 1, n):
            fac = m[r][col] * inv
            if fac != 0.0:
                for c in range(col, n + 1):
                    m[r][c] -= fac * m[col][c]
    x = [0.0] * n
    for r in range(n - 1, -1, -1):
        s = m[r][n] - sum(m[r][c] * x[c] for c in range(r + 1, n))
        x[r] = s / m[r][r]
    return x


_NEWTON_MAX_ITER = 25


def _trapezoid_newton(
    problem: OdeProblem, t: float, u: State, h: float, res_tol: float
) -> State | None:
    """One implicit trapezoid step solved by Newton iteration.

    Converges the scaled residual well below ``res_tol`` when it can (the
    extra iterations are nearly free at dim <= 3 and keep linear invariants
    such as the Robertson mass balance at machine accuracy).  Returns None on
    divergence so the caller can reject and halve the step.
    """
    f = problem.rhs
    jac = problem.jacobian
    dim = problem.dim
    t1 = t + h
    h2 = 0.5 * h
    f0 = f(t, u)
    v = u
    best_res = math.inf
    res = math.inf
    for _ in range(_NEWTON_MAX_ITER):
        fv = f(t1, v)
        g = [v[i] - u[i] - h2 * (f0[i] + fv[i]) for i in range(dim)]
        res = max(abs(g[i]) / (1.0 + abs(v[i])) for i in range(dim))
        if not math.isfinite(res):
            return None
        if res <= 1e-6 * res_tol:
            return v
        if res > 4.0 * best_res:
            return None
        best_res = min(best_res, res)
        jv = jac(t1, v)
        a = [[(1.0 if i == j else 0.0) - h2 * jv[i][j] for j in range(dim)] for i in range(dim)]
        delta = gauss_solve(a, [-gi for gi in g])
        if delta is None:
            return None
        v = tuple(v[i] + delta[i] for i in range(dim))
    return v if res <= res_tol else None


def solve_trapezoid_adaptive(problem: OdeProblem, cfg: AdaptiveConfig) -> Trajectory:
    """A-stable implicit trapezoid, step-doubling estimate, adaptive steps.

    The error norm here is relative per component (scale 1e-6 + |u_i|): with
    the additive (1 + |u|) scale a tol = 1e-3 run takes late Robertson steps
    whose absolute error rivals the small x-component itself, walks x across
    zero, and the off-manifold branch then runs away.  Relative control
    keeps the per-step damage proportional to each component.

    Newton residual per step is kept below tol/10 (usually far below, which
    preserves linear invariants such as the Robertson mass balance at
    machine level).  A diverging Newton iteration rejects the step;
    ``NewtonDivergence`` is raised only if that happens at dt_min.
    Setting dt_min == dt_init == dt_max forces fixed-step trapezoid.
    """
    res_tol = cfg.tol / 10.0

    def attempt(t: float, u: State, h: float) -> tuple[State, float]:
        full = _trapezoid_newton(problem, t, u, h, res_tol)
        if full is None:
            if h <= cfg.dt_min * (1.0 + 1e-12):
                raise NewtonDivergence(f"Newton diverged at t={t!r} with dt at dt_min")
            return u, math.inf
        h2 = 0.5 * h
        mid = _trapezoid_newton(problem, t, u, h2, res_tol)
        half = None if mid is None else _trapezoid_newton(problem, t + h2, mid, h2, res_tol)
        if half is None or _is_bad(half):
            if h <= cfg.dt_min * (1.0 + 1e-12):
                raise NewtonDivergence(f"Newton diverged at t={t!r} with dt at dt_min")
            return u, math.inf
        return half, _scaled_diff(full, half, u, floor=1e-6) / 3.0

    return _adaptive_loop(problem, cfg, attempt, exponent=1.0 / 3.0,
                          solver_id=TRAPEZOID_ADAPTIVE)


ORACLE_CHECK_TOL = 1e-8


def reference_solution(problem: OdeProblem, n_steps: int) -> Trajectory:
    """Fine-step RK4 oracle with a built-in self-consistency gate.

    Integrates at ``n_steps`` and at ``n_steps // 2`` and compares the two on
    the shared coarse grid: if the step-halving from n/2 to n still moves any
    state component by >= 1e-8, the oracle is not trustworthy at this
    resolution and ``OracleNotConverged`` is raised.  ``n_steps`` must be
    even and should be at least 16x the base resolution of the experiment
    it serves.
    """
    if n_steps < 2 or n_steps % 2:
        raise ValueError("n_steps must be even and >= 2")
    fine = solve_rk4_fixed(problem, n_steps)
    coarse = solve_rk4_fixed(problem, n_steps // 2)
    delta = float(np.max(np.abs(fine.states[::2] - coarse.states)))
    if not delta < ORACLE_CHECK_TOL:
        raise OracleNotConverged(
            f"oracle self-consistency check failed for {problem.name}: "
            f"halving the step still moves the solution by {delta:.3e} "
            f"(limit {ORACLE_CHECK_TOL:.1e}); increase the refinement"
        )
    meta = dict(fine.meta)
    meta["oracle_check_delta"] = delta
    meta["oracle_n_steps"] = n_steps
    return Trajectory(
        fine.times, fine.states, fine.solver_id, fine.steps_taken, meta=meta
    )


def check_jacobian(problem: OdeProblem, states: Sequence[State],
                   times: Sequence[float] | None = None, rtol: float = 1e-5) -> float:
    """Largest relative mismatch between the analytic Jacobian and central
    finite differences of the rhs over the given states.  Raises if it
    exceeds ``rtol``."""
    worst = 0.0
    for k, u in enumerate(states):
        t = 0.0 if times is None else times[k]
        j_analytic = problem.jacobian(t, tuple(u))
        scale = max(1.0, max(abs(j_analytic[i][j])
                             for i in range(problem.dim) for j in range(problem.dim)))
        for j in range(problem.dim):
            hj = 1e-7 * (1.0 + abs(u[j]))
            up = tuple(x + (hj if i == j else 0.0) for i, x in enumerate(u))
            dn = tuple(x - (hj if i == j else 0.0) for i, x in enumerate(u))
            fp = problem.rhs(t, up)
            fm = problem.rhs(t, dn)
            for i in range(problem.dim):
                fd = (fp[i] - fm[i]) / (2.0 * hj)
                err = abs(fd - j_analytic[i][j]) / scale
                worst = max(worst, err)
    if worst > rtol:
        raise AssertionError(
            f"Jacobian of {problem.name} deviates from finite differences by "
            f"{worst:.3e} (relative), above {rtol:.1e}"
        )
    return worst
