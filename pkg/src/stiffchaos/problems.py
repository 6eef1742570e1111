"""The four benchmark systems, with analytic Jacobians and variational systems.

* stiff-linear : du/dt = -a u + a t + a + 1, exact solution 1 + t (+ transient)
* flame        : du/dt = u^2 - u^3, explosive combustion, stiff past t = 1/d
* robertson    : autocatalytic reaction kinetics, the classic stiff 3-system
* lorenz84     : Lorenz's 1984 Hadley-circulation model, chaotic 3-system
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .diagnostics import LleTrace, local_eigenvalues
from .ode import OdeProblem, State, Trajectory


@dataclass(frozen=True)
class BenchmarkSpec:
    """A benchmark problem plus its variational Jacobian and exact solution.

    For these autonomous/linear first-order systems the variational Jacobian
    (of the perturbation system d(du)/dt = J du) coincides with the rhs
    Jacobian; it is stored separately because diagnostics consume it on its
    own.  ``exact`` (t -> state tuple) is present where a closed form exists.
    """

    problem: OdeProblem
    variational_jacobian: Callable[[float, State], Sequence[Sequence[float]]]
    exact: Callable[[float], State] | None
    default_eps: float


def stiff_linear(a: float, u0: float = 1.0,
                 t_span: tuple[float, float] = (0.0, 1.0)) -> BenchmarkSpec:
    """du/dt = -a*u + a*t + a + 1, u(0) = u0.

    General solution 1 + t + c*exp(-a t) with c = u0 - 1; asymptotically
    stable for moderate a > 0 and stiff for a >> 1.  The perturbation system
    is d(du)/dt = -a du.
    """
    if not a > 0:
        raise ValueError("a must be > 0")
    a = float(a)
    c = float(u0) - 1.0

    def rhs(t: float, u: State) -> State:
        return (-a * u[0] + a * t + a + 1.0,)

    def jac(t: float, u: State):
        return ((-a,),)

    def rhs_dt(t: float, u: State) -> State:
        return (a,)

    def exact(t: float) -> State:
        return (1.0 + t + c * math.exp(-a * t),)

    problem = OdeProblem(
        name="stiff-linear", dim=1, params={"a": a}, rhs=rhs, jacobian=jac,
        u0=(float(u0),), t_span=(float(t_span[0]), float(t_span[1])), rhs_dt=rhs_dt,
    )
    return BenchmarkSpec(problem, jac, exact, default_eps=1e-3)


def flame(d: float, t_span: tuple[float, float] | None = None) -> BenchmarkSpec:
    """du/dt = u^2 - u^3, u(0) = d on [0, 2/d]: flame propagation.

    Stiff for t > 1/d when d is small (the solution parks at the u = 1 fixed
    point where perturbations decay like exp(-(t - t0))).  The exact solution
    is recovered from the implicit relation

        1/u + ln((1-u)/u) = 1/d + ln((1-d)/d) - t

    by bisection on u in (0, 1); the left side is strictly decreasing.
    """
    if not 0.0 < d < 1.0:
        raise ValueError("d must lie in (0, 1)")
    d = float(d)
    span = (0.0, 2.0 / d) if t_span is None else (float(t_span[0]), float(t_span[1]))

    def rhs(t: float, u: State) -> State:
        x = u[0]
        return (x * x * (1.0 - x),)

    def jac(t: float, u: State):
        x = u[0]
        return ((2.0 * x - 3.0 * x * x,),)

    def rhs_dt(t: float, u: State) -> State:
        return (0.0,)

    c0 = 1.0 / d + math.log((1.0 - d) / d)

    def exact(t: float) -> State:
        target = c0 - t
        lo, hi = 1e-300, 1.0 - 1e-16
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if 1.0 / mid + math.log((1.0 - mid) / mid) > target:
                lo = mid  # value too large -> u is larger
            else:
                hi = mid
            if hi - lo < 1e-12 * max(1.0, lo):
                break
        return (0.5 * (lo + hi),)

    problem = OdeProblem(
        name="flame", dim=1, params={"d": d}, rhs=rhs, jacobian=jac,
        u0=(d,), t_span=span, rhs_dt=rhs_dt,
    )
    return BenchmarkSpec(problem, jac, exact, default_eps=1e-3)


def robertson(a: float = 0.04, b: float = 1e4, c: float = 3e7) -> BenchmarkSpec:
    """Robertson's autocatalytic reaction system on [1e-6, 1e6].

        dx/dt = -a x + b y z
        dy/dt =  a x - b y z - c y^2
        dz/dt =  c y^2

    The rhs components sum to zero, so x + y + z is conserved (= 1).
    """
    if not (a > 0 and b > 0 and c > 0):
        raise ValueError("a, b, c must be > 0")
    a, b, c = float(a), float(b), float(c)

    def rhs(t: float, u: State) -> State:
        x, y, z = u
        byz = b * y * z
        cy2 = c * y * y
        return (-a * x + byz, a * x - byz - cy2, cy2)

    def jac(t: float, u: State):
        x, y, z = u
        return (
            (-a, b * z, b * y),
            (a, -b * z - 2.0 * c * y, -b * y),
            (0.0, 2.0 * c * y, 0.0),
        )

    def rhs_dt(t: float, u: State) -> State:
        return (0.0, 0.0, 0.0)

    problem = OdeProblem(
        name="robertson", dim=3, params={"a": a, "b": b, "c": c}, rhs=rhs,
        jacobian=jac, u0=(1.0, 0.0, 0.0), t_span=(1e-6, 1e6), rhs_dt=rhs_dt,
    )
    return BenchmarkSpec(problem, jac, None, default_eps=1e-3)


def lorenz84(a: float = 0.25, b: float = 4.0, f: float = 8.0, g: float = 1.0,
             u0: State = (0.96, -1.1, 0.5),
             t_span: tuple[float, float] = (0.0, 30.0)) -> BenchmarkSpec:
    """Lorenz's 1984 Hadley-circulation model.

        dx/dt = -y^2 - z^2 - a x + a F
        dy/dt =  x y - b x z - y + G
        dz/dt =  b x y + x z - z

    Chaotic (not stiff) at the default parameters; the forcing terms F and G
    drop out of the Jacobian, so they do not affect the local Lyapunov
    exponents on a given trajectory.
    """
    a, b, f, g = float(a), float(b), float(f), float(g)

    def rhs(t: float, u: State) -> State:
        x, y, z = u
        return (
            -y * y - z * z - a * x + a * f,
            x * y - b * x * z - y + g,
            b * x * y + x * z - z,
        )

    def jac(t: float, u: State):
        x, y, z = u
        return (
            (-a, -2.0 * y, -2.0 * z),
            (y - b * z, x - 1.0, -b * x),
            (b * y + z, b * x, x - 1.0),
        )

    def rhs_dt(t: float, u: State) -> State:
        return (0.0, 0.0, 0.0)

    problem = OdeProblem(
        name="lorenz84", dim=3, params={"a": a, "b": b, "F": f, "G": g},
        rhs=rhs, jacobian=jac, u0=tuple(float(x) for x in u0),
        t_span=(float(t_span[0]), float(t_span[1])), rhs_dt=rhs_dt,
    )
    return BenchmarkSpec(problem, jac, None, default_eps=1e-3)


PROBLEM_FACTORIES: dict[str, Callable[..., BenchmarkSpec]] = {
    "stiff-linear": stiff_linear,
    "flame": flame,
    "robertson": robertson,
    "lorenz84": lorenz84,
}


def make_problem(name: str, params: dict | None = None,
                 u0: Sequence[float] | None = None,
                 t_span: Sequence[float] | None = None) -> BenchmarkSpec:
    """Instantiate a registered benchmark with optional overrides."""
    if name not in PROBLEM_FACTORIES:
        raise KeyError(f"unknown problem {name!r}; pick one of {sorted(PROBLEM_FACTORIES)}")
    params = dict(params or {})
    kwargs = {}
    if name == "stiff-linear":
        kwargs["a"] = params.pop("a", 300.0)
        if u0 is not None:
            kwargs["u0"] = float(u0[0])
        if t_span is not None:
            kwargs["t_span"] = (float(t_span[0]), float(t_span[1]))
    elif name == "flame":
        kwargs["d"] = params.pop("d", 0.01)
        if t_span is not None:
            kwargs["t_span"] = (float(t_span[0]), float(t_span[1]))
        if u0 is not None:
            raise ValueError("flame starts at u0 = d; override d instead")
    elif name == "robertson":
        for key in ("a", "b", "c"):
            if key in params:
                kwargs[key] = params.pop(key)
        if params:
            raise ValueError(f"unknown parameters for {name}: {sorted(params)}")
        if u0 is not None or t_span is not None:
            spec = robertson(**kwargs)
            prob = spec.problem
            new = OdeProblem(
                name=prob.name, dim=prob.dim, params=prob.params, rhs=prob.rhs,
                jacobian=prob.jacobian,
                u0=tuple(u0) if u0 is not None else prob.u0,
                t_span=tuple(t_span) if t_span is not None else prob.t_span,  # type: ignore[arg-type]
                rhs_dt=prob.rhs_dt,
            )
            return BenchmarkSpec(new, spec.variational_jacobian, spec.exact, spec.default_eps)
    elif name == "lorenz84":
        for key, kw in (("a", "a"), ("b", "b"), ("F", "f"), ("G", "g")):
            if key in params:
                kwargs[kw] = params.pop(key)
        if u0 is not None:
            kwargs["u0"] = tuple(float(x) for x in u0)
        if t_span is not None:
            kwargs["t_span"] = (float(t_span[0]), float(t_span[1]))
    if params:
        raise ValueError(f"unknown parameters for {name}: {sorted(params)}")
    return PROBLEM_FACTORIES[name](**kwargs)


def nearest_sample_indices(times: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Index of the nearest accepted sample for each target time."""
    idx = np.searchsorted(times, targets)
    idx = np.clip(idx, 1, len(times) - 1)
    left_closer = (targets - times[idx - 1]) <= (times[idx] - targets)
    return np.where(left_closer, idx - 1, idx)


def lle_scan(spec: BenchmarkSpec, traj: Trajectory, n_samples: int,
             window: tuple[float, float] | None = None) -> LleTrace:
    """Local Lyapunov exponents at equidistant scan times.

    The variational Jacobian is evaluated on the state of the nearest
    accepted trajectory sample (no interpolation; at oracle resolution the
    nearest-sample error is negligible for a 400-point scan).
    """
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    t0 = float(traj.times[0]) if window is None else float(window[0])
    t1 = float(traj.times[-1]) if window is None else float(window[1])
    if t0 < traj.times[0] - 1e-12 or t1 > traj.times[-1] + 1e-12:
        raise ValueError("scan window not covered by the trajectory")
    scan_times = np.linspace(t0, t1, n_samples)
    idx = nearest_sample_indices(traj.times, scan_times)
    eigens = []
    gmax = np.empty(n_samples)
    gmin = np.empty(n_samples)
    vjac = spec.variational_jacobian
    for k in range(n_samples):
        i = int(idx[k])
        eig = local_eigenvalues(vjac(float(traj.times[i]), tuple(traj.states[i])),
                                t=float(traj.times[i]))
        eigens.append(eig)
        gmax[k] = eig.gamma_max
        gmin[k] = eig.gamma_min
    return LleTrace(times=scan_times, eigens=tuple(eigens), gamma_max=gmax, gamma_min=gmin)
