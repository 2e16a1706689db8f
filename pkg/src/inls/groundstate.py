"""Positive radial ground state Q_omega of  -Lap Q + omega Q = |x|^b Q^p.

The centre value Q(0) is found by bisection between shots that cross zero and
shots that turn back upward.  The shot is interpolated onto the grid and then
polished by Newton's method on the discrete equation, so the stored profile is
an exact (to round-off) critical point of the discrete action.  A second RK4
trajectory on a much finer mesh is kept alongside; its Simpson integrals are
accurate to ~1e-12 and back the identity checks that are tighter than the
O(h^2) grid error allows.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np
from scipy.integrate import simpson
from scipy.interpolate import CubicHermiteSpline
from scipy.linalg import solve_banded

from . import _shooting
from . import functionals as F
from .grid import RadialField, RadialGrid
from .model import ModelParams, ParameterError, require_admissible

S_MIN, S_MAX = 1e-6, 1e6
BISECT_RTOL = 1e-14
BISECT_MAX_ITER = 200
FINE_STEP = 1e-4
RESIDUAL_TOL = 1e-5  # profiles sampled from the continuum carry O(h^2) residuals
POHOZAEV_TOL = 1e-6
NEHARI_TOL = 1e-8
RESOLUTION_LIMIT = 0.1  # sqrt(omega) * h
DEFAULT_M = 32768  # h ~ 3.7e-4 at R = 12 keeps the O(h^2) identity defects below 1e-6


class SolverError(RuntimeError):
    pass


class NonexistenceError(ParameterError):
    """omega <= 0: the stationary equation has no nontrivial solution."""


class BracketingError(SolverError):
    pass


class ConvergenceError(SolverError):
    pass


class ResolutionError(ParameterError):
    """Target grid too coarse for the compressed profile."""


# ----------------------------------------------------------------------------- shooting
def _shot_length(omega: float, R: float) -> float:
    # far enough that every non-critical shot has decided
    return max(R, 40.0 / math.sqrt(omega))


def bracket_centre_value(params: ModelParams, h: float, r_max: float, s0: float = 1.0):
    """Return (s_lo, s_hi): a TURNED shot and a CROSSED shot."""
    N, b, p, om = params.N, params.bf, params.pf, params.require_omega()
    n = int(math.ceil(r_max / h))

    def verdict(s):
        return _shooting.shoot(s, h, n, N, b, p, om)[0]

    s = min(max(s0, S_MIN), S_MAX)
    if verdict(s) == _shooting.CROSSED:
        hi = s
        lo = s / 2.0
        while verdict(lo) == _shooting.CROSSED:
            hi = lo
            lo /= 2.0
            if lo < S_MIN:
                raise BracketingError(f"no turning shot found down to s={S_MIN}")
    else:
        lo = s
        hi = 2.0 * s
        while verdict(hi) != _shooting.CROSSED:
            lo = hi
            hi *= 2.0
            if hi > S_MAX:
                raise BracketingError(f"no crossing shot found up to s={S_MAX}")
    return lo, hi


def centre_value(params: ModelParams, h: float, r_max: float, s0: float = 1.0,
                 bracket: Optional[tuple] = None):
    N, b, p, om = params.N, params.bf, params.pf, params.require_omega()
    n = int(math.ceil(r_max / h))
    lo, hi = bracket if bracket is not None else bracket_centre_value(params, h, r_max, s0)
    lo, hi, _ = _shooting.bisect(lo, hi, h, n, N, b, p, om, BISECT_RTOL, BISECT_MAX_ITER)
    return lo, hi


def _trusted_trajectory(params: ModelParams, s: float, h: float, r_max: float):
    """Shot at s truncated at its last trustworthy point (the post-peak minimum)."""
    N, b, p, om = params.N, params.bf, params.pf, params.require_omega()
    n = int(math.ceil(r_max / h))
    _, k = _shooting.shoot(s, h, n, N, b, p, om)
    q, dq = _shooting.trajectory(s, h, k, N, b, p, om)
    peak = int(np.argmax(q))
    j = peak + int(np.argmin(q[peak:]))
    j = max(j, 2)
    r = np.arange(j + 1) * h
    return r, q[: j + 1].copy(), dq[: j + 1].copy()


@dataclass(frozen=True, eq=False)
class FineProfile:
    """Q and Q' on r_k = k h up to the cut-off radius; zero beyond."""

    params: ModelParams
    s: float
    h: float
    r: np.ndarray = field(repr=False)
    q: np.ndarray = field(repr=False)
    dq: np.ndarray = field(repr=False)

    @property
    def r_cut(self) -> float:
        return float(self.r[-1])

    @cached_property
    def _spline(self):
        return CubicHermiteSpline(self.r, self.q, self.dq, extrapolate=False)

    def __call__(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        out = self._spline(np.minimum(r, self.r_cut))
        return np.where(r <= self.r_cut, out, 0.0)

    def derivative(self, r) -> np.ndarray:
        r = np.asarray(r, dtype=float)
        out = self._spline(np.minimum(r, self.r_cut), 1)
        return np.where(r <= self.r_cut, out, 0.0)

    @cached_property
    def integrals(self) -> dict:
        """kinetic, mass, potential, variance by Simpson's rule on the fine mesh."""
        return self.dilated_integrals()

    def dilated_integrals(self, amplitude: float = 1.0, mu: float = 1.0) -> dict:
        """Direct Simpson quadrature of amplitude * Q(mu r) on the dilated fine mesh."""
        from .grid import sphere_area

        N, b, p = self.params.N, self.params.bf, self.params.pf
        r = self.r / mu
        q = amplitude * self.q
        dq = amplitude * mu * self.dq
        rn = r ** (N - 1)
        area = sphere_area(N)
        return {
            "kinetic": area * simpson(dq * dq * rn, x=r),
            "mass": area * simpson(q * q * rn, x=r),
            "potential": area * simpson(r**b * rn * np.abs(q) ** (p + 1.0), x=r),
            "variance": area * simpson(r * r * rn * q * q, x=r),
        }

    def report(self, params: Optional[ModelParams] = None) -> F.FunctionalReport:
        d = self.integrals
        return F.from_integrals(params or self.params, d["mass"], d["kinetic"], d["potential"], d["variance"])

    def sample(self, grid: RadialGrid, amplitude: float = 1.0, mu: float = 1.0) -> RadialField:
        """amplitude * Q(mu r) on the nodes of ``grid``."""
        return RadialField(grid, amplitude * self(mu * np.asarray(grid.nodes)))


def fine_profile(params: ModelParams, s_guess: float, h: float = FINE_STEP,
                 r_max: Optional[float] = None) -> FineProfile:
    om = params.require_omega()
    h = h / max(1.0, math.sqrt(om))
    r_max = r_max or _shot_length(om, 0.0)
    width = 1e-9 * s_guess
    lo, hi = s_guess - width, s_guess + width
    N, b, p = params.N, params.bf, params.pf
    n = int(math.ceil(r_max / h))
    # widen until the fine integrator agrees on the bracket
    for _ in range(40):
        vlo = _shooting.shoot(lo, h, n, N, b, p, om)[0]
        vhi = _shooting.shoot(hi, h, n, N, b, p, om)[0]
        if vlo != _shooting.CROSSED and vhi == _shooting.CROSSED:
            break
        width *= 4.0
        lo, hi = s_guess - width, s_guess + width
    else:
        raise BracketingError("fine shooting bracket not found near the coarse centre value")
    lo, hi = centre_value(params, h, r_max, bracket=(lo, hi))
    r, q, dq = _trusted_trajectory(params, lo, h, r_max)
    return FineProfile(params, lo, h, r, q, dq)


# ----------------------------------------------------------------------------- discrete problem
def stationary_residual(u: np.ndarray, grid: RadialGrid, params: ModelParams) -> np.ndarray:
    """-Lap u + omega u - |x|^b |u|^{p-1} u with the cell-averaged weight."""
    rho = grid.cell_average_power(params.bf)
    return -grid.laplacian(u) + params.require_omega() * u - rho * np.abs(u) ** (params.pf - 1.0) * u


def weighted_residual(u: np.ndarray, grid: RadialGrid, params: ModelParams) -> float:
    """Sup of the stationary residual over r <= R/2, relative to omega max|u|."""
    res = stationary_residual(u, grid, params)
    inner = np.asarray(grid.nodes) <= 0.5 * grid.R
    scale = params.require_omega() * float(np.max(np.abs(u)))
    return float(np.max(np.abs(res[inner]))) / scale if scale > 0 else math.inf


def newton_polish(u: np.ndarray, grid: RadialGrid, params: ModelParams, max_iter: int = 50) -> np.ndarray:
    """Newton iteration on the discrete equation; raises ConvergenceError if it stalls."""
    om, p = params.require_omega(), params.pf
    rho = grid.cell_average_power(params.bf)
    lap = grid.laplacian_banded()
    u = np.array(u, dtype=float)
    for _ in range(max_iter):
        F_ = stationary_residual(u, grid, params)
        J = -lap
        J[1] += om - p * rho * np.abs(u) ** (p - 1.0)
        du = solve_banded((1, 1), J, F_)
        u -= du
        if np.max(np.abs(du)) <= 1e-13 * np.max(np.abs(u)):
            return u
    raise ConvergenceError(f"Newton refinement did not converge in {max_iter} iterations")


# ----------------------------------------------------------------------------- diagnostics
def pohozaev_from_integrals(params: ModelParams, k: float, m: float, pot: float) -> tuple:
    """Residuals of the four stationary identities, each normalised by its largest term.

    (1) (2/N - 1) K = omega M - 2(N+b)/(N(p+1)) Pot
    (2) K + omega M = Pot
    (3) K = (N(p-1) - 2b)/(2(p+1)) Pot
    (4) (N + 2 + 2b - (N-2)p) K = omega (N(p-1) - 2b) M
    """
    N, b, p, om = params.N, params.bf, params.pf, params.require_omega()
    identities = [
        ((2.0 / N - 1.0) * k, [om * m, -2.0 * (N + b) / (N * (p + 1.0)) * pot]),
        (k + om * m, [pot]),
        (k, [(N * (p - 1.0) - 2.0 * b) / (2.0 * (p + 1.0)) * pot]),
        ((N + 2.0 + 2.0 * b - (N - 2.0) * p) * k, [om * (N * (p - 1.0) - 2.0 * b) * m]),
    ]
    out = []
    for lhs, rhs_terms in identities:
        rhs = sum(rhs_terms)
        scale = max([abs(lhs)] + [abs(t) for t in rhs_terms] + [1e-30])
        out.append(abs(lhs - rhs) / scale)
    return tuple(out)


@dataclass(frozen=True, eq=False)
class GroundState:
    params: ModelParams
    profile: RadialField
    residual: float
    pohozaev: tuple
    action_value: float
    shooting_value: float
    fine: Optional[FineProfile] = field(default=None, repr=False)
    #: (amplitude, mu) such that profile = amplitude * fine(mu r); (1, 1) when solved directly
    fine_map: tuple = (1.0, 1.0)

    @property
    def omega(self) -> float:
        return self.params.require_omega()

    @property
    def grid(self) -> RadialGrid:
        return self.profile.grid

    @cached_property
    def report(self) -> F.FunctionalReport:
        return F.report(self.profile, self.params)

    @property
    def nehari_relative(self) -> float:
        r = self.report
        return abs(r.nehari) / max(r.kinetic + self.omega * r.mass, 1e-300)

    @property
    def boundary_value(self) -> float:
        return self.profile.boundary_value

    def fine_report(self) -> F.FunctionalReport:
        """Functionals from the fine trajectory, mapped through the stored dilation."""
        if self.fine is None:
            raise SolverError("ground state has no fine profile attached")
        amp, mu = self.fine_map
        d = self.fine.integrals
        N, b, p = self.params.N, self.params.bf, self.params.pf
        m = amp**2 * mu ** (-N) * d["mass"]
        k = amp**2 * mu ** (2 - N) * d["kinetic"]
        pot = amp ** (p + 1) * mu ** (-N - b) * d["potential"]
        var = amp**2 * mu ** (-N - 2) * d["variance"]
        return F.from_integrals(self.params, m, k, pot, var)

    def evaluate(self, r) -> np.ndarray:
        """Continuum profile at arbitrary radii (from the fine trajectory)."""
        amp, mu = self.fine_map
        return amp * self.fine(mu * np.asarray(r, dtype=float))

    def check(self, nehari: bool = True) -> None:
        """Raise ConvergenceError if any diagnostic exceeds its threshold."""
        if not self.residual <= RESIDUAL_TOL:
            raise ConvergenceError(f"stationary residual {self.residual:.3e} > {RESIDUAL_TOL}")
        worst = max(self.pohozaev)
        if not worst <= POHOZAEV_TOL:
            raise ConvergenceError(f"Pohozaev residual {worst:.3e} > {POHOZAEV_TOL}")
        if nehari and not self.nehari_relative <= NEHARI_TOL:
            raise ConvergenceError(f"Nehari defect {self.nehari_relative:.3e} > {NEHARI_TOL}")

    def diagnostics(self) -> dict:
        return {
            "params": self.params.as_dict(),
            "grid": {"N": self.grid.N, "R": self.grid.R, "M": self.grid.M},
            "omega": self.omega,
            "residual": self.residual,
            "pohozaev": list(self.pohozaev),
            "action_value": self.action_value,
            "shooting_value": self.shooting_value,
            "nehari_relative": self.nehari_relative,
            "boundary_value": self.boundary_value,
            "mass": self.report.mass,
            "kinetic": self.report.kinetic,
            "potential": self.report.potential,
        }

    def diagnostics_json(self) -> str:
        def fmt(x):
            if isinstance(x, float):
                return float(f"{x:.17g}")
            if isinstance(x, dict):
                return {k: fmt(v) for k, v in x.items()}
            if isinstance(x, list):
                return [fmt(v) for v in x]
            return x

        return json.dumps(fmt(self.diagnostics()), indent=2)


def _assemble(params: ModelParams, profile: RadialField, s: float, fine, fine_map) -> GroundState:
    rep = F.report(profile, params)
    return GroundState(
        params=params,
        profile=profile,
        residual=weighted_residual(np.asarray(profile.values).real, profile.grid, params),
        pohozaev=pohozaev_from_integrals(params, rep.kinetic, rep.mass, rep.potential),
        action_value=rep.action,
        shooting_value=s,
        fine=fine,
        fine_map=fine_map,
    )


def solve_profile_shooting(params: ModelParams, grid: RadialGrid, *, with_fine: bool = True,
                           check: bool = True) -> GroundState:
    """Ground state on ``grid`` at frequency params.omega."""
    om = params.require_omega()
    if om <= 0:
        raise NonexistenceError(f"no nontrivial solution for omega = {om} <= 0")
    require_admissible(params)
    if grid.N != params.N:
        raise ParameterError(f"grid dimension {grid.N} != N = {params.N}")
    h_ode = min(1e-3, grid.h / 4.0) / max(1.0, math.sqrt(om))
    r_max = _shot_length(om, grid.R)
    # Q(0) scales like omega^{(2+b)/(2(p-1))}
    s0 = om ** ((2.0 + params.bf) / (2.0 * (params.pf - 1.0)))
    lo, hi = centre_value(params, h_ode, r_max, s0=s0)
    r, q, dq = _trusted_trajectory(params, lo, h_ode, r_max)
    coarse = FineProfile(params, lo, h_ode, r, q, dq)
    u0 = coarse(grid.nodes)
    u = newton_polish(u0, grid, params)
    if not np.all(u > 0):
        raise ConvergenceError("polished profile is not positive")
    fine = fine_profile(params, lo) if with_fine else None
    gs = _assemble(params, RadialField(grid, u), lo, fine, (1.0, 1.0))
    if check:
        gs.check()
    return gs


def amplitude_exponent(params: ModelParams) -> float:
    """Q_omega(x) = omega^e Q_1(sqrt(omega) x) with e = (2+b)/(2(p-1))."""
    return (2.0 + params.bf) / (2.0 * (params.pf - 1.0))


def rescale_omega(Q1: GroundState, omega: float, grid: Optional[RadialGrid] = None) -> GroundState:
    """Q_omega from Q_1 by the exact dilation.

    Without ``grid`` the nodal values are scaled onto the dilated grid
    (R / sqrt(omega), same M), where every discrete functional and the discrete
    equation scale exactly.  With ``grid`` the continuum profile is sampled on
    the target nodes and the diagnostics are recomputed there.
    """
    if omega <= 0:
        raise NonexistenceError(f"no nontrivial solution for omega = {omega} <= 0")
    if abs(Q1.omega - 1.0) > 1e-14:
        raise ParameterError("rescale_omega expects a ground state at omega = 1")
    params = Q1.params.with_omega(omega)
    mu = math.sqrt(omega)
    amp = omega ** amplitude_exponent(params)
    a1, m1 = Q1.fine_map
    fine_map = (amp * a1, mu * m1)
    s = amp * Q1.shooting_value
    if grid is None:
        target = Q1.grid.dilated(mu)
        prof = RadialField(target, amp * np.asarray(Q1.profile.values))
        return _assemble(params, prof, s, Q1.fine, fine_map)
    if mu * grid.h > RESOLUTION_LIMIT:
        raise ResolutionError(f"sqrt(omega) h = {mu * grid.h:.3g} exceeds {RESOLUTION_LIMIT}")
    if Q1.fine is None:
        raise SolverError("sampling on a new grid needs the fine profile")
    prof = RadialField(grid, fine_map[0] * Q1.fine(fine_map[1] * np.asarray(grid.nodes)))
    return _assemble(params, prof, s, Q1.fine, fine_map)


def nehari_project(phi: RadialField, params: ModelParams):
    """(lambda, lambda * phi) with I_omega(lambda phi) = 0."""
    omega = params.require_omega()
    pot = F.potential(phi, params)
    quad = F.kinetic(phi) + omega * F.mass(phi)
    if not pot > 1e-300 or quad <= 0:
        raise F.DegenerateFieldError("Nehari projection needs a field with positive potential")
    lam = (quad / pot) ** (1.0 / (params.pf - 1.0))
    return lam, lam * phi


def action_exponent(params: ModelParams) -> float:
    """sigma with d(omega) = d(1) omega^sigma."""
    N, b, p = params.N, params.bf, params.pf
    return (2.0 + b) * (p + 1.0) / (2.0 * (p - 1.0)) - (b + N) / 2.0


def d_closed_form(params: ModelParams, potential_Q1: float, omega: float) -> float:
    p = params.pf
    return (p - 1.0) / (2.0 * (p + 1.0)) * omega ** action_exponent(params) * potential_Q1


def action_level_d(params: ModelParams, Q1: GroundState, grid: Optional[RadialGrid] = None):
    """(d_numeric, d_closed_form) at frequency params.omega."""
    omega = params.require_omega()
    Qw = rescale_omega(Q1, omega, grid)
    d_num = F.action(Qw.profile, params)
    d_cf = d_closed_form(params, Q1.report.potential, omega)
    if not (d_num > 0 and d_cf > 0):
        raise SolverError(f"non-positive action level d = {d_num}, {d_cf}")
    return d_num, d_cf


def pohozaev_residuals(Q: GroundState) -> tuple:
    rep = Q.report
    return pohozaev_from_integrals(Q.params, rep.kinetic, rep.mass, rep.potential)


def ground_state(params: ModelParams, R: Optional[float] = None, M: int = DEFAULT_M, **kw) -> GroundState:
    """Convenience wrapper using the default truncation radius."""
    from .grid import default_radius, make_grid

    return solve_profile_shooting(params, make_grid(params.N, R or default_radius(params.omega), M), **kw)
