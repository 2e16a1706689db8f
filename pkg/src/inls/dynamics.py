"""Radial time evolution of  i u_t + Lap u = -|x|^b |u|^{p-1} u.

Crank-Nicolson in time on the finite-volume Laplacian, with the midpoint
nonlinearity  (|u+|^{p-1} + |u|^{p-1})/2 * (u+ + u)/2  resolved by fixed-point
iteration.  The nonlinear term is a real multiple of u+ + u, so the discrete
mass is conserved to round-off; a stationary profile maps to an exact phase
rotation.  The tridiagonal factorisation is computed once per step size.
"""

from __future__ import annotations

import enum
import json
import logging
import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.linalg.lapack import zgttrf, zgttrs

from . import functionals as F
from .grid import RadialField, RadialGrid, h1_norm
from .groundstate import GroundState, ResolutionError, RESOLUTION_LIMIT
from .model import ModelParams, ParameterError, critical_exponents, is_mass_critical

log = logging.getLogger(__name__)

FP_TOL = 1e-12
FP_MAX_ITER = 50
DT_MIN = 1e-12
ENERGY_JUMP_RTOL = 1e-8
CALM_STEPS = 100
BLOWUP_GROWTH = 1e3
BLOWUP_HALVINGS = 20


class Status(str, enum.Enum):
    RUNNING = "Running"
    FINISHED = "Finished"
    BLOWUP = "BlowupDetected"
    COLLAPSE = "StepCollapse"


class Tag(str, enum.Enum):
    KPLUS = "KPlus"
    KMINUS = "KMinus"
    ABOVE = "AboveThreshold"


@dataclass(frozen=True)
class Classification:
    tag: Tag
    s_value: float
    p_value: float
    d_value: float

    def as_dict(self) -> dict:
        return {"tag": self.tag.value, "s_value": self.s_value, "p_value": self.p_value, "d_value": self.d_value}


def classify_initial_data(u0: RadialField, params: ModelParams, d_value: float) -> Classification:
    """K+ / K- / AboveThreshold; equality S = d counts as AboveThreshold."""
    s = F.action(u0, params)
    p = F.virial(u0, params)
    if s >= d_value:
        tag = Tag.ABOVE
    elif p >= 0:
        tag = Tag.KPLUS
    else:
        tag = Tag.KMINUS
    return Classification(tag, s, p, d_value)


# ----------------------------------------------------------------------------- time stepping
@dataclass(frozen=True, eq=False)
class EvolutionState:
    field: RadialField
    t: float
    dt: float
    mass0: float
    energy0: float
    status: Status = Status.RUNNING
    kinetic0: float = math.nan
    halvings: int = 0
    calm: int = 0
    steps: int = 0
    dt_max: float = math.inf

    @property
    def energy_scale(self) -> float:
        return max(abs(self.energy0), 1.0)


class StepFailed(RuntimeError):
    """Fixed-point iteration did not converge at the current step size."""


class _CN:
    """Factorised  I - i dt/2 Lap  and the explicit half  I + i dt/2 Lap  for one dt."""

    def __init__(self, grid: RadialGrid, dt: float):
        L = grid.laplacian_matrix
        lo, di, up = L.diagonal(-1), L.diagonal(0), L.diagonal(1)
        a = 0.5j * dt
        self.dt = dt
        self.lo, self.di, self.up = a * lo, a * di, a * up
        dl, d, du, du2, ipiv, info = zgttrf(-self.lo, 1.0 - self.di, -self.up)
        if info != 0:
            raise np.linalg.LinAlgError(f"tridiagonal factorisation failed (info={info})")
        self._lu = (dl, d, du, du2, ipiv)

    def explicit(self, u):
        out = u + self.di * u
        out[:-1] += self.up * u[1:]
        out[1:] += self.lo * u[:-1]
        return out

    def solve(self, rhs):
        x, info = zgttrs(*self._lu, rhs)
        return x


class Integrator:
    """Holds the grid-dependent pieces; one instance per (grid, params)."""

    def __init__(self, grid: RadialGrid, params: ModelParams):
        self.grid, self.params = grid, params
        self.rho = grid.cell_average_power(params.bf)
        self.q = (params.pf - 1.0) / 2.0
        self._cache: dict = {}

    def _cn(self, dt):
        cn = self._cache.get(dt)
        if cn is None:
            if len(self._cache) > 64:
                self._cache.clear()
            cn = self._cache[dt] = _CN(self.grid, dt)
        return cn

    def advance(self, u: np.ndarray, dt: float):
        """One CN step; returns (u+, iterations).  Raises StepFailed."""
        cn = self._cn(dt)
        base = cn.explicit(u)
        au = np.abs(u) ** 2
        wu = au**self.q
        coef = 1j * dt * self.rho
        v = u.copy()
        for it in range(1, FP_MAX_ITER + 1):
            nbar = 0.25 * ((np.abs(v) ** 2) ** self.q + wu) * (v + u)
            v_new = cn.solve(base + coef * nbar)
            err = float(np.max(np.abs(v_new - v)))
            v = v_new
            if not np.isfinite(err):
                break
            if err <= FP_TOL * max(1.0, float(np.max(np.abs(v)))):
                return v, it
        raise StepFailed(f"fixed point did not converge at dt={dt:g}")

    def energy(self, u) -> float:
        k = float(np.real(self.grid.gradient_norm_sq(u)))
        pot = float(np.dot(self.grid.quad_weights(self.params.bf), np.abs(u) ** (self.params.pf + 1.0)))
        return 0.5 * k - pot / (self.params.pf + 1.0)

    def kinetic(self, u) -> float:
        return float(np.real(self.grid.gradient_norm_sq(u)))


def initial_state(u0: RadialField, params: ModelParams, dt: float = 1e-3, dt_max: Optional[float] = None) -> EvolutionState:
    u0 = RadialField(u0.grid, np.asarray(u0.values, dtype=complex))
    return EvolutionState(
        field=u0, t=0.0, dt=dt, mass0=F.mass(u0), energy0=F.energy(u0, params),
        kinetic0=F.kinetic(u0), dt_max=dt if dt_max is None else dt_max,
    )


def step(state: EvolutionState, params: ModelParams, integrator: Optional[Integrator] = None,
         dt_cap: Optional[float] = None, adaptive: bool = True) -> EvolutionState:
    """Advance by one accepted step, halving dt until the step is accepted.

    ``dt_cap`` shortens this one step (to land on a sample time) without
    changing the state's nominal dt.
    """
    if state.status is not Status.RUNNING:
        raise ParameterError(f"cannot step a state with status {state.status.value}")
    integ = integrator or Integrator(state.field.grid, params)
    u = np.asarray(state.field.values, dtype=complex)
    dt, halvings, calm = state.dt, state.halvings, state.calm
    e_old = integ.energy(u)
    while True:
        h = dt if dt_cap is None else min(dt, dt_cap)
        try:
            v, _ = integ.advance(u, h)
            jump = abs(integ.energy(v) - e_old) / state.energy_scale
            if not adaptive or jump <= ENERGY_JUMP_RTOL:
                break
        except StepFailed:
            if not adaptive:
                raise
        dt *= 0.5
        halvings += 1
        calm = 0
        if dt < DT_MIN:
            return replace(state, dt=dt, halvings=halvings, status=Status.COLLAPSE)
    calm += 1
    if adaptive and calm >= CALM_STEPS and 2.0 * dt <= state.dt_max:
        dt *= 2.0
        calm = 0
    new = replace(state, field=RadialField(state.field.grid, v), t=state.t + h, dt=dt,
                  halvings=halvings, calm=calm, steps=state.steps + 1)
    if (halvings >= BLOWUP_HALVINGS
            and integ.kinetic(v) >= BLOWUP_GROWTH * state.kinetic0):
        new = replace(new, status=Status.BLOWUP)
    return new


# ----------------------------------------------------------------------------- trajectories
MONITORS = ("mass", "energy", "kinetic", "potential", "virial", "variance", "grad_norm", "dist_to_Q")


@dataclass(frozen=True, eq=False)
class Trajectory:
    times: np.ndarray
    monitors: dict
    status: Status
    params: ModelParams
    sample_dt: float
    blowup_time: Optional[float] = None
    variance_reliable: bool = True
    final: Optional[EvolutionState] = field(default=None, repr=False)
    steps: int = 0
    #: monitors of the state at termination (off the sample lattice after blow-up)
    final_monitors: Optional[dict] = field(default=None, repr=False)

    def __post_init__(self):
        n = len(self.times)
        for k, v in self.monitors.items():
            if len(v) != n:
                raise ValueError(f"monitor {k} has {len(v)} samples, expected {n}")
        if n > 1 and not np.all(np.diff(self.times) > 0):
            raise ValueError("sample times must be strictly increasing")

    def __getitem__(self, key):
        return self.monitors[key]

    def drift(self, key: str) -> float:
        v = self.monitors[key]
        scale = max(abs(v[0]), 1.0) if key == "energy" else abs(v[0])
        return float(np.max(np.abs(v - v[0])) / scale)

    def to_csv(self, path=None) -> str:
        lines = ["t," + ",".join(MONITORS)]
        for i, t in enumerate(self.times):
            lines.append(",".join([f"{t:.17g}"] + [f"{self.monitors[k][i]:.17g}" for k in MONITORS]))
        text = "\n".join(lines) + "\n"
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    def report(self, classification: Optional[Classification] = None) -> dict:
        def f(x):
            return None if x is None or not math.isfinite(x) else float(f"{x:.17g}")

        return {
            "params": self.params.as_dict(),
            "classification": classification.as_dict() if classification else None,
            "status": self.status.value,
            "blowup_time": f(self.blowup_time),
            "final_time": f(float(self.times[-1])),
            "steps": self.steps,
            "mass_drift": f(self.drift("mass")),
            "energy_drift": f(self.drift("energy")),
            "final_state": {k: f(v) for k, v in self.final_monitors.items()} if self.final_monitors else None,
            "max": {k: f(float(np.nanmax(self.monitors[k]))) if np.any(np.isfinite(self.monitors[k])) else None
                    for k in MONITORS},
        }

    def report_json(self, classification=None) -> str:
        return json.dumps(self.report(classification), indent=2)


def _sample(u: RadialField, params: ModelParams, ref: Optional[RadialField]) -> dict:
    m, k, pot, var = F.mass(u), F.kinetic(u), F.potential(u, params), F.variance(u)
    B = critical_exponents(params).B
    return {
        "mass": m, "energy": 0.5 * k - pot / (params.pf + 1.0), "kinetic": k, "potential": pot,
        "virial": k - B / (params.pf + 1.0) * pot, "variance": var, "grad_norm": math.sqrt(k),
        "dist_to_Q": F.phase_optimized_h1_distance(u, ref) if ref is not None else math.nan,
    }


def evolve(u0: RadialField, params: ModelParams, T: float, sample_dt: float, *, dt: float = 1e-3,
           reference: Optional[RadialField] = None, adaptive: bool = True,
           callback: Optional[Callable[[EvolutionState], None]] = None) -> Trajectory:
    """Run to T (or until blow-up / step collapse), sampling every ``sample_dt``."""
    if not (T > 0 and sample_dt > 0 and dt > 0):
        raise ParameterError("T, sample_dt and dt must be positive")
    if is_mass_critical(params) is False and params.pf <= 1:
        raise ParameterError("p must exceed 1")
    integ = Integrator(u0.grid, params)
    state = initial_state(u0, params, dt=min(dt, sample_dt))
    n_samples = int(round(T / sample_dt))
    if abs(n_samples * sample_dt - T) > 1e-9 * T:
        raise ParameterError("T must be an integer multiple of sample_dt")
    times = [0.0]
    rows = [_sample(state.field, params, reference)]
    reliable = F.variance_reliable(state.field)
    blowup_time = None
    for j in range(1, n_samples + 1):
        t_next = j * sample_dt
        while state.status is Status.RUNNING and t_next - state.t > 1e-12 * max(1.0, t_next):
            last_t = state.t
            state = step(state, params, integ, dt_cap=t_next - state.t, adaptive=adaptive)
            if callback is not None:
                callback(state)
            if state.status is Status.BLOWUP:
                blowup_time = last_t
        if state.status is not Status.RUNNING:
            break
        state = replace(state, t=t_next)
        times.append(t_next)
        rows.append(_sample(state.field, params, reference))
        reliable = reliable and F.variance_reliable(state.field)
    status = state.status if state.status is not Status.RUNNING else Status.FINISHED
    if status is Status.COLLAPSE:
        blowup_time = state.t
    monitors = {k: np.array([r[k] for r in rows]) for k in MONITORS}
    log.debug("evolve: %s at t=%.6g after %d steps", status.value, state.t, state.steps)
    return Trajectory(np.array(times), monitors, status, params, sample_dt, blowup_time, reliable,
                      replace(state, status=status), state.steps, _sample(state.field, params, reference))


class VarianceUnreliableError(ValueError):
    pass


def virial_second_difference(traj: Trajectory) -> np.ndarray:
    V = traj["variance"]
    return (V[2:] - 2.0 * V[1:-1] + V[:-2]) / traj.sample_dt**2


def virial_consistency(traj: Trajectory, eps: float = 1e-30) -> float:
    """max over interior samples of |V'' - 8P| / max(|8P|, eps)."""
    if len(traj.times) < 5:
        raise ValueError("virial check needs at least 5 samples")
    if not np.allclose(np.diff(traj.times), traj.sample_dt, rtol=1e-9, atol=0):
        raise ValueError("virial check needs uniform samples")
    if not traj.variance_reliable:
        raise VarianceUnreliableError("variance is truncated by the outer boundary")
    vpp = virial_second_difference(traj)
    eight_p = 8.0 * traj["virial"][1:-1]
    return float(np.max(np.abs(vpp - eight_p) / np.maximum(np.abs(eight_p), eps)))


# ----------------------------------------------------------------------------- solution families
def _check_resolution(grid: RadialGrid, mu: float) -> None:
    if mu * grid.h > RESOLUTION_LIMIT:
        raise ResolutionError(f"compression {mu:.3g} under-resolved: mu h = {mu * grid.h:.3g} > {RESOLUTION_LIMIT}")


def instability_family(Q: GroundState, lam: float, grid: Optional[RadialGrid] = None) -> RadialField:
    """phi^lambda(x) = e^{N lambda/2} Q(e^lambda x).

    Without ``grid`` the nodal values of Q are reused on the dilated grid, which
    keeps every discrete functional exactly on its scaling law.  With ``grid``
    the continuum profile is sampled on the given nodes.
    """
    N = Q.params.N
    mu = math.exp(lam)
    amp = math.exp(0.5 * N * lam)
    if grid is None:
        _check_resolution(Q.grid.dilated(mu), 1.0)
        return RadialField(Q.grid.dilated(mu), amp * np.asarray(Q.profile.values))
    _check_resolution(grid, mu)
    if lam == 0 and grid == Q.grid:
        return Q.profile
    return RadialField(grid, amp * Q.evaluate(mu * np.asarray(grid.nodes)))


def s_lambda_closed_form(Q: GroundState, lam: float, kinetic: Optional[float] = None) -> float:
    """d/dlambda S(phi^lambda) = e^{2 lambda}(1 - e^{lambda(Np - (N+4+2b))/2}) ||grad Q||^2."""
    N, b, p = Q.params.N, Q.params.bf, Q.params.pf
    k = Q.report.kinetic if kinetic is None else kinetic
    return math.exp(2 * lam) * (1.0 - math.exp(lam * (N * p - (N + 4 + 2 * b)) / 2.0)) * k


def s_lambda_central_difference(Q: GroundState, lam: float, delta: float = 1e-4, source: str = "fine") -> float:
    """Central difference of lambda -> S(phi^lambda).

    ``source="fine"`` evaluates S by quadrature on the dilated fine mesh, where
    P(Q) vanishes to ~1e-12; ``"grid"`` uses the grid functionals, whose O(h^2)
    defect in P(Q) enters the derivative directly.
    """
    N, om, p = Q.params.N, Q.omega, Q.params.pf

    def S(l):
        if source == "grid":
            return F.action(instability_family(Q, l), Q.params)
        amp, mu = Q.fine_map
        d = Q.fine.dilated_integrals(amp * math.exp(0.5 * N * l), mu * math.exp(l))
        return 0.5 * d["kinetic"] + 0.5 * om * d["mass"] - d["potential"] / (p + 1.0)

    if source not in ("fine", "grid"):
        raise ParameterError(f"source must be 'fine' or 'grid', got {source!r}")
    return (S(lam + delta) - S(lam - delta)) / (2.0 * delta)


def mass_critical_family(Q: GroundState, lam_n: float, grid: Optional[RadialGrid] = None) -> RadialField:
    """phi_n(x) = lambda_n^{1+N/2} Q(lambda_n x) at p = p_c."""
    if not is_mass_critical(Q.params):
        raise ParameterError("the mass-critical family needs p = p_c")
    if not lam_n > 0:
        raise ParameterError(f"lambda_n must be positive, got {lam_n}")
    N = Q.params.N
    amp = lam_n ** (1.0 + 0.5 * N)
    if grid is None:
        return RadialField(Q.grid.dilated(lam_n), amp * np.asarray(Q.profile.values))
    _check_resolution(grid, lam_n)
    return RadialField(grid, amp * Q.evaluate(lam_n * np.asarray(grid.nodes)))


def mass_critical_identities(Q: GroundState, lam_n: float) -> dict:
    """Relative errors of the four scaling laws and the energy formula for phi_n.

    The functionals are evaluated by direct quadrature of phi_n sampled on the
    dilated fine mesh, whose accuracy (~1e-12) is what the energy formula needs:
    it relies on E(Q) = 0, which the grid quadrature only meets to O(h^2).
    """
    if not is_mass_critical(Q.params):
        raise ParameterError("the mass-critical family needs p = p_c")
    fine = Q.fine
    N, b, p = Q.params.N, Q.params.bf, Q.params.pf

    a0, mu0 = Q.fine_map

    def integrals(amp, mu):
        d = fine.dilated_integrals(a0 * amp, mu0 * mu)
        return d["mass"], d["kinetic"], d["potential"]

    m0, k0, pot0 = integrals(1.0, 1.0)
    m1, k1, pot1 = integrals(lam_n ** (1.0 + 0.5 * N), lam_n)
    pot_exp = (N + 2.0) * (p + 1.0) / 2.0 - b - N
    e_direct = 0.5 * k1 - pot1 / (p + 1.0)
    e_formula = lam_n**4 / (p + 1.0) * (1.0 - lam_n ** ((4.0 + 2.0 * b) / N)) * pot0

    def rel(a, b_):
        return abs(a - b_) / max(abs(b_), 1e-300)

    return {
        "mass_ratio": rel(m1 / m0, lam_n**2),
        "kinetic_ratio": rel(k1 / k0, lam_n**4),
        "potential_ratio": rel(pot1 / pot0, lam_n**pot_exp),
        "energy_formula": rel(e_direct, e_formula),
        "energy": e_direct,
        "energy_closed_form": e_formula,
    }


def smooth_perturbation(grid: RadialGrid, seed: int, n_modes: int = 8, length: Optional[float] = None) -> RadialField:
    """Seeded cosine series in r times exp(-r^2/L^2), L = R/2 by default."""
    rng = np.random.default_rng(seed)
    coeffs = rng.standard_normal(n_modes)
    L = grid.R / 2.0 if length is None else length
    r = np.asarray(grid.nodes)
    k = np.arange(n_modes)[:, None] * math.pi / grid.R
    w = (coeffs[:, None] * np.cos(k * r[None, :])).sum(axis=0) * np.exp(-(r / L) ** 2)
    return RadialField(grid, w)


def stability_experiment(Q: GroundState, epsilon: float, T: float, seed: int, *,
                         sample_dt: float = 0.1, dt: float = 1e-3, n_modes: int = 8):
    """(max phase-optimised H^1 distance to Q, trajectory) for u0 = Q + eps w/||w||_{H^1}."""
    if epsilon < 0:
        raise ParameterError("epsilon must be non-negative")
    w = smooth_perturbation(Q.grid, seed, n_modes)
    u0 = Q.profile + (epsilon / h1_norm(w)) * w
    traj = evolve(u0, Q.params, T, sample_dt, dt=dt, reference=Q.profile)
    return float(np.nanmax(traj["dist_to_Q"])), traj


def kplus_gradient_bound(params: ModelParams, energy0: float) -> float:
    """||grad u||^2 <= 2B/(B-2) E(u0) on K+ (supercritical B > 2)."""
    B = critical_exponents(params).B
    if not B > 2:
        raise ParameterError("the K+ gradient bound needs a mass-supercritical exponent")
    return 2.0 * B / (B - 2.0) * energy0


def dilate_l2(u: RadialField, lam: float) -> RadialField:
    """u_lambda(x) = lambda^{N/2} u(lambda x) via the dilated grid (exact scaling)."""
    return RadialField(u.grid.dilated(lam), lam ** (0.5 * u.grid.N) * np.asarray(u.values))
