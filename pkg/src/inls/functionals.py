"""Functionals of the weighted NLS on radial fields.

All integrals use the grid's shell-moment quadrature; the kinetic term uses the
same flux differences as the Laplacian, so <-Lap u, u> == kinetic(u) exactly and
the Nehari identity closes to round-off on discrete solutions.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .grid import RadialField, h1_inner, h1_norm
from .model import ModelParams, critical_exponents

VARIANCE_TAIL_RTOL = 1e-8


class DegenerateFieldError(ValueError):
    """Operation undefined for the given field (zero field, zero potential)."""


def mass(u: RadialField) -> float:
    u.require_finite()
    return float(np.dot(u.grid.volumes, np.abs(u.values) ** 2))


def kinetic(u: RadialField) -> float:
    u.require_finite()
    return float(np.real(u.grid.gradient_norm_sq(u.values)))


def potential(u: RadialField, params: ModelParams) -> float:
    """int |x|^b |u|^{p+1} dx."""
    u.require_finite()
    return float(np.dot(u.grid.quad_weights(params.bf), np.abs(u.values) ** (params.pf + 1.0)))


def variance(u: RadialField) -> float:
    """int |x|^2 |u|^2 dx on the truncated ball."""
    u.require_finite()
    return float(np.dot(u.grid.quad_weights(2.0), np.abs(u.values) ** 2))


def variance_reliable(u: RadialField) -> bool:
    """False when the field has not decayed at r = R, so the variance is truncated."""
    peak = float(np.max(np.abs(u.values))) if u.grid.M else 0.0
    return u.boundary_value <= VARIANCE_TAIL_RTOL * peak


def energy(u: RadialField, params: ModelParams) -> float:
    return 0.5 * kinetic(u) - potential(u, params) / (params.pf + 1.0)


def virial(u: RadialField, params: ModelParams) -> float:
    B = critical_exponents(params).B
    return kinetic(u) - B / (params.pf + 1.0) * potential(u, params)


def action(u: RadialField, params: ModelParams) -> float:
    omega = params.require_omega()
    return energy(u, params) + 0.5 * omega * mass(u)


def nehari(u: RadialField, params: ModelParams) -> float:
    omega = params.require_omega()
    return kinetic(u) + omega * mass(u) - potential(u, params)


@dataclass(frozen=True)
class FunctionalReport:
    mass: float
    kinetic: float
    potential: float
    energy: float
    action: float
    nehari: float
    virial: float
    variance: float
    variance_reliable: bool = True
    params: dict = field(default_factory=dict)

    def to_json(self, **kw) -> str:
        d = asdict(self)
        for k, v in d.items():
            if isinstance(v, float):
                d[k] = float(f"{v:.17g}")
        return json.dumps(d, **kw)


def from_integrals(params: ModelParams, m: float, k: float, pot: float, var: float = math.nan,
                   reliable: bool = True) -> FunctionalReport:
    """Assemble a report from the three primitive integrals."""
    p = params.pf
    omega = params.omega if params.omega is not None else 0.0
    B = critical_exponents(params).B
    e = 0.5 * k - pot / (p + 1.0)
    s = e + 0.5 * omega * m
    return FunctionalReport(
        mass=m,
        kinetic=k,
        potential=pot,
        energy=e,
        action=s,
        nehari=2.0 * s - (p - 1.0) / (p + 1.0) * pot,
        virial=k - B / (p + 1.0) * pot,
        variance=var,
        variance_reliable=reliable,
        params=params.as_dict(),
    )


def report(u: RadialField, params: ModelParams) -> FunctionalReport:
    params.require_omega()
    u.require_finite()
    return from_integrals(params, mass(u), kinetic(u), potential(u, params), variance(u),
                          variance_reliable(u))


def kac_functional(u: RadialField, params: ModelParams, a: float, c: float) -> float:
    """Derivative at lambda = 1 of S_omega(lambda^a u(x / lambda^c))."""
    omega = params.require_omega()
    N, b, p = params.N, params.bf, params.pf
    m, k, pot = mass(u), kinetic(u), potential(u, params)
    return (0.5 * (2 * a + N * c) * omega * m
            + 0.5 * (2 * a + (N - 2) * c) * k
            - (a + c * (b + N) / (1.0 + p)) * pot)


def gn_exponents(params: ModelParams) -> tuple[float, float]:
    """Powers of ||grad f|| and ||f|| in the weighted Gagliardo-Nirenberg bound."""
    N, b, p = params.N, params.bf, params.pf
    return (N * (p - 1.0) - 2.0 * b) / 2.0, (4.0 + 2.0 * b - (N - 2) * (p - 1.0)) / 2.0


def gn_ratio(u: RadialField, params: ModelParams) -> float:
    """potential(u) / (||grad u||^alpha ||u||^beta); invariant under amplitude and L2 dilation."""
    k, m = kinetic(u), mass(u)
    if k <= 0.0 or m <= 0.0:
        raise DegenerateFieldError("GN ratio of the zero field is undefined")
    alpha, beta = gn_exponents(params)
    return potential(u, params) / (k ** (0.5 * alpha) * m ** (0.5 * beta))


def phase_optimized_h1_distance(u: RadialField, phi: RadialField) -> float:
    """inf over theta of ||u - e^{i theta} phi||_{H^1}, attained at theta = arg <u, phi>."""
    theta = optimal_phase(u, phi)
    diff = RadialField(u.grid, np.asarray(u.values) - np.exp(1j * theta) * np.asarray(phi.values))
    return h1_norm(diff)


def optimal_phase(u: RadialField, phi: RadialField) -> float:
    """The theta attaining the infimum in :func:`phase_optimized_h1_distance`."""
    z = h1_inner(u, phi)
    return math.atan2(z.imag, z.real)
