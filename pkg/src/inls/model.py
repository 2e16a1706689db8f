"""Problem parameters, critical exponents and regime classification.

Everything downstream reads exponents from here so that the regime logic lives
in exactly one place.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from fractions import Fraction
from numbers import Real
from typing import Optional, Union

Number = Union[int, float, Fraction]

N_MIN, N_MAX = 2, 12
MASS_CRITICAL_RTOL = 1e-12


class ParameterError(ValueError):
    """Raised for parameters outside the supported domain."""


class Regime(str, enum.Enum):
    BELOW_ADMISSIBLE = "BelowAdmissible"
    MASS_SUBCRITICAL = "MassSubcritical"
    MASS_CRITICAL = "MassCritical"
    INTERCRITICAL = "Intercritical"
    ENERGY_CRITICAL = "EnergyCritical"
    ABOVE_ENERGY_CRITICAL = "AboveEnergyCritical"


@dataclass(frozen=True)
class Exponents:
    p_lower: float
    p_mass_critical: float
    p_energy_critical: float  # math.inf for N == 2
    s_c: float
    B: float


@dataclass(frozen=True)
class ModelParams:
    """The quadruple (N, b, p, omega).

    ``p`` and ``b`` may be given as :class:`fractions.Fraction`, in which case
    the mass-critical test is done in exact arithmetic.  ``omega`` is optional
    because the mass-constrained problems do not fix a frequency.
    """

    N: int
    b: Number
    p: Number
    omega: Optional[float] = None

    def __post_init__(self):
        if isinstance(self.N, bool) or int(self.N) != self.N:
            raise ParameterError(f"N must be an integer, got {self.N!r}")
        object.__setattr__(self, "N", int(self.N))
        for name in ("b", "p"):
            v = getattr(self, name)
            if not isinstance(v, Real) or not math.isfinite(float(v)):
                raise ParameterError(f"{name} must be a finite real, got {v!r}")
        if self.omega is not None:
            if not math.isfinite(float(self.omega)):
                raise ParameterError(f"omega must be finite, got {self.omega!r}")
            object.__setattr__(self, "omega", float(self.omega))
        if not N_MIN <= self.N <= N_MAX:
            raise ParameterError(f"N must lie in {N_MIN}..{N_MAX}, got {self.N}")
        if self.b <= 0:
            raise ParameterError(f"b must be positive, got {self.b}")
        if self.p <= 1:
            raise ParameterError(f"p must exceed 1, got {self.p}")

    @property
    def bf(self) -> float:
        return float(self.b)

    @property
    def pf(self) -> float:
        return float(self.p)

    def with_omega(self, omega: Optional[float]) -> "ModelParams":
        return ModelParams(self.N, self.b, self.p, omega)

    def require_omega(self) -> float:
        if self.omega is None:
            raise ParameterError("this operation needs a frequency omega")
        return self.omega

    @property
    def exponents(self) -> Exponents:
        return critical_exponents(self)

    @property
    def regime(self) -> Regime:
        return classify_regime(self)

    @property
    def admissible(self) -> bool:
        return admissible(self)

    def as_dict(self) -> dict:
        return {"N": self.N, "b": self.bf, "p": self.pf, "omega": self.omega}


def _p_mass_critical_exact(N: int, b: Number) -> Number:
    if isinstance(b, (int, Fraction)):
        return 1 + Fraction(4 + 2 * Fraction(b), N)
    return 1.0 + (4.0 + 2.0 * b) / N


def critical_exponents(params: ModelParams) -> Exponents:
    N, b, p = params.N, params.bf, params.pf
    p_lower = 1.0 + 2.0 * b / (N - 1)
    p_c = 1.0 + (4.0 + 2.0 * b) / N
    p_cc = math.inf if N <= 2 else 1.0 + (4.0 + 2.0 * b) / (N - 2)
    s_c = N / 2.0 - (2.0 + b) / (p - 1.0)
    B = (N * (p - 1.0) - 2.0 * b) / 2.0
    if is_mass_critical(params):
        # pin the exact values on the critical line
        s_c, B = 0.0, 2.0
    return Exponents(p_lower, p_c, p_cc, s_c, B)


def is_mass_critical(params: ModelParams) -> bool:
    pc = _p_mass_critical_exact(params.N, params.b)
    if isinstance(pc, Fraction) and isinstance(params.p, (int, Fraction)):
        return Fraction(params.p) == pc
    pc = float(pc)
    return abs(params.pf - pc) <= MASS_CRITICAL_RTOL * pc


def _is_energy_critical(params: ModelParams) -> bool:
    if params.N <= 2:
        return False
    b, p = params.b, params.p
    if isinstance(b, (int, Fraction)) and isinstance(p, (int, Fraction)):
        return Fraction(p) == 1 + Fraction(4 + 2 * Fraction(b), params.N - 2)
    pcc = 1.0 + (4.0 + 2.0 * params.bf) / (params.N - 2)
    return abs(params.pf - pcc) <= MASS_CRITICAL_RTOL * pcc


def classify_regime(params: ModelParams) -> Regime:
    ex = critical_exponents(params)
    p = params.pf
    if p <= ex.p_lower:
        return Regime.BELOW_ADMISSIBLE
    if is_mass_critical(params):
        return Regime.MASS_CRITICAL
    if p < ex.p_mass_critical:
        return Regime.MASS_SUBCRITICAL
    if _is_energy_critical(params):
        return Regime.ENERGY_CRITICAL
    if p < ex.p_energy_critical:
        return Regime.INTERCRITICAL
    return Regime.ABOVE_ENERGY_CRITICAL


def admissible(params: ModelParams) -> bool:
    """Range where the positive radial ground state exists and is unique."""
    return classify_regime(params) in (
        Regime.MASS_SUBCRITICAL,
        Regime.MASS_CRITICAL,
        Regime.INTERCRITICAL,
    )


def require_admissible(params: ModelParams) -> None:
    if not admissible(params):
        raise ParameterError(
            f"parameters {params.as_dict()} are not admissible "
            f"(regime {classify_regime(params).value})"
        )
