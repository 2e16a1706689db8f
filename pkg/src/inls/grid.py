"""Cell-centred radial discretisation of R^N.

Nodes sit at r_i = (i - 1/2) h, i = 1..M, with h = R / M, so the origin is never
a node.  Each node owns the spherical shell [r_{i-1/2}, r_{i+1/2}].  Quadrature
weights are the exact shell moments

    W_i(a) = |S^{N-1}| * int_{shell i} r^(N-1+a) dr,

so integrals of constants against any power weight are exact, and integrands
sampled at the node give a second-order rule.  The Laplacian is the matching
finite-volume stencil with zero flux through the origin and a homogeneous
Dirichlet condition at r = R (ghost value u_{M+1} = -u_M), which makes
<-Lap u, u> equal the discrete gradient norm exactly.
"""

from __future__ import annotations

import io
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp
from scipy.special import gammaln

from .model import N_MAX, N_MIN, ParameterError

M_MIN = 16


class GridMismatchError(ValueError):
    """Binary operation on fields living on different grids."""


class NonFiniteFieldError(ValueError):
    """A field or integrand contains NaN or Inf."""


def sphere_area(N: int) -> float:
    """Surface area of the unit sphere S^{N-1}: 2 pi^{N/2} / Gamma(N/2)."""
    return 2.0 * math.exp(0.5 * N * math.log(math.pi) - gammaln(0.5 * N))


def _shell_moments(edges: np.ndarray, k: float) -> np.ndarray:
    """int_{e_i}^{e_{i+1}} r^(k-1) dr * k, computed without cancellation."""
    lo, hi = edges[:-1], edges[1:]
    out = np.empty_like(lo)
    out[0] = hi[0] ** k  # lo[0] == 0
    l1 = lo[1:]
    out[1:] = l1**k * np.expm1(k * np.log1p((hi[1:] - l1) / l1))
    return out


@dataclass(frozen=True)
class RadialGrid:
    N: int
    R: float
    M: int

    def __post_init__(self):
        if isinstance(self.N, bool) or int(self.N) != self.N or not N_MIN <= self.N <= N_MAX:
            raise ParameterError(f"N must be an integer in {N_MIN}..{N_MAX}, got {self.N!r}")
        if not (isinstance(self.M, (int, np.integer)) and self.M >= M_MIN):
            raise ParameterError(f"M must be an integer >= {M_MIN}, got {self.M!r}")
        if not (math.isfinite(self.R) and self.R > 0):
            raise ParameterError(f"R must be positive, got {self.R!r}")
        object.__setattr__(self, "N", int(self.N))
        object.__setattr__(self, "M", int(self.M))
        object.__setattr__(self, "R", float(self.R))

    @property
    def h(self) -> float:
        return self.R / self.M

    @cached_property
    def nodes(self) -> np.ndarray:
        r = (np.arange(1, self.M + 1) - 0.5) * self.h
        r.flags.writeable = False
        return r

    @cached_property
    def edges(self) -> np.ndarray:
        e = np.arange(0, self.M + 1) * self.h
        e.flags.writeable = False
        return e

    @cached_property
    def area(self) -> float:
        return sphere_area(self.N)

    @cached_property
    def face_areas(self) -> np.ndarray:
        """|S^{N-1}| r^{N-1} at the M interior+outer faces r_{i+1/2}, i = 1..M."""
        a = self.area * self.edges[1:] ** (self.N - 1)
        a.flags.writeable = False
        return a

    def quad_weights(self, a: float = 0.0) -> np.ndarray:
        if a < 0:
            raise ParameterError(f"weight shift a must be >= 0, got {a}")
        return self._weights(float(a))

    def _weights(self, a: float) -> np.ndarray:
        cache = self.__dict__.setdefault("_wcache", {})
        w = cache.get(a)
        if w is None:
            k = self.N + a
            w = self.area * _shell_moments(np.asarray(self.edges), k) / k
            w.flags.writeable = False
            cache[a] = w
        return w

    @property
    def volumes(self) -> np.ndarray:
        return self._weights(0.0)

    def cell_average_power(self, a: float) -> np.ndarray:
        """Shell average of r^a; the discrete stand-in for |x|^a at each node."""
        return self._weights(float(a)) / self.volumes

    def dilated(self, mu: float) -> "RadialGrid":
        """Grid for x -> x / mu, i.e. the nodes of u(mu x) when u lives on self."""
        return RadialGrid(self.N, self.R / mu, self.M)

    # ------------------------------------------------------------------ operators
    def integrate(self, g: np.ndarray, a: float = 0.0) -> float:
        g = np.asarray(g)
        if g.shape != (self.M,):
            raise ValueError(f"expected {self.M} samples, got shape {g.shape}")
        if not np.all(np.isfinite(g)):
            raise NonFiniteFieldError("integrand has non-finite samples")
        w = self.quad_weights(a)
        if np.iscomplexobj(g):
            return complex(np.dot(w, g))
        return float(np.dot(w, g))

    def laplacian(self, u: np.ndarray) -> np.ndarray:
        u = np.asarray(u)
        h = self.h
        fa = self.face_areas
        flux = np.empty(self.M, dtype=u.dtype)
        flux[:-1] = fa[:-1] * (u[1:] - u[:-1]) / h
        flux[-1] = fa[-1] * (0.0 - u[-1]) / (0.5 * h)
        div = flux.copy()
        div[1:] -= flux[:-1]
        return div / self.volumes

    def gradient_norm_sq(self, u: np.ndarray, v: np.ndarray | None = None):
        """Discrete <grad u, grad v>; equals <-Lap u, v> exactly."""
        u = np.asarray(u)
        v = u if v is None else np.asarray(v)
        h = self.h
        fa = self.face_areas
        du = np.diff(u)
        dv = np.diff(v)
        s = np.dot(fa[:-1], du * np.conj(dv)) / h + 2.0 * fa[-1] * u[-1] * np.conj(v[-1]) / h
        return s

    @cached_property
    def laplacian_matrix(self) -> sp.csc_matrix:
        h = self.h
        fa = np.asarray(self.face_areas)
        vol = np.asarray(self.volumes)
        up = fa[:-1] / (h * vol[:-1])  # coupling i -> i+1
        lo = fa[:-1] / (h * vol[1:])  # coupling i+1 -> i
        diag = -(np.concatenate(([0.0], fa[:-1])) / h + np.concatenate((fa[:-1] / h, [2.0 * fa[-1] / h]))) / vol
        return sp.diags([lo, diag, up], [-1, 0, 1], format="csc")

    def laplacian_banded(self) -> np.ndarray:
        """(3, M) banded layout of the Laplacian for scipy.linalg.solve_banded."""
        L = self.laplacian_matrix
        ab = np.zeros((3, self.M))
        ab[0, 1:] = L.diagonal(1)
        ab[1, :] = L.diagonal(0)
        ab[2, :-1] = L.diagonal(-1)
        return ab

    def __repr__(self) -> str:
        return f"RadialGrid(N={self.N}, R={self.R!r}, M={self.M})"


def make_grid(N: int, R: float, M: int) -> RadialGrid:
    return RadialGrid(N, R, M)


def default_radius(omega: float | None) -> float:
    """R = max(12, 10/sqrt(omega)): the profile has decayed by ~e^-10 at R."""
    if omega is None or omega <= 0:
        return 12.0
    return max(12.0, 10.0 / math.sqrt(omega))


@dataclass(frozen=True, eq=False)
class RadialField:
    """Samples u(r_i) of a radial function on a fixed grid."""

    grid: RadialGrid
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.dtype.kind not in "fc":
            v = v.astype(float)
        if v.shape != (self.grid.M,):
            raise ValueError(f"field needs {self.grid.M} samples, got shape {v.shape}")
        v = v.copy()
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    @classmethod
    def from_function(cls, grid: RadialGrid, f) -> "RadialField":
        return cls(grid, f(np.asarray(grid.nodes)))

    @property
    def r(self) -> np.ndarray:
        return self.grid.nodes

    @property
    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.values)))

    def require_finite(self) -> "RadialField":
        if not self.is_finite:
            raise NonFiniteFieldError("field has non-finite samples")
        return self

    @property
    def boundary_value(self) -> float:
        """|u| at the outermost node, the truncation-adequacy indicator."""
        return float(abs(self.values[-1]))

    def _check(self, other: "RadialField") -> None:
        if other.grid != self.grid:
            raise GridMismatchError(f"{self.grid} vs {other.grid}")

    def __add__(self, other):
        if isinstance(other, RadialField):
            self._check(other)
            return RadialField(self.grid, self.values + other.values)
        return NotImplemented

    def __sub__(self, other):
        if isinstance(other, RadialField):
            self._check(other)
            return RadialField(self.grid, self.values - other.values)
        return NotImplemented

    def __mul__(self, c):
        if isinstance(c, (int, float, complex, np.number)):
            return RadialField(self.grid, self.values * c)
        return NotImplemented

    __rmul__ = __mul__

    def __neg__(self):
        return RadialField(self.grid, -self.values)

    def conj(self) -> "RadialField":
        return RadialField(self.grid, np.conj(self.values))

    def abs(self) -> np.ndarray:
        return np.abs(self.values)

    def laplacian(self) -> "RadialField":
        return laplacian_radial(self)

    # ----------------------------------------------------------------- CSV I/O
    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        buf.write("r,re,im\n")
        v = np.asarray(self.values, dtype=complex)
        for r, z in zip(self.grid.nodes, v):
            buf.write(f"{r:.17g},{z.real:.17g},{z.imag:.17g}\n")
        text = buf.getvalue()
        if path is not None:
            with open(path, "w", newline="") as fh:
                fh.write(text)
        return text

    @classmethod
    def from_csv(cls, source, N: int) -> "RadialField":
        """Read a field written by :meth:`to_csv`; the grid is rebuilt from the nodes."""
        if hasattr(source, "read"):
            text = source.read()
        elif isinstance(source, str) and "\n" in source:
            text = source
        else:
            with open(source) as fh:
                text = fh.read()
        lines = text.strip().splitlines()
        if lines[0].strip() != "r,re,im":
            raise ValueError(f"unexpected CSV header {lines[0]!r}")
        data = np.array([[float(x) for x in ln.split(",")] for ln in lines[1:]])
        r = data[:, 0]
        M = len(r)
        h = 2.0 * r[0]
        grid = RadialGrid(N, h * M, M)
        if not np.allclose(grid.nodes, r, rtol=1e-12, atol=0):
            raise ValueError("CSV nodes are not a uniform cell-centred grid")
        vals = data[:, 1] + 1j * data[:, 2]
        if not np.any(data[:, 2]):
            vals = data[:, 1]
        return cls(grid, vals)


def integrate_weighted(grid: RadialGrid, g, a: float = 0.0) -> float:
    """|S^{N-1}| int_0^R g(r) r^{N-1+a} dr with the grid's shell-moment rule."""
    return grid.integrate(g, a)


def laplacian_radial(u: RadialField) -> RadialField:
    return RadialField(u.grid, u.grid.laplacian(u.values))


def l2_inner(u: RadialField, v: RadialField) -> complex:
    u._check(v)
    return complex(np.dot(u.grid.volumes, u.values * np.conj(v.values)))


def h1_inner(u: RadialField, v: RadialField) -> complex:
    """int (grad u . conj grad v + u conj v) dx."""
    u._check(v)
    return complex(u.grid.gradient_norm_sq(u.values, v.values)) + l2_inner(u, v)


def h1_norm(u: RadialField) -> float:
    return math.sqrt(max(h1_inner(u, u).real, 0.0))
