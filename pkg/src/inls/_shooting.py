"""Compiled RK4 kernels for the radial profile ODE

    Q'' + (N-1)/r Q' - omega Q + r^b |Q|^{p-1} Q = 0,   Q(0) = s, Q'(0) = 0.
"""

import numpy as np
from numba import njit

CROSSED = 1  # Q <= 0 somewhere: s too large
TURNED = -1  # Q' back to > 0 after the peak, Q > 0: s too small
UNDECIDED = 0


@njit(cache=True)
def _rhs(r, q, dq, N, b, p, omega):
    aq = abs(q)
    nl = r**b * aq ** (p - 1.0) * q if aq > 0.0 else 0.0
    return dq, -(N - 1.0) / r * dq + omega * q - nl


@njit(cache=True)
def series_start(s, r0, N, b, p, omega):
    """Two-term expansion Q = s + omega s r^2/(2N) - s^p r^{b+2}/((b+2)(b+N))."""
    sp = abs(s) ** p
    q = s + omega * s * r0 * r0 / (2.0 * N) - sp * r0 ** (b + 2.0) / ((b + 2.0) * (b + N))
    dq = omega * s * r0 / N - sp * r0 ** (b + 1.0) / (b + N)
    return q, dq


@njit(cache=True)
def _rk4_step(r, q, dq, h, N, b, p, omega):
    k1q, k1d = _rhs(r, q, dq, N, b, p, omega)
    k2q, k2d = _rhs(r + 0.5 * h, q + 0.5 * h * k1q, dq + 0.5 * h * k1d, N, b, p, omega)
    k3q, k3d = _rhs(r + 0.5 * h, q + 0.5 * h * k2q, dq + 0.5 * h * k2d, N, b, p, omega)
    k4q, k4d = _rhs(r + h, q + h * k3q, dq + h * k3d, N, b, p, omega)
    q1 = q + h / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q)
    d1 = dq + h / 6.0 * (k1d + 2.0 * k2d + 2.0 * k3d + k4d)
    return q1, d1


@njit(cache=True)
def shoot(s, h, n_steps, N, b, p, omega):
    """Integrate one shot; return (verdict, index of the deciding step).

    Q''(0) = omega s / N > 0, so every shot first rises; only a sign change of
    Q' from negative back to positive counts as turning upward.
    """
    q, dq = series_start(s, h, N, b, p, omega)
    r = h
    falling = False
    for k in range(2, n_steps + 1):
        q, dq = _rk4_step(r, q, dq, h, N, b, p, omega)
        r += h
        if q <= 0.0:
            return CROSSED, k
        if dq < 0.0:
            falling = True
        elif falling and dq > 0.0:
            return TURNED, k
    return UNDECIDED, n_steps


@njit(cache=True)
def trajectory(s, h, n_steps, N, b, p, omega):
    """Full shot on r_k = k h, k = 0..n_steps (r_0 = 0 holds the exact centre values)."""
    qs = np.zeros(n_steps + 1)
    ds = np.zeros(n_steps + 1)
    qs[0] = s
    q, dq = series_start(s, h, N, b, p, omega)
    qs[1] = q
    ds[1] = dq
    r = h
    for k in range(2, n_steps + 1):
        q, dq = _rk4_step(r, q, dq, h, N, b, p, omega)
        r += h
        qs[k] = q
        ds[k] = dq
    return qs, ds


@njit(cache=True)
def bisect(s_lo, s_hi, h, n_steps, N, b, p, omega, rtol, max_iter):
    """Bisect on s between a TURNED shot s_lo and a CROSSED shot s_hi."""
    it = 0
    while it < max_iter and (s_hi - s_lo) > rtol * s_hi:
        mid = 0.5 * (s_lo + s_hi)
        if mid <= s_lo or mid >= s_hi:
            break
        v, _ = shoot(mid, h, n_steps, N, b, p, omega)
        if v == CROSSED:
            s_hi = mid
        else:
            s_lo = mid
        it += 1
    return s_lo, s_hi, it
