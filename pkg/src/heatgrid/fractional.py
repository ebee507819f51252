"""Fractional-order transfer-function algebra.

Plant elements are modeled as first-order transfer functions of fractional
order alpha with an optional dead time:

    G(s) = K / (T * s**alpha + 1) * exp(-L * s)

This module provides exact frequency-domain evaluation, a band-limited
rational (ladder) approximation, time-domain step simulation by the
Grunwald-Letnikov recurrence and by partial fractions of the rational form,
classical stability margins, and the time-weighted absolute-error cost used
by the tuner.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "FoTransferFunction",
    "RationalTf",
    "FrequencyResponse",
    "MarginReport",
    "NoCrossoverError",
    "log_grid",
    "freq_response",
    "oustaloup_approx",
    "rationalize",
    "gl_step_response",
    "step_response_modal",
    "margins",
    "itae",
]

# Synthesis band and ladder order used whenever a caller does not choose.
DEFAULT_BAND = (1e-4, 1e3)
DEFAULT_N_CELLS = 5

_trapz = getattr(np, "trapezoid", None) or np.trapz


@dataclass(frozen=True)
class FoTransferFunction:
    """K / (T s^alpha + 1) * e^(-L s).

    gain_K is in degC per unit of normalized drive, time_const_T in s^alpha,
    delay_L in seconds.  gain_K may be zero to express "no coupling"; every
    other field is validated strictly.
    """

    gain_K: float
    time_const_T: float
    order_alpha: float
    delay_L: float = 0.0

    def __post_init__(self) -> None:
        if not math.isfinite(self.gain_K):
            raise ValueError("gain_K must be finite")
        if not (self.time_const_T > 0) or not math.isfinite(self.time_const_T):
            raise ValueError("time_const_T must be positive")
        if not (0.0 < self.order_alpha <= 1.5):
            raise ValueError("order_alpha must lie in (0, 1.5]")
        if self.delay_L < 0 or not math.isfinite(self.delay_L):
            raise ValueError("delay_L must be >= 0")

    @property
    def char_time(self) -> float:
        """T**(1/alpha), the natural time scale of the step response."""
        return self.time_const_T ** (1.0 / self.order_alpha)


@dataclass(frozen=True)
class RationalTf:
    """Ratio of real polynomials in s, coefficients in descending powers."""

    num_coeffs: tuple
    den_coeffs: tuple

    def __post_init__(self) -> None:
        num = tuple(float(c) for c in np.atleast_1d(self.num_coeffs))
        den = tuple(float(c) for c in np.atleast_1d(self.den_coeffs))
        object.__setattr__(self, "num_coeffs", num)
        object.__setattr__(self, "den_coeffs", den)
        if len(den) == 0 or den[0] == 0.0:
            raise ValueError("leading denominator coefficient must be nonzero")
        if len(num) == 0:
            raise ValueError("numerator must have at least one coefficient")
        if len(num) > len(den):
            raise ValueError("numerator degree exceeds denominator degree")

    def eval_at(self, s: complex | np.ndarray) -> complex | np.ndarray:
        return np.polyval(self.num_coeffs, s) / np.polyval(self.den_coeffs, s)

    def dc_gain(self) -> float:
        den0 = self.den_coeffs[-1]
        if den0 == 0.0:
            raise ZeroDivisionError("denominator vanishes at s=0")
        return self.num_coeffs[-1] / den0


@dataclass(frozen=True)
class FrequencyResponse:
    """Complex response samples over a positive, strictly increasing grid."""

    omegas: np.ndarray
    values: np.ndarray

    def __post_init__(self) -> None:
        w = np.asarray(self.omegas, dtype=float)
        v = np.asarray(self.values, dtype=complex)
        object.__setattr__(self, "omegas", w)
        object.__setattr__(self, "values", v)
        if w.ndim != 1 or w.size == 0:
            raise ValueError("omegas must be a non-empty 1-d grid")
        if v.shape != w.shape:
            raise ValueError("omegas and values must have equal length")
        if np.any(w <= 0) or np.any(np.diff(w) <= 0):
            raise ValueError("omegas must be positive and strictly increasing")


@dataclass(frozen=True)
class MarginReport:
    phase_margin_deg: float
    gain_margin_db: float
    gain_crossover_w: float
    phase_crossover_w: float | None = None


class NoCrossoverError(ValueError):
    """The loop magnitude never crosses unity on the supplied grid."""


def log_grid(w_lo: float, w_hi: float, points_per_decade: int = 60) -> np.ndarray:
    """Logarithmic frequency grid with a fixed number of points per decade."""
    if not (0 < w_lo < w_hi):
        raise ValueError("need 0 < w_lo < w_hi")
    if points_per_decade < 1:
        raise ValueError("points_per_decade must be >= 1")
    n = int(round(math.log10(w_hi / w_lo) * points_per_decade))
    n = max(n, 1)
    return w_lo * 10.0 ** (np.arange(n + 1) / points_per_decade)


def _fo_values(g: FoTransferFunction, w: np.ndarray) -> np.ndarray:
    # (jw)^alpha on the principal branch: w^alpha * e^(j alpha pi/2)
    ja = np.exp(1j * g.order_alpha * np.pi / 2.0)
    s_alpha = w ** g.order_alpha * ja
    vals = g.gain_K / (g.time_const_T * s_alpha + 1.0)
    if g.delay_L > 0:
        vals = vals * np.exp(-1j * w * g.delay_L)
    return vals


def freq_response(g, omegas) -> FrequencyResponse:
    """Evaluate a fractional model or a RationalTf on a frequency grid."""
    w = np.asarray(omegas, dtype=float)
    if w.size == 0:
        raise ValueError("empty frequency grid")
    if isinstance(g, RationalTf):
        vals = g.eval_at(1j * w)
    elif isinstance(g, FoTransferFunction):
        vals = _fo_values(g, w)
    else:
        raise TypeError(f"cannot evaluate object of type {type(g).__name__}")
    return FrequencyResponse(w, np.asarray(vals, dtype=complex))


# The synthesis band is widened internally by this factor on each side before
# placing ladder sections.  A ladder confined to the requested band cannot hold
# the phase of s^alpha near the band edges (the ideal band-limited operator
# already droops several degrees a decade inside), so accuracy over the
# requested band requires sections outside it.
_BAND_WIDENING = 8.0


def oustaloup_approx(alpha: float, band, n_cells: int = DEFAULT_N_CELLS) -> RationalTf:
    """Stable, minimum-phase rational approximation of s**alpha over a band.

    Zeros and poles are laid out log-uniformly with the classical symmetric
    offset pattern; 2*n_cells+1 sections span the widened band.  The gain is
    calibrated so the response equals (j*w)**alpha exactly at the geometric
    mid-frequency of the requested band.
    """
    w_b, w_h = float(band[0]), float(band[1])
    if not (0 < w_b < w_h):
        raise ValueError("band must satisfy 0 < w_b < w_h")
    if not (1 <= int(n_cells) <= 20):
        raise ValueError("n_cells must be in [1, 20]")
    if abs(alpha) > 1.5:
        raise ValueError("|alpha| must be <= 1.5")
    if alpha == 0.0:
        return RationalTf((1.0,), (1.0,))

    lo, hi = w_b / _BAND_WIDENING, w_h * _BAND_WIDENING
    u = hi / lo
    m = 2 * int(n_cells) + 1
    k = np.arange(m)
    zeros = lo * u ** ((k + (1.0 - alpha) / 2.0) / m)
    poles = lo * u ** ((k + (1.0 + alpha) / 2.0) / m)
    num = np.poly(-zeros)
    den = np.poly(-poles)

    w_mid = math.sqrt(w_b * w_h)
    h_mid = np.polyval(num, 1j * w_mid) / np.polyval(den, 1j * w_mid)
    gain = abs((1j * w_mid) ** alpha) / abs(h_mid)
    return RationalTf(tuple(gain * num), tuple(den))


def _pade2_delay(L: float) -> tuple[np.ndarray, np.ndarray]:
    # second-order Pade of e^(-L s)
    num = np.array([L * L / 12.0, -L / 2.0, 1.0])
    den = np.array([L * L / 12.0, L / 2.0, 1.0])
    return num, den


def rationalize(
    g: FoTransferFunction,
    band=DEFAULT_BAND,
    n_cells: int = DEFAULT_N_CELLS,
) -> RationalTf:
    """Rational stand-in for a fractional model over a frequency band.

    s**alpha is written as s * s**(alpha-1) and the fractional factor is
    replaced by its ladder approximation.  Because the ladder enters only in
    product with s, the denominator equals exactly 1 at s=0 and the DC gain
    of the result is gain_K to machine precision.  Dead time is folded in as
    a second-order Pade factor.  alpha=1 passes through as K/(T s + 1).
    """
    if g.order_alpha == 1.0:
        num2 = np.array([1.0])
        den2 = np.array([1.0])
    else:
        ladder = oustaloup_approx(g.order_alpha - 1.0, band, n_cells)
        num2 = np.asarray(ladder.num_coeffs)
        den2 = np.asarray(ladder.den_coeffs)

    # G = K den2 / (T s num2 + den2)
    num = g.gain_K * den2
    den = np.polyadd(g.time_const_T * np.polymul([1.0, 0.0], num2), den2)
    if g.delay_L > 0:
        pn, pd = _pade2_delay(g.delay_L)
        num = np.polymul(num, pn)
        den = np.polymul(den, pd)
    return RationalTf(tuple(num), tuple(den))


def gl_step_response(
    g: FoTransferFunction,
    step_amp: float,
    h: float,
    t_end: float,
    memory_len: int = 60000,
) -> tuple[np.ndarray, np.ndarray]:
    """Step response by the Grunwald-Letnikov fractional-difference recurrence.

    Serves as the time-domain reference independent of the rational
    approximation path.  Full memory is kept up to memory_len samples, after
    which the convolution window is truncated (short-memory principle).
    Returns (times, values) on the uniform grid t_k = k*h.
    """
    if h <= 0:
        raise ValueError("h must be positive")
    if t_end < 10 * h:
        raise ValueError("t_end must be at least 10*h")
    n = int(round(t_end / h)) + 1
    t = np.arange(n) * h

    alpha = g.order_alpha
    # weights of (1-z)^alpha: c_0 = 1, c_k = c_{k-1} * (1 - (alpha+1)/k)
    c = np.empty(n)
    c[0] = 1.0
    for k in range(1, n):
        c[k] = c[k - 1] * (1.0 - (alpha + 1.0) / k)

    # step applied just after t=0: the sample at t=0 is exactly zero
    u = np.where(t > g.delay_L, g.gain_K * step_amp, 0.0)
    ha = g.time_const_T * h ** (-alpha)
    y = np.zeros(n)
    denom = 1.0 + ha
    for i in range(1, n):
        lo = max(0, i - memory_len)
        hist = y[lo:i][::-1]
        acc = np.dot(c[1 : i - lo + 1], hist)
        y[i] = (u[i] - ha * acc) / denom
    return t, y


def step_response_modal(
    r: RationalTf, times: np.ndarray, step_amp: float = 1.0
) -> np.ndarray:
    """Exact step response of a strictly proper rational model.

    Partial fractions are computed directly as N(p)/(p * D'(p)) over the
    denominator roots; this stays accurate for the wide log-spaced pole
    ladders produced by rationalize, which defeat tolerance-based residue
    groupers.  Poles must be simple and nonzero.
    """
    t = np.asarray(times, dtype=float)
    den = np.asarray(r.den_coeffs)
    num = np.asarray(r.num_coeffs)
    if den[-1] == 0.0:
        raise ValueError("denominator has a root at s=0; step response unbounded")
    poles = np.roots(den)
    dden = np.polyder(den)
    resid = np.polyval(num, poles) / (poles * np.polyval(dden, poles))
    y_ss = num[-1] / den[-1]
    # clip the exponent so unstable poles overflow gracefully to large values
    expo = np.clip(np.real(np.outer(t, poles)), None, 200.0) + 1j * np.imag(
        np.outer(t, poles)
    )
    y = y_ss + np.real(np.exp(expo) @ resid)
    return step_amp * y


def _interp_log(w0: float, w1: float, f0: float, f1: float, ftarget: float) -> float:
    # log-linear in omega between two bracketing grid points
    if f1 == f0:
        return w0
    frac = (ftarget - f0) / (f1 - f0)
    return w0 * (w1 / w0) ** frac


def margins(open_loop: FrequencyResponse) -> MarginReport:
    """Phase and gain margins from an open-loop frequency response.

    The gain crossover is located by log-linear interpolation of |L| in dB;
    the phase there is interpolated linearly in degrees against log-omega.
    When the (unwrapped) phase never reaches -180 deg on the grid the gain
    margin is reported as +inf and the phase crossover is omitted.
    """
    w = open_loop.omegas
    mag_db = 20.0 * np.log10(np.abs(open_loop.values))
    phase = np.degrees(np.unwrap(np.angle(open_loop.values)))

    cross = np.nonzero(np.diff(np.sign(mag_db)) != 0)[0]
    exact = np.nonzero(mag_db == 0.0)[0]
    if exact.size:
        i = int(exact[0])
        w_c = float(w[i])
        ph_c = float(phase[i])
    elif cross.size:
        i = int(cross[0])
        w_c = _interp_log(w[i], w[i + 1], mag_db[i], mag_db[i + 1], 0.0)
        frac = math.log(w_c / w[i]) / math.log(w[i + 1] / w[i])
        ph_c = phase[i] + frac * (phase[i + 1] - phase[i])
    else:
        raise NoCrossoverError("|L| does not cross unity on the supplied grid")
    pm = 180.0 + ph_c

    gm_db = math.inf
    w_pc: float | None = None
    shifted = phase + 180.0
    pc = np.nonzero(np.diff(np.sign(shifted)) != 0)[0]
    pc_exact = np.nonzero(shifted == 0.0)[0]
    if pc_exact.size:
        j = int(pc_exact[0])
        w_pc = float(w[j])
        gm_db = -float(mag_db[j])
    elif pc.size:
        j = int(pc[0])
        w_pc = _interp_log(w[j], w[j + 1], shifted[j], shifted[j + 1], 0.0)
        frac = math.log(w_pc / w[j]) / math.log(w[j + 1] / w[j])
        gm_db = -(mag_db[j] + frac * (mag_db[j + 1] - mag_db[j]))
    return MarginReport(
        phase_margin_deg=float(pm),
        gain_margin_db=float(gm_db),
        gain_crossover_w=float(w_c),
        phase_crossover_w=w_pc,
    )


def itae(errors, times) -> float:
    """Integral of time multiplied by absolute error, by the trapezoid rule."""
    e = np.asarray(errors, dtype=float)
    t = np.asarray(times, dtype=float)
    if e.shape != t.shape:
        raise ValueError("errors and times must have equal length")
    if t.size and (t[0] < 0 or np.any(np.diff(t) <= 0)):
        raise ValueError("times must be non-negative and increasing")
    return float(_trapz(t * np.abs(e), t))
