"""Spec-constrained ITAE-optimal PI tuning for the direct-path channels.

Each channel gets an independent PI controller C(s) = Kp + Ki/s designed
against its fractional direct-path model.  A design is accepted when the
loop meets five frequency-domain targets: phase margin inside a window,
unity loop gain at the crossover (free or pinned), near-flat loop phase
around the crossover so moderate plant-gain drift does not move the phase
margin, closed-loop attenuation at a high-frequency noise probe, and
sensitivity attenuation at a low-frequency disturbance probe.  Among the
admissible gain pairs the tuner minimizes the integral of time-weighted
absolute error (ITAE) of the closed-loop step response.

Search is a deterministic multistart simplex descent in (log10 Kp, log10 Ki)
with quadratic exterior penalties for the constraints.  The start points are
translated by the plant's DC gain so that scaling the plant by k translates
the whole search landscape, making tuned gains scale-covariant by 1/k.

Constraint evaluation uses the exact fractional frequency response; only the
time-domain ITAE objective runs on the rationalized ladder form (closed form
through partial fractions, no time stepping).
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .fractional import (
    FoTransferFunction,
    MarginReport,
    NoCrossoverError,
    RationalTf,
    itae,
    rationalize,
)

__all__ = [
    "PiGains",
    "TuningSpec",
    "TuneResult",
    "TuneBatch",
    "tune_pi",
    "verify_spec",
    "tune_all",
    "save_gains_csv",
    "load_gains_csv",
]

# Measurement grid for constraint evaluation: wide enough that every sane
# PI loop for the bench models crosses unity inside it.
_MEASURE_GRID = np.logspace(-5, 3, 8 * 120 + 1)

# Multistart seeds in (log10 Kp, log10 Ki) before the DC-gain translation.
_START_POINTS = (
    (-0.5, -1.5), (0.5, -1.0), (1.0, -0.5), (0.0, 0.0),
    (1.5, -1.5), (-1.0, -0.5), (2.0, 0.5), (1.0, -2.0),
)

_PENALTY_WEIGHT = 1e4
_UNSTABLE_COST = 1e6


@dataclass(frozen=True)
class PiGains:
    """Proportional and integral gains of C(s) = prop_K + integ_I / s."""

    prop_K: float
    integ_I: float

    def __post_init__(self) -> None:
        for name in ("prop_K", "integ_I"):
            v = getattr(self, name)
            if not (math.isfinite(v) and v > 0.0):
                raise ValueError(f"{name} must be positive and finite")

    @property
    def integral_time(self) -> float:
        return self.prop_K / self.integ_I

    def scaled(self, factor: float) -> "PiGains":
        return PiGains(self.prop_K * factor, self.integ_I * factor)


@dataclass(frozen=True)
class TuningSpec:
    """Loop-shaping targets; defaults reflect the bench design brief."""

    pm_range_deg: tuple = (60.0, 65.0)
    gm_range_db: tuple = (10.0, 15.0)
    crossover_target_w: float | None = None  # None = crossover left free
    flat_phase_tol: float = 5.0              # deg per decade at crossover
    hf_noise_bound_db: float = -20.0         # |T| cap at hf_noise_w
    hf_noise_w: float = 10.0
    dist_rej_bound_db: float = -20.0         # |S| cap at dist_rej_w
    dist_rej_w: float = 1e-3
    itae_horizon: float = 600.0              # seconds of step response scored
    itae_step: float = 1.0                   # step size in degC

    def __post_init__(self) -> None:
        lo, hi = self.pm_range_deg
        if not (0.0 < lo < hi < 90.0):
            raise ValueError("pm_range_deg must satisfy 0 < lo < hi < 90")
        glo, ghi = self.gm_range_db
        if not (math.isfinite(glo) and math.isfinite(ghi) and glo <= ghi):
            raise ValueError("gm_range_db must be finite with lo <= hi")
        if self.crossover_target_w is not None and self.crossover_target_w <= 0:
            raise ValueError("crossover_target_w must be positive or None")
        if self.flat_phase_tol <= 0:
            raise ValueError("flat_phase_tol must be positive")
        for name in ("hf_noise_bound_db", "dist_rej_bound_db"):
            if not math.isfinite(getattr(self, name)):
                raise ValueError(f"{name} must be finite")
        for name in ("hf_noise_w", "dist_rej_w", "itae_horizon", "itae_step"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")


@dataclass(frozen=True)
class TuneResult:
    gains: PiGains
    achieved: MarginReport
    flat_phase_slope: float  # deg per decade at the crossover
    hf_noise_db: float       # closed-loop |T| at the noise probe
    dist_rej_db: float       # sensitivity |S| at the disturbance probe
    itae_value: float
    feasible: bool
    iterations: int


@dataclass(frozen=True)
class TuneBatch:
    """Per-channel outcomes of tune_all; failed channels carry None."""

    results: tuple
    errors: tuple  # (channel_index, message) pairs

    def __post_init__(self) -> None:
        object.__setattr__(self, "results", tuple(self.results))
        object.__setattr__(self, "errors", tuple(self.errors))

    @property
    def n_feasible(self) -> int:
        return sum(1 for r in self.results if r is not None and r.feasible)

    def gains_table(self) -> list:
        return [None if r is None else r.gains for r in self.results]


def _loop_values(plant: FoTransferFunction, gains: PiGains, w: np.ndarray):
    """Open-loop C(jw) G(jw) from the exact fractional response."""
    ja = np.exp(1j * plant.order_alpha * math.pi / 2.0)
    s_alpha = w ** plant.order_alpha * ja
    g = plant.gain_K / (plant.time_const_T * s_alpha + 1.0)
    if plant.delay_L > 0:
        g = g * np.exp(-1j * w * plant.delay_L)
    return (gains.prop_K + gains.integ_I / (1j * w)) * g


def _crossover_on_grid(plant, gains, grid):
    """(w_c, pm_deg, slope_deg_per_dec) or None when |L| never crosses 1."""
    mag = np.abs(_loop_values(plant, gains, grid))
    lm = np.log10(mag)
    idx = np.nonzero(np.diff(np.sign(lm)))[0]
    if idx.size == 0:
        return None
    i = int(idx[-1])
    t = lm[i] / (lm[i] - lm[i + 1])
    w_c = grid[i] * (grid[i + 1] / grid[i]) ** t
    val = _loop_values(plant, gains, np.array([w_c]))[0]
    pm = 180.0 + math.degrees(np.angle(val))
    w_pair = np.array([w_c / 10**0.05, w_c * 10**0.05])
    ph = np.degrees(np.angle(_loop_values(plant, gains, w_pair)))
    slope = (ph[1] - ph[0]) / 0.1
    return float(w_c), float(pm), float(slope)


def _crossover_adaptive(plant, gains):
    """Crossover search that widens the grid for extreme gain choices."""
    m = _crossover_on_grid(plant, gains, _MEASURE_GRID)
    lo, hi = -5.0, 3.0
    while m is None and (lo > -30.0 or hi < 15.0):
        lo = max(lo - 5.0, -30.0)
        hi = min(hi + 4.0, 15.0)
        grid = np.logspace(lo, hi, int((hi - lo) * 120) + 1)
        m = _crossover_on_grid(plant, gains, grid)
    if m is None:
        raise NoCrossoverError("loop gain never crosses unity")
    return m


def _gain_margin(plant, gains, w_c):
    """Gain margin from the first -180 deg crossing above DC, +inf if none."""
    grid = _MEASURE_GRID
    vals = _loop_values(plant, gains, grid)
    phase = np.degrees(np.unwrap(np.angle(vals)))
    shifted = phase + 180.0
    idx = np.nonzero(np.diff(np.sign(shifted)) != 0)[0]
    if idx.size == 0:
        return math.inf, None
    j = int(idx[0])
    frac = shifted[j] / (shifted[j] - shifted[j + 1])
    w_pc = grid[j] * (grid[j + 1] / grid[j]) ** frac
    mag_pc = abs(_loop_values(plant, gains, np.array([w_pc]))[0])
    return -20.0 * math.log10(mag_pc), float(w_pc)


def _sensitivity_probes(plant, gains, spec):
    """(|T| dB at the noise probe, |S| dB at the disturbance probe)."""
    l_hf = _loop_values(plant, gains, np.array([spec.hf_noise_w]))[0]
    l_lf = _loop_values(plant, gains, np.array([spec.dist_rej_w]))[0]
    t_db = 20.0 * math.log10(abs(l_hf / (1.0 + l_hf)))
    s_db = 20.0 * math.log10(abs(1.0 / (1.0 + l_lf)))
    return t_db, s_db


def _itae_unit_step(rat: RationalTf, gains: PiGains, horizon: float):
    """Closed-form ITAE of the unit-step error, or None if loop unstable.

    Error transform: E(s) = D(s) / (s D(s) + (Kp s + Ki) N(s)).
    """
    ng = np.asarray(rat.num_coeffs)
    dg = np.asarray(rat.den_coeffs)
    dcl = np.polyadd(np.polymul(dg, [1.0, 0.0]),
                     np.polymul(ng, [gains.prop_K, gains.integ_I]))
    poles = np.roots(dcl)
    if np.any(poles.real > -1e-12):
        return None
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        resid = np.polyval(dg, poles) / np.polyval(np.polyder(dcl), poles)
    if not np.all(np.isfinite(resid)):
        # Overflowing residues mean the pole set is numerically unusable
        # (clustered or far-flung roots); score such gains as unstable.
        return None
    t = np.linspace(0.0, horizon, 4001)
    err = (resid[:, None] * np.exp(poles[:, None] * t[None, :])).sum(axis=0).real
    return float(itae(err, t))


def _interior_targets(spec: TuningSpec):
    """Shrunken constraint windows used inside the optimizer.

    The optimizer aims slightly inside every bound so that the verified
    result sits strictly within the TuningSpec windows, not on their edges.
    """
    lo, hi = spec.pm_range_deg
    pad = 0.1 * (hi - lo)
    return (
        lo + pad,
        hi - pad,
        0.9 * spec.flat_phase_tol,
        spec.hf_noise_bound_db - 0.25,
        spec.dist_rej_bound_db - 0.25,
    )


def _objective(x, plant, rat, spec, interior):
    k_p, k_i = 10.0 ** x[0], 10.0 ** x[1]
    if not (np.isfinite(k_p) and np.isfinite(k_i) and k_p > 0.0 and k_i > 0.0):
        return _UNSTABLE_COST
    gains = PiGains(k_p, k_i)
    m = _crossover_on_grid(plant, gains, _MEASURE_GRID)
    if m is None:
        return _UNSTABLE_COST
    w_c, pm, slope = m
    t_db, s_db = _sensitivity_probes(plant, gains, spec)
    pm_lo, pm_hi, slope_tol, t_cap, s_cap = interior
    v = 0.0
    if pm < pm_lo:
        v += (pm_lo - pm) ** 2
    if pm > pm_hi:
        v += (pm - pm_hi) ** 2
    if abs(slope) > slope_tol:
        v += (abs(slope) - slope_tol) ** 2
    if t_db > t_cap:
        v += (t_db - t_cap) ** 2
    if s_db > s_cap:
        v += (s_db - s_cap) ** 2
    if spec.crossover_target_w is not None:
        v += (10.0 * math.log10(w_c / spec.crossover_target_w)) ** 2
    cost = _itae_unit_step(rat, gains, spec.itae_horizon)
    if cost is None:
        return _UNSTABLE_COST + v * _PENALTY_WEIGHT
    normalized = cost / (0.5 * spec.itae_horizon**2)
    return normalized + _PENALTY_WEIGHT * v


def _check_plant(plant: FoTransferFunction) -> None:
    if plant.gain_K == 0.0:
        raise ValueError("channel has zero gain; no loop to shape")
    # T > 0 and 0 < alpha <= 1.5 are enforced by the model type; every such
    # fractional lag is open-loop stable, so no further stability test here.


def verify_spec(
    plant: FoTransferFunction,
    gains: PiGains,
    spec: TuningSpec | None = None,
    *,
    iterations: int = 0,
) -> TuneResult:
    """Measure every design target for the given gains, no optimization."""
    spec = spec or TuningSpec()
    _check_plant(plant)
    w_c, pm, slope = _crossover_adaptive(plant, gains)
    gm_db, w_pc = _gain_margin(plant, gains, w_c)
    t_db, s_db = _sensitivity_probes(plant, gains, spec)
    rat = rationalize(plant)
    unit_itae = _itae_unit_step(rat, gains, spec.itae_horizon)
    stable = unit_itae is not None
    itae_value = math.inf if unit_itae is None else spec.itae_step * unit_itae

    pm_lo, pm_hi = spec.pm_range_deg
    ok = stable
    ok = ok and pm_lo <= pm <= pm_hi
    ok = ok and abs(slope) <= spec.flat_phase_tol
    ok = ok and t_db <= spec.hf_noise_bound_db
    ok = ok and s_db <= spec.dist_rej_bound_db
    # An infinite gain margin clears the lower bound; the upper bound only
    # binds when a phase crossover exists at all.
    ok = ok and gm_db >= spec.gm_range_db[0]
    if spec.crossover_target_w is not None:
        ok = ok and abs(w_c / spec.crossover_target_w - 1.0) <= 0.02
    return TuneResult(
        gains=gains,
        achieved=MarginReport(pm, gm_db, w_c, w_pc),
        flat_phase_slope=slope,
        hf_noise_db=t_db,
        dist_rej_db=s_db,
        itae_value=itae_value,
        feasible=bool(ok),
        iterations=iterations,
    )


def tune_pi(plant: FoTransferFunction, spec: TuningSpec | None = None) -> TuneResult:
    """ITAE-optimal PI gains subject to the frequency-domain targets.

    Deterministic: fixed multistart seeds, derivative-free simplex descent.
    When no start reaches feasibility the least-violating gains are still
    returned with feasible=False rather than raising.
    """
    spec = spec or TuningSpec()
    _check_plant(plant)
    rat = rationalize(plant)
    interior = _interior_targets(spec)
    shift = math.log10(abs(plant.gain_K))
    best = None
    total_iter = 0
    for sk, si in _START_POINTS:
        res = minimize(
            _objective,
            np.array([sk - shift, si - shift]),
            args=(plant, rat, spec, interior),
            method="Nelder-Mead",
            options=dict(maxiter=400, fatol=1e-10, xatol=1e-8),
        )
        total_iter += int(res.nit)
        if best is None or res.fun < best.fun:
            best = res
    gains = PiGains(10.0 ** best.x[0], 10.0 ** best.x[1])
    return verify_spec(plant, gains, spec, iterations=total_iter)


def tune_all(plants, spec: TuningSpec | None = None) -> TuneBatch:
    """Tune every channel of a plant matrix (or plant sequence) independently.

    Accepts a PlantMatrix (its diagonal is used) or any sequence of
    FoTransferFunction.  Per-channel failures are collected, not raised.
    """
    spec = spec or TuningSpec()
    diag = getattr(plants, "diagonal", None)
    channel_plants = tuple(diag()) if callable(diag) else tuple(plants)
    results = []
    errors = []
    for ch, plant in enumerate(channel_plants):
        try:
            results.append(tune_pi(plant, spec))
        except (ValueError, NoCrossoverError) as exc:
            results.append(None)
            errors.append((ch, str(exc)))
    return TuneBatch(tuple(results), tuple(errors))


# ---------------------------------------------------------------------------
# Gains table export, the record format the loop runner and dashboard read.

_GAINS_HEADER = ("channel", "prop_K", "integ_I", "feasible", "pm_deg", "gm_db", "itae")


def save_gains_csv(path, batch: TuneBatch, *, seed: int | None = None) -> None:
    with open(path, "w", newline="") as fh:
        if seed is not None:
            fh.write(f"# seed={int(seed)}\n")
        writer = csv.writer(fh)
        writer.writerow(_GAINS_HEADER)
        for ch, result in enumerate(batch.results):
            if result is None:
                continue
            writer.writerow(
                [
                    ch,
                    f"{result.gains.prop_K:.10g}",
                    f"{result.gains.integ_I:.10g}",
                    int(result.feasible),
                    f"{result.achieved.phase_margin_deg:.6f}",
                    f"{result.achieved.gain_margin_db:.6f}",
                    f"{result.itae_value:.10g}",
                ]
            )


def load_gains_csv(path) -> dict:
    """channel index -> PiGains for every row present in the file."""
    out: dict[int, PiGains] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        header = tuple(next(reader, ()))
        if header != _GAINS_HEADER:
            raise ValueError(f"unrecognized gains table header: {header!r}")
        for row in reader:
            if not row:
                continue
            out[int(row[0])] = PiGains(float(row[1]), float(row[2]))
    return out
