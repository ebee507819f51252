"""Coupled 16-channel thermal plant with actuator, camera, and fault models.

The array is a 4x4 lattice of thermoelectric elements.  Each element heats
its own cell through a fractional first-order model and leaks into every
other cell through synthesized couplings that weaken with Chebyshev (king
move) distance on the lattice.  The full 16x16 transfer matrix is simulated
as a bank of rational modal blocks advanced by exact zero-order-hold
discretization; elements that share a source and a distance share one block.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from .fractional import FoTransferFunction, rationalize
from .presets import GRID_SIDE, N_CHANNELS, chebyshev_distance, grid_position

__all__ = [
    "CouplingConfig",
    "ActuatorModel",
    "SensorModel",
    "ThermalFrame",
    "FaultSpec",
    "PlantMatrix",
    "PlantState",
    "DEFAULT_COUPLING",
    "TEMP_MIN",
    "TEMP_MAX",
    "coupled_element",
    "synthesize_plant",
    "step_sim",
    "sensor_read",
    "render_image",
    "apply_fault",
    "fault_measurement_offset",
]

TEMP_MIN = 15.0
TEMP_MAX = 100.0
FAULT_KINDS = ("gain_degradation", "supply_interruption", "sensor_offset")


@dataclass(frozen=True)
class CouplingConfig:
    """How neighbor influence decays with lattice distance d >= 1.

    Gains attenuate as kappa**d of the source element's own gain, time
    constants stretch by (1 + tau_growth*d), and each distance unit adds
    lag_per_dist seconds of transport delay.
    """

    kappa: float = 0.025
    tau_growth: float = 0.5
    lag_per_dist: float = 2.0

    def __post_init__(self) -> None:
        if not (0.0 <= self.kappa <= 0.1):
            raise ValueError("kappa must lie in [0, 0.1]")
        if self.tau_growth < 0:
            raise ValueError("tau_growth must be >= 0")
        if self.lag_per_dist < 0:
            raise ValueError("lag_per_dist must be >= 0")


DEFAULT_COUPLING = CouplingConfig()


@dataclass(frozen=True)
class ActuatorModel:
    """PWM drive stage: integer counts clamped, then scaled to plant units."""

    pwm_min: float = -4000.0
    pwm_max: float = 4000.0
    drive_scale: float = 1.0 / 40.0

    def __post_init__(self) -> None:
        if not (self.pwm_min < self.pwm_max):
            raise ValueError("pwm_min must be below pwm_max")
        if not (self.drive_scale > 0):
            raise ValueError("drive_scale must be positive")

    def clamp_counts(self, counts: np.ndarray) -> np.ndarray:
        return np.clip(counts, self.pwm_min, self.pwm_max)

    def to_drive(self, counts: np.ndarray) -> np.ndarray:
        """Counts -> normalized drive units, clamping first."""
        return self.clamp_counts(np.asarray(counts, dtype=float)) * self.drive_scale


@dataclass(frozen=True)
class SensorModel:
    """Thermal camera: Gaussian noise, slow systematic drift, quantization,
    and periodic flat-field-correction (FFC) frames that shift the whole
    image for exactly one frame."""

    noise_sigma: float = 0.2
    quantization: float = 0.1
    accuracy_band: float = 0.5
    ffc_period: float = 300.0
    ffc_offset: float = 0.5
    frame_rate: float = 9.0
    rng_seed: int = 0
    drift_amp: float = 0.15
    drift_period: float = 900.0

    def __post_init__(self) -> None:
        if self.noise_sigma < 0 or self.quantization < 0:
            raise ValueError("noise_sigma and quantization must be >= 0")
        if self.frame_rate <= 0 or self.ffc_period <= 0 or self.drift_period <= 0:
            raise ValueError("frame_rate, ffc_period, drift_period must be positive")
        if abs(self.drift_amp) > self.accuracy_band:
            raise ValueError("drift amplitude exceeds the accuracy band")

    def frame_index(self, t: float) -> int:
        return int(math.floor(t * self.frame_rate + 1e-9))


@dataclass(frozen=True)
class ThermalFrame:
    timestamp: float
    points: np.ndarray
    image: np.ndarray | None = None
    ffc_event: bool = False

    def __post_init__(self) -> None:
        p = np.asarray(self.points, dtype=float)
        object.__setattr__(self, "points", p)
        if p.shape != (N_CHANNELS,):
            raise ValueError(f"points must have shape ({N_CHANNELS},)")


@dataclass(frozen=True)
class FaultSpec:
    """One injectable fault.

    gain_degradation scales the target element's applied drive by
    (1 - magnitude), modeling actuator fatigue; supply_interruption forces
    the target's drive to zero; sensor_offset adds magnitude degC to the
    measured points of the target channel (or every channel for "all").
    duration=None means the fault persists once triggered.
    """

    kind: str
    target: int | str
    onset: float
    magnitude: float = 0.0
    duration: float | None = None

    def __post_init__(self) -> None:
        if self.kind not in FAULT_KINDS:
            raise ValueError(f"unknown fault kind {self.kind!r}")
        if self.onset < 0:
            raise ValueError("onset must be >= 0")
        if self.kind == "gain_degradation" and not (0.0 <= self.magnitude <= 1.0):
            raise ValueError("gain_degradation magnitude must lie in [0, 1]")
        if self.target == "all":
            if self.kind != "sensor_offset":
                raise ValueError('target "all" is only valid for sensor_offset')
        else:
            tgt = int(self.target)
            if not (0 <= tgt < N_CHANNELS):
                raise ValueError("target channel out of range")
            object.__setattr__(self, "target", tgt)
        if self.duration is not None and self.duration <= 0:
            raise ValueError("duration must be positive or None")

    def active_at(self, t: float) -> bool:
        if t < self.onset:
            return False
        return self.duration is None or t < self.onset + self.duration


@dataclass(frozen=True, eq=False)
class PlantMatrix:
    """Dense 16x16 array of transfer functions plus the lattice layout.

    elements[i][j] maps drive on channel j to temperature on channel i.
    Hash/equality are by identity so realizations can be memoized per
    instance.
    """

    elements: tuple
    grid_map: tuple = tuple(grid_position(i) for i in range(N_CHANNELS))
    coupling: CouplingConfig = DEFAULT_COUPLING

    def diagonal(self) -> tuple[FoTransferFunction, ...]:
        return tuple(self.elements[i][i] for i in range(N_CHANNELS))

    def dc_gain_matrix(self) -> np.ndarray:
        return np.array(
            [[self.elements[i][j].gain_K for j in range(N_CHANNELS)]
             for i in range(N_CHANNELS)]
        )


@dataclass(frozen=True)
class PlantState:
    """Value-type snapshot of the simulation: modal amplitudes plus clock."""

    state: np.ndarray | None = None
    ambient: float = 20.0
    sim_time: float = 0.0
    clamp_count: int = 0


def coupled_element(
    source: FoTransferFunction, distance: int, coupling: CouplingConfig
) -> FoTransferFunction:
    """Model of the influence of a source element on a cell at distance d."""
    if distance < 1:
        raise ValueError("distance must be >= 1 for a coupling element")
    return FoTransferFunction(
        gain_K=coupling.kappa**distance * source.gain_K,
        time_const_T=source.time_const_T * (1.0 + coupling.tau_growth * distance),
        order_alpha=source.order_alpha,
        delay_L=coupling.lag_per_dist * distance,
    )


def synthesize_plant(
    diag_params, coupling: CouplingConfig = DEFAULT_COUPLING
) -> PlantMatrix:
    """Build the coupled 16x16 matrix from the 16 direct-path models.

    Raises if the resulting DC gain matrix is not strictly diagonally
    dominant by rows, naming the first offending row.
    """
    diag = tuple(diag_params)
    if len(diag) != N_CHANNELS:
        raise ValueError(f"need exactly {N_CHANNELS} diagonal models")
    rows = []
    for i in range(N_CHANNELS):
        row = []
        for j in range(N_CHANNELS):
            if i == j:
                row.append(diag[j])
            else:
                d = chebyshev_distance(i, j)
                row.append(coupled_element(diag[j], d, coupling))
        rows.append(tuple(row))
    plant = PlantMatrix(elements=tuple(rows), coupling=coupling)

    dc = np.abs(plant.dc_gain_matrix())
    for i in range(N_CHANNELS):
        off = dc[i].sum() - dc[i, i]
        if off >= dc[i, i]:
            raise ValueError(
                f"coupling too strong: DC gain row {i} not diagonally dominant "
                f"(off-diagonal sum {off:.4f} >= diagonal {dc[i, i]:.4f})"
            )
    return plant


class _Realization:
    """Flattened modal discretization of every nonzero element at step h.

    Elements with the same source column and lattice distance share one
    transfer function and one input, so they collapse to a single modal
    block fanned out to all receivers through a 0/1 output map.
    """

    def __init__(self, plant: PlantMatrix, h: float):
        poles, resid, src, seg = [], [], [], [0]
        out_map = []
        for j in range(N_CHANNELS):
            by_dist: dict[int, list[int]] = {}
            for i in range(N_CHANNELS):
                by_dist.setdefault(chebyshev_distance(i, j), []).append(i)
            for d in sorted(by_dist):
                g = plant.elements[by_dist[d][0]][j]
                if g.gain_K == 0.0:
                    continue
                r = rationalize(g)
                p = np.roots(r.den_coeffs)
                dden = np.polyder(r.den_coeffs)
                res = np.polyval(r.num_coeffs, p) / np.polyval(dden, p)
                poles.append(p)
                resid.append(res)
                src.append(j)
                seg.append(seg[-1] + p.size)
                col = np.zeros(N_CHANNELS)
                col[by_dist[d]] = 1.0
                out_map.append(col)

        self.h = h
        self.poles = np.concatenate(poles)
        self.resid = np.concatenate(resid)
        self.src = np.array(src)
        self.seg = np.array(seg)
        self.out_map = np.column_stack(out_map)  # (16, n_blocks)
        self.n_states = self.poles.size
        self.exp_ph = np.exp(self.poles * h)
        self.force = (self.exp_ph - 1.0) / self.poles
        # per-state input index
        block_len = np.diff(self.seg)
        self.state_src = np.repeat(self.src, block_len)

    def advance(self, z: np.ndarray, drive: np.ndarray) -> np.ndarray:
        return self.exp_ph * z + self.force * drive[self.state_src]

    def outputs(self, z: np.ndarray) -> np.ndarray:
        contrib = np.add.reduceat(self.resid * z, self.seg[:-1]).real
        return self.out_map @ contrib


@lru_cache(maxsize=8)
def _realize(plant: PlantMatrix, h: float) -> _Realization:
    return _Realization(plant, h)


def step_sim(
    state: PlantState, plant: PlantMatrix, drive, h: float
) -> tuple[PlantState, np.ndarray]:
    """Advance the whole array one step of length h under constant drive.

    drive is in normalized plant units (counts * drive_scale).  Returns the
    new state and true cell temperatures, clamped to the physical range with
    clamp occurrences counted on the state.
    """
    u = np.asarray(drive, dtype=float)
    if u.shape != (N_CHANNELS,):
        raise ValueError(f"drive must have shape ({N_CHANNELS},)")
    if not np.all(np.isfinite(u)):
        raise ValueError("drive must be finite")
    if not (0.01 <= h <= 2.0):
        raise ValueError("h must lie in [0.01, 2] s")

    real = _realize(plant, h)
    z = state.state
    if z is None:
        z = np.zeros(real.n_states, dtype=complex)
    elif z.shape != (real.n_states,):
        raise ValueError("state vector does not match this plant/step")

    z = real.advance(z, u)
    raw = state.ambient + real.outputs(z)
    temps = np.clip(raw, TEMP_MIN, TEMP_MAX)
    clamps = int(np.count_nonzero(raw != temps))
    new_state = PlantState(
        state=z,
        ambient=state.ambient,
        sim_time=state.sim_time + h,
        clamp_count=state.clamp_count + clamps,
    )
    return new_state, temps


def _periodic_ffc(sensor: SensorModel, t: float, frame_idx: int) -> bool:
    # the first frame at or after each whole multiple of ffc_period (k >= 1)
    if t < sensor.ffc_period:
        return False
    k = math.floor(t / sensor.ffc_period + 1e-9)
    first_frame = int(math.ceil(k * sensor.ffc_period * sensor.frame_rate - 1e-9))
    return frame_idx == first_frame


def sensor_read(
    true_temps,
    sensor: SensorModel,
    t: float,
    *,
    extra_offset=0.0,
    ffc_times=(),
    include_image: bool = False,
    ambient: float = 20.0,
) -> ThermalFrame:
    """One camera frame of the 16 cell centers.

    Noise is drawn from a generator keyed by (rng_seed, frame index), so a
    given instant always sees the same noise no matter how often or in what
    order frames are requested: headless runs and streamed sessions agree
    bit for bit.  ffc_times adds scheduled one-shot FFC events on top of the
    periodic schedule.
    """
    truth = np.asarray(true_temps, dtype=float)
    frame_idx = sensor.frame_index(t)
    rng = np.random.default_rng((sensor.rng_seed, frame_idx))
    noise = rng.normal(0.0, sensor.noise_sigma, N_CHANNELS) if sensor.noise_sigma else 0.0
    drift = sensor.drift_amp * math.sin(2.0 * math.pi * t / sensor.drift_period)

    ffc = _periodic_ffc(sensor, t, frame_idx)
    for ev in ffc_times:
        if sensor.frame_index(ev) == frame_idx:
            ffc = True
    measured = truth + noise + drift + np.asarray(extra_offset, dtype=float)
    if ffc:
        measured = measured + sensor.ffc_offset
    if sensor.quantization > 0:
        measured = np.round(measured / sensor.quantization) * sensor.quantization
    measured = np.clip(measured, TEMP_MIN, TEMP_MAX)
    image = render_image(measured, ambient) if include_image else None
    return ThermalFrame(timestamp=t, points=measured, image=image, ffc_event=ffc)


# Camera geometry: 80x60 image, anchors on a 4x4 lattice with 16-pixel pitch
# centered in the frame, values relaxing linearly to ambient at the border.
IMAGE_W = 80
IMAGE_H = 60
_ANCHOR_ROWS = np.array([6, 22, 38, 54])
_ANCHOR_COLS = np.array([16, 32, 48, 64])


def render_image(points, ambient: float) -> np.ndarray:
    """Bilinear 80x60 reconstruction of the cell-center temperatures.

    Returns shape (60, 80), row-major (height, width).  Anchor pixels carry
    the exact point values; the border is pinned at ambient.
    """
    p = np.asarray(points, dtype=float)
    if p.shape != (N_CHANNELS,) or not np.all(np.isfinite(p)):
        raise ValueError(f"points must be {N_CHANNELS} finite values")

    node_rows = np.concatenate(([0], _ANCHOR_ROWS, [IMAGE_H - 1]))
    node_cols = np.concatenate(([0], _ANCHOR_COLS, [IMAGE_W - 1]))
    nodes = np.full((6, 6), float(ambient))
    nodes[1:5, 1:5] = p.reshape(GRID_SIDE, GRID_SIDE)

    def axis_weights(targets, knots):
        idx = np.clip(np.searchsorted(knots, targets, side="right") - 1, 0, len(knots) - 2)
        frac = (targets - knots[idx]) / (knots[idx + 1] - knots[idx])
        return idx, frac

    ri, rf = axis_weights(np.arange(IMAGE_H), node_rows)
    ci, cf = axis_weights(np.arange(IMAGE_W), node_cols)
    rf = rf[:, None]
    cf = cf[None, :]
    v00 = nodes[np.ix_(ri, ci)]
    v01 = nodes[np.ix_(ri, ci + 1)]
    v10 = nodes[np.ix_(ri + 1, ci)]
    v11 = nodes[np.ix_(ri + 1, ci + 1)]
    return (
        v00 * (1 - rf) * (1 - cf)
        + v01 * (1 - rf) * cf
        + v10 * rf * (1 - cf)
        + v11 * rf * cf
    )


def apply_fault(drive, fault: FaultSpec, t: float) -> np.ndarray:
    """Drive-side effect of one fault at time t (sensor faults pass through)."""
    u = np.array(drive, dtype=float, copy=True)
    if not fault.active_at(t):
        return u
    if fault.kind == "gain_degradation":
        u[fault.target] *= 1.0 - fault.magnitude
    elif fault.kind == "supply_interruption":
        u[fault.target] = 0.0
    return u


def fault_measurement_offset(faults, t: float) -> np.ndarray:
    """Summed sensor_offset contribution of all active faults, per channel."""
    off = np.zeros(N_CHANNELS)
    for f in faults:
        if f.kind == "sensor_offset" and f.active_at(t):
            if f.target == "all":
                off += f.magnitude
            else:
                off[f.target] += f.magnitude
    return off
