"""Step-test experiment design, fractional model fitting, and validation.

The identification recipe mirrors the bench procedure: drive one channel at
a time with a held step, record all 16 outputs, fit a fractional first-order
model to each direct path, and repeat over several amplitudes to expose the
level-dependent model family.  A final simultaneous step on all channels
serves as the validation record for the coupled matrix.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .fractional import FoTransferFunction, gl_step_response
from .plant import ActuatorModel, PlantMatrix, PlantState, SensorModel, sensor_read, step_sim
from .presets import N_CHANNELS

__all__ = [
    "StepDataset",
    "IdentifiedModel",
    "PlantFamily",
    "ExcitationSegment",
    "ExcitationSchedule",
    "NotSettledError",
    "UndefinedFitError",
    "design_experiment",
    "collect_datasets",
    "fit_fopdt",
    "fit_percent",
    "build_family",
    "validate_mimo",
    "save_dataset_csv",
    "load_dataset_csv",
]

ALPHA_GRID_DEFAULT = tuple(np.round(np.arange(0.05, 1.5001, 0.05), 10))


class NotSettledError(ValueError):
    """The tail of the record is still drifting; the step has not settled."""


class UndefinedFitError(ValueError):
    """fit_percent is undefined for a constant reference series."""


@dataclass(frozen=True)
class StepDataset:
    """One held-step record: all 16 outputs sampled on a common time grid.

    channel_in is the driven channel index, or "all" for the simultaneous
    validation step.  responses has shape (16, len(times)), degC.
    """

    channel_in: int | str
    amplitude: float
    times: np.ndarray
    responses: np.ndarray

    def __post_init__(self) -> None:
        t = np.asarray(self.times, dtype=float)
        y = np.asarray(self.responses, dtype=float)
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "responses", y)
        if t.ndim != 1 or t.size < 2 or t[0] != 0.0 or np.any(np.diff(t) <= 0):
            raise ValueError("times must increase strictly from 0")
        if y.shape != (N_CHANNELS, t.size):
            raise ValueError(f"responses must have shape ({N_CHANNELS}, {t.size})")
        if self.channel_in != "all":
            ch = int(self.channel_in)
            if not (0 <= ch < N_CHANNELS):
                raise ValueError("channel_in out of range")
            object.__setattr__(self, "channel_in", ch)
        if self.amplitude == 0.0:
            raise ValueError("amplitude must be nonzero")


@dataclass(frozen=True)
class IdentifiedModel:
    model: FoTransferFunction
    fit_percent: float
    residual_rms: float
    degenerate: bool = False
    ss_gain_estimate: float = float("nan")


@dataclass(frozen=True)
class PlantFamily:
    """Fitted models per excitation amplitude, with parameter envelopes."""

    members: tuple
    amplitudes: tuple

    def __post_init__(self) -> None:
        if len(self.members) == 0:
            raise ValueError("family must be nonempty")
        if len(self.members) != len(self.amplitudes):
            raise ValueError("one amplitude per member required")
        object.__setattr__(self, "members", tuple(self.members))
        object.__setattr__(self, "amplitudes", tuple(float(a) for a in self.amplitudes))

    def envelope(self) -> dict:
        ks = [m.gain_K for m in self.members]
        ts = [m.time_const_T for m in self.members]
        als = [m.order_alpha for m in self.members]
        return {
            "gain_K": (min(ks), max(ks)),
            "time_const_T": (min(ts), max(ts)),
            "order_alpha": (min(als), max(als)),
        }


@dataclass(frozen=True)
class ExcitationSegment:
    channel: int | str
    amplitude: float
    duration: float
    kind: str = "fit"


@dataclass(frozen=True)
class ExcitationSchedule:
    segments: tuple
    settle_time: float

    @property
    def fit_record_count(self) -> int:
        return N_CHANNELS * sum(1 for s in self.segments if s.kind == "fit")


def design_experiment(
    amplitudes,
    settle_time: float,
    char_times=None,
    actuator: ActuatorModel | None = None,
) -> ExcitationSchedule:
    """Sequential one-channel-at-a-time steps plus a final all-channel step.

    Every (channel, amplitude) pair gets one segment of settle_time seconds
    starting from thermal rest; the validation segment drives all channels
    simultaneously at the last amplitude.  When char_times (the plants'
    T**(1/alpha) scales) are supplied, settle_time must cover five of the
    largest; amplitudes are checked against the actuator's full scale.
    """
    amps = tuple(float(a) for a in amplitudes)
    if not amps:
        raise ValueError("need at least one amplitude")
    act = actuator or ActuatorModel()
    full_scale = act.pwm_max * act.drive_scale
    for a in amps:
        if a == 0 or abs(a) > full_scale:
            raise ValueError(f"amplitude {a} outside actuator range ±{full_scale}")
    if settle_time <= 0:
        raise ValueError("settle_time must be positive")
    if char_times is not None:
        bound = 5.0 * max(char_times)
        if settle_time < bound:
            raise ValueError(
                f"settle_time {settle_time} below 5x the slowest scale ({bound:.1f} s)"
            )
    segments = [
        ExcitationSegment(ch, a, settle_time, "fit")
        for a in amps
        for ch in range(N_CHANNELS)
    ]
    segments.append(ExcitationSegment("all", amps[-1], settle_time, "validation"))
    return ExcitationSchedule(tuple(segments), settle_time)


def collect_datasets(
    plant: PlantMatrix,
    schedule: ExcitationSchedule,
    *,
    h: float = 0.5,
    ambient: float = 20.0,
    sensor: SensorModel | None = None,
) -> tuple[list[StepDataset], StepDataset]:
    """Run every schedule segment on the twin, each from thermal rest.

    Returns (fit datasets, validation dataset).  With a sensor model the
    recorded responses are camera measurements; otherwise true temperatures.
    """
    fit_sets: list[StepDataset] = []
    validation: StepDataset | None = None
    for seg in schedule.segments:
        n = int(round(seg.duration / h))
        times = np.arange(n + 1) * h
        drive = np.zeros(N_CHANNELS)
        if seg.channel == "all":
            drive[:] = seg.amplitude
        else:
            drive[seg.channel] = seg.amplitude
        resp = np.empty((N_CHANNELS, n + 1))
        state = PlantState(ambient=ambient)
        first = np.full(N_CHANNELS, ambient)
        resp[:, 0] = (
            sensor_read(first, sensor, 0.0).points if sensor is not None else first
        )
        for k in range(1, n + 1):
            state, temps = step_sim(state, plant, drive, h)
            if sensor is not None:
                temps = sensor_read(temps, sensor, k * h).points
            resp[:, k] = temps
        ds = StepDataset(seg.channel, seg.amplitude, times, resp)
        if seg.kind == "validation":
            validation = ds
        else:
            fit_sets.append(ds)
    if validation is None:
        raise ValueError("schedule has no validation segment")
    return fit_sets, validation


# ---------------------------------------------------------------------------
# fitting

_UNIT_TAU_MAX = 50.0
_UNIT_NPTS = 6000


@lru_cache(maxsize=128)
def _unit_curve(alpha_key: int) -> tuple[np.ndarray, np.ndarray]:
    """Dimensionless unit step response for K=T=1 at a given order.

    Two GL runs at h and h/2 are Richardson-combined to cancel the O(h)
    discretization bias, which otherwise dominates the T estimate.
    """
    alpha = alpha_key / 1e6
    g = FoTransferFunction(1.0, 1.0, alpha, 0.0)
    h = _UNIT_TAU_MAX / _UNIT_NPTS
    _, coarse = gl_step_response(g, 1.0, 2 * h, _UNIT_TAU_MAX)
    t_fine, fine = gl_step_response(g, 1.0, h, _UNIT_TAU_MAX)
    rich = 2.0 * fine[::2] - coarse
    return t_fine[::2], rich


def _series_small_tau(tau: np.ndarray, alpha: float) -> np.ndarray:
    # exact alternating power series of the unit response, valid (and
    # numerically safe) wherever tau**alpha <= 1; linear interpolation of
    # the sampled curve is too coarse near the t=0 singularity
    x = tau**alpha
    total = np.zeros_like(tau)
    xk = x.copy()
    sign = 1.0
    for k in range(1, 400):
        coef = 1.0 / math.gamma(1.0 + alpha * k)
        total += sign * xk * coef
        if coef < 1e-16:
            break
        xk = xk * x
        sign = -sign
    return total


def _unit_response(tau: np.ndarray, alpha: float) -> np.ndarray:
    t_u, y_u = _unit_curve(int(round(alpha * 1e6)))
    y = np.interp(tau, t_u, y_u, left=0.0, right=y_u[-1])
    small = tau <= 1.0
    if np.any(small):
        y[small] = _series_small_tau(tau[small], alpha)
    far = tau > _UNIT_TAU_MAX
    if np.any(far):
        if alpha >= 0.999:
            tail = 1.0
        else:
            tail = 1.0 - tau[far] ** (-alpha) / math.gamma(1.0 - alpha)
        y[far] = tail
    return y


def _affine_ls(y: np.ndarray, ym: np.ndarray) -> tuple[float, float, float]:
    """Best offset b and scale g for y ~ b + g*ym; returns (sse, g, b)."""
    n = y.size
    sm = ym.sum()
    det = n * (ym * ym).sum() - sm * sm
    if det <= 1e-12 * max(1.0, sm * sm):
        b = float(y.mean())
        r = y - b
        return float(r @ r), 0.0, b
    sy = y.sum()
    g = (n * (ym @ y) - sm * sy) / det
    b = (sy - g * sm) / n
    r = y - b - g * ym
    return float(r @ r), float(g), float(b)


def _sse_at(t, y, alpha, log_t_const, delay):
    t_const = 10.0**log_t_const
    tau = (t - delay) / t_const ** (1.0 / alpha)
    tau = np.where(tau > 0, tau, 0.0)
    ym = _unit_response(tau, alpha)
    return _affine_ls(y, ym)


def _golden_log_t(t, y, alpha, delay, lo=-2.0, hi=4.0, iters=48):
    phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - phi * (b - a)
    d = a + phi * (b - a)
    fc = _sse_at(t, y, alpha, c, delay)[0]
    fd = _sse_at(t, y, alpha, d, delay)[0]
    for _ in range(iters):
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - phi * (b - a)
            fc = _sse_at(t, y, alpha, c, delay)[0]
        else:
            a, c, fc = c, d, fd
            d = a + phi * (b - a)
            fd = _sse_at(t, y, alpha, d, delay)[0]
    mid = (a + b) / 2.0
    return mid, _sse_at(t, y, alpha, mid, delay)[0]


def _settled_or_raise(y: np.ndarray) -> tuple[float, float]:
    """Check the record tail is flat; returns (steady value, baseline)."""
    n = y.size
    tail = max(2, n // 10)
    ss = float(np.mean(y[-tail:]))
    prev = float(np.mean(y[-2 * tail : -tail])) if n >= 2 * tail else ss
    base = float(np.median(y[: max(3, n // 100)]))
    swing = abs(ss - base)
    if abs(ss - prev) > 0.02 * swing + 1e-12:
        raise NotSettledError(
            f"tail drift {abs(ss - prev):.4g} exceeds 2% of the step swing {swing:.4g}"
        )
    return ss, base


def fit_percent(y, y_hat) -> float:
    """Normalized-RMS fit score: 100*(1 - ||y-yh|| / ||y-mean(y)||)."""
    ya = np.asarray(y, dtype=float)
    yh = np.asarray(y_hat, dtype=float)
    if ya.shape != yh.shape or ya.size == 0:
        raise ValueError("series must have equal nonzero length")
    denom = np.linalg.norm(ya - ya.mean())
    if denom == 0.0:
        raise UndefinedFitError("reference series is constant")
    return float(100.0 * (1.0 - np.linalg.norm(ya - yh) / denom))


def fit_fopdt(
    times,
    input_amp: float,
    response,
    alpha_grid=None,
    delay_scan=(0.0,),
) -> IdentifiedModel:
    """Fit K/(T s^alpha + 1) e^(-Ls) to one held-step record.

    Derivative-free search: for each candidate delay and each order on the
    grid (then a local bisection refinement of the order), the time constant
    is found by golden section on log10 T; offset and gain fall out of a
    closed-form least-squares fit against the cached dimensionless unit
    curve, making the gain estimate robust to the slow fractional tail.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(response, dtype=float)
    if t.shape != y.shape or t.ndim != 1 or t.size < 10:
        raise ValueError("times and response must be equal-length series")
    if input_amp == 0:
        raise ValueError("input_amp must be nonzero")

    ss, base = _settled_or_raise(y)
    if np.ptp(y) == 0.0:
        return IdentifiedModel(
            model=FoTransferFunction(0.0, 1.0, 1.0, 0.0),
            fit_percent=float("nan"),
            residual_rms=0.0,
            degenerate=True,
            ss_gain_estimate=0.0,
        )

    grid = tuple(alpha_grid) if alpha_grid is not None else ALPHA_GRID_DEFAULT
    best = None  # (sse, alpha, logT, delay)
    for delay in delay_scan:
        for alpha in grid:
            log_t, sse = _golden_log_t(t, y, alpha, delay)
            if best is None or sse < best[0]:
                best = (sse, alpha, log_t, delay)
        # refine the order locally; the grid pitch alone biases T
        da = 0.025
        sse_b, alpha_b, log_b, _ = best if best[3] == delay else (None,) * 4
        if sse_b is not None:
            while da > 0.0015:
                improved = False
                for cand in (alpha_b - da, alpha_b + da):
                    if not (0.001 < cand <= 1.5):
                        continue
                    log_c, sse_c = _golden_log_t(t, y, cand, delay)
                    if sse_c < sse_b:
                        sse_b, alpha_b, log_b = sse_c, cand, log_c
                        improved = True
                if not improved:
                    da /= 2.0
            if sse_b < best[0]:
                best = (sse_b, alpha_b, log_b, delay)

    _, alpha, log_t, delay = best
    t_const = 10.0**log_t
    sse, g, b = _sse_at(t, y, alpha, log_t, delay)
    gain = g / input_amp
    tau = np.where(t - delay > 0, (t - delay) / t_const ** (1.0 / alpha), 0.0)
    y_hat = b + g * _unit_response(tau, alpha)
    return IdentifiedModel(
        model=FoTransferFunction(gain, t_const, alpha, delay),
        fit_percent=fit_percent(y, y_hat),
        residual_rms=float(np.sqrt(np.mean((y - y_hat) ** 2))),
        degenerate=False,
        ss_gain_estimate=(ss - b) / input_amp,
    )


def build_family(datasets, channel: int) -> PlantFamily:
    """One fitted member per amplitude for the given channel's direct path."""
    sets = list(datasets)
    if len(sets) < 2:
        raise ValueError("need at least two amplitudes to expose the family")
    members, amps = [], []
    for ds in sets:
        if ds.channel_in != channel:
            raise ValueError(f"dataset drives channel {ds.channel_in}, not {channel}")
        fitted = fit_fopdt(ds.times, ds.amplitude, ds.responses[channel])
        members.append(fitted.model)
        amps.append(ds.amplitude)
    return PlantFamily(tuple(members), tuple(amps))


def validate_mimo(
    plant: PlantMatrix, run: StepDataset, ambient: float = 20.0
) -> np.ndarray:
    """Per-output fit scores of the coupled model against a validation run."""
    if run.channel_in != "all":
        raise ValueError("validation requires the simultaneous all-channel record")
    h = float(run.times[1] - run.times[0])
    if not np.allclose(np.diff(run.times), h):
        raise ValueError("validation record must be uniformly sampled")
    drive = np.full(N_CHANNELS, run.amplitude)
    state = PlantState(ambient=ambient)
    sim = np.empty_like(run.responses)
    sim[:, 0] = ambient
    for k in range(1, run.times.size):
        state, temps = step_sim(state, plant, drive, h)
        sim[:, k] = temps
    return np.array(
        [fit_percent(run.responses[i], sim[i]) for i in range(N_CHANNELS)]
    )


# ---------------------------------------------------------------------------
# dataset CSV round trip: header t,u1..u16,y1..y16

def save_dataset_csv(dataset: StepDataset, path, *, seed: int | None = None) -> None:
    u = np.zeros(N_CHANNELS)
    if dataset.channel_in == "all":
        u[:] = dataset.amplitude
    else:
        u[dataset.channel_in] = dataset.amplitude
    header = ["t"] + [f"u{i+1}" for i in range(N_CHANNELS)] + [
        f"y{i+1}" for i in range(N_CHANNELS)
    ]
    with open(path, "w", newline="") as fh:
        if seed is not None:
            fh.write(f"# seed={int(seed)}\n")
        w = csv.writer(fh)
        w.writerow(header)
        for k, t in enumerate(dataset.times):
            w.writerow(
                [f"{t:.6f}"]
                + [f"{v:.6f}" for v in u]
                + [f"{v:.6f}" for v in dataset.responses[:, k]]
            )


def load_dataset_csv(path) -> StepDataset:
    with open(path, newline="") as fh:
        r = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(r)
        expect = ["t"] + [f"u{i+1}" for i in range(N_CHANNELS)] + [
            f"y{i+1}" for i in range(N_CHANNELS)
        ]
        if header != expect:
            raise ValueError("unrecognized dataset CSV header")
        rows = np.array([[float(v) for v in row] for row in r])
    times = rows[:, 0]
    u = rows[0, 1 : 1 + N_CHANNELS]
    y = rows[:, 1 + N_CHANNELS :].T
    driven = np.nonzero(u)[0]
    if driven.size == N_CHANNELS and np.allclose(u, u[0]):
        channel: int | str = "all"
        amp = float(u[0])
    elif driven.size == 1:
        channel = int(driven[0])
        amp = float(u[driven[0]])
    else:
        raise ValueError("drive pattern is neither single-channel nor all-channel")
    return StepDataset(channel, amp, times, y)
