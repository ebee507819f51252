"""Discrete-time decentralized closed loop over the coupled thermal array.

Sixteen independent PI controllers, one per cell, read the camera points and
drive their own element.  The loop runs at a fixed control period (default
0.5 s) with the drive zero-order held while the plant is advanced at a finer
internal step.  Controller output is integer-free drive counts clamped to
the PWM stage limits, with conditional anti-windup: the integrator does not
accumulate on steps where the output is saturated and the increment would
push it further into saturation.

Scenarios script setpoint schedules, injected faults and scheduled FFC
events; a run yields an immutable RunLog with the full per-channel history
and an event trail, reproducible bit for bit from (scenario, seed).
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace

import numpy as np

from .plant import (
    ActuatorModel,
    DEFAULT_COUPLING,
    CouplingConfig,
    FaultSpec,
    N_CHANNELS,
    PlantMatrix,
    PlantState,
    SensorModel,
    TEMP_MAX,
    TEMP_MIN,
    ThermalFrame,
    apply_fault,
    fault_measurement_offset,
    sensor_read,
    step_sim,
)
from .presets import DESIGNED_PI_GAINS
from .tuner import PiGains

__all__ = [
    "DiscretePiState",
    "Scenario",
    "RunLog",
    "LoopStepper",
    "pi_step",
    "run_scenario",
    "uniformity_metric",
    "constant_setpoints",
    "step_setpoints",
    "controllers_from_gains",
    "standard_controllers",
    "save_runlog_csv",
    "load_runlog_csv",
    "save_events_jsonl",
]

DEFAULT_TS_CONTROL = 0.5
DEFAULT_PLANT_STEP = 0.1


@dataclass(frozen=True)
class DiscretePiState:
    """State of one discrete PI channel between control steps.

    prev_error is carried because the integrator uses the trapezoid rule;
    the first step therefore contributes a half-interval of area.
    """

    gains: PiGains
    integrator: float = 0.0   # accumulated degC*s
    last_output: float = 0.0  # drive counts
    ts: float = DEFAULT_TS_CONTROL
    prev_error: float = 0.0   # degC

    def __post_init__(self) -> None:
        if self.ts <= 0:
            raise ValueError("ts must be positive")


def pi_step(
    state: DiscretePiState,
    setpoint: float,
    measurement: float,
    limit: float = 4000.0,
) -> tuple[DiscretePiState, float]:
    """One control update: u = K e + I * trapezoid(e), clamped to +-limit.

    A non-finite measurement holds the previous output and leaves the state
    untouched; the caller is expected to log the event.
    """
    if not math.isfinite(measurement):
        return state, state.last_output
    k_p = state.gains.prop_K
    k_i = state.gains.integ_I
    error = setpoint - measurement
    inc = state.ts * (error + state.prev_error) / 2.0
    candidate = k_p * error + k_i * (state.integrator + inc)
    freeze = (candidate > limit and inc > 0.0) or (candidate < -limit and inc < 0.0)
    integ = state.integrator if freeze else state.integrator + inc
    out = min(max(k_p * error + k_i * integ, -limit), limit)
    new_state = replace(
        state, integrator=integ, last_output=out, prev_error=error
    )
    return new_state, out


def _validate_schedule(channel: int, schedule, duration: float) -> tuple:
    knots = tuple((float(t), float(v)) for t, v in schedule)
    if not knots:
        raise ValueError(f"channel {channel}: empty setpoint schedule")
    if knots[0][0] != 0.0:
        raise ValueError(f"channel {channel}: schedule must start at t=0")
    last = -1.0
    for t, v in knots:
        if t < last:
            raise ValueError(f"channel {channel}: schedule times must not decrease")
        if t > duration:
            raise ValueError(f"channel {channel}: schedule knot beyond duration")
        if not (TEMP_MIN <= v <= TEMP_MAX):
            raise ValueError(
                f"channel {channel}: setpoint {v} outside "
                f"[{TEMP_MIN:g}, {TEMP_MAX:g}] degC"
            )
        last = t
    return knots


def _schedule_value(knots, t: float) -> float:
    value = knots[0][1]
    for kt, kv in knots:
        if kt <= t:
            value = kv
        else:
            break
    return value


@dataclass(frozen=True)
class Scenario:
    """Script for one closed-loop run.

    setpoints holds one piecewise-constant schedule per channel as (time,
    value) knots; the value holds from its knot time until the next knot.
    seed keys the sensor noise stream (it overrides the sensor config's own
    seed so that (scenario, seed) alone pins the whole run).
    """

    duration: float
    setpoints: tuple
    faults: tuple = ()
    ffc_events: tuple = ()
    seed: int = 0
    ts_control: float = DEFAULT_TS_CONTROL
    sensor: SensorModel = SensorModel()
    actuator: ActuatorModel = ActuatorModel()
    coupling: CouplingConfig = DEFAULT_COUPLING
    ambient: float = 20.0

    def __post_init__(self) -> None:
        if self.duration <= 0:
            raise ValueError("duration must be positive")
        if self.ts_control <= 0:
            raise ValueError("ts_control must be positive")
        if len(self.setpoints) != N_CHANNELS:
            raise ValueError(f"need {N_CHANNELS} setpoint schedules")
        object.__setattr__(
            self,
            "setpoints",
            tuple(
                _validate_schedule(ch, sched, self.duration)
                for ch, sched in enumerate(self.setpoints)
            ),
        )
        for f in self.faults:
            if not isinstance(f, FaultSpec):
                raise TypeError("faults must be FaultSpec instances")
        for t in self.ffc_events:
            if t < 0:
                raise ValueError("ffc event times must be >= 0")
        object.__setattr__(self, "faults", tuple(self.faults))
        object.__setattr__(self, "ffc_events", tuple(float(t) for t in self.ffc_events))

    def setpoint_vector(self, t: float) -> np.ndarray:
        return np.array([_schedule_value(s, t) for s in self.setpoints])


def constant_setpoints(value: float) -> tuple:
    """All 16 channels held at one value for the whole run."""
    return tuple(((0.0, float(value)),) for _ in range(N_CHANNELS))


def step_setpoints(before: float, after: float, t_step: float) -> tuple:
    """All 16 channels stepped from one value to another at t_step."""
    if t_step <= 0.0:
        return constant_setpoints(after)
    return tuple(
        ((0.0, float(before)), (float(t_step), float(after)))
        for _ in range(N_CHANNELS)
    )


def standard_controllers(scenario: Scenario, gains_table=None) -> tuple:
    """Controllers for a scenario from a (prop, integ) table in normalized
    units; defaults to the frozen tuner output for the bench plant."""
    if gains_table is None:
        gains_table = DESIGNED_PI_GAINS
    return controllers_from_gains(
        [PiGains(p, i) for p, i in gains_table],
        scenario.actuator,
        scenario.ts_control,
    )


def controllers_from_gains(
    gains_list, actuator: ActuatorModel | None = None, ts: float = DEFAULT_TS_CONTROL
) -> tuple:
    """Build per-channel controller states from normalized-unit PI gains.

    The tuner works in the plant's normalized drive units; the loop works in
    counts.  Dividing by drive_scale converts degC-to-normalized gains into
    degC-to-counts gains so the physical loop matches the designed one.
    """
    act = actuator or ActuatorModel()
    out = []
    for g in gains_list:
        out.append(
            DiscretePiState(
                gains=PiGains(g.prop_K / act.drive_scale, g.integ_I / act.drive_scale),
                ts=ts,
            )
        )
    if len(out) != N_CHANNELS:
        raise ValueError(f"need {N_CHANNELS} gain pairs")
    return tuple(out)


@dataclass(frozen=True)
class RunLog:
    """Complete record of one scenario run, sampled at the control period."""

    times: np.ndarray
    setpoints: np.ndarray   # (n, 16) degC
    measured: np.ndarray    # (n, 16) degC, camera points
    true_temps: np.ndarray  # (n, 16) degC, physical cell temperatures
    drives: np.ndarray      # (n, 16) counts
    events: tuple           # (t, kind, detail) triples, time-ordered
    uniformity: np.ndarray  # (n,) max-min of measured points

    def __post_init__(self) -> None:
        n = np.asarray(self.times).size
        for name in ("setpoints", "measured", "true_temps", "drives"):
            arr = np.asarray(getattr(self, name))
            if arr.shape != (n, N_CHANNELS):
                raise ValueError(f"{name} must have shape (n, {N_CHANNELS})")
        if np.any(np.abs(np.asarray(self.drives)) > 4000.0):
            raise ValueError("drive log exceeds +-4000 counts")
        object.__setattr__(self, "events", tuple(self.events))


def uniformity_metric(frame: ThermalFrame) -> float:
    """Spread of the camera points: max minus min, degC."""
    return float(np.max(frame.points) - np.min(frame.points))


class LoopStepper:
    """Stepwise engine behind run_scenario and the live service.

    Owns the full co-simulation state and advances one control step per
    call.  run_scenario drives it in a tight loop; the service paces it
    against a wall clock and mutates setpoints, gains and faults between
    steps, which keeps command application aligned to control boundaries by
    construction.
    """

    def __init__(self, plant: PlantMatrix, controllers, scenario: Scenario):
        controllers = tuple(controllers)
        if len(controllers) != N_CHANNELS:
            raise ValueError(f"need {N_CHANNELS} controllers")
        ts = scenario.ts_control
        for i, c in enumerate(controllers):
            if abs(c.ts - ts) > 1e-12:
                raise ValueError(
                    f"controller {i} period {c.ts} != scenario ts_control {ts}"
                )
        frame_period = 1.0 / scenario.sensor.frame_rate
        if frame_period > ts + 1e-12:
            raise ValueError(
                "sensor frame period exceeds the control period; the loop "
                "would re-consume stale frames"
            )
        substeps = int(round(ts / DEFAULT_PLANT_STEP))
        h = ts / substeps
        if not (0.01 <= h <= 2.0):
            raise ValueError("ts_control incompatible with the plant substep range")

        self.plant = plant
        self.scenario = scenario
        self.ts = ts
        self.substeps = substeps
        self.h = h
        self.sensor = replace(scenario.sensor, rng_seed=scenario.seed)
        self.limit = float(scenario.actuator.pwm_max)
        self.n_steps = int(round(scenario.duration / ts))
        self._initial_controllers = controllers
        self.reset()

    def reset(self) -> None:
        """Back to t=0: plant state, controllers, overrides and logs."""
        self.k = 0
        self.state = PlantState(ambient=self.scenario.ambient)
        self.true_now = np.full(N_CHANNELS, self.scenario.ambient)
        self.ctl = list(self._initial_controllers)
        self.faults = list(self.scenario.faults)
        self.events: list = []
        self._fault_was_active = [False] * len(self.faults)
        self._saturated = [False] * N_CHANNELS
        self._setpoint_override: dict[int, float] = {}
        self._times: list = []
        self._sp_log: list = []
        self._meas_log: list = []
        self._true_log: list = []
        self._u_log: list = []

    @property
    def t(self) -> float:
        """Simulation time of the next control step."""
        return self.k * self.ts

    @property
    def finished(self) -> bool:
        return self.k >= self.n_steps

    # -- runtime command hooks (service); all take effect from the next step

    def set_setpoint(self, channel, value: float) -> None:
        v = float(value)
        if not (TEMP_MIN <= v <= TEMP_MAX):
            raise ValueError(
                f"setpoint {v} outside [{TEMP_MIN:g}, {TEMP_MAX:g}] degC"
            )
        channels = range(N_CHANNELS) if channel == "all" else (int(channel),)
        for ch in channels:
            if not (0 <= ch < N_CHANNELS):
                raise ValueError("channel out of range")
            self._setpoint_override[ch] = v
        self.events.append((self.t, "command", f"setpoint ch={channel} value={v:g}"))

    def set_gains(self, channel: int, gains: PiGains) -> None:
        ch = int(channel)
        if not (0 <= ch < N_CHANNELS):
            raise ValueError("channel out of range")
        self.ctl[ch] = replace(self.ctl[ch], gains=gains)
        self.events.append(
            (self.t, "command",
             f"gains ch={ch} prop={gains.prop_K:g} integ={gains.integ_I:g}")
        )

    def inject_fault(self, fault: FaultSpec) -> None:
        self.faults.append(fault)
        self._fault_was_active.append(False)
        self.events.append(
            (self.t, "command", f"fault {fault.kind} target={fault.target}")
        )

    def setpoint_vector(self, t: float) -> np.ndarray:
        sp = self.scenario.setpoint_vector(t)
        for ch, v in self._setpoint_override.items():
            sp[ch] = v
        return sp

    def camera_frame(self, t: float, true_temps=None, include_image: bool = False):
        """A broadcast frame at an arbitrary instant; no effect on the loop."""
        truth = self.true_now if true_temps is None else true_temps
        return sensor_read(
            truth,
            self.sensor,
            t,
            extra_offset=fault_measurement_offset(self.faults, t),
            ffc_times=self.scenario.ffc_events,
            include_image=include_image,
            ambient=self.scenario.ambient,
        )

    def step(self, on_substep=None):
        """Advance one control period; returns (frame, setpoints, drives).

        on_substep(sim_time, true_temps) fires after each plant substep,
        letting a caller observe intermediate truth without influencing it.
        """
        if self.finished:
            raise RuntimeError("scenario complete")
        t = self.t
        sp = self.setpoint_vector(t)
        events = self.events

        for fi, fault in enumerate(self.faults):
            active = fault.active_at(t)
            if active and not self._fault_was_active[fi]:
                events.append((t, "fault_on", f"{fault.kind} target={fault.target}"))
            elif self._fault_was_active[fi] and not active:
                events.append((t, "fault_off", f"{fault.kind} target={fault.target}"))
            self._fault_was_active[fi] = active

        frame = sensor_read(
            self.true_now,
            self.sensor,
            t,
            extra_offset=fault_measurement_offset(self.faults, t),
            ffc_times=self.scenario.ffc_events,
            ambient=self.scenario.ambient,
        )
        if frame.ffc_event:
            events.append((t, "ffc", f"frame={self.sensor.frame_index(t)}"))
        meas = frame.points

        u = np.empty(N_CHANNELS)
        for i in range(N_CHANNELS):
            if not math.isfinite(meas[i]):
                events.append((t, "bad_measurement", f"ch{i}"))
            self.ctl[i], u[i] = pi_step(self.ctl[i], sp[i], meas[i], self.limit)
            now_sat = abs(u[i]) >= self.limit - 1e-9
            if now_sat and not self._saturated[i]:
                events.append((t, "saturation_on", f"ch{i} u={u[i]:+.0f}"))
            elif self._saturated[i] and not now_sat:
                events.append((t, "saturation_off", f"ch{i}"))
            self._saturated[i] = now_sat

        faulted = u
        for fault in self.faults:
            faulted = apply_fault(faulted, fault, t)
        drive_norm = self.scenario.actuator.to_drive(faulted)

        self._times.append(t)
        self._sp_log.append(sp)
        self._meas_log.append(meas)
        self._true_log.append(self.true_now)
        self._u_log.append(u)

        for si in range(self.substeps):
            self.state, self.true_now = step_sim(
                self.state, self.plant, drive_norm, self.h
            )
            if on_substep is not None:
                on_substep(t + (si + 1) * self.h, self.true_now)
        self.k += 1
        return frame, sp, u

    def runlog(self) -> RunLog:
        n = len(self._times)
        meas = np.asarray(self._meas_log).reshape(n, N_CHANNELS)
        return RunLog(
            times=np.asarray(self._times),
            setpoints=np.asarray(self._sp_log).reshape(n, N_CHANNELS),
            measured=meas,
            true_temps=np.asarray(self._true_log).reshape(n, N_CHANNELS),
            drives=np.asarray(self._u_log).reshape(n, N_CHANNELS),
            events=tuple(self.events),
            uniformity=meas.max(axis=1) - meas.min(axis=1),
        )


def run_scenario(plant: PlantMatrix, controllers, scenario: Scenario) -> RunLog:
    """Fixed-step co-simulation of the 16-channel loop.

    Controllers are sampled-and-held at ts_control; the plant advances in
    0.1 s substeps under the held drive.  The camera is read once per
    control step at the step instant.  Everything downstream of the seed is
    deterministic.
    """
    stepper = LoopStepper(plant, controllers, scenario)
    while not stepper.finished:
        stepper.step()
    return stepper.runlog()


# ---------------------------------------------------------------------------
# RunLog export: one flat CSV for the series, JSON lines for the events.

def save_runlog_csv(path, log: RunLog, *, seed: int | None = None) -> None:
    header = (
        ["t"]
        + [f"sp{i + 1}" for i in range(N_CHANNELS)]
        + [f"y{i + 1}" for i in range(N_CHANNELS)]
        + [f"u{i + 1}" for i in range(N_CHANNELS)]
    )
    with open(path, "w", newline="") as fh:
        if seed is not None:
            fh.write(f"# seed={int(seed)}\n")
        writer = csv.writer(fh)
        writer.writerow(header)
        for k in range(log.times.size):
            row = (
                [f"{log.times[k]:.10g}"]
                + [f"{v:.10g}" for v in log.setpoints[k]]
                + [f"{v:.10g}" for v in log.measured[k]]
                + [f"{v:.10g}" for v in log.drives[k]]
            )
            writer.writerow(row)


def load_runlog_csv(path) -> dict:
    """Arrays back from a runlog CSV: keys t, sp, y, u."""
    with open(path, newline="") as fh:
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        header = next(reader, None)
        expected = (
            ["t"]
            + [f"sp{i + 1}" for i in range(N_CHANNELS)]
            + [f"y{i + 1}" for i in range(N_CHANNELS)]
            + [f"u{i + 1}" for i in range(N_CHANNELS)]
        )
        if header != expected:
            raise ValueError("unrecognized runlog CSV header")
        rows = [[float(x) for x in row] for row in reader if row]
    data = np.asarray(rows)
    return {
        "t": data[:, 0],
        "sp": data[:, 1 : 1 + N_CHANNELS],
        "y": data[:, 1 + N_CHANNELS : 1 + 2 * N_CHANNELS],
        "u": data[:, 1 + 2 * N_CHANNELS :],
    }


def save_events_jsonl(path, log: RunLog, *, seed: int | None = None) -> None:
    with open(path, "w") as fh:
        if seed is not None:
            fh.write(json.dumps({"t": 0.0, "kind": "meta", "detail": f"seed={int(seed)}"}) + "\n")
        for t, kind, detail in log.events:
            fh.write(json.dumps({"t": t, "kind": kind, "detail": detail}) + "\n")
