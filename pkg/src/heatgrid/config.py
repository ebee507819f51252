"""TOML configuration for the CLI workflows and the streaming service.

One file can describe everything a session needs; sections mirror the
domain types they populate and every key is checked, so a typo fails fast
with the offending section.key named instead of being silently ignored.

    [scenario]            duration, seed, ts_control, ambient, ffc_events
    [scenario.setpoints]  kind = "constant" | "step" | "explicit"
    [[scenario.faults]]   kind, target, onset, magnitude, duration
    [sensor]              camera model fields
    [actuator]            PWM stage fields
    [coupling]            lattice coupling fields
    [session]             stream_rate, include_image, listen_endpoint
    [tuning]              controller design targets
    [identify]            excitation amplitudes and record length
    [plant]               16-entry direct-path parameter overrides
    [gap]                 model family for the metric workflow
    [simulate]            gains_csv source for the loop
    [export]              input artifact paths for plots

Any section may be omitted; defaults reproduce the bench rig and its
standard 13-degree step scenario.  A --seed given on the command line wins
over [scenario].seed.
"""
from __future__ import annotations

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from dataclasses import dataclass, replace

from .fractional import FoTransferFunction
from .loop import Scenario, step_setpoints
from .plant import (
    ActuatorModel,
    CouplingConfig,
    FaultSpec,
    N_CHANNELS,
    SensorModel,
)
from .presets import DIAG_PARAMS, FAMILY_MEMBERS
from .tuner import TuningSpec

__all__ = [
    "ConfigError",
    "SessionConfig",
    "IdentifyPlan",
    "ExportInputs",
    "AppConfig",
    "load_config",
    "default_config",
    "parse_endpoint",
    "ENDPOINT_ENV_VAR",
]

# Environment override for [session].listen_endpoint, checked by `serve`.
ENDPOINT_ENV_VAR = "HEATGRID_ENDPOINT"

DEFAULT_ENDPOINT = "127.0.0.1:7410"


class ConfigError(ValueError):
    """Configuration rejected; the message names the offending key."""


def parse_endpoint(text: str) -> tuple[str, int]:
    """'host:port' -> (host, port); host may be empty for all interfaces."""
    host, sep, port_s = str(text).rpartition(":")
    if not sep:
        raise ConfigError(f"endpoint {text!r} must look like host:port")
    try:
        port = int(port_s)
    except ValueError:
        raise ConfigError(f"endpoint port {port_s!r} is not an integer") from None
    if not (0 <= port <= 65535):
        raise ConfigError(f"endpoint port {port} out of range")
    return host or "0.0.0.0", port


# The out-of-the-box scenario: uniform 20 -> 33 degC step at t=10 s over a
# 1300 s horizon with one commanded FFC late in the run.
_SCENARIO_DEFAULTS = {
    "duration": 1300.0,
    "seed": 42,
    "ts_control": 0.5,
    "ambient": 20.0,
    "ffc_events": (1061.0,),
}


@dataclass(frozen=True)
class SessionConfig:
    """What the streaming service runs: a scenario plus transport settings.

    stream_rate may not exceed the camera frame rate; broadcasting the same
    frame twice would let clients mistake duplication for new data.
    """

    scenario: Scenario
    stream_rate: float = 9.0
    include_image: bool = False
    listen_endpoint: str = DEFAULT_ENDPOINT

    def __post_init__(self) -> None:
        if self.stream_rate <= 0:
            raise ConfigError("stream_rate must be positive")
        if self.stream_rate > self.scenario.sensor.frame_rate + 1e-9:
            raise ConfigError(
                f"stream_rate {self.stream_rate:g} exceeds the sensor frame "
                f"rate {self.scenario.sensor.frame_rate:g}"
            )
        parse_endpoint(self.listen_endpoint)


@dataclass(frozen=True)
class IdentifyPlan:
    """Excitation program for the identification workflow."""

    amplitudes: tuple = (8.0,)
    settle_time: float = 2200.0
    sample_period: float = 0.5
    use_sensor: bool = True

    def __post_init__(self) -> None:
        if not self.amplitudes:
            raise ConfigError("identify.amplitudes must be non-empty")
        if self.settle_time <= 0 or self.sample_period <= 0:
            raise ConfigError("identify times must be positive")


@dataclass(frozen=True)
class ExportInputs:
    """Artifact paths the export workflow reads; None skips that product."""

    runlog: str | None = None
    gap: str | None = None
    gains_csv: str | None = None
    bode_channel: int = 0


@dataclass(frozen=True)
class AppConfig:
    scenario: Scenario
    session: SessionConfig
    tuning: TuningSpec
    identify: IdentifyPlan
    diag_params: tuple
    gap_members: tuple
    gap_labels: tuple | None
    sim_gains_csv: str | None
    export: ExportInputs
    source: str | None = None


# ---------------------------------------------------------------- parsing

def _check_keys(section: dict, name: str, allowed) -> None:
    for key in section:
        if key not in allowed:
            raise ConfigError(f"unknown key {key!r} in section [{name}]")


def _num(section, name, key, default):
    v = section.get(key, default)
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ConfigError(f"{name}.{key} must be a number")
    return float(v)


def _integer(section, name, key, default):
    v = section.get(key, default)
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(f"{name}.{key} must be an integer")
    return v


def _boolean(section, name, key, default):
    v = section.get(key, default)
    if not isinstance(v, bool):
        raise ConfigError(f"{name}.{key} must be true or false")
    return v


def _string(section, name, key, default):
    v = section.get(key, default)
    if v is not None and not isinstance(v, str):
        raise ConfigError(f"{name}.{key} must be a string")
    return v


def _num_list(section, name, key, default):
    v = section.get(key, default)
    if not isinstance(v, (list, tuple)) or any(
        isinstance(x, bool) or not isinstance(x, (int, float)) for x in v
    ):
        raise ConfigError(f"{name}.{key} must be a list of numbers")
    return tuple(float(x) for x in v)


def _pair(section, name, key, default):
    v = _num_list(section, name, key, default)
    if len(v) != 2:
        raise ConfigError(f"{name}.{key} must have exactly two entries")
    return v


def _wrap(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"[{name}] {exc}") from None


def _parse_setpoints(raw: dict):
    name = "scenario.setpoints"
    kind = _string(raw, name, "kind", "step")
    if kind == "constant":
        _check_keys(raw, name, ("kind", "value"))
        value = _num(raw, name, "value", 20.0)
        return tuple(((0.0, value),) for _ in range(N_CHANNELS))
    if kind == "step":
        _check_keys(raw, name, ("kind", "before", "after", "at"))
        return step_setpoints(
            _num(raw, name, "before", 20.0),
            _num(raw, name, "after", 33.0),
            _num(raw, name, "at", 10.0),
        )
    if kind == "explicit":
        _check_keys(raw, name, ("kind", "knots"))
        knots = raw.get("knots")
        if not isinstance(knots, list) or len(knots) != N_CHANNELS:
            raise ConfigError(f"{name}.knots must list {N_CHANNELS} channel schedules")
        out = []
        for ch, sched in enumerate(knots):
            if not isinstance(sched, list) or not sched:
                raise ConfigError(f"{name}.knots[{ch}] must be a non-empty list")
            pairs = []
            for knot in sched:
                if not isinstance(knot, list) or len(knot) != 2:
                    raise ConfigError(f"{name}.knots[{ch}] entries must be [t, value]")
                pairs.append((float(knot[0]), float(knot[1])))
            out.append(tuple(pairs))
        return tuple(out)
    raise ConfigError(f"{name}.kind must be constant, step or explicit")


def _parse_faults(raw_list):
    faults = []
    for i, raw in enumerate(raw_list):
        name = f"scenario.faults[{i}]"
        if not isinstance(raw, dict):
            raise ConfigError(f"{name} must be a table")
        _check_keys(raw, name, ("kind", "target", "onset", "magnitude", "duration"))
        kind = _string(raw, name, "kind", None)
        if kind is None:
            raise ConfigError(f"{name}.kind is required")
        target = raw.get("target")
        if target != "all":
            target = _integer(raw, name, "target", None)
            if target is None:
                raise ConfigError(f"{name}.target is required")
        duration = raw.get("duration")
        faults.append(
            _wrap(
                name,
                FaultSpec,
                kind=kind,
                target=target,
                onset=_num(raw, name, "onset", 0.0),
                magnitude=_num(raw, name, "magnitude", 0.0),
                duration=None if duration is None else _num(raw, name, "duration", None),
            )
        )
    return tuple(faults)


_SENSOR_KEYS = (
    "noise_sigma", "quantization", "accuracy_band", "ffc_period",
    "ffc_offset", "frame_rate", "rng_seed", "drift_amp", "drift_period",
)
_ACTUATOR_KEYS = ("pwm_min", "pwm_max", "drive_scale")
_COUPLING_KEYS = ("kappa", "tau_growth", "lag_per_dist")
_TUNING_KEYS = (
    "pm_range_deg", "gm_range_db", "crossover_target_w", "flat_phase_tol",
    "hf_noise_bound_db", "hf_noise_w", "dist_rej_bound_db", "dist_rej_w",
    "itae_horizon", "itae_step",
)


def _parse_sensor(raw: dict) -> SensorModel:
    _check_keys(raw, "sensor", _SENSOR_KEYS)
    d = SensorModel()
    return _wrap(
        "sensor",
        SensorModel,
        noise_sigma=_num(raw, "sensor", "noise_sigma", d.noise_sigma),
        quantization=_num(raw, "sensor", "quantization", d.quantization),
        accuracy_band=_num(raw, "sensor", "accuracy_band", d.accuracy_band),
        ffc_period=_num(raw, "sensor", "ffc_period", d.ffc_period),
        ffc_offset=_num(raw, "sensor", "ffc_offset", d.ffc_offset),
        frame_rate=_num(raw, "sensor", "frame_rate", d.frame_rate),
        rng_seed=_integer(raw, "sensor", "rng_seed", d.rng_seed),
        drift_amp=_num(raw, "sensor", "drift_amp", d.drift_amp),
        drift_period=_num(raw, "sensor", "drift_period", d.drift_period),
    )


def _parse_actuator(raw: dict) -> ActuatorModel:
    _check_keys(raw, "actuator", _ACTUATOR_KEYS)
    d = ActuatorModel()
    return _wrap(
        "actuator",
        ActuatorModel,
        pwm_min=_num(raw, "actuator", "pwm_min", d.pwm_min),
        pwm_max=_num(raw, "actuator", "pwm_max", d.pwm_max),
        drive_scale=_num(raw, "actuator", "drive_scale", d.drive_scale),
    )


def _parse_coupling(raw: dict) -> CouplingConfig:
    _check_keys(raw, "coupling", _COUPLING_KEYS)
    d = CouplingConfig()
    return _wrap(
        "coupling",
        CouplingConfig,
        kappa=_num(raw, "coupling", "kappa", d.kappa),
        tau_growth=_num(raw, "coupling", "tau_growth", d.tau_growth),
        lag_per_dist=_num(raw, "coupling", "lag_per_dist", d.lag_per_dist),
    )


def _parse_tuning(raw: dict) -> TuningSpec:
    _check_keys(raw, "tuning", _TUNING_KEYS)
    d = TuningSpec()
    target = raw.get("crossover_target_w")
    return _wrap(
        "tuning",
        TuningSpec,
        pm_range_deg=_pair(raw, "tuning", "pm_range_deg", d.pm_range_deg),
        gm_range_db=_pair(raw, "tuning", "gm_range_db", d.gm_range_db),
        crossover_target_w=None if target is None else _num(raw, "tuning", "crossover_target_w", None),
        flat_phase_tol=_num(raw, "tuning", "flat_phase_tol", d.flat_phase_tol),
        hf_noise_bound_db=_num(raw, "tuning", "hf_noise_bound_db", d.hf_noise_bound_db),
        hf_noise_w=_num(raw, "tuning", "hf_noise_w", d.hf_noise_w),
        dist_rej_bound_db=_num(raw, "tuning", "dist_rej_bound_db", d.dist_rej_bound_db),
        dist_rej_w=_num(raw, "tuning", "dist_rej_w", d.dist_rej_w),
        itae_horizon=_num(raw, "tuning", "itae_horizon", d.itae_horizon),
        itae_step=_num(raw, "tuning", "itae_step", d.itae_step),
    )


def _parse_models(rows, name) -> tuple:
    out = []
    for i, row in enumerate(rows):
        if not isinstance(row, list) or len(row) != 4:
            raise ConfigError(f"{name}[{i}] must be [K, T, alpha, L]")
        out.append(_wrap(name, FoTransferFunction, *(float(v) for v in row)))
    return tuple(out)


def _parse_plant(raw: dict) -> tuple:
    _check_keys(raw, "plant", ("gains", "time_consts", "alphas", "delays"))
    if not raw:
        return DIAG_PARAMS
    for key in ("gains", "time_consts", "alphas"):
        if key not in raw:
            raise ConfigError("[plant] overrides need gains, time_consts and alphas")
    gains = _num_list(raw, "plant", "gains", None)
    tcs = _num_list(raw, "plant", "time_consts", None)
    alphas = _num_list(raw, "plant", "alphas", None)
    delays = _num_list(raw, "plant", "delays", tuple(0.0 for _ in gains))
    for key, vals in (("gains", gains), ("time_consts", tcs),
                      ("alphas", alphas), ("delays", delays)):
        if len(vals) != N_CHANNELS:
            raise ConfigError(f"plant.{key} must list {N_CHANNELS} values")
    return tuple(
        _wrap("plant", FoTransferFunction, k, t, a, l)
        for k, t, a, l in zip(gains, tcs, alphas, delays)
    )


def _parse_scenario(raw: dict, sensor, actuator, coupling) -> Scenario:
    _check_keys(
        raw, "scenario",
        ("duration", "seed", "ts_control", "ambient", "ffc_events",
         "setpoints", "faults"),
    )
    sp_raw = raw.get("setpoints", {})
    if not isinstance(sp_raw, dict):
        raise ConfigError("scenario.setpoints must be a table")
    faults_raw = raw.get("faults", [])
    if not isinstance(faults_raw, list):
        raise ConfigError("scenario.faults must be an array of tables")
    d = _SCENARIO_DEFAULTS
    return _wrap(
        "scenario",
        Scenario,
        duration=_num(raw, "scenario", "duration", d["duration"]),
        setpoints=_parse_setpoints(sp_raw),
        faults=_parse_faults(faults_raw),
        ffc_events=_num_list(raw, "scenario", "ffc_events", d["ffc_events"]),
        seed=_integer(raw, "scenario", "seed", d["seed"]),
        ts_control=_num(raw, "scenario", "ts_control", d["ts_control"]),
        sensor=sensor,
        actuator=actuator,
        coupling=coupling,
        ambient=_num(raw, "scenario", "ambient", d["ambient"]),
    )


_TOP_SECTIONS = (
    "scenario", "sensor", "actuator", "coupling", "session", "tuning",
    "identify", "plant", "gap", "simulate", "export",
)


def _build(data: dict, source: str | None, seed_override: int | None) -> AppConfig:
    for key in data:
        if key not in _TOP_SECTIONS:
            raise ConfigError(f"unknown section [{key}]")
    for key in _TOP_SECTIONS:
        if key in data and not isinstance(data[key], dict):
            raise ConfigError(f"[{key}] must be a table")

    sensor = _parse_sensor(data.get("sensor", {}))
    actuator = _parse_actuator(data.get("actuator", {}))
    coupling = _parse_coupling(data.get("coupling", {}))
    scenario = _parse_scenario(data.get("scenario", {}), sensor, actuator, coupling)
    if seed_override is not None:
        scenario = replace(scenario, seed=int(seed_override))

    sess_raw = data.get("session", {})
    _check_keys(sess_raw, "session", ("stream_rate", "include_image", "listen_endpoint"))
    session = _wrap(
        "session",
        SessionConfig,
        scenario=scenario,
        stream_rate=_num(sess_raw, "session", "stream_rate", 9.0),
        include_image=_boolean(sess_raw, "session", "include_image", False),
        listen_endpoint=_string(sess_raw, "session", "listen_endpoint", DEFAULT_ENDPOINT),
    )

    ident_raw = data.get("identify", {})
    _check_keys(ident_raw, "identify",
                ("amplitudes", "settle_time", "sample_period", "use_sensor"))
    dident = IdentifyPlan()
    identify = _wrap(
        "identify",
        IdentifyPlan,
        amplitudes=_num_list(ident_raw, "identify", "amplitudes", dident.amplitudes),
        settle_time=_num(ident_raw, "identify", "settle_time", dident.settle_time),
        sample_period=_num(ident_raw, "identify", "sample_period", dident.sample_period),
        use_sensor=_boolean(ident_raw, "identify", "use_sensor", dident.use_sensor),
    )

    gap_raw = data.get("gap", {})
    _check_keys(gap_raw, "gap", ("members", "labels"))
    if "members" in gap_raw:
        members = gap_raw["members"]
        if not isinstance(members, list) or len(members) < 2:
            raise ConfigError("gap.members must list at least two models")
        gap_members = _parse_models(members, "gap.members")
    else:
        gap_members = FAMILY_MEMBERS
    labels = gap_raw.get("labels")
    if labels is not None:
        if (not isinstance(labels, list)
                or any(not isinstance(x, str) for x in labels)
                or len(labels) != len(gap_members)):
            raise ConfigError("gap.labels must name every member")
        labels = tuple(labels)

    sim_raw = data.get("simulate", {})
    _check_keys(sim_raw, "simulate", ("gains_csv",))
    export_raw = data.get("export", {})
    _check_keys(export_raw, "export", ("runlog", "gap", "gains_csv", "bode_channel"))
    export = ExportInputs(
        runlog=_string(export_raw, "export", "runlog", None),
        gap=_string(export_raw, "export", "gap", None),
        gains_csv=_string(export_raw, "export", "gains_csv", None),
        bode_channel=_integer(export_raw, "export", "bode_channel", 0),
    )
    if not (0 <= export.bode_channel < N_CHANNELS):
        raise ConfigError("export.bode_channel out of range")

    return AppConfig(
        scenario=scenario,
        session=session,
        tuning=_parse_tuning(data.get("tuning", {})),
        identify=identify,
        diag_params=_parse_plant(data.get("plant", {})),
        gap_members=gap_members,
        gap_labels=labels,
        sim_gains_csv=_string(sim_raw, "simulate", "gains_csv", None),
        export=export,
        source=source,
    )


def load_config(path, seed_override: int | None = None) -> AppConfig:
    """Parse a TOML file into the full application configuration."""
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return _build(data, str(path), seed_override)


def default_config(seed_override: int | None = None) -> AppConfig:
    """The built-in bench setup: 13-degree uniform step with one extra FFC."""
    return _build({}, None, seed_override)
