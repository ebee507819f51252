"""TOML configuration parsing: defaults, overrides, strict rejection."""
import pytest

from heatgrid.config import (
    ConfigError,
    IdentifyPlan,
    SessionConfig,
    default_config,
    load_config,
    parse_endpoint,
)
from heatgrid.plant import SensorModel
from heatgrid.presets import DIAG_PARAMS, FAMILY_MEMBERS
from heatgrid.tuner import TuningSpec


def write(tmp_path, text):
    p = tmp_path / "cfg.toml"
    p.write_text(text)
    return p


def test_default_config_is_the_bench_run():
    cfg = default_config()
    sc = cfg.scenario
    assert sc.duration == 1300.0
    assert sc.seed == 42
    assert sc.ts_control == 0.5
    assert sc.ambient == 20.0
    assert sc.ffc_events == (1061.0,)
    # uniform 20 -> 33 step at t=10
    assert sc.setpoint_vector(0.0).tolist() == [20.0] * 16
    assert sc.setpoint_vector(10.0).tolist() == [33.0] * 16
    assert cfg.session.stream_rate == 9.0
    assert cfg.session.include_image is False
    assert cfg.tuning == TuningSpec()
    assert cfg.identify == IdentifyPlan()
    assert cfg.diag_params == DIAG_PARAMS
    assert cfg.gap_members == FAMILY_MEMBERS
    assert cfg.sim_gains_csv is None
    assert cfg.source is None


def test_seed_override_wins():
    assert default_config(seed_override=7).scenario.seed == 7


def test_full_file_round_trip(tmp_path):
    p = write(tmp_path, """
[scenario]
duration = 400.0
seed = 9
ts_control = 0.5
ambient = 21.0
ffc_events = [120.0, 300.0]

[scenario.setpoints]
kind = "step"
before = 22.0
after = 40.0
at = 30.0

[[scenario.faults]]
kind = "supply_interruption"
target = 2
onset = 100.0
duration = 30.0

[[scenario.faults]]
kind = "sensor_offset"
target = "all"
onset = 200.0
magnitude = 1.5

[sensor]
noise_sigma = 0.1
frame_rate = 9.0
rng_seed = 3

[actuator]
pwm_max = 4000.0
pwm_min = -4000.0
drive_scale = 0.025

[coupling]
kappa = 0.01

[session]
stream_rate = 3.0
include_image = true
listen_endpoint = "0.0.0.0:9000"

[tuning]
pm_range_deg = [58.0, 66.0]
crossover_target_w = 0.05

[identify]
amplitudes = [4.0, 8.0]
settle_time = 2500.0
use_sensor = false

[plant]
gains = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]
time_consts = [10.0, 10.0, 10.0, 10.0, 10.0, 10.0, 10.0, 10.0, 10.0, 10.0, 10.0, 10.0, 10.0, 10.0, 10.0, 10.0]
alphas = [0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5, 0.5]

[gap]
members = [[1.0, 10.0, 0.9, 0.0], [2.0, 8.0, 0.6, 0.0]]
labels = ["low", "high"]

[simulate]
gains_csv = "gains.csv"

[export]
runlog = "runlog.csv"
bode_channel = 5
""")
    cfg = load_config(p)
    sc = cfg.scenario
    assert sc.duration == 400.0 and sc.seed == 9 and sc.ambient == 21.0
    assert sc.setpoint_vector(29.9)[0] == 22.0
    assert sc.setpoint_vector(30.0)[0] == 40.0
    assert len(sc.faults) == 2
    assert sc.faults[1].target == "all"
    assert sc.sensor.noise_sigma == 0.1 and sc.sensor.rng_seed == 3
    assert sc.coupling.kappa == 0.01
    assert cfg.session.stream_rate == 3.0
    assert cfg.session.include_image is True
    assert cfg.session.listen_endpoint == "0.0.0.0:9000"
    assert cfg.tuning.pm_range_deg == (58.0, 66.0)
    assert cfg.tuning.crossover_target_w == 0.05
    assert cfg.identify.amplitudes == (4.0, 8.0)
    assert cfg.identify.use_sensor is False
    assert all(m.order_alpha == 0.5 for m in cfg.diag_params)
    assert len(cfg.gap_members) == 2
    assert cfg.gap_labels == ("low", "high")
    assert cfg.sim_gains_csv == "gains.csv"
    assert cfg.export.runlog == "runlog.csv"
    assert cfg.export.bode_channel == 5
    assert cfg.source == str(p)


def test_setpoint_kinds(tmp_path):
    p = write(tmp_path, """
[scenario.setpoints]
kind = "constant"
value = 26.0
""")
    assert load_config(p).scenario.setpoint_vector(500.0)[7] == 26.0

    knots = ", ".join("[[0.0, 20.0], [5.0, %d.0]]" % (21 + i) for i in range(16))
    p = write(tmp_path, f"""
[scenario.setpoints]
kind = "explicit"
knots = [{knots}]
""")
    sc = load_config(p).scenario
    assert sc.setpoint_vector(6.0)[0] == 21.0
    assert sc.setpoint_vector(6.0)[15] == 36.0

    p = write(tmp_path, '[scenario.setpoints]\nkind = "ramp"\n')
    with pytest.raises(ConfigError, match="kind"):
        load_config(p)


@pytest.mark.parametrize(
    "text,needle",
    [
        ("[telemetry]\nx = 1\n", r"unknown section \[telemetry\]"),
        ("[sensor]\nnoise = 0.1\n", r"unknown key 'noise' in section \[sensor\]"),
        ("[scenario]\nduration = \"long\"\n", "must be a number"),
        ("[scenario]\nseed = 1.5\n", "must be an integer"),
        ("[session]\ninclude_image = 1\n", "true or false"),
        ("[session]\nstream_rate = 20.0\n", "exceeds the sensor frame rate"),
        ("[scenario.setpoints]\nkind = \"step\"\nafter = 200.0\n", "outside"),
        ("[tuning]\npm_range_deg = [60.0]\n", "two entries"),
        ("[plant]\ngains = [1.0]\ntime_consts = [1.0]\nalphas = [0.5]\n", "16"),
        ("[plant]\ngains = [1.0]\n", "need gains, time_consts and alphas"),
        ("[gap]\nmembers = [[1.0, 10.0, 0.9, 0.0]]\n", "at least two"),
        ("[gap]\nlabels = [\"a\"]\n", "every member"),
        ("[export]\nbode_channel = 99\n", "out of range"),
        ("[scenario]\n[[scenario.faults]]\nkind = \"meteor\"\ntarget = 1\n", "fault kind"),
    ],
)
def test_rejections_name_the_offender(tmp_path, text, needle):
    with pytest.raises(ConfigError, match=needle):
        load_config(write(tmp_path, text))


def test_invalid_toml_syntax(tmp_path):
    with pytest.raises(ConfigError):
        load_config(write(tmp_path, "[scenario\nduration = 1\n"))


def test_fault_validation_routed_through_config(tmp_path):
    p = write(tmp_path, """
[[scenario.faults]]
kind = "supply_interruption"
target = "all"
onset = 10.0
""")
    with pytest.raises(ConfigError, match="sensor_offset"):
        load_config(p)


def test_parse_endpoint():
    assert parse_endpoint("127.0.0.1:7410") == ("127.0.0.1", 7410)
    assert parse_endpoint(":8080") == ("0.0.0.0", 8080)
    with pytest.raises(ConfigError):
        parse_endpoint("no-port")
    with pytest.raises(ConfigError):
        parse_endpoint("host:notanum")
    with pytest.raises(ConfigError):
        parse_endpoint("host:70000")


def test_session_config_invariant():
    sc = default_config().scenario
    with pytest.raises(ConfigError, match="stream_rate"):
        SessionConfig(scenario=sc, stream_rate=9.5)
    from dataclasses import replace

    fast = replace(sc, sensor=SensorModel(frame_rate=30.0))
    assert SessionConfig(scenario=fast, stream_rate=25.0).stream_rate == 25.0
