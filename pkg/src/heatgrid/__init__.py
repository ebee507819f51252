"""Digital twin and control workbench for a 16x16 thermoelectric heater array."""

from .config import (
    ENDPOINT_ENV_VAR,
    AppConfig,
    ConfigError,
    ExportInputs,
    IdentifyPlan,
    SessionConfig,
    default_config,
    load_config,
    parse_endpoint,
)
from .fractional import (
    FoTransferFunction,
    FrequencyResponse,
    MarginReport,
    RationalTf,
    freq_response,
    gl_step_response,
    itae,
    margins,
    oustaloup_approx,
    rationalize,
)
from .gapmetric import GapMatrix, chordal_distance, gap_matrix, nu_gap, select_nominal
from .loop import (
    LoopStepper,
    RunLog,
    Scenario,
    constant_setpoints,
    controllers_from_gains,
    load_runlog_csv,
    run_scenario,
    save_events_jsonl,
    save_runlog_csv,
    standard_controllers,
    step_setpoints,
    uniformity_metric,
)
from .plant import (
    ActuatorModel,
    CouplingConfig,
    FaultSpec,
    PlantMatrix,
    PlantState,
    SensorModel,
    ThermalFrame,
    sensor_read,
    step_sim,
    synthesize_plant,
)
from .protocol import ProtocolError, WireMessage, decode, encode
from .service import Service, serve
from .sysid import (
    IdentifiedModel,
    PlantFamily,
    StepDataset,
    build_family,
    collect_datasets,
    design_experiment,
    fit_fopdt,
    validate_mimo,
)
from .tuner import (
    PiGains,
    TuneBatch,
    TuneResult,
    TuningSpec,
    load_gains_csv,
    save_gains_csv,
    tune_all,
    tune_pi,
    verify_spec,
)

__version__ = "0.1.0"

__all__ = [
    "AppConfig",
    "ActuatorModel",
    "ConfigError",
    "CouplingConfig",
    "ENDPOINT_ENV_VAR",
    "ExportInputs",
    "FaultSpec",
    "FoTransferFunction",
    "FrequencyResponse",
    "GapMatrix",
    "IdentifiedModel",
    "IdentifyPlan",
    "LoopStepper",
    "MarginReport",
    "PiGains",
    "PlantFamily",
    "PlantMatrix",
    "PlantState",
    "ProtocolError",
    "RationalTf",
    "RunLog",
    "Scenario",
    "SensorModel",
    "Service",
    "SessionConfig",
    "StepDataset",
    "ThermalFrame",
    "TuneBatch",
    "TuneResult",
    "TuningSpec",
    "WireMessage",
    "build_family",
    "chordal_distance",
    "collect_datasets",
    "constant_setpoints",
    "controllers_from_gains",
    "decode",
    "default_config",
    "design_experiment",
    "encode",
    "fit_fopdt",
    "freq_response",
    "gap_matrix",
    "gl_step_response",
    "itae",
    "load_config",
    "load_gains_csv",
    "load_runlog_csv",
    "margins",
    "nu_gap",
    "oustaloup_approx",
    "parse_endpoint",
    "rationalize",
    "run_scenario",
    "save_events_jsonl",
    "save_gains_csv",
    "save_runlog_csv",
    "select_nominal",
    "sensor_read",
    "serve",
    "standard_controllers",
    "step_sim",
    "step_setpoints",
    "synthesize_plant",
    "tune_all",
    "tune_pi",
    "uniformity_metric",
    "validate_mimo",
    "verify_spec",
    "__version__",
]
