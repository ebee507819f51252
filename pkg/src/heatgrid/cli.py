"""Command line workflows around the thermal twin.

Six subcommands chain through flat-file formats: identify writes step
datasets and fitted model records, gap writes the pairwise distance matrix
and the nominal pick, tune writes the gains table, simulate replays a
scenario into a run log, serve streams a live session over TCP/WebSocket,
and export turns earlier artifacts into plot-ready CSVs and figures.

Artifacts are staged under temporary names and renamed into place only
after the whole command succeeds, so a failed run never leaves partial
output files behind.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from .config import (
    ENDPOINT_ENV_VAR,
    AppConfig,
    ConfigError,
    default_config,
    load_config,
)
from .gapmetric import gap_matrix, select_nominal
from .loop import (
    load_runlog_csv,
    run_scenario,
    save_events_jsonl,
    save_runlog_csv,
    standard_controllers,
)
from .plant import N_CHANNELS, synthesize_plant
from .report import (
    bode_table,
    load_gap_matrix_csv,
    plot_bode,
    plot_drives,
    plot_gap_surface,
    plot_temps,
    save_bode_csv,
    save_drives_long_csv,
    save_gap_matrix_csv,
    save_gap_surface_csv,
    save_temps_long_csv,
)
from .service import serve
from .sysid import (
    collect_datasets,
    design_experiment,
    fit_fopdt,
    save_dataset_csv,
    validate_mimo,
)
from .tuner import load_gains_csv, save_gains_csv, tune_all

__all__ = ["main", "build_parser"]

_COMMANDS = ("identify", "gap", "tune", "simulate", "serve", "export")


class OutputStager:
    """Write-then-rename staging for a command's whole artifact set.

    path(name) hands back a temporary sibling of the final file; promote()
    renames every staged file at once, discard() deletes the temporaries.
    """

    def __init__(self, out_dir):
        self.root = Path(out_dir)
        self.root.mkdir(parents=True, exist_ok=True)
        self._staged: list[tuple[Path, Path]] = []

    def path(self, name: str) -> Path:
        final = self.root / name
        # prefix, not suffix: writers (matplotlib) key the format off the
        # extension, which must survive staging
        tmp = self.root / (".stage-" + name)
        self._staged.append((tmp, final))
        return tmp

    def promote(self) -> list[Path]:
        finals = []
        for tmp, final in self._staged:
            os.replace(tmp, final)
            finals.append(final)
        self._staged = []
        return finals

    def discard(self) -> None:
        for tmp, _ in self._staged:
            try:
                tmp.unlink()
            except OSError:
                pass
        self._staged = []


def _staged(fn):
    """Run a command body against a stager; promote on success only."""

    def wrapper(cfg, args):
        st = OutputStager(args.out)
        try:
            code = fn(cfg, args, st)
        except BaseException:
            st.discard()
            raise
        if code == 0:
            st.promote()
        else:
            st.discard()
        return code

    return wrapper


# ------------------------------------------------------------- identify

@_staged
def cmd_identify(cfg: AppConfig, args, st: OutputStager) -> int:
    seed = cfg.scenario.seed
    plant = synthesize_plant(cfg.diag_params, cfg.scenario.coupling)
    schedule = design_experiment(
        cfg.identify.amplitudes,
        cfg.identify.settle_time,
        char_times=[m.char_time for m in cfg.diag_params],
        actuator=cfg.scenario.actuator,
    )
    sensor = (
        replace(cfg.scenario.sensor, rng_seed=seed)
        if cfg.identify.use_sensor
        else None
    )
    fit_sets, validation = collect_datasets(
        plant,
        schedule,
        h=cfg.identify.sample_period,
        ambient=cfg.scenario.ambient,
        sensor=sensor,
    )
    with open(st.path("models.csv"), "w", newline="") as fh:
        fh.write(f"# seed={seed}\n")
        w = csv.writer(fh)
        w.writerow([
            "channel", "amplitude", "gain_K", "time_const_T",
            "order_alpha", "delay_L", "fit_percent", "residual_rms",
        ])
        for ds in fit_sets:
            fitted = fit_fopdt(ds.times, ds.amplitude, ds.responses[ds.channel_in])
            m = fitted.model
            w.writerow([
                ds.channel_in, f"{ds.amplitude:g}",
                f"{m.gain_K:.10g}", f"{m.time_const_T:.10g}",
                f"{m.order_alpha:.10g}", f"{m.delay_L:.10g}",
                f"{fitted.fit_percent:.4f}", f"{fitted.residual_rms:.6g}",
            ])
            save_dataset_csv(
                ds, st.path(f"dataset_ch{ds.channel_in}_a{ds.amplitude:g}.csv"),
                seed=seed,
            )
    save_dataset_csv(validation, st.path("dataset_validation.csv"), seed=seed)
    scores = validate_mimo(plant, validation, ambient=cfg.scenario.ambient)
    with open(st.path("validation.csv"), "w", newline="") as fh:
        fh.write(f"# seed={seed}\n")
        w = csv.writer(fh)
        w.writerow(["channel", "fit_percent"])
        for ch, s in enumerate(scores):
            w.writerow([ch, f"{s:.4f}"])
    print(f"identified {len(fit_sets)} step records; "
          f"validation fit {scores.min():.1f}..{scores.max():.1f}%")
    return 0


# ------------------------------------------------------------------ gap

@_staged
def cmd_gap(cfg: AppConfig, args, st: OutputStager) -> int:
    seed = cfg.scenario.seed
    gm = gap_matrix(cfg.gap_members, labels=cfg.gap_labels)
    idx, nominal = select_nominal(cfg.gap_members, gm)
    save_gap_matrix_csv(st.path("gap_matrix.csv"), gm, seed=seed)
    save_gap_surface_csv(st.path("gap_surface.csv"), gm, seed=seed)
    with open(st.path("nominal.json"), "w") as fh:
        json.dump(
            {
                "index": idx,
                "label": gm.member_labels[idx],
                "gain_K": nominal.gain_K,
                "time_const_T": nominal.time_const_T,
                "order_alpha": nominal.order_alpha,
                "delay_L": nominal.delay_L,
                "worst_gap": gm.row_max()[idx],
                "seed": seed,
            },
            fh,
            indent=2,
        )
        fh.write("\n")
    print(f"nominal member: {gm.member_labels[idx]} "
          f"(worst pairwise distance {gm.row_max()[idx]:.4f})")
    return 0


# ----------------------------------------------------------------- tune

@_staged
def cmd_tune(cfg: AppConfig, args, st: OutputStager) -> int:
    seed = cfg.scenario.seed
    batch = tune_all(cfg.diag_params, spec=cfg.tuning)
    save_gains_csv(st.path("gains.csv"), batch, seed=seed)
    for ch, msg in batch.errors:
        print(f"channel {ch}: {msg}", file=sys.stderr)
    print(f"{batch.n_feasible}/{len(batch.results)} channels feasible")
    if batch.n_feasible == 0:
        print("error: no channel produced a feasible design", file=sys.stderr)
        return 1
    return 0


# ------------------------------------------------------------- simulate

def _gains_table_from_csv(path) -> list:
    table = load_gains_csv(path)
    missing = [ch for ch in range(N_CHANNELS) if ch not in table]
    if missing:
        raise ValueError(
            f"gains table {path} is missing channels {missing}; "
            f"a full run needs all {N_CHANNELS}"
        )
    return [(table[ch].prop_K, table[ch].integ_I) for ch in range(N_CHANNELS)]


@_staged
def cmd_simulate(cfg: AppConfig, args, st: OutputStager) -> int:
    seed = cfg.scenario.seed
    gains_table = (
        _gains_table_from_csv(cfg.sim_gains_csv) if cfg.sim_gains_csv else None
    )
    plant = synthesize_plant(cfg.diag_params, cfg.scenario.coupling)
    controllers = standard_controllers(cfg.scenario, gains_table)
    log = run_scenario(plant, controllers, cfg.scenario)
    save_runlog_csv(st.path("runlog.csv"), log, seed=seed)
    save_events_jsonl(st.path("events.jsonl"), log, seed=seed)
    print(f"simulated {cfg.scenario.duration:g} s, "
          f"{len(log.times)} samples, {len(log.events)} events")
    return 0


# ---------------------------------------------------------------- serve

def cmd_serve(cfg: AppConfig, args) -> int:
    session = cfg.session
    env_endpoint = os.environ.get(ENDPOINT_ENV_VAR)
    if env_endpoint:
        session = replace(session, listen_endpoint=env_endpoint)
    svc = serve(session, time_scale=args.time_scale)
    host, port = svc.endpoint
    print(f"serving on {host}:{port} (time scale {args.time_scale:g})", flush=True)
    try:
        svc.wait()
    except KeyboardInterrupt:
        print("interrupted, shutting down", file=sys.stderr)
        svc.stop()
        return 0
    finished = True
    try:
        log = svc.runlog()
    except RuntimeError:
        finished = False
    svc.stop()
    if args.out is not None and finished:
        st = OutputStager(args.out)
        try:
            save_runlog_csv(st.path("runlog.csv"), log, seed=session.scenario.seed)
            save_events_jsonl(st.path("events.jsonl"), log, seed=session.scenario.seed)
        except BaseException:
            st.discard()
            raise
        st.promote()
    return 0


# --------------------------------------------------------------- export

@_staged
def cmd_export(cfg: AppConfig, args, st: OutputStager) -> int:
    seed = cfg.scenario.seed
    products = 0
    if cfg.export.runlog:
        log = load_runlog_csv(cfg.export.runlog)
        save_temps_long_csv(st.path("temps.csv"), log, seed=seed)
        save_drives_long_csv(st.path("drives.csv"), log, seed=seed)
        plot_temps(st.path("temps.png"), log, seed=seed)
        plot_drives(st.path("drives.png"), log, seed=seed)
        products += 4
    if cfg.export.gap:
        labels, values = load_gap_matrix_csv(cfg.export.gap)
        plot_gap_surface(st.path("gap_surface.png"), labels, values, seed=seed)
        products += 1
    if cfg.export.gains_csv:
        ch = cfg.export.bode_channel
        gains = load_gains_csv(cfg.export.gains_csv).get(ch)
        if gains is None:
            raise ValueError(
                f"gains table {cfg.export.gains_csv} has no row for "
                f"channel {ch}"
            )
        tab = bode_table(cfg.diag_params[ch], gains)
        save_bode_csv(st.path("bode.csv"), tab, seed=seed)
        plot_bode(st.path("bode.png"), tab, seed=seed)
        products += 2
    if products == 0:
        raise ValueError(
            "nothing to export: set at least one of export.runlog, "
            "export.gap or export.gains_csv in the config"
        )
    print(f"wrote {products} artifacts to {st.root}")
    return 0


# ----------------------------------------------------------------- main

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(
        prog="heatgrid",
        description="Digital twin workflows for the 16-channel thermal platform.",
    )
    sub = p.add_subparsers(dest="command", required=True)
    briefs = {
        "identify": "run the step experiment and fit per-channel models",
        "gap": "pairwise model distances and the nominal pick",
        "tune": "design PI gains for every channel",
        "simulate": "replay a scenario headlessly into a run log",
        "serve": "stream a live session over TCP/WebSocket",
        "export": "turn run logs, gap tables and gains into CSVs and figures",
    }
    for name in _COMMANDS:
        sp = sub.add_parser(name, help=briefs[name])
        sp.add_argument("--config", metavar="PATH", default=None,
                        help="TOML configuration (defaults apply when omitted)")
        sp.add_argument("--out", metavar="DIR", default=None,
                        help="output directory for artifacts")
        sp.add_argument("--seed", type=int, default=None,
                        help="override the session seed")
        sp.add_argument("--time-scale", type=float, default=1.0,
                        dest="time_scale", metavar="X",
                        help="sim seconds per wall second (serve only)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.time_scale <= 0:
            raise ValueError("--time-scale must be positive")
        if args.command != "serve" and args.out is None:
            raise ValueError(f"{args.command} requires --out")
        cfg = (
            load_config(args.config, seed_override=args.seed)
            if args.config is not None
            else default_config(seed_override=args.seed)
        )
        if args.command == "serve":
            return cmd_serve(cfg, args)
        handler = {
            "identify": cmd_identify,
            "gap": cmd_gap,
            "tune": cmd_tune,
            "simulate": cmd_simulate,
            "export": cmd_export,
        }[args.command]
        return handler(cfg, args)
    except (ConfigError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    raise SystemExit(main())
