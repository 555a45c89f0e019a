"""Command-line interface, config loading, and run-directory emission.

Subcommands: ``priors`` (generate a prior ensemble), ``truth`` (twin-
experiment truth plus observations), ``assimilate`` (one batch update),
``assess`` (the full dynamic loop), ``suite`` (scenario sweep), and
``report`` (re-emit band CSVs from a persisted run). Outputs are data-only
(CSV/JSON/binary grids); plotting is left to any external tool.

Exit codes: 0 success, 2 usage, 3 config error, 4 missing/invalid run
directory, 5 simulation failure, 1 anything else. Failures print one
machine-parsable line ``<ERROR_CLASS>: <message>`` on stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from . import __version__, _seeds
from .esmda import geometric_schedule, choose_alpha1, compute_mismatch, assimilate
from .flowsim import SimulationError
from .geomodel import field_to_binary, generate_prior_ensemble
from .observations import ObservationSet
from .pipeline import (ensemble_predictions, persist_report,
                       reemit_band_outputs, run_dynamic_assessment,
                       run_scenario_suite, run_twin_experiment)
from .scenario import ConfigError, ScenarioConfig, resolve_config

__all__ = ["RunManifest", "load_config", "cli_dispatch", "main"]

logger = logging.getLogger(__name__)

OUTPUT_ROOT_ENV = "GCSRISK_OUTPUT_ROOT"

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3
EXIT_RUN_DIR = 4
EXIT_SIMULATION = 5


class RunDirectoryError(FileNotFoundError):
    """Missing or malformed run directory."""


class UsageError(ValueError):
    """Bad command line."""


@dataclass
class RunManifest:
    """Provenance record written alongside every run's outputs."""

    version: str
    command: str
    config_hash: str
    seeds: dict
    wall_clock_s: float
    timings: dict
    outputs: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "command": self.command,
            "config_hash": self.config_hash,
            "seeds": self.seeds,
            "wall_clock_s": self.wall_clock_s,
            "timings": self.timings,
            "outputs": sorted(self.outputs),
        }

    def write(self, out_dir) -> Path:
        path = Path(out_dir) / "manifest.json"
        payload = self.to_dict()
        payload["outputs"] = sorted(set(payload["outputs"]) | {"manifest.json"})
        path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n")
        return path


def _seed_registry(config: ScenarioConfig) -> dict:
    return {
        "root": config.seed,
        "streams": {"prior": _seeds.PRIOR, "truth": _seeds.TRUTH,
                    "noise": _seeds.NOISE, "esmda": _seeds.ESMDA,
                    "resample": _seeds.RESAMPLE},
    }


def load_config(path, preset: str | None = None, full_scale: bool = False,
                extra_overrides: dict | None = None) -> ScenarioConfig:
    """Parse a YAML config file into a resolved ScenarioConfig.

    The file holds overrides on top of the preset; unknown keys are hard
    errors. An empty file yields the preset defaults. ``extra_overrides``
    (from CLI flags) win over file values.
    """
    raw: dict = {}
    if path is not None:
        text = Path(path).read_text()
        try:
            loaded = yaml.safe_load(text)
        except yaml.MarkedYAMLError as exc:
            mark = exc.problem_mark
            where = (f" at line {mark.line + 1}, column {mark.column + 1}"
                     if mark else "")
            raise ConfigError(f"parse error{where}: {exc.problem}") from exc
        if loaded is None:
            loaded = {}
        if not isinstance(loaded, dict):
            raise ConfigError("config file must contain a mapping")
        raw = loaded
    preset = preset or raw.pop("preset", "example1")
    full_scale = bool(raw.pop("full_scale", full_scale))
    for key, val in (extra_overrides or {}).items():
        if val is not None:
            raw[key] = val
    return resolve_config(preset, full_scale, raw)


def _json_default(obj):
    import numpy as np

    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not JSON serializable: {type(obj)}")


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2,
                               default=_json_default) + "\n")


def _echo_config(config: ScenarioConfig, out: Path) -> str:
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", config.to_dict())
    return "config.json"


def _cmd_priors(config: ScenarioConfig, out: Path) -> list[str]:
    emitted = [_echo_config(config, out)]
    ens = generate_prior_ensemble(config.geometry(), config.variogram,
                                  config.ensemble_size,
                                  _seeds.sequence(config.seed, _seeds.PRIOR),
                                  porosity=config.porosity)
    ens_dir = out / "ensemble"
    ens_dir.mkdir(exist_ok=True)
    for m in ens:
        b, j = field_to_binary(ens_dir / m.id, m.geometry, m.log_perm)
        emitted += [str(b.relative_to(out)), str(j.relative_to(out))]
    return emitted


def _cmd_truth(config: ScenarioConfig, out: Path) -> list[str]:
    emitted = [_echo_config(config, out)]
    twin = run_twin_experiment(config)
    twin.observations.to_csv(out / "observations.csv")
    b, j = field_to_binary(out / "truth_log_perm", twin.truth_model.geometry,
                           twin.truth_model.log_perm)
    twin.truth_result.traces_to_csv(out / "truth_traces.csv")
    emitted += ["observations.csv", "truth_traces.csv",
                str(b.relative_to(out)), str(j.relative_to(out))]
    return emitted


def _cmd_assimilate(config: ScenarioConfig, out: Path,
                    obs_path: str | None) -> list[str]:
    import functools

    import numpy as np

    from .pipeline import _forward_worker, _localization_taper, _pool_map

    emitted = [_echo_config(config, out)]
    if obs_path is not None:
        obs = ObservationSet.from_csv(obs_path).truncated(
            config.monitoring_duration)
    else:
        obs = run_twin_experiment(config).observations
    obs.to_csv(out / "observations.csv")
    emitted.append("observations.csv")

    prior = generate_prior_ensemble(config.geometry(), config.variogram,
                                    config.ensemble_size,
                                    _seeds.sequence(config.seed, _seeds.PRIOR),
                                    porosity=config.porosity)
    duration = config.monitoring_duration
    map_fn = _pool_map(config.workers)
    preds = ensemble_predictions(prior, config, duration, obs, map_fn)
    mismatch = compute_mismatch(preds, obs)
    alpha1 = config.alpha1 if config.alpha1 is not None else \
        choose_alpha1(mismatch, config.n_assimilation_steps, config.alpha_max)
    schedule = geometric_schedule(config.n_assimilation_steps, alpha1)
    taper = _localization_taper(config, obs) if config.localization else None
    forward = functools.partial(_forward_worker, config=config,
                                duration=duration, obs=obs)
    posterior, history = assimilate(
        prior, obs, schedule, forward,
        _seeds.sequence(config.seed, _seeds.ESMDA, 0),
        bounds=config.resolved_log_perm_bounds(), taper=taper,
        initial_predictions=preds, map_fn=map_fn)

    ens_dir = out / "posterior"
    ens_dir.mkdir(exist_ok=True)
    for m in posterior:
        b, j = field_to_binary(ens_dir / m.id, m.geometry, m.log_perm)
        emitted += [str(b.relative_to(out)), str(j.relative_to(out))]
    _write_json(out / "assimilation.json", {
        "alphas": list(schedule.alphas),
        "alpha1": alpha1,
        "mismatch_history": [h.mean for h in history],
        "final_mismatch": history[-1].mean,
    })
    emitted.append("assimilation.json")
    return emitted


def _cmd_assess(config: ScenarioConfig, out: Path) -> list[str]:
    twin = run_twin_experiment(config)
    report = run_dynamic_assessment(config, twin)
    return persist_report(report, out, twin=twin, ensembles=report.ensembles)


def _suite_configs(config: ScenarioConfig, durations) -> list[ScenarioConfig]:
    from dataclasses import replace

    configs = []
    for d in durations:
        configs.append(replace(config, name=f"{config.preset}_{d:g}yr",
                               monitoring_duration=float(d)))
    return configs


def _cmd_suite(config: ScenarioConfig, out: Path, durations) -> list[str]:
    emitted = [_echo_config(config, out)]
    configs = _suite_configs(config, durations)
    suite = run_scenario_suite(configs)
    for name, report in suite["reports"].items():
        emitted += [f"{name}/{p}" for p in
                    persist_report(report, out / name,
                                   ensembles=report.ensembles)]
    comparison = {"comparison": suite["comparison"],
                  "errors": suite["errors"]}
    _write_json(out / "suite_summary.json", comparison)
    emitted.append("suite_summary.json")
    if suite["errors"]:
        logger.warning("suite had failures: %s", suite["errors"])
    return emitted


def _cmd_report(run_dir: str) -> list[str]:
    run = Path(run_dir)
    if not run.is_dir() or not (run / "config.json").exists():
        raise RunDirectoryError(f"{run_dir!r} is not a run directory")
    return reemit_band_outputs(run)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="gcsrisk", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, needs_out=True):
        p.add_argument("--config", help="YAML config file with overrides")
        p.add_argument("--preset", choices=("example1", "rsu", "custom"))
        p.add_argument("--seed", type=int)
        p.add_argument("--full", action="store_true",
                       help="published mesh sizes instead of the desk grid")
        p.add_argument("--threads", type=int,
                       help="worker processes for ensemble fan-out")
        if needs_out:
            p.add_argument("--out", help="output directory "
                           f"(default under ${OUTPUT_ROOT_ENV} or ./runs)")

    for name in ("priors", "truth", "assess"):
        add_common(sub.add_parser(name))
    p_assim = sub.add_parser("assimilate")
    add_common(p_assim)
    p_assim.add_argument("--obs", help="observation CSV (default: twin data)")
    p_suite = sub.add_parser("suite")
    add_common(p_suite)
    p_suite.add_argument("--durations", default="0,5,10",
                         help="comma list of monitoring durations in years")
    p_report = sub.add_parser("report")
    p_report.add_argument("run_dir")
    return parser


def _resolve_out(args, command: str) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    root = os.environ.get(OUTPUT_ROOT_ENV, "runs")
    return Path(root) / f"{command}_{args.preset or 'example1'}"


def cli_dispatch(argv=None) -> int:
    """Parse argv, run the requested command, and return the exit status."""
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"USAGE_ERROR: {exc}", file=sys.stderr)
        return EXIT_USAGE

    t_start = time.perf_counter()
    try:
        if args.command == "report":
            emitted = _cmd_report(args.run_dir)
            for p in emitted:
                logger.info("re-emitted %s", p)
            return EXIT_OK

        overrides = {"seed": args.seed, "workers": args.threads}
        config = load_config(args.config, preset=args.preset,
                             full_scale=args.full, extra_overrides=overrides)
        out = _resolve_out(args, args.command)
        out.mkdir(parents=True, exist_ok=True)

        timings: dict = {}
        t0 = time.perf_counter()
        if args.command == "priors":
            emitted = _cmd_priors(config, out)
        elif args.command == "truth":
            emitted = _cmd_truth(config, out)
        elif args.command == "assimilate":
            emitted = _cmd_assimilate(config, out, args.obs)
        elif args.command == "assess":
            emitted = _cmd_assess(config, out)
        elif args.command == "suite":
            durations = [float(d) for d in args.durations.split(",") if d]
            emitted = _cmd_suite(config, out, durations)
        else:  # pragma: no cover - argparse enforces the choices
            raise UsageError(f"unknown command {args.command}")
        timings[args.command] = time.perf_counter() - t0

        manifest = RunManifest(
            version=__version__,
            command=args.command,
            config_hash=config.config_hash(),
            seeds=_seed_registry(config),
            wall_clock_s=time.perf_counter() - t_start,
            timings=timings,
            outputs=list(emitted),
        )
        manifest.write(out)
        print(out)
        return EXIT_OK
    except ConfigError as exc:
        print(f"CONFIG_ERROR: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RunDirectoryError, FileNotFoundError) as exc:
        print(f"RUN_DIR_ERROR: {exc}", file=sys.stderr)
        return EXIT_RUN_DIR
    except SimulationError as exc:
        print(f"SIMULATION_ERROR: {exc}", file=sys.stderr)
        return EXIT_SIMULATION
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        logger.exception("internal error")
        print(f"INTERNAL_ERROR: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


def main() -> None:
    # Small linear solves dominate; BLAS thread pools only slow them down.
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, "1")
    logging.basicConfig(level=logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s")
    sys.exit(cli_dispatch())


if __name__ == "__main__":
    main()
