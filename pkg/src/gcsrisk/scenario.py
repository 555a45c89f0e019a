"""Scenario configuration: presets, well layout, and config resolution.

Two presets ship with the workbench. ``example1`` is a flat 4 km x 4 km
reservoir at 1 km depth injecting 1 MM t/yr for 5 years with 10 post-injection
years and a sealed lateral boundary. ``rsu`` is a 6 km x 6 km dipping
reservoir (top ramping 2.8 to 4.3 km), 10 + 50 years, with a constant-pressure
lateral boundary. Both default to a desk-scale 21x21x3 grid; ``full_scale``
switches to the published mesh sizes.

Well locations are defined as fractions of the domain edge so desk and full
grids share one physical layout: the injector M3 sits at the center, monitors
M1/M2/M4/M5 around it, legacy wells L1..L4 on the line from the injector
toward M4 at increasing distance, and L5 next to M2.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, asdict

import numpy as np

from .flowsim import FluidRockProps, InjectionSchedule, WellSpec, YEAR_SECONDS
from .geomodel import GridGeometry, VariogramSpec
from .receptor import AquiferProps
from .riskmetrics import PlumeThresholds

__all__ = ["ScenarioConfig", "ConfigError", "resolve_config", "WELL_LAYOUT",
           "PRESETS", "MONITOR_NAMES", "LEGACY_NAMES", "INJECTOR_NAME"]

INJECTOR_NAME = "M3"
MONITOR_NAMES = ("M1", "M2", "M4", "M5")
LEGACY_NAMES = ("L1", "L2", "L3", "L4", "L5")

# Fractional (x, y) positions on the domain; mapped to the nearest cell.
WELL_LAYOUT = {
    "M3": (0.50, 0.50),
    "M1": (0.16, 0.50),
    "M2": (0.50, 0.74),
    "M4": (0.84, 0.50),
    "M5": (0.50, 0.16),
    "L1": (0.595, 0.50),
    "L2": (0.645, 0.50),
    "L3": (0.69, 0.50),
    "L4": (0.74, 0.50),
    "L5": (0.50, 0.69),
}


class ConfigError(ValueError):
    """Invalid or unknown configuration content."""


@dataclass(frozen=True)
class ScenarioConfig:
    """Fully resolved description of one dynamic-assessment scenario."""

    preset: str = "example1"
    name: str = "example1"
    full_scale: bool = False
    seed: int = 0

    # grid
    nx: int = 21
    ny: int = 21
    nz: int = 3
    dx: float = 4000.0 / 21
    dy: float = 4000.0 / 21
    layer_thickness: float = 20.0
    top_depth: float = 1000.0
    top_depth_max: float | None = None  # None = flat top

    # prior ensemble
    variogram: VariogramSpec = field(default_factory=VariogramSpec)
    porosity: float = 0.15
    ensemble_size: int = 50

    # physics and schedule
    schedule: InjectionSchedule = field(default_factory=InjectionSchedule)
    fluids: FluidRockProps = field(
        default_factory=lambda: FluidRockProps(rock_compressibility=1e-8))
    boundary: str = "no_flow"
    gravity: bool = True

    # wells and observations
    monitor_wells: tuple[str, ...] = MONITOR_NAMES
    legacy_wells: tuple[str, ...] = LEGACY_NAMES
    noise_pressure: float = 0.01e6  # Pa
    noise_saturation: float = 0.02

    # assimilation
    monitoring_duration: float = 5.0
    epoch_durations: tuple[float, ...] | None = None  # None = one batch
    n_assimilation_steps: int = 4
    alpha1: float | None = None  # None = mismatch heuristic
    alpha_max: float = 1e4
    localization: bool = False
    localization_cutoff: float | None = None  # None = 2x range_x
    log_perm_bounds: tuple[float, float] | None = None  # None = mean +- 5 sqrt(sill)

    # leakage pathway and receptor
    legacy_well_permeability: float = 1e-13
    legacy_well_area: float = 0.05
    aquifer_depth: float = 200.0
    aquifer: AquiferProps = field(default_factory=AquiferProps)
    onset_rate_eps: float = 1e-6

    # risk metrics and conformance
    thresholds: PlumeThresholds = field(default_factory=PlumeThresholds)
    performance_limits: dict = field(default_factory=dict)
    concordance_minor: float = 5.0
    concordance_major: float = 50.0
    min_band_reduction: float = 0.05

    workers: int = 1

    def __post_init__(self):
        if self.preset not in PRESETS and self.preset != "custom":
            raise ConfigError(f"unknown preset {self.preset!r}")
        if self.ensemble_size < 1:
            raise ConfigError("ensemble_size: must be >= 1")
        if self.n_assimilation_steps < 1:
            raise ConfigError("n_assimilation_steps: must be >= 1")
        if self.monitoring_duration < 0:
            raise ConfigError("monitoring_duration: must be >= 0")
        if self.monitoring_duration > self.schedule.total_years + 1e-9:
            raise ConfigError("monitoring_duration: exceeds the simulated duration")
        if self.epoch_durations is not None:
            eps = tuple(float(d) for d in self.epoch_durations)
            if not eps or any(d <= 0 for d in eps) or list(eps) != sorted(eps):
                raise ConfigError("epoch_durations: must be positive and ascending")
            if eps[-1] > self.monitoring_duration + 1e-9:
                raise ConfigError("epoch_durations: exceed monitoring_duration")
            object.__setattr__(self, "epoch_durations", eps)
        unknown = set(self.monitor_wells) - set(MONITOR_NAMES)
        if unknown:
            raise ConfigError(f"monitor_wells: unknown wells {sorted(unknown)}")
        unknown = set(self.legacy_wells) - set(LEGACY_NAMES)
        if unknown:
            raise ConfigError(f"legacy_wells: unknown wells {sorted(unknown)}")
        if self.noise_pressure < 0 or self.noise_saturation < 0:
            raise ConfigError("noise std: must be >= 0")
        if self.workers < 1:
            raise ConfigError("workers: must be >= 1")
        if self.concordance_minor > self.concordance_major:
            raise ConfigError("concordance bounds: minor must not exceed major")
        object.__setattr__(self, "monitor_wells",
                           tuple(str(w) for w in self.monitor_wells))
        object.__setattr__(self, "legacy_wells",
                           tuple(str(w) for w in self.legacy_wells))
        object.__setattr__(self, "performance_limits",
                           {str(k): float(v)
                            for k, v in self.performance_limits.items()})
        # the geometry/wells must construct cleanly
        geom = self.geometry()
        for w in self.wells().values():
            w.validate_against(geom)

    # ---- derived builders --------------------------------------------------

    def geometry(self) -> GridGeometry:
        if self.top_depth_max is None:
            top = self.top_depth
        else:
            ramp = np.linspace(self.top_depth, self.top_depth_max, self.nx)
            top = np.repeat(ramp[:, None], self.ny, axis=1)
        return GridGeometry(nx=self.nx, ny=self.ny, nz=self.nz,
                            dx=self.dx, dy=self.dy,
                            layer_thickness=self.layer_thickness,
                            top_depth=top)

    def well_indices(self, name: str) -> tuple[int, int]:
        fx, fy = WELL_LAYOUT[name]
        return (int(fx * (self.nx - 1) + 0.5), int(fy * (self.ny - 1) + 0.5))

    def wells(self) -> dict[str, WellSpec]:
        """All wells of the scenario: injector, active monitors, legacy."""
        out = {}
        i, j = self.well_indices(INJECTOR_NAME)
        out[INJECTOR_NAME] = WellSpec(INJECTOR_NAME, i, j, "injector")
        for name in self.monitor_wells:
            i, j = self.well_indices(name)
            out[name] = WellSpec(name, i, j, "monitor", completion=(0,))
        for name in self.legacy_wells:
            i, j = self.well_indices(name)
            out[name] = WellSpec(name, i, j, "legacy", completion=(0,))
        return out

    def observation_wells(self) -> tuple[str, ...]:
        """Wells whose data are assimilated: active monitors plus injector."""
        return tuple(self.monitor_wells) + (INJECTOR_NAME,)

    def noise(self) -> dict:
        return {"pressure": self.noise_pressure,
                "saturation": self.noise_saturation}

    def resolved_log_perm_bounds(self) -> tuple[float, float]:
        if self.log_perm_bounds is not None:
            return self.log_perm_bounds
        spread = 5.0 * float(np.sqrt(self.variogram.sill)) if self.variogram.sill > 0 else 5.0
        return (self.variogram.mean_logk - spread, self.variogram.mean_logk + spread)

    def resolved_localization_cutoff(self) -> float:
        if self.localization_cutoff is not None:
            return self.localization_cutoff
        return 2.0 * self.variogram.range_x

    def schedule_until(self, duration_years: float) -> InjectionSchedule:
        """Schedule truncated at the monitoring duration for forward runs."""
        inj = min(self.schedule.injection_years, duration_years)
        return InjectionSchedule(
            rate=self.schedule.rate,
            injection_years=inj,
            post_injection_years=duration_years - inj,
            report_interval_days=self.schedule.report_interval_days)

    # ---- serialization -----------------------------------------------------

    def to_dict(self) -> dict:
        raw = asdict(self)
        raw["epoch_durations"] = (list(self.epoch_durations)
                                  if self.epoch_durations is not None else None)
        raw["log_perm_bounds"] = (list(self.log_perm_bounds)
                                  if self.log_perm_bounds is not None else None)
        raw["monitor_wells"] = list(self.monitor_wells)
        raw["legacy_wells"] = list(self.legacy_wells)
        return raw

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def _example1(full_scale: bool) -> dict:
    nx, ny, nz = (51, 51, 11) if full_scale else (21, 21, 3)
    return {
        "nx": nx, "ny": ny, "nz": nz,
        "dx": 4000.0 / nx, "dy": 4000.0 / ny,
        "layer_thickness": 60.0 / nz,
        "top_depth": 1000.0,
        "top_depth_max": None,
        "ensemble_size": 100 if full_scale else 50,
        "boundary": "no_flow",
        "schedule": InjectionSchedule(rate=1e9 / YEAR_SECONDS,
                                      injection_years=5.0,
                                      post_injection_years=10.0),
        "monitoring_duration": 5.0,
        "variogram": VariogramSpec(),
        "porosity": 0.15,
    }


def _rsu(full_scale: bool) -> dict:
    nx, ny, nz = (51, 51, 5) if full_scale else (21, 21, 3)
    return {
        "nx": nx, "ny": ny, "nz": nz,
        "dx": 6000.0 / nx, "dy": 6000.0 / ny,
        "layer_thickness": 90.0 / nz,
        "top_depth": 2800.0,
        "top_depth_max": 4300.0,
        "ensemble_size": 100 if full_scale else 50,
        "boundary": "constant_pressure",
        "schedule": InjectionSchedule(rate=1e9 / YEAR_SECONDS,
                                      injection_years=10.0,
                                      post_injection_years=50.0),
        "monitoring_duration": 3.0,
        "variogram": VariogramSpec(range_x=1200.0, range_y=1200.0),
        "porosity": 0.15,
        "legacy_wells": ("L1",),
        "aquifer_depth": 400.0,
    }


PRESETS = {"example1": _example1, "rsu": _rsu}

_NESTED_FIELDS = {
    "variogram": VariogramSpec,
    "schedule": InjectionSchedule,
    "fluids": FluidRockProps,
    "aquifer": AquiferProps,
    "thresholds": PlumeThresholds,
}
_TUPLE_FIELDS = ("monitor_wells", "legacy_wells", "epoch_durations",
                 "log_perm_bounds")


def resolve_config(preset: str = "example1", full_scale: bool = False,
                   overrides: dict | None = None) -> ScenarioConfig:
    """Build a ScenarioConfig from a preset plus user overrides.

    Unknown keys are hard errors. Nested sections (``variogram``,
    ``schedule``, ``fluids``, ``aquifer``, ``thresholds``) take mapping
    values whose entries override the preset's fields.
    """
    if preset not in PRESETS and preset != "custom":
        raise ConfigError(f"unknown preset {preset!r}")
    values: dict = {} if preset == "custom" else PRESETS[preset](full_scale)
    values.setdefault("name", preset)
    values["preset"] = preset
    values["full_scale"] = full_scale

    allowed = set(ScenarioConfig.__dataclass_fields__)
    for key, val in (overrides or {}).items():
        if key in ("preset",):
            raise ConfigError(f"{key}: set via the preset argument, not overrides")
        if key not in allowed:
            raise ConfigError(f"unknown config key {key!r}")
        if key in _NESTED_FIELDS and isinstance(val, dict):
            cls = _NESTED_FIELDS[key]
            base = values.get(key, ScenarioConfig.__dataclass_fields__[key]
                              .default_factory())
            merged = asdict(base)
            unknown = set(val) - set(merged)
            if unknown:
                raise ConfigError(f"{key}: unknown keys {sorted(unknown)}")
            merged.update(val)
            try:
                values[key] = cls(**merged)
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"{key}: {exc}") from exc
        elif key in _TUPLE_FIELDS and val is not None:
            values[key] = tuple(val)
        else:
            values[key] = val

    try:
        return ScenarioConfig(**values)
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def config_from_dict(raw: dict) -> ScenarioConfig:
    """Rebuild a ScenarioConfig from its to_dict() serialization."""
    raw = dict(raw)
    preset = raw.pop("preset", "example1")
    full_scale = bool(raw.pop("full_scale", False))
    return resolve_config(preset, full_scale, raw)
