"""Desk-scale workbench for dynamic leakage-risk assessment of CO2 storage.

Geostatistical prior ensembles feed a simplified two-phase reservoir
simulator; synthetic monitoring data are assimilated with ES-MDA using
geometric inflation factors; updated ensembles drive wellbore-leakage and
aquifer-impact reduced-order models; and risk metrics are summarized as
ensemble percentile bands across monitoring scenarios.
"""

__version__ = "0.1.0"

from .esmda import (InflationSchedule, MismatchReport, assimilate,
                    choose_alpha1, compute_mismatch, constant_schedule,
                    esmda_update, gaspari_cohn, geometric_schedule)
from .flowsim import (FluidRockProps, InjectionSchedule, SimulationError,
                      SimulationResult, WellSpec, sample_observations,
                      simulate, stored_co2_mass)
from .geomodel import (Ensemble, GridGeometry, ReservoirModel, VariogramSpec,
                       field_from_binary, field_to_binary, field_to_csv,
                       generate_prior_ensemble, sample_field)
from .leakpath import LeakageSeries, LegacyWellProps, leakage_rates, leakage_series
from .observations import ObservationSet
from .pipeline import (ConformanceStatus, RiskReport, conformance_check,
                       persist_report, run_dynamic_assessment,
                       run_scenario_suite, run_twin_experiment)
from .receptor import AquiferProps, ImpactSeries, impact_series
from .riskmetrics import (BandStats, EnsembleBand, PlumeThresholds,
                          ensemble_band, onset_time, pressure_plume_area,
                          saturation_plume_area, scalar_band)
from .scenario import ConfigError, ScenarioConfig, resolve_config

__all__ = [
    "__version__",
    # geomodel
    "GridGeometry", "VariogramSpec", "ReservoirModel", "Ensemble",
    "sample_field", "generate_prior_ensemble", "field_to_csv",
    "field_to_binary", "field_from_binary",
    # flowsim
    "WellSpec", "InjectionSchedule", "FluidRockProps", "SimulationResult",
    "SimulationError", "simulate", "stored_co2_mass", "sample_observations",
    # observations / esmda
    "ObservationSet", "InflationSchedule", "MismatchReport",
    "geometric_schedule", "constant_schedule", "choose_alpha1",
    "compute_mismatch", "esmda_update", "gaspari_cohn", "assimilate",
    # leakpath / receptor
    "LegacyWellProps", "LeakageSeries", "leakage_rates", "leakage_series",
    "AquiferProps", "ImpactSeries", "impact_series",
    # riskmetrics
    "PlumeThresholds", "BandStats", "EnsembleBand", "pressure_plume_area",
    "saturation_plume_area", "onset_time", "scalar_band", "ensemble_band",
    # scenario / pipeline
    "ScenarioConfig", "ConfigError", "resolve_config", "ConformanceStatus",
    "RiskReport", "run_twin_experiment", "conformance_check",
    "run_dynamic_assessment", "run_scenario_suite", "persist_report",
]
