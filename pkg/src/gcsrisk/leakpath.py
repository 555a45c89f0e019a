"""Wellbore leakage reduced-order model.

Quasi-steady Darcy column flow per phase from the reservoir top into an
overlying aquifer: q_p = rho_p (k_w A / L) (kr_p(s) / mu_p) max(0, dp_p) with
dp_p = p_res - p_aq - rho_p g L. Rates clamp at zero (no back-flow modeled);
leakage never feeds back into the reservoir solution, so legacy wells can be
evaluated post hoc at any column.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import cumulative_trapezoid

from .flowsim import YEAR_SECONDS, FluidRockProps, SimulationResult, WellSpec
from .riskmetrics import onset_from_rates

__all__ = ["LegacyWellProps", "LeakageSeries", "leakage_rates", "leakage_series"]

ONSET_RATE_EPS = 1e-6  # kg/s


@dataclass(frozen=True)
class LegacyWellProps:
    """Effective properties of one leaky legacy wellbore."""

    permeability: float = 1e-13   # m^2
    area: float = 0.05            # m^2
    length: float = 800.0         # m, reservoir top to aquifer bottom
    aquifer_pressure: float = 2.0e6  # Pa at the aquifer bottom
    gravity: float = 9.81

    def __post_init__(self):
        vals = (self.permeability, self.area, self.length,
                self.aquifer_pressure, self.gravity)
        if any(v <= 0 for v in vals):
            raise ValueError("legacy-well properties must all be positive")

    @classmethod
    def for_site(cls, top_depth: float, fluids: FluidRockProps,
                 aquifer_depth: float = 200.0, permeability: float = 1e-13,
                 area: float = 0.05) -> "LegacyWellProps":
        """Props with path length and hydrostatic aquifer pressure derived
        from the reservoir top depth and an aquifer depth."""
        if aquifer_depth >= top_depth:
            raise ValueError("aquifer must lie above the reservoir top")
        p_aq = fluids.rho_brine * fluids.gravity * aquifer_depth
        return cls(permeability=permeability, area=area,
                   length=top_depth - aquifer_depth, aquifer_pressure=p_aq,
                   gravity=fluids.gravity)


@dataclass(frozen=True, eq=False)
class LeakageSeries:
    """CO2/brine leakage rates and cumulative masses at one legacy well."""

    times: np.ndarray      # years
    q_co2: np.ndarray      # kg/s
    q_brine: np.ndarray
    cum_co2: np.ndarray    # kg
    cum_brine: np.ndarray
    onset_time_co2: float | None

    def __post_init__(self):
        arrays = {}
        for name in ("times", "q_co2", "q_brine", "cum_co2", "cum_brine"):
            arr = np.asarray(getattr(self, name), dtype=float).copy()
            arr.setflags(write=False)
            arrays[name] = arr
        nt = arrays["times"].size
        if any(a.size != nt for a in arrays.values()):
            raise ValueError("all series must share the time axis")
        if np.any(arrays["q_co2"] < 0) or np.any(arrays["q_brine"] < 0):
            raise ValueError("leakage rates must be >= 0")
        for name in ("cum_co2", "cum_brine"):
            if np.any(np.diff(arrays[name]) < 0):
                raise ValueError(f"{name} must be non-decreasing")
        for name, arr in arrays.items():
            object.__setattr__(self, name, arr)

    def to_csv(self, path, well: str = "") -> None:
        with open(path, "w", newline="") as fh:
            fh.write("time,well,q_co2,q_brine,cum_co2,cum_brine\n")
            for i in range(self.times.size):
                fh.write(f"{self.times[i]!r},{well},{self.q_co2[i]!r},"
                         f"{self.q_brine[i]!r},{self.cum_co2[i]!r},"
                         f"{self.cum_brine[i]!r}\n")


def leakage_rates(p_res, s_res, props: LegacyWellProps,
                  fluids: FluidRockProps) -> tuple[np.ndarray, np.ndarray]:
    """Instantaneous (q_co2, q_brine) in kg/s for reservoir-cell P and S.

    Accepts scalars or arrays; broadcasting applies.
    """
    p_res = np.asarray(p_res, dtype=float)
    s_res = np.asarray(s_res, dtype=float)
    if np.any(p_res < 0):
        raise ValueError("reservoir pressure must be >= 0")
    if np.any((s_res < 0) | (s_res > 1)):
        raise ValueError("saturation must lie in [0, 1]")
    conduct = props.permeability * props.area / props.length
    head_c = fluids.rho_co2 * props.gravity * props.length
    head_b = fluids.rho_brine * props.gravity * props.length
    dp_c = np.maximum(p_res - props.aquifer_pressure - head_c, 0.0)
    dp_b = np.maximum(p_res - props.aquifer_pressure - head_b, 0.0)
    q_c = fluids.rho_co2 * conduct * fluids.kr_co2(s_res) / fluids.mu_co2 * dp_c
    q_b = fluids.rho_brine * conduct * fluids.kr_brine(s_res) / fluids.mu_brine * dp_b
    return q_c, q_b


def leakage_series(sim: SimulationResult, legacy_well: WellSpec,
                   props: LegacyWellProps, fluids: FluidRockProps,
                   eps_rate: float = ONSET_RATE_EPS) -> LeakageSeries:
    """Leakage rate series at a legacy well, from its top completion cell.

    Cumulative masses come from trapezoidal integration over the report
    times; onset is the first time q_co2 exceeds ``eps_rate``.
    """
    legacy_well.validate_against(sim.geometry)
    k = legacy_well.trace_layer(sim.geometry)
    p_cell = sim.pressure[:, legacy_well.i, legacy_well.j, k]
    s_cell = sim.saturation[:, legacy_well.i, legacy_well.j, k]
    q_c, q_b = leakage_rates(p_cell, s_cell, props, fluids)
    t_sec = sim.times * YEAR_SECONDS
    cum_c = cumulative_trapezoid(q_c, t_sec, initial=0.0)
    cum_b = cumulative_trapezoid(q_b, t_sec, initial=0.0)
    onset = onset_from_rates(sim.times, q_c, eps_rate)
    return LeakageSeries(sim.times, q_c, q_b, cum_c, cum_b, onset)
