"""Groundwater-aquifer impact reduced-order model.

Plume volumes follow a rate-driven steady-mixing power law, V = c * q^a,
relaxed in time with a first-order lag so volumes respond gradually to rate
changes. Rate-driven (rather than cumulative-driven) so a steady leakage rate
yields a pseudo-steady plume volume instead of unbounded growth.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .flowsim import YEAR_SECONDS
from .leakpath import LeakageSeries

__all__ = ["AquiferProps", "ImpactSeries", "impact_series"]


@dataclass(frozen=True)
class AquiferProps:
    """Receptor-aquifer description and mixing-law coefficients.

    thickness/porosity describe the aquifer (reserved for volumetric
    variants); the impact law itself uses the coefficients and exponents.
    """

    thickness: float = 20.0
    porosity: float = 0.25
    coef_ph: float = 2e7    # m^3 per (kg/s)^exp_ph
    coef_tds: float = 5e6   # m^3 per (kg/s)^exp_tds
    exp_ph: float = 1.0
    exp_tds: float = 1.0
    relax_time_days: float = 90.0

    def __post_init__(self):
        if self.thickness <= 0 or not 0 < self.porosity < 1:
            raise ValueError("aquifer thickness/porosity out of range")
        if self.coef_ph <= 0 or self.coef_tds <= 0:
            raise ValueError("mixing coefficients must be > 0")
        for e in (self.exp_ph, self.exp_tds):
            if not 0 < e <= 2:
                raise ValueError("mixing exponents must lie in (0, 2]")
        if self.relax_time_days <= 0:
            raise ValueError("relaxation time must be > 0")


@dataclass(frozen=True, eq=False)
class ImpactSeries:
    """pH and TDS plume volumes over the report times."""

    times: np.ndarray   # years
    vol_ph: np.ndarray  # m^3
    vol_tds: np.ndarray

    def __post_init__(self):
        arrays = {}
        for name in ("times", "vol_ph", "vol_tds"):
            arr = np.asarray(getattr(self, name), dtype=float).copy()
            arr.setflags(write=False)
            arrays[name] = arr
        nt = arrays["times"].size
        if any(a.size != nt for a in arrays.values()):
            raise ValueError("impact series must share the time axis")
        if np.any(arrays["vol_ph"] < 0) or np.any(arrays["vol_tds"] < 0):
            raise ValueError("plume volumes must be >= 0")
        for name, arr in arrays.items():
            object.__setattr__(self, name, arr)


def _relaxed(times_years: np.ndarray, target: np.ndarray, tau_years: float) -> np.ndarray:
    """First-order lag toward the target series, starting at the steady
    volume of the initial rate."""
    out = np.empty_like(target)
    out[0] = target[0]
    decay = np.exp(-np.diff(times_years) / tau_years)
    for i in range(1, target.size):
        out[i] = target[i] + (out[i - 1] - target[i]) * decay[i - 1]
    return out


def impact_series(leak: LeakageSeries, props: AquiferProps) -> ImpactSeries:
    """Map a leakage series to pH/TDS plume-volume series."""
    tau_years = props.relax_time_days * 86400.0 / YEAR_SECONDS
    target_ph = props.coef_ph * leak.q_co2**props.exp_ph
    target_tds = props.coef_tds * leak.q_brine**props.exp_tds
    return ImpactSeries(leak.times,
                        _relaxed(leak.times, target_ph, tau_years),
                        _relaxed(leak.times, target_tds, tau_years))
