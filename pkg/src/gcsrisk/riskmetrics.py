"""Risk metrics: plume areas, leakage onset, and ensemble uncertainty bands."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geomodel import GridGeometry

__all__ = [
    "PlumeThresholds",
    "BandStats",
    "EnsembleBand",
    "pressure_plume_area",
    "saturation_plume_area",
    "onset_from_rates",
    "onset_time",
    "scalar_band",
    "ensemble_band",
]

PERCENTILES = (10.0, 50.0, 90.0)


@dataclass(frozen=True)
class PlumeThresholds:
    """Thresholds defining the map-view pressure and saturation plumes."""

    overpressure: float = 0.1e6  # Pa
    saturation: float = 0.01

    def __post_init__(self):
        if self.overpressure <= 0 or self.saturation <= 0:
            raise ValueError("plume thresholds must be > 0")


@dataclass(frozen=True)
class BandStats:
    """Order statistics of one scalar across ensemble members."""

    minimum: float
    p10: float
    p50: float
    p90: float
    maximum: float

    def __post_init__(self):
        seq = (self.minimum, self.p10, self.p50, self.p90, self.maximum)
        if any(b < a for a, b in zip(seq, seq[1:])):
            raise ValueError("band statistics must be ordered")

    @property
    def width(self) -> float:
        """P10-P90 spread."""
        return self.p90 - self.p10


@dataclass(frozen=True, eq=False)
class EnsembleBand:
    """Per-time min/P10/P50/P90/max of a scalar series across members."""

    times: np.ndarray
    minimum: np.ndarray
    p10: np.ndarray
    p50: np.ndarray
    p90: np.ndarray
    maximum: np.ndarray

    def __post_init__(self):
        arrays = {}
        for name in ("times", "minimum", "p10", "p50", "p90", "maximum"):
            arr = np.asarray(getattr(self, name), dtype=float).copy()
            arr.setflags(write=False)
            arrays[name] = arr
        nt = arrays["times"].size
        if any(a.size != nt for a in arrays.values()):
            raise ValueError("band arrays must share the time axis")
        order = ("minimum", "p10", "p50", "p90", "maximum")
        for lo, hi in zip(order, order[1:]):
            if np.any(arrays[hi] < arrays[lo] - 1e-12):
                raise ValueError(f"percentile ordering violated: {hi} < {lo}")
        for name, arr in arrays.items():
            object.__setattr__(self, name, arr)

    @property
    def width(self) -> np.ndarray:
        """P10-P90 spread per time."""
        return self.p90 - self.p10

    def mean_width(self) -> float:
        return float(self.width.mean())


def pressure_plume_area(pressure: np.ndarray, initial: np.ndarray,
                        geometry: GridGeometry, overpressure: float) -> float:
    """Map-view area (m^2) of columns whose max overpressure exceeds the
    threshold."""
    pressure = np.asarray(pressure)
    initial = np.asarray(initial)
    if pressure.shape != geometry.shape or initial.shape != geometry.shape:
        raise ValueError(f"fields must have shape {geometry.shape}")
    column_max = (pressure - initial).max(axis=2)
    return float(np.count_nonzero(column_max > overpressure) * geometry.cell_area)


def saturation_plume_area(saturation: np.ndarray, geometry: GridGeometry,
                          threshold: float) -> float:
    """Map-view area (m^2) of columns whose max CO2 saturation exceeds the
    threshold."""
    saturation = np.asarray(saturation)
    if saturation.shape != geometry.shape:
        raise ValueError(f"field must have shape {geometry.shape}")
    column_max = saturation.max(axis=2)
    return float(np.count_nonzero(column_max > threshold) * geometry.cell_area)


def onset_from_rates(times: np.ndarray, rates: np.ndarray,
                     eps_rate: float) -> float | None:
    """First time (years) the rate exceeds eps_rate, or None if it never does."""
    times = np.asarray(times, dtype=float)
    rates = np.asarray(rates, dtype=float)
    if times.shape != rates.shape:
        raise ValueError("times and rates must have equal length")
    above = np.flatnonzero(rates > eps_rate)
    if above.size == 0:
        return None
    return float(times[above[0]])


def onset_time(series, eps_rate: float = 1e-6) -> float | None:
    """Onset of CO2 leakage for anything exposing .times and .q_co2."""
    return onset_from_rates(series.times, series.q_co2, eps_rate)


def scalar_band(values) -> BandStats:
    """Band statistics of scalars across members (linear-interpolated
    percentiles between closest ranks)."""
    values = np.asarray(values, dtype=float)
    if values.ndim != 1 or values.size == 0:
        raise ValueError("need a non-empty 1D array of member values")
    p10, p50, p90 = np.percentile(values, PERCENTILES)
    return BandStats(float(values.min()), float(p10), float(p50), float(p90),
                     float(values.max()))


def ensemble_band(values: np.ndarray, times: np.ndarray) -> EnsembleBand:
    """Band of per-member series; values has shape (N_e, nt).

    Percentiles interpolate linearly between closest order statistics, the
    numpy default, so bands are reproducible bit for bit.
    """
    values = np.asarray(values, dtype=float)
    times = np.asarray(times, dtype=float)
    if values.ndim != 2 or values.shape[0] < 1:
        raise ValueError("values must be (N_e, nt) with N_e >= 1")
    if values.shape[1] != times.size:
        raise ValueError("values and times disagree on the time axis")
    p10, p50, p90 = np.percentile(values, PERCENTILES, axis=0)
    return EnsembleBand(times, values.min(axis=0), p10, p50, p90,
                        values.max(axis=0))
