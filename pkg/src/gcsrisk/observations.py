"""Timestamped well observations with per-datum noise variances."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

__all__ = ["ObservationSet"]


@dataclass(frozen=True, eq=False)
class ObservationSet:
    """Flat observation vector with (well, quantity, time) labels.

    ``variances`` is the diagonal of the measurement-error covariance. Zero
    variances are representable (exact synthetic data) but rejected by the
    assimilation operators, which need an invertible error covariance.
    """

    wells: tuple[str, ...]
    quantities: tuple[str, ...]
    times: np.ndarray
    values: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        wells = tuple(str(w) for w in self.wells)
        quantities = tuple(str(q) for q in self.quantities)
        times = np.asarray(self.times, dtype=float).copy()
        values = np.asarray(self.values, dtype=float).copy()
        variances = np.asarray(self.variances, dtype=float).copy()
        n = len(wells)
        if not (len(quantities) == times.size == values.size == variances.size == n):
            raise ValueError("label and data arrays must have equal length")
        if np.any(variances < 0):
            raise ValueError("noise variances must be >= 0")
        labels = list(zip(wells, quantities, times.tolist()))
        if len(set(labels)) != n:
            raise ValueError("(well, quantity, time) labels must be unique")
        for arr in (times, values, variances):
            arr.setflags(write=False)
        object.__setattr__(self, "wells", wells)
        object.__setattr__(self, "quantities", quantities)
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "variances", variances)

    @classmethod
    def empty(cls) -> "ObservationSet":
        return cls((), (), np.empty(0), np.empty(0), np.empty(0))

    @property
    def n_data(self) -> int:
        return self.values.size

    def __len__(self) -> int:
        return self.n_data

    def truncated(self, max_time: float) -> "ObservationSet":
        """Subset with times <= max_time (years), preserving order."""
        keep = self.times <= max_time + 1e-12
        idx = np.flatnonzero(keep)
        return ObservationSet(
            tuple(self.wells[i] for i in idx),
            tuple(self.quantities[i] for i in idx),
            self.times[idx], self.values[idx], self.variances[idx],
        )

    def for_quantity(self, quantity: str) -> np.ndarray:
        """Indices of all data of one quantity."""
        return np.array([i for i, q in enumerate(self.quantities) if q == quantity],
                        dtype=int)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write("time,well,quantity,value,std\n")
            for i in range(self.n_data):
                fh.write(f"{self.times[i]!r},{self.wells[i]},{self.quantities[i]},"
                         f"{self.values[i]!r},{float(np.sqrt(self.variances[i]))!r}\n")

    @classmethod
    def from_csv(cls, path) -> "ObservationSet":
        wells, quantities, times, values, variances = [], [], [], [], []
        with open(path, newline="") as fh:
            header = fh.readline().strip()
            if header != "time,well,quantity,value,std":
                raise ValueError(f"unexpected observation CSV header: {header!r}")
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                t, w, q, v, s = line.split(",")
                times.append(float(t))
                wells.append(w)
                quantities.append(q)
                values.append(float(v))
                variances.append(float(s) ** 2)
        return cls(tuple(wells), tuple(quantities), np.array(times),
                   np.array(values), np.array(variances))
