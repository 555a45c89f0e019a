"""Grid and model types, and unconditional Gaussian prior ensembles.

Log-permeability fields (natural log of millidarcy) are sampled as stationary
Gaussian random fields on the horizontal grid plane via circulant embedding,
with a dense Cholesky fallback for small grids whose embedding is indefinite.
Conversion to SI permeability happens only inside the flow simulator.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import _seeds

__all__ = [
    "MDARCY_TO_M2",
    "GridGeometry",
    "VariogramSpec",
    "ReservoirModel",
    "Ensemble",
    "sample_field",
    "generate_prior_ensemble",
    "field_to_csv",
    "field_to_binary",
    "field_from_binary",
]

MDARCY_TO_M2 = 9.869233e-16


@dataclass(frozen=True, eq=False)
class GridGeometry:
    """Regular-grid discretization, x-fastest ordering, depth positive down.

    Parameters
    ----------
    nx, ny, nz : int
        Cell counts (>= 1).
    dx, dy : float
        Horizontal cell size (m).
    layer_thickness : float or sequence of float
        Per-layer thickness (m); a scalar is broadcast to all nz layers.
    top_depth : float or (nx, ny) array
        Depth of the reservoir top (m). An array describes a laterally
        varying (dipping) top surface.
    """

    nx: int
    ny: int
    nz: int
    dx: float
    dy: float
    layer_thickness: tuple[float, ...] = (10.0,)
    top_depth: float | np.ndarray = 1000.0

    def __post_init__(self):
        if min(self.nx, self.ny, self.nz) < 1:
            raise ValueError("cell counts nx, ny, nz must be >= 1")
        if self.dx <= 0 or self.dy <= 0:
            raise ValueError("cell sizes dx, dy must be > 0")
        thick = np.atleast_1d(np.asarray(self.layer_thickness, dtype=float))
        if thick.size == 1:
            thick = np.repeat(thick, self.nz)
        if thick.size != self.nz:
            raise ValueError(f"layer_thickness needs 1 or nz={self.nz} entries")
        if np.any(thick <= 0):
            raise ValueError("layer thicknesses must be > 0")
        object.__setattr__(self, "layer_thickness", tuple(float(t) for t in thick))
        top = np.asarray(self.top_depth, dtype=float)
        if top.ndim == 0:
            if top <= 0:
                raise ValueError("top_depth must be > 0")
            object.__setattr__(self, "top_depth", float(top))
        else:
            if top.shape != (self.nx, self.ny):
                raise ValueError("array top_depth must have shape (nx, ny)")
            if np.any(top <= 0):
                raise ValueError("top_depth must be > 0 everywhere")
            top = top.copy()
            top.setflags(write=False)
            object.__setattr__(self, "top_depth", top)

    def __eq__(self, other) -> bool:
        if not isinstance(other, GridGeometry):
            return NotImplemented
        return ((self.nx, self.ny, self.nz, self.dx, self.dy, self.layer_thickness)
                == (other.nx, other.ny, other.nz, other.dx, other.dy,
                    other.layer_thickness)
                and np.array_equal(self.top_depth, other.top_depth))

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny * self.nz

    @property
    def shape(self) -> tuple[int, int, int]:
        return (self.nx, self.ny, self.nz)

    @property
    def lateral_extent(self) -> tuple[float, float]:
        """Domain size (m) in x and y."""
        return (self.nx * self.dx, self.ny * self.dy)

    @property
    def cell_area(self) -> float:
        return self.dx * self.dy

    def thickness_array(self) -> np.ndarray:
        return np.asarray(self.layer_thickness)

    def top_depth_map(self) -> np.ndarray:
        """Top depth as an (nx, ny) array."""
        top = self.top_depth
        if np.ndim(top) == 0:
            return np.full((self.nx, self.ny), float(top))
        return np.asarray(top)

    def cell_depths(self) -> np.ndarray:
        """Cell-center depths (m), shape (nx, ny, nz)."""
        thick = self.thickness_array()
        centers = np.cumsum(thick) - 0.5 * thick
        return self.top_depth_map()[:, :, None] + centers[None, None, :]

    def cell_volumes(self) -> np.ndarray:
        """Cell volumes (m^3), shape (nz,); identical for every column."""
        return self.cell_area * self.thickness_array()


@dataclass(frozen=True)
class VariogramSpec:
    """Stationary covariance model for horizontal log-permeability.

    ``range_x``/``range_y`` use the practical-range convention: for the
    exponential model the correlation drops to exp(-3) at lag = range.
    """

    model: str = "exponential"
    range_x: float = 800.0
    range_y: float = 800.0
    sill: float = 1.0
    mean_logk: float = float(np.log(100.0))

    _MODELS = ("exponential", "spherical", "gaussian")

    def __post_init__(self):
        if self.model not in self._MODELS:
            raise ValueError(f"unknown variogram model {self.model!r}")
        if self.range_x <= 0 or self.range_y <= 0:
            raise ValueError("correlation ranges must be > 0")
        if self.sill < 0:
            raise ValueError("sill must be >= 0")

    def correlation(self, hx, hy) -> np.ndarray:
        """Correlation at lag components (hx, hy) in meters."""
        u = np.sqrt((np.asarray(hx) / self.range_x) ** 2
                    + (np.asarray(hy) / self.range_y) ** 2)
        if self.model == "exponential":
            return np.exp(-3.0 * u)
        if self.model == "gaussian":
            return np.exp(-3.0 * u * u)
        # spherical: exact zero beyond the range
        v = np.clip(u, 0.0, 1.0)
        return np.where(u <= 1.0, 1.0 - 1.5 * v + 0.5 * v**3, 0.0)


@dataclass(frozen=True, eq=False)
class ReservoirModel:
    """One realization of the uncertain reservoir: geometry plus cell fields."""

    geometry: GridGeometry
    log_perm: np.ndarray  # ln(mD), shape (nx, ny, nz)
    porosity: np.ndarray  # (-), shape (nx, ny, nz)
    id: str = "m0"

    def __post_init__(self):
        shape = self.geometry.shape
        logk = np.asarray(self.log_perm, dtype=float)
        if logk.shape != shape:
            raise ValueError(f"log_perm must have shape {shape}, got {logk.shape}")
        if not np.all(np.isfinite(logk)):
            raise ValueError("log_perm must be finite everywhere")
        poro = np.asarray(self.porosity, dtype=float)
        if poro.ndim == 0:
            poro = np.full(shape, float(poro))
        if poro.shape != shape:
            raise ValueError(f"porosity must be scalar or shape {shape}")
        if np.any(poro <= 0.0) or np.any(poro >= 1.0):
            raise ValueError("porosity must lie in (0, 1)")
        logk = logk.copy()
        logk.setflags(write=False)
        poro = poro.copy()
        poro.setflags(write=False)
        object.__setattr__(self, "log_perm", logk)
        object.__setattr__(self, "porosity", poro)

    def perm_m2(self) -> np.ndarray:
        """Permeability in m^2."""
        return np.exp(self.log_perm) * MDARCY_TO_M2

    def with_log_perm(self, log_perm: np.ndarray, id: str | None = None) -> "ReservoirModel":
        return ReservoirModel(self.geometry, log_perm, self.porosity,
                              self.id if id is None else id)


@dataclass(frozen=True, eq=False)
class Ensemble:
    """Ordered collection of reservoir models sharing one grid."""

    members: tuple[ReservoirModel, ...]

    def __post_init__(self):
        members = tuple(self.members)
        if not members:
            raise ValueError("an ensemble needs at least one member")
        geom = members[0].geometry
        for m in members[1:]:
            if m.geometry != geom:
                raise ValueError("all members must share one geometry")
        object.__setattr__(self, "members", members)

    @property
    def geometry(self) -> GridGeometry:
        return self.members[0].geometry

    @property
    def size(self) -> int:
        return len(self.members)

    def __len__(self) -> int:
        return len(self.members)

    def __iter__(self):
        return iter(self.members)

    def __getitem__(self, i: int) -> ReservoirModel:
        return self.members[i]


def _embedding_eigenvalues(geometry: GridGeometry, variogram: VariogramSpec,
                           pad: int) -> np.ndarray:
    """Eigenvalues of the periodic covariance embedding on a pad-times grid."""
    mx, my = pad * geometry.nx, pad * geometry.ny
    lx = np.arange(mx, dtype=float)
    lx = np.minimum(lx, mx - lx) * geometry.dx
    ly = np.arange(my, dtype=float)
    ly = np.minimum(ly, my - ly) * geometry.dy
    base = variogram.sill * variogram.correlation(lx[:, None], ly[None, :])
    return np.fft.fft2(base).real


def _sample_plane_spectral(geometry: GridGeometry, variogram: VariogramSpec,
                           lam: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    mx, my = lam.shape
    noise = rng.standard_normal((mx, my)) + 1j * rng.standard_normal((mx, my))
    spec = np.sqrt(np.clip(lam, 0.0, None) / (mx * my)) * noise
    plane = np.fft.fft2(spec).real[: geometry.nx, : geometry.ny]
    return variogram.mean_logk + plane


def _sample_plane_dense(geometry: GridGeometry, variogram: VariogramSpec,
                        rng: np.random.Generator) -> np.ndarray:
    nx, ny = geometry.nx, geometry.ny
    xs = np.arange(nx) * geometry.dx
    ys = np.arange(ny) * geometry.dy
    gx, gy = np.meshgrid(xs, ys, indexing="ij")
    px, py = gx.ravel(), gy.ravel()
    cov = variogram.sill * variogram.correlation(
        px[:, None] - px[None, :], py[:, None] - py[None, :]
    )
    cov[np.diag_indices_from(cov)] += 1e-10 * variogram.sill
    chol = np.linalg.cholesky(cov)
    plane = (chol @ rng.standard_normal(nx * ny)).reshape(nx, ny)
    return variogram.mean_logk + plane


_DENSE_FALLBACK_CELLS = 4096


def _sample_plane(geometry: GridGeometry, variogram: VariogramSpec,
                  rng: np.random.Generator) -> np.ndarray:
    """One (nx, ny) realization with the requested mean and covariance."""
    if variogram.sill == 0.0:
        return np.full((geometry.nx, geometry.ny), variogram.mean_logk)
    lam = None
    for pad in (2, 4):
        lam = _embedding_eigenvalues(geometry, variogram, pad)
        if lam.min() >= -1e-9 * lam.max():
            return _sample_plane_spectral(geometry, variogram, lam, rng)
    if geometry.nx * geometry.ny <= _DENSE_FALLBACK_CELLS:
        return _sample_plane_dense(geometry, variogram, rng)
    # Large indefinite embedding: clip the (small) negative eigenvalues.
    return _sample_plane_spectral(geometry, variogram, lam, rng)


def sample_field(geometry: GridGeometry, variogram: VariogramSpec, seed,
                 layer_replication: bool = True) -> np.ndarray:
    """Sample one stationary Gaussian log-permeability field.

    Parameters
    ----------
    geometry : GridGeometry
    variogram : VariogramSpec
    seed : int or numpy SeedSequence
        Fully determines the realization; same seed and spec give a
        bitwise-identical field.
    layer_replication : bool, default True
        Replicate one horizontal realization to every layer. If False, each
        layer is an independent realization.

    Returns
    -------
    ndarray, shape (nx, ny, nz)
    """
    rng = _seeds.generator(seed)
    if layer_replication:
        plane = _sample_plane(geometry, variogram, rng)
        return np.repeat(plane[:, :, None], geometry.nz, axis=2)
    planes = [_sample_plane(geometry, variogram, rng) for _ in range(geometry.nz)]
    return np.stack(planes, axis=2)


def generate_prior_ensemble(geometry: GridGeometry, variogram: VariogramSpec,
                            n: int, seed, porosity: float = 0.15,
                            layer_replication: bool = True,
                            id_prefix: str = "prior") -> Ensemble:
    """Generate an unconditional prior ensemble of n reservoir models.

    Member i draws from the derived stream (seed, i), so the ensemble is
    reproducible and independent of generation order.
    """
    if n < 1:
        raise ValueError("ensemble size n must be >= 1")
    poro = np.full(geometry.shape, float(porosity))
    members = []
    for i in range(n):
        logk = sample_field(geometry, variogram, _seeds.sequence(seed, i),
                            layer_replication=layer_replication)
        members.append(ReservoirModel(geometry, logk, poro, id=f"{id_prefix}_{i:03d}"))
    return Ensemble(tuple(members))


def field_to_csv(path, geometry: GridGeometry, values: np.ndarray) -> None:
    """Write a per-cell field as CSV rows (x, y, z, value).

    x/y are cell-center coordinates (m), z is cell-center depth (m).
    """
    values = np.asarray(values)
    if values.shape != geometry.shape:
        raise ValueError(f"field must have shape {geometry.shape}")
    depths = geometry.cell_depths()
    xs = (np.arange(geometry.nx) + 0.5) * geometry.dx
    ys = (np.arange(geometry.ny) + 0.5) * geometry.dy
    with open(path, "w", newline="") as fh:
        fh.write("x,y,z,value\n")
        for k in range(geometry.nz):
            for j in range(geometry.ny):
                for i in range(geometry.nx):
                    fh.write(f"{xs[i]!r},{ys[j]!r},{depths[i, j, k]!r},"
                             f"{values[i, j, k]!r}\n")


def field_to_binary(basename, geometry: GridGeometry, values: np.ndarray) -> tuple[Path, Path]:
    """Write a field as flat float64 binary plus a small JSON header.

    The binary is x-fastest (Fortran) ordered. Returns (bin_path, json_path).
    """
    values = np.asarray(values, dtype=float)
    if values.shape != geometry.shape:
        raise ValueError(f"field must have shape {geometry.shape}")
    base = Path(basename)
    bin_path = base.with_suffix(".bin")
    json_path = base.with_suffix(".json")
    values.ravel(order="F").tofile(bin_path)
    header = {
        "nx": geometry.nx,
        "ny": geometry.ny,
        "nz": geometry.nz,
        "dx": geometry.dx,
        "dy": geometry.dy,
        "ordering": "x-fastest",
        "dtype": "float64",
    }
    json_path.write_text(json.dumps(header, sort_keys=True, indent=2) + "\n")
    return bin_path, json_path


def field_from_binary(basename) -> tuple[dict, np.ndarray]:
    """Read a field written by :func:`field_to_binary`.

    Returns (header dict, values array of shape (nx, ny, nz)).
    """
    base = Path(basename)
    header = json.loads(base.with_suffix(".json").read_text())
    if header.get("ordering") != "x-fastest":
        raise ValueError(f"unsupported ordering {header.get('ordering')!r}")
    flat = np.fromfile(base.with_suffix(".bin"), dtype=header.get("dtype", "float64"))
    shape = (header["nx"], header["ny"], header["nz"])
    if flat.size != np.prod(shape):
        raise ValueError("binary size does not match header dims")
    return header, flat.reshape(shape, order="F")
