"""Simplified two-phase (CO2/brine) finite-volume reservoir simulator.

Immiscible, slightly compressible IMPES scheme: implicit pressure with
two-point flux transmissibilities (harmonic permeability means), explicit
phase-potential-upwinded saturation transport with CFL-limited sub-stepping
inside each report interval. No capillary pressure, no dissolution; gravity
acts on every face with a depth difference.

CO2 mass is accounted exactly: the saturation update applies precisely the
face fluxes and well sources that are integrated into the cumulative injected
and boundary-outflux tallies, so the mass-balance residual is at rounding
level by construction.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _seeds
from .geomodel import GridGeometry, ReservoirModel
from .observations import ObservationSet

__all__ = [
    "YEAR_SECONDS",
    "WellSpec",
    "InjectionSchedule",
    "FluidRockProps",
    "SimulationResult",
    "SimulationError",
    "simulate",
    "stored_co2_mass",
    "sample_observations",
]

YEAR_SECONDS = 365.25 * 86400.0
DAY_SECONDS = 86400.0

WELL_KINDS = ("injector", "monitor", "legacy")
BOUNDARIES = ("constant_pressure", "no_flow")


class SimulationError(RuntimeError):
    """Raised when a pressure solve fails to meet the residual tolerance."""


@dataclass(frozen=True)
class WellSpec:
    """Grid column of a well; injectors are sources, the rest are probes."""

    name: str
    i: int
    j: int
    kind: str
    completion: tuple[int, ...] | None = None  # layer indices, None = all

    def __post_init__(self):
        if self.kind not in WELL_KINDS:
            raise ValueError(f"unknown well kind {self.kind!r}")
        if self.completion is not None:
            comp = tuple(int(k) for k in self.completion)
            if not comp:
                raise ValueError("completion must be None or non-empty")
            object.__setattr__(self, "completion", comp)

    def validate_against(self, geometry: GridGeometry) -> None:
        if not (0 <= self.i < geometry.nx and 0 <= self.j < geometry.ny):
            raise ValueError(f"well {self.name} at ({self.i}, {self.j}) "
                             f"outside {geometry.nx}x{geometry.ny} grid")
        for k in self.layers(geometry):
            if not 0 <= k < geometry.nz:
                raise ValueError(f"well {self.name} completion layer {k} outside grid")

    def layers(self, geometry: GridGeometry) -> tuple[int, ...]:
        if self.completion is None:
            return tuple(range(geometry.nz))
        return self.completion

    def trace_layer(self, geometry: GridGeometry) -> int:
        """Layer where pressure/saturation traces are recorded (shallowest)."""
        return min(self.layers(geometry))


@dataclass(frozen=True)
class InjectionSchedule:
    """Mass rate and timing of the injection plus post-injection period."""

    rate: float = 1e9 / YEAR_SECONDS  # kg/s; preset 1 MM t/yr
    injection_years: float = 5.0
    post_injection_years: float = 10.0
    report_interval_days: float = 365.25 / 12.0  # monthly

    def __post_init__(self):
        if self.rate < 0:
            raise ValueError("injection rate must be >= 0")
        if self.injection_years < 0 or self.post_injection_years < 0:
            raise ValueError("period durations must be >= 0")
        if self.report_interval_days <= 0:
            raise ValueError("report interval must be > 0")

    @property
    def total_years(self) -> float:
        return self.injection_years + self.post_injection_years

    @property
    def dt_years(self) -> float:
        return self.report_interval_days / 365.25

    @property
    def n_reports(self) -> int:
        return int(round(self.total_years / self.dt_years))

    def report_times(self) -> np.ndarray:
        """Report times in years, including t = 0."""
        return np.arange(self.n_reports + 1) * self.dt_years


@dataclass(frozen=True)
class FluidRockProps:
    """Constant fluid and rock properties (the paper-silent plumbing).

    Relative permeabilities are Corey power laws on effective saturations
    clipped to [0, 1], so kr_brine equals its endpoint in virgin brine and
    kr_co2 is exactly zero at or below the residual CO2 saturation.
    """

    rho_co2: float = 700.0       # kg/m3
    rho_brine: float = 1020.0
    mu_co2: float = 6e-5         # Pa s
    mu_brine: float = 5e-4
    corey_exp_co2: float = 2.0
    corey_exp_brine: float = 2.0
    kr_end_co2: float = 0.6
    kr_end_brine: float = 1.0
    s_res_co2: float = 0.05
    s_res_brine: float = 0.2
    rock_compressibility: float = 1e-9  # 1/Pa
    p_datum: float | None = None  # Pa at datum_depth; None = brine hydrostatic
    datum_depth: float | None = None  # m; None = shallowest reservoir top
    gravity: float = 9.81

    def __post_init__(self):
        if min(self.rho_co2, self.rho_brine, self.mu_co2, self.mu_brine) <= 0:
            raise ValueError("densities and viscosities must be > 0")
        for name in ("kr_end_co2", "kr_end_brine"):
            v = getattr(self, name)
            if not 0 < v <= 1:
                raise ValueError(f"{name} must lie in (0, 1]")
        if self.s_res_co2 < 0 or self.s_res_brine < 0:
            raise ValueError("residual saturations must be >= 0")
        if self.s_res_co2 + self.s_res_brine >= 1:
            raise ValueError("residual saturations must sum to < 1")
        if self.rock_compressibility < 0:
            raise ValueError("rock compressibility must be >= 0")
        if self.corey_exp_co2 <= 0 or self.corey_exp_brine <= 0:
            raise ValueError("Corey exponents must be > 0")

    def kr_co2(self, s) -> np.ndarray:
        span = 1.0 - self.s_res_co2 - self.s_res_brine
        se = np.clip((np.asarray(s, dtype=float) - self.s_res_co2) / span, 0.0, 1.0)
        return self.kr_end_co2 * se**self.corey_exp_co2

    def kr_brine(self, s) -> np.ndarray:
        span = 1.0 - self.s_res_co2 - self.s_res_brine
        se = np.clip((1.0 - np.asarray(s, dtype=float) - self.s_res_brine) / span,
                     0.0, 1.0)
        return self.kr_end_brine * se**self.corey_exp_brine

    def initial_pressure(self, geometry: GridGeometry) -> np.ndarray:
        """Hydrostatic brine pressure at cell centers, shape (nx, ny, nz)."""
        depths = geometry.cell_depths()
        datum = self.datum_depth
        if datum is None:
            datum = float(np.min(geometry.top_depth_map()))
        p_datum = self.p_datum
        if p_datum is None:
            p_datum = self.rho_brine * self.gravity * datum
        return p_datum + self.rho_brine * self.gravity * (depths - datum)


@dataclass(frozen=True, eq=False)
class SimulationResult:
    """Fields and traces at every report time (t = 0 included)."""

    geometry: GridGeometry
    times: np.ndarray        # years, shape (nt,)
    pressure: np.ndarray     # Pa, shape (nt, nx, ny, nz)
    saturation: np.ndarray   # -, shape (nt, nx, ny, nz)
    well_pressure: dict      # name -> (nt,) Pa at the trace cell
    well_saturation: dict    # name -> (nt,)
    injected_mass: np.ndarray        # cumulative kg, shape (nt,)
    boundary_outflux_mass: np.ndarray  # cumulative CO2 kg, shape (nt,)

    @property
    def initial_pressure(self) -> np.ndarray:
        return self.pressure[0]

    def well_names(self) -> tuple[str, ...]:
        return tuple(self.well_pressure)

    def traces_to_csv(self, path) -> None:
        """Well traces as CSV rows (time, well, quantity, value)."""
        with open(path, "w", newline="") as fh:
            fh.write("time,well,quantity,value\n")
            for name in self.well_names():
                for quantity, series in (("pressure", self.well_pressure[name]),
                                         ("saturation", self.well_saturation[name])):
                    for t, v in zip(self.times, series):
                        fh.write(f"{float(t)!r},{name},{quantity},{float(v)!r}\n")


class _Faces:
    """Precomputed face connectivity and geometric transmissibilities."""

    def __init__(self, model: ReservoirModel, boundary: str):
        geom = model.geometry
        nx, ny, nz = geom.shape
        perm = model.perm_m2().ravel(order="F")
        depth = geom.cell_depths().ravel(order="F")
        thick = geom.thickness_array()
        idx3 = np.arange(geom.n_cells).reshape(geom.shape, order="F")

        cell_a, cell_b, tgeo = [], [], []

        def harmonic(ka, kb, geo_factor):
            return geo_factor * 2.0 * ka * kb / (ka + kb)

        # x faces: area dy*h_k over distance dx
        if nx > 1:
            a = idx3[:-1, :, :].ravel(order="F")
            b = idx3[1:, :, :].ravel(order="F")
            hk = np.broadcast_to(thick[None, None, :], (nx - 1, ny, nz)).ravel(order="F")
            geo = geom.dy * hk / geom.dx
            cell_a.append(a)
            cell_b.append(b)
            tgeo.append(harmonic(perm[a], perm[b], geo))
        # y faces: area dx*h_k over distance dy
        if ny > 1:
            a = idx3[:, :-1, :].ravel(order="F")
            b = idx3[:, 1:, :].ravel(order="F")
            hk = np.broadcast_to(thick[None, None, :], (nx, ny - 1, nz)).ravel(order="F")
            geo = geom.dx * hk / geom.dy
            cell_a.append(a)
            cell_b.append(b)
            tgeo.append(harmonic(perm[a], perm[b], geo))
        # z faces: area dx*dy over half thicknesses
        if nz > 1:
            a = idx3[:, :, :-1].ravel(order="F")
            b = idx3[:, :, 1:].ravel(order="F")
            ha = np.broadcast_to(thick[None, None, :-1], (nx, ny, nz - 1)).ravel(order="F")
            hb = np.broadcast_to(thick[None, None, 1:], (nx, ny, nz - 1)).ravel(order="F")
            t = geom.cell_area / (ha / (2.0 * perm[a]) + hb / (2.0 * perm[b]))
            cell_a.append(a)
            cell_b.append(b)
            tgeo.append(t)

        if cell_a:
            self.cell_a = np.concatenate(cell_a)
            self.cell_b = np.concatenate(cell_b)
            self.tgeo = np.concatenate(tgeo)
        else:
            self.cell_a = np.empty(0, dtype=int)
            self.cell_b = np.empty(0, dtype=int)
            self.tgeo = np.empty(0)
        self.ddepth = depth[self.cell_a] - depth[self.cell_b]

        # Lateral Dirichlet faces (half-cell distance, ghost at cell depth).
        bc_cells, bc_tgeo = [], []
        if boundary == "constant_pressure":
            for side_idx, geo_factor in (
                (idx3[0, :, :], 2.0 * geom.dy / geom.dx),
                (idx3[-1, :, :], 2.0 * geom.dy / geom.dx),
                (idx3[:, 0, :], 2.0 * geom.dx / geom.dy),
                (idx3[:, -1, :], 2.0 * geom.dx / geom.dy),
            ):
                cells = side_idx.ravel(order="F")  # layer-major
                nlat = cells.size // nz
                hk = np.broadcast_to(thick[None, :], (nlat, nz)).ravel(order="F")
                bc_cells.append(cells)
                bc_tgeo.append(geo_factor * hk * perm[cells])
        if bc_cells:
            self.bc_cells = np.concatenate(bc_cells)
            self.bc_tgeo = np.concatenate(bc_tgeo)
        else:
            self.bc_cells = np.empty(0, dtype=int)
            self.bc_tgeo = np.empty(0)


def _distribute_rate(model: ReservoirModel, well: WellSpec) -> tuple[np.ndarray, np.ndarray]:
    """Completion cell indices and k*h weights (normalized) for a source well."""
    geom = model.geometry
    layers = np.asarray(well.layers(geom), dtype=int)
    flat = well.i + geom.nx * (well.j + geom.ny * layers)
    kh = model.perm_m2()[well.i, well.j, layers] * geom.thickness_array()[layers]
    weights = kh / kh.sum()
    return flat, weights


_CFL_SAFETY = 0.3
_MAX_SUBSTEP_RETRIES = 3
_PRESSURE_RTOL = 1e-10
_SAT_TOL = 1e-9
# Banded Cholesky beats general sparse LU while n * bandwidth^2 stays small.
_BANDED_FLOPS_LIMIT = 2e8
# Re-solve pressure after at most this fraction of a completion-cell pore
# volume has been injected; keeps the quasi-static splitting honest early on.
_STAGE_PV_FRACTION = 0.5
_MAX_STAGES = 64
# Transport still unstable after sub-step refinement means the frozen
# pressure field is stale; halve the stage and re-solve pressure instead.
_MAX_SPLIT_DEPTH = 10


class _StalePressure(Exception):
    """Internal: transport cannot stabilize under the current pressure."""


def simulate(model: ReservoirModel, wells, schedule: InjectionSchedule,
             props: FluidRockProps, boundary: str = "no_flow",
             gravity: bool = True) -> SimulationResult:
    """Run the two-phase simulation over injection plus post-injection.

    Parameters
    ----------
    model : ReservoirModel
    wells : sequence of WellSpec
        Exactly one injector; monitor/legacy wells are probes.
    schedule : InjectionSchedule
    props : FluidRockProps
    boundary : {"no_flow", "constant_pressure"}
        Lateral boundary condition; top and bottom are always sealed.
    gravity : bool
        Include buoyancy in face potentials.

    Returns
    -------
    SimulationResult

    Raises
    ------
    SimulationError
        If a pressure solve does not reach the residual tolerance.
    """
    if boundary not in BOUNDARIES:
        raise ValueError(f"unknown boundary {boundary!r}")
    geom = model.geometry
    wells = list(wells)
    for w in wells:
        w.validate_against(geom)
    injectors = [w for w in wells if w.kind == "injector"]
    if schedule.rate > 0 and len(injectors) != 1:
        raise ValueError("exactly one injector well is required")

    n = geom.n_cells
    g = props.gravity if gravity else 0.0
    faces = _Faces(model, boundary)
    vol = np.broadcast_to(geom.cell_volumes()[None, None, :], geom.shape).ravel(order="F")
    poro0 = np.asarray(model.porosity).ravel(order="F")
    p_init = props.initial_pressure(geom).ravel(order="F")

    q_cells = np.empty(0, dtype=int)
    q_weights = np.empty(0)
    q_vol_total = 0.0
    if injectors and schedule.rate > 0:
        q_cells, q_weights = _distribute_rate(model, injectors[0])
        q_vol_total = schedule.rate / props.rho_co2

    times = schedule.report_times()
    nt = times.size
    dt = schedule.dt_years * YEAR_SECONDS

    pressure_out = np.empty((nt,) + geom.shape)
    saturation_out = np.empty((nt,) + geom.shape)
    injected = np.zeros(nt)
    outflux = np.zeros(nt)

    p = p_init.copy()
    s = np.zeros(n)
    poro = poro0.copy()
    pressure_out[0] = p.reshape(geom.shape, order="F")
    saturation_out[0] = s.reshape(geom.shape, order="F")

    acc_base = vol * poro0 * props.rock_compressibility
    bc_pres = p_init[faces.bc_cells]
    grav_c = props.rho_co2 * g * faces.ddepth
    grav_b = props.rho_brine * g * faces.ddepth
    diag_idx = np.arange(n)
    min_completion_pv = float((vol * poro0)[q_cells].min()) if q_cells.size else np.inf

    # The matrix is SPD; for small bandwidths a banded Cholesky beats a
    # general sparse LU by an order of magnitude. Order cells so the two
    # smallest grid axes vary fastest, which minimizes the bandwidth.
    axes = np.argsort([geom.nx, geom.ny, geom.nz])  # fastest-first
    dims = np.array(geom.shape)
    strides = np.empty(3, dtype=int)
    strides[axes[0]] = 1
    strides[axes[1]] = dims[axes[0]]
    strides[axes[2]] = dims[axes[0]] * dims[axes[1]]
    ii, jj, kk = np.meshgrid(np.arange(geom.nx), np.arange(geom.ny),
                             np.arange(geom.nz), indexing="ij")
    to_pos = (ii * strides[0] + jj * strides[1] + kk * strides[2]).ravel(order="F")
    from_pos = np.empty(n, dtype=int)
    from_pos[to_pos] = np.arange(n)
    pos_a, pos_b = to_pos[faces.cell_a], to_pos[faces.cell_b]
    band_lo = np.minimum(pos_a, pos_b)
    band_hi = np.maximum(pos_a, pos_b)
    bandwidth = int((band_hi - band_lo).max()) if band_lo.size else 0
    use_banded = band_lo.size > 0 and n * bandwidth**2 <= _BANDED_FLOPS_LIMIT
    ab_buffer = np.zeros((bandwidth + 1, n)) if use_banded else None

    def solve_pressure(p_old, s_now, q_vol, dt_stage, step):
        lam_c = props.kr_co2(s_now) / props.mu_co2
        lam_b = props.kr_brine(s_now) / props.mu_brine
        dphi_c_prev = (p_old[faces.cell_a] - p_old[faces.cell_b]) - grav_c
        dphi_b_prev = (p_old[faces.cell_a] - p_old[faces.cell_b]) - grav_b
        t_c = faces.tgeo * lam_c[np.where(dphi_c_prev >= 0, faces.cell_a, faces.cell_b)]
        t_b = faces.tgeo * lam_b[np.where(dphi_b_prev >= 0, faces.cell_a, faces.cell_b)]
        c_face = t_c + t_b
        grav_face = (t_c * props.rho_co2 + t_b * props.rho_brine) * g * faces.ddepth

        acc = acc_base / dt_stage
        rhs = acc * p_old
        if q_vol > 0:
            rhs[q_cells] += q_vol * q_weights
        rhs += np.bincount(faces.cell_a, grav_face, minlength=n)
        rhs -= np.bincount(faces.cell_b, grav_face, minlength=n)
        diag = acc + np.bincount(faces.cell_a, c_face, minlength=n) \
            + np.bincount(faces.cell_b, c_face, minlength=n)
        if faces.bc_cells.size:
            out_flow = p_old[faces.bc_cells] >= bc_pres
            blam_c = np.where(out_flow, lam_c[faces.bc_cells], 0.0)
            blam_b = np.where(out_flow, lam_b[faces.bc_cells],
                              props.kr_end_brine / props.mu_brine)
            bt_total = faces.bc_tgeo * (blam_c + blam_b)
            diag += np.bincount(faces.bc_cells, bt_total, minlength=n)
            rhs += np.bincount(faces.bc_cells, bt_total * bc_pres, minlength=n)

        if use_banded:
            ab = ab_buffer
            ab[:] = 0.0
            ab[bandwidth, :] = diag[from_pos]
            ab[bandwidth - (band_hi - band_lo), band_hi] = -c_face
            _, x, info = sla.lapack.dpbsv(ab, rhs[from_pos], lower=0)
            if info != 0:
                raise SimulationError(
                    f"pressure solve failed at report step {step}: "
                    f"dpbsv info={info}")
            p_new = np.empty(n)
            p_new[from_pos] = x
        else:
            mat = sp.coo_matrix(
                (np.concatenate([diag, -c_face, -c_face]),
                 (np.concatenate([diag_idx, faces.cell_a, faces.cell_b]),
                  np.concatenate([diag_idx, faces.cell_b, faces.cell_a]))),
                shape=(n, n)).tocsc()
            p_new = spla.spsolve(mat, rhs, permc_spec="MMD_AT_PLUS_A")

        # Matrix-free residual check, same tolerance for both solver paths.
        ax = diag * p_new
        ax -= np.bincount(faces.cell_a, c_face * p_new[faces.cell_b], minlength=n)
        ax -= np.bincount(faces.cell_b, c_face * p_new[faces.cell_a], minlength=n)
        residual = np.linalg.norm(ax - rhs) / np.linalg.norm(rhs)
        if not np.isfinite(residual) or residual > _PRESSURE_RTOL:
            raise SimulationError(
                f"pressure solve failed at report step {step}: "
                f"relative residual {residual:.3e}")
        return p_new

    def transport(p_now, s_now, poro_now, q_vol, dt_stage, step):
        """Explicit CO2 transport over one pressure stage; returns
        (s, injected_kg, outflux_kg)."""
        dphi_c = (p_now[faces.cell_a] - p_now[faces.cell_b]) - grav_c
        dphi_b = (p_now[faces.cell_a] - p_now[faces.cell_b]) - grav_b
        up_c = np.where(dphi_c >= 0, faces.cell_a, faces.cell_b)
        up_b = np.where(dphi_b >= 0, faces.cell_a, faces.cell_b)
        bc_dphi = (p_now[faces.bc_cells] - bc_pres if faces.bc_cells.size
                   else np.empty(0))
        pv = vol * poro_now

        def total_outflux_per_cell(sat):
            lamc = props.kr_co2(sat) / props.mu_co2
            lamb = props.kr_brine(sat) / props.mu_brine
            f_c = faces.tgeo * lamc[up_c] * dphi_c
            f_b = faces.tgeo * lamb[up_b] * dphi_b
            out = np.zeros(n)
            for f in (f_c, f_b):
                out += np.bincount(faces.cell_a, np.maximum(f, 0.0), minlength=n)
                out += np.bincount(faces.cell_b, np.maximum(-f, 0.0), minlength=n)
            if faces.bc_cells.size:
                lam_t = lamc[faces.bc_cells] + lamb[faces.bc_cells]
                out += np.bincount(faces.bc_cells,
                                   faces.bc_tgeo * lam_t * np.maximum(bc_dphi, 0.0),
                                   minlength=n)
            if q_vol > 0:
                out[q_cells] += q_vol * q_weights
            return out

        out0 = total_outflux_per_cell(s_now)
        with np.errstate(divide="ignore"):
            dt_cfl = _CFL_SAFETY * np.min(np.where(out0 > 0, pv / out0, np.inf))
        n_sub = max(1, int(np.ceil(dt_stage / dt_cfl))) if np.isfinite(dt_cfl) else 1

        for _retry in range(_MAX_SUBSTEP_RETRIES + 1):
            ok = True
            sat = s_now.copy()
            injected_kg = outflux_kg = 0.0
            dts = dt_stage / n_sub
            for _ in range(n_sub):
                lamc = props.kr_co2(sat) / props.mu_co2
                f_c = faces.tgeo * lamc[up_c] * dphi_c
                div = np.bincount(faces.cell_a, f_c, minlength=n) \
                    - np.bincount(faces.cell_b, f_c, minlength=n)
                if faces.bc_cells.size:
                    f_bc = faces.bc_tgeo * lamc[faces.bc_cells] \
                        * np.maximum(bc_dphi, 0.0)
                    div += np.bincount(faces.bc_cells, f_bc, minlength=n)
                    outflux_kg += props.rho_co2 * f_bc.sum() * dts
                if q_vol > 0:
                    div[q_cells] -= q_vol * q_weights
                    injected_kg += props.rho_co2 * q_vol * dts
                sat = sat - dts * div / pv
                if sat.min() < -_SAT_TOL or sat.max() > 1.0 + _SAT_TOL:
                    ok = False
                    break
            if ok:
                return np.clip(sat, 0.0, 1.0), injected_kg, outflux_kg
            n_sub *= 2  # CFL violation: auto-reduce the sub-step
        raise _StalePressure(step)

    def advance(p_now, s_now, poro_now, q_vol, dt_seg, step, depth=0):
        """One pressure solve plus transport over dt_seg, halving the segment
        and re-solving pressure whenever transport cannot stabilize."""
        p_new = solve_pressure(p_now, s_now, q_vol, dt_seg, step)
        # Pore volume follows pressure; rescale S to keep CO2 mass fixed.
        poro_new = poro0 * (1.0 + props.rock_compressibility * (p_new - p_init))
        s_new = np.clip(s_now * (poro_now / poro_new), 0.0, 1.0)
        try:
            s_new, injected_kg, outflux_kg = transport(
                p_new, s_new, poro_new, q_vol, dt_seg, step)
            return p_new, s_new, poro_new, injected_kg, outflux_kg
        except _StalePressure:
            if depth >= _MAX_SPLIT_DEPTH:
                raise SimulationError(
                    f"saturation update unstable at report step {step} even "
                    f"after {depth} pressure-stage splits") from None
        half = 0.5 * dt_seg
        out = advance(p_now, s_now, poro_now, q_vol, half, step, depth + 1)
        p_new, s_new, poro_new, inj1, ofl1 = out
        out = advance(p_new, s_new, poro_new, q_vol, half, step, depth + 1)
        p_new, s_new, poro_new, inj2, ofl2 = out
        return p_new, s_new, poro_new, inj1 + inj2, ofl1 + ofl2

    for step in range(1, nt):
        t0, t1 = times[step - 1], times[step]
        inject_now = 0.5 * (t0 + t1) < schedule.injection_years
        q_vol = q_vol_total if inject_now else 0.0

        # Stage the interval so at most a fixed pore-volume fraction enters
        # the completion cells between pressure solves.
        if q_vol > 0:
            n_stage = int(np.ceil(q_vol * dt / (_STAGE_PV_FRACTION
                                                * min_completion_pv)))
            n_stage = min(max(n_stage, 1), _MAX_STAGES)
        else:
            n_stage = 1
        dt_stage = dt / n_stage

        step_injected = step_outflux = 0.0
        for _stage in range(n_stage):
            p, s, poro, injected_kg, outflux_kg = advance(
                p, s, poro, q_vol, dt_stage, step)
            step_injected += injected_kg
            step_outflux += outflux_kg

        injected[step] = injected[step - 1] + step_injected
        outflux[step] = outflux[step - 1] + step_outflux
        pressure_out[step] = p.reshape(geom.shape, order="F")
        saturation_out[step] = s.reshape(geom.shape, order="F")

    well_pressure, well_saturation = {}, {}
    for w in wells:
        k = w.trace_layer(geom)
        well_pressure[w.name] = pressure_out[:, w.i, w.j, k].copy()
        well_saturation[w.name] = saturation_out[:, w.i, w.j, k].copy()

    return SimulationResult(
        geometry=geom,
        times=times,
        pressure=pressure_out,
        saturation=saturation_out,
        well_pressure=well_pressure,
        well_saturation=well_saturation,
        injected_mass=injected,
        boundary_outflux_mass=outflux,
    )


def stored_co2_mass(result: SimulationResult, model: ReservoirModel,
                    props: FluidRockProps) -> np.ndarray:
    """CO2 mass in place (kg) at every report time, summed over cells.

    Uses the same pressure-dependent pore volume as the simulator, so
    injected - (stored + boundary outflux) is a rounding-level residual.
    """
    geom = result.geometry
    vol = np.broadcast_to(geom.cell_volumes()[None, None, :], geom.shape)
    poro0 = np.asarray(model.porosity)
    p_init = result.pressure[0]
    poro = poro0 * (1.0 + props.rock_compressibility * (result.pressure - p_init))
    return props.rho_co2 * np.sum(vol * poro * result.saturation, axis=(1, 2, 3))


def sample_observations(result: SimulationResult, monitor_wells, noise: dict,
                        seed) -> ObservationSet:
    """Draw noisy pressure/saturation observations at the given wells.

    Parameters
    ----------
    result : SimulationResult
    monitor_wells : sequence of str
        Well names to sample (typically the monitors plus the injector).
    noise : dict
        Per-quantity standard deviations, keys "pressure" (Pa) and
        "saturation" (absolute).
    seed : int or SeedSequence

    Returns
    -------
    ObservationSet
        One datum per (well, quantity, report time > 0), with the configured
        variance recorded alongside each value. Noise for each (well,
        quantity) trace draws from its own derived stream, so the values for
        a given well do not depend on which other wells are sampled.
    """
    for q in ("pressure", "saturation"):
        if q not in noise:
            raise ValueError(f"noise std for {q!r} missing")
        if noise[q] < 0:
            raise ValueError("noise std must be >= 0")
    names = [str(w) for w in monitor_wells]
    known = set(result.well_names())
    for name in names:
        if name not in known:
            raise ValueError(f"well {name!r} has no traces in this result")

    t = result.times[1:]
    wells, quantities, times, values, variances = [], [], [], [], []
    for name in names:
        for qi, (quantity, trace) in enumerate(
                (("pressure", result.well_pressure[name]),
                 ("saturation", result.well_saturation[name]))):
            rng = _seeds.generator(seed, *_seeds.label_key(name), qi)
            std = float(noise[quantity])
            vals = trace[1:] + std * rng.standard_normal(t.size)
            wells.extend([name] * t.size)
            quantities.extend([quantity] * t.size)
            times.append(t)
            values.append(vals)
            variances.append(np.full(t.size, std**2))
    if not wells:
        return ObservationSet.empty()
    return ObservationSet(tuple(wells), tuple(quantities),
                          np.concatenate(times), np.concatenate(values),
                          np.concatenate(variances))
