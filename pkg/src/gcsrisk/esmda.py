"""Ensemble smoother with multiple data assimilation, geometric inflation.

The update is the standard perturbed-observation ensemble scheme: each member
moves by C_MD (C_DD + alpha C_D)^-1 (d_uc - d), with the inverse computed in
the observation subspace through a truncated SVD of the error-scaled
prediction deviations. Inflation factors form a geometric sequence in 1/alpha
whose reciprocals sum to one, so the user fixes the number of steps while
early updates stay damped.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import _seeds
from .geomodel import Ensemble, ReservoirModel
from .observations import ObservationSet

__all__ = [
    "InflationSchedule",
    "MismatchReport",
    "ObservationSet",
    "geometric_schedule",
    "constant_schedule",
    "choose_alpha1",
    "compute_mismatch",
    "esmda_update",
    "gaspari_cohn",
    "assimilate",
]

logger = logging.getLogger(__name__)

_SUM_TOL = 1e-10
_SVD_ENERGY = 0.999
ALPHA_MAX_DEFAULT = 1e4


@dataclass(frozen=True)
class InflationSchedule:
    """Inflation factors alpha_1..alpha_Na with sum(1/alpha_i) = 1."""

    alphas: tuple[float, ...]

    def __post_init__(self):
        alphas = tuple(float(a) for a in self.alphas)
        if not alphas:
            raise ValueError("schedule needs at least one factor")
        if any(a <= 0 for a in alphas):
            raise ValueError("inflation factors must be > 0")
        if any(a < 1.0 - 1e-9 for a in alphas):
            raise ValueError("inflation factors must be >= 1")
        total = sum(1.0 / a for a in alphas)
        if abs(total - 1.0) > _SUM_TOL:
            raise ValueError(f"sum(1/alpha) = {total!r}, must equal 1")
        object.__setattr__(self, "alphas", alphas)

    @property
    def n_steps(self) -> int:
        return len(self.alphas)

    @property
    def ratio(self) -> float:
        """Common geometric ratio of 1/alpha_i (1.0 for a one-step schedule)."""
        if self.n_steps == 1:
            return 1.0
        return self.alphas[0] / self.alphas[1]


def geometric_schedule(n_steps: int, alpha_1: float) -> InflationSchedule:
    """Schedule alpha_i = alpha_1 / r^(i-1) with reciprocals summing to one.

    The ratio r solves sum_i r^(i-1) / alpha_1 = 1 by bisection. r exceeds
    one when alpha_1 > n_steps (damped, decreasing factors); alpha_1 below
    n_steps gives r < 1. alpha_1 < 1 admits no root and is rejected.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    if n_steps == 1:
        return InflationSchedule((1.0,))
    if alpha_1 <= 1.0:
        raise ValueError("alpha_1 must exceed 1 when n_steps > 1 (no root)")
    if alpha_1 == float(n_steps):
        return InflationSchedule((float(alpha_1),) * n_steps)

    powers = np.arange(n_steps)

    def excess(r: float) -> float:
        return float(np.sum(r**powers)) / alpha_1 - 1.0

    lo, hi = 1e-12, 2.0
    while excess(hi) < 0.0:
        hi *= 2.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if excess(mid) < 0.0:
            lo = mid
        else:
            hi = mid
    r = 0.5 * (lo + hi)
    return InflationSchedule(tuple(alpha_1 / r**k for k in range(n_steps)))


def constant_schedule(n_steps: int) -> InflationSchedule:
    """Classic constant factors alpha_i = Na (the comparison baseline)."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    return InflationSchedule((float(n_steps),) * n_steps)


@dataclass(frozen=True, eq=False)
class MismatchReport:
    """Normalized data mismatch Phi/N_d per member plus a quantity breakdown.

    ``per_member`` is the standard noise-normalized objective, the quantity
    that drives the inflation-factor heuristic. ``innovation`` is an
    ensemble-consistency statistic: the squared distance between observations
    and the ensemble-mean prediction, normalized by noise variance plus
    ensemble prediction variance, averaged over data. It stays O(1) whenever
    the observations are statistically explainable by the ensemble, however
    wide, and grows only with genuine model inadequacy, which makes it the
    right input for the concordance branch.
    """

    per_member: np.ndarray
    per_quantity: dict
    innovation: float = 0.0

    def __post_init__(self):
        per_member = np.asarray(self.per_member, dtype=float).copy()
        if per_member.ndim != 1 or per_member.size == 0:
            raise ValueError("per_member must be a non-empty 1D array")
        if np.any(per_member < 0):
            raise ValueError("mismatch values must be >= 0")
        if self.innovation < 0:
            raise ValueError("innovation statistic must be >= 0")
        per_member.setflags(write=False)
        object.__setattr__(self, "per_member", per_member)
        object.__setattr__(self, "per_quantity",
                           {str(k): float(v) for k, v in self.per_quantity.items()})

    @property
    def mean(self) -> float:
        return float(self.per_member.mean())


def compute_mismatch(predictions: np.ndarray, obs: ObservationSet) -> MismatchReport:
    """Phi/N_d per member for predictions of shape (N_d, N_e)."""
    predictions = np.atleast_2d(np.asarray(predictions, dtype=float))
    if predictions.shape[0] != obs.n_data:
        raise ValueError(f"predictions have {predictions.shape[0]} rows, "
                         f"expected N_d = {obs.n_data}")
    if obs.n_data == 0:
        return MismatchReport(np.zeros(predictions.shape[1]), {})
    if np.any(obs.variances <= 0):
        raise ValueError("mismatch needs strictly positive noise variances")
    resid = predictions - obs.values[:, None]
    norm = resid**2 / obs.variances[:, None]
    per_member = norm.mean(axis=0)
    per_quantity = {}
    for q in sorted(set(obs.quantities)):
        idx = obs.for_quantity(q)
        per_quantity[q] = float(norm[idx].mean())
    pred_mean = predictions.mean(axis=1)
    pred_var = predictions.var(axis=1)
    innovation = float(np.mean((obs.values - pred_mean)**2
                               / (obs.variances + pred_var)))
    return MismatchReport(per_member, per_quantity, innovation)


def choose_alpha1(initial_mismatch: MismatchReport, n_steps: int,
                  alpha_max: float = ALPHA_MAX_DEFAULT) -> float:
    """First inflation factor from the prior mismatch: half the ensemble-mean
    Phi/N_d, clamped to [n_steps, alpha_max]."""
    if n_steps < 1:
        raise ValueError("n_steps must be >= 1")
    return float(min(max(initial_mismatch.mean / 2.0, float(n_steps)), alpha_max))


def gaspari_cohn(dist, cutoff: float) -> np.ndarray:
    """Compactly supported taper, zero at and beyond the cutoff distance."""
    if cutoff <= 0:
        raise ValueError("cutoff must be > 0")
    r = 2.0 * np.abs(np.asarray(dist, dtype=float)) / cutoff
    taper = np.zeros_like(r)
    near = r <= 1.0
    far = (r > 1.0) & (r < 2.0)
    rn = r[near]
    taper[near] = (((-0.25 * rn + 0.5) * rn + 0.625) * rn - 5.0 / 3.0) * rn**2 + 1.0
    rf = r[far]
    taper[far] = ((((rf / 12.0 - 0.5) * rf + 0.625) * rf + 5.0 / 3.0) * rf - 5.0) \
        * rf**2 + 4.0 - 2.0 / (3.0 * rf)
    return np.clip(taper, 0.0, 1.0)


def esmda_update(ensemble_params: np.ndarray, predictions: np.ndarray,
                 obs: ObservationSet, alpha: float, seed,
                 bounds: tuple | None = None,
                 taper: np.ndarray | None = None,
                 svd_energy: float = _SVD_ENERGY) -> np.ndarray:
    """One perturbed-observation ensemble update.

    Parameters
    ----------
    ensemble_params : ndarray, shape (N_m, N_e)
        Parameter vectors, one column per member.
    predictions : ndarray, shape (N_d, N_e)
        Forward-model outputs in observation ordering.
    obs : ObservationSet
    alpha : float
        Inflation factor (>= 1) on the observation-error covariance.
    seed : int or SeedSequence
        Stream for the observation perturbations.
    bounds : (lo, hi), optional
        Elementwise clamp applied to the updated parameters.
    taper : ndarray (N_m, N_d), optional
        Localization taper multiplied elementwise into the cross-covariance;
        when given, the update uses the direct N_d x N_d solve instead of the
        SVD subspace route.
    svd_energy : float
        Fraction of the singular-value sum retained in the subspace inverse.

    Returns
    -------
    ndarray, shape (N_m, N_e)

    Notes
    -----
    Identical predictions across members give zero cross-covariance; the
    input is then returned unchanged (a documented no-op, not an error).
    """
    params = np.asarray(ensemble_params, dtype=float)
    preds = np.asarray(predictions, dtype=float)
    if params.ndim != 2 or preds.ndim != 2:
        raise ValueError("params and predictions must be 2D (rows, members)")
    n_e = params.shape[1]
    if n_e < 2:
        raise ValueError("ensemble update needs N_e >= 2")
    if preds.shape[1] != n_e:
        raise ValueError("params and predictions must have equal member counts")
    if preds.shape[0] != obs.n_data:
        raise ValueError(f"predictions have {preds.shape[0]} rows, "
                         f"expected N_d = {obs.n_data}")
    if alpha < 1.0:
        raise ValueError("alpha must be >= 1")
    if obs.n_data == 0:
        return params.copy()
    if np.any(obs.variances <= 0):
        raise ValueError("assimilation needs strictly positive noise variances")

    std = np.sqrt(obs.variances)
    rng = _seeds.generator(seed)
    d_uc = obs.values[:, None] + np.sqrt(alpha) * std[:, None] \
        * rng.standard_normal((obs.n_data, n_e))

    dm = params - params.mean(axis=1, keepdims=True)
    dd = preds - preds.mean(axis=1, keepdims=True)
    if not np.any(dd):
        return params.copy()

    innov = d_uc - preds
    if taper is not None:
        taper = np.asarray(taper, dtype=float)
        if taper.shape != (params.shape[0], obs.n_data):
            raise ValueError("taper must have shape (N_m, N_d)")
        cov_md = taper * (dm @ dd.T / (n_e - 1))
        cov_dd = dd @ dd.T / (n_e - 1)
        cov_dd[np.diag_indices_from(cov_dd)] += alpha * obs.variances
        update = cov_md @ np.linalg.solve(cov_dd, innov)
    else:
        scaled = dd / (std[:, None] * np.sqrt(n_e - 1))
        u, sv, vt = np.linalg.svd(scaled, full_matrices=False)
        total = sv.sum()
        if total <= 0:
            return params.copy()
        rank = int(np.searchsorted(np.cumsum(sv) / total, svd_energy) + 1)
        rank = min(rank, sv.size)
        u, sv, vt = u[:, :rank], sv[:rank], vt[:rank]
        w = vt.T @ ((sv / (sv**2 + alpha))[:, None]
                    * (u.T @ (innov / std[:, None]))) / np.sqrt(n_e - 1)
        update = dm @ w

    out = params + update
    if bounds is not None:
        lo, hi = bounds
        np.clip(out, lo, hi, out=out)
    return out


def _default_extract(model: ReservoirModel) -> np.ndarray:
    """Layer-replication parameterization: the top-layer log-perm plane."""
    return model.log_perm[:, :, 0].ravel(order="F").copy()


def _default_rebuild(model: ReservoirModel, vec: np.ndarray) -> ReservoirModel:
    geom = model.geometry
    plane = vec.reshape(geom.nx, geom.ny, order="F")
    logk = np.repeat(plane[:, :, None], geom.nz, axis=2)
    return model.with_log_perm(logk)


def assimilate(prior: Ensemble, obs: ObservationSet, schedule: InflationSchedule,
               forward: Callable[[ReservoirModel], np.ndarray], seed,
               extract: Callable[[ReservoirModel], np.ndarray] | None = None,
               rebuild: Callable[[ReservoirModel, np.ndarray], ReservoirModel] | None = None,
               bounds: tuple | None = None,
               taper: np.ndarray | None = None,
               initial_predictions: np.ndarray | None = None,
               map_fn: Callable | None = None,
               max_failure_fraction: float = 0.2,
               ) -> tuple[Ensemble, list[MismatchReport]]:
    """Run the full multiple-data-assimilation loop on a reservoir ensemble.

    Parameters
    ----------
    prior : Ensemble
    obs : ObservationSet
        Empty set returns the prior unchanged with an all-zero mismatch.
    schedule : InflationSchedule
    forward : callable
        Maps one ReservoirModel to predicted data in observation ordering.
    seed : int or SeedSequence
        Root stream; per-round and per-member streams are derived from it.
    extract, rebuild : callables, optional
        Parameterization adapters; the default assimilates the top-layer
        log-permeability plane and replicates it to all layers.
    bounds, taper : see :func:`esmda_update`.
    initial_predictions : ndarray (N_d, N_e), optional
        Reuse already-computed prior predictions for round one.
    map_fn : callable, optional
        map-like function used for the forward fan-out (e.g. a process-pool
        map); results must preserve member order.
    max_failure_fraction : float
        Abort when more than this fraction of members fail the forward run.

    Returns
    -------
    (posterior, history)
        history holds one MismatchReport before each round plus one after
        the last round (length Na + 1).
    """
    extract = extract or _default_extract
    rebuild = rebuild or _default_rebuild
    map_fn = map_fn or map

    if obs.n_data == 0:
        zeros = MismatchReport(np.zeros(prior.size), {})
        return prior, [zeros for _ in range(schedule.n_steps + 1)]

    models = list(prior.members)
    n_e = len(models)
    max_failures = int(max_failure_fraction * n_e)

    def run_forward(current: list[ReservoirModel], round_idx: int) -> np.ndarray:
        """Predictions for all members, resampling members whose forward
        fails from the statistics of the surviving ones."""
        results = list(map_fn(_guarded, ((forward, m) for m in current)))
        failed = [i for i, r in enumerate(results) if isinstance(r, Exception)]
        if failed:
            if len(failed) > max_failures:
                raise RuntimeError(
                    f"{len(failed)}/{n_e} forward runs failed in round "
                    f"{round_idx}; aborting assimilation")
            good = [i for i in range(n_e) if i not in failed]
            stats = np.stack([extract(current[i]) for i in good], axis=1)
            mean, std = stats.mean(axis=1), stats.std(axis=1)
            for i in failed:
                for attempt in range(3):
                    rng = _seeds.generator(seed, _seeds.RESAMPLE, round_idx,
                                           i, attempt)
                    vec = mean + std * rng.standard_normal(mean.size)
                    candidate = rebuild(current[i], vec)
                    try:
                        results[i] = forward(candidate)
                        current[i] = candidate
                        logger.warning(
                            "member %d forward failed in round %d; resampled "
                            "from ensemble statistics (attempt %d)",
                            i, round_idx, attempt + 1)
                        break
                    except Exception:
                        continue
                else:
                    donor = good[i % len(good)]
                    current[i] = current[donor]
                    results[i] = results[donor].copy()
                    logger.warning(
                        "member %d forward failed repeatedly in round %d; "
                        "cloned member %d", i, round_idx, donor)
        preds = np.stack(results, axis=1)
        if preds.shape[0] != obs.n_data:
            raise ValueError(f"forward returned {preds.shape[0]} data, "
                             f"expected {obs.n_data}")
        return preds

    history: list[MismatchReport] = []
    preds = None
    if initial_predictions is not None:
        preds = np.asarray(initial_predictions, dtype=float)
        if preds.shape != (obs.n_data, n_e):
            raise ValueError("initial_predictions must have shape (N_d, N_e)")

    for round_idx, alpha in enumerate(schedule.alphas):
        if preds is None:
            preds = run_forward(models, round_idx)
        history.append(compute_mismatch(preds, obs))
        params = np.stack([extract(m) for m in models], axis=1)
        updated = esmda_update(params, preds, obs, alpha,
                               _seeds.sequence(seed, _seeds.ESMDA, round_idx),
                               bounds=bounds, taper=taper)
        models = [rebuild(m, updated[:, j]) for j, m in enumerate(models)]
        preds = None

    preds = run_forward(models, schedule.n_steps)
    history.append(compute_mismatch(preds, obs))
    return Ensemble(tuple(models)), history


def _guarded(item):
    """Run one forward call, returning the exception instead of raising.

    Module-level so the tuple argument pickles for process-pool maps.
    """
    forward, model = item
    try:
        return forward(model)
    except Exception as exc:  # noqa: BLE001 - failure policy handles it
        return exc
