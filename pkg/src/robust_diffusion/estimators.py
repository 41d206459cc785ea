"""Robust location estimation on weighted samples.

Scalar building blocks for robust neighborhood aggregation: loss/weight
functions, weighted median and MAD, IRLS M-estimation, the MM variant
(median/MAD initialized and normalized), the geometric median, and the
trimmed-mean baseline.

All estimators are pure functions. Internally every sample is brought into
a canonical (value, weight)-sorted order before any summation, so results
are invariant, bit for bit, under permutation of the input pairs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

DEFAULT_TUKEY_C = 4.685
DEFAULT_HUBER_K = 1.345
MAD_NORMALIZATION = 1.4826

# Cumulative weight within this distance of 1/2 is treated as an exact tie,
# triggering the midpoint convention of the weighted median.
MEDIAN_TIE_TOL = 1e-9
# A converged IRLS fixed point must drive the weighted psi-sum below this.
PSI_RESIDUAL_TOL = 1e-8

WEIGHT_SUM_TOL = 1e-12

# Weight cap for the absolute-error loss, whose influence function is not
# differentiable at zero: b(z) = 1/max(|z|, 1/_ABS_WEIGHT_CAP).
_ABS_WEIGHT_CAP = 1e12


class DegenerateWeightsError(RuntimeError):
    """Every point received zero weight at some IRLS iterate.

    Happens when all residuals land beyond a redescending cutoff, which
    signals an invalid scale or initialization rather than a recoverable
    state.
    """


class LossFamily(Enum):
    SQUARED_ERROR = "squared_error"
    ABSOLUTE_ERROR = "absolute_error"
    HUBER = "huber"
    TUKEY_BISQUARE = "tukey_bisquare"


@dataclass(frozen=True)
class LossSpec:
    """A location-estimation loss: family plus tuning constant.

    The tuning constant is the Huber threshold k or the Tukey cutoff c;
    squared and absolute error ignore it.
    """

    family: LossFamily
    tuning: float = 1.0

    def __post_init__(self):
        if not isinstance(self.family, LossFamily):
            raise TypeError(f"family must be a LossFamily, got {self.family!r}")
        if not np.isfinite(self.tuning) or self.tuning <= 0:
            raise ValueError(f"tuning must be a positive real, got {self.tuning}")

    @classmethod
    def squared_error(cls) -> "LossSpec":
        return cls(LossFamily.SQUARED_ERROR)

    @classmethod
    def absolute_error(cls) -> "LossSpec":
        return cls(LossFamily.ABSOLUTE_ERROR)

    @classmethod
    def huber(cls, k: float = DEFAULT_HUBER_K) -> "LossSpec":
        return cls(LossFamily.HUBER, k)

    @classmethod
    def tukey(cls, c: float = DEFAULT_TUKEY_C) -> "LossSpec":
        return cls(LossFamily.TUKEY_BISQUARE, c)


@dataclass(frozen=True)
class IrlsSettings:
    """Fixed-point iteration controls for IRLS and Weiszfeld solvers."""

    max_iters: int = 100
    tol: float = 1e-10
    scale_floor: float = 1e-9

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if not np.isfinite(self.tol) or self.tol <= 0:
            raise ValueError("tol must be a positive real")
        if not np.isfinite(self.scale_floor) or self.scale_floor <= 0:
            raise ValueError("scale_floor must be a positive real")


@dataclass
class WeightedSample:
    """Values with non-negative weights summing to one."""

    values: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.values.ndim != 1 or self.weights.ndim != 1:
            raise ValueError("values and weights must be one-dimensional")
        if self.values.size == 0:
            raise ValueError("sample must contain at least one point")
        if self.values.shape != self.weights.shape:
            raise ValueError(
                f"length mismatch: {self.values.size} values, {self.weights.size} weights"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("values must be finite")
        if not np.all(np.isfinite(self.weights)) or np.any(self.weights < 0):
            raise ValueError("weights must be finite and non-negative")
        if abs(float(self.weights.sum()) - 1.0) > WEIGHT_SUM_TOL:
            raise ValueError(
                f"weights must sum to 1 within {WEIGHT_SUM_TOL}, got {self.weights.sum()!r}"
            )

    @classmethod
    def uniform(cls, values) -> "WeightedSample":
        values = np.asarray(values, dtype=np.float64)
        n = values.size
        if n == 0:
            raise ValueError("sample must contain at least one point")
        return cls(values, np.full(n, 1.0 / n))

    def __len__(self) -> int:
        return self.values.size


@dataclass
class LocationResult:
    """Converged (or capped) IRLS output.

    ``final_weights`` are the normalized per-point weights of the update
    that produced ``location``; they are non-negative, sum to one, and
    reproduce ``location`` as a convex combination of the input values.
    """

    location: float
    final_weights: np.ndarray
    iterations: int
    converged: bool


# ---------------------------------------------------------------------------
# psi / b weight functions
# ---------------------------------------------------------------------------


def _psi_columns(loss: LossSpec, z: np.ndarray) -> np.ndarray:
    if loss.family is LossFamily.SQUARED_ERROR:
        return z.copy()
    if loss.family is LossFamily.ABSOLUTE_ERROR:
        return np.sign(z)
    if loss.family is LossFamily.HUBER:
        k = loss.tuning
        return np.clip(z, -k, k)
    c = loss.tuning
    out = np.zeros_like(z)
    inside = np.abs(z) < c
    zi = z[inside]
    out[inside] = zi * (1.0 - (zi / c) ** 2) ** 2
    return out


def _b_columns(loss: LossSpec, z: np.ndarray) -> np.ndarray:
    if loss.family is LossFamily.SQUARED_ERROR:
        return np.ones_like(z)
    if loss.family is LossFamily.ABSOLUTE_ERROR:
        return 1.0 / np.maximum(np.abs(z), 1.0 / _ABS_WEIGHT_CAP)
    if loss.family is LossFamily.HUBER:
        k = loss.tuning
        a = np.abs(z)
        return np.where(a <= k, 1.0, k / np.maximum(a, k))
    c = loss.tuning
    out = np.zeros_like(z)
    inside = np.abs(z) < c
    out[inside] = (1.0 - (z[inside] / c) ** 2) ** 2
    return out


def b_weight(y: float, scale: float, loss: LossSpec) -> float:
    """Outlier down-weighting factor b(y/scale) = psi(y/scale)/(y/scale).

    At zero the limit psi'(0) is used (capped for absolute error, whose
    influence function has a jump there). Squared error gives b identically
    one, which recovers plain averaging.
    """
    if not np.isfinite(y):
        raise ValueError(f"y must be finite, got {y}")
    if not np.isfinite(scale) or scale <= 0:
        raise ValueError(f"scale must be a positive real, got {scale}")
    z = np.asarray([y / scale], dtype=np.float64)
    return float(_b_columns(loss, z)[0])


# ---------------------------------------------------------------------------
# canonical ordering and column kernels
#
# Kernels operate on (L, C) arrays: L sample points, C independent scalar
# problems sharing nothing but array layout. Inputs must already be in
# canonical order (per column, sorted by value and then by weight).
# ---------------------------------------------------------------------------


def _canonical_columns(values: np.ndarray, weights: np.ndarray):
    """Sort each column by (value, weight); return sorted copies and the
    original row index of every canonical slot."""
    order_w = np.argsort(weights, axis=0, kind="stable")
    v = np.take_along_axis(values, order_w, axis=0)
    w = np.take_along_axis(weights, order_w, axis=0)
    order_v = np.argsort(v, axis=0, kind="stable")
    v = np.take_along_axis(v, order_v, axis=0)
    w = np.take_along_axis(w, order_v, axis=0)
    perm = np.take_along_axis(order_w, order_v, axis=0)
    return v, w, perm


def _scatter_rows(canonical: np.ndarray, perm: np.ndarray) -> np.ndarray:
    out = np.empty_like(canonical)
    np.put_along_axis(out, perm, canonical, axis=0)
    return out


def _combine_mean_columns(v: np.ndarray, w: np.ndarray) -> np.ndarray:
    return np.add.reduce(w * v, axis=0)


def _median_columns(v: np.ndarray, w: np.ndarray):
    """Weighted median per column of canonically sorted samples.

    Returns (median, crossing_row, tie_mask, partner_row). The median is the
    smallest value whose cumulative weight reaches 1/2; if the cumulative
    weight lands on 1/2 exactly (within MEDIAN_TIE_TOL) the midpoint with the
    next positively weighted value is taken.
    """
    L, _ = v.shape
    cum = np.cumsum(w, axis=0)
    crossed = cum >= 0.5 - MEDIAN_TIE_TOL
    j = crossed.argmax(axis=0)
    jj = j[None, :]
    cum_j = np.take_along_axis(cum, jj, axis=0)[0]
    v_j = np.take_along_axis(v, jj, axis=0)[0]
    tie = np.abs(cum_j - 0.5) <= MEDIAN_TIE_TOL
    rows = np.arange(L)[:, None]
    after = (rows > jj) & (w > 0)
    has_partner = after.any(axis=0)
    jp = np.where(has_partner, after.argmax(axis=0), j)
    v_p = np.take_along_axis(v, jp[None, :], axis=0)[0]
    use_mid = tie & has_partner
    med = np.where(use_mid, 0.5 * (v_j + v_p), v_j)
    return med, j, use_mid, jp


def _median_effective_weights(v, w, j, use_mid, jp):
    """Per-point weights reproducing the weighted median as a convex
    combination. Mass is spread over all points sharing the median value(s)
    in proportion to their weights, so duplicates are treated symmetrically."""
    v_j = np.take_along_axis(v, j[None, :], axis=0)[0]
    v_p = np.take_along_axis(v, jp[None, :], axis=0)[0]
    lower = w * (v == v_j[None, :])
    lower_tot = np.add.reduce(lower, axis=0)
    out = np.where(use_mid[None, :], 0.5, 1.0) * lower / lower_tot
    if np.any(use_mid):
        upper = w * (v == v_p[None, :])
        upper_tot = np.add.reduce(upper, axis=0)
        upper_tot[~use_mid] = 1.0
        out = out + np.where(use_mid[None, :], 0.5, 0.0) * upper / upper_tot
    return out


def _mad_columns(v: np.ndarray, w: np.ndarray, center: np.ndarray) -> np.ndarray:
    dev = np.abs(v - center[None, :])
    dv, dw, _ = _canonical_columns(dev, w)
    med, _, _, _ = _median_columns(dv, dw)
    return MAD_NORMALIZATION * med


def _irls_columns(v, w, loss, scale, init, cfg: IrlsSettings):
    """Fixed-point IRLS on canonically sorted columns.

    Per column: iterate location <- sum(a*b*values)/sum(a*b) with b evaluated
    on residuals standardized by ``scale``. A column freezes once its update
    moves less than cfg.tol; frozen columns are no longer touched so batched
    and one-column runs follow identical trajectories.
    """
    L, C = v.shape
    loc = np.asarray(init, dtype=np.float64).copy()
    abar = np.zeros_like(v)
    iterations = np.zeros(C, dtype=np.int64)
    frozen = np.zeros(C, dtype=bool)
    for _ in range(cfg.max_iters):
        active = ~frozen
        z = (v - loc[None, :]) / scale[None, :]
        b = _b_columns(loss, z)
        num = w * b
        tot = np.add.reduce(num, axis=0)
        dead = (tot <= 0) & active
        if np.any(dead):
            col = int(np.flatnonzero(dead)[0])
            raise DegenerateWeightsError(
                f"all b-weights vanished (column {col}); "
                "scale or initialization is degenerate for a redescending loss"
            )
        ab = num / tot[None, :]
        new_loc = np.add.reduce(ab * v, axis=0)
        delta = np.abs(new_loc - loc)
        loc = np.where(active, new_loc, loc)
        abar = np.where(active[None, :], ab, abar)
        iterations += active
        frozen |= active & (delta < cfg.tol)
        if frozen.all():
            break
    residual = np.add.reduce(w * _psi_columns(loss, (v - loc[None, :]) / scale[None, :]), axis=0)
    converged = frozen & (np.abs(residual) <= PSI_RESIDUAL_TOL)
    return loc, abar, iterations, converged


def _mm_columns(v, w, loss, cfg: IrlsSettings):
    """Median/MAD-initialized IRLS per column. Returns the IRLS outputs plus
    the standardization scale actually used."""
    med, _, _, _ = _median_columns(v, w)
    scale = np.maximum(_mad_columns(v, w, med), cfg.scale_floor)
    loc, abar, iterations, converged = _irls_columns(v, w, loss, scale, med, cfg)
    return loc, abar, iterations, converged, scale


def _trimmed_columns(v, w, trim_fraction: float):
    """Count-based symmetric trimming on canonically sorted columns.

    Returns (trimmed mean, renormalized surviving weights). Surviving mass is
    averaged across runs of identical (value, weight) pairs so that duplicate
    points at a trim boundary are treated symmetrically.
    """
    L, C = v.shape
    cut = int(np.ceil(trim_fraction * L))
    if L - 2 * cut < 1:
        raise ValueError(
            f"trimming {cut} points from each tail leaves nothing of {L} points"
        )
    kept = np.zeros((L, C))
    kept[cut : L - cut, :] = 1.0
    if cut > 0:
        # runs of identical (value, weight) pairs, per column
        change = np.ones((L, C), dtype=bool)
        change[1:] = (v[1:] != v[:-1]) | (w[1:] != w[:-1])
        seg = np.cumsum(change, axis=0) - 1
        cols = np.broadcast_to(np.arange(C)[None, :], (L, C))
        seg_count = np.zeros((L, C))
        np.add.at(seg_count, (seg, cols), 1.0)
        seg_kept = np.zeros((L, C))
        np.add.at(seg_kept, (seg, cols), kept)
        kept = seg_kept[seg, cols] / seg_count[seg, cols]
    surv = w * kept
    tot = np.add.reduce(surv, axis=0)
    if np.any(tot <= 0):
        raise DegenerateWeightsError("surviving weight mass is zero after trimming")
    surv = surv / tot[None, :]
    mean = np.add.reduce(surv * v, axis=0)
    return mean, surv


# ---------------------------------------------------------------------------
# public scalar estimators
# ---------------------------------------------------------------------------


def weighted_median(s: WeightedSample) -> float:
    """Smallest value whose cumulative weight reaches 1/2.

    A cumulative weight of exactly 1/2 takes the midpoint with the next
    positively weighted value, which reduces to the usual midpoint convention
    for uniformly weighted even-sized samples.
    """
    v, w, _ = _canonical_columns(s.values[:, None], s.weights[:, None])
    med, _, _, _ = _median_columns(v, w)
    return float(med[0])


def weighted_mad(s: WeightedSample, center: float) -> float:
    """1.4826 times the weighted median absolute deviation from ``center``."""
    if not np.isfinite(center):
        raise ValueError(f"center must be finite, got {center}")
    v, w, _ = _canonical_columns(s.values[:, None], s.weights[:, None])
    return float(_mad_columns(v, w, np.asarray([center]))[0])


def m_estimate(
    s: WeightedSample,
    loss: LossSpec,
    scale: float,
    init: float,
    cfg: IrlsSettings = IrlsSettings(),
) -> LocationResult:
    """IRLS location M-estimate with a fixed standardization scale.

    Parameters
    ----------
    s : WeightedSample
        Points and combination weights.
    loss : LossSpec
        Loss family; its psi function drives the fixed point
        sum_l a_l psi((v_l - w)/scale) = 0.
    scale : float
        Residual standardization, must be >= cfg.scale_floor.
    init : float
        Starting location.
    cfg : IrlsSettings
        Iteration cap and convergence tolerance.

    Returns
    -------
    LocationResult
        ``converged`` requires both a location update below cfg.tol and a
        weighted psi-residual within PSI_RESIDUAL_TOL; hitting the iteration
        cap still returns the last iterate with ``converged=False``.

    Raises
    ------
    DegenerateWeightsError
        If every point falls beyond a redescending cutoff at some iterate.
    """
    if not np.isfinite(scale) or scale < cfg.scale_floor:
        raise ValueError(f"scale must be finite and >= scale_floor, got {scale}")
    if not np.isfinite(init):
        raise ValueError(f"init must be finite, got {init}")
    v, w, perm = _canonical_columns(s.values[:, None], s.weights[:, None])
    loc, abar, iters, conv = _irls_columns(
        v, w, loss, np.asarray([scale]), np.asarray([float(init)]), cfg
    )
    weights = _scatter_rows(abar, perm)[:, 0]
    return LocationResult(float(loc[0]), weights, int(iters[0]), bool(conv[0]))


def mm_estimate(
    s: WeightedSample, loss: LossSpec, cfg: IrlsSettings = IrlsSettings()
) -> LocationResult:
    """M-estimate initialized at the weighted median and standardized by the
    weighted MAD (clamped to cfg.scale_floor when it collapses)."""
    v, w, perm = _canonical_columns(s.values[:, None], s.weights[:, None])
    loc, abar, iters, conv, _ = _mm_columns(v, w, loss, cfg)
    weights = _scatter_rows(abar, perm)[:, 0]
    return LocationResult(float(loc[0]), weights, int(iters[0]), bool(conv[0]))


def trimmed_mean(s: WeightedSample, trim_fraction: float) -> float:
    """Weighted mean after removing ceil(trim_fraction * n) points from each
    tail; surviving weights are renormalized."""
    if not 0 <= trim_fraction < 0.5:
        raise ValueError(f"trim_fraction must lie in [0, 0.5), got {trim_fraction}")
    v, w, _ = _canonical_columns(s.values[:, None], s.weights[:, None])
    mean, _ = _trimmed_columns(v, w, trim_fraction)
    return float(mean[0])


# ---------------------------------------------------------------------------
# geometric median
# ---------------------------------------------------------------------------


def _weiszfeld_full(points: np.ndarray, weights: np.ndarray, cfg: IrlsSettings):
    """Weiszfeld iteration; returns (point, final per-point weights, converged).

    When the iterate lands on a data point the subgradient optimality
    condition is checked there: if satisfied the point is returned, otherwise
    the iterate is nudged off by cfg.tol along the descent direction.
    """
    n, dim = points.shape
    # canonical point order for permutation-invariant summation
    keys = [weights] + [points[:, d] for d in range(dim - 1, -1, -1)]
    order = np.lexsort(keys)
    pts = points[order]
    wts = weights[order]

    def finish(x, final_w, converged):
        out_w = np.empty_like(final_w)
        out_w[order] = final_w
        return x, out_w, converged

    # weighted coordinatewise median start: robust and equivariant
    x = np.empty(dim)
    for d in range(dim):
        v, w2, _ = _canonical_columns(pts[:, d][:, None], wts[:, None])
        med, _, _, _ = _median_columns(v, w2)
        x[d] = med[0]

    for _ in range(cfg.max_iters):
        diff = pts - x[None, :]
        dist = np.sqrt(np.add.reduce(diff * diff, axis=1))
        at_point = dist <= 0.0
        if np.any(at_point & (wts > 0)):
            # subgradient check at a data point (Vardi-Zhang)
            away = ~at_point
            r = np.zeros(dim)
            if np.any(away):
                r = np.add.reduce(
                    (wts[away] / dist[away])[:, None] * diff[away], axis=0
                )
            anchor_w = float(wts[at_point].sum())
            r_norm = float(np.sqrt(np.sum(r * r)))
            if r_norm <= anchor_w:
                final = np.where(at_point, wts, 0.0)
                return finish(x, final / final.sum(), True)
            x = x + (cfg.tol / r_norm) * r
            continue
        inv = wts / dist
        tot = np.add.reduce(inv)
        x_new = np.add.reduce((inv / tot)[:, None] * pts, axis=0)
        step = float(np.sqrt(np.sum((x_new - x) ** 2)))
        x = x_new
        if step < cfg.tol:
            diff = pts - x[None, :]
            dist = np.maximum(np.sqrt(np.add.reduce(diff * diff, axis=1)), 1e-300)
            final = wts / dist
            return finish(x, final / final.sum(), True)
    diff = pts - x[None, :]
    dist = np.maximum(np.sqrt(np.add.reduce(diff * diff, axis=1)), 1e-300)
    final = wts / dist
    return finish(x, final / final.sum(), False)


def weiszfeld(
    points, weights, cfg: IrlsSettings = IrlsSettings()
) -> np.ndarray:
    """Geometric median: argmin of the weighted sum of euclidean distances."""
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[None, :]
    wts = np.asarray(weights, dtype=np.float64)
    if pts.ndim != 2 or wts.ndim != 1 or pts.shape[0] != wts.size:
        raise ValueError("points must be (n, dim) with one weight per point")
    if pts.shape[0] == 0:
        raise ValueError("need at least one point")
    if not np.all(np.isfinite(pts)) or not np.all(np.isfinite(wts)):
        raise ValueError("points and weights must be finite")
    if np.any(wts < 0) or abs(float(wts.sum()) - 1.0) > WEIGHT_SUM_TOL:
        raise ValueError("weights must be non-negative and sum to 1")
    x, _, _ = _weiszfeld_full(pts, wts, cfg)
    return x
