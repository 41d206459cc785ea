"""Per-neighborhood model aggregation.

Maps a set of neighbor model vectors and combination weights to an
aggregated vector plus per-coordinate effective weights. All rules except
the geometric median act coordinate-wise, so an M-dimensional aggregation
is M independent scalar location problems sharing the same weights.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .estimators import (
    DegenerateWeightsError,
    IrlsSettings,
    LossSpec,
    WEIGHT_SUM_TOL,
    _canonical_columns,
    _combine_mean_columns,
    _median_columns,
    _median_effective_weights,
    _mm_columns,
    _irls_columns,
    _scatter_rows,
    _trimmed_columns,
    _weiszfeld_full,
)


class AggregationError(RuntimeError):
    """Aggregation failed; the message carries the coordinate index."""


class AggregationRule(Enum):
    MEAN = "mean"
    COORDINATE_MEDIAN = "coordinate_median"
    TRIMMED_MEAN = "trimmed_mean"
    GEOMETRIC_MEDIAN = "geometric_median"
    M_ESTIMATOR = "m_estimator"
    MM_ESTIMATOR = "mm_estimator"


_NEEDS_LOSS = (AggregationRule.M_ESTIMATOR, AggregationRule.MM_ESTIMATOR)


@dataclass(frozen=True)
class AggregatorSpec:
    """Aggregation rule plus the knobs that rule requires.

    ``loss`` is required exactly for the M/MM rules and ``trim_fraction``
    exactly for the trimmed mean; supplying either elsewhere is an error.
    The plain M rule runs IRLS from the weighted mean with a fixed unit
    scale; the MM rule standardizes by the weighted median/MAD of each
    coordinate sample, which is what makes it simultaneously robust and
    efficient.
    """

    rule: AggregationRule
    loss: LossSpec | None = None
    trim_fraction: float | None = None
    irls: IrlsSettings = field(default_factory=IrlsSettings)

    def __post_init__(self):
        if not isinstance(self.rule, AggregationRule):
            raise TypeError(f"rule must be an AggregationRule, got {self.rule!r}")
        if self.rule in _NEEDS_LOSS:
            if self.loss is None:
                raise ValueError(f"{self.rule.value} requires a loss")
        elif self.loss is not None:
            raise ValueError(f"{self.rule.value} does not take a loss")
        if self.rule is AggregationRule.TRIMMED_MEAN:
            if self.trim_fraction is None:
                raise ValueError("trimmed_mean requires trim_fraction")
            if not 0 <= self.trim_fraction < 0.5:
                raise ValueError(
                    f"trim_fraction must lie in [0, 0.5), got {self.trim_fraction}"
                )
        elif self.trim_fraction is not None:
            raise ValueError(f"{self.rule.value} does not take trim_fraction")

    @classmethod
    def mean(cls) -> "AggregatorSpec":
        return cls(AggregationRule.MEAN)

    @classmethod
    def coordinate_median(cls) -> "AggregatorSpec":
        return cls(AggregationRule.COORDINATE_MEDIAN)

    @classmethod
    def trimmed_mean(cls, trim_fraction: float) -> "AggregatorSpec":
        return cls(AggregationRule.TRIMMED_MEAN, trim_fraction=trim_fraction)

    @classmethod
    def geometric_median(cls, irls: IrlsSettings | None = None) -> "AggregatorSpec":
        return cls(AggregationRule.GEOMETRIC_MEDIAN, irls=irls or IrlsSettings())

    @classmethod
    def m_estimator(
        cls, loss: LossSpec | None = None, irls: IrlsSettings | None = None
    ) -> "AggregatorSpec":
        return cls(
            AggregationRule.M_ESTIMATOR,
            loss=loss or LossSpec.tukey(),
            irls=irls or IrlsSettings(),
        )

    @classmethod
    def mm_estimator(
        cls, loss: LossSpec | None = None, irls: IrlsSettings | None = None
    ) -> "AggregatorSpec":
        return cls(
            AggregationRule.MM_ESTIMATOR,
            loss=loss or LossSpec.tukey(),
            irls=irls or IrlsSettings(),
        )


@dataclass
class AggregationOutput:
    """Aggregated model plus the per-neighbor, per-coordinate weights that
    reproduce it as a convex combination.

    For the geometric median the weight matrix holds the single vector-level
    weight of each neighbor replicated across coordinates; the convex
    representation identity then holds only for the coordinate-wise rules.
    """

    model: np.ndarray
    effective_weights: np.ndarray
    converged_coords: int


def _validate_inputs(values: np.ndarray, weights: np.ndarray):
    if values.ndim != 2 or values.shape[0] == 0 or values.shape[1] == 0:
        raise ValueError("need a non-empty (neighbors, coordinates) array")
    if not np.all(np.isfinite(values)):
        raise ValueError("neighbor vectors must be finite")
    if weights.ndim != 1 or weights.size != values.shape[0]:
        raise ValueError(
            f"got {weights.size} weights for {values.shape[0]} neighbor vectors"
        )
    if not np.all(np.isfinite(weights)) or np.any(weights < 0):
        raise ValueError("weights must be finite and non-negative")
    if abs(float(weights.sum()) - 1.0) > WEIGHT_SUM_TOL:
        raise ValueError(f"weights must sum to 1, got {weights.sum()!r}")


def _combine(values: np.ndarray, weights: np.ndarray, spec: AggregatorSpec):
    """Aggregate (L, M) neighbor values under ``spec``.

    Returns (model (M,), effective weights (L, M) in input row order,
    converged coordinate count). Shared by `aggregate` and the simulation
    loop so both emit identical models and weights.
    """
    L, M = values.shape
    rule = spec.rule
    if rule is AggregationRule.GEOMETRIC_MEDIAN:
        point, w_final, ok = _weiszfeld_full(values, weights, spec.irls)
        eff = np.repeat(w_final[:, None], M, axis=1)
        return point, eff, M if ok else 0

    w_in = np.broadcast_to(weights[:, None], (L, M))
    v, w, perm = _canonical_columns(values, np.ascontiguousarray(w_in))
    if rule is AggregationRule.MEAN:
        loc = _combine_mean_columns(v, w)
        return loc, np.array(w_in), M
    if rule is AggregationRule.COORDINATE_MEDIAN:
        med, j, use_mid, jp = _median_columns(v, w)
        eff = _median_effective_weights(v, w, j, use_mid, jp)
        return med, _scatter_rows(eff, perm), M
    if rule is AggregationRule.TRIMMED_MEAN:
        mean, surv = _trimmed_columns(v, w, spec.trim_fraction)
        return mean, _scatter_rows(surv, perm), M
    if rule is AggregationRule.M_ESTIMATOR:
        init = _combine_mean_columns(v, w)
        loc, abar, _, conv = _irls_columns(
            v, w, spec.loss, np.ones(M), init, spec.irls
        )
        return loc, _scatter_rows(abar, perm), int(conv.sum())
    loc, abar, _, conv, _ = _mm_columns(v, w, spec.loss, spec.irls)
    return loc, _scatter_rows(abar, perm), int(conv.sum())


def aggregate(neighbors, weights, spec: AggregatorSpec) -> AggregationOutput:
    """Aggregate neighbor model vectors into one model.

    Parameters
    ----------
    neighbors : sequence of equal-length vectors, or (L, M) array
        One row per neighbor.
    weights : sequence of L non-negative reals summing to one
        Combination weights of the neighborhood.
    spec : AggregatorSpec
        Aggregation rule and its parameters.

    Raises
    ------
    ValueError
        Mismatched vector lengths or invalid weights.
    AggregationError
        An estimator failed on some coordinate; the coordinate index is in
        the message. Degenerate coordinates abort the whole aggregation
        rather than falling back to the mean.
    """
    rows = [np.asarray(n, dtype=np.float64) for n in neighbors]
    if not rows:
        raise ValueError("need at least one neighbor vector")
    lengths = {r.shape for r in rows}
    if len(lengths) != 1 or rows[0].ndim != 1:
        raise ValueError(f"neighbor vectors must share one length, got {lengths}")
    values = np.stack(rows)
    wts = np.asarray(weights, dtype=np.float64)
    _validate_inputs(values, wts)
    try:
        model, eff, conv = _combine(values, wts, spec)
    except DegenerateWeightsError as e:
        raise AggregationError(str(e)) from e
    return AggregationOutput(model=model, effective_weights=eff, converged_coords=conv)


def effective_weight_summary(out: AggregationOutput, malicious_indices) -> float:
    """Total effective weight mass on the listed neighbors, averaged over
    coordinates. Empirically checks that a robust rule zeroes out attackers."""
    idx = np.asarray(list(malicious_indices), dtype=np.int64)
    if idx.size == 0:
        return 0.0
    L = out.effective_weights.shape[0]
    if np.any(idx < 0) or np.any(idx >= L) or np.unique(idx).size != idx.size:
        raise ValueError(f"invalid neighbor index set {malicious_indices!r}")
    return float(out.effective_weights[idx].sum(axis=0).mean())
