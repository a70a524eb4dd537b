"""The GPD classifier: tail-shape test plus density-radius test, with
jackknife-calibrated decision thresholds.

Scoring a query point x0 against n training points runs five steps:

1. fetch the k+1 smallest distances from x0 through the neighbor index
   (a zero distance short-circuits to "known": x0 coincides with training);
2. estimate the tail shape xi_hat from the k largest negated distances,
   with the (k+1)-th as threshold;
3. reject as unknown if p * xi_hat >= s (the shape statistic concentrates
   near -1 for points inside the training support and near 0 outside it);
4. compute the ball radius -q_gamma containing roughly gamma of the
   training mass around x0;
5. reject as unknown if that radius exceeds t, otherwise accept as known.

The thresholds (s, t) are calibrated by leaving each training point out,
scoring it against the rest, and taking the (1 - alpha/2) empirical
quantiles of the two statistics, so that about alpha of the training data
would be self-flagged (a Bonferroni split of the type-I error across the
two tests). The jackknife statistics are cached on the model, which makes
recalibration at a new alpha free.
"""

from dataclasses import dataclass, replace

import numpy as np

from .data import EUCLIDEAN, KNOWN, UNKNOWN, DistanceMetric, LabeledDataset, Verdict
from .errors import FitError, UsageError
from .evt import default_tail_count
from .neighbors import NeighborIndex

REJECTED_SHAPE = "rejected_shape"
REJECTED_RADIUS = "rejected_radius"
ACCEPTED = "accepted"
COINCIDENT_KNOWN = "coincident_known"


@dataclass(frozen=True)
class GpdcEvidence:
    """Per-point detail: the shape statistic, the ball radius (absent when
    the shape test already rejected), and which stage decided."""

    xi_hat: float | None
    p_xi: float | None
    radius: float | None
    stage: str


@dataclass(frozen=True)
class CalibrationProfile:
    """Jackknife calibration: thresholds plus the per-point statistics that
    produced them (NaN marks training points coincident with another)."""

    shape_threshold: float
    radius_threshold: float
    alpha: float
    pxi_stats: np.ndarray
    radius_stats: np.ndarray


def _quantile_thresholds(pxi_stats, radius_stats, alpha):
    level = 1.0 - alpha / 2.0
    pxi = pxi_stats[np.isfinite(pxi_stats)]
    rad = radius_stats[np.isfinite(radius_stats)]
    s = float(np.quantile(pxi, level, method="higher"))
    t = float(np.quantile(rad, level, method="higher"))
    return s, t


def _tail_stats(d: np.ndarray, k: int, p: int, gamma: float, n_ref: int):
    """Shape and radius statistics from (m, k+1) ascending distance rows.

    ``n_ref`` is the number of training points the distances were measured
    against (n for external queries, n-1 inside the jackknife). Rows whose
    smallest distance is zero are coincident with training and get NaN
    statistics.
    """
    coincident = d[:, 0] == 0.0
    with np.errstate(divide="ignore", invalid="ignore"):
        xi = np.log(d[:, :k] / d[:, k:k + 1]).mean(axis=1)
        radius = d[:, k] * (n_ref * gamma / k) ** (-xi)
    pxi = np.where(coincident, np.nan, p * xi)
    radius = np.where(coincident, np.nan, radius)
    return coincident, pxi, radius


class GpdcModel:
    """Immutable fitted GPD classifier; see :func:`fit`."""

    KIND = "gpdc"

    def __init__(self, index: NeighborIndex, k: int, gamma: float,
                 calibration: CalibrationProfile):
        self._index = index
        self.p = index.dimension
        self.n = index.size
        self.k = k
        self.gamma = gamma
        self.calibration = calibration
        self._pxi_sorted = np.sort(
            calibration.pxi_stats[np.isfinite(calibration.pxi_stats)])
        self._radius_sorted = np.sort(
            calibration.radius_stats[np.isfinite(calibration.radius_stats)])

    # -- public surface -------------------------------------------------

    @property
    def alpha(self) -> float:
        return self.calibration.alpha

    @property
    def shape_threshold(self) -> float:
        return self.calibration.shape_threshold

    @property
    def radius_threshold(self) -> float:
        return self.calibration.radius_threshold

    @property
    def metric(self) -> DistanceMetric:
        return self._index.metric

    @property
    def index(self) -> NeighborIndex:
        return self._index

    def score(self, x0) -> tuple:
        """Classify one point; returns (Verdict, GpdcEvidence).

        The verdict's score field is the continuous unknownness rank (see
        :meth:`continuous_score`), usable for thresholds-free ROC analysis.
        """
        coincident, pxi, radius = self._point_stats(x0)
        rank = self._rank(coincident, pxi, radius)
        if coincident:
            ev = GpdcEvidence(xi_hat=None, p_xi=None, radius=None,
                              stage=COINCIDENT_KNOWN)
            return Verdict(KNOWN, rank, ev), ev
        s, t = self.shape_threshold, self.radius_threshold
        xi = pxi / self.p
        if pxi >= s:
            ev = GpdcEvidence(xi_hat=xi, p_xi=pxi, radius=None,
                              stage=REJECTED_SHAPE)
            return Verdict(UNKNOWN, rank, ev), ev
        if radius > t:
            ev = GpdcEvidence(xi_hat=xi, p_xi=pxi, radius=radius,
                              stage=REJECTED_RADIUS)
            return Verdict(UNKNOWN, rank, ev), ev
        ev = GpdcEvidence(xi_hat=xi, p_xi=pxi, radius=radius, stage=ACCEPTED)
        return Verdict(KNOWN, rank, ev), ev

    def continuous_score(self, x0) -> float:
        """Unknownness in [0, 1]: the worse of the two statistics' empirical
        ranks within the jackknife sample. 0 for coincident points, near 1
        for points whose statistics exceed everything seen in calibration."""
        return self._rank(*self._point_stats(x0))

    def recalibrated(self, alpha: float) -> "GpdcModel":
        """New model with thresholds recomputed at a different type-I level,
        reusing the cached jackknife statistics (no distance work)."""
        _check_alpha(alpha)
        s, t = _quantile_thresholds(self.calibration.pxi_stats,
                                    self.calibration.radius_stats, alpha)
        cal = replace(self.calibration, shape_threshold=s, radius_threshold=t,
                      alpha=alpha)
        return GpdcModel(self._index, self.k, self.gamma, cal)

    def decision_stats(self, points) -> tuple:
        """Batch evidence for an (m, p) array: (coincident, p_xi, radius)."""
        points = np.asarray(points, dtype=float)
        d = self._index.batch_k_smallest(points, self.k + 1)
        return _tail_stats(d, self.k, self.p, self.gamma, self.n)

    def unknownness(self, points) -> np.ndarray:
        """Batch continuous scores for an (m, p) array of query points."""
        coincident, pxi, radius = self.decision_stats(points)
        return self._ranks(coincident, pxi, radius)

    def decide(self, coincident, pxi, radius, alpha: float | None = None):
        """Vectorized decision rule at the model's (or a given) alpha."""
        if alpha is None:
            s, t = self.shape_threshold, self.radius_threshold
        else:
            _check_alpha(alpha)
            s, t = _quantile_thresholds(self.calibration.pxi_stats,
                                        self.calibration.radius_stats, alpha)
        return ~coincident & ((pxi >= s) | (radius > t))

    # -- internals --------------------------------------------------------

    def _point_stats(self, x0):
        pairs = self._index.k_smallest_distances(x0, self.k + 1)
        d = np.array([p[0] for p in pairs])
        coincident, pxi, radius = _tail_stats(d[None, :], self.k, self.p,
                                              self.gamma, self.n)
        return bool(coincident[0]), float(pxi[0]), float(radius[0])

    def _rank(self, coincident, pxi, radius) -> float:
        return float(self._ranks(np.array([coincident]), np.array([pxi]),
                                 np.array([radius]))[0])

    def _ranks(self, coincident, pxi, radius) -> np.ndarray:
        rs = np.searchsorted(self._pxi_sorted, pxi, side="right") \
            / self._pxi_sorted.shape[0]
        rt = np.searchsorted(self._radius_sorted, radius, side="right") \
            / self._radius_sorted.shape[0]
        return np.where(coincident, 0.0, np.maximum(rs, rt))

    # -- serialization ------------------------------------------------------

    def to_payload(self) -> dict:
        return {
            "points": self._index.points.tolist(),
            "k": self.k,
            "gamma": self.gamma,
            "alpha": self.alpha,
            "shape_threshold": self.shape_threshold,
            "radius_threshold": self.radius_threshold,
            "pxi_stats": self.calibration.pxi_stats.tolist(),
            "radius_stats": self.calibration.radius_stats.tolist(),
        }

    @classmethod
    def from_payload(cls, payload: dict, metric: DistanceMetric) -> "GpdcModel":
        index = NeighborIndex(np.array(payload["points"], dtype=float), metric)
        cal = CalibrationProfile(
            shape_threshold=float(payload["shape_threshold"]),
            radius_threshold=float(payload["radius_threshold"]),
            alpha=float(payload["alpha"]),
            pxi_stats=np.array(payload["pxi_stats"], dtype=float),
            radius_stats=np.array(payload["radius_stats"], dtype=float),
        )
        return cls(index, int(payload["k"]), float(payload["gamma"]), cal)


def _check_alpha(alpha):
    if not (0.0 < alpha <= 1.0):
        raise UsageError(f"alpha must be in (0, 1], got {alpha}")


def fit(data: LabeledDataset, k: int | None = None, gamma: float | None = None,
        alpha: float = 0.05, metric: DistanceMetric = EUCLIDEAN) -> GpdcModel:
    """Fit the classifier: build the index, run the leave-one-out
    calibration, and set the two decision thresholds for the target alpha.

    All classes are collapsed; labels are ignored. ``k`` defaults to the
    0.25% tail rule, ``gamma`` to 1/n.
    """
    n, p = data.n, data.p
    if k is None:
        k = default_tail_count(n)
    if k < 1:
        raise UsageError(f"k must be >= 1, got {k}")
    if n < k + 2:
        raise UsageError(f"need n >= k + 2 (n={n}, k={k})")
    _check_alpha(alpha)
    if gamma is None:
        gamma = 1.0 / n
    if not (0.0 < gamma < k / n):
        raise UsageError(f"gamma must be in (0, k/n) = (0, {k / n:g}), got {gamma}")

    index = NeighborIndex(data.points, metric)
    # Leave-one-out pass: each training point scored against the other n-1.
    d = index.leave_one_out_smallest(k + 1)
    coincident, pxi, radius = _tail_stats(d, k, p, gamma, n - 1)
    if np.isfinite(pxi).sum() < 3:
        raise FitError(
            "jackknife calibration degenerate: fewer than 3 training points "
            "with positive leave-one-out distances",
            diagnostics={"n": n, "coincident": int(coincident.sum())},
        )
    s, t = _quantile_thresholds(pxi, radius, alpha)
    cal = CalibrationProfile(shape_threshold=s, radius_threshold=t,
                             alpha=alpha, pxi_stats=pxi, radius_stats=radius)
    return GpdcModel(index, k, gamma, cal)


class PerClassEnsemble:
    """One classifier per training class; a point is unknown only when every
    member classifier marks it unknown. Works for any model whose ``score``
    returns a Verdict with an unknownness-oriented score field."""

    def __init__(self, models: dict):
        if not models:
            raise UsageError("ensemble needs at least one member model")
        self.models = dict(models)

    @classmethod
    def fit(cls, data: LabeledDataset, fit_fn=fit, **fit_kwargs) -> "PerClassEnsemble":
        models = {}
        for name in data.class_names:
            models[name] = fit_fn(data.restrict_to_classes([name]), **fit_kwargs)
        return cls(models)

    def score(self, x0) -> Verdict:
        verdicts = {}
        for name, model in self.models.items():
            out = model.score(x0)
            verdicts[name] = out[0] if isinstance(out, tuple) else out
        unknown = all(v.is_unknown for v in verdicts.values())
        score = min(v.score for v in verdicts.values())
        return Verdict(UNKNOWN if unknown else KNOWN, score, verdicts)
