"""The GEV classifier: a hypothesis test on the nearest-neighbor distance.

Training computes every point's distance to its closest other training
point and fits a reversed Weibull with upper endpoint 0 to the negated
values (zero distances from duplicated points are excluded from the fit
sample). A query is rejected as unknown at level alpha when the fitted CDF
evaluated at its negated nearest distance falls below alpha, i.e. when the
query sits farther from the training set than all but a vanishing share of
the training points sit from each other.

The model updates in place: inserting points revises only the affected
nearest distances, and the Weibull refit is deferred until the next score
once more than ``REFIT_FRACTION`` of the entries have changed. The deferred
refit is lock-protected so concurrent scorers see either the old or the new
fit, never a partial one.
"""

import threading

import numpy as np

from .data import EUCLIDEAN, KNOWN, UNKNOWN, DistanceMetric, LabeledDataset, Verdict
from .errors import FitError, UsageError
from .evt import (ReversedWeibull, reversed_weibull_cdf, reversed_weibull_fit,
                  reversed_weibull_fit_free_endpoint)
from .neighbors import NeighborIndex

# Deferred-refit trigger: fraction of nearest-distance entries that may
# change before the fitted distribution is considered stale.
REFIT_FRACTION = 0.01


def _fit_dmin_sample(dmin: np.ndarray, free_endpoint: bool) -> tuple:
    positive = dmin[dmin > 0]
    excluded = int(dmin.shape[0] - positive.shape[0])
    if positive.shape[0] < 3:
        raise FitError(
            "need at least 3 strictly positive nearest-neighbor distances "
            f"(got {positive.shape[0]}, {excluded} duplicates excluded)",
            diagnostics={"n": int(dmin.shape[0]), "excluded": excluded},
        )
    if free_endpoint:
        fitted = reversed_weibull_fit_free_endpoint(-positive)
    else:
        fitted = reversed_weibull_fit(-positive, endpoint=0.0)
    return fitted, excluded


class GevcModel:
    """Fitted GEV classifier; see :func:`fit`. Reads are concurrency-safe,
    ``update`` requires exclusive access."""

    KIND = "gevc"

    def __init__(self, index: NeighborIndex, alpha: float,
                 fitted: ReversedWeibull, excluded_zeros: int,
                 free_endpoint: bool = False):
        self._index = index
        self.alpha = alpha
        self.free_endpoint = free_endpoint
        self._fitted = fitted
        self.excluded_zeros = excluded_zeros
        self._changed_since_fit = 0
        self._stale = False
        self._refit_lock = threading.Lock()

    @property
    def n(self) -> int:
        return self._index.size

    @property
    def p(self) -> int:
        return self._index.dimension

    @property
    def metric(self) -> DistanceMetric:
        return self._index.metric

    @property
    def index(self) -> NeighborIndex:
        return self._index

    @property
    def dmin(self) -> np.ndarray:
        """Current nearest-other-training-point distances."""
        return self._index.dmin_vector()

    @property
    def fitted(self) -> ReversedWeibull:
        """The reversed Weibull in force, refitting first if updates have
        left the cached one stale."""
        if self._stale:
            with self._refit_lock:
                if self._stale:
                    fitted, excluded = _fit_dmin_sample(
                        self._index.dmin_vector(), self.free_endpoint)
                    self._fitted = fitted
                    self.excluded_zeros = excluded
                    self._changed_since_fit = 0
                    self._stale = False
        return self._fitted

    def score(self, x0) -> tuple:
        """Classify one point; returns (Verdict, d0min).

        Unknown iff W(-d0min) < alpha, where d0min is the distance to the
        nearest training point; the verdict score is 1 - W(-d0min), which
        grows with unknownness.
        """
        fitted = self.fitted
        pairs = self._index.k_smallest_distances(x0, 1)
        d0 = float(pairs[0][0])
        w = reversed_weibull_cdf(fitted, -d0)
        verdict = Verdict(UNKNOWN if w < self.alpha else KNOWN, 1.0 - w,
                          {"d0min": d0, "cdf": w})
        return verdict, d0

    def unknownness(self, points) -> np.ndarray:
        """Batch 1 - W(-d0min) for an (m, p) array of query points."""
        fitted = self.fitted
        d0 = self._index.batch_k_smallest(np.asarray(points, dtype=float), 1)[:, 0]
        return 1.0 - reversed_weibull_cdf(fitted, -d0)

    def update(self, new_points) -> "GevcModel":
        """Insert (point, label) pairs, revising affected nearest distances.

        The Weibull refit is deferred to the next score when the cumulative
        changed fraction exceeds REFIT_FRACTION; an empty list is a no-op.
        Mutates and returns this model.
        """
        new_points = list(new_points)
        if not new_points:
            return self
        for item in new_points:
            x, label = item
            changed = self._index.insert(x, label)
            # The new point's own entry counts as changed too.
            self._changed_since_fit += len(changed) + 1
        if self._changed_since_fit > REFIT_FRACTION * self._index.size:
            self._stale = True
        return self

    # -- serialization ----------------------------------------------------

    def to_payload(self) -> dict:
        fitted = self.fitted
        return {
            "points": self._index.points.tolist(),
            "labels": [self._index.label(i) for i in range(self.n)],
            "alpha": self.alpha,
            "free_endpoint": self.free_endpoint,
            "dmin": self._index.dmin_vector().tolist(),
            "sigma": fitted.sigma,
            "weibull_alpha": fitted.alpha,
            "endpoint": fitted.endpoint,
            "excluded_zeros": self.excluded_zeros,
        }

    @classmethod
    def from_payload(cls, payload: dict, metric: DistanceMetric) -> "GevcModel":
        labels = payload.get("labels")
        index = NeighborIndex(np.array(payload["points"], dtype=float), metric,
                              labels=labels,
                              dmin=np.array(payload["dmin"], dtype=float))
        fitted = ReversedWeibull(sigma=float(payload["sigma"]),
                                 alpha=float(payload["weibull_alpha"]),
                                 endpoint=float(payload["endpoint"]))
        return cls(index, float(payload["alpha"]), fitted,
                   int(payload["excluded_zeros"]),
                   free_endpoint=bool(payload.get("free_endpoint", False)))


def fit(data: LabeledDataset, alpha: float = 0.05,
        metric: DistanceMetric = EUCLIDEAN,
        free_endpoint: bool = False) -> GevcModel:
    """Fit the classifier: nearest distances for every training point, then
    the reversed Weibull on their negations (endpoint fixed at 0 unless
    ``free_endpoint``). Labels are kept for bookkeeping but play no role."""
    if data.n < 3:
        raise UsageError(f"need at least 3 training points, got {data.n}")
    if not (0.0 <= alpha < 1.0):
        raise UsageError(f"alpha must be in [0, 1), got {alpha}")
    index = NeighborIndex(data.points, metric, labels=list(data.labels))
    fitted, excluded = _fit_dmin_sample(index.dmin_vector(), free_endpoint)
    return GevcModel(index, alpha, fitted, excluded, free_endpoint=free_endpoint)
