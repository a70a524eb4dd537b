"""Synthetic data generation, metrics, and the experimental protocols.

Three protocols are provided at desk scale:

* ``toy``: three known Gaussian classes (two near each other, one isolated)
  plus an unknown class that is well separated from everything but closest
  to the isolated known class. This is the geometry on which margin-based
  scoring hands the unknown cluster an unjustified premium while the
  distance-tail classifiers are unaffected.
* ``oletter``: sample a set of known classes, fit on their training rows,
  then sweep openness by adding the held-out classes' test rows one class
  at a time; F-measure (unknown = positive class) is reported over a grid
  of decision thresholds. Runs on a reduced synthetic surrogate by default
  and on the real 26-class letter file when supplied.
* ``thyroid``: binary novelty detection with a single known class; ROC/AUC
  per method, with a tail-fraction sweep for the GPD classifier.

All randomness flows from one seed through named substreams, and protocol
repetitions own independent streams keyed by (seed, rep).
"""

import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import evm as evm_mod
from . import gevc as gevc_mod
from . import gpdc as gpdc_mod
from .data import EUCLIDEAN, DistanceMetric, LabeledDataset, load_dataset_csv
from .errors import DataError, UsageError

DEFAULT_ALPHA_GRID = (0.01, 0.05, 0.1, 0.2)
DEFAULT_DELTA_GRID = (0.1, 0.3, 0.5, 0.7, 0.9)
THYROID_TAIL_FRACTIONS = (0.0025, 0.01, 0.025, 0.05, 0.10)


def rng_from(seed: int, *keys) -> np.random.Generator:
    """Named substream of the master seed; strings are hashed stably."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for key in keys:
        if isinstance(key, str):
            entropy.append(zlib.crc32(key.encode()))
        else:
            entropy.append(int(key) & 0xFFFFFFFF)
    return np.random.default_rng(np.random.SeedSequence(entropy))


# ---------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class GaussianBlob:
    """One class: a Gaussian with per-split sample counts."""

    label: str
    mean: tuple
    cov: tuple
    train_count: int = 0
    test_count: int = 0

    def chol(self) -> np.ndarray:
        cov = np.atleast_2d(np.asarray(self.cov, dtype=float))
        try:
            return np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            raise UsageError(
                f"class {self.label!r}: covariance is not positive definite"
            ) from None

    def sample(self, rng: np.random.Generator, count: int) -> np.ndarray:
        mean = np.asarray(self.mean, dtype=float)
        return rng.standard_normal((count, mean.shape[0])) @ self.chol().T + mean


@dataclass(frozen=True)
class ToyConfig:
    known: tuple
    unknown: GaussianBlob
    seed: int = 0

    def validate(self):
        if not self.known:
            raise UsageError("need at least one known class")
        for blob in self.known:
            if blob.train_count < 1 or blob.test_count < 1:
                raise UsageError(f"class {blob.label!r}: counts must be >= 1")
            blob.chol()
        if self.unknown.test_count < 1:
            raise UsageError("unknown class needs test_count >= 1")
        self.unknown.chol()


def default_toy_config(seed: int = 0) -> ToyConfig:
    """Reconstruction of the misleading-geometry toy problem: two known
    classes near each other, a third isolated far away, and the unknown
    cluster separated from all training data but nearest to the isolated
    class. 600 training and 800 test points. The exact Gaussian parameters
    are this package's choice; only the geometry is meaningful."""
    eye = ((1.0, 0.0), (0.0, 1.0))
    wide = ((2.25, 0.0), (0.0, 2.25))
    return ToyConfig(
        known=(
            GaussianBlob("c0", (0.0, 0.0), eye, 200, 200),
            GaussianBlob("c1", (5.0, 0.0), eye, 200, 200),
            GaussianBlob("c2", (0.0, -14.0), eye, 200, 200),
        ),
        unknown=GaussianBlob("unknown", (7.0, -14.0), wide, 0, 200),
        seed=seed,
    )


@dataclass(frozen=True)
class EvalSet:
    """Evaluation pool: points plus whether each comes from a known class."""

    points: np.ndarray
    is_known: np.ndarray

    @property
    def is_unknown(self) -> np.ndarray:
        return ~self.is_known


def generate_toy(cfg: ToyConfig) -> tuple:
    """Deterministic (train, test) draw for a toy configuration."""
    cfg.validate()
    train_pts, train_labels, test_pts, known_flags = [], [], [], []
    for j, blob in enumerate(cfg.known):
        rng = rng_from(cfg.seed, "toy-train", j)
        train_pts.append(blob.sample(rng, blob.train_count))
        train_labels += [blob.label] * blob.train_count
        rng = rng_from(cfg.seed, "toy-test", j)
        test_pts.append(blob.sample(rng, blob.test_count))
        known_flags += [True] * blob.test_count
    rng = rng_from(cfg.seed, "toy-unknown")
    test_pts.append(cfg.unknown.sample(rng, cfg.unknown.test_count))
    known_flags += [False] * cfg.unknown.test_count
    train = LabeledDataset(np.vstack(train_pts), train_labels)
    test = EvalSet(points=np.vstack(test_pts),
                   is_known=np.array(known_flags, dtype=bool))
    return train, test


# ---------------------------------------------------------------------------
# metrics


@dataclass(frozen=True)
class RocCurve:
    """ROC points from (0,0) to (1,1) plus the exact trapezoidal AUC."""

    points: tuple
    auc: float


def roc_auc(scores) -> RocCurve:
    """ROC over (unknownness, is_unknown) pairs, unknown = positive class.

    Ties are handled by the diagonal segments of the curve, so the AUC
    equals the tie-averaged pair-concordance statistic; the integration is
    done in integer counts and divided once, keeping it exact.
    """
    items = [(float(s), bool(u)) for s, u in scores]
    if not items:
        raise UsageError("need at least one scored point")
    n_pos = sum(1 for _, u in items if u)
    n_neg = len(items) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UsageError("ROC needs both known and unknown points")
    items.sort(key=lambda t: -t[0])
    points = [(0.0, 0.0)]
    tp = fp = 0
    num = 0  # twice the area, in integer count units
    i = 0
    while i < len(items):
        j = i
        g_tp = g_fp = 0
        while j < len(items) and items[j][0] == items[i][0]:
            if items[j][1]:
                g_tp += 1
            else:
                g_fp += 1
            j += 1
        num += g_fp * (tp + (tp + g_tp))
        tp += g_tp
        fp += g_fp
        points.append((fp / n_neg, tp / n_pos))
        i = j
    return RocCurve(points=tuple(points), auc=num / (2 * n_pos * n_neg))


def _as_unknown_flag(label) -> bool:
    if isinstance(label, (bool, np.bool_)):
        return bool(label)
    if label in ("unknown", "Unknown"):
        return True
    if label in ("known", "Known"):
        return False
    raise UsageError(f"cannot interpret label {label!r}")


def f_measure(decisions) -> float:
    """Harmonic mean of precision and recall for unknown-detection
    (unknown = positive class); 0 when undefined. Accepts boolean flags or
    known/unknown labels, as (predicted, true) pairs."""
    pairs = [( _as_unknown_flag(p), _as_unknown_flag(t)) for p, t in decisions]
    if not pairs:
        raise UsageError("need at least one decision")
    tp = sum(1 for p, t in pairs if p and t)
    fp = sum(1 for p, t in pairs if p and not t)
    fn = sum(1 for p, t in pairs if not p and t)
    if tp == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / (tp + fn)
    return 2 * precision * recall / (precision + recall)


# ---------------------------------------------------------------------------
# method drivers (shared by the protocols and the CLI)


def fit_method(name: str, train: LabeledDataset, k: int | None = None,
               alpha: float = 0.05, gamma: float | None = None,
               delta: float | None = None,
               metric: DistanceMetric = EUCLIDEAN,
               free_endpoint: bool = False):
    if name == "gpdc":
        return gpdc_mod.fit(train, k=k, gamma=gamma, alpha=alpha, metric=metric)
    if name == "gevc":
        return gevc_mod.fit(train, alpha=alpha, metric=metric,
                            free_endpoint=free_endpoint)
    if name == "evm":
        return evm_mod.fit(train, k=k, delta=delta, metric=metric)
    raise UsageError(f"unknown method {name!r} (expected gpdc, gevc or evm)")


def _flags_over_grid(name: str, model, points: np.ndarray, grid):
    """Unknown-decision masks for each threshold in the grid.

    The grid carries alpha levels for gpdc/gevc and psi thresholds (delta)
    for the margin baseline.
    """
    out = {}
    if name == "gpdc":
        coincident, pxi, radius = model.decision_stats(points)
        for a in grid:
            out[a] = model.decide(coincident, pxi, radius, alpha=a)
    elif name == "gevc":
        w = 1.0 - model.unknownness(points)  # the fitted CDF values
        for a in grid:
            out[a] = w < a
    elif name == "evm":
        psi = model.membership_batch(points)
        for d in grid:
            out[d] = psi < d
    else:
        raise UsageError(f"unknown method {name!r}")
    return out


# ---------------------------------------------------------------------------
# toy protocol


@dataclass(frozen=True)
class ToyResult:
    aucs: dict
    curves: dict
    test: EvalSet
    xi_hat: np.ndarray  # tail-shape estimate per test point (NaN if coincident)


def run_toy_protocol(cfg: ToyConfig | None = None, seed: int = 0, k: int = 20,
                     alpha: float = 0.05,
                     methods=("evm", "gpdc", "gevc")) -> ToyResult:
    if cfg is None:
        cfg = default_toy_config(seed)
    train, test = generate_toy(cfg)
    curves, aucs = {}, {}
    gpdc_model = gpdc_mod.fit(train, k=k, alpha=alpha)
    _, pxi, _ = gpdc_model.decision_stats(test.points)
    xi = pxi / train.p
    for name in methods:
        model = gpdc_model if name == "gpdc" else fit_method(name, train, k=k,
                                                             alpha=alpha)
        unknownness = model.unknownness(test.points)
        curve = roc_auc(zip(unknownness, test.is_unknown))
        curves[name] = curve
        aucs[name] = curve.auc
    return ToyResult(aucs=aucs, curves=curves, test=test, xi_hat=xi)


# ---------------------------------------------------------------------------
# openness protocol


@dataclass(frozen=True)
class OpennessStep:
    """One protocol step: F-measure per method over the threshold grid at a
    given number of included unknown classes. ``f_measures`` maps method ->
    tuple of (threshold, f) pairs; f is None at the closed-set step, where
    unknown recall is undefined."""

    rep: int
    known_classes: tuple
    n_unknown_classes: int
    f_measures: dict


def synthetic_openset_surrogate(n_classes: int = 8, train_per_class: int = 60,
                                test_per_class: int = 40, p: int = 4,
                                spread: float = 5.0, seed: int = 0) -> tuple:
    """Gaussian stand-in with the openness protocol's structure. Returns
    (data, train_count): the first train_count rows are the training split."""
    rng = rng_from(seed, "surrogate")
    rows, labels = [], []
    means = rng.normal(scale=spread, size=(n_classes, p))
    per_class = train_per_class + test_per_class
    for j in range(n_classes):
        rows.append(rng.standard_normal((per_class, p)) + means[j])
        labels += [f"class{j:02d}"] * per_class
    data = LabeledDataset(np.vstack(rows), labels)
    # Reorder so all training rows come first, preserving class order.
    idx_train, idx_test = [], []
    for j in range(n_classes):
        base = j * per_class
        idx_train.extend(range(base, base + train_per_class))
        idx_test.extend(range(base + train_per_class, base + per_class))
    order = np.array(idx_train + idx_test)
    return (LabeledDataset(data.points[order], data.labels[order]),
            n_classes * train_per_class)


def run_oletter(data: LabeledDataset, methods: dict | None = None,
                reps: int = 5, seed: int = 0, n_known: int | None = None,
                train_count: int | None = None,
                alphas=DEFAULT_ALPHA_GRID, deltas=DEFAULT_DELTA_GRID,
                metric: DistanceMetric = EUCLIDEAN, jobs: int = 1) -> list:
    """Openness sweep: per repetition, sample known classes, fit on their
    training rows, then include the remaining classes' test rows one class
    at a time, recording F-measure curves over the threshold grid."""
    j_classes = data.n_classes
    if n_known is None:
        n_known = 15 if j_classes >= 26 else max(2, round(j_classes * 15 / 26))
    if n_known < 2 or n_known >= j_classes:
        raise UsageError(
            f"need 2 <= known classes < total classes ({j_classes}), got {n_known}"
        )
    if train_count is None:
        train_count = int(0.75 * data.n)
    if not (0 < train_count < data.n):
        raise UsageError(f"train_count must split the data, got {train_count}")
    if methods is None:
        full_scale = j_classes >= 26
        methods = {
            "gpdc": {"k": 22 if full_scale else None},
            "gevc": {},
            "evm": {"k": 75 if full_scale else None},
        }

    train_rows = data.subset(np.arange(data.n) < train_count)
    test_points = data.points[train_count:]
    test_labels = data.labels[train_count:]
    names = np.array(data.class_names, dtype=object)

    def one_rep(rep: int) -> list:
        rng = rng_from(seed, "oletter", rep)
        known = names[rng.choice(j_classes, size=n_known, replace=False)]
        rest = np.array([c for c in names if c not in set(known)], dtype=object)
        unknown_order = rest[rng.permutation(rest.shape[0])]
        train = train_rows.restrict_to_classes(known)

        known_set = set(known)
        test_known_mask = np.array([l in known_set for l in test_labels])
        pool_points = [test_points[test_known_mask]]
        pool_counts = [int(test_known_mask.sum())]
        for c in unknown_order:
            mask = test_labels == c
            pool_points.append(test_points[mask])
            pool_counts.append(int(mask.sum()))
        all_points = np.vstack(pool_points)

        # Per-method threshold flags for every pooled point, computed once.
        flags = {}
        for name, kwargs in methods.items():
            grid = deltas if name == "evm" else alphas
            model = fit_method(name, train, metric=metric, **kwargs)
            flags[name] = _flags_over_grid(name, model, all_points, grid)

        steps = []
        n_known_test = pool_counts[0]
        bounds = np.cumsum(pool_counts)
        for m in range(len(unknown_order) + 1):
            stop = bounds[m]
            n_unknown_test = int(stop - n_known_test)
            f_per_method = {}
            for name in methods:
                curve = []
                for thr, flag in flags[name].items():
                    if n_unknown_test == 0:
                        curve.append((thr, None))
                        continue
                    fp = int(flag[:n_known_test].sum())
                    tp = int(flag[n_known_test:stop].sum())
                    fn = n_unknown_test - tp
                    f = 0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn)
                    curve.append((thr, f))
                f_per_method[name] = tuple(curve)
            steps.append(OpennessStep(rep=rep, known_classes=tuple(known),
                                      n_unknown_classes=m,
                                      f_measures=f_per_method))
        return steps

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            all_steps = list(pool.map(one_rep, range(reps)))
    else:
        all_steps = [one_rep(r) for r in range(reps)]
    return [step for rep_steps in all_steps for step in rep_steps]


# ---------------------------------------------------------------------------
# binary novelty protocol


def run_binary_novelty(train: LabeledDataset, test: EvalSet,
                       methods=("gpdc", "gevc", "evm"), k: int | None = None,
                       alpha: float = 0.05,
                       metric: DistanceMetric = EUCLIDEAN) -> dict:
    """ROC per method on a known-only training set; the margin baseline is
    reported as None when the training data has a single class."""
    curves = {}
    for name in methods:
        if name == "evm" and train.n_classes < 2:
            curves[name] = None
            continue
        model = fit_method(name, train, k=k, alpha=alpha, metric=metric)
        unknownness = model.unknownness(test.points)
        curves[name] = roc_auc(zip(unknownness, test.is_unknown))
    return curves


def gpdc_tail_fraction_sweep(train: LabeledDataset, test: EvalSet,
                             fractions=THYROID_TAIL_FRACTIONS,
                             alpha: float = 0.05,
                             metric: DistanceMetric = EUCLIDEAN) -> list:
    """(fraction, k, auc) for the GPD classifier across tail sizes."""
    out = []
    for frac in fractions:
        k = max(1, int(np.ceil(frac * train.n)))
        model = gpdc_mod.fit(train, k=k, alpha=alpha, metric=metric)
        curve = roc_auc(zip(model.unknownness(test.points), test.is_unknown))
        out.append((float(frac), k, curve.auc))
    return out


# ---------------------------------------------------------------------------
# dataset loaders


def load_letter(path) -> LabeledDataset:
    """UCI letter format: letter label first, 16 integer features."""
    data = load_dataset_csv(path, label_column="first", delimiter=",",
                            header=False)
    if data.p != 16:
        raise DataError(f"{path}: expected 16 features, found {data.p}")
    return data


def load_thyroid(path, unknown_classes=("1", "2"), known_classes=("3",)) -> tuple:
    """Clinical screening format: whitespace- or comma-separated numeric
    rows, 21 features plus a trailing class column. Returns (points,
    is_unknown) with the class mapping applied."""
    unknown_set = {str(c) for c in unknown_classes}
    known_set = {str(c) for c in known_classes}
    points, flags = [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            cells = line.split(",") if "," in line else line.split()
            if len(cells) != 22:
                raise DataError(
                    f"{path}: line {lineno}: expected 22 fields, got {len(cells)}"
                )
            label = cells[-1].strip().rstrip(".")
            if label in unknown_set:
                flags.append(True)
            elif label in known_set:
                flags.append(False)
            else:
                raise DataError(
                    f"{path}: line {lineno}: unmapped class {label!r}"
                )
            try:
                points.append([float(c) for c in cells[:-1]])
            except ValueError:
                raise DataError(
                    f"{path}: line {lineno}: non-numeric feature"
                ) from None
    if not points:
        raise DataError(f"{path}: no data rows")
    return np.array(points, dtype=float), np.array(flags, dtype=bool)


def thyroid_split(points: np.ndarray, is_unknown: np.ndarray, seed: int = 0,
                  test_known: int = 250) -> tuple:
    """All unknown rows plus ``test_known`` sampled known rows form the test
    set; the remaining known rows train. Returns (train, test)."""
    known_idx = np.flatnonzero(~is_unknown)
    unknown_idx = np.flatnonzero(is_unknown)
    if known_idx.size <= test_known:
        raise UsageError(
            f"need more than {test_known} known rows, got {known_idx.size}"
        )
    if unknown_idx.size == 0:
        raise UsageError("no unknown rows after class mapping")
    rng = rng_from(seed, "thyroid-split")
    sampled = rng.choice(known_idx, size=test_known, replace=False)
    sampled_set = set(sampled.tolist())
    train_idx = np.array([i for i in known_idx if i not in sampled_set])
    train = LabeledDataset(points[train_idx], ["known"] * train_idx.size)
    test_idx = np.concatenate([sampled, unknown_idx])
    test = EvalSet(points=points[test_idx],
                   is_known=~is_unknown[test_idx])
    return train, test
