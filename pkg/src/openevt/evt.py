"""Extreme value primitives: tail shape MLE, power-law tail and quantile,
and reversed-Weibull fitting.

All the estimators here work on negated distances R = -D, which are bounded
above by zero. The shape estimator averages log-ratios of the k upper order
statistics to the threshold order statistic R_(n-k):

    xi_hat = (1/k) * sum_{i=1..k} log(R_(n+1-i) / u),    u = R_(n-k),

which is nonpositive by construction. The implied tail approximation above
the threshold and its quantile are

    P(-D > x) ~= (k/n) * (x/u)^(-1/xi_hat),     x in (u, 0),
    q_gamma    = u * (n*gamma/k)^(-xi_hat),     0 < gamma < k/n.

The reversed Weibull with a fixed upper endpoint b has CDF

    W(z) = exp{ -((b - z)/sigma)^alpha }   for z < b,   1 otherwise,

and is fitted by profile maximum likelihood: sigma has a closed form given
alpha, and alpha is found by a safeguarded Newton iteration.
"""

import math
from dataclasses import dataclass

import numpy as np

from .errors import FitError, UsageError

# Default exceedance count: the 0.25% biggest negated distances, floored.
DEFAULT_TAIL_FRACTION = 0.0025
MIN_TAIL_COUNT = 10

WEIBULL_MAX_ITER = 200
WEIBULL_TOL = 1e-10
# Transformed samples below this are floored before taking logs, so that
# duplicate-point artifacts cannot inject -inf into the likelihood.
WEIBULL_FLOOR = 1e-300


def default_tail_count(n: int) -> int:
    """Default k for a sample of size n: max(10, ceil(0.0025 * n))."""
    return max(MIN_TAIL_COUNT, int(math.ceil(DEFAULT_TAIL_FRACTION * n)))


@dataclass(frozen=True)
class ShapeEstimate:
    """Tail-shape MLE for negated distances: xi_hat <= 0, threshold u < 0,
    k exceedances out of n, with the exceedances kept for reproducibility."""

    xi_hat: float
    k: int
    u: float
    n: int
    exceedances: np.ndarray


@dataclass(frozen=True)
class GpdTail:
    """Fitted tail above threshold u: everything the survival and quantile
    formulas need (xi_hat, u, k, n)."""

    xi_hat: float
    u: float
    k: int
    n: int


@dataclass(frozen=True)
class ReversedWeibull:
    """Reversed Weibull with fixed upper endpoint (default 0): scale sigma,
    shape alpha, both positive."""

    sigma: float
    alpha: float
    endpoint: float = 0.0


def hill_shape(R, k: int) -> ShapeEstimate:
    """Shape MLE from the k largest of the strictly negative values R.

    The threshold is the order statistic u = R_(n-k); the estimate is the
    mean log-ratio of the k exceedances to u. Zero or positive entries are
    rejected: callers must short-circuit coincident points first.
    """
    R = np.asarray(R, dtype=float)
    if R.ndim != 1:
        raise UsageError("R must be a 1-d array of negated distances")
    n = R.shape[0]
    if not isinstance(k, (int, np.integer)) or k < 1:
        raise UsageError(f"k must be a positive integer, got {k}")
    if k >= n:
        raise UsageError(f"k must be smaller than the sample size ({k} >= {n})")
    if np.any(R >= 0):
        raise UsageError("all values must be strictly negative")
    ordered = np.sort(R)
    u = float(ordered[n - k - 1])
    exceedances = ordered[n - k:]
    xi = float(np.mean(np.log(exceedances / u)))
    exceedances = np.array(exceedances)
    exceedances.setflags(write=False)
    return ShapeEstimate(xi_hat=xi, k=int(k), u=u, n=n, exceedances=exceedances)


def hill_curve(R, ks) -> list:
    """(k, xi_hat) pairs for a sweep of exceedance counts; diagnostic aid."""
    return [(int(k), hill_shape(R, int(k)).xi_hat) for k in ks]


def gpd_tail_survival(tail: GpdTail, x: float) -> float:
    """Estimated P(-D > x) for x in (u, 0), clamped to [0, 1]."""
    if x <= tail.u:
        raise UsageError(f"x must exceed the threshold u={tail.u}, got {x}")
    if x >= 0:
        raise UsageError(f"x must be negative, got {x}")
    ratio = x / tail.u
    if tail.xi_hat == 0.0:
        p = 0.0
    else:
        p = (tail.k / tail.n) * ratio ** (-1.0 / tail.xi_hat)
    return float(min(1.0, max(0.0, p)))


def gpd_quantile(tail: GpdTail, gamma: float) -> float:
    """The (1 - gamma)-quantile of -D: q = u * (n*gamma/k)^(-xi_hat).

    Requires 0 < gamma < k/n; -q is the radius of a ball around the query
    holding roughly gamma of the training mass.
    """
    if not (0.0 < gamma < tail.k / tail.n):
        raise UsageError(
            f"gamma must be in (0, k/n) = (0, {tail.k / tail.n:g}), got {gamma}"
        )
    return float(tail.u * (tail.n * gamma / tail.k) ** (-tail.xi_hat))


def reversed_weibull_cdf(w: ReversedWeibull, z):
    """W(z): exp{-((endpoint - z)/sigma)^alpha} below the endpoint, else 1."""
    z_arr = np.asarray(z, dtype=float)
    scaled = (w.endpoint - z_arr) / w.sigma
    with np.errstate(over="ignore"):
        vals = np.where(z_arr >= w.endpoint, 1.0,
                        np.exp(-np.power(np.maximum(scaled, 0.0), w.alpha)))
    if np.isscalar(z) or z_arr.ndim == 0:
        return float(vals)
    return vals


def reversed_weibull_fit(z, endpoint: float = 0.0,
                         max_iter: int = WEIBULL_MAX_ITER,
                         tol: float = WEIBULL_TOL) -> ReversedWeibull:
    """Two-parameter MLE of (sigma, alpha) with the endpoint held fixed.

    The sample must lie strictly below the endpoint and contain at least 3
    values. A zero-spread sample has no MLE and raises FitError, as does
    hitting the iteration cap.
    """
    z = np.asarray(z, dtype=float)
    if z.ndim != 1 or z.shape[0] < 3:
        raise UsageError("need a 1-d sample of at least 3 values")
    if np.any(z >= endpoint):
        raise UsageError(f"all values must lie strictly below the endpoint {endpoint}")
    w = endpoint - z
    sigma, alpha, ok, iters = fit_weibull_rows(w[None, :], max_iter=max_iter, tol=tol)
    if not ok[0]:
        raise FitError(
            "reversed Weibull fit failed (zero spread or no convergence)",
            diagnostics={
                "n": int(z.shape[0]),
                "iterations": int(iters[0]),
                "min": float(w.min()),
                "max": float(w.max()),
                "last_alpha": float(alpha[0]),
            },
        )
    return ReversedWeibull(sigma=float(sigma[0]), alpha=float(alpha[0]),
                           endpoint=float(endpoint))


def reversed_weibull_fit_free_endpoint(z) -> ReversedWeibull:
    """Three-parameter variant: the upper endpoint is estimated as well."""
    from scipy.stats import weibull_max

    z = np.asarray(z, dtype=float)
    if z.ndim != 1 or z.shape[0] < 3:
        raise UsageError("need a 1-d sample of at least 3 values")
    if z.max() == z.min():
        raise FitError("free-endpoint Weibull fit failed: zero spread",
                       diagnostics={"n": int(z.shape[0])})
    try:
        shape, loc, scale = weibull_max.fit(z)
    except Exception as exc:  # scipy raises a mix of types on bad samples
        raise FitError(f"free-endpoint Weibull fit failed: {exc}",
                       diagnostics={"n": int(z.shape[0])}) from exc
    if not (np.isfinite(shape) and np.isfinite(loc) and np.isfinite(scale)
            and shape > 0 and scale > 0):
        raise FitError("free-endpoint Weibull fit returned invalid parameters",
                       diagnostics={"shape": float(shape), "loc": float(loc),
                                    "scale": float(scale)})
    return ReversedWeibull(sigma=float(scale), alpha=float(shape),
                           endpoint=float(loc))


def fit_weibull_rows(w: np.ndarray, max_iter: int = WEIBULL_MAX_ITER,
                     tol: float = WEIBULL_TOL):
    """Profile-likelihood Weibull MLE applied to each row of ``w``.

    Every row is an independent positive sample. Returns (sigma, alpha,
    converged, iterations) arrays. This is the single solver behind all
    endpoint-fixed fits in the package; per-row vectorization exists because
    some callers fit thousands of equally-sized samples at once.

    For a fixed alpha the scale has the closed form
    sigma = mean(w^alpha)^(1/alpha); substituting it into the log-likelihood
    leaves a one-dimensional score equation in alpha,

        S1(a)/S0(a) - 1/a - mean(log w) = 0,
        S0 = sum w^a,  S1 = sum w^a log w,

    solved by Newton steps with halving whenever a step would leave (0, inf).
    """
    w = np.asarray(w, dtype=float)
    if w.ndim != 2:
        raise UsageError("w must be a 2-d array, one sample per row")
    if np.any(w <= 0):
        raise UsageError("all sample values must be positive")
    m, _ = w.shape
    w = np.maximum(w, WEIBULL_FLOOR)
    # Scale invariance: normalize by the row maximum so w^alpha cannot
    # overflow; sigma is rescaled at the end.
    wmax = w.max(axis=1, keepdims=True)
    wn = w / wmax
    logw = np.log(wn)
    mean_log = logw.mean(axis=1)
    sd_log = logw.std(axis=1)

    degenerate = sd_log == 0.0
    # Moment-based starting value; pi/sqrt(6) is the standard deviation of
    # the Gumbel that log w follows under the Weibull model.
    alpha = np.where(degenerate, 1.0, (math.pi / math.sqrt(6.0)) / np.where(sd_log > 0, sd_log, 1.0))
    converged = np.zeros(m, dtype=bool)
    iterations = np.zeros(m, dtype=int)

    active = ~degenerate
    for it in range(max_iter):
        if not active.any():
            break
        a = alpha[active]
        wa = np.power(wn[active], a[:, None])
        s0 = wa.sum(axis=1)
        s1 = (wa * logw[active]).sum(axis=1)
        s2 = (wa * logw[active] ** 2).sum(axis=1)
        r1 = s1 / s0
        f = r1 - 1.0 / a - mean_log[active]
        fp = (s2 / s0 - r1 ** 2) + 1.0 / a ** 2
        step = f / fp
        new = a - step
        # Halve any step that would leave the positive half-line.
        bad = new <= 0
        while bad.any():
            step[bad] *= 0.5
            new = a - step
            bad = new <= 0
        done = np.abs(new - a) < tol
        idx = np.flatnonzero(active)
        alpha[idx] = new
        iterations[idx] += 1
        converged[idx[done]] = True
        active[idx[done]] = False

    sigma_n = np.power(np.power(wn, alpha[:, None]).mean(axis=1), 1.0 / alpha)
    sigma = sigma_n * wmax[:, 0]
    converged &= np.isfinite(alpha) & np.isfinite(sigma) & (alpha > 0) & (sigma > 0)
    return sigma, alpha, converged, iterations
