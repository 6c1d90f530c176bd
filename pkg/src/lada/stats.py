"""Deterministic clustering primitives: Lloyd k-means and spherical-GMM EM.

Both are seeded, run in float64 and are pure functions of their inputs, so
callers may fit different classes concurrently without affecting results.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .errors import ConvergenceError, EmptyInputError, ParameterError

VAR_FLOOR = 1e-6


def _seed_rng(seed):
    """Accept an int, a sequence of ints, or a prepared SeedSequence."""
    if isinstance(seed, np.random.SeedSequence):
        return np.random.default_rng(seed)
    return np.random.default_rng(np.random.SeedSequence(seed))


@dataclass
class KMeansResult:
    centers: np.ndarray          # (k, d)
    assignment: np.ndarray       # (n,) int64
    inertia: float
    iterations: int
    inertia_trace: list = field(default_factory=list)


@dataclass
class GmmComponent:
    weight: float
    mean: np.ndarray
    variance: float


@dataclass
class GmmModel:
    weights: np.ndarray          # (k,)
    means: np.ndarray            # (k, d)
    variances: np.ndarray        # (k,) spherical sigma^2
    log_likelihood_trace: list = field(default_factory=list)

    @property
    def components(self):
        return [
            GmmComponent(float(self.weights[j]), self.means[j], float(self.variances[j]))
            for j in range(len(self.weights))
        ]


def _plus_plus_seeding(x, k, rng):
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]), dtype=np.float64)
    first = int(rng.integers(n))
    centers[0] = x[first]
    d2 = ((x - centers[0]) ** 2).sum(axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            # Remaining points coincide with chosen centers (duplicates); take
            # the first unused distinct point, or point 0 if none exists, so
            # seeding stays deterministic.
            chosen = {centers[i].tobytes() for i in range(j)}
            idx = next((i for i in range(n) if x[i].tobytes() not in chosen), 0)
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers[j] = x[idx]
        d2 = np.minimum(d2, ((x - centers[j]) ** 2).sum(axis=1))
    return centers


def _centers_from_labels(x, labels, k, old_centers):
    counts = np.bincount(labels, minlength=k).astype(np.float64)
    sums = np.zeros((k, x.shape[1]), dtype=np.float64)
    np.add.at(sums, labels, x)
    centers = old_centers.copy()
    nonempty = counts > 0
    centers[nonempty] = sums[nonempty] / counts[nonempty, None]
    return centers, np.nonzero(~nonempty)[0]


def kmeans(points, k, seed, max_iter=100, tol=1e-12) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding.

    Stops when the assignment is a fixed point, the inertia improvement drops
    below ``tol``, or ``max_iter`` is reached.  Empty clusters are repaired by
    re-seeding them at the point currently farthest from its center.  The
    returned centers are exact means of the returned assignment.
    """
    x = np.ascontiguousarray(points, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise EmptyInputError("kmeans needs a non-empty (n, d) point matrix")
    n = x.shape[0]
    if not 1 <= k <= n:
        raise ParameterError(f"k={k} must be in [1, {n}] for {n} points")

    rng = _seed_rng(seed)
    centers = _plus_plus_seeding(x, k, rng)
    labels, d2 = _kernels.kmeans_assign(x, centers)
    inertia = float(d2.sum())
    trace = [inertia]
    iterations = 0
    for _ in range(max_iter):
        iterations += 1
        centers, empty = _centers_from_labels(x, labels, k, centers)
        for e in empty:
            far = int(np.argmax(d2))
            centers[e] = x[far]
            d2[far] = 0.0
        new_labels, d2 = _kernels.kmeans_assign(x, centers)
        new_inertia = float(d2.sum())
        trace.append(new_inertia)
        converged = bool(np.array_equal(new_labels, labels)) and not len(empty)
        improvement = inertia - new_inertia
        labels, inertia = new_labels, new_inertia
        if converged or improvement < tol:
            break

    # Make the centers-are-means invariant exact for the final assignment.
    centers, empty = _centers_from_labels(x, labels, k, centers)
    if len(empty):
        # Repair once more and re-assign; guaranteed non-empty because k <= n.
        _, d2 = _kernels.kmeans_assign(x, centers)
        for e in empty:
            far = int(np.argmax(d2))
            centers[e] = x[far]
            d2[far] = 0.0
        labels, d2 = _kernels.kmeans_assign(x, centers)
        centers, _ = _centers_from_labels(x, labels, k, centers)
    _, d2 = _kernels.kmeans_assign(x, centers)
    inertia = float(d2.sum())
    return KMeansResult(centers, labels, inertia, iterations, trace)


def _logsumexp_rows(a):
    amax = a.max(axis=1, keepdims=True)
    return amax + np.log(np.exp(a - amax).sum(axis=1, keepdims=True))


def gmm_fit_spherical(
    points, k, seed, max_iter=200, tol=1e-9, var_floor=VAR_FLOOR
) -> GmmModel:
    """EM for a mixture of spherical Gaussians (covariance sigma^2 * I).

    Means start from :func:`kmeans`; responsibilities are computed in
    log-space; variances are floored at ``var_floor``.  The log-likelihood
    trace is non-decreasing (the floor is a constrained M-step, so EM
    monotonicity is preserved).
    """
    x = np.ascontiguousarray(points, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise EmptyInputError("gmm_fit_spherical needs a non-empty (n, d) point matrix")
    n, d = x.shape
    if not 1 <= k <= n:
        raise ParameterError(f"k={k} must be in [1, {n}] for {n} points")

    km = kmeans(x, k, seed)
    means = km.centers.copy()
    counts = np.bincount(km.assignment, minlength=k).astype(np.float64)
    weights = counts / n
    variances = np.empty(k, dtype=np.float64)
    for j in range(k):
        mask = km.assignment == j
        if mask.any():
            variances[j] = ((x[mask] - means[j]) ** 2).sum() / (d * counts[j])
        else:
            variances[j] = 0.0
    variances = np.maximum(variances, var_floor)
    if np.any(variances <= 0.0):
        raise ConvergenceError(
            "zero spherical variance; duplicate points need a positive var_floor"
        )
    weights = np.maximum(weights, 1e-12)
    weights /= weights.sum()

    trace = []
    prev_ll = -np.inf
    for _ in range(max_iter):
        log_prob = _kernels.gmm_log_prob(x, means, variances) + np.log(weights)[None, :]
        lse = _logsumexp_rows(log_prob)
        ll = float(lse.sum())
        trace.append(ll)
        if not np.isfinite(ll):
            raise ConvergenceError("log-likelihood became non-finite")
        resp = np.exp(log_prob - lse)
        nk = resp.sum(axis=0)
        if np.any(nk <= 0.0) or not np.all(np.isfinite(nk)):
            raise ConvergenceError("degenerate responsibilities (empty component)")
        weights = nk / n
        means = (resp.T @ x) / nk[:, None]
        for j in range(k):
            diff = x - means[j]
            variances[j] = (resp[:, j] @ (diff * diff).sum(axis=1)) / (d * nk[j])
        variances = np.maximum(variances, var_floor)
        if ll - prev_ll < tol:
            break
        prev_ll = ll

    weights = weights / weights.sum()
    return GmmModel(weights, means, variances, trace)
