"""Hot numeric kernels with two interchangeable backends.

The default backend is pure numpy (per-class BLAS calls); the same kernels
exist as numba ``@njit`` loops for environments where that wins (see
``benchmarks/bench_kernels.py`` - on BLAS-backed numpy builds the matmul
-shaped kernels favor numpy, the fused elementwise ones favor numba).
Selection:

* env var ``LADA_KERNELS`` = ``numpy`` (default) | ``numba`` | ``auto``
  (numba when importable, else numpy)
* ``set_backend(name)`` at runtime (used by tests and the benchmark)

Either backend is deterministic call-to-call, and both compute every class
column independently, so logits of a class are bit-identical no matter how
many classes are appended later.  All inputs are float64 C-contiguous
arrays; ``offsets`` is the int64 prefix array of memory-row counts per class
(``offsets[c]:offsets[c+1]`` are class ``c``'s rows).
"""

from __future__ import annotations

import os

import numpy as np

from .errors import ParameterError

_ENV_VAR = "LADA_KERNELS"


# ---------------------------------------------------------------------------
# numpy backend
# ---------------------------------------------------------------------------

def _lada_forward_np(x, rows, offsets, beta):
    b_n = x.shape[0]
    m = offsets.shape[0] - 1
    logits = np.empty((b_n, m), dtype=np.float64)
    exps = np.empty((b_n, rows.shape[0]), dtype=np.float64)
    for c in range(m):
        lo, hi = offsets[c], offsets[c + 1]
        e = np.exp(-beta * (1.0 - x @ rows[lo:hi].T))
        exps[:, lo:hi] = e
        logits[:, c] = e.sum(axis=1)
    return logits, exps


def _lada_backward_np(x, exps, g, offsets, beta):
    rows_grad = np.empty((exps.shape[1], x.shape[1]), dtype=np.float64)
    m = offsets.shape[0] - 1
    for c in range(m):
        lo, hi = offsets[c], offsets[c + 1]
        rows_grad[lo:hi] = beta * ((exps[:, lo:hi] * g[:, c : c + 1]).T @ x)
    return rows_grad


def _text_forward_np(x, t, scale):
    logits = np.empty((x.shape[0], t.shape[0]), dtype=np.float64)
    for c in range(t.shape[0]):
        logits[:, c] = scale * (x @ t[c])
    return logits


def _text_backward_np(x, g, scale):
    grad = np.empty((g.shape[1], x.shape[1]), dtype=np.float64)
    for c in range(g.shape[1]):
        grad[c] = scale * (g[:, c] @ x)
    return grad


def _kmeans_assign_np(x, centers):
    d2 = (
        (x * x).sum(axis=1)[:, None]
        - 2.0 * (x @ centers.T)
        + (centers * centers).sum(axis=1)[None, :]
    )
    labels = np.argmin(d2, axis=1)
    best = d2[np.arange(x.shape[0]), labels]
    # The expansion above can go slightly negative for coincident points.
    return labels.astype(np.int64), np.maximum(best, 0.0)


def _gmm_log_prob_np(x, means, variances):
    n, d = x.shape
    k = means.shape[0]
    out = np.empty((n, k), dtype=np.float64)
    for j in range(k):
        diff = x - means[j]
        sq = (diff * diff).sum(axis=1)
        out[:, j] = -0.5 * (d * np.log(2.0 * np.pi * variances[j]) + sq / variances[j])
    return out


_NUMPY_IMPLS = {
    "lada_forward": _lada_forward_np,
    "lada_backward": _lada_backward_np,
    "text_forward": _text_forward_np,
    "text_backward": _text_backward_np,
    "kmeans_assign": _kmeans_assign_np,
    "gmm_log_prob": _gmm_log_prob_np,
}


# ---------------------------------------------------------------------------
# numba backend
# ---------------------------------------------------------------------------

def _build_numba_impls():
    from numba import njit

    @njit(cache=True, fastmath=True)
    def lada_forward(x, rows, offsets, beta):
        b_n, d = x.shape
        m = offsets.shape[0] - 1
        logits = np.empty((b_n, m), dtype=np.float64)
        exps = np.empty((b_n, rows.shape[0]), dtype=np.float64)
        for b in range(b_n):
            for c in range(m):
                acc = 0.0
                for r in range(offsets[c], offsets[c + 1]):
                    s = 0.0
                    for k in range(d):
                        s += rows[r, k] * x[b, k]
                    e = np.exp(-beta * (1.0 - s))
                    exps[b, r] = e
                    acc += e
                logits[b, c] = acc
        return logits, exps

    @njit(cache=True, fastmath=True)
    def lada_backward(x, exps, g, offsets, beta):
        b_n, d = x.shape
        m = offsets.shape[0] - 1
        rows_grad = np.zeros((exps.shape[1], d), dtype=np.float64)
        for c in range(m):
            for r in range(offsets[c], offsets[c + 1]):
                for b in range(b_n):
                    w = beta * g[b, c] * exps[b, r]
                    for k in range(d):
                        rows_grad[r, k] += w * x[b, k]
        return rows_grad

    @njit(cache=True, fastmath=True)
    def text_forward(x, t, scale):
        b_n, d = x.shape
        m = t.shape[0]
        logits = np.empty((b_n, m), dtype=np.float64)
        for c in range(m):
            for b in range(b_n):
                s = 0.0
                for k in range(d):
                    s += x[b, k] * t[c, k]
                logits[b, c] = scale * s
        return logits

    @njit(cache=True, fastmath=True)
    def text_backward(x, g, scale):
        b_n, d = x.shape
        m = g.shape[1]
        grad = np.zeros((m, d), dtype=np.float64)
        for c in range(m):
            for b in range(b_n):
                w = scale * g[b, c]
                for k in range(d):
                    grad[c, k] += w * x[b, k]
        return grad

    @njit(cache=True, fastmath=True)
    def kmeans_assign(x, centers):
        n, d = x.shape
        k = centers.shape[0]
        labels = np.empty(n, dtype=np.int64)
        dists = np.empty(n, dtype=np.float64)
        for i in range(n):
            best = 0
            best_d = np.inf
            for c in range(k):
                acc = 0.0
                for j in range(d):
                    t = x[i, j] - centers[c, j]
                    acc += t * t
                if acc < best_d:
                    best_d = acc
                    best = c
            labels[i] = best
            dists[i] = best_d
        return labels, dists

    @njit(cache=True, fastmath=True)
    def gmm_log_prob(x, means, variances):
        n, d = x.shape
        k = means.shape[0]
        out = np.empty((n, k), dtype=np.float64)
        for j in range(k):
            c = -0.5 * d * np.log(2.0 * np.pi * variances[j])
            inv = 0.5 / variances[j]
            for i in range(n):
                sq = 0.0
                for t in range(d):
                    diff = x[i, t] - means[j, t]
                    sq += diff * diff
                out[i, j] = c - sq * inv
        return out

    return {
        "lada_forward": lada_forward,
        "lada_backward": lada_backward,
        "text_forward": text_forward,
        "text_backward": text_backward,
        "kmeans_assign": kmeans_assign,
        "gmm_log_prob": gmm_log_prob,
    }


_numba_impls = None
_numba_error = None


def _numba_available():
    global _numba_impls, _numba_error
    if _numba_impls is None and _numba_error is None:
        try:
            _numba_impls = _build_numba_impls()
        except ImportError as exc:  # pragma: no cover - depends on environment
            _numba_error = exc
    return _numba_impls is not None


def available_backends():
    names = ["numpy"]
    if _numba_available():
        names.append("numba")
    return names


def backend_impls(name):
    """Return the raw kernel table for one backend (used by the benchmark)."""
    if name == "numpy":
        return _NUMPY_IMPLS
    if name == "numba":
        if not _numba_available():
            raise ParameterError(f"numba backend unavailable: {_numba_error}")
        return _numba_impls
    raise ParameterError(f"unknown kernel backend {name!r}")


_active_name = None
_active = None


def set_backend(name):
    global _active_name, _active
    if name == "auto":
        name = "numba" if _numba_available() else "numpy"
    _active = backend_impls(name)
    _active_name = name


def get_backend():
    return _active_name


set_backend(os.environ.get(_ENV_VAR, "numpy"))


# ---------------------------------------------------------------------------
# dispatching wrappers (the API used by the rest of the package)
# ---------------------------------------------------------------------------

def _f64(a):
    return np.ascontiguousarray(a, dtype=np.float64)


def lada_forward(x, rows, offsets, beta):
    """Per-class memory activations.

    Returns ``(logits, exps)`` where ``logits[b, c] = sum_r exp(-beta * (1 -
    <rows[r], x[b]>))`` over class ``c``'s rows and ``exps`` caches the
    individual exponential terms for the backward pass.
    """
    return _active["lada_forward"](
        _f64(x), _f64(rows), np.ascontiguousarray(offsets, dtype=np.int64), float(beta)
    )


def lada_backward(x, exps, g, offsets, beta):
    """Gradient of the memory activations w.r.t. every memory row."""
    return _active["lada_backward"](
        _f64(x), _f64(exps), _f64(g), np.ascontiguousarray(offsets, dtype=np.int64), float(beta)
    )


def text_forward(x, t, scale):
    """Scaled inner-product logits, one column per text vector."""
    return _active["text_forward"](_f64(x), _f64(t), float(scale))


def text_backward(x, g, scale):
    """Gradient of the scaled inner-product logits w.r.t. the text vectors."""
    return _active["text_backward"](_f64(x), _f64(g), float(scale))


def kmeans_assign(x, centers):
    """Nearest-center labels and squared distances."""
    return _active["kmeans_assign"](_f64(x), _f64(centers))


def gmm_log_prob(x, means, variances):
    """Log density of spherical Gaussians, one column per component."""
    return _active["gmm_log_prob"](_f64(x), _f64(means), _f64(variances))
