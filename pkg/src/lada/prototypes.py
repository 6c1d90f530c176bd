"""Distilled class prototypes: spherical GMMs plus noise-augmented replay.

After a task completes, each of its classes is distilled into at most
``lambda2`` spherical Gaussian components ``{pi, p, sigma^2}``.  Replay draws
either the raw means (``plain`` mode, ``1/k`` weights) or noise-augmented
prototypes ``p + e * sqrt(sigma^2)`` with mixture weights (``augmented``
mode).  For a spherical covariance ``Tr(Sigma)/d`` is exactly ``sigma^2``, so
the stored variance is the augmentation scale squared.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyInputError, ParameterError
from .stats import VAR_FLOOR, gmm_fit_spherical

REPLAY_AUGMENTED = "augmented"
REPLAY_PLAIN = "plain"


@dataclass
class ClassPrototypes:
    task_id: int
    class_id: int
    weights: np.ndarray      # (k,) mixture weights, sum to 1
    means: np.ndarray        # (k, d)
    variances: np.ndarray    # (k,) spherical sigma^2, floored

    @property
    def components(self):
        return [
            {"pi": float(self.weights[l]), "p": self.means[l], "var": float(self.variances[l])}
            for l in range(len(self.weights))
        ]


@dataclass
class PrototypeSet:
    lambda2: int
    by_class: dict = field(default_factory=dict)   # class_id -> ClassPrototypes, insertion = learning order

    def __len__(self):
        return len(self.by_class)

    def class_ids(self):
        return list(self.by_class.keys())

    def add(self, proto: ClassPrototypes) -> "PrototypeSet":
        if proto.class_id in self.by_class:
            raise ParameterError(f"class {proto.class_id} already distilled")
        merged = dict(self.by_class)
        merged[proto.class_id] = proto
        return PrototypeSet(lambda2=self.lambda2, by_class=merged)


def distill_class(features, task_id, class_id, lambda2, seed, var_floor=VAR_FLOOR) -> ClassPrototypes:
    """Fit ``min(lambda2, n)`` spherical Gaussian components to one class."""
    x = np.ascontiguousarray(features, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] == 0:
        raise EmptyInputError(f"class {class_id}: no features to distill")
    if lambda2 < 1:
        raise ParameterError("lambda2 must be >= 1")
    k = min(lambda2, x.shape[0])
    model = gmm_fit_spherical(x, k, seed, var_floor=var_floor)
    return ClassPrototypes(
        task_id=task_id,
        class_id=class_id,
        weights=model.weights,
        means=model.means,
        variances=model.variances,
    )


def augment(proto: ClassPrototypes, component, rng) -> np.ndarray:
    """One noisy draw ``p + e * sqrt(var)`` from the chosen component."""
    p = proto.means[component]
    scale = np.sqrt(proto.variances[component])
    return p + rng.standard_normal(p.shape[0]) * scale


def replay_batch(proto_set: PrototypeSet, rng, mode=REPLAY_AUGMENTED):
    """One entry per (learned class, component): ``(vector, class_id, weight)``.

    ``augmented`` draws fresh noise on every call and uses mixture weights;
    ``plain`` returns the raw means with uniform ``1/k`` weights.  Either way
    the weights of one class sum to 1.
    """
    if len(proto_set) == 0:
        raise EmptyInputError("prototype set is empty")
    if mode not in (REPLAY_AUGMENTED, REPLAY_PLAIN):
        raise ParameterError(f"unknown replay mode {mode!r}")
    out = []
    for cid, proto in proto_set.by_class.items():
        k = len(proto.weights)
        for l in range(k):
            if mode == REPLAY_AUGMENTED:
                out.append((augment(proto, l, rng), cid, float(proto.weights[l])))
            else:
                out.append((proto.means[l].copy(), cid, 1.0 / k))
    return out
