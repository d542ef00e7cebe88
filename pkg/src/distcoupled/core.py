"""Geometric primitives: anchor sets, pair indexing, and distance measurement.

Conventions used across the package:

* a point or velocity is a 1-D float array of length ``n`` (``n >= 2``),
* an anchor set is a 2-D float array of shape ``(p, n)``, one anchor per
  row, whose ordering is fixed at construction and referenced by index
  everywhere else,
* a distance set is a 1-D float array of length ``p`` aligned with the
  anchor ordering.

All values are immutable by convention once built and safe to share across
concurrent workers; random streams are derived per trial and never shared.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


def as_vector(x, dim: int | None = None) -> np.ndarray:
    """Validate and convert ``x`` to a 1-D float position/velocity array.

    Raises ValueError when the result has fewer than 2 entries, is not
    1-D, contains non-finite values, or does not match ``dim``.
    """
    v = np.asarray(x, dtype=float)
    if v.ndim != 1:
        raise ValueError(f"expected a 1-D coordinate array, got shape {v.shape}")
    if v.size < 2:
        raise ValueError(f"coordinates need at least 2 entries, got {v.size}")
    if not np.all(np.isfinite(v)):
        raise ValueError("coordinates must be finite")
    if dim is not None and v.size != dim:
        raise ValueError(f"dimension mismatch: expected {dim}, got {v.size}")
    return v


def as_anchors(anchors, dim: int | None = None) -> np.ndarray:
    """Validate and convert to a ``(p, n)`` float anchor array, one row per anchor."""
    a = np.asarray(anchors, dtype=float)
    if a.ndim != 2:
        raise ValueError(f"expected a (p, n) anchor array, got shape {a.shape}")
    if a.shape[1] < 2:
        raise ValueError(f"anchors need at least 2 coordinates, got {a.shape[1]}")
    if not np.all(np.isfinite(a)):
        raise ValueError("anchor coordinates must be finite")
    if dim is not None and a.shape[1] != dim:
        raise ValueError(f"dimension mismatch: expected {dim}, got {a.shape[1]}")
    return a


@dataclass(frozen=True)
class NoiseSpec:
    """Uniform measurement noise: each reading gets an independent sample
    from ``[-epsilon, epsilon]``.

    ``epsilon = 0`` reproduces noiseless measurements bit-exactly.  The
    seed makes replay deterministic: the same spec and call sequence yield
    the same samples.
    """

    epsilon: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError(f"noise half-width must be >= 0, got {self.epsilon}")
        if self.seed < 0:
            raise ValueError(f"seed must be a nonnegative integer, got {self.seed}")

    def stream(self, *key: int) -> np.random.Generator:
        """Return an independent generator for the given (trial) key.

        Streams derived from distinct keys are statistically independent,
        so trials can run in any order or in parallel without affecting
        each other's draws.
        """
        return np.random.default_rng((self.seed,) + tuple(int(k) for k in key))


def distance(x, a) -> float:
    """Euclidean distance between two points of equal dimension."""
    x = as_vector(x)
    a = as_vector(a, dim=x.size)
    return float(np.linalg.norm(x - a))


def measure_all(
    x,
    anchors,
    noise: NoiseSpec | None = None,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Measure the distances from ``x`` to every anchor, in anchor order.

    With ``noise.epsilon > 0`` each reading is perturbed by an independent
    uniform sample in ``[-epsilon, epsilon]``; a reading near an anchor may
    then come out negative, which is deliberate (downstream consumers square
    the values, and clamping would bias the recovery).

    When ``rng`` is omitted a fresh stream is derived from ``noise.seed``,
    so repeated calls with identical arguments return identical values.
    Pass a persistent generator to draw fresh noise across the steps of a
    trajectory.
    """
    x = as_vector(x)
    anchors = as_anchors(anchors, dim=x.size)
    exact = np.linalg.norm(anchors - x, axis=1)
    if noise is None or noise.epsilon == 0.0:
        return exact
    if rng is None:
        rng = noise.stream()
    return exact + rng.uniform(-noise.epsilon, noise.epsilon, size=exact.size)


def make_pairs(p: int) -> np.ndarray:
    """All index pairs ``(i, j)`` with ``i < j`` over ``p`` anchors.

    Returns an ``(p*(p-1)/2, 2)`` integer array in lexicographic order;
    row order is the canonical ordering used for every stacked pairwise
    quantity in this package.  Indices are 0-based.
    """
    if p < 2:
        raise ValueError(f"need at least 2 anchors to form pairs, got {p}")
    i, j = np.triu_indices(p, k=1)
    return np.column_stack([i, j]).astype(np.intp)
