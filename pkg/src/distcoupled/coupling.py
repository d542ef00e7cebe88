"""Linear position recovery from pairwise differences of squared distances.

Squaring two anchor-distance readings and subtracting them cancels the
quadratic term in the unknown position, leaving one linear equation per
anchor pair.  Stacking every pair gives an overdetermined linear system
whose least-squares solution is the position estimate:

    diff_matrix @ x = coupled - offset        (one row per anchor pair)
    x = left_inverse @ (coupled - offset)

``build_components`` precomputes the stacked system for a fixed anchor
set; ``coupled_measurements`` turns a distance vector into the stacked
pairwise differences; ``recover_position`` applies the left inverse.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import as_anchors, make_pairs

# Rank test: smallest singular value below this fraction of the largest
# means the anchors span fewer than n directions (collinear/coplanar).
RANK_RTOL = 1e-10


class DegenerateAnchors(ValueError):
    """Anchor set does not span the space: position recovery is underdetermined."""


@dataclass(frozen=True)
class CouplingComponents:
    """Precomputed linear system for one anchor set.

    Attributes
    ----------
    anchors : (p, n) array, the set the system was built from.
    pairs : (q, 2) int array, canonical i<j pair ordering, q = p(p-1)/2.
    diff_matrix : (q, n) array; row for pair (i, j) is -2*(a_i - a_j).
    offset : (q,) array; entry for pair (i, j) is |a_i|^2 - |a_j|^2.
    left_inverse : (n, q) array, Moore-Penrose left inverse of diff_matrix.
    """

    anchors: np.ndarray
    pairs: np.ndarray
    diff_matrix: np.ndarray
    offset: np.ndarray
    left_inverse: np.ndarray

    @property
    def dim(self) -> int:
        return self.anchors.shape[1]

    @property
    def anchor_count(self) -> int:
        return self.anchors.shape[0]


def build_components(anchors) -> CouplingComponents:
    """Build the pairwise linear system for an anchor set.

    The anchors must contain n+1 positions not lying on a common
    hyperplane, otherwise the stacked matrix loses column rank and a
    ``DegenerateAnchors`` error is raised naming the deficiency.  The left
    inverse is computed through the SVD rather than the normal equations
    for conditioning; on well-conditioned sets the two agree to 1e-9.
    """
    anchors = as_anchors(anchors)
    p, n = anchors.shape
    pairs = make_pairs(p)
    diff_matrix = -2.0 * (anchors[pairs[:, 0]] - anchors[pairs[:, 1]])
    sq_norms = np.einsum("ij,ij->i", anchors, anchors)
    offset = sq_norms[pairs[:, 0]] - sq_norms[pairs[:, 1]]

    u, s, vt = np.linalg.svd(diff_matrix, full_matrices=False)
    s_max = s[0] if s.size else 0.0
    rank = int(np.sum(s > RANK_RTOL * s_max)) if s_max > 0 else 0
    if rank < n:
        raise DegenerateAnchors(
            f"anchor set spans only {rank} of {n} dimensions "
            f"(singular values {np.array2string(s, precision=3)}); "
            f"need n+1 = {n + 1} anchors not on a common hyperplane"
        )
    left_inverse = (vt.T / s) @ u.T
    return CouplingComponents(
        anchors=anchors,
        pairs=pairs,
        diff_matrix=diff_matrix,
        offset=offset,
        left_inverse=left_inverse,
    )


def coupled_measurements(d, pairs) -> np.ndarray:
    """Stack the pairwise differences of squared distance readings.

    ``d`` is a length-p distance vector aligned with the anchor ordering;
    the result has one entry per pair (i, j): ``d[i]**2 - d[j]**2``, in
    canonical pair order.  Negative readings (possible under noise) are
    squared like any other.
    """
    d = np.asarray(d, dtype=float)
    pairs = np.asarray(pairs)
    d2 = d * d
    return d2[pairs[:, 0]] - d2[pairs[:, 1]]


def recover_position(components: CouplingComponents, coupled) -> np.ndarray:
    """Least-squares position from stacked pairwise measurements.

    With noiseless measurements taken at ``x`` against the same anchors
    the components were built from, this returns ``x`` up to numerical
    tolerance.  If the measured anchors are the built ones moved by a
    rigid transform (R, r), the result is the anchor-frame coordinate
    ``R.T @ (x - r)`` instead.
    """
    coupled = np.asarray(coupled, dtype=float)
    return components.left_inverse @ (coupled - components.offset)
