"""Formation control where every agent ranges off every other agent.

The desired shape is given as an anchor set; the same coupling components
built from it are reused by all m = p agents, each treating the others as
its anchors.  Because inter-agent distances are invariant under rigid
motions of the whole group, the controller cannot (and does not try to)
pin the formation in space: every configuration congruent to the desired
one is an equilibrium, and the error metric measures shape mismatch after
optimally superposing the current configuration onto the desired one.

Agent configurations are (n, m) arrays, one agent per column, matching
the stacked state convention of the integrator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .core import NoiseSpec, as_anchors
from .coupling import CouplingComponents, build_components

COINCIDENT_TOL = 1e-12


class DegenerateConfiguration(ValueError):
    """Point sets too collapsed to determine an alignment (all coincident)."""


@dataclass(frozen=True)
class Alignment:
    """Optimal superposition result: proper rotation plus translation."""

    rotation: np.ndarray
    translation: np.ndarray


def as_ensemble(X, dim: int | None = None, count: int | None = None) -> np.ndarray:
    """Validate an (n, m) agent configuration, one agent per column."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError(f"expected an (n, m) configuration, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise ValueError("agent coordinates must be finite")
    if dim is not None and X.shape[0] != dim:
        raise ValueError(f"dimension mismatch: expected {dim}, got {X.shape[0]}")
    if count is not None and X.shape[1] != count:
        raise ValueError(f"agent count mismatch: expected {count}, got {X.shape[1]}")
    return X


@dataclass(frozen=True)
class FormationPolicy:
    """Shared controller state for a group of m = p agents.

    ``desired`` stacks the target positions column-wise, (n, m); the
    coupling components are built from the same points.  ``offset_matrix``
    repeats the pairwise offset vector for every agent (it is identical
    for all of them, since it only depends on the target shape).
    """

    components: CouplingComponents
    gain: np.ndarray
    desired: np.ndarray
    offset_matrix: np.ndarray

    @property
    def dim(self) -> int:
        return self.desired.shape[0]

    @property
    def agent_count(self) -> int:
        return self.desired.shape[1]

    @classmethod
    def build(cls, formation, alpha: float = -5.0, gain: np.ndarray | None = None) -> "FormationPolicy":
        """Build from the desired formation given as a (p, n) anchor-style
        array (one target position per row)."""
        formation = as_anchors(formation)
        components = build_components(formation)
        desired = formation.T.copy()
        if gain is None:
            gain = alpha * np.eye(components.dim)
        gain = np.asarray(gain, dtype=float)
        q = components.pairs.shape[0]
        offset_matrix = np.broadcast_to(
            components.offset[:, None], (q, desired.shape[1])
        ).copy()
        return cls(components=components, gain=gain, desired=desired, offset_matrix=offset_matrix)


def _squared_distance_matrix(X: np.ndarray) -> np.ndarray:
    """All pairwise squared distances between columns, (m, m)."""
    diff = X[:, :, None] - X[:, None, :]
    return np.einsum("nij,nij->ij", diff, diff)


def agent_coupled_measurements(
    X,
    k: int,
    pairs,
    noise: NoiseSpec | None = None,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Pairwise squared-distance differences measured by agent ``k``
    against all agents (itself included; its self-distance is exactly 0).

    Measurement noise, when enabled, perturbs each reading to another
    agent independently; the self-reading stays 0.
    """
    X = as_ensemble(X)
    m = X.shape[1]
    if not 0 <= k < m:
        raise IndexError(f"agent index {k} out of range for {m} agents")
    pairs = np.asarray(pairs)
    d = np.linalg.norm(X - X[:, [k]], axis=0)
    if noise is not None and noise.epsilon > 0.0:
        if rng is None:
            rng = noise.stream()
        omega = rng.uniform(-noise.epsilon, noise.epsilon, size=m)
        omega[k] = 0.0
        d = d + omega
    d2 = d * d
    return d2[pairs[:, 0]] - d2[pairs[:, 1]]


def measurement_matrix(
    X,
    pairs,
    noise: NoiseSpec | None = None,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Stack every agent's coupled measurements column-wise, (q, m).

    Column k is what agent k measures; rigid motions of the whole group
    leave the matrix unchanged because inter-agent distances do.
    """
    X = as_ensemble(X)
    pairs = np.asarray(pairs)
    if noise is not None and noise.epsilon > 0.0:
        if rng is None:
            rng = noise.stream()
        cols = [
            agent_coupled_measurements(X, k, pairs, noise, rng)
            for k in range(X.shape[1])
        ]
        return np.column_stack(cols)
    d2 = _squared_distance_matrix(X)
    return d2[pairs[:, 0], :] - d2[pairs[:, 1], :]


def formation_control(
    X,
    policy: FormationPolicy,
    noise: NoiseSpec | None = None,
    rng: np.random.Generator | None = None,
) -> np.ndarray:
    """Control matrix (n, m); column k drives agent k.

    Vanishes exactly on every configuration congruent to the desired one.
    """
    X = as_ensemble(X, dim=policy.dim, count=policy.agent_count)
    H = measurement_matrix(X, policy.components.pairs, noise, rng)
    estimate = policy.components.left_inverse @ (H - policy.offset_matrix)
    return policy.gain @ (estimate - policy.desired)


def kabsch_align(X, Y) -> Alignment:
    """Best proper rigid motion taking configuration ``X`` onto ``Y``.

    Minimizes the summed squared residual ``sum_k |R x_k + t - y_k|^2``
    over rotations with det = +1; computed from the SVD of the centered
    cross-covariance with a determinant sign correction, so reflection
    inputs still yield a proper rotation (with nonzero residual).
    """
    X = as_ensemble(X)
    Y = as_ensemble(Y, dim=X.shape[0], count=X.shape[1])
    x_mean = X.mean(axis=1)
    y_mean = Y.mean(axis=1)
    Xc = X - x_mean[:, None]
    Yc = Y - y_mean[:, None]
    cov = Xc @ Yc.T
    scale = max(np.abs(Xc).max(initial=0.0), np.abs(Yc).max(initial=0.0))
    u, s, vt = np.linalg.svd(cov)
    if s.size == 0 or s[0] <= COINCIDENT_TOL * max(1.0, scale * scale):
        raise DegenerateConfiguration(
            "point sets are fully coincident; rotation is underdetermined"
        )
    v = vt.T
    d = np.sign(np.linalg.det(v @ u.T))
    signs = np.ones(X.shape[0])
    signs[-1] = d
    rotation = (v * signs) @ u.T
    translation = y_mean - rotation @ x_mean
    return Alignment(rotation=rotation, translation=translation)


def formation_error(X, desired, reverse_alignment: bool = False) -> float:
    """Shape mismatch between ``X`` and the desired configuration: the sum
    over agents of residual norms after the best rigid superposition of
    ``X`` onto ``desired``.  Zero exactly when the two are congruent.

    ``reverse_alignment=True`` instead superposes the desired shape onto
    the current one and measures the same residuals; the two readings
    agree when the optimal alignment is exact but can differ transiently.
    """
    X = as_ensemble(X)
    desired = as_ensemble(desired, dim=X.shape[0], count=X.shape[1])
    if reverse_alignment:
        align = kabsch_align(desired, X)
        residual = X - (align.rotation @ desired + align.translation[:, None])
    else:
        align = kabsch_align(X, desired)
        residual = (align.rotation @ X + align.translation[:, None]) - desired
    return float(np.linalg.norm(residual, axis=0).sum())
