"""Homing controller driven purely by anchor-distance measurements.

The controller recovers the agent position from coupled measurements and
applies linear state feedback toward a goal.  With noiseless measurements
and anchors at their build positions it coincides exactly with the ideal
full-state controller, so the closed loop inherits its global
exponential stability whenever the gain is stable.

When the physical anchors have been moved by a rigid transform (R, r)
without rebuilding the components, the recovered position lands in the
original build frame and the closed loop behaves like ``R.T @ gain``
feedback toward the shifted equilibrium ``R @ goal + r``.  In 2-D that
loop is stable exactly when cos(theta) > 0.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import as_anchors, as_vector
from .coupling import CouplingComponents, build_components, coupled_measurements, recover_position

ORTHOGONALITY_TOL = 1e-12


@dataclass(frozen=True)
class RigidTransform:
    """A proper rotation plus translation.

    ``rotation`` must be orthogonal to 1e-12 with determinant +1.
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=float)
        tr = as_vector(self.translation, dim=rot.shape[0])
        if rot.ndim != 2 or rot.shape[0] != rot.shape[1]:
            raise ValueError(f"rotation must be square, got shape {rot.shape}")
        if not np.allclose(rot.T @ rot, np.eye(rot.shape[0]), atol=ORTHOGONALITY_TOL):
            raise ValueError("rotation matrix is not orthogonal")
        if np.linalg.det(rot) < 0:
            raise ValueError("rotation matrix is a reflection (det = -1)")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", tr)

    @property
    def dim(self) -> int:
        return self.rotation.shape[0]

    def apply(self, points: np.ndarray) -> np.ndarray:
        """Apply to a single point (1-D) or to rows of a (p, n) array."""
        points = np.asarray(points, dtype=float)
        return points @ self.rotation.T + self.translation

    @classmethod
    def identity(cls, n: int) -> "RigidTransform":
        return cls(rotation=np.eye(n), translation=np.zeros(n))


def rotation2d(theta: float, translation=None) -> RigidTransform:
    """Planar rotation by ``theta`` radians (zero translation by default)."""
    c, s = np.cos(theta), np.sin(theta)
    rot = np.array([[c, -s], [s, c]])
    if translation is None:
        translation = np.zeros(2)
    return RigidTransform(rotation=rot, translation=translation)


def transform_anchors(anchors, transform: RigidTransform) -> np.ndarray:
    """Map every anchor through ``R @ a + r``, preserving order."""
    anchors = as_anchors(anchors, dim=transform.dim)
    return transform.apply(anchors)


def predicted_equilibrium(transform: RigidTransform, goal) -> np.ndarray:
    """Equilibrium of the closed loop when the anchors were moved by
    ``transform`` but the components were not rebuilt: ``R @ goal + r``."""
    goal = as_vector(goal, dim=transform.dim)
    return transform.rotation @ goal + transform.translation


def rotation_is_stable(theta: float) -> bool:
    """Whether a planar anchor rotation by ``theta`` keeps the homing loop
    stable: true iff cos(theta) > 0, i.e. theta lies strictly inside
    (2*pi*k - pi/2, 2*pi*k + pi/2) for some integer k."""
    return bool(np.cos(theta) > 0.0)


def loop_is_stable(rotation, gain) -> bool:
    """General-dimension stability test for the transformed closed loop
    ``xdot = R.T @ C @ (x - eq)``: the symmetric part of ``R.T @ C`` must be
    negative definite."""
    rotation = np.asarray(rotation, dtype=float)
    gain = np.asarray(gain, dtype=float)
    loop = rotation.T @ gain
    sym = 0.5 * (loop + loop.T)
    return bool(np.linalg.eigvalsh(sym).max() < 0.0)


def _gain_is_stable(gain: np.ndarray) -> bool:
    sym = 0.5 * (gain + gain.T)
    return bool(np.linalg.eigvalsh(sym).max() < 0.0)


@dataclass(frozen=True)
class HomingPolicy:
    """Everything needed to turn a distance vector into a control action:
    precomputed coupling components, the feedback gain, and the goal.

    The constructor rejects gains whose symmetric part is not negative
    definite (for ``alpha * I`` this means ``alpha >= 0``) unless
    ``allow_unstable=True``; divergence experiments deliberately run an
    unstable loop through that flag.
    """

    components: CouplingComponents
    gain: np.ndarray
    goal: np.ndarray
    allow_unstable: bool = False

    def __post_init__(self):
        gain = np.asarray(self.gain, dtype=float)
        goal = as_vector(self.goal, dim=self.components.dim)
        if gain.shape != (goal.size, goal.size):
            raise ValueError(
                f"gain must be {goal.size}x{goal.size}, got shape {gain.shape}"
            )
        if not self.allow_unstable and not _gain_is_stable(gain):
            raise ValueError(
                "gain is not stable (symmetric part has a nonnegative eigenvalue); "
                "pass allow_unstable=True to run a divergence experiment"
            )
        object.__setattr__(self, "gain", gain)
        object.__setattr__(self, "goal", goal)

    @property
    def dim(self) -> int:
        return self.components.dim

    @classmethod
    def build(
        cls,
        anchors,
        goal,
        alpha: float = -5.0,
        gain: np.ndarray | None = None,
        allow_unstable: bool = False,
    ) -> "HomingPolicy":
        """Build components from ``anchors`` and wrap them with a gain
        (``alpha * I`` unless an explicit matrix is given) and goal."""
        components = build_components(anchors)
        if gain is None:
            gain = alpha * np.eye(components.dim)
        return cls(components=components, gain=gain, goal=goal, allow_unstable=allow_unstable)


def ideal_control(x, gain, goal) -> np.ndarray:
    """Full-state feedback ``gain @ (x - goal)``, the reference the
    measurement-driven controller is compared against."""
    x = as_vector(x)
    goal = as_vector(goal, dim=x.size)
    gain = np.asarray(gain, dtype=float)
    return gain @ (x - goal)


def estimate_position(d, policy: HomingPolicy) -> np.ndarray:
    """Position estimate from a distance vector under the policy's components."""
    h = coupled_measurements(d, policy.components.pairs)
    return recover_position(policy.components, h)


def control(d, policy: HomingPolicy) -> np.ndarray:
    """Control action from a distance vector: feedback on the recovered
    position, ``gain @ (estimate - goal)``.

    With noiseless readings against untransformed anchors this equals
    ``ideal_control`` at the true position up to numerical tolerance.
    """
    return policy.gain @ (estimate_position(d, policy) - policy.goal)


def lyapunov(x, goal) -> float:
    """Squared distance to the goal; zero exactly at the goal.  Along a
    stable noiseless trajectory this decays exponentially at rate
    ``2 * alpha``."""
    x = as_vector(x)
    goal = as_vector(goal, dim=x.size)
    diff = x - goal
    return float(diff @ diff)
