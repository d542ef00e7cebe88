"""Closed-loop simulation: integration, verdicts, and experiment protocols.

A trial advances the single-integrator dynamics (state velocity equals
the control action) with explicit Euler until a scalar metric — squared
distance to the goal for homing, shape error for formations — crosses the
convergence or divergence threshold, or time runs out.  Rotation sweeps
repeat trials over a grid of anchor rotations and report the fraction
that diverged at each angle.

Determinism: every trial draws from its own stream derived from
``(seed, grid index, trial index)``, so trials are order-independent and
a rerun with the same seed reproduces results exactly.  Sweep trials are
integrated in vectorized batches per grid point; randomness only enters
through their initial conditions, so batching does not affect the draws.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from .core import NoiseSpec, as_anchors, as_vector, measure_all
from .coupling import coupled_measurements, recover_position
from .formation import (
    FormationPolicy,
    as_ensemble,
    formation_control,
    formation_error,
)
from .homing import HomingPolicy, control, estimate_position, lyapunov, rotation2d


class Outcome(Enum):
    CONVERGED = "converged"
    DIVERGED = "diverged"
    TIMEOUT = "timeout"


@dataclass(frozen=True)
class SimConfig:
    """Integration and verdict settings.

    ``dt`` is capped at 0.1: explicit Euler with the default gain
    (eigenvalue -5) is only stable for dt < 0.4, and 0.1 leaves margin.
    ``integrator`` may be "euler" (default) or "rk4"; the latter is only
    useful for rate-accuracy studies on noiseless runs.
    """

    dt: float = 0.01
    t_max: float = 50.0
    conv_tol: float = 1e-6
    div_tol: float = 1e6
    seed: int = 0
    integrator: str = "euler"

    def __post_init__(self):
        if not 0.0 < self.dt <= 0.1:
            raise ValueError(f"dt must be in (0, 0.1], got {self.dt}")
        if self.t_max <= 0.0:
            raise ValueError(f"t_max must be positive, got {self.t_max}")
        if not self.conv_tol < self.div_tol:
            raise ValueError(
                f"conv_tol ({self.conv_tol}) must be below div_tol ({self.div_tol})"
            )
        if self.seed < 0:
            raise ValueError(f"seed must be nonnegative, got {self.seed}")
        if self.integrator not in ("euler", "rk4"):
            raise ValueError(f"unknown integrator {self.integrator!r}")

    @property
    def max_steps(self) -> int:
        return int(round(self.t_max / self.dt))


@dataclass
class TrialVerdict:
    """Outcome of one simulated run with its metric trace.

    ``metric_history[k]`` is the metric after k steps (entry 0 is the
    initial value).  Converged means the last metric fell to conv_tol or
    below; Diverged means it reached div_tol or went non-finite.
    """

    outcome: Outcome
    metric_history: np.ndarray
    final_state: np.ndarray
    steps: int


@dataclass
class SweepResult:
    """Divergence ratio over a parameter grid."""

    grid: np.ndarray
    divergence_ratio: np.ndarray
    trials_per_point: int


@dataclass
class HomingTrace:
    """Full record of one homing trial: states, per-step position
    estimates, and the metric history."""

    times: np.ndarray
    states: np.ndarray
    estimates: np.ndarray
    metrics: np.ndarray
    outcome: Outcome
    steps: int


@dataclass
class FormationTrace:
    """Full record of one formation trial: stacked agent states per step
    and the shape-error history."""

    times: np.ndarray
    states: np.ndarray
    metrics: np.ndarray
    outcome: Outcome
    steps: int


@dataclass
class PairedFormationRuns:
    """Two formation runs whose initial conditions differ by a fixed
    translation, stepped in lockstep over a common horizon."""

    times: np.ndarray
    states_a: np.ndarray
    states_b: np.ndarray
    metrics_a: np.ndarray
    metrics_b: np.ndarray
    outcome_a: Outcome
    outcome_b: Outcome
    translation: np.ndarray


def step_homing(x, policy: HomingPolicy, anchors_world=None, noise=None, dt=0.01, rng=None) -> np.ndarray:
    """One explicit-Euler step of the measurement-driven homing loop."""
    x = as_vector(x, dim=policy.dim)
    if anchors_world is None:
        anchors_world = policy.components.anchors
    d = measure_all(x, anchors_world, noise, rng)
    return x + dt * control(d, policy)


def step_formation(X, policy: FormationPolicy, noise=None, dt=0.01, rng=None) -> np.ndarray:
    """One explicit-Euler step of the formation loop (columnwise)."""
    X = as_ensemble(X, dim=policy.dim, count=policy.agent_count)
    return X + dt * formation_control(X, policy, noise, rng)


class HomingSystem:
    """Single-agent closed loop bound to a policy, the physical anchor
    positions, and an optional noise stream.

    ``anchors_world`` defaults to the positions the components were built
    from; pass transformed anchors to study placement error, along with
    ``metric_goal`` set to the shifted equilibrium so verdicts track the
    point the loop actually settles at.
    """

    def __init__(self, policy: HomingPolicy, anchors_world=None, noise: NoiseSpec | None = None,
                 rng: np.random.Generator | None = None, metric_goal=None):
        self.policy = policy
        if anchors_world is None:
            anchors_world = policy.components.anchors
        self.anchors_world = as_anchors(anchors_world, dim=policy.dim)
        self.noise = noise
        if rng is None and noise is not None and noise.epsilon > 0.0:
            rng = noise.stream()
        self.rng = rng
        if metric_goal is None:
            metric_goal = policy.goal
        self.metric_goal = as_vector(metric_goal, dim=policy.dim)
        self.last_estimate: np.ndarray | None = None

    def velocity(self, x: np.ndarray) -> np.ndarray:
        d = measure_all(x, self.anchors_world, self.noise, self.rng)
        estimate = estimate_position(d, self.policy)
        self.last_estimate = estimate
        return self.policy.gain @ (estimate - self.policy.goal)

    def metric(self, x: np.ndarray) -> float:
        return lyapunov(x, self.metric_goal)


class FormationSystem:
    """Multi-agent closed loop bound to a formation policy."""

    def __init__(self, policy: FormationPolicy, noise: NoiseSpec | None = None,
                 rng: np.random.Generator | None = None):
        self.policy = policy
        self.noise = noise
        if rng is None and noise is not None and noise.epsilon > 0.0:
            rng = noise.stream()
        self.rng = rng

    def velocity(self, X: np.ndarray) -> np.ndarray:
        return formation_control(X, self.policy, self.noise, self.rng)

    def metric(self, X: np.ndarray) -> float:
        return formation_error(X, self.policy.desired)


def _advance(system, state: np.ndarray, dt: float, integrator: str) -> np.ndarray:
    if integrator == "euler":
        return state + dt * system.velocity(state)
    k1 = system.velocity(state)
    k2 = system.velocity(state + 0.5 * dt * k1)
    k3 = system.velocity(state + 0.5 * dt * k2)
    k4 = system.velocity(state + dt * k3)
    return state + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _safe_metric(system, state: np.ndarray) -> float:
    if not np.all(np.isfinite(state)):
        return float("inf")
    m = system.metric(state)
    return m if np.isfinite(m) else float("inf")


def run_trial(initial, system, config: SimConfig) -> TrialVerdict:
    """Integrate one closed loop to a verdict.

    Steps until the metric falls to ``conv_tol`` (Converged), reaches
    ``div_tol`` or goes non-finite (Diverged), or the horizon ``t_max``
    elapses (Timeout).  The metric is recorded every step, the initial
    value included, so a start already below ``conv_tol`` converges in
    zero steps.
    """
    state = np.array(initial, dtype=float, copy=True)
    metric = _safe_metric(system, state)
    history = [metric]
    steps = 0
    outcome = None
    if metric <= config.conv_tol:
        outcome = Outcome.CONVERGED
    elif metric >= config.div_tol:
        outcome = Outcome.DIVERGED
    while outcome is None and steps < config.max_steps:
        state = _advance(system, state, config.dt, config.integrator)
        steps += 1
        metric = _safe_metric(system, state)
        history.append(metric)
        if metric >= config.div_tol or not np.isfinite(metric):
            outcome = Outcome.DIVERGED
        elif metric <= config.conv_tol:
            outcome = Outcome.CONVERGED
    if outcome is None:
        outcome = Outcome.TIMEOUT
    return TrialVerdict(
        outcome=outcome,
        metric_history=np.asarray(history),
        final_state=state,
        steps=steps,
    )


# Outcome codes used by the vectorized batch runners.
_PENDING, _CONV, _DIV = 0, 1, 2

_CODE_TO_OUTCOME = {_PENDING: Outcome.TIMEOUT, _CONV: Outcome.CONVERGED, _DIV: Outcome.DIVERGED}


def _verdict_codes(metric, conv_tol, div_tol):
    finite = np.isfinite(metric)
    conv = finite & (metric <= conv_tol)
    div = ~finite | (metric >= div_tol)
    return conv, div


def _run_homing_batch(x0, anchors_world, policy, metric_goal, config: SimConfig) -> np.ndarray:
    """Euler-integrate a batch of noiseless homing trials; returns the
    outcome code per trial."""
    x = np.array(x0, dtype=float)
    n_trials = x.shape[0]
    pairs = policy.components.pairs
    pi, pj = pairs[:, 0], pairs[:, 1]
    lt = policy.components.left_inverse.T
    offset = policy.components.offset
    gain_t = policy.gain.T
    goal = policy.goal
    codes = np.full(n_trials, _PENDING, dtype=np.int8)

    metric = np.einsum("ti,ti->t", x - metric_goal, x - metric_goal)
    conv, div = _verdict_codes(metric, config.conv_tol, config.div_tol)
    codes[conv] = _CONV
    codes[div] = _DIV
    idx = np.flatnonzero(codes == _PENDING)

    for _ in range(config.max_steps):
        if idx.size == 0:
            break
        xa = x[idx]
        diff = xa[:, None, :] - anchors_world[None, :, :]
        d2 = np.einsum("tpn,tpn->tp", diff, diff)
        h = d2[:, pi] - d2[:, pj]
        estimate = (h - offset) @ lt
        xa = xa + config.dt * ((estimate - goal) @ gain_t)
        x[idx] = xa
        err = xa - metric_goal
        metric = np.einsum("ti,ti->t", err, err)
        conv, div = _verdict_codes(metric, config.conv_tol, config.div_tol)
        codes[idx[conv]] = _CONV
        codes[idx[div]] = _DIV
        idx = idx[~(conv | div)]
    return codes


def _batched_formation_error(X, desired_centered) -> np.ndarray:
    """Shape error for a stack of configurations (t, n, m), all finite."""
    n = X.shape[1]
    Xc = X - X.mean(axis=2, keepdims=True)
    cov = np.matmul(Xc, desired_centered.T)
    u, s, vt = np.linalg.svd(cov)
    v = vt.transpose(0, 2, 1)
    ut = u.transpose(0, 2, 1)
    det = np.linalg.det(np.matmul(v, ut))
    signs = np.ones((X.shape[0], n))
    signs[:, -1] = np.where(det < 0.0, -1.0, 1.0)
    rot = np.matmul(v * signs[:, None, :], ut)
    residual = np.matmul(rot, Xc) - desired_centered
    return np.linalg.norm(residual, axis=1).sum(axis=1)


def _run_formation_batch(X0, policy, config: SimConfig) -> np.ndarray:
    """Euler-integrate a batch of noiseless formation trials; returns the
    outcome code per trial."""
    X = np.array(X0, dtype=float)
    n_trials = X.shape[0]
    pairs = policy.components.pairs
    pi, pj = pairs[:, 0], pairs[:, 1]
    left = policy.components.left_inverse
    offset_col = policy.components.offset[:, None]
    gain = policy.gain
    desired = policy.desired
    desired_centered = desired - desired.mean(axis=1, keepdims=True)
    codes = np.full(n_trials, _PENDING, dtype=np.int8)

    def metrics_of(stack):
        finite = np.isfinite(stack).all(axis=(1, 2))
        out = np.full(stack.shape[0], np.inf)
        if finite.any():
            out[finite] = _batched_formation_error(stack[finite], desired_centered)
        return out

    metric = metrics_of(X)
    conv, div = _verdict_codes(metric, config.conv_tol, config.div_tol)
    codes[conv] = _CONV
    codes[div] = _DIV
    idx = np.flatnonzero(codes == _PENDING)

    for _ in range(config.max_steps):
        if idx.size == 0:
            break
        Xa = X[idx]
        diff = Xa[:, :, :, None] - Xa[:, :, None, :]
        d2 = np.einsum("tnij,tnij->tij", diff, diff)
        H = d2[:, pi, :] - d2[:, pj, :]
        estimate = np.matmul(left, H - offset_col)
        Xa = Xa + config.dt * np.matmul(gain, estimate - desired)
        X[idx] = Xa
        metric = metrics_of(Xa)
        conv, div = _verdict_codes(metric, config.conv_tol, config.div_tol)
        codes[idx[conv]] = _CONV
        codes[idx[div]] = _DIV
        idx = idx[~(conv | div)]
    return codes


def rotation_sweep_homing(
    policy: HomingPolicy,
    config: SimConfig,
    n_theta: int = 100,
    trials: int = 100,
    eps: float = 1e-3,
    conv_tol: float | None = None,
) -> SweepResult:
    """Divergence ratio of the homing loop over a grid of planar anchor
    rotations.

    For each of ``n_theta`` angles uniformly spaced over [-2*pi, 2*pi] the
    physical anchors are rotated while the components stay fixed, and
    ``trials`` runs start from the goal perturbed by a uniform sample in
    [-eps, eps] per coordinate.  Runs are noiseless past the initial
    perturbation.

    The convergence threshold must sit far below the initial metric
    (about eps**2), otherwise trials that merely start near the goal
    would be miscounted as converged; by default it is tightened to
    ``1e-6 * eps**2`` when the configured value is too loose.
    """
    if policy.dim != 2:
        raise ValueError("rotation sweep is defined for planar (n = 2) policies")
    if conv_tol is None:
        conv_tol = min(config.conv_tol, 1e-6 * eps * eps) if eps > 0 else config.conv_tol
    run_config = replace(config, conv_tol=conv_tol)
    thetas = np.linspace(-2.0 * np.pi, 2.0 * np.pi, n_theta)
    anchors = policy.components.anchors
    noise = NoiseSpec(epsilon=eps, seed=config.seed)
    ratios = np.empty(n_theta)
    for gi, theta in enumerate(thetas):
        rot = rotation2d(theta).rotation
        world = anchors @ rot.T
        metric_goal = rot @ policy.goal
        if eps > 0:
            x0 = np.stack([
                policy.goal + noise.stream(gi, ti).uniform(-eps, eps, size=2)
                for ti in range(trials)
            ])
        else:
            x0 = np.tile(policy.goal, (trials, 1))
        codes = _run_homing_batch(x0, world, policy, metric_goal, run_config)
        ratios[gi] = np.mean(codes == _DIV)
    return SweepResult(grid=thetas, divergence_ratio=ratios, trials_per_point=trials)


def rotation_sweep_formation(
    policy: FormationPolicy,
    config: SimConfig,
    n_theta: int = 100,
    trials: int = 100,
    eps: float = 0.1,
) -> SweepResult:
    """Divergence ratio of the formation loop over a grid of rotations.

    Each trial starts from the desired formation perturbed per coordinate
    by a uniform sample in [-eps, eps], with the whole perturbed group
    then rotated by the grid angle; runs are noiseless afterwards.
    """
    if policy.dim != 2:
        raise ValueError("rotation sweep is defined for planar (n = 2) policies")
    thetas = np.linspace(-2.0 * np.pi, 2.0 * np.pi, n_theta)
    desired = policy.desired
    noise = NoiseSpec(epsilon=eps, seed=config.seed)
    ratios = np.empty(n_theta)
    for gi, theta in enumerate(thetas):
        rot = rotation2d(theta).rotation
        starts = np.stack([
            rot @ (desired + noise.stream(gi, ti).uniform(-eps, eps, size=desired.shape))
            for ti in range(trials)
        ])
        codes = _run_formation_batch(starts, policy, config)
        ratios[gi] = np.mean(codes == _DIV)
    return SweepResult(grid=thetas, divergence_ratio=ratios, trials_per_point=trials)


def _homing_trace(system: HomingSystem, x0, config: SimConfig) -> HomingTrace:
    state = np.array(x0, dtype=float, copy=True)
    states = [state.copy()]
    estimates = []
    metrics = [_safe_metric(system, state)]
    outcome = None
    if metrics[0] <= config.conv_tol:
        outcome = Outcome.CONVERGED
    elif metrics[0] >= config.div_tol:
        outcome = Outcome.DIVERGED
    steps = 0
    while outcome is None and steps < config.max_steps:
        velocity = system.velocity(state)
        estimates.append(np.asarray(system.last_estimate))
        state = state + config.dt * velocity
        steps += 1
        states.append(state.copy())
        metric = _safe_metric(system, state)
        metrics.append(metric)
        if metric >= config.div_tol or not np.isfinite(metric):
            outcome = Outcome.DIVERGED
        elif metric <= config.conv_tol:
            outcome = Outcome.CONVERGED
    if outcome is None:
        outcome = Outcome.TIMEOUT
    times = config.dt * np.arange(len(states))
    return HomingTrace(
        times=times,
        states=np.asarray(states),
        estimates=np.asarray(estimates) if estimates else np.empty((0, state.size)),
        metrics=np.asarray(metrics),
        outcome=outcome,
        steps=steps,
    )


def formation_trace(
    policy: FormationPolicy,
    X0,
    config: SimConfig,
    noise: NoiseSpec | None = None,
    rng: np.random.Generator | None = None,
) -> FormationTrace:
    """Run one formation trial recording every intermediate configuration."""
    system = FormationSystem(policy, noise=noise, rng=rng)
    state = as_ensemble(X0, dim=policy.dim, count=policy.agent_count).copy()
    states = [state.copy()]
    metrics = [_safe_metric(system, state)]
    outcome = None
    if metrics[0] <= config.conv_tol:
        outcome = Outcome.CONVERGED
    elif metrics[0] >= config.div_tol:
        outcome = Outcome.DIVERGED
    steps = 0
    while outcome is None and steps < config.max_steps:
        state = _advance(system, state, config.dt, config.integrator)
        steps += 1
        states.append(state.copy())
        metric = _safe_metric(system, state)
        metrics.append(metric)
        if metric >= config.div_tol or not np.isfinite(metric):
            outcome = Outcome.DIVERGED
        elif metric <= config.conv_tol:
            outcome = Outcome.CONVERGED
    if outcome is None:
        outcome = Outcome.TIMEOUT
    return FormationTrace(
        times=config.dt * np.arange(len(states)),
        states=np.asarray(states),
        metrics=np.asarray(metrics),
        outcome=outcome,
        steps=steps,
    )


def noise_experiment(
    policy: HomingPolicy,
    config: SimConfig,
    eps_list=(0.0, 5.0, 10.0),
    trials: int = 10,
    init_half_width: float = 20.0,
) -> dict:
    """Homing under increasing measurement noise.

    For each noise level, ``trials`` runs start from positions drawn
    uniformly from the square of half-width ``init_half_width`` around
    the origin.  Noiseless runs converge outright; noisy runs settle into
    a neighborhood of the goal (Timeout with bounded final metric counts
    as settled, not failed).  Returns ``{eps: [HomingTrace, ...]}``.
    """
    results: dict = {}
    for ei, eps in enumerate(eps_list):
        noise = NoiseSpec(epsilon=float(eps), seed=config.seed)
        traces = []
        for ti in range(trials):
            rng = noise.stream(ei, ti)
            x0 = rng.uniform(-init_half_width, init_half_width, size=policy.dim)
            system = HomingSystem(policy, noise=noise, rng=rng)
            traces.append(_homing_trace(system, x0, config))
        results[float(eps)] = traces
    return results


def offset_experiment_formation(
    policy: FormationPolicy,
    r,
    config: SimConfig,
    eps: float = 10.0,
) -> PairedFormationRuns:
    """Two formation runs whose starts differ by the translation ``r``.

    Both ensembles share the same initial perturbation realization and
    are stepped in lockstep until each has a verdict (or time runs out),
    so their shape-error histories can be compared entry by entry.
    """
    r = as_vector(r, dim=policy.dim)
    noise = NoiseSpec(epsilon=eps, seed=config.seed)
    rng = noise.stream(0)
    omega = rng.uniform(-eps, eps, size=policy.desired.shape) if eps > 0 else 0.0
    Xa = policy.desired + omega
    Xb = Xa + r[:, None]

    states_a, states_b = [Xa.copy()], [Xb.copy()]
    metric = lambda X: (
        formation_error(X, policy.desired) if np.all(np.isfinite(X)) else float("inf")
    )
    metrics_a, metrics_b = [metric(Xa)], [metric(Xb)]

    def classify(m):
        if m <= config.conv_tol:
            return Outcome.CONVERGED
        if m >= config.div_tol or not np.isfinite(m):
            return Outcome.DIVERGED
        return None

    outcome_a = classify(metrics_a[0])
    outcome_b = classify(metrics_b[0])
    steps = 0
    while (outcome_a is None or outcome_b is None) and steps < config.max_steps:
        Xa = Xa + config.dt * formation_control(Xa, policy)
        Xb = Xb + config.dt * formation_control(Xb, policy)
        steps += 1
        states_a.append(Xa.copy())
        states_b.append(Xb.copy())
        metrics_a.append(metric(Xa))
        metrics_b.append(metric(Xb))
        if outcome_a is None:
            outcome_a = classify(metrics_a[-1])
        if outcome_b is None:
            outcome_b = classify(metrics_b[-1])
    times = config.dt * np.arange(len(states_a))
    return PairedFormationRuns(
        times=times,
        states_a=np.asarray(states_a),
        states_b=np.asarray(states_b),
        metrics_a=np.asarray(metrics_a),
        metrics_b=np.asarray(metrics_b),
        outcome_a=outcome_a if outcome_a is not None else Outcome.TIMEOUT,
        outcome_b=outcome_b if outcome_b is not None else Outcome.TIMEOUT,
        translation=r,
    )
