"""Command-line front end: configure, run, and archive experiments.

Every experiment writes its artifacts into one output directory:

* ``trajectory.csv`` — per-step states for trajectory experiments,
* ``sweep.csv`` — divergence ratio per rotation angle for sweeps,
* ``summary.json`` — verdicts plus the fully resolved configuration and
  seed, so the run can be reproduced from the artifacts alone,
* ``plot.svg`` — a diagnostic plot of the main result.

Config files are flat key-value text: one key per line followed by its
whitespace-separated values, ``#`` comments allowed, with repeated keys
for coordinate lists (``anchor 0 0`` ... ) and for the noise-level list.
Command-line flags override file values.

Exit codes: 0 success, 2 config error, 3 I/O error, 4 numerical
degeneracy during a run.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from dataclasses import dataclass

import numpy as np

from .core import NoiseSpec, measure_all
from .coupling import DegenerateAnchors, build_components, coupled_measurements, recover_position
from .formation import DegenerateConfiguration, FormationPolicy
from .homing import HomingPolicy, predicted_equilibrium, rotation2d
from .sim import (
    HomingSystem,
    Outcome,
    SimConfig,
    _homing_trace,
    formation_trace,
    noise_experiment,
    offset_experiment_formation,
    rotation_sweep_formation,
    rotation_sweep_homing,
)
from .svgplot import emit_plot

MODES = (
    "recover",
    "home",
    "formation",
    "sweep-rotation",
    "sweep-rotation-formation",
    "noise",
    "offset",
)

_FORMATION_MODES = ("formation", "sweep-rotation-formation", "offset")

_DEFAULT_ANCHORS = ((0.0, 0.0), (10.0, 0.0), (0.0, 10.0))
_DEFAULT_FORMATION = ((0.0, 0.0), (10.0, 0.0), (10.0, 10.0), (0.0, 10.0))

_DEFAULT_EPSILON = {
    "recover": (0.0,),
    "home": (0.0,),
    "formation": (10.0,),
    "sweep-rotation": (0.001,),
    "sweep-rotation-formation": (0.1,),
    "noise": (0.0, 5.0, 10.0),
    "offset": (10.0,),
}

_DEFAULT_TRIALS = {
    "sweep-rotation": 100,
    "sweep-rotation-formation": 100,
    "noise": 10,
}


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


@dataclass(frozen=True)
class ExperimentConfig:
    """Fully resolved experiment description.

    Coordinates are stored as plain float tuples so configs compare by
    value and survive a parse/serialize round trip unchanged.  In
    formation modes ``anchors`` is the desired formation.  ``epsilons``
    holds one entry for most modes and the noise-level list for the
    ``noise`` mode.
    """

    mode: str
    anchors: tuple
    goal: tuple
    x0: tuple | None
    alpha: float
    epsilons: tuple
    theta: float
    offset: tuple
    dt: float
    t_max: float
    conv_tol: float
    div_tol: float
    seed: int
    integrator: str
    trials: int
    n_theta: int
    output_dir: str

    @property
    def epsilon(self) -> float:
        return self.epsilons[0]

    @property
    def dim(self) -> int:
        return len(self.anchors[0])

    def sim_config(self) -> SimConfig:
        return SimConfig(
            dt=self.dt,
            t_max=self.t_max,
            conv_tol=self.conv_tol,
            div_tol=self.div_tol,
            seed=self.seed,
            integrator=self.integrator,
        )


_SCALAR_KEYS = {
    "alpha": float,
    "theta": float,
    "dt": float,
    "tmax": float,
    "conv_tol": float,
    "div_tol": float,
    "seed": int,
    "trials": int,
    "n_theta": int,
    "integrator": str,
    "mode": str,
    "out": str,
}
_COORD_KEYS = ("anchor", "goal", "x0", "r")
_MULTI_KEYS = ("anchor", "epsilon")


def _parse_number(key: str, token: str, caster):
    try:
        return caster(token)
    except ValueError:
        raise ConfigError(f"malformed value for field '{key}': {token!r}") from None


def _parse_pairs(text: str):
    """Collect (key, value-string) pairs from flat key-value text."""
    pairs = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split(None, 1)
        if len(parts) == 1:
            raise ConfigError(f"line {lineno}: field '{parts[0]}' has no value")
        key, value = parts
        if key not in _SCALAR_KEYS and key not in _COORD_KEYS and key != "epsilon":
            raise ConfigError(f"line {lineno}: unknown key '{key}'")
        pairs.append((key, value.strip()))
    return pairs


def parse_config_text(text: str, mode: str | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Parse flat key-value config text into a validated ExperimentConfig.

    ``mode`` (from the subcommand) wins over a ``mode`` line in the file;
    ``overrides`` maps flag names to values that replace file entries.
    """
    values: dict = {}
    anchors = []
    epsilons = []
    for key, value in _parse_pairs(text):
        if key == "anchor":
            anchors.append(tuple(_parse_number("anchor", t, float) for t in value.split()))
        elif key == "epsilon":
            epsilons.append(_parse_number("epsilon", value, float))
        elif key in _COORD_KEYS:
            values[key] = tuple(_parse_number(key, t, float) for t in value.split())
        else:
            values[key] = _parse_number(key, value, _SCALAR_KEYS[key])
    if anchors:
        values["anchors"] = tuple(anchors)
    if epsilons:
        values["epsilons"] = tuple(epsilons)
    if mode is not None:
        values["mode"] = mode
    for key, value in (overrides or {}).items():
        if value is not None:
            values[key] = value
    return resolve_config(values)


def parse_config_file(path: str, mode: str | None = None, overrides: dict | None = None) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        text = fh.read()
    return parse_config_text(text, mode=mode, overrides=overrides)


def resolve_config(values: dict) -> ExperimentConfig:
    """Fill defaults, coerce fields, and validate into an ExperimentConfig."""
    mode = values.get("mode")
    if mode is None:
        raise ConfigError("field 'mode' is required")
    if mode not in MODES:
        raise ConfigError(f"unknown mode '{mode}'; expected one of {', '.join(MODES)}")

    default_anchors = _DEFAULT_FORMATION if mode in _FORMATION_MODES else _DEFAULT_ANCHORS
    anchors = tuple(tuple(map(float, a)) for a in values.get("anchors", default_anchors))
    if not anchors:
        raise ConfigError("field 'anchor' needs at least one entry")
    dim = len(anchors[0])
    if dim < 2:
        raise ConfigError("field 'anchor' needs at least 2 coordinates per entry")
    if any(len(a) != dim for a in anchors):
        raise ConfigError("field 'anchor' entries must all have the same dimension")

    def coord(key, default):
        v = values.get(key, default)
        if v is None:
            return None
        v = tuple(map(float, v))
        if len(v) != dim:
            raise ConfigError(f"field '{key}' must have {dim} coordinates, got {len(v)}")
        return v

    goal = coord("goal", (0.0,) * dim)
    x0 = coord("x0", None)
    offset = coord("r", (0.0,) * dim)
    epsilons = tuple(float(e) for e in values.get("epsilons", _DEFAULT_EPSILON[mode]))
    if any(e < 0 for e in epsilons):
        raise ConfigError("field 'epsilon' must be nonnegative")
    if mode != "noise" and len(epsilons) != 1:
        raise ConfigError(f"mode '{mode}' takes a single epsilon, got {len(epsilons)}")

    config = ExperimentConfig(
        mode=mode,
        anchors=anchors,
        goal=goal,
        x0=x0,
        alpha=float(values.get("alpha", -5.0)),
        epsilons=epsilons,
        theta=float(values.get("theta", 0.0)),
        offset=offset,
        dt=float(values.get("dt", 0.01)),
        t_max=float(values.get("tmax", 50.0)),
        conv_tol=float(values.get("conv_tol", 1e-6)),
        div_tol=float(values.get("div_tol", 1e6)),
        seed=int(values.get("seed", 0)),
        integrator=str(values.get("integrator", "euler")),
        trials=int(values.get("trials", _DEFAULT_TRIALS.get(mode, 1))),
        n_theta=int(values.get("n_theta", 100)),
        output_dir=str(values.get("out", "out")),
    )
    validate_config(config)
    return config


def validate_config(config: ExperimentConfig) -> None:
    try:
        build_components(config.anchors)
    except DegenerateAnchors as exc:
        raise ConfigError(f"field 'anchor' is degenerate: {exc}") from exc
    except ValueError as exc:
        raise ConfigError(f"field 'anchor' is invalid: {exc}") from exc
    try:
        config.sim_config()
    except ValueError as exc:
        raise ConfigError(f"simulation settings invalid: {exc}") from exc
    if config.trials < 1:
        raise ConfigError(f"field 'trials' must be >= 1, got {config.trials}")
    if config.n_theta < 2:
        raise ConfigError(f"field 'n_theta' must be >= 2, got {config.n_theta}")
    needs_plane = config.mode in ("sweep-rotation", "sweep-rotation-formation")
    if (needs_plane or config.theta != 0.0) and config.dim != 2:
        raise ConfigError("field 'theta' and rotation sweeps require 2-D coordinates")


def serialize_config(config: ExperimentConfig) -> str:
    """Canonical flat key-value text; parsing it back yields an equal
    config, and re-serializing that parse is byte-identical."""
    lines = [f"mode {config.mode}"]
    for a in config.anchors:
        lines.append("anchor " + " ".join(repr(c) for c in a))
    lines.append("goal " + " ".join(repr(c) for c in config.goal))
    if config.x0 is not None:
        lines.append("x0 " + " ".join(repr(c) for c in config.x0))
    lines.append(f"alpha {config.alpha!r}")
    for e in config.epsilons:
        lines.append(f"epsilon {e!r}")
    lines.append(f"theta {config.theta!r}")
    lines.append("r " + " ".join(repr(c) for c in config.offset))
    lines.append(f"dt {config.dt!r}")
    lines.append(f"tmax {config.t_max!r}")
    lines.append(f"conv_tol {config.conv_tol!r}")
    lines.append(f"div_tol {config.div_tol!r}")
    lines.append(f"seed {config.seed}")
    lines.append(f"integrator {config.integrator}")
    lines.append(f"trials {config.trials}")
    lines.append(f"n_theta {config.n_theta}")
    lines.append(f"out {config.output_dir}")
    return "\n".join(lines) + "\n"


def _fmt_cell(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, str):
        return v
    return repr(float(v))


def _write_csv(path: str, header, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt_cell(v) for v in row) + "\n")


def _write_summary(outdir: str, config: ExperimentConfig, results: dict) -> dict:
    summary = {
        "mode": config.mode,
        "seed": config.seed,
        "config": dataclasses.asdict(config),
        "results": results,
    }
    path = os.path.join(outdir, "summary.json")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


def _write_plot(outdir: str, series, kind: str, title: str, **labels) -> None:
    svg = emit_plot(series, kind, title=title, **labels)
    with open(os.path.join(outdir, "plot.svg"), "w", encoding="utf-8", newline="\n") as fh:
        fh.write(svg)


def _coord_header(dim: int):
    names = ["x_env", "y_env", "z_env"]
    if dim <= 3:
        return names[:dim]
    return names + [f"c{i}_env" for i in range(3, dim)]


def _world_frame(config: ExperimentConfig):
    """World anchors and the matching equilibrium under the configured
    rotation/translation of the anchor set."""
    transform = None
    if config.theta != 0.0 or any(config.offset):
        transform = rotation2d(config.theta, translation=np.asarray(config.offset)) \
            if config.dim == 2 else None
        if transform is None:
            raise ConfigError("anchor transforms are only supported for 2-D setups")
    anchors = np.asarray(config.anchors, dtype=float)
    goal = np.asarray(config.goal, dtype=float)
    if transform is None:
        return anchors, goal
    return transform.apply(anchors), predicted_equilibrium(transform, goal)


def _initial_position(config: ExperimentConfig, half_width: float = 20.0) -> np.ndarray:
    if config.x0 is not None:
        return np.asarray(config.x0, dtype=float)
    rng = np.random.default_rng((config.seed, 0))
    return rng.uniform(-half_width, half_width, size=config.dim)


def _run_recover(config: ExperimentConfig, outdir: str) -> dict:
    policy_components = build_components(config.anchors)
    world, _ = _world_frame(config)
    x_true = _initial_position(config)
    noise = NoiseSpec(epsilon=config.epsilon, seed=config.seed)
    d = measure_all(x_true, world, noise, noise.stream(0))
    estimate = recover_position(
        policy_components, coupled_measurements(d, policy_components.pairs)
    )
    error = float(np.linalg.norm(estimate - x_true))
    series = [
        ("anchors", world[:, 0], world[:, 1]),
        ("true", [x_true[0]], [x_true[1]]),
        ("estimate", [estimate[0]], [estimate[1]]),
    ] if config.dim == 2 else [
        ("true", [x_true[0]], [x_true[1]]),
        ("estimate", [estimate[0]], [estimate[1]]),
    ]
    _write_plot(outdir, series, "trajectory", "position recovery")
    return {
        "true_position": [float(v) for v in x_true],
        "estimate": [float(v) for v in estimate],
        "distances": [float(v) for v in d],
        "error": error,
    }


def _trajectory_rows(trace, agent_rows):
    rows = []
    for k, t in enumerate(trace.times):
        for agent, coords in agent_rows(trace.states[k]):
            rows.append([t, agent, *coords, trace.metrics[k]])
    return rows


def _run_home(config: ExperimentConfig, outdir: str) -> dict:
    policy = HomingPolicy.build(config.anchors, config.goal, alpha=config.alpha)
    world, equilibrium = _world_frame(config)
    noise = NoiseSpec(epsilon=config.epsilon, seed=config.seed)
    system = HomingSystem(
        policy, anchors_world=world, noise=noise,
        rng=noise.stream(0), metric_goal=equilibrium,
    )
    trace = _homing_trace(system, _initial_position(config), config.sim_config())
    header = ["t_s", "agent", *_coord_header(config.dim), "v_env2"]
    rows = _trajectory_rows(trace, lambda s: [(0, s)])
    _write_csv(os.path.join(outdir, "trajectory.csv"), header, rows)
    if config.dim == 2:
        series = [
            ("agent", trace.states[:, 0], trace.states[:, 1]),
            ("anchors", world[:, 0], world[:, 1]),
            ("equilibrium", [equilibrium[0]], [equilibrium[1]]),
        ]
        _write_plot(outdir, series, "trajectory", "homing response")
    else:
        _write_plot(
            outdir, [("V", trace.times, trace.metrics)], "metric-vs-time",
            "homing response", ylabel="V (env units^2)",
        )
    return {
        "outcome": trace.outcome.value,
        "steps": trace.steps,
        "final_metric": float(trace.metrics[-1]),
        "final_state": [float(v) for v in trace.states[-1]],
        "equilibrium": [float(v) for v in equilibrium],
    }


def _run_formation(config: ExperimentConfig, outdir: str) -> dict:
    policy = FormationPolicy.build(config.anchors, alpha=config.alpha)
    noise = NoiseSpec(epsilon=config.epsilon, seed=config.seed)
    rng = noise.stream(0)
    omega = rng.uniform(-config.epsilon, config.epsilon, size=policy.desired.shape) \
        if config.epsilon > 0 else np.zeros(policy.desired.shape)
    trace = formation_trace(policy, policy.desired + omega, config.sim_config())
    header = ["t_s", "agent", *_coord_header(config.dim), "w_env"]
    rows = _trajectory_rows(
        trace, lambda s: [(k, s[:, k]) for k in range(policy.agent_count)]
    )
    _write_csv(os.path.join(outdir, "trajectory.csv"), header, rows)
    if config.dim == 2:
        series = [
            (f"agent {k}" if k == 0 else "", trace.states[:, 0, k], trace.states[:, 1, k])
            for k in range(policy.agent_count)
        ]
        series.append(("desired", policy.desired[0], policy.desired[1]))
        _write_plot(outdir, series, "trajectory", "formation response")
    else:
        _write_plot(
            outdir, [("W", trace.times, trace.metrics)], "metric-vs-time",
            "formation response", ylabel="W (env units)",
        )
    return {
        "outcome": trace.outcome.value,
        "steps": trace.steps,
        "final_metric": float(trace.metrics[-1]),
    }


def _run_sweep(config: ExperimentConfig, outdir: str) -> dict:
    sim_config = config.sim_config()
    if config.mode == "sweep-rotation":
        policy = HomingPolicy.build(config.anchors, config.goal, alpha=config.alpha)
        sweep = rotation_sweep_homing(
            policy, sim_config, n_theta=config.n_theta,
            trials=config.trials, eps=config.epsilon,
        )
    else:
        policy = FormationPolicy.build(config.anchors, alpha=config.alpha)
        sweep = rotation_sweep_formation(
            policy, sim_config, n_theta=config.n_theta,
            trials=config.trials, eps=config.epsilon,
        )
    rows = [[t, r, sweep.trials_per_point] for t, r in zip(sweep.grid, sweep.divergence_ratio)]
    _write_csv(
        os.path.join(outdir, "sweep.csv"),
        ["theta_rad", "divergence_ratio", "trials"],
        rows,
    )
    _write_plot(
        outdir,
        [("diverged", sweep.grid, sweep.divergence_ratio)],
        "ratio-vs-theta",
        f"{config.mode}: divergence ratio",
    )
    return {
        "n_theta": config.n_theta,
        "trials_per_point": sweep.trials_per_point,
        "max_ratio": float(sweep.divergence_ratio.max()),
        "min_ratio": float(sweep.divergence_ratio.min()),
    }


def _run_noise(config: ExperimentConfig, outdir: str) -> dict:
    policy = HomingPolicy.build(config.anchors, config.goal, alpha=config.alpha)
    results = noise_experiment(
        policy, config.sim_config(), eps_list=config.epsilons, trials=config.trials,
    )
    header = ["epsilon_env", "trial", "t_s", "agent", *_coord_header(config.dim), "v_env2"]
    rows = []
    series = []
    per_eps = {}
    goal = np.asarray(config.goal, dtype=float)
    for eps, traces in results.items():
        final_dists = []
        outcomes = []
        for ti, trace in enumerate(traces):
            for k, t in enumerate(trace.times):
                rows.append([eps, ti, t, 0, *trace.states[k], trace.metrics[k]])
            final_dists.append(float(np.linalg.norm(trace.states[-1] - goal)))
            outcomes.append(trace.outcome.value)
            label = f"eps={eps:g}" if ti == 0 else ""
            series.append((label, trace.times, trace.metrics))
        per_eps[f"{eps:g}"] = {
            "outcomes": outcomes,
            "max_final_distance": max(final_dists),
        }
    _write_csv(os.path.join(outdir, "trajectory.csv"), header, rows)
    _write_plot(
        outdir, series, "metric-vs-time", "homing under measurement noise",
        ylabel="V (env units^2)",
    )
    return {"per_epsilon": per_eps}


def _run_offset(config: ExperimentConfig, outdir: str) -> dict:
    policy = FormationPolicy.build(config.anchors, alpha=config.alpha)
    runs = offset_experiment_formation(
        policy, np.asarray(config.offset, dtype=float),
        config.sim_config(), eps=config.epsilon,
    )
    header = ["set", "t_s", "agent", *_coord_header(config.dim), "w_env"]
    rows = []
    for si, (states, metrics) in enumerate(
        [(runs.states_a, runs.metrics_a), (runs.states_b, runs.metrics_b)]
    ):
        for k, t in enumerate(runs.times):
            for agent in range(policy.agent_count):
                rows.append([si, t, agent, *states[k][:, agent], metrics[k]])
    _write_csv(os.path.join(outdir, "trajectory.csv"), header, rows)
    if config.dim == 2:
        series = []
        for k in range(policy.agent_count):
            series.append(
                ("set A" if k == 0 else "", runs.states_a[:, 0, k], runs.states_a[:, 1, k])
            )
            series.append(
                ("set B" if k == 0 else "", runs.states_b[:, 0, k], runs.states_b[:, 1, k])
            )
        _write_plot(outdir, series, "trajectory", "translated formation pair")
    else:
        _write_plot(
            outdir,
            [("W set A", runs.times, runs.metrics_a), ("W set B", runs.times, runs.metrics_b)],
            "metric-vs-time", "translated formation pair", ylabel="W (env units)",
        )
    centroid_gap = runs.states_b[-1].mean(axis=1) - runs.states_a[-1].mean(axis=1)
    return {
        "outcome_a": runs.outcome_a.value,
        "outcome_b": runs.outcome_b.value,
        "final_centroid_gap": [float(v) for v in centroid_gap],
        "requested_translation": [float(v) for v in config.offset],
        "max_metric_mismatch": float(np.abs(runs.metrics_a - runs.metrics_b).max()),
    }


_RUNNERS = {
    "recover": _run_recover,
    "home": _run_home,
    "formation": _run_formation,
    "sweep-rotation": _run_sweep,
    "sweep-rotation-formation": _run_sweep,
    "noise": _run_noise,
    "offset": _run_offset,
}


def run(config: ExperimentConfig) -> dict:
    """Run the configured experiment and write its artifacts; returns the
    summary that was written to ``summary.json``."""
    outdir = config.output_dir
    os.makedirs(outdir, exist_ok=True)
    results = _RUNNERS[config.mode](config, outdir)
    return _write_summary(outdir, config, results)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="distcoupled",
        description="Distance-driven homing and formation control experiments.",
    )
    sub = parser.add_subparsers(dest="mode", required=True, metavar="|".join(MODES))
    for mode in MODES:
        p = sub.add_parser(mode, help=f"run the {mode} experiment")
        p.add_argument("--config", help="path to a flat key-value config file")
        p.add_argument("--seed", type=int, help="root RNG seed (nonnegative)")
        p.add_argument("--out", help="output directory for artifacts")
        p.add_argument("--alpha", type=float, help="feedback gain scale (stable when < 0)")
        p.add_argument("--dt", type=float, help="integration step (s)")
        p.add_argument("--tmax", type=float, help="simulation horizon (s)")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {
        "seed": args.seed,
        "out": args.out,
        "alpha": args.alpha,
        "dt": args.dt,
        "tmax": args.tmax,
    }
    try:
        if args.config:
            config = parse_config_file(args.config, mode=args.mode, overrides=overrides)
        else:
            values = {"mode": args.mode}
            values.update({k: v for k, v in overrides.items() if v is not None})
            config = resolve_config(values)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3

    try:
        summary = run(config)
    except (DegenerateAnchors, DegenerateConfiguration) as exc:
        print(f"numerical degeneracy: {exc}", file=sys.stderr)
        return 4
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3
    print(json.dumps(summary["results"], indent=2, sort_keys=True))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
