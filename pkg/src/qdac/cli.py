"""Command-line runner: ``python -m qdac <subcommand> [--config FILE] ...``.

The config file is flat ``key = value`` text (``#`` starts a comment).  Flags
override file values; unknown keys are rejected with the offending line.
Every artifact goes to ``<output_dir>/<subcommand>/<seed>/`` next to a
``manifest.json``.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 verification failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import glob
import hashlib
import json
import subprocess
import sys
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import adapt, agent, approx, envs, metrics, tabular

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_VERIFY = 0, 2, 3, 4
SUBCOMMANDS = ("train", "profile", "adapt", "hier", "verify", "gradcheck")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    env: str = "point_velocity"
    mode: str = "QDAC"
    seed: int = 0
    replication: int = 0
    output_dir: str = "out"
    # learner
    gamma: float = 0.99
    tau: float = 0.005
    lr: float = 3e-4
    batch_size: int = 32
    relabel: bool = True
    hidden: tuple = (32, 32)
    buffer_capacity: int = 200_000
    total_steps: int = 200_000
    warmup_steps: int = 1000
    target_entropy: Optional[float] = None
    init_log_beta: float = 0.0
    lambda0: Optional[float] = None
    delta: Optional[float] = None
    log_every: int = 1000
    # evaluation
    checkpoint: str = ""
    grid_per_dim: int = 21
    n_rollouts: int = 10
    # adaptation
    perturbation: str = "action_scale"
    perturbation_index: int = 0
    levels: tuple = (1.0, 0.75, 0.5, 0.25, 0.0)
    wall_x: float = 2.0
    wall_gap_halfwidth: float = 0.5
    wall_gap_center: float = 1.5
    meta_steps: int = 20_000
    macro_k: int = 10
    # oracles
    verify_instances: int = 200
    verify_skills: int = 5
    gradcheck_cases: int = 100

    def qdac_config(self) -> agent.QdacConfig:
        names = {f.name for f in dataclasses.fields(agent.QdacConfig)}
        return agent.QdacConfig(**{k: v for k, v in dataclasses.asdict(self).items() if k in names})

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}
_NONE = ("", "none", "null")


def _parse_value(key: str, text: str):
    default = _FIELDS[key].default
    text = text.strip()
    if key in ("hidden", "levels"):
        kind = int if key == "hidden" else float
        parts = [p for p in text.replace(" ", "").split(",") if p]
        if not parts:
            raise ValueError("expected a comma-separated list")
        return tuple(kind(p) for p in parts)
    if default is None:
        return None if text.lower() in _NONE else float(text)
    if isinstance(default, bool):
        low = text.lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise ValueError(f"expected a boolean, got {text!r}")
        return low in ("true", "1", "yes")
    if isinstance(default, int):
        return int(text)
    if isinstance(default, float):
        return float(text)
    return text


def _assign(values: dict, key: str, text: str, where: str) -> None:
    key = key.strip()
    if key not in _FIELDS:
        raise ConfigError(f"{where}: unknown key {key!r}")
    try:
        values[key] = _parse_value(key, text)
    except ValueError as exc:
        raise ConfigError(f"{where}: bad value for {key!r}: {exc}") from None


def load_config(path=None, overrides=(), seed=None, out=None, mode=None) -> ExperimentConfig:
    values = {}
    if path is not None:
        try:
            lines = Path(path).read_text().splitlines()
        except OSError as exc:
            raise ConfigError(f"{path}: {exc.strerror}") from None
        for lineno, line in enumerate(lines, 1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            if "=" not in body:
                raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
            key, text = body.split("=", 1)
            _assign(values, key, text, f"{path}:{lineno}")
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--override {item!r}: expected key=value")
        key, text = item.split("=", 1)
        _assign(values, key, text, f"--override {item}")
    if seed is not None:
        values["seed"] = seed
    if out is not None:
        values["output_dir"] = out
    if mode is not None:
        values["mode"] = mode
    try:
        cfg = ExperimentConfig(**values)
        if cfg.env not in envs.ENVS:
            raise ValueError(f"unknown env {cfg.env!r}")
        cfg.qdac_config()
        if cfg.grid_per_dim < 2 or cfg.n_rollouts < 1 or cfg.macro_k < 1:
            raise ValueError("grid_per_dim >= 2, n_rollouts >= 1 and macro_k >= 1 required")
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid configuration: {exc}") from None
    return cfg


# -- helpers ------------------------------------------------------------------------


def _git_describe() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty", "--tags"],
                             capture_output=True, text=True, timeout=10,
                             cwd=Path(__file__).resolve().parent)
        return out.stdout.strip() or "unknown"
    except (OSError, subprocess.SubprocessError):
        return "unknown"


def _run_dir(cfg: ExperimentConfig, sub: str) -> Path:
    d = Path(cfg.output_dir) / sub / str(cfg.seed)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write_manifest(run_dir: Path, cfg, sub, started, artifacts, status) -> None:
    manifest = {
        "subcommand": sub,
        "config": cfg.to_dict(),
        "config_hash": cfg.digest(),
        "git_describe": _git_describe(),
        "wall_clock_seconds": time.time() - started,
        "artifacts": sorted(artifacts),
        "status": status,
    }
    (run_dir / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))


def _checkpoint_dir(cfg: ExperimentConfig) -> Path:
    if cfg.checkpoint:
        return Path(cfg.checkpoint)
    return Path(cfg.output_dir) / "train" / str(cfg.seed) / "checkpoint"


def _load_policy(cfg: ExperimentConfig):
    env = envs.make_env(cfg.env)
    path = _checkpoint_dir(cfg)
    if not (path / "agent.json").exists():
        raise ConfigError(f"no checkpoint at {path}; run 'train' first or set checkpoint")
    return env, agent.load_agent(path, env.spec)


def _f(v) -> str:
    return f"{v:.17g}"


# -- subcommands --------------------------------------------------------------------


def cmd_train(cfg, run_dir):
    env = envs.make_env(cfg.env)
    ckpt = run_dir / "checkpoint"
    agent.train(env, cfg.qdac_config(), log_path=run_dir / "train_log.csv", checkpoint_dir=ckpt)
    return ["train_log.csv", "checkpoint"], EXIT_OK


def cmd_profile(cfg, run_dir):
    env, ag = _load_policy(cfg)
    grid = metrics.skill_grid(env.spec.skill_low, env.spec.skill_high, cfg.grid_per_dim)
    recs = metrics.evaluate_grid(ag.policy(), env, grid, cfg.n_rollouts, cfg.seed)
    d_eval = env.spec.d_eval
    metrics.write_records_csv(run_dir / "records.csv", recs)
    d_max = max(r.d for r in recs)
    d_grid = np.linspace(0.0, max(d_max, d_eval) * 1.05, 101)
    metrics.write_curve_csv(run_dir / "distance_profile.csv", "d",
                            d_grid, metrics.distance_profile(recs, d_grid))
    r_lo, r_hi = min(r.R for r in recs), max(r.R for r in recs)
    r_grid = np.linspace(r_lo - 1.0, r_hi + 1.0, 101)
    metrics.write_curve_csv(run_dir / "performance_profile.csv", "R",
                            r_grid, metrics.performance_profile(recs, d_eval, r_grid))
    artifacts = ["records.csv", "distance_profile.csv", "performance_profile.csv", "scores.json"]
    if env.spec.feature_dim == 2:
        metrics.write_heatmap_csv(run_dir / "heatmap.csv", recs, d_eval)
        artifacts.append("heatmap.csv")
    dist, perf = metrics.scores(recs, d_eval)
    # IQM/CI over every replication profiled into the same output directory
    perf_all = [perf]
    for other in sorted(glob.glob(str(run_dir.parent / "*" / "scores.json"))):
        if Path(other).parent != run_dir:
            perf_all.append(json.loads(Path(other).read_text())["performance_score"])
    if len(perf_all) >= 2:
        mid, lo, hi = metrics.iqm_ci(perf_all, seed=cfg.seed)
        iqm, ci = mid, [lo, hi]
    else:
        iqm, ci = None, None
    scores = {"distance_score": dist, "performance_score": perf, "iqm": iqm, "ci": ci,
              "n_replications": len(perf_all), "d_eval": d_eval}
    (run_dir / "scores.json").write_text(json.dumps(scores, indent=1, sort_keys=True))
    return artifacts, EXIT_OK


def cmd_adapt(cfg, run_dir):
    env, ag = _load_policy(cfg)
    grid = metrics.skill_grid(env.spec.skill_low, env.spec.skill_high, cfg.grid_per_dim)
    extra = {"index": cfg.perturbation_index} if cfg.perturbation == "action_scale" else {}
    family = adapt.perturbation_family(cfg.perturbation, **extra)
    try:
        envs.apply_perturbation(env, family(1.0))
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid perturbation: {exc}") from None
    curve = adapt.few_shot_select(ag.policy(), env, family, cfg.levels, grid, cfg.n_rollouts,
                                  cfg.seed)
    curve.write_csv(run_dir / "adapt.csv", run_dir / "adapt_table.csv")
    return ["adapt.csv", "adapt_table.csv"], EXIT_OK


def cmd_hier(cfg, run_dir):
    env, ag = _load_policy(cfg)
    if cfg.env != "point_velocity":
        raise ConfigError("hier needs a point_velocity checkpoint")
    wall = envs.Wall(cfg.wall_x, cfg.wall_gap_halfwidth, cfg.wall_gap_center)
    wenv = envs.apply_perturbation(env, wall)
    meta_cfg = dataclasses.replace(cfg.qdac_config(), mode="PLAIN_SAC",
                                   total_steps=cfg.meta_steps, delta=None)
    result, meta_env = adapt.hierarchical_train(ag.policy(), wenv, meta_cfg, cfg.macro_k,
                                                log_path=run_dir / "meta_log.csv")
    trace = adapt.meta_rollout(result.agent.policy(), meta_env, cfg.seed)
    fixed = adapt.meta_rollout(None, meta_env, cfg.seed, deterministic_skill=(1.0, 0.0))
    adapt.write_trace_csv(run_dir / "trace.csv", trace)
    adapt.write_trace_csv(run_dir / "fixed_skill_trace.csv", fixed)
    summary = {"wall_x": cfg.wall_x, "final_x_meta": trace[-1][1], "final_x_fixed": fixed[-1][1]}
    (run_dir / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True))
    return ["meta_log.csv", "trace.csv", "fixed_skill_trace.csv", "summary.json"], EXIT_OK


def verify_corpus(n_instances, n_skills, seed):
    """Randomised certification rows for the stochastic corpus."""
    rows = []
    for i in range(n_instances):
        rng = np.random.default_rng([seed, i])
        S, A, d = int(rng.integers(1, 11)), int(rng.integers(1, 5)), int(rng.integers(1, 4))
        gamma = (0.9, 0.99)[i % 2]
        mdp = tabular.random_mdp(rng, S, A, d, gamma)
        pi = tabular.random_policy(rng, S, A)
        eps = tabular.epsilon_prop2(mdp, pi)
        for _ in range(n_skills):
            z = rng.uniform(-0.5, 1.5, size=d)
            cert = tabular.certify_prop1(mdp, pi, z)
            rows.append((i, S, A, d, gamma, cert.lhs, cert.rhs, eps, cert.holds))
    return rows


def cmd_verify(cfg, run_dir):
    rows = verify_corpus(cfg.verify_instances, cfg.verify_skills, cfg.seed)
    with open(run_dir / "verify.csv", "w") as fh:
        fh.write("instance_id,seed,S,A,d,gamma,lhs,rhs,epsilon,holds\n")
        for i, S, A, d, g, lhs, rhs, eps, holds in rows:
            fh.write(f"{i},{cfg.seed},{S},{A},{d},{_f(g)},{_f(lhs)},{_f(rhs)},{_f(eps)},"
                     f"{str(holds).lower()}\n")
    ok = all(r[-1] for r in rows)
    return ["verify.csv"], EXIT_OK if ok else EXIT_VERIFY


GRADCHECK_FAMILIES = (
    ((3, 8, 2), "relu", "linear"),
    ((4, 16, 16, 3), "relu", "linear"),
    ((5, 8, 8, 1), "tanh", "linear"),
    ((4, 8, 1), "relu", "sigmoid"),
)


def gradcheck_rows(n_cases, seed, h=1e-5):
    rows = []
    rng = np.random.default_rng(seed)
    for fam, (sizes, act, out) in enumerate(GRADCHECK_FAMILIES):
        spec = approx.MlpSpec(sizes, act, out)
        for case in range(n_cases):
            params = approx.mlp_init(spec, int(rng.integers(2**31)))
            params = params.with_flat(params.flat + 0.1 * rng.standard_normal(spec.n_params))
            x = rng.standard_normal(spec.n_in)
            up = rng.standard_normal(spec.n_out)
            grad, _ = approx.mlp_backward(params, x, up)
            fd = approx.numerical_gradient(
                lambda f: float(up @ approx.mlp_forward(params.with_flat(f), x)), params.flat, h)
            err = float(np.max(np.abs(grad - fd)) / (1.0 + np.max(np.abs(grad))))
            rows.append((f"{'x'.join(map(str, sizes))}-{act}-{out}", case, err, err < 1e-4))
    return rows


def cmd_gradcheck(cfg, run_dir):
    rows = gradcheck_rows(cfg.gradcheck_cases, cfg.seed)
    with open(run_dir / "gradcheck.csv", "w") as fh:
        fh.write("family,case,rel_error,passed\n")
        for fam, case, err, ok in rows:
            fh.write(f"{fam},{case},{_f(err)},{str(ok).lower()}\n")
    return ["gradcheck.csv"], EXIT_OK if all(r[-1] for r in rows) else EXIT_VERIFY


COMMANDS = {"train": cmd_train, "profile": cmd_profile, "adapt": cmd_adapt, "hier": cmd_hier,
            "verify": cmd_verify, "gradcheck": cmd_gradcheck}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qdac", description=__doc__.splitlines()[0])
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (overrides output_dir)")
    p.add_argument("--override", action="append", default=[], metavar="KEY=VALUE")
    p.add_argument("--mode", choices=agent.MODES)
    return p


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.override, args.seed, args.out, args.mode)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    started = time.time()
    run_dir = _run_dir(cfg, args.subcommand)
    try:
        artifacts, status = COMMANDS[args.subcommand](cfg, run_dir)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (agent.NumericalError, approx.NonFiniteError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        _write_manifest(run_dir, cfg, args.subcommand, started,
                        [p.name for p in run_dir.iterdir() if p.name != "manifest.json"],
                        "numerical_failure")
        return EXIT_NUMERIC
    _write_manifest(run_dir, cfg, args.subcommand, started, artifacts,
                    "ok" if status == EXIT_OK else "verification_failed")
    if status == EXIT_VERIFY:
        print(f"{args.subcommand}: verification failed, see {run_dir}", file=sys.stderr)
    return status


def main() -> None:
    sys.exit(run())
