"""Command-line workflows: calibrate, sample, sweep, plan and diagnose.

Runs are described by an INI file::

    [schedule]
    schedule = linear            ; linear | trig

    [field]
    family = gaussian            ; gaussian | mixture | stiff | suite_mixture | small_mixture | suite_stiff
    dim = 2
    mean = [0.0, 0.0]            ; gaussian: mean, covariance (scalar or list)
    ; mixture: weights, means (list of lists), covariances
    ; stiff: omega, amplitude

    [grid]
    K = 50                       ; or: times = [1.0, ..., 0.0]

    [policy]
    policy = sencache            ; sencache | teacache_like | magcache_like | uniform | none
    epsilon = 0.05
    epsilon_guard = 0.01
    guard_fraction = 0.2
    n = 3
    keep_every = 2
    profile = profile.csv        ; optional, relative to the config file

    [calibration]
    num_samples = 8
    seed = 7
    perturbation_scale = 0.1
    dt_probe =                   ; empty: a quarter of each step
    aggregate = mean

    [run]
    seeds = [0, 1, 2]
    out = out
    trajectories = false

Extra sections named ``field:<label>`` add fields to ``diagnose``.  List
values are JSON.  Exit codes: 1 configuration, 2 numeric, 3 I/O.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import json
import sys
from dataclasses import dataclass, field as dc_field, replace
from pathlib import Path

import numpy as np

from . import presets
from .bench import ReferenceCache, max_relative_deviation, plan_vs_uniform, run_seeds, summarize
from .errors import ConfigError, NumericError, PreconditionError, SenCacheError
from .field import GaussianField, GaussianMixtureField, StiffSyntheticField, VelocityField
from .metrics import compare_runs, consecutive_step_mae, write_run_reports, write_step_csv
from .policy import CachePolicyConfig, make_policy, static_decisions, static_nfe
from .sampler import TimestepGrid, sample_reference, sample_with_policy
from .schedule import InterpolantSchedule
from .sensitivity import CalibrationConfig, SensitivityProfile, calibrate

EXIT_CONFIG = 1
EXIT_NUMERIC = 2
EXIT_IO = 3

PRESETS = {
    "suite_mixture": presets.suite_mixture,
    "small_mixture": presets.small_mixture,
    "suite_stiff": presets.suite_stiff,
}


@dataclass
class RunConfig:
    field: VelocityField
    grid: TimestepGrid
    policy: str
    policy_config: CachePolicyConfig
    keep_every: int
    profile_path: Path | None
    calibration: CalibrationConfig
    seeds: list[int]
    out: Path
    trajectories: bool
    extra_fields: dict[str, VelocityField] = dc_field(default_factory=dict)
    config_hash: str = ""


def _json(section, key, default=None):
    raw = section.get(key)
    if raw is None or raw.strip() == "":
        if default is None:
            raise ConfigError(f"[{section.name}] missing key {key!r}")
        return default
    try:
        return json.loads(raw)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"[{section.name}] {key}: not valid JSON ({exc.msg})") from None


def _number(section, key, default=None, kind=float):
    raw = section.get(key)
    if raw is None or raw.strip() == "":
        if default is None:
            raise ConfigError(f"[{section.name}] missing key {key!r}")
        return default
    try:
        return kind(raw)
    except ValueError:
        raise ConfigError(f"[{section.name}] {key}: expected {kind.__name__}, got {raw!r}") from None


def _section(cp: configparser.ConfigParser, name: str):
    if not cp.has_section(name):
        raise ConfigError(f"missing section [{name}]")
    return cp[name]


def parse_field(section, schedule: InterpolantSchedule) -> VelocityField:
    family = section.get("family")
    if not family:
        raise ConfigError(f"[{section.name}] missing key 'family'")
    family = family.strip().strip('"').lower()
    if family in PRESETS:
        return PRESETS[family]()
    if family == "gaussian":
        if "mean" in section:
            mean = _json(section, "mean")
        else:
            mean = [0.0] * _number(section, "dim", kind=int)
        return GaussianField(mean, _json(section, "covariance", 1.0), schedule)
    if family == "mixture":
        return GaussianMixtureField(_json(section, "weights"), _json(section, "means"),
                                    _json(section, "covariances", 1.0), schedule)
    if family == "stiff":
        return StiffSyntheticField(_number(section, "omega", 12.0), _number(section, "amplitude", 1.0),
                                   _number(section, "dim", 4, int))
    raise ConfigError(f"[{section.name}] unknown family {family!r}")


def _parse_seeds(text: str) -> list[int]:
    """Accepts a JSON list, ``a,b,c`` or ``a-b`` (inclusive)."""
    text = text.strip()
    try:
        if text.startswith("["):
            seeds = [int(s) for s in json.loads(text)]
        elif "-" in text[1:]:
            lo, hi = text.split("-", 1)
            seeds = list(range(int(lo), int(hi) + 1))
        else:
            seeds = [int(s) for s in text.split(",") if s.strip()]
    except (ValueError, TypeError, json.JSONDecodeError):
        raise ConfigError(f"cannot parse seeds {text!r}") from None
    if not seeds:
        raise ConfigError("no seeds given")
    return seeds


def load_config(path, seeds: str | None = None, out: str | None = None) -> RunConfig:
    path = Path(path)
    text = path.read_text()
    cp = configparser.ConfigParser(inline_comment_prefixes=(";",))
    try:
        cp.read_string(text, source=str(path))
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None

    sched_sec = cp["schedule"] if cp.has_section("schedule") else {}
    schedule = InterpolantSchedule(sched_sec.get("schedule", "linear").strip().strip('"'))
    fld = parse_field(_section(cp, "field"), schedule)
    extra = {name.split(":", 1)[1]: parse_field(cp[name], schedule)
             for name in cp.sections() if name.startswith("field:")}

    g = _section(cp, "grid")
    if g.get("times"):
        grid = TimestepGrid(_json(g, "times"))
    else:
        grid = TimestepGrid.uniform(_number(g, "K", kind=int))

    p = cp["policy"] if cp.has_section("policy") else cp["DEFAULT"]
    policy = p.get("policy", "none").strip().strip('"')
    pcfg = CachePolicyConfig(
        epsilon=_number(p, "epsilon", 0.1),
        max_reuse=_number(p, "n", 3, int),
        epsilon_guard=_number(p, "epsilon_guard", 0.01),
        guard_fraction=_number(p, "guard_fraction", 0.2),
    )
    profile_path = None
    if p.get("profile"):
        profile_path = (path.parent / p.get("profile").strip()).resolve()

    c = cp["calibration"] if cp.has_section("calibration") else cp["DEFAULT"]
    dt_probe = c.get("dt_probe")
    calib = CalibrationConfig(
        num_samples=_number(c, "num_samples", 8, int),
        seed=_number(c, "seed", 0, int),
        perturbation_scale=_number(c, "perturbation_scale", 0.1),
        dt_probe=float(dt_probe) if dt_probe and dt_probe.strip() else None,
        aggregate=c.get("aggregate", "mean").strip(),
    )
    calib.validate_for(grid)

    r = cp["run"] if cp.has_section("run") else cp["DEFAULT"]
    seed_list = _parse_seeds(seeds if seeds is not None else r.get("seeds", "[0]"))
    out_dir = Path(out) if out is not None else path.parent / r.get("out", "out").strip()
    trajectories = r.get("trajectories", "false").strip().lower() in ("1", "true", "yes")

    canonical = json.dumps({s: dict(cp[s]) for s in cp.sections()}, sort_keys=True)
    config_hash = hashlib.sha256(canonical.encode()).hexdigest()[:16]
    return RunConfig(fld, grid, policy, pcfg, _number(p, "keep_every", 1, int), profile_path, calib,
                     seed_list, out_dir, trajectories, extra, config_hash)


def _load_profile(cfg: RunConfig) -> SensitivityProfile:
    """The configured profile file, or a fresh calibration when none is set."""
    if cfg.profile_path is None:
        return calibrate(cfg.field, cfg.grid, cfg.calibration)
    profile = SensitivityProfile.from_csv(cfg.profile_path)
    if profile.grid_hash != cfg.grid.grid_hash:
        raise ConfigError(f"grid mismatch: profile {cfg.profile_path.name} was calibrated on grid "
                          f"{profile.grid_hash[:12]}, config grid is {cfg.grid.grid_hash[:12]}")
    return profile


def _needs_profile(policy: str) -> bool:
    return policy not in ("none", "uniform")


def _write_rows(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format(v, ".17g") if isinstance(v, float) else v for v in row])


def cmd_calibrate(cfg: RunConfig, args) -> Path:
    profile = calibrate(cfg.field, cfg.grid, cfg.calibration)
    path = cfg.out / "profile.csv"
    profile.to_csv(path)
    return path


def cmd_sample(cfg: RunConfig, args) -> Path:
    profile = _load_profile(cfg) if _needs_profile(cfg.policy) else None
    refs = ReferenceCache(cfg.field, cfg.grid)
    reports = []
    for seed in cfg.seeds:
        ref = refs[seed]
        _, base = sample_with_policy(cfg.field, cfg.grid, seed, make_policy("none"))
        reports.append(base.attach(compare_runs(ref, ref)))
        policy = make_policy(cfg.policy, profile, cfg.policy_config, cfg.keep_every)
        traj, report = sample_with_policy(cfg.field, cfg.grid, seed, policy)
        reports.append(report.attach(compare_runs(ref, traj)))
        write_step_csv(cfg.out / f"steps_seed{seed}.csv", report)
        if cfg.trajectories:
            ref.to_csv(cfg.out / f"trajectory_reference_seed{seed}.csv")
            traj.to_csv(cfg.out / f"trajectory_{report.policy}_seed{seed}.csv")
    path = cfg.out / "runs.csv"
    write_run_reports(path, reports, cfg.config_hash)
    return path


SUMMARY_COLUMNS = ["value", "mean_nfe", "mean_cache_ratio", "mean_terminal_mse",
                   "mean_terminal_psnr", "mean_trajectory_rel_l2", "runs"]


def _sweep_values(axis: str, raw: str | None) -> list:
    if raw is None:
        defaults = {"n": "1,2,3,4,5,6,7", "calib_size": "1,8,64,512"}
        if axis not in defaults:
            raise ConfigError(f"sweep over {axis} needs --values")
        raw = defaults[axis]
    kind = float if axis == "epsilon" else int
    try:
        values = [kind(v) for v in raw.split(",") if v.strip()]
    except ValueError:
        raise ConfigError(f"cannot parse sweep values {raw!r}") from None
    if not values:
        raise ConfigError("empty sweep")
    return values


def cmd_sweep(cfg: RunConfig, args) -> Path:
    axis = args.axis
    values = _sweep_values(axis, args.values)
    path = cfg.out / f"sweep_{axis}_{args.mode}.csv"

    if axis == "calib_size":
        profiles = [calibrate(cfg.field, cfg.grid, replace(cfg.calibration, num_samples=v)) for v in values]
        largest = profiles[int(np.argmax(values))]
        _write_rows(path, ["value", "max_relative_deviation"],
                    [(v, max_relative_deviation(p, largest)) for v, p in zip(values, profiles)])
        return path

    if cfg.policy not in ("sencache", "teacache_like", "magcache_like"):
        raise ConfigError(f"sweeps need a threshold policy, got {cfg.policy!r}")
    profile = _load_profile(cfg)
    refs = ReferenceCache(cfg.field, cfg.grid)

    def config_for(v):
        if axis == "epsilon":
            return replace(cfg.policy_config, epsilon=v)
        return replace(cfg.policy_config, max_reuse=v)

    if args.mode == "static":
        rows = []
        for v in values:
            for seed in cfg.seeds:
                decisions = static_decisions(refs[seed], profile, config_for(v), cfg.policy)
                hits = [d.step for d in decisions if d.hit]
                rows.append((v, seed, static_nfe(decisions), " ".join(map(str, hits))))
        _write_rows(path, ["value", "seed", "nfe", "hit_steps"], rows)
        return path

    rows = []
    for v in values:
        pc = config_for(v)
        reports = run_seeds(refs, cfg.seeds, lambda: make_policy(cfg.policy, profile, pc))
        s = summarize(reports, v)
        rows.append((v, s.mean_nfe, s.mean_cache_ratio, s.mean_terminal_mse, s.mean_terminal_psnr,
                     s.mean_rel_l2, s.runs))
    _write_rows(path, SUMMARY_COLUMNS, rows)
    return path


def cmd_plan(cfg: RunConfig, args) -> Path:
    profile = _load_profile(cfg)
    results = plan_vs_uniform(cfg.field, cfg.grid, profile, args.budget, cfg.seeds)
    grid_rows = []
    for r in results:
        grid_rows += [(r.seed, j, float(t)) for j, t in enumerate(r.planned_grid.times)]
    _write_rows(cfg.out / "planned_grid.csv", ["seed", "index", "t"], grid_rows)
    path = cfg.out / "plan_comparison.csv"
    _write_rows(path, ["seed", "budget", "planned_terminal_mse", "uniform_terminal_mse", "planned_better"],
                [(r.seed, args.budget, r.planned_error, r.uniform_error, int(r.planned_error < r.uniform_error))
                 for r in results])
    return path


def cmd_diagnose(cfg: RunConfig, args) -> Path:
    fields = {"field": cfg.field, **cfg.extra_fields}
    rows = []
    for label, fld in fields.items():
        for seed in cfg.seeds:
            ref = sample_reference(fld, cfg.grid, seed)
            mae = consecutive_step_mae(ref)
            rows += [(label, seed, cfg.grid.K - i - 1, float(ref.times[i + 1]), float(v))
                     for i, v in enumerate(mae)]
    path = cfg.out / "mae.csv"
    _write_rows(path, ["field", "seed", "step", "t", "mae"], rows)
    return path


COMMANDS = {
    "calibrate": cmd_calibrate,
    "sample": cmd_sample,
    "sweep": cmd_sweep,
    "plan": cmd_plan,
    "diagnose": cmd_diagnose,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sencache", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="INI run config")
        p.add_argument("--out", help="output directory (overrides [run] out)")
        p.add_argument("--seeds", help="JSON list, comma list or inclusive range a-b")
        if name == "sweep":
            p.add_argument("--axis", required=True, choices=["epsilon", "n", "calib_size"])
            p.add_argument("--values", help="comma-separated values")
            p.add_argument("--mode", choices=["adaptive", "static"], default="adaptive")
        if name == "plan":
            p.add_argument("--budget", type=int, default=25)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.seeds, args.out)
        cfg.out.mkdir(parents=True, exist_ok=True)
        path = COMMANDS[args.command](cfg, args)
    except (NumericError, ArithmeticError) as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ConfigError, PreconditionError, SenCacheError, ValueError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
