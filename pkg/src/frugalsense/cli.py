"""Command-line entry point: ``frugalsense <command> [options]``.

Commands: gen-data, fit-gp, baseline, train, sweep, eval. Every command
accepts the global flags ``--config`` (JSON run config), ``--seed`` and
``--out``.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from dataclasses import fields, replace

import numpy as np

from . import benchmark as bm
from . import evaluation as ev
from . import gp, nn, policies, ppo
from .env import write_trajectory
from .errors import ConfigError, FrugalSenseError, SpanError
from .timeseries import (SLOTS_PER_DAY, SLOTS_PER_WEEK, Dataset, SyntheticProfile, load_csv,
                         load_holidays, split, write_csv, write_holidays)

# ---------------------------------------------------------------- config ---

_PROFILE_KEYS = {f.name for f in fields(SyntheticProfile)}
_SCHEMA = {
    "data": {"path", "holidays", "weeks", "profile"},
    "gp": {"params", "budget", "seed", "smoothness", "train_weeks"},
    "env": {"horizon_h", "budget_per_day", "reward_mode"},
    "ppo": {f.name for f in fields(ppo.PPOConfig)},
    "sweep": {"grid", "threads"},
    "eval": {"budget_per_day", "weekly_budget"},
}
DEFAULT_GRID = [
    {"seed": 0, "learning_rate": 3e-4},
    {"seed": 1, "learning_rate": 1e-3},
    {"seed": 2, "learning_rate": 3e-4, "gamma": 0.95},
    {"seed": 3, "learning_rate": 1e-3, "entropy_coef": 0.003},
]


def load_config(path: str | None) -> dict:
    """Read and validate a run config; unknown keys are rejected."""
    if path is None:
        cfg: dict = {}
    else:
        try:
            with open(path) as fh:
                cfg = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from None
    if not isinstance(cfg, dict):
        raise ConfigError("config must be a JSON object")
    unknown = set(cfg) - set(_SCHEMA)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    for section, keys in _SCHEMA.items():
        sec = cfg.setdefault(section, {})
        if not isinstance(sec, dict):
            raise ConfigError(f"section {section!r} must be an object")
        bad = set(sec) - keys
        if bad:
            raise ConfigError(f"unknown keys in {section!r}: {sorted(bad)}")
    prof = cfg["data"].get("profile", {}) or {}
    bad = set(prof) - _PROFILE_KEYS
    if bad:
        raise ConfigError(f"unknown profile keys: {sorted(bad)}")
    for key in ("path", "holidays"):
        p = cfg["data"].get(key)
        if p is not None and not os.path.exists(p):
            raise ConfigError(f"data.{key} not found: {p}")
    p = cfg["gp"].get("params")
    if isinstance(p, str) and not os.path.exists(p):
        raise ConfigError(f"gp.params not found: {p}")
    grid = cfg["sweep"].get("grid")
    if grid is not None:
        for g in grid:
            ppo.PPOConfig.from_dict(g)
    return cfg


def _dataset(args, cfg) -> Dataset:
    data = getattr(args, "data", None) or cfg["data"].get("path")
    hol_path = getattr(args, "holidays", None) or cfg["data"].get("holidays")
    if data:
        holidays = load_holidays(hol_path) if hol_path else ()
        return load_csv(data, holidays)
    prof = dict(cfg["data"].get("profile") or {})
    return bm.synthetic_dataset(SyntheticProfile(**prof), int(cfg["data"].get("weeks", bm.BENCHMARK_WEEKS)))


def _params(args, cfg, dataset: Dataset, out_dir: str | None) -> gp.KernelParams:
    path = getattr(args, "gp_params", None) or cfg["gp"].get("params")
    if isinstance(path, dict):
        return gp.KernelParams.from_dict(path)
    if path:
        return gp.KernelParams.load(path)
    train_weeks = int(cfg["gp"].get("train_weeks", bm.TRAIN_WEEKS))
    context = _context(dataset, train_weeks)
    params, lml0, lml1 = bm.fit_params(context, int(cfg["gp"].get("budget", 200)),
                                       int(cfg["gp"].get("seed", 0)),
                                       float(cfg["gp"].get("smoothness", 1.5)))
    if out_dir:
        params.save(os.path.join(out_dir, "gp_params.json"), log_likelihood=lml1,
                    initial_log_likelihood=lml0)
    return params


def _context(dataset: Dataset, weeks: int) -> Dataset:
    boundary = dataset.span[0] + weeks * SLOTS_PER_WEEK
    if boundary >= dataset.span[1]:
        raise SpanError(f"{weeks} training weeks exceed the dataset span {dataset.span}")
    return split(dataset, boundary)[0]


def _parse_span(text: str | None, dataset: Dataset, train_weeks: int = bm.TRAIN_WEEKS) -> tuple[int, int]:
    if not text:
        start = dataset.span[0] + train_weeks * SLOTS_PER_WEEK
        return start, min(start + SLOTS_PER_WEEK, dataset.span[1])
    try:
        a, b = (int(x) for x in text.split(":"))
    except ValueError:
        raise ConfigError(f"span must be START:END in slots, got {text!r}") from None
    return a, b


def _env_kwargs(cfg) -> dict:
    e = cfg["env"]
    return {"horizon_h": int(e.get("horizon_h", 24)),
            "budget_per_day": int(e.get("budget_per_day", bm.BUDGET_PER_DAY)),
            "reward_mode": e.get("reward_mode", "sparse_daily")}


def _ppo_config(args, cfg) -> ppo.PPOConfig:
    c = ppo.PPOConfig.from_dict(dict(cfg["ppo"]))
    if args.seed is not None:
        c = replace(c, seed=args.seed)
    return c


def _require_out(args, parser) -> str:
    if not args.out:
        parser.error(f"{args.command} requires --out")
    return args.out


def _write_json(obj, path) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ----------------------------------------------------------------- plots ---

def write_posterior(dataset: Dataset, schedule, params, span, context, path) -> tuple[float, float]:
    """Plot-ready posterior over ``span``; returns ``(fi, rmse)`` of the written values."""
    pred = ev.posterior_over_span(dataset, schedule, params, span, context)
    slots = np.arange(span[0], span[1])
    truth = dataset.values_at(slots)
    sampled = set(int(s) for s in schedule)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("slot", "truth", "mean", "sd", "sampled"))
        for s, t, m, sd in zip(slots, truth, pred.mean, pred.sd):
            w.writerow([int(s), repr(float(t)), repr(float(m)), repr(float(sd)), int(s in sampled)])
    return ev.fisher_information(pred.variance), ev.rmse(pred.mean, truth)


def write_svg(posterior_csv, path, width: int = 960, height: int = 300) -> None:
    """Minimal SVG line chart of truth, predicted mean and sampled slots."""
    with open(posterior_csv, newline="") as fh:
        rows = list(csv.DictReader(fh))
    x = np.array([int(r["slot"]) for r in rows], dtype=float)
    t = np.array([float(r["truth"]) for r in rows])
    m = np.array([float(r["mean"]) for r in rows])
    sd = np.array([float(r["sd"]) for r in rows])
    smp = np.array([r["sampled"] == "1" for r in rows])
    lo, hi = float(min(t.min(), (m - 2 * sd).min())), float(max(t.max(), (m + 2 * sd).max()))
    pad = 30

    def px(v):
        return pad + (v - x[0]) / max(x[-1] - x[0], 1) * (width - 2 * pad)

    def py(v):
        return height - pad - (v - lo) / max(hi - lo, 1e-9) * (height - 2 * pad)

    def poly(vals, color, w=1.0):
        pts = " ".join(f"{px(a):.1f},{py(b):.1f}" for a, b in zip(x, vals))
        return f'<polyline fill="none" stroke="{color}" stroke-width="{w}" points="{pts}"/>'

    band = " ".join(f"{px(a):.1f},{py(b):.1f}" for a, b in zip(x, m + 2 * sd))
    band += " " + " ".join(f"{px(a):.1f},{py(b):.1f}" for a, b in zip(x[::-1], (m - 2 * sd)[::-1]))
    dots = "".join(f'<circle cx="{px(a):.1f}" cy="{py(b):.1f}" r="2.5" fill="black"/>'
                   for a, b in zip(x[smp], t[smp]))
    svg = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">'
           f'<rect width="100%" height="100%" fill="white"/>'
           f'<polygon fill="#cfe0f5" stroke="none" points="{band}"/>'
           f'{poly(t, "#999999")}{poly(m, "#1f5fbf", 1.5)}{dots}'
           f'<text x="{pad}" y="18" font-size="12">truth (grey), mean and 2 sd (blue), samples (dots)</text>'
           f'</svg>\n')
    with open(path, "w") as fh:
        fh.write(svg)


# --------------------------------------------------------------- commands ---

def cmd_gen_data(args, cfg, parser) -> int:
    out = _require_out(args, parser)
    prof = dict(cfg["data"].get("profile") or {})
    for key, val in (("base_db", args.base_db), ("office_db", args.office_db),
                     ("weekend_attenuation", args.weekend_attenuation), ("noise_sd", args.noise_sd),
                     ("white_fraction", args.white_fraction), ("smooth_slots", args.smooth_slots)):
        if val is not None:
            prof[key] = val
    if args.holiday_days:
        prof["holidays"] = tuple(int(d) for d in args.holiday_days.split(","))
    if args.seed is not None:
        prof["seed"] = args.seed
    profile = SyntheticProfile(**prof)
    weeks = args.weeks if args.weeks is not None else int(cfg["data"].get("weeks", bm.BENCHMARK_WEEKS))
    data = bm.synthetic_dataset(profile, weeks)
    os.makedirs(out, exist_ok=True)
    write_csv(data, os.path.join(out, "data.csv"))
    write_holidays(profile.holidays, os.path.join(out, "holidays.txt"))
    print(f"wrote {len(data)} rows to {os.path.join(out, 'data.csv')}")
    return 0


def cmd_fit_gp(args, cfg, parser) -> int:
    out = _require_out(args, parser)
    data = _dataset(args, cfg)
    weeks = args.train_weeks if args.train_weeks is not None else int(cfg["gp"].get("train_weeks", bm.TRAIN_WEEKS))
    context = _context(data, weeks)
    seed = args.seed if args.seed is not None else int(cfg["gp"].get("seed", 0))
    budget = args.budget if args.budget is not None else int(cfg["gp"].get("budget", 200))
    params, lml0, lml1 = bm.fit_params(context, budget, seed, float(cfg["gp"].get("smoothness", 1.5)))
    parent = os.path.dirname(os.path.abspath(out))
    os.makedirs(parent, exist_ok=True)
    params.save(out, log_likelihood=lml1, initial_log_likelihood=lml0)
    print(f"initial log-likelihood {lml0:.6f}")
    print(f"fitted log-likelihood {lml1:.6f}")
    return 0


def cmd_baseline(args, cfg, parser) -> int:
    out = _require_out(args, parser)
    os.makedirs(out, exist_ok=True)
    data = _dataset(args, cfg)
    params = _params(args, cfg, data, out)
    weeks = int(cfg["gp"].get("train_weeks", bm.TRAIN_WEEKS))
    span = _parse_span(args.span, data, weeks)
    context = None if args.no_context else _context(data, weeks)
    n_day = args.budget_per_day if args.budget_per_day is not None else int(
        cfg["eval"].get("budget_per_day", bm.BUDGET_PER_DAY))
    seed = args.seed if args.seed is not None else 0
    if args.allocation == "day":
        if args.policy == "uniform":
            sched = policies.per_day(span, n_day, policies.uniform_schedule)
        elif args.policy == "random":
            sched = policies.per_day(span, n_day, lambda sp, n: policies.random_schedule(sp, n, seed + sp[0]))
        else:
            sched = policies.greedy_oracle_schedule(data, span, n_day, params, context, "day")
    else:
        n = args.budget if args.budget is not None else int(cfg["eval"].get("weekly_budget", bm.WEEKLY_BUDGET))
        if args.policy == "uniform":
            sched = policies.uniform_schedule(span, n)
        elif args.policy == "random":
            sched = policies.random_schedule(span, n, seed)
        else:
            sched = policies.greedy_oracle_schedule(data, span, n, params, context, "span")
    rep = ev.evaluate_schedule(data, sched, params, span, context, policy=args.policy)
    ev.write_reports([rep], os.path.join(out, "comparison.csv"), append=True)
    policies.write_schedule(sched, os.path.join(out, f"schedule_{args.policy}.txt"))
    fi, _ = write_posterior(data, sched, params, span, context,
                            os.path.join(out, f"posterior_{args.policy}.csv"))
    if args.svg:
        write_svg(os.path.join(out, f"posterior_{args.policy}.csv"), os.path.join(out, f"posterior_{args.policy}.svg"))
    print(",".join(ev.REPORT_HEADER))
    print(",".join(str(v) for v in rep.row()))
    return 0


def _setup(args, cfg, out):
    data = _dataset(args, cfg)
    params = _params(args, cfg, data, out)
    bench = bm.make_benchmark(data, params, **_env_kwargs(cfg))
    return data, params, bench


def _eval_agent(bench: bm.Benchmark, params_nn: nn.MLPParams, eval_dir: str, name: str, svg: bool):
    os.makedirs(eval_dir, exist_ok=True)
    traj: list = []
    rep = ev.evaluate_policy(policies.NeuralPolicy(params_nn, "greedy"), bench.test_env,
                             bench.test_day, bench.test_days, name=name, trajectory=traj)
    ev.write_reports([rep], os.path.join(eval_dir, "report.csv"))
    policies.write_schedule(rep.schedule, os.path.join(eval_dir, "schedule.txt"))
    write_trajectory(traj, os.path.join(eval_dir, "trajectory.csv"))
    write_posterior(bench.dataset, rep.schedule, bench.params, rep.period_span, bench.test_context,
                    os.path.join(eval_dir, "posterior.csv"))
    if svg:
        write_svg(os.path.join(eval_dir, "posterior.csv"), os.path.join(eval_dir, "posterior.svg"))
    return rep


def cmd_train(args, cfg, parser) -> int:
    out = _require_out(args, parser)
    os.makedirs(out, exist_ok=True)
    _write_json(cfg, os.path.join(out, "config.json"))
    _, _, bench = _setup(args, cfg, out)
    pc = _ppo_config(args, cfg)
    run = ppo.train(bench.train_env, pc, bench.train_days, bench.val_days, out, agent_id=args.agent_id,
                    resume=args.resume, val_config=bench.val_env)
    rep = _eval_agent(bench, run.best, os.path.join(out, "eval"), f"agent_{args.agent_id}", args.svg)
    print(f"best update {run.best_update} validation FI {run.best_fi:.6f}")
    print(",".join(ev.REPORT_HEADER))
    print(",".join(str(v) for v in rep.row()))
    return 0


def cmd_sweep(args, cfg, parser) -> int:
    out = _require_out(args, parser)
    os.makedirs(out, exist_ok=True)
    _write_json(cfg, os.path.join(out, "config.json"))
    if args.grid:
        with open(args.grid) as fh:
            grid = json.load(fh)
        for g in grid:
            ppo.PPOConfig.from_dict(g)
    else:
        grid = cfg["sweep"].get("grid") or DEFAULT_GRID
    _, _, bench = _setup(args, cfg, out)
    base = _ppo_config(args, cfg)
    threads = cfg["sweep"].get("threads")
    env_threads = os.environ.get("FRUGALSENSE_THREADS")
    if env_threads:
        threads = min(int(env_threads), int(threads)) if threads else int(env_threads)
    rows, reports, _ = ppo.sweep(bench.train_env, bench.val_env, bench.test_env, bench.train_days,
                                 bench.val_days, bench.test_day, bench.test_days, base, grid, out,
                                 threads=int(threads or 1))
    best = max(range(len(rows)), key=lambda i: (rows[i][6], -i))
    print(f"best agent {rows[best][0]} FI {rows[best][6]:.6f} RMSE {rows[best][7]:.6f}")
    return 0


def cmd_eval(args, cfg, parser) -> int:
    out = _require_out(args, parser)
    os.makedirs(out, exist_ok=True)
    params_nn = nn.load(args.checkpoint)
    data, params, bench = _setup(args, cfg, out)
    n_day = args.budget if args.budget is not None else int(cfg["eval"].get("budget_per_day", bm.BUDGET_PER_DAY))
    span = _parse_span(args.span, data)
    if span[0] % SLOTS_PER_DAY or span[1] % SLOTS_PER_DAY or span[1] <= span[0]:
        raise SpanError("evaluation span must cover whole days")
    env_cfg = replace(bench.test_env, budget_per_day=n_day,
                      context=_context(data, span[0] // SLOTS_PER_WEEK) if span[0] >= SLOTS_PER_WEEK else None)
    bench = replace(bench, test_env=env_cfg, test_day=span[0] // SLOTS_PER_DAY,
                    test_days=(span[1] - span[0]) // SLOTS_PER_DAY)
    rep = _eval_agent(bench, params_nn, out, os.path.splitext(os.path.basename(args.checkpoint))[0], args.svg)
    ev.write_reports([rep], os.path.join(out, "comparison.csv"), append=True)
    print(",".join(ev.REPORT_HEADER))
    print(",".join(str(v) for v in rep.row()))
    return 0


# ----------------------------------------------------------------- parser ---

def build_parser() -> argparse.ArgumentParser:
    def global_flags(q, default):
        q.add_argument("--config", default=default, help="JSON run config")
        q.add_argument("--seed", type=int, default=default, help="override the command's seed")
        q.add_argument("--out", default=default, help="output file or directory")

    # the flags are accepted before or after the command name
    common = argparse.ArgumentParser(add_help=False)
    global_flags(common, argparse.SUPPRESS)
    p = argparse.ArgumentParser(prog="frugalsense", description=__doc__.splitlines()[0])
    global_flags(p, None)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", parents=[common], help="write a synthetic dataset")
    g.add_argument("--weeks", type=int)
    g.add_argument("--base-db", type=float)
    g.add_argument("--office-db", type=float)
    g.add_argument("--weekend-attenuation", type=float)
    g.add_argument("--noise-sd", type=float)
    g.add_argument("--white-fraction", type=float)
    g.add_argument("--smooth-slots", type=float)
    g.add_argument("--holiday-days", help="comma-separated day indices")

    def data_args(q):
        q.add_argument("--data", help="measurement CSV (default: synthetic benchmark)")
        q.add_argument("--holidays", help="holiday file")

    f = sub.add_parser("fit-gp", parents=[common], help="fit GP hyperparameters")
    data_args(f)
    f.add_argument("--train-weeks", type=int)
    f.add_argument("--budget", type=int, help="likelihood evaluations")

    b = sub.add_parser("baseline", parents=[common], help="score a fixed schedule")
    data_args(b)
    b.add_argument("--policy", choices=("uniform", "oracle", "random"), required=True)
    b.add_argument("--budget", type=int, help="samples over the span (span allocation)")
    b.add_argument("--budget-per-day", type=int)
    b.add_argument("--allocation", choices=("day", "span"), default="day")
    b.add_argument("--span", help="START:END slots (default: the week after the context)")
    b.add_argument("--gp-params")
    b.add_argument("--no-context", action="store_true", help="score without the pretraining context")
    b.add_argument("--svg", action="store_true")

    t = sub.add_parser("train", parents=[common], help="train one PPO agent")
    data_args(t)
    t.add_argument("--gp-params")
    t.add_argument("--agent-id", default="0")
    t.add_argument("--resume", action="store_true")
    t.add_argument("--svg", action="store_true")

    s = sub.add_parser("sweep", parents=[common], help="train and compare several agents")
    data_args(s)
    s.add_argument("--gp-params")
    s.add_argument("--grid", help="JSON list of PPO overrides, one per agent")

    e = sub.add_parser("eval", parents=[common], help="evaluate a saved policy")
    data_args(e)
    e.add_argument("--gp-params")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--span", help="START:END slots, whole days")
    e.add_argument("--budget", type=int, help="samples per day")
    e.add_argument("--svg", action="store_true")
    return p


COMMANDS = {"gen-data": cmd_gen_data, "fit-gp": cmd_fit_gp, "baseline": cmd_baseline,
            "train": cmd_train, "sweep": cmd_sweep, "eval": cmd_eval}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config)
        return COMMANDS[args.command](args, cfg, parser)
    except (FrugalSenseError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
