"""Command-line front end: ``gpg-rl {train,eval,sweep,ablate-binning,oracle-check}``.

Runs are written to ``<out>/<env>/<algo>/<num_envs>/<seed>/`` with
``metrics.csv``, ``checkpoint.bin``, ``config.resolved`` and ``eval.csv``.
The output root is ``--out``, else ``$GPG_RL_OUT``, else ``./runs``.

Exit codes: 0 success, 1 a checked property failed (oracle-check) or some
sweep runs failed, 2 usage or config error, 3 numerical abort, 4 I/O or
checkpoint error.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .advantage import parse_binning
from .checkpoint import check_compatible, load_checkpoint
from .config import TrainConfig, parse_key_values, preset_for
from .envs import env_factory
from .errors import CheckpointError, ConfigError, GPGError, NumericalError
from .trainer import METRIC_FIELDS, Trainer, evaluate

EXIT_OK, EXIT_FAILED, EXIT_USAGE, EXIT_NUMERICAL, EXIT_IO = 0, 1, 2, 3, 4
EVAL_SEED = 10_000
RUN_FIELDS = ("env", "algorithm", "binning", "num_envs", "seed", "eval_mean", "eval_std",
              "final_train_return", "status")
SUMMARY_FIELDS = ("env", "algorithm", "binning", "num_envs", "n_seeds", "eval_mean", "eval_std",
                  "n_failed")


class UsageError(GPGError):
    pass


def output_root(arg) -> Path:
    return Path(arg or os.environ.get("GPG_RL_OUT") or "runs")


def algo_label(cfg: TrainConfig) -> str:
    if cfg.algorithm != "gpg" or cfg.binning == "time":
        return cfg.algorithm
    return "gpg-" + cfg.binning.replace(":", "_")


def run_dir(root, cfg: TrainConfig) -> Path:
    env = cfg.env.replace("tabular:", "tabular-").replace("/", "_")
    return Path(root) / env / algo_label(cfg) / str(cfg.num_envs) / str(cfg.seed)


def csv_list(text, cast=str):
    try:
        items = [cast(x.strip()) for x in str(text).split(",") if x.strip()]
    except ValueError:
        raise UsageError(f"cannot parse list {text!r}") from None
    if not items:
        raise UsageError("empty list")
    return items


def check_binning_for_env(cfg: TrainConfig):
    binning = parse_binning(cfg.binning)
    spec = env_factory(cfg.env)().spec
    if binning.kind in ("spatial", "spatialtime") and spec.observation_kind != "box":
        raise ConfigError(f"{cfg.binning} binning needs continuous observations; "
                          f"{cfg.env} has discrete states")
    if binning.kind == "state" and spec.observation_kind != "discrete":
        raise ConfigError(f"state binning needs discrete observations; {cfg.env} is continuous")


def resolve_config(args, env=None) -> TrainConfig:
    """Preset for the env, then the config file, then explicit flags, then ``--set`` pairs."""
    file_values = parse_key_values(Path(args.config).read_text()) if args.config else {}
    flags = {}
    if env or args.env:
        flags["env"] = env or args.env
    for name in ("algo", "binning", "iterations", "threads"):
        value = getattr(args, name, None)
        if value is not None:
            flags["algorithm" if name == "algo" else name] = value
    env_id = flags.get("env") or file_values.get("env") or TrainConfig.env
    base = preset_for(env_id)
    cfg = TrainConfig.from_mapping(file_values, base)
    cfg = TrainConfig.from_mapping(flags, cfg)
    for pair in args.set or []:
        if "=" not in pair:
            raise UsageError(f"--set expects key=value, got {pair!r}")
        k, v = pair.split("=", 1)
        cfg = TrainConfig.from_mapping({k: v}, cfg)
    return cfg


# -- single runs -----------------------------------------------------------------


def _write_csv(path, header, rows, mode="w"):
    with open(path, mode, newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        if header:
            w.writerow(header)
        w.writerows(rows)


def _format_row(row, timing=True):
    out = []
    for name, value in zip(METRIC_FIELDS, row):
        if name == "wall_ms" and not timing:
            value = 0.0
        out.append(repr(float(value)) if isinstance(value, float) else str(value))
    return out


def _trim_metrics(path: Path, last_iteration: int):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    kept = [r for r in rows[1:] if int(r[0]) <= last_iteration]
    _write_csv(path, list(METRIC_FIELDS), kept)


def _dump_diagnostics(directory: Path, exc: NumericalError) -> Path:
    path = directory / "diagnostics.npz"
    arrays = {k: np.asarray(v) for k, v in (exc.diagnostics or {}).items()}
    np.savez(path, message=np.array(str(exc)), **arrays)
    return path


def train_run(cfg: TrainConfig, directory: Path, resume=False, timing=True,
              checkpoint_every=10, verbose=False) -> dict:
    """Train one config into ``directory``; returns a per-run summary row."""
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "config.resolved").write_text(cfg.to_text())
    metrics = directory / "metrics.csv"
    ckpt = directory / "checkpoint.bin"
    trainer = Trainer(cfg)
    if resume and ckpt.exists():
        trainer.restore(load_checkpoint(ckpt))
        if metrics.exists():
            _trim_metrics(metrics, trainer.iteration)
        else:
            _write_csv(metrics, list(METRIC_FIELDS), [])
    else:
        _write_csv(metrics, list(METRIC_FIELDS), [])
    row = {"env": cfg.env, "algorithm": cfg.algorithm,
           "binning": cfg.binning if cfg.algorithm == "gpg" else "",
           "num_envs": cfg.num_envs, "seed": cfg.seed}
    last = float("nan")
    try:
        with open(metrics, "a", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            while trainer.iteration < cfg.iterations:
                m = trainer.train_iteration()
                writer.writerow(_format_row(m.as_row(), timing))
                fh.flush()
                last = m.mean_return
                if verbose:
                    print(f"iter {m.iteration:4d}  return {m.mean_return:9.2f}  "
                          f"entropy {m.entropy:.3f}  clip {m.clip_frac:.3f}", file=sys.stderr)
                if checkpoint_every and m.iteration % checkpoint_every == 0:
                    trainer.save(ckpt)
    except NumericalError as exc:
        path = _dump_diagnostics(directory, exc)
        exc.diagnostics_path = path
        raise
    trainer.save(ckpt)
    mean, std = evaluate(trainer.policy, cfg.env, cfg.eval_episodes, seed=EVAL_SEED)
    row.update(eval_mean=mean, eval_std=std, final_train_return=last, status="ok")
    _write_csv(directory / "eval.csv", ["eval_mean", "eval_std"], [[repr(mean), repr(std)]])
    return row


def _sweep_job(job):
    cfg_dict, directory, timing = job
    cfg = TrainConfig(**cfg_dict)
    try:
        return train_run(cfg, Path(directory), timing=timing)
    except NumericalError as exc:
        status = "numerical"
        print(f"run {directory}: numerical abort: {exc}", file=sys.stderr)
    except Exception as exc:   # recorded per run; the sweep continues
        status = f"error: {type(exc).__name__}"
        print(f"run {directory}: {type(exc).__name__}: {exc}", file=sys.stderr)
    return {"env": cfg.env, "algorithm": cfg.algorithm,
            "binning": cfg.binning if cfg.algorithm == "gpg" else "", "num_envs": cfg.num_envs,
            "seed": cfg.seed, "eval_mean": float("nan"), "eval_std": float("nan"),
            "final_train_return": float("nan"), "status": status}


# -- sweeps ----------------------------------------------------------------------


@dataclass
class ExperimentPlan:
    configs: list
    root: Path

    def __post_init__(self):
        if not self.configs:
            raise UsageError("empty experiment plan")
        keys = [(c.env, c.algorithm, c.binning, c.num_envs, c.seed) for c in self.configs]
        if len(set(keys)) != len(keys):
            raise UsageError("duplicate runs in plan (repeated seeds?)")


def build_plan(args, algo_specs) -> ExperimentPlan:
    envs = csv_list(args.env or TrainConfig.env)
    num_envs = csv_list(args.num_envs or "4", int)
    seeds = csv_list(args.seeds or "0", int)
    if len(set(seeds)) != len(seeds):
        raise UsageError("training seeds must be distinct")
    configs = []
    for env in envs:
        base = resolve_config(args, env=env)
        for algorithm, binning in algo_specs:
            for n in num_envs:
                for seed in seeds:
                    cfg = base.replace(algorithm=algorithm, binning=binning or base.binning,
                                       num_envs=n, seed=seed, threads=1)
                    if cfg.algorithm == "gpg":
                        check_binning_for_env(cfg)
                    configs.append(cfg)
    return ExperimentPlan(configs, output_root(args.out))


def run_plan(plan: ExperimentPlan, jobs=1, timing=True):
    work = [(c.to_dict(), str(run_dir(plan.root, c)), timing) for c in plan.configs]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(_sweep_job, work))
    return [_sweep_job(w) for w in work]


def summarize(rows):
    groups = {}
    for r in rows:
        groups.setdefault((r["env"], r["algorithm"], r["binning"], r["num_envs"]), []).append(r)
    out = []
    for (env, algo, binning, n), rs in groups.items():
        ok = np.array([r["eval_mean"] for r in rs if r["status"] == "ok"], dtype=float)
        mean = float(ok.mean()) if ok.size else float("nan")
        std = float(ok.std()) if ok.size else float("nan")
        out.append({"env": env, "algorithm": algo, "binning": binning, "num_envs": n,
                    "n_seeds": len(rs), "eval_mean": mean, "eval_std": std,
                    "n_failed": len(rs) - ok.size})
    return out


def _dict_rows(rows, fields):
    return [[repr(r[f]) if isinstance(r[f], float) else r[f] for f in fields] for r in rows]


def write_sweep_outputs(root: Path, name: str, rows):
    root.mkdir(parents=True, exist_ok=True)
    _write_csv(root / f"{name}_runs.csv", RUN_FIELDS, _dict_rows(rows, RUN_FIELDS))
    summary = summarize(rows)
    _write_csv(root / f"{name}_summary.csv", SUMMARY_FIELDS, _dict_rows(summary, SUMMARY_FIELDS))
    for s in summary:
        label = s["algorithm"] + (f"[{s['binning']}]" if s["binning"] else "")
        print(f"{s['env']:>12} {label:>24} N={s['num_envs']:<4} "
              f"{s['eval_mean']:10.2f} +- {s['eval_std']:.2f}  ({s['n_seeds']} seeds)")
    return summary


# -- subcommands -----------------------------------------------------------------


def cmd_train(args):
    seeds = csv_list(args.seeds, int) if args.seeds else [None]
    for seed in seeds:
        cfg = resolve_config(args)
        overrides = {}
        if args.num_envs:
            overrides["num_envs"] = int(args.num_envs)
        if seed is not None:
            overrides["seed"] = seed
        cfg = cfg.replace(**overrides)
        if cfg.algorithm == "gpg":
            check_binning_for_env(cfg)
        directory = run_dir(output_root(args.out), cfg)
        try:
            row = train_run(cfg, directory, resume=args.resume, timing=not args.no_timing,
                            verbose=args.verbose)
        except NumericalError as exc:
            print(f"numerical abort: {exc}\ndiagnostics: {exc.diagnostics_path}", file=sys.stderr)
            return EXIT_NUMERICAL
        print(f"{directory}: eval {row['eval_mean']:.2f} +- {row['eval_std']:.2f}")
    return EXIT_OK


def cmd_eval(args):
    data = load_checkpoint(args.checkpoint)
    env_id = args.env or data["header"].get("env_id") or ""
    if not env_id:
        raise UsageError("checkpoint has no env id; pass --env")
    spec = env_factory(env_id)().spec
    check_compatible(data["policy"], spec)
    mean, std = evaluate(data["policy"], env_id, args.eval_seeds, seed=args.seed)
    print(f"{env_id}: {mean:.4f} +- {std:.4f} over {args.eval_seeds} episodes")
    row = [args.checkpoint, env_id, args.eval_seeds, repr(mean), repr(std)]
    if args.out:
        path = Path(args.out)
        new = not path.exists()
        _write_csv(path, ["checkpoint", "env", "episodes", "eval_mean", "eval_std"] if new else None,
                   [row], mode="a")
    else:
        csv.writer(sys.stdout, lineterminator="\n").writerow(row)
    return EXIT_OK


def cmd_sweep(args):
    specs = [(a, None) for a in csv_list(args.algo or "gpg")]
    plan = build_plan(argparse.Namespace(**{**vars(args), "algo": None}), specs)
    rows = run_plan(plan, args.threads or 1, timing=not args.no_timing)
    write_sweep_outputs(plan.root, "sweep", rows)
    return EXIT_OK if all(r["status"] == "ok" for r in rows) else EXIT_FAILED


def cmd_ablate_binning(args):
    specs = [("gpg", b) for b in csv_list(args.binning or "universal,time")]
    for _, b in specs:
        parse_binning(b)
    plan = build_plan(argparse.Namespace(**{**vars(args), "binning": None, "algo": None}), specs)
    rows = run_plan(plan, args.threads or 1, timing=not args.no_timing)
    write_sweep_outputs(plan.root, "ablate_binning", rows)
    return EXIT_OK if all(r["status"] == "ok" for r in rows) else EXIT_FAILED


def cmd_oracle_check(args):
    from . import oracle
    from .envs import TabularMDP, bandit_mdp, chain_mdp, cliff_grid_mdp, stochastic_chain_mdp
    from .policy import TabularSoftmaxPolicy

    n_list = csv_list(args.n_list, int)
    reps = args.reps
    uniform = lambda m: TabularSoftmaxPolicy(m.num_states, m.num_actions)   # noqa: E731
    checks = []    # (name, passed, detail)
    reports = []

    def consistency(name, mdp, estimator, max_final=0.05):
        rep = oracle.consistency_experiment(mdp, uniform(mdp), estimator, n_list, reps,
                                            seed=args.seed, label=f"{name}:{estimator}")
        med = rep.median_errors()
        final = med[max(med)]
        ok = rep.monotone_non_increasing() and final <= max_final
        detail = ", ".join(f"N={n}: {e:.4f}" for n, e in med.items())
        for w in rep.warnings:
            detail += f"; warning: {w}"
        checks.append((f"{name} {estimator} consistency", ok, detail))
        reports.append(rep)
        return rep

    if args.mdp:
        mdp = TabularMDP.load(args.mdp)
        for est in csv_list(args.estimators):
            consistency(Path(args.mdp).stem, mdp, est)
    else:
        consistency("chain", chain_mdp(), "time")
        consistency("grid3x4", cliff_grid_mdp(), "state")
        consistency("stochastic-chain", stochastic_chain_mdp(), "time")
        chain = chain_mdp()
        big = max(n_list)
        errs, traces = {}, {}
        for est in ("time", "reinforce"):
            rep = oracle.consistency_experiment(chain, uniform(chain), est, (big,), args.variance_reps,
                                                seed=args.seed, label=f"chain-variance:{est}")
            errs[est] = rep.median_errors()[big]
            traces[est] = float(np.trace(oracle.asymptotic_covariance(chain, uniform(chain), est)[1]))
            reports.append(rep)
        ok = errs["time"] < errs["reinforce"] and traces["time"] < traces["reinforce"]
        checks.append(("chain time-binning beats REINFORCE", ok,
                       f"N={big}: time {errs['time']:.5f} vs reinforce {errs['reinforce']:.5f} "
                       f"({args.variance_reps} reps); exact N*trace(Cov) "
                       f"{traces['time']:.4f} vs {traces['reinforce']:.4f}"))
        bandit = bandit_mdp()
        rep = oracle.grpo_corollary_check(bandit, uniform(bandit), n_list, reps, seed=args.seed)
        med = rep.median_errors()
        checks.append(("bandit GRPO normalized gradient", med[max(med)] <= 0.05,
                       ", ".join(f"N={n}: {e:.2e}" for n, e in med.items())))
        reports.append(rep)

    root = output_root(args.out) / "oracle"
    root.mkdir(parents=True, exist_ok=True)
    with open(root / "oracle.csv", "w", newline="") as fh:
        for i, rep in enumerate(reports):
            fh.write(rep.to_csv(header=(i == 0)))
    lines = [f"{'PASS' if ok else 'FAIL'}  {name}: {detail}" for name, ok, detail in checks]
    (root / "summary.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK if all(ok for _, ok, _ in checks) else EXIT_FAILED


# -- argument parsing --------------------------------------------------------------


def _run_flags(p, sweep=False):
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--env", help="environment id" + (" (comma list)" if sweep else ""))
    if not sweep:
        p.add_argument("--algo", choices=("gpg", "ppo", "grpo"))
    p.add_argument("--binning", help="universal | time | spatial:<eps> | spatialtime:<eps> | state"
                   + (" (comma list)" if sweep else ""))
    p.add_argument("--num-envs", help="parallel environments" + (" (comma list)" if sweep else ""))
    p.add_argument("--seeds", help="comma-separated training seeds")
    p.add_argument("--iterations", type=int)
    p.add_argument("--out", help="output root (default $GPG_RL_OUT or ./runs)")
    p.add_argument("--threads", type=int,
                   help="parallel sweep jobs" if sweep else "env stepping threads")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override any config key")
    p.add_argument("--no-timing", action="store_true",
                   help="write wall_ms as 0 so metrics are byte-reproducible")


def build_parser():
    parser = argparse.ArgumentParser(prog="gpg-rl", description=__doc__.split("\n")[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one or more seeds")
    _run_flags(p)
    p.add_argument("--resume", action="store_true", help="continue from checkpoint.bin if present")
    p.add_argument("--verbose", "-v", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint")
    p.add_argument("checkpoint")
    p.add_argument("--env")
    p.add_argument("--eval-seeds", type=int, default=5)
    p.add_argument("--seed", type=int, default=EVAL_SEED)
    p.add_argument("--out", help="append the result row to this CSV")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sweep", help="grid over algorithms, env counts and seeds")
    _run_flags(p, sweep=True)
    p.add_argument("--algo", help="comma list of gpg, ppo, grpo")
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("ablate-binning", help="GPG with several binning functions")
    _run_flags(p, sweep=True)
    p.set_defaults(func=cmd_ablate_binning, algo=None)

    p = sub.add_parser("oracle-check", help="estimator consistency against exact gradients")
    p.add_argument("--mdp", help="tabular MDP text file (default: built-in test MDPs)")
    p.add_argument("--estimators", default="time,reinforce",
                   help="with --mdp: comma list of reinforce, grpo or a binning")
    p.add_argument("--n-list", default="100,1000,10000")
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--variance-reps", type=int, default=10_000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_oracle_check)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, UsageError) as exc:
        print(f"gpg-rl: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NumericalError as exc:
        print(f"gpg-rl: numerical abort: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (CheckpointError, OSError) as exc:
        print(f"gpg-rl: {exc}", file=sys.stderr)
        return EXIT_IO
    except GPGError as exc:
        print(f"gpg-rl: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
