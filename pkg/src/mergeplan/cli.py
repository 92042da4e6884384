"""Command-line entry point: solve tables, run episodes, sweep batches,
serve the live session endpoint, and replay recorded traces."""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import __version__
from .config import ConfigError, GameConfig, builtin_profile, config_hash, load_config
from .episode import EpisodeSpec, read_trace, replay_states, run_episode, write_trace
from .game import MergeGame
from .planner import PlannerParams
from .qlk import LatentState, MissingTableError, TableMismatchError
from .runtime import RuntimeBundle, table_path


def _load(args) -> GameConfig:
    if args.config:
        return load_config(args.config)
    return builtin_profile(args.profile)


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="scenario configuration YAML")
    p.add_argument("--profile", default="desk",
                   help="built-in profile when --config is omitted (full|desk|mini)")
    p.add_argument("--cache-dir", default=".cache/tables",
                   help="directory for solved table bundles")


def _planner_params(cfg: GameConfig, args, seed: int) -> PlannerParams:
    overrides = {}
    if getattr(args, "eta0", None) is not None:
        overrides["eta0"] = args.eta0
    if getattr(args, "budget_ms", None) is not None:
        overrides["budget_ms"] = args.budget_ms
    if getattr(args, "max_sims", None) is not None:
        overrides["max_sims"] = args.max_sims
    if getattr(args, "planner", None) == "blp1":
        overrides["eta0"] = 0.0
    return PlannerParams.from_config(cfg.planner, cfg.solver.gamma, seed=seed, **overrides)


def cmd_solve(args) -> int:
    cfg = _load(args)
    path = table_path(cfg, args.cache_dir)
    if path.exists() and not args.force:
        print(f"cache hit: {path} (config {config_hash(cfg)})")
        return 0
    if args.force and path.exists():
        path.unlink()
    RuntimeBundle.build(cfg, cache_dir=args.cache_dir, workers=args.workers,
                        progress=lambda m: print(f"  {m}"))
    print(f"solved tables cached at {path}")
    return 0


def cmd_run(args) -> int:
    cfg = _load(args)
    bundle = RuntimeBundle.build(cfg, cache_dir=args.cache_dir,
                                 solve_if_missing=not args.no_solve)
    spec = EpisodeSpec(
        true_theta=LatentState(args.true_k if args.true_k is not None else cfg.scenario.true_k,
                               args.true_lambda if args.true_lambda is not None else cfg.scenario.true_lambda),
        planner=_planner_params(cfg, args, args.seed),
        robot_mode={"ours": "planner", "blp1": "blp1", "qlk": "qlk"}[args.planner],
        robot_k=args.robot_k,
        cap=cfg.episode.cap,
        seed=args.seed,
    )
    trace = run_episode(bundle, spec)
    out = Path(args.out or f"traces/episode-{args.seed}.jsonl")
    write_trace(trace, out)
    print(f"outcome={trace.outcome} steps={trace.steps} tm={trace.tm} "
          f"min_gap={trace.min_gap:.1f}")
    print(f"trace written to {out}")
    return 0


def cmd_batch(args) -> int:
    from .batch import run_batch, write_report

    cfg = _load(args)
    bundle = RuntimeBundle.build(cfg, cache_dir=args.cache_dir,
                                 solve_if_missing=not args.no_solve)
    modes = {"ours": ["planner"], "blp1": ["blp1"], "both": ["planner", "blp1"]}[args.planner]
    if args.k:
        ks = [int(k) for k in args.k.split(",")]
    else:
        ks = list(cfg.latent.ks)
    if args.lambdas:
        lams = [float(x) for x in args.lambdas.split(",")]
    else:
        lams = list(cfg.latent.lambdas)
    thetas = [LatentState(k, lam) for k in ks for lam in lams]
    params = _planner_params(cfg, args, args.seed)
    summaries = run_batch(
        bundle, params, modes, thetas, reps=args.reps, seed0=args.seed,
        random_offset=args.offset, workers=args.workers,
    )
    out = Path(args.out or "batch-out")
    write_report(summaries, out)
    for s in summaries:
        tm = "-" if s.tm_mean is None else f"{s.tm_mean:.2f}s"
        print(f"{s.label:8s} k={s.k} lam={s.lam}: RS={s.rs:.2f} TM={tm} "
              f"outcomes={s.outcomes}")
    print(f"report written to {out}/report.json")
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import create_app

    cfg = _load(args)
    app = create_app(cfg, cache_dir=args.cache_dir, trace_dir=args.out or "traces",
                     multi_session=args.multi_session)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def cmd_replay(args) -> int:
    doc = read_trace(args.trace)
    cfg_hash = doc["header"]["config_hash"]
    print(f"trace schema={doc['header']['schema']} config={cfg_hash} "
          f"planner={doc['header']['spec'].get('label')}")
    if args.config or args.profile:
        try:
            cfg = _load(args)
            if config_hash(cfg) == cfg_hash:
                ok = replay_states(doc, MergeGame(cfg))
                print(f"dynamics replay: {'consistent' if ok else 'MISMATCH'}")
        except ConfigError:
            pass
    writer = None
    if args.csv:
        import csv as _csv

        writer = _csv.writer(sys.stdout)
        writer.writerow(["t", "x_r", "y_r", "x_h", "v_r", "v_h",
                         "a_r_accel", "a_r_lat", "a_h_accel", "reward", "info_gain"])
    for step in doc["steps"]:
        s = step["state"]
        if writer:
            writer.writerow([step["t"], s["x_r"], s["y_r"], s["x_h"], s["v_r"],
                             s["v_h"], step["a_r"]["accel"], step["a_r"]["lat"],
                             step["a_h"]["accel"], step["reward"], step["info_gain"]])
        else:
            print(f"t={step['t']:3d} x_r={s['x_r']:6.1f} y_r={s['y_r']:4.2f} "
                  f"x_h={s['x_h']:6.1f} v_r={s['v_r']:4.1f} v_h={s['v_h']:4.1f} "
                  f"aR=({step['a_r']['accel']:+.1f},{step['a_r']['lat']:.1f}) "
                  f"aH={step['a_h']['accel']:+.1f} r={step['reward']:7.2f}")
    footer = doc["footer"]
    print(f"outcome={footer['outcome']} steps={footer['steps']} tm={footer['tm']}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mergeplan",
        description="Game-theoretic merge negotiation: ql-k tables, belief "
                    "tracking, and chance-constrained belief tree search.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve and cache ql-k policy/value tables")
    _add_common(p)
    p.add_argument("--force", action="store_true", help="resolve even on cache hit")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("run", help="run a single episode")
    _add_common(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--planner", choices=("ours", "blp1", "qlk"), default="ours")
    p.add_argument("--robot-k", type=int, default=2, help="level for --planner=qlk")
    p.add_argument("--true-k", type=int, default=None)
    p.add_argument("--true-lambda", type=float, default=None)
    p.add_argument("--eta0", type=float, default=None)
    p.add_argument("--budget-ms", type=float, default=None)
    p.add_argument("--max-sims", type=int, default=None)
    p.add_argument("--no-solve", action="store_true",
                   help="fail instead of solving when tables are missing")
    p.add_argument("--out", help="trace output path (JSON lines)")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("batch", help="sweep (planner, k, lambda) cells")
    _add_common(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--planner", choices=("ours", "blp1", "both"), default="ours")
    p.add_argument("--k", help="comma-separated intelligence levels")
    p.add_argument("--lambdas", help="comma-separated rationality coefficients")
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--offset", type=float, default=10.0,
                   help="randomize human start within +/- this many meters")
    p.add_argument("--eta0", type=float, default=None)
    p.add_argument("--budget-ms", type=float, default=None)
    p.add_argument("--max-sims", type=int, default=None)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--no-solve", action="store_true")
    p.add_argument("--out", help="report directory")
    p.set_defaults(func=cmd_batch)

    p = sub.add_parser("serve", help="start the live interaction service")
    _add_common(p)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--multi-session", action="store_true")
    p.add_argument("--out", help="directory for session traces")
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("replay", help="render a recorded trace")
    p.add_argument("trace", help="path to a .jsonl trace")
    p.add_argument("--csv", action="store_true", help="emit CSV instead of text")
    p.add_argument("--config", help="verify dynamics against this config")
    p.add_argument("--profile", default=None)
    p.add_argument("--cache-dir", default=".cache/tables")
    p.set_defaults(func=cmd_replay)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, TableMismatchError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except MissingTableError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
