"""Command-line entry point: ``kitchenplan <subcommand> [--config FILE] [key=value ...]``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

from kitchenplan.orchestrator import (
    RunConfig,
    evaluate,
    load_params,
    pretrain_cmd,
    random_command_sweep,
    record_fixtures,
    run_episode,
)


def _config(args) -> RunConfig:
    overrides = {}
    for item in args.overrides:
        if "=" not in item:
            raise ValueError(f"override must be key=value, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k] = v
    if args.config:
        return RunConfig.from_file(args.config, overrides)
    return RunConfig.from_pairs(overrides)


def cmd_pretrain(args) -> int:
    from kitchenplan.pretrain import TrainingFailure

    cfg = _config(args)
    try:
        _, report, digest = pretrain_cmd(cfg, out_path=args.out)
    except TrainingFailure as exc:
        print(exc.report.table())
        print(f"pretraining did not reach the success targets: {exc}", file=sys.stderr)
        return 2
    print(report.table())
    print(f"checkpoint digest {digest}")
    return 0


def cmd_run(args) -> int:
    cfg = _config(args)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    seed = cfg.seeds[0]
    rep = run_episode(cfg, load_params(cfg), seed, log_dir=out)
    print(json.dumps({**rep.to_dict(), "digest": rep.digest()}, indent=1, sort_keys=True))
    return 1 if rep.aborted else 0


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    reports, summary = evaluate(cfg)
    print(json.dumps(summary, sort_keys=True))
    return 1 if any(r.aborted for r in reports) else 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    fractions = [float(x) for x in args.fractions.split(",")]
    rows = random_command_sweep(cfg, fractions)
    for r in rows:
        print(f"f={r['fraction']:<5g} mean={r['mean_reward']:.2f} std={r['std']:.2f}")
    return 0


def cmd_record(args) -> int:
    cfg = _config(args)
    store = record_fixtures(cfg, args.scenario, args.store)
    print(f"{len(store.records)} records in {args.store}")
    return 0


def cmd_plot(args) -> int:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    path = Path(args.csv)
    with open(path, encoding="utf-8") as fh:
        rows = list(csv.DictReader(fh))
    fig, ax = plt.subplots(figsize=(5, 3.5))
    if rows and "fraction" in rows[0]:
        x = [float(r["fraction"]) for r in rows]
        y = [float(r["mean_reward"]) for r in rows]
        e = [float(r["std"]) for r in rows]
        ax.errorbar(x, y, yerr=e, marker="o", capsize=3)
        ax.set_xlabel("random-command fraction")
        ax.set_ylabel("mean episode reward")
    elif rows and "seed" in rows[0]:
        per_seed = [r for r in rows if r["seed"] != "mean"]
        ax.bar([r["seed"] for r in per_seed], [float(r["reward"]) for r in per_seed])
        ax.set_xlabel("seed")
        ax.set_ylabel("episode reward")
    else:
        raise SystemExit(f"{path}: neither a curve nor a metrics file")
    fig.tight_layout()
    out = Path(args.out or path.with_suffix(".png"))
    fig.savefig(out, dpi=120)
    print(out)
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="kitchenplan")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def add(name, fn, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("--config", help="key=value config file")
        sp.add_argument("overrides", nargs="*", help="key=value overrides")
        sp.set_defaults(fn=fn)
        return sp

    sp = add("pretrain", cmd_pretrain, "label states and pretrain the grounded policy")
    sp.add_argument("--out", help="checkpoint path (default out_dir/policy.ckpt)")
    add("run", cmd_run, "run one episode and print its report")
    add("evaluate", cmd_evaluate, "one episode per seed; writes metrics.csv")
    sp = add("sweep-random", cmd_sweep, "random-command substitution sweep; writes curve.csv")
    sp.add_argument("--fractions", default="0,0.25,0.5,0.75,1")
    sp = add("record-fixtures", cmd_record, "record backend exchanges into a replay store")
    sp.add_argument("--store", required=True)
    sp.add_argument("--scenario", action="append", default=[], help="seed:rounds, repeatable")
    sp = sub.add_parser("plot", help="plot curve.csv or metrics.csv to PNG")
    sp.add_argument("csv")
    sp.add_argument("--out")
    sp.set_defaults(fn=cmd_plot)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.fn(args)
    except (ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
