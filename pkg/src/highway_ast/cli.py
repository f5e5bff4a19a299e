"""Command-line front end for the failure-search pipeline.

    highway-ast init-config --out config.json
    highway-ast train-sut  --config config.json --out runs/
    highway-ast collect    --config config.json --out runs/ --mode random-sim --episodes 40
    highway-ast label      --config config.json --samples runs/samples-random-sim.jsonl \
                           --labeled runs/labeled.jsonl
    highway-ast train-hcs  --config config.json --out runs/
    highway-ast search     --config config.json --out runs/ --reward hcs
    highway-ast evaluate   --config config.json --out runs/ --reward hcs
    highway-ast report     --config config.json --out runs/ --reward hcs
    highway-ast compare    --report-a runs/search-heur/report.json \
                           --report-b runs/search-hcs/report.json
    highway-ast sweep      --config config.json --out runs/ --sizes 250,500,1000
    highway-ast render     --config config.json --out runs/ --reward hcs --peak

Defaults come from the built-in configuration when --config is omitted.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import dataset, experiments, render, trajectory
from .config import ConfigError, ExperimentConfig, load_config, save_config


def _load_cfg(args) -> ExperimentConfig:
    if args.config is None:
        return ExperimentConfig()
    return load_config(args.config)


def _parse_int_list(text: str) -> list:
    try:
        return [int(tok) for tok in text.split(",") if tok.strip() != ""]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="highway-ast",
        description="Failure search for a highway driving policy with "
                    "heuristic, Q-spread, and learned critical-state rewards.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, out_required=True):
        p.add_argument("--config", type=Path, default=None,
                       help="experiment config JSON (defaults built in)")
        p.add_argument("--out", type=Path, required=out_required,
                       help="output directory for artifacts")

    p = sub.add_parser("init-config", help="write the default configuration")
    p.add_argument("--out", type=Path, required=True, help="path for the config JSON")

    p = sub.add_parser("train-sut", help="train the driving policy")
    add_common(p)

    p = sub.add_parser("collect", help="collect classifier training samples")
    add_common(p)
    p.add_argument("--mode", choices=dataset.PROVENANCES, default="random-sim")
    p.add_argument("--episodes", type=int, default=40)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--samples-out", type=Path, default=None,
                   help="override the sample file path")

    p = sub.add_parser("label", help="label collected samples")
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--samples", type=Path, nargs="+", required=True,
                   help="one or more sample files")
    p.add_argument("--labeled", type=Path, required=True, help="output file")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--oracle", action="store_true", default=True,
                       help="scripted oracle labels (default)")
    group.add_argument("--interactive", action="store_true",
                       help="label by hand at the terminal")

    p = sub.add_parser("train-hcs", help="train the danger classifier")
    add_common(p)
    p.add_argument("--labeled", type=Path, default=None,
                   help="labeled sample file (default: <out>/labeled.jsonl)")

    for name, help_text in (
        ("search", "run one seeded failure search per seed"),
        ("evaluate", "attach RSS summaries and oracle labels to trajectories"),
        ("report", "aggregate evaluation into a run report"),
    ):
        p = sub.add_parser(name, help=help_text)
        add_common(p)
        p.add_argument("--reward", choices=("heur", "qcs", "hcs"), default=None,
                       help="reward formulation (default: config reward_kind)")
        if name == "search":
            p.add_argument("--seeds", type=_parse_int_list, default=None,
                           help="comma-separated search seeds (default: config seeds)")
            p.add_argument("--fixed-sim-seed", type=int, default=None,
                           help="share one initial world across all searches")

    p = sub.add_parser("compare", help="compare two run reports")
    p.add_argument("--report-a", type=Path, required=True)
    p.add_argument("--report-b", type=Path, required=True)
    p.add_argument("--table-out", type=Path, default=None,
                   help="also write the comparison as CSV")

    p = sub.add_parser("sweep", help="dataset-size sweep for the classifier")
    add_common(p)
    p.add_argument("--sizes", type=_parse_int_list, required=True,
                   help="comma-separated dataset sizes")
    p.add_argument("--labeled", type=Path, default=None)
    p.add_argument("--seeds", type=_parse_int_list, default=None)
    p.add_argument("--fixed-sim-seed", type=int, default=None)

    p = sub.add_parser("render", help="dump a trajectory as text frames")
    p.add_argument("--config", type=Path, default=None)
    p.add_argument("--out", type=Path, default=None,
                   help="run directory (needed with --peak)")
    p.add_argument("--reward", choices=("heur", "qcs", "hcs"), default=None)
    p.add_argument("--trajectory", type=Path, default=None,
                   help="explicit trajectory file to render")
    p.add_argument("--peak", action="store_true",
                   help="pick the trajectory at the histogram peak")
    p.add_argument("--render-out", type=Path, default=None,
                   help="write frames here instead of stdout")
    return parser


def _cmd_render(args, cfg: ExperimentConfig) -> int:
    if args.trajectory is not None:
        traj_path = args.trajectory
    elif args.peak:
        if args.out is None:
            raise experiments.StageError("--peak requires --out")
        kind = args.reward if args.reward is not None else cfg.reward_kind
        eval_path = experiments._search_dir(args.out, kind) / "evaluation.json"
        if not eval_path.exists():
            raise experiments.StageError(
                f"missing prerequisite {eval_path}; run `evaluate` first")
        with open(eval_path) as fh:
            name = experiments.select_peak_trajectory(json.load(fh))
        if name is None:
            raise experiments.StageError("no failure trajectories to render")
        traj_path = experiments._search_dir(args.out, kind) / name
    else:
        raise experiments.StageError("render needs --trajectory or --peak")
    record = trajectory.load_trajectory(traj_path)
    oracle = lambda step: dataset.oracle_label_state(step.state, cfg.oracle)
    text = render.render_trajectory(record, cfg.rss, oracle=oracle)
    if args.render_out is not None:
        Path(args.render_out).write_text(text)
        print(f"wrote {args.render_out}")
    else:
        print(text, end="")
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "init-config":
            save_config(ExperimentConfig(), args.out)
            print(f"wrote {args.out}")
            return 0

        if args.command == "compare":
            comparison = experiments.compare_runs(
                experiments.load_report(args.report_a),
                experiments.load_report(args.report_b))
            table = experiments.comparison_table(comparison)
            if args.table_out is not None:
                Path(args.table_out).write_text(table)
                print(f"wrote {args.table_out}")
            else:
                print(table, end="")
            return 0

        cfg = _load_cfg(args)

        if args.command == "train-sut":
            path = experiments.stage_train_sut(cfg, args.out)
            print(f"wrote {path}")
        elif args.command == "collect":
            path = experiments.stage_collect(
                cfg, args.out, args.mode, args.episodes, args.seed,
                out_path=args.samples_out)
            print(f"wrote {path}")
        elif args.command == "label":
            path = experiments.stage_label(
                cfg, args.samples, args.labeled,
                interactive=args.interactive,
                in_stream=sys.stdin, out_stream=sys.stdout)
            print(f"wrote {path}")
        elif args.command == "train-hcs":
            path = experiments.stage_train_hcs(cfg, args.out, args.labeled)
            print(f"wrote {path}")
        elif args.command == "search":
            path = experiments.stage_search(
                cfg, args.out, args.reward, args.seeds, args.fixed_sim_seed)
            print(f"wrote {path}/")
        elif args.command == "evaluate":
            path = experiments.stage_evaluate(cfg, args.out, args.reward)
            print(f"wrote {path}")
        elif args.command == "report":
            path = experiments.stage_report(cfg, args.out, args.reward)
            print(f"wrote {path}")
        elif args.command == "sweep":
            sweep = experiments.dataset_size_sweep(
                cfg, args.out, args.sizes, args.labeled, args.seeds,
                args.fixed_sim_seed)
            print(f"wrote {args.out / 'sweep' / 'sweep.json'} "
                  f"({len(sweep['rows'])} rows)")
        elif args.command == "render":
            return _cmd_render(args, cfg)
    except (ConfigError, experiments.StageError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
