"""Pipeline stages tying the components into runnable experiments.

Every stage reads and writes versioned artifacts inside one output
directory:

    sut.qnet                      trained policy weights
    samples-<mode>.jsonl          collected state samples
    labeled.jsonl                 labeled samples
    hcs.model                     trained danger classifier
    search-<kind>/seed-NNNN.traj  best trajectory per search seed
    search-<kind>/summary.json    per-seed search digests
    search-<kind>/evaluation.json RSS summaries + oracle labels per trajectory
    search-<kind>/report.json     RunReport (plus CSV tables alongside)
    sweep/sweep.json              dataset-size sweep table

Stages check their prerequisites explicitly and fail with the missing
artifact named, so partial pipelines give actionable errors.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from . import classifier, dataset, rss, sim, solver, sut, trajectory
from .config import ExperimentConfig, config_digest, save_config

HIST_BIN_WIDTH = 0.05


class StageError(RuntimeError):
    """A pipeline stage cannot run (missing prerequisite or empty input)."""


def _require(path: Path, hint: str) -> Path:
    if not path.exists():
        raise StageError(f"missing prerequisite {path}; run `{hint}` first")
    return path


def _sut_path(out_dir: Path) -> Path:
    return out_dir / "sut.qnet"


def _hcs_path(out_dir: Path) -> Path:
    return out_dir / "hcs.model"


def _search_dir(out_dir: Path, reward_kind: str) -> Path:
    return out_dir / f"search-{reward_kind}"


def sim_factory(sim_cfg: sim.SimConfig):
    return lambda seed: sim.init(sim_cfg, seed)


# ---------------------------------------------------------------------------
# Stages.


def stage_train_sut(cfg: ExperimentConfig, out_dir: Path) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out_dir / "config.json")
    net = sut.train_dqn(sim_factory(cfg.sim), cfg.dqn)
    path = _sut_path(out_dir)
    sut.save_weights(path, net)
    return path


def stage_collect(cfg: ExperimentConfig, out_dir: Path, mode: str,
                  episodes: int, seed: int,
                  out_path: Optional[Path] = None) -> Path:
    net = sut.load_weights(_require(_sut_path(out_dir), "train-sut"))
    samples = dataset.collect(cfg.sim, net, mode, episodes, seed,
                              mcts_cfg=dataclasses.replace(
                                  cfg.mcts, iterations_per_step=max(
                                      1, cfg.mcts.iterations_per_step // 5),
                                  seed=seed))
    path = out_path if out_path is not None else out_dir / f"samples-{mode}.jsonl"
    dataset.export_samples(samples, path)
    return path


def stage_label(cfg: ExperimentConfig, samples_paths: Sequence[Path],
                out_path: Path, interactive: bool = False,
                in_stream=None, out_stream=None) -> Path:
    items = []
    for p in samples_paths:
        items.extend(dataset.import_samples(_require(Path(p), "collect")))
    samples = [it.sample if isinstance(it, dataset.LabeledSample) else it
               for it in items]
    if not samples:
        raise StageError("no samples to label")
    if interactive:
        labeled = dataset.interactive_label(samples, in_stream, out_stream)
    else:
        labeled = dataset.label_with_oracle(samples, cfg.oracle)
    dataset.export_samples(labeled, out_path)
    return out_path


def stage_train_hcs(cfg: ExperimentConfig, out_dir: Path,
                    labeled_path: Optional[Path] = None) -> Path:
    path = labeled_path if labeled_path is not None else out_dir / "labeled.jsonl"
    labeled = dataset.load_labeled(_require(Path(path), "label"))
    balanced = dataset.balance(labeled, cfg.hcs_train.seed)
    net = classifier.train(dataset.training_pairs(balanced), cfg.hcs_train)
    model_path = _hcs_path(out_dir)
    classifier.save_model(model_path, net)
    return model_path


def run_search_seed(cfg: ExperimentConfig, sut_net, hcs_net, reward_kind: str,
                    seed: int, fixed_sim_seed: Optional[int] = None) -> solver.SearchResult:
    """One seeded search; the placement seed defaults to the search seed."""
    sim_seed = seed if fixed_sim_seed is None else fixed_sim_seed
    problem = trajectory.HighwayProblem(
        cfg.sim, sim_seed, sut_net, reward_kind=reward_kind,
        reward_cfg=cfg.reward, hcs_net=hcs_net,
    )
    mcts_cfg = dataclasses.replace(cfg.mcts, seed=seed)
    return solver.search(problem, mcts_cfg, rss_params=cfg.rss)


def stage_search(cfg: ExperimentConfig, out_dir: Path,
                 reward_kind: Optional[str] = None,
                 seeds: Optional[Sequence[int]] = None,
                 fixed_sim_seed: Optional[int] = None) -> Path:
    kind = reward_kind if reward_kind is not None else cfg.reward_kind
    run_seeds = list(seeds) if seeds is not None else list(cfg.seeds)
    sut_net = sut.load_weights(_require(_sut_path(out_dir), "train-sut"))
    hcs_net = None
    if kind == "hcs":
        hcs_net = classifier.load_model(_require(_hcs_path(out_dir), "train-hcs"))

    digest = config_digest(cfg)
    sdir = _search_dir(out_dir, kind)
    sdir.mkdir(parents=True, exist_ok=True)
    rows = []
    for seed in run_seeds:
        result = run_search_seed(cfg, sut_net, hcs_net, kind, seed, fixed_sim_seed)
        record = result.best_trajectory
        record.config_digest = digest
        traj_path = sdir / f"seed-{seed:04d}.traj"
        trajectory.save_trajectory(record, traj_path)
        rows.append({
            "seed": seed,
            "sim_seed": seed if fixed_sim_seed is None else fixed_sim_seed,
            "best_return": result.best_return,
            "failure_found": result.failure_found,
            "outcome": record.outcome,
            "iterations_used": result.iterations_used,
            "episodes_seen": result.episodes_seen,
            "sim_steps": result.sim_steps,
            "trajectory": traj_path.name,
        })
    summary_path = sdir / "summary.json"
    with open(summary_path, "w") as fh:
        json.dump({"reward_kind": kind, "config_digest": digest, "runs": rows},
                  fh, indent=2, sort_keys=True)
        fh.write("\n")
    return sdir


def oracle_critical_fraction(record: trajectory.TrajectoryRecord,
                             oracle_cfg: dataset.OracleConfig) -> float:
    flags = [dataset.oracle_label_state(step.state, oracle_cfg)
             for step in record.steps]
    return float(np.mean(flags)) if flags else 0.0


def stage_evaluate(cfg: ExperimentConfig, out_dir: Path,
                   reward_kind: Optional[str] = None) -> Path:
    kind = reward_kind if reward_kind is not None else cfg.reward_kind
    sdir = _search_dir(out_dir, kind)
    _require(sdir / "summary.json", "search")
    rows = []
    for traj_path in sorted(sdir.glob("seed-*.traj")):
        record = trajectory.load_trajectory(traj_path)
        summary = rss.summarize(record, cfg.rss)
        rows.append({
            "trajectory": traj_path.name,
            "seed": record.seed,
            "outcome": record.outcome,
            "steps": summary.steps_total,
            "total_reward": record.total_reward,
            "proportion_dangerous": summary.proportion_dangerous,
            "proportion_improper": summary.proportion_improper,
            "oracle_critical_fraction": oracle_critical_fraction(record, cfg.oracle),
        })
    if not rows:
        raise StageError("no trajectories found")
    path = sdir / "evaluation.json"
    with open(path, "w") as fh:
        json.dump({"reward_kind": kind, "trajectories": rows}, fh,
                  indent=2, sort_keys=True)
        fh.write("\n")
    return path


@dataclass
class RunReport:
    reward_kind: str
    config_digest: str
    n_seeds: int
    n_failures: int
    failure_rate: float
    hist_bin_edges: list
    hist_dangerous: list
    hist_improper: list
    median_dangerous: Optional[float]
    median_improper: Optional[float]
    proportions_dangerous: list
    proportions_improper: list
    oracle_critical_fractions: list
    oracle_critical_summary: Optional[dict]
    seed_summaries: list


def five_number_summary(values: Sequence[float]) -> dict:
    q = np.percentile(np.asarray(values, dtype=float), [0, 25, 50, 75, 100])
    return {
        "min": float(q[0]), "q1": float(q[1]), "median": float(q[2]),
        "q3": float(q[3]), "max": float(q[4]),
    }


def build_report(cfg: ExperimentConfig, out_dir: Path,
                 reward_kind: Optional[str] = None) -> RunReport:
    kind = reward_kind if reward_kind is not None else cfg.reward_kind
    sdir = _search_dir(out_dir, kind)
    eval_path = _require(sdir / "evaluation.json", "evaluate")
    with open(eval_path) as fh:
        rows = json.load(fh)["trajectories"]
    if not rows:
        raise StageError("no trajectories found")
    with open(_require(sdir / "summary.json", "search")) as fh:
        summary = json.load(fh)

    failures = [r for r in rows if r["outcome"] == trajectory.OUTCOME_FAILURE]
    edges = np.round(np.arange(0.0, 1.0 + HIST_BIN_WIDTH, HIST_BIN_WIDTH), 10)
    p_danger = [r["proportion_dangerous"] for r in failures]
    p_improper = [r["proportion_improper"] for r in failures]
    critical = [r["oracle_critical_fraction"] for r in failures]
    hist_d, _ = np.histogram(p_danger, bins=edges)
    hist_i, _ = np.histogram(p_improper, bins=edges)
    return RunReport(
        reward_kind=kind,
        config_digest=summary["config_digest"],
        n_seeds=len(rows),
        n_failures=len(failures),
        failure_rate=len(failures) / len(rows),
        hist_bin_edges=edges.tolist(),
        hist_dangerous=hist_d.tolist(),
        hist_improper=hist_i.tolist(),
        median_dangerous=float(np.median(p_danger)) if failures else None,
        median_improper=float(np.median(p_improper)) if failures else None,
        proportions_dangerous=p_danger,
        proportions_improper=p_improper,
        oracle_critical_fractions=critical,
        oracle_critical_summary=five_number_summary(critical) if failures else None,
        seed_summaries=summary["runs"],
    )


def stage_report(cfg: ExperimentConfig, out_dir: Path,
                 reward_kind: Optional[str] = None) -> Path:
    report = build_report(cfg, out_dir, reward_kind)
    sdir = _search_dir(out_dir, report.reward_kind)
    path = sdir / "report.json"
    with open(path, "w") as fh:
        json.dump(dataclasses.asdict(report), fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(sdir / "report-hist.csv", "w") as fh:
        fh.write("bin_lo,bin_hi,count_dangerous,count_improper\n")
        for i in range(len(report.hist_dangerous)):
            fh.write(f"{report.hist_bin_edges[i]},{report.hist_bin_edges[i + 1]},"
                     f"{report.hist_dangerous[i]},{report.hist_improper[i]}\n")
    with open(sdir / "report-summary.csv", "w") as fh:
        fh.write("metric,value\n")
        fh.write(f"n_seeds,{report.n_seeds}\n")
        fh.write(f"n_failures,{report.n_failures}\n")
        fh.write(f"failure_rate,{report.failure_rate}\n")
        fh.write(f"median_proportion_dangerous,{report.median_dangerous}\n")
        fh.write(f"median_proportion_improper,{report.median_improper}\n")
        if report.oracle_critical_summary:
            for k, v in report.oracle_critical_summary.items():
                fh.write(f"oracle_critical_{k},{v}\n")
    return path


def load_report(path) -> dict:
    with open(path) as fh:
        return json.load(fh)


def compare_runs(report_a: dict, report_b: dict) -> dict:
    """Side-by-side medians plus a one-sided rank-sum test (is B > A?)."""
    for name, rep in (("a", report_a), ("b", report_b)):
        if rep["n_failures"] < 1:
            raise StageError(f"report {name} has no failure trajectories")
    a = np.asarray(report_a["proportions_dangerous"], dtype=float)
    b = np.asarray(report_b["proportions_dangerous"], dtype=float)
    hist_a = np.asarray(report_a["hist_dangerous"], dtype=float)
    hist_b = np.asarray(report_b["hist_dangerous"], dtype=float)
    overlap = float(np.minimum(hist_a / hist_a.sum(), hist_b / hist_b.sum()).sum())
    ranksum = stats.mannwhitneyu(b, a, alternative="greater")
    return {
        "median_dangerous_a": float(np.median(a)),
        "median_dangerous_b": float(np.median(b)),
        "median_dangerous_diff": float(np.median(b) - np.median(a)),
        "median_improper_a": float(np.median(report_a["proportions_improper"])),
        "median_improper_b": float(np.median(report_b["proportions_improper"])),
        "max_dangerous_a": float(a.max()),
        "max_dangerous_b": float(b.max()),
        "hist_overlap_dangerous": overlap,
        "ranksum_p_b_greater": float(ranksum.pvalue),
        "n_failures_a": int(report_a["n_failures"]),
        "n_failures_b": int(report_b["n_failures"]),
    }


def comparison_table(comparison: dict) -> str:
    lines = ["metric,value"]
    for k in sorted(comparison):
        lines.append(f"{k},{comparison[k]}")
    return "\n".join(lines) + "\n"


def dataset_size_sweep(cfg: ExperimentConfig, out_dir: Path, sizes: Sequence[int],
                       labeled_path: Optional[Path] = None,
                       seeds: Optional[Sequence[int]] = None,
                       fixed_sim_seed: Optional[int] = None) -> dict:
    """Train one classifier per dataset size and search with each.

    The metric per size is the median proportion_dangerous over failure
    trajectories found across seeds, with the between-seed standard
    deviation alongside.
    """
    sizes = list(sizes)
    if len(set(sizes)) != len(sizes):
        raise StageError("sweep sizes contain duplicates")
    if any(n < 2 for n in sizes):
        raise StageError("sweep sizes must be >= 2")
    run_seeds = list(seeds) if seeds is not None else list(cfg.seeds)

    path = labeled_path if labeled_path is not None else out_dir / "labeled.jsonl"
    labeled = dataset.load_labeled(_require(Path(path), "label"))
    balanced = dataset.balance(labeled, cfg.hcs_train.seed)
    need = max(sizes)
    if len(balanced) < need:
        raise StageError(
            f"insufficient data: sweep needs {need} balanced samples, have {len(balanced)}"
        )
    sut_net = sut.load_weights(_require(_sut_path(out_dir), "train-sut"))

    table = []
    for size in sizes:
        subset = balanced[:size]
        hcs_net = classifier.train(dataset.training_pairs(subset), cfg.hcs_train)
        per_seed = []
        failures = 0
        for seed in run_seeds:
            result = run_search_seed(cfg, sut_net, hcs_net, "hcs", seed, fixed_sim_seed)
            if result.failure_found:
                failures += 1
                summary = rss.summarize(result.best_trajectory, cfg.rss)
                per_seed.append(summary.proportion_dangerous)
        table.append({
            "size": size,
            "n_seeds": len(run_seeds),
            "failures_found": failures,
            "metric_median": float(np.median(per_seed)) if per_seed else None,
            "metric_mean": float(np.mean(per_seed)) if per_seed else None,
            "metric_std": float(np.std(per_seed)) if per_seed else None,
            "per_seed_metric": per_seed,
        })
    sweep = {"sizes": sizes, "seeds": run_seeds, "rows": table}
    sweep_dir = out_dir / "sweep"
    sweep_dir.mkdir(parents=True, exist_ok=True)
    with open(sweep_dir / "sweep.json", "w") as fh:
        json.dump(sweep, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(sweep_dir / "sweep.csv", "w") as fh:
        fh.write("size,n_seeds,failures_found,metric_median,metric_mean,metric_std\n")
        for row in table:
            fh.write(f"{row['size']},{row['n_seeds']},{row['failures_found']},"
                     f"{row['metric_median']},{row['metric_mean']},{row['metric_std']}\n")
    return sweep


def select_peak_trajectory(evaluation: dict) -> Optional[str]:
    """Trajectory filename at the mode of the proportion_dangerous histogram."""
    failures = [r for r in evaluation["trajectories"]
                if r["outcome"] == trajectory.OUTCOME_FAILURE]
    if not failures:
        return None
    edges = np.round(np.arange(0.0, 1.0 + HIST_BIN_WIDTH, HIST_BIN_WIDTH), 10)
    values = np.asarray([r["proportion_dangerous"] for r in failures])
    hist, _ = np.histogram(values, bins=edges)
    peak = int(np.argmax(hist))
    center = (edges[peak] + edges[peak + 1]) / 2.0
    in_bin = [r for r in failures
              if edges[peak] <= r["proportion_dangerous"] <= edges[peak + 1]]
    best = min(in_bin, key=lambda r: (abs(r["proportion_dangerous"] - center), r["seed"]))
    return best["trajectory"]
