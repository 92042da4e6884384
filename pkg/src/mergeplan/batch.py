"""Batch sweeps over (planner, k, lambda) cells with RS/TM and inference metrics."""
from __future__ import annotations

import csv
import json
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .episode import EpisodeSpec, EpisodeTrace, run_episode
from .qlk import LatentState
from .runtime import RuntimeBundle

CONFIDENCE_THRESHOLD = 0.8

_WORKER_BUNDLE: RuntimeBundle | None = None


def _episode_worker(spec: EpisodeSpec) -> EpisodeTrace:
    return run_episode(_WORKER_BUNDLE, spec)


def run_specs(bundle: RuntimeBundle, specs: list[EpisodeSpec], workers: int = 1) -> list[EpisodeTrace]:
    """Run episodes, optionally on forked workers; order follows the input."""
    if workers <= 1 or len(specs) <= 1:
        return [run_episode(bundle, spec) for spec in specs]
    global _WORKER_BUNDLE
    _WORKER_BUNDLE = bundle
    try:
        ctx = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
            return list(pool.map(_episode_worker, specs))
    finally:
        _WORKER_BUNDLE = None


def success(trace: EpisodeTrace) -> bool:
    """RS counts episodes with neither collision nor deadlock."""
    return trace.outcome not in ("collision", "deadlock")


def p_true_curve(trace: EpisodeTrace, true_theta: LatentState) -> list[float]:
    """P(theta_true | b_t) per step, starting at the prior (t = 0)."""
    curve = []
    prior = trace.prior
    # the prior's position for theta_true comes from the first record's ordering
    for record in trace.records:
        for i, entry in enumerate(record.belief["latent"]):
            if entry["k"] == true_theta.k and entry["lambda"] == true_theta.lam:
                if not curve:
                    curve.append(prior[i])
                curve.append(entry["p"])
                break
    return curve


def first_confident_step(trace: EpisodeTrace, true_theta: LatentState,
                         threshold: float = CONFIDENCE_THRESHOLD) -> int | None:
    curve = p_true_curve(trace, true_theta)
    for t, p in enumerate(curve):
        if p > threshold:
            return t
    return None


def censored_confident_step(trace: EpisodeTrace, true_theta: LatentState,
                            threshold: float = CONFIDENCE_THRESHOLD) -> int:
    """First confident step, censored at episode length when never reached."""
    step = first_confident_step(trace, true_theta, threshold)
    return trace.steps if step is None else step


@dataclass
class CellSummary:
    label: str
    k: int
    lam: float
    n: int
    rs: float
    outcomes: dict
    tm_mean: float | None
    tm_ci95: float | None
    min_gap: float
    confident_mean: float
    inference_curve: list[float] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "planner": self.label, "k": self.k, "lambda": self.lam, "n": self.n,
            "rs": self.rs, "outcomes": self.outcomes, "tm_mean": self.tm_mean,
            "tm_ci95": self.tm_ci95, "min_gap": self.min_gap,
            "confident_mean": self.confident_mean,
            "inference_curve": self.inference_curve,
        }


def summarize_cell(traces: list[EpisodeTrace], label: str,
                   true_theta: LatentState) -> CellSummary:
    if not traces:
        raise ValueError("empty cell: no episodes to summarize")
    outcomes = {o: 0 for o in ("merged", "collision", "deadlock", "timeout")}
    for tr in traces:
        outcomes[tr.outcome] += 1
    n = len(traces)
    rs = sum(success(tr) for tr in traces) / n
    tms = [tr.tm for tr in traces if tr.tm is not None]
    if tms:
        tm_mean = float(np.mean(tms))
        tm_ci = float(1.96 * np.std(tms, ddof=1) / np.sqrt(len(tms))) if len(tms) > 1 else 0.0
    else:
        tm_mean = tm_ci = None
    curves = [p_true_curve(tr, true_theta) for tr in traces]
    max_len = max((len(c) for c in curves), default=0)
    mean_curve = []
    for t in range(max_len):
        vals = [c[t] if t < len(c) else c[-1] for c in curves if c]
        mean_curve.append(float(np.mean(vals)))
    confident = [censored_confident_step(tr, true_theta) for tr in traces]
    return CellSummary(
        label=label, k=true_theta.k, lam=true_theta.lam, n=n, rs=rs,
        outcomes=outcomes, tm_mean=tm_mean, tm_ci95=tm_ci,
        min_gap=float(min(tr.min_gap for tr in traces)),
        confident_mean=float(np.mean(confident)),
        inference_curve=mean_curve,
    )


def run_batch(bundle: RuntimeBundle, planner_params, modes: list[str],
              thetas: list[LatentState], reps: int, seed0: int = 0,
              random_offset: float | None = 10.0, cap: int | None = None,
              workers: int = 1) -> list[CellSummary]:
    """Sweep (robot mode) x (true human type); per-episode seeds are shared
    across modes so comparisons are paired."""
    cap = cap if cap is not None else bundle.cfg.episode.cap
    summaries = []
    for mode in modes:
        for theta in thetas:
            specs = [
                EpisodeSpec(
                    true_theta=theta, planner=planner_params,
                    random_offset=random_offset, robot_mode=mode,
                    cap=cap, seed=seed0 + i,
                )
                for i in range(reps)
            ]
            traces = run_specs(bundle, specs, workers=workers)
            summaries.append(summarize_cell(traces, specs[0].label(), theta))
    return summaries


def write_report(summaries: list[CellSummary], out_dir: str | Path) -> dict:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = {"cells": [s.to_json() for s in summaries]}
    (out / "report.json").write_text(json.dumps(report, indent=2))
    with (out / "metrics.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow([
            "planner", "k", "lambda", "n", "rs", "tm_mean", "tm_ci95",
            "merged", "collision", "deadlock", "timeout", "confident_mean",
        ])
        for s in summaries:
            writer.writerow([
                s.label, s.k, s.lam, s.n, f"{s.rs:.4f}",
                "" if s.tm_mean is None else f"{s.tm_mean:.3f}",
                "" if s.tm_ci95 is None else f"{s.tm_ci95:.3f}",
                s.outcomes["merged"], s.outcomes["collision"],
                s.outcomes["deadlock"], s.outcomes["timeout"],
                f"{s.confident_mean:.3f}",
            ])
    with (out / "inference.csv").open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["planner", "k", "lambda", "t", "p_true_mean"])
        for s in summaries:
            for t, p in enumerate(s.inference_curve):
                writer.writerow([s.label, s.k, s.lam, t, f"{p:.6f}"])
    return report
