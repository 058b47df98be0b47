"""Command-line front end: generate scenarios, run attacks, benchmark, ablate, defend.

All outputs are files (JSON reports, CSV tables, SVG charts). Relative output
paths resolve against the report directory, which defaults to the working
directory and can be overridden with the FUSELAG_REPORT_DIR environment
variable. Runs are deterministic given the seed and config, except for
wall-clock timing fields.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import click

from . import charts, defense, io, metrics
from .config import load_config
from .experiment import BASELINES, default_anchors, prepare_frame, run_attack_experiment
from .pipeline import run_pipeline
from .scenario import generate_scenario, synth_head_weights
from .types import ValidationError

REPORT_DIR_ENV = "FUSELAG_REPORT_DIR"


def _out_path(path) -> Path:
    p = Path(path)
    if p.is_absolute():
        return p
    base = Path(os.environ.get(REPORT_DIR_ENV, "."))
    base.mkdir(parents=True, exist_ok=True)
    return base / p


def _fail(exc: Exception):
    raise click.ClickException(str(exc))


@click.group()
def main():
    """Latency-attack lab for intermediate-fusion cooperative perception."""


@main.command()
@click.option("--seed", default=42, show_default=True, type=int)
@click.option("--agents", default=2, show_default=True, type=int)
@click.option("--objects", default=3, show_default=True, type=int)
@click.option("--frames", default=20, show_default=True, type=int)
@click.option("--out", default="scenario.json", show_default=True)
def gen(seed, agents, objects, frames, out):
    """Write a deterministic scenario JSON."""
    try:
        scenario = generate_scenario(seed, n_agents=agents, n_objects=objects,
                                     n_frames=frames)
    except ValidationError as exc:
        _fail(exc)
    path = _out_path(out)
    io.save_scenario(scenario, path)
    click.echo(f"wrote {path}")


@main.command()
@click.option("--scenario", "scenario_path", required=True,
              type=click.Path(exists=True))
@click.option("--config", "config_path", default=None, type=click.Path(exists=True))
@click.option("--baseline", default="cp-freezer", show_default=True,
              type=click.Choice(BASELINES))
@click.option("--no-warp", is_flag=True,
              help="Plan against the victim's stale pose instead of its current one.")
@click.option("--out", default="report.json", show_default=True)
@click.option("--csv", "csv_out", default=None,
              help="Also flatten per-frame rows to this CSV path.")
def attack(scenario_path, config_path, baseline, no_warp, out, csv_out):
    """Per-frame online attack from one-frame-delayed victim knowledge."""
    try:
        scenario = io.load_scenario(scenario_path)
        cfg = load_config(config_path)
        report = run_attack_experiment(
            scenario, cfg.attack, cfg.post, baseline=baseline,
            use_warp=not no_warp,
            asr_threshold_seconds=cfg.asr_threshold_seconds, ap_iou=cfg.ap_iou)
    except ValidationError as exc:
        _fail(exc)
    path = _out_path(out)
    report.to_json(path)
    if csv_out:
        report.to_csv(_out_path(csv_out))
    agg = report.aggregates()
    click.echo(f"wrote {path}")
    click.echo(f"mean RoI-L {agg['mean_roi_l']:.2f}  "
               f"mean RoI-P {agg['mean_roi_p']:.2f}  ASR {agg['asr']:.2f}")


@main.command()
@click.option("--report", "report_paths", multiple=True, required=True,
              type=click.Path(exists=True))
@click.option("--svg", "svg_dir", default=".", show_default=True,
              help="Directory (under the report dir) for the SVG charts.")
def bench(report_paths, svg_dir):
    """Aggregate attack reports into a summary table and SVG charts."""
    try:
        reports = [metrics.RunReport.from_json(p) for p in report_paths]
    except (ValidationError, KeyError, json.JSONDecodeError) as exc:
        _fail(exc)
    out_dir = _out_path(svg_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    charts.latency_boxplot(reports, out_dir / "latency_boxplot.svg")
    charts.asr_curve(reports, out_dir / "asr_curve.svg")

    rows = []
    for r in reports:
        agg = r.aggregates()
        rows.append({"label": r.label, **{k: agg[k] for k in (
            "mean_roi_l", "mean_roi_p", "asr", "attacked_rsd_percent",
            "mean_benign_ap", "mean_attacked_ap")}})
    summary = out_dir / "summary.csv"
    with open(summary, "w") as fh:
        fh.write(",".join(rows[0]) + "\n")
        for row in rows:
            fh.write(",".join(f"{v:.4f}" if isinstance(v, float) else str(v)
                              for v in row.values()) + "\n")
    for row in rows:
        click.echo("  ".join(f"{k}={v:.3f}" if isinstance(v, float) else f"{k}={v}"
                             for k, v in row.items()))
    click.echo(f"wrote {summary} and charts to {out_dir}")


@main.command()
@click.option("--scenario", "scenario_path", required=True,
              type=click.Path(exists=True))
@click.option("--config", "config_path", default=None, type=click.Path(exists=True))
@click.option("--confidence", "confidences", multiple=True, type=float,
              default=(0.2,), show_default=True)
@click.option("--iou", "ious", multiple=True, type=float,
              default=(0.05, 0.15, 0.30), show_default=True)
@click.option("--max-keep", "max_keeps", multiple=True, type=int,
              default=(1000, 500, 250, 125), show_default=True)
@click.option("--baseline", default="cp-freezer", show_default=True,
              type=click.Choice(BASELINES))
@click.option("--no-warp", is_flag=True)
@click.option("--repeats", default=3, show_default=True, type=int)
@click.option("--out", default="ablation", show_default=True,
              help="Output prefix: <out>.csv plus one heatmap SVG per metric.")
def ablate(scenario_path, config_path, confidences, ious, max_keeps, baseline,
           no_warp, repeats, out):
    """Sweep the victim's post-processing grid and report RoI heatmaps."""
    try:
        scenario = io.load_scenario(scenario_path)
        cfg = load_config(config_path)
        report = defense.sweep_postprocess(
            scenario, cfg.attack, confidences, ious, max_keeps,
            baseline=baseline, use_warp=not no_warp, repeats=repeats)
    except ValidationError as exc:
        _fail(exc)
    prefix = _out_path(out)
    report.to_csv(prefix.with_suffix(".csv"))
    for value in ("roi_l", "roi_p"):
        charts.ablation_heatmap(report, prefix.parent / f"{prefix.name}_{value}.svg",
                                value=value)
    click.echo(f"wrote {prefix.with_suffix('.csv')} and heatmaps")


@main.command()
@click.option("--scenario", "scenario_path", required=True,
              type=click.Path(exists=True))
@click.option("--config", "config_path", default=None, type=click.Path(exists=True))
@click.option("--iterations", default=8, show_default=True, type=int)
@click.option("--subset-size", default=1, show_default=True, type=int)
@click.option("--frame", default=None, type=int,
              help="Frame to defend; defaults to the middle frame.")
@click.option("--seed", default=0, show_default=True, type=int,
              help="Seed for the subset sampling.")
@click.option("--out", default="defense.json", show_default=True)
def defend(scenario_path, config_path, iterations, subset_size, frame, seed, out):
    """Run the subset-consensus defense on one attacked frame."""
    try:
        scenario = io.load_scenario(scenario_path)
        cfg = load_config(config_path)
        anchors = default_anchors(scenario)
        head = synth_head_weights(anchors, scenario.grid.channels)
        frame = frame if frame is not None else max(scenario.n_frames // 2, 1)
        bundle = prepare_frame(scenario, frame, head, anchors, cfg.attack,
                               baseline="cp-freezer", use_warp=True,
                               count_threshold=cfg.post.confidence_threshold)
        benign = run_pipeline(bundle.benign_features, head, anchors, cfg.post)
        undefended = min(
            (run_pipeline(bundle.attacked_features, head, anchors, cfg.post)
             for _ in range(3)), key=lambda r: r.timing.total)
        defended = defense.robosac_consensus(
            bundle.attacked_features, head, anchors, cfg.post,
            n_sampling_iterations=iterations, subset_size=subset_size,
            seed=seed)
    except ValidationError as exc:
        _fail(exc)

    result = {
        "schema_version": 1,
        "note": ("consensus scheme is a subset-sampling reconstruction; "
                 "sampling count, subset size, and acceptance threshold are "
                 "configuration, not measured properties of any deployed system"),
        "frame": frame,
        "iterations": iterations,
        "subset_size": subset_size,
        "benign_latency": benign.timing.total,
        "undefended_latency": undefended.timing.total,
        "defended_latency": defended.timing.total,
        "amplification": defended.timing.total / undefended.timing.total,
        "benign_ap": metrics.average_precision(benign.detections,
                                               bundle.ground_truth, cfg.ap_iou),
        "undefended_ap": metrics.average_precision(
            undefended.detections, bundle.ground_truth, cfg.ap_iou),
        "defended_ap": metrics.average_precision(
            defended.detections, bundle.ground_truth, cfg.ap_iou),
        "consensus_accepted": defended.accepted_any,
        "per_iteration": [{"subset": list(map(int, it.subset)),
                           "jaccard": it.jaccard, "accepted": it.accepted,
                           "latency": it.latency}
                          for it in defended.iterations],
    }
    path = _out_path(out)
    path.write_text(json.dumps(result, indent=2) + "\n")
    click.echo(f"wrote {path}")
    click.echo(f"amplification {result['amplification']:.2f}x  "
               f"defended AP {result['defended_ap']:.3f} "
               f"(benign {result['benign_ap']:.3f})")


if __name__ == "__main__":
    main()
