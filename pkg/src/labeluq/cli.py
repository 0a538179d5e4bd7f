"""Command-line harness tying the library together.

Subcommands: synth-gen (write a synthetic dataset), infer (label
uncertainty over a dataset), experiment (the full method comparison),
evaluate (KITTI-protocol AP for detection records), heatmap (posterior
corner-density grids). Every command writes a checksummed manifest next to
its outputs; identical manifests reproduce identical bytes.

Exit codes: 0 success, 1 usage error, 2 input parse error, 3 numerical
failure.
"""

from __future__ import annotations

import dataclasses
import json
import sys
from pathlib import Path

import click
import numpy as np

from .encoding import propagate_variance
from .evaluation import Detection, NoGroundTruth, evaluate_frames, ground_truths_at_difficulty
from .geometry import BoxBEV
from .heatmap import encode_pgm, grid_shape, heatmap_csv_lines, heatmap_grid
from .kitti_io import CropRange, Difficulty, MalformedLine, TruncatedFile, read_split_ids
from .label_uncertainty import GenerativeModelConfig, infer_label_posterior
from .heuristics import HeuristicConfig, OutOfRange
from .records import (
    ObjectRecord,
    SchemaError,
    atomic_write_bytes,
    atomic_write_text,
    dump_jsonl,
    load_jsonl,
    records_from_kitti_frame,
    records_from_scene,
    schema_tag,
    write_manifest,
)
from .synth import (
    DIFFICULTIES,
    ExperimentConfig,
    NonFiniteLoss,
    SceneConfig,
    generate_scene,
    make_provider,
    run_experiment,
)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_PARSE = 2
EXIT_NUMERIC = 3

_PARSE_ERRORS = (
    SchemaError,
    MalformedLine,
    TruncatedFile,
    OutOfRange,
    json.JSONDecodeError,
    UnicodeDecodeError,
    FileNotFoundError,
    KeyError,
)
_NUMERIC_ERRORS = (NonFiniteLoss, FloatingPointError, np.linalg.LinAlgError)


def _dataclass_from_dict(cls, data):
    """Build a (possibly nested) config dataclass from a plain dict."""
    fields = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in fields:
            raise SchemaError(f"unknown config key {key!r} for {cls.__name__}")
        default = fields[key].default
        if dataclasses.is_dataclass(default) and isinstance(value, dict):
            value = _dataclass_from_dict(type(default), value)
        elif isinstance(default, tuple) and isinstance(value, list):
            value = tuple(value)
        kwargs[key] = value
    return dataclasses.replace(cls(), **kwargs)


def _config_to_jsonable(obj):
    if dataclasses.is_dataclass(obj):
        return {f.name: _config_to_jsonable(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
    if isinstance(obj, tuple):
        return [_config_to_jsonable(v) for v in obj]
    return obj


def _load_config(path, cls):
    if path is None:
        return cls()
    data = json.loads(Path(path).read_text())
    return _dataclass_from_dict(cls, data)


def _load_dataset(path, split_file=None):
    """ObjectRecords from a JSONL dataset file or a KITTI root directory."""
    path = Path(path)
    if path.is_dir():
        if split_file is not None:
            frame_ids = read_split_ids(split_file)
        else:
            frame_ids = sorted(p.stem for p in (path / "label_2").glob("*.txt"))
        records = []
        for frame_id in frame_ids:
            records.extend(records_from_kitti_frame(path, frame_id))
        return records
    return [ObjectRecord.from_record(rec) for rec in load_jsonl(path, kind="object")]


@click.group()
def cli():
    """Label-uncertainty tooling for BEV box regression."""


@cli.command("synth-gen")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None, help="SceneConfig JSON.")
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--scenes", type=int, default=20, show_default=True)
@click.option("--seed", type=int, default=None, help="Override the scene seed.")
@click.option("--offset", type=int, default=0, show_default=True, help="First scene index.")
def cmd_synth_gen(config_path, out_path, scenes, seed, offset):
    """Generate a synthetic dataset as object records."""
    cfg = _load_config(config_path, SceneConfig)
    if seed is not None:
        cfg = dataclasses.replace(cfg, seed=seed)
    records = []
    for i in range(scenes):
        for rec in records_from_scene(generate_scene(cfg, index=offset + i)):
            records.append(rec.to_record())
    dump_jsonl(out_path, "object", records)
    write_manifest(
        str(out_path) + ".manifest.json",
        command="synth-gen",
        config=_config_to_jsonable(cfg),
        seeds=[cfg.seed],
        inputs=[p for p in [config_path] if p],
        output_paths=[out_path],
    )
    click.echo(f"wrote {len(records)} object records to {out_path}")


@cli.command("infer")
@click.option("--dataset", "dataset_path", type=click.Path(exists=True), required=True,
              help="Object-record JSONL file or KITTI root directory.")
@click.option("--method", required=True,
              help="generative, numpoints, covxhull, or fixed:<value>.")
@click.option("--out", "out_path", type=click.Path(), required=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="JSON with optional 'generative' / 'heuristic' config sections.")
@click.option("--split-file", type=click.Path(exists=True), default=None,
              help="Frame-ID list when the dataset is a KITTI directory.")
def cmd_infer(dataset_path, method, out_path, config_path, split_file):
    """Label-uncertainty records for every object in a dataset."""
    gen_cfg = GenerativeModelConfig()
    heur_cfg = HeuristicConfig()
    if config_path is not None:
        data = json.loads(Path(config_path).read_text())
        if "generative" in data:
            gen_cfg = _dataclass_from_dict(GenerativeModelConfig, data["generative"])
        if "heuristic" in data:
            heur_cfg = _dataclass_from_dict(HeuristicConfig, data["heuristic"])
    provider = make_provider(method, gen_cfg, heur_cfg)
    if provider is None:
        raise click.UsageError(f"method {method!r} provides no uncertainty")
    records = _load_dataset(dataset_path, split_file)
    out = []
    for rec in records:
        var = np.asarray(provider(rec.label, rec.points), dtype=float)
        out.append(
            {
                "schema": schema_tag("uncertainty"),
                "frame": rec.frame,
                "index": rec.index,
                "method": method,
                "m": rec.points.m,
                "mean": [float(v) for v in rec.label.as_vector()],
                "var": [float(v) for v in var],
                "encoded_var": [float(v) for v in propagate_variance(var, at=rec.label)],
            }
        )
    dump_jsonl(out_path, "uncertainty", out)
    write_manifest(
        str(out_path) + ".manifest.json",
        command="infer",
        config={
            "method": method,
            "generative": _config_to_jsonable(gen_cfg),
            "heuristic": _config_to_jsonable(heur_cfg),
        },
        seeds=[],
        inputs=[str(dataset_path)] + ([split_file] if split_file else []),
        output_paths=[out_path],
    )
    click.echo(f"wrote {len(out)} uncertainty records to {out_path}")


def _format_ap(mean, delta=None):
    if delta is None:
        return f"{100 * mean:.2f}"
    return f"{100 * mean:.2f} ({100 * delta:+.2f})"


@cli.command("experiment")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="ExperimentConfig JSON.")
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--seeds", "n_seeds", type=int, default=None, help="Override n_seeds.")
@click.option("--seed", "base_seed", type=int, default=None, help="Override base_seed.")
@click.option("--difficulty-variant", type=click.Choice(["r41", "r40"]), default=None,
              help="Recall grid: r41 keeps the r=0 position, r40 drops it.")
def cmd_experiment(config_path, out_dir, n_seeds, base_seed, difficulty_variant):
    """Train and evaluate every method on the synthetic benchmark."""
    cfg = _load_config(config_path, ExperimentConfig)
    if n_seeds is not None:
        cfg = dataclasses.replace(cfg, n_seeds=n_seeds)
    if base_seed is not None:
        cfg = dataclasses.replace(cfg, base_seed=base_seed)
    if difficulty_variant is not None:
        cfg = dataclasses.replace(cfg, include_r0=difficulty_variant == "r41")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    result = run_experiment(cfg)
    variant = "r41" if cfg.include_r0 else "r40"

    table_records = []
    table_csv = ["method,difficulty,mean_ap,std_ap,delta_vs_baseline,n_seeds"]
    pretty = [f"AP ({variant}, IoU {cfg.iou_thresh:g})"]
    header = f"{'method':16s}" + "".join(f"{d.value:>18s}" for d in DIFFICULTIES)
    pretty.append(header)
    for row in result.table_rows():
        method = row["method"]
        line = f"{method:16s}"
        for diff in DIFFICULTIES:
            cell = row[diff.value]
            if cell is None:
                table_csv.append(f"{method},{diff.value},nan,nan,,{cfg.n_seeds}")
                line += f"{'failed':>18s}"
                continue
            delta = cell["delta"] if method != "baseline-nll" else None
            table_records.append(
                {
                    "schema": schema_tag("aptable"),
                    "method": method,
                    "difficulty": diff.value,
                    "mean_ap": cell["mean"],
                    "std_ap": cell["std"],
                    "delta_vs_baseline": cell["delta"],
                    "n_seeds": cfg.n_seeds,
                }
            )
            table_csv.append(
                f"{method},{diff.value},{cell['mean']!r},{cell['std']!r},{cell['delta']!r},{cfg.n_seeds}"
            )
            line += f"{_format_ap(cell['mean'], delta):>18s}"
        pretty.append(line)

    sweep_records = []
    sweep_csv = ["log10_var,difficulty,mean_ap,std_ap"]
    for lg in cfg.sweep_log10:
        for diff in DIFFICULTIES:
            aps = result.sweep[lg][diff]
            mean, std = float(np.mean(aps)), float(np.std(aps))
            sweep_records.append(
                {
                    "schema": schema_tag("sweeppoint"),
                    "log10_var": float(lg),
                    "difficulty": diff.value,
                    "mean_ap": mean,
                    "std_ap": std,
                }
            )
            sweep_csv.append(f"{lg!r},{diff.value},{mean!r},{std!r}")

    pr_records = []
    for (method, diff), ap_result in sorted(result.pr.items(), key=lambda kv: (kv[0][0], kv[0][1].value)):
        pr_records.append(
            {
                "schema": schema_tag("apresult"),
                "method": method,
                "difficulty": diff.value,
                "ap": float(ap_result.ap),
                "tp": int(ap_result.tp),
                "fp": int(ap_result.fp),
                "fn": int(ap_result.fn),
                "variant": variant,
            }
        )
        for r, p in zip(ap_result.recalls, ap_result.precisions):
            pr_records.append(
                {
                    "schema": schema_tag("prpoint"),
                    "method": method,
                    "difficulty": diff.value,
                    "recall": float(r),
                    "precision": float(p),
                }
            )

    outputs = {
        "ap_table.jsonl": lambda p: dump_jsonl(p, "aptable", table_records),
        "ap_table.csv": lambda p: atomic_write_text(p, "\n".join(table_csv) + "\n"),
        "ap_table.txt": lambda p: atomic_write_text(p, "\n".join(pretty) + "\n"),
        "sweep.jsonl": lambda p: dump_jsonl(p, "sweeppoint", sweep_records),
        "sweep.csv": lambda p: atomic_write_text(p, "\n".join(sweep_csv) + "\n"),
        "pr_curves.jsonl": lambda p: atomic_write_text(
            p, "\n".join(json.dumps(r, sort_keys=True) for r in pr_records) + "\n"
        ),
    }
    paths = []
    for name, writer in outputs.items():
        path = out_dir / name
        writer(path)
        paths.append(path)

    write_manifest(
        out_dir / "manifest.json",
        command="experiment",
        config=_config_to_jsonable(cfg),
        seeds=[cfg.base_seed + s for s in range(cfg.n_seeds)],
        inputs=[p for p in [config_path] if p],
        output_paths=paths,
    )
    if result.errors:
        click.echo(f"completed with failed cells: {result.errors}", err=True)
    click.echo("\n".join(pretty))


@cli.command("evaluate")
@click.option("--detections", "det_path", type=click.Path(exists=True), required=True)
@click.option("--dataset", "dataset_path", type=click.Path(exists=True), required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--iou", type=float, default=0.7, show_default=True)
@click.option("--difficulty", type=click.Choice([d.value for d in DIFFICULTIES]),
              default="moderate", show_default=True)
@click.option("--difficulty-variant", type=click.Choice(["r41", "r40"]), default="r41",
              show_default=True)
@click.option("--method", default="external", show_default=True, help="Tag for the records.")
def cmd_evaluate(det_path, dataset_path, out_dir, iou, difficulty, difficulty_variant, method):
    """Score detection records against a dataset at one difficulty."""
    dataset = _load_dataset(dataset_path)
    det_records = load_jsonl(det_path, kind="detection")
    target = Difficulty(difficulty)
    include_r0 = difficulty_variant == "r41"

    dets_by_frame = {}
    for rec in det_records:
        dets_by_frame.setdefault(rec["frame"], []).append(
            Detection(box=BoxBEV.from_vector(rec["box"]), score=float(rec["score"]))
        )
    gts_by_frame = {}
    for rec in dataset:
        box = rec.truth if rec.truth is not None else rec.label
        diff = rec.difficulty if rec.difficulty is not None else Difficulty.EASY
        gts_by_frame.setdefault(rec.frame, []).append((box, diff))

    frames = sorted(set(dets_by_frame) | set(gts_by_frame))
    frame_dets = [dets_by_frame.get(f, []) for f in frames]
    frame_gts = [
        ground_truths_at_difficulty(gts_by_frame.get(f, []), target) for f in frames
    ]
    result = evaluate_frames(frame_dets, frame_gts, iou_thresh=iou, include_r0=include_r0)

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    records = [
        {
            "schema": schema_tag("apresult"),
            "method": method,
            "difficulty": target.value,
            "ap": float(result.ap),
            "tp": int(result.tp),
            "fp": int(result.fp),
            "fn": int(result.fn),
            "variant": difficulty_variant,
        }
    ]
    for r, p in zip(result.recalls, result.precisions):
        records.append(
            {
                "schema": schema_tag("prpoint"),
                "method": method,
                "difficulty": target.value,
                "recall": float(r),
                "precision": float(p),
            }
        )
    pr_path = out_dir / "pr_curve.jsonl"
    atomic_write_text(pr_path, "\n".join(json.dumps(r, sort_keys=True) for r in records) + "\n")
    write_manifest(
        out_dir / "manifest.json",
        command="evaluate",
        config={"iou": iou, "difficulty": target.value, "variant": difficulty_variant},
        seeds=[],
        inputs=[str(det_path), str(dataset_path)],
        output_paths=[pr_path],
    )
    click.echo(f"AP({target.value}, IoU {iou:g}, {difficulty_variant}) = {100 * result.ap:.2f}")


@cli.command("heatmap")
@click.option("--dataset", "dataset_path", type=click.Path(exists=True), required=True)
@click.option("--frame", required=True)
@click.option("--out", "out_dir", type=click.Path(), required=True)
@click.option("--samples", type=int, default=4000, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="JSON with optional 'generative' and 'crop' sections.")
def cmd_heatmap(dataset_path, frame, out_dir, samples, seed, config_path):
    """Posterior corner-density grids for every object in one frame."""
    gen_cfg = GenerativeModelConfig()
    crop = CropRange()
    if config_path is not None:
        data = json.loads(Path(config_path).read_text())
        if "generative" in data:
            gen_cfg = _dataclass_from_dict(GenerativeModelConfig, data["generative"])
        if "crop" in data:
            crop = _dataclass_from_dict(CropRange, data["crop"])
    records = [rec for rec in _load_dataset(dataset_path) if rec.frame == frame]
    if not records:
        raise SchemaError(f"frame {frame!r} not found in {dataset_path}")

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for rec in records:
        post = infer_label_posterior(rec.label, rec.points, gen_cfg)
        grid = heatmap_grid(post, crop, n_samples=samples, seed=[seed, rec.index])
        base = out_dir / f"object_{rec.index:03d}"
        pgm_path = base.with_suffix(".pgm")
        csv_path = base.with_suffix(".csv")
        pts_path = out_dir / f"points_{rec.index:03d}.csv"
        atomic_write_bytes(pgm_path, encode_pgm(grid))
        atomic_write_text(csv_path, "\n".join(heatmap_csv_lines(grid)) + "\n")
        atomic_write_text(
            pts_path,
            "\n".join(["x,y"] + [f"{p[0]!r},{p[1]!r}" for p in rec.points.points]) + "\n",
        )
        paths.extend([pgm_path, csv_path, pts_path])
    nx, ny = grid_shape(crop)
    write_manifest(
        out_dir / "manifest.json",
        command="heatmap",
        config={
            "frame": frame,
            "samples": samples,
            "grid": [nx, ny],
            "generative": _config_to_jsonable(gen_cfg),
            "crop": _config_to_jsonable(crop),
        },
        seeds=[seed],
        inputs=[str(dataset_path)],
        output_paths=paths,
    )
    click.echo(f"wrote {len(records)} heatmaps to {out_dir}")


def main(argv=None):
    """Entry point with the documented exit-code contract."""
    try:
        cli.main(args=argv, standalone_mode=False)
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except click.exceptions.Abort:
        return EXIT_USAGE
    except _PARSE_ERRORS as exc:
        click.echo(f"input error: {exc}", err=True)
        return EXIT_PARSE
    except _NUMERIC_ERRORS as exc:
        click.echo(f"numerical failure: {exc}", err=True)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
