"""Batch front-end: `python cli.py run --scenario s.json --out d [--u-ego 0:1:0.1] ...`."""
import argparse
import logging
import math
import sys
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import pandas as pd
from pydantic import ValidationError

from app.core.config import get_settings
from app.core.errors import EmptyCurveError, FitDivergenceError, GevbevError, ScenarioError
from app.core.logging import configure_logging
from app.services.coop import SelectionResult, SweepTable, evaluate, latency_ms, run_selection, write_sweep
from app.services.evmap import write_snapshot
from app.services.fit import LOSS_COLUMNS, write_loss_curve
from app.services.metrics import (
    CalibrationCurve,
    calibration_deviation,
    entropy_calibration,
    raster_calibration,
    write_calibration,
)
from app.services.pipeline import (
    PreparedScene,
    all_detections,
    detections_frame,
    fuse_detections,
    load_scenario,
    run_sweep,
    write_detections,
)
from app.services.render import render_maps
from models import Layer, LayerReport, Manifest, PipelineConfig, RunConfig, Strategy

logger = logging.getLogger("gevbev.cli")

MANIFEST = "manifest.json"

EXIT_OK = 0
EXIT_DOMAIN = 1
EXIT_CONFIG = 2
EXIT_DIVERGED = 3


def parse_u_ego(text: str) -> List[float]:
    """A single threshold, or an inclusive lo:hi:step sweep."""
    parts = text.split(":")
    if len(parts) == 1:
        return [float(parts[0])]
    if len(parts) != 3:
        raise ValueError(f"expected a value or lo:hi:step, got {text!r}")
    lo, hi, step = (float(p) for p in parts)
    if step <= 0 or hi < lo:
        raise ValueError(f"sweep {text!r} needs step > 0 and hi >= lo")
    n = math.floor((hi - lo) / step + 1e-9)
    return [round(lo + i * step, 10) for i in range(n + 1)]


def parse_layers(text: str) -> List[Layer]:
    layers = list(dict.fromkeys(Layer(name.strip()) for name in text.split(",") if name.strip()))
    if not layers:
        raise ValueError("at least one layer is required")
    return layers


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gevbev")
    sub = parser.add_subparsers(dest="command", required=True)
    run_p = sub.add_parser("run", help="simulate a scenario, fit maps, run CPM selection and write artifacts")
    run_p.add_argument("--scenario", required=True, type=Path)
    run_p.add_argument("--out", required=True, type=Path)
    run_p.add_argument("--u-ego", default="0.5", help="threshold or lo:hi:step sweep")
    run_p.add_argument("--u-coop", type=float, default=1.0)
    run_p.add_argument("--strategy", choices=[s.value for s in Strategy], default=Strategy.ALL.value)
    run_p.add_argument("--u-thr", type=float, default=1.0)
    run_p.add_argument("--seed", type=int, default=None)
    run_p.add_argument("--layers", type=parse_layers, default=[Layer.ROAD, Layer.OBJECT])
    run_p.add_argument("--range", dest="range_m", type=float, default=50.0)
    run_p.add_argument("--resolution", type=float, default=0.4)
    run_p.add_argument("--epochs", type=int, default=None)
    run_p.add_argument("--no-free-space", action="store_true")
    return parser


def config_from_args(args: argparse.Namespace) -> RunConfig:
    pipeline = PipelineConfig(range_m=args.range_m, resolution=args.resolution, use_free_space=not args.no_free_space)
    if args.epochs is not None:
        pipeline = pipeline.model_copy(update={"fit": pipeline.fit.model_copy(update={"epochs": args.epochs})})
    return RunConfig(
        scenario=args.scenario,
        out=args.out,
        u_ego=parse_u_ego(args.u_ego),
        sweep=":" in args.u_ego,
        u_coop=args.u_coop,
        strategy=Strategy(args.strategy),
        u_thr=args.u_thr,
        seed=args.seed,
        layers=args.layers,
        pipeline=pipeline,
    )


def _deviation(curve: CalibrationCurve) -> Optional[float]:
    try:
        return calibration_deviation(curve)
    except EmptyCurveError:
        return None


class _Artifacts:
    """Writes files under the output directory and remembers every name it wrote."""

    def __init__(self, out: Path):
        self.out = out
        self.names: List[str] = []
        out.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        self.names.append(name)
        return self.out / name

    def write_bytes(self, name: str, data: bytes) -> None:
        self.path(name).write_bytes(data)


def _write_layer(
    files: _Artifacts, scene: PreparedScene, config: RunConfig, layer: Layer, table: SweepTable
) -> Tuple[LayerReport, SelectionResult]:
    prepared = scene.layers[layer]
    pipeline = config.pipeline
    u_ego = config.u_ego[0]
    sel = run_selection(prepared, u_ego, config.u_coop, config.strategy)
    raster = sel.fused.raster()

    for name, data in render_maps(raster).items():
        files.write_bytes(f"{layer.value}_{name}", data)
    for agent_id, message in sorted(sel.messages.items()):
        files.write_bytes(f"cpm_{layer.value}_agent{agent_id}.bin", message)

    ego = scene.ego.layers[layer]
    loss_path = files.path(f"{layer.value}_loss.csv")
    if ego.fit is not None:
        write_loss_curve(ego.fit, loss_path)
    else:
        pd.DataFrame(columns=LOSS_COLUMNS).to_csv(loss_path, index=False)
    write_snapshot(ego.map, files.path(f"{layer.value}_map.csv"))

    evidential = raster_calibration(raster, prepared.gt)
    entropy = entropy_calibration(raster, prepared.gt)
    write_calibration(evidential, files.path(f"{layer.value}_calibration.csv"))
    write_calibration(entropy, files.path(f"{layer.value}_calibration_entropy.csv"))

    fused_all, fused_obs = evaluate(sel.fused, prepared.gt, config.u_thr)
    summary = next(s for s in table.summaries if s.layer is layer)
    report = LayerReport(
        rendered_u_ego=u_ego,
        ego_iou_all=summary.ego_iou_all,
        ego_iou_obs=summary.ego_iou_obs,
        fused_iou_all=fused_all,
        fused_iou_obs=fused_obs,
        baseline_iou_all=summary.baseline_iou_all,
        baseline_iou_obs=summary.baseline_iou_obs,
        selected_bytes=sel.total_bytes,
        baseline_bytes=summary.baseline_bytes,
        selected_latency_ms=latency_ms(sel.total_bytes, pipeline.link_mbps),
        baseline_latency_ms=summary.baseline_latency_ms,
        n_centers=len(ego.map),
        initial_loss=ego.fit.initial_loss if ego.fit is not None else None,
        final_loss=ego.fit.final_loss if ego.fit is not None else None,
        calibration_deviation=_deviation(evidential),
        entropy_calibration_deviation=_deviation(entropy),
    )
    return report, sel


def run(config: RunConfig, workers: int = 1) -> Manifest:
    scenario = load_scenario(config.scenario).with_seed(config.seed)
    scene, table = run_sweep(
        scenario,
        config.pipeline,
        config.u_ego,
        layers=config.layers,
        strategy=config.strategy,
        u_coop=config.u_coop,
        u_thr=config.u_thr,
        workers=workers,
    )
    files = _Artifacts(config.out)
    summary: Dict[Layer, LayerReport] = {}
    selections: Dict[Layer, SelectionResult] = {}
    for layer in config.layers:
        summary[layer], selections[layer] = _write_layer(files, scene, config, layer, table)

    n_detections = 0
    if Layer.OBJECT in config.layers:
        detections = fuse_detections(all_detections(scene), config.pipeline.nms_iou)
        n_detections = len(detections)
        frame = detections_frame(detections, scene.gt_boxes, selections[Layer.OBJECT].fused.e_fg, scene.spec)
        write_detections(frame, files.path("object_detections.csv"))
    if config.sweep:
        write_sweep(table, files.path("sweep.csv"))

    files.names.append(MANIFEST)
    manifest = Manifest(files=sorted(files.names), config=config, summary=summary, n_detections=n_detections)
    (config.out / MANIFEST).write_text(manifest.model_dump_json(indent=2) + "\n", encoding="utf-8")
    for layer, report in summary.items():
        logger.info(
            "%s: IoU obs ego %.4f fused %.4f full %.4f, %d of %d bytes",
            layer.value,
            report.ego_iou_obs,
            report.fused_iou_obs,
            report.baseline_iou_obs,
            report.selected_bytes,
            report.baseline_bytes,
        )
    return manifest


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    settings = get_settings()
    configure_logging(settings.log_level)
    try:
        config = config_from_args(args)
        run(config, settings.worker_count)
    except FitDivergenceError as e:
        logger.error("fit diverged: %s", e)
        return EXIT_DIVERGED
    except (ScenarioError, ValidationError) as e:
        logger.error("invalid scenario or config: %s", e)
        return EXIT_CONFIG
    except GevbevError as e:
        logger.error("%s: %s", type(e).__name__, e)
        return EXIT_DOMAIN
    except ValueError as e:
        logger.error("invalid argument: %s", e)
        return EXIT_CONFIG
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
