"""End-to-end run orchestration: passes, persistence, run manifest.

The three passes execute in order up to the configured depth; the merge
stage always runs on the deepest masks so every run yields final labelmaps.
Worker count changes scheduling only, never bytes on disk.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import cv2
import numpy as np

from .config import PASS_NAMES, RunConfig, config_fingerprint
from .contextual import run_contextual
from .core import SequenceStore
from .errors import EngineError
from .guided import run_guided
from .preview import PreviewParams, run_preview
from .providers import PerceptionHub
from .refine import run_refine
from .seqio import atomic_write_json, load_sequence, save_labelmap_png, save_mask_png

log = logging.getLogger(__name__)


@dataclass(slots=True)
class SequenceReport:
    name: str
    frames: int
    instances: list[int]
    passes: list[str]


@dataclass(slots=True)
class RunReport:
    out: Path
    manifest: Path
    sequences: list[SequenceReport] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "out": str(self.out),
            "manifest": str(self.manifest),
            "sequences": [
                {
                    "name": s.name,
                    "frames": s.frames,
                    "instances": s.instances,
                    "passes": s.passes,
                }
                for s in self.sequences
            ],
        }


def preview_params_from(config: RunConfig) -> PreviewParams:
    t = config.thresholds
    return PreviewParams(
        history_n=t["history_n"],
        history_delta=t["history_delta"],
        preview_window=t["preview_window"],
        presence_threshold=t["presence"],
        area_band=t["area_update_band"],
        grabcut_iterations=t["grabcut_iterations"],
        box_expand=t["box_expand"],
        reappear_similarity=t["reappear_similarity"],
        rigid_inlier_ratio=t["rigid_inlier_ratio"],
        rigid_frame_fraction=t["rigid_frame_fraction"],
    )


def build_hub(config: RunConfig) -> PerceptionHub:
    return PerceptionHub(
        endpoints=dict(config.providers), strict=config.strict_providers
    )


def _write_instance_masks(
    root: Path, name: str, masks: dict[int, list[np.ndarray]]
) -> None:
    for i, track in sorted(masks.items()):
        inst_dir = root / name / f"{i:02d}"
        inst_dir.mkdir(parents=True, exist_ok=True)
        for t, mask in enumerate(track):
            save_mask_png(inst_dir / f"{t:05d}.png", mask)


def _rethrow(err: EngineError, name: str, pass_name: str):
    raise err.__class__(f"sequence {name}, pass {pass_name}: {err}") from err


def run_sequence(
    store: SequenceStore,
    hub: PerceptionHub,
    config: RunConfig,
    out_root: Path,
    executor=None,
) -> SequenceReport:
    """Execute the configured passes on one sequence and persist outputs."""
    depth = PASS_NAMES.index(config.passes) + 1
    executed: list[str] = []
    params = preview_params_from(config)

    try:
        preview = run_preview(store, hub, config.seed, params, executor=executor)
    except EngineError as err:
        _rethrow(err, store.name, "preview")
    masks = preview.masks
    executed.append("preview")
    _write_instance_masks(out_root / "preview", store.name, masks)

    if depth >= 2:
        try:
            masks = run_contextual(
                store, hub, preview, config.seed, executor=executor
            )
        except EngineError as err:
            _rethrow(err, store.name, "contextual")
        executed.append("contextual")
        _write_instance_masks(out_root / "contextual", store.name, masks)

    if depth >= 3:
        try:
            masks = run_guided(store, hub, preview, masks, config.seed, executor=executor)
        except EngineError as err:
            _rethrow(err, store.name, "guided")
        executed.append("guided")
        _write_instance_masks(out_root / "guided", store.name, masks)

    try:
        labelmaps = run_refine(store, hub, preview, masks)
    except EngineError as err:
        _rethrow(err, store.name, "refine")
    final_dir = out_root / "final" / store.name
    final_dir.mkdir(parents=True, exist_ok=True)
    for t, labelmap in enumerate(labelmaps):
        save_labelmap_png(final_dir / f"{t:05d}.png", labelmap)

    return SequenceReport(
        name=store.name,
        frames=store.frame_count,
        instances=store.instance_ids(),
        passes=executed,
    )


def write_manifest(config: RunConfig, path: Path) -> None:
    from . import __version__

    atomic_write_json(
        path,
        {
            "config": config_fingerprint(config),
            "seed": config.seed,
            "names": list(config.names),
            "passes": config.passes,
            "versions": {
                "videoseg": __version__,
                "numpy": np.__version__,
                "opencv": cv2.__version__,
            },
        },
    )


def run_pipeline(config: RunConfig) -> RunReport:
    """Run every configured sequence; returns the persisted-run report.

    Sequences are loaded up front so a broken input fails the run before
    any output is written.
    """
    config.validate()
    stores = [load_sequence(config.sequence_root, name) for name in config.names]
    out_root = Path(config.out)
    out_root.mkdir(parents=True, exist_ok=True)
    report = RunReport(out=out_root, manifest=out_root / "manifest.json")

    pool = ThreadPoolExecutor(config.workers) if config.workers > 1 else None
    try:
        with build_hub(config) as hub:
            for store in stores:
                log.info("sequence %s: %d frames", store.name, store.frame_count)
                report.sequences.append(
                    run_sequence(store, hub, config, out_root, executor=pool)
                )
    finally:
        if pool is not None:
            pool.shutdown(wait=True)
    write_manifest(config, report.manifest)
    return report
