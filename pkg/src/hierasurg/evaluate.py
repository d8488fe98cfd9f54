"""Paired evaluation of generated clips against their source scenes.

Pairs are matched by sample id (subdirectory name). Generated panoptic maps
carry arbitrary cluster ids, so they are aligned to ground-truth ids by
nearest palette color before boxes are extracted. Reports are plain JSON,
computed over ids in sorted order, hence byte-stable and order-invariant.
"""

from __future__ import annotations

import json
import os

import numpy as np

from . import tensorio
from .codec import (default_palette, kmeans_discretize, load_palette,
                    remap_to_palette)
from .config import SEG_MAPS
from .errors import ParameterError
from .metrics import (RandomFeatureExtractor, boxes_from_panoptic,
                      metric_report)
from .scenes import read_sample
from .train import PALETTE_SIZE, seg_frame_indices

REPORT_KEYS = ("fvd_analog", "fid_analog", "ssim", "hr_real", "hr_gen",
               "miou", "n_samples")


def _sample_ids(root: str) -> list[str]:
    if not os.path.isdir(root):
        raise ParameterError(f"no such directory: {root}")
    return sorted(n for n in os.listdir(root)
                  if os.path.isfile(os.path.join(root, n, "video.hstn")))


def _maps_at_label_rate(panoptic: np.ndarray) -> np.ndarray:
    if panoptic.shape[0] <= SEG_MAPS:
        return panoptic
    return panoptic[seg_frame_indices(panoptic.shape[0])]


def _gt_target_palette(gt_panoptic: np.ndarray) -> dict:
    full = default_palette(PALETTE_SIZE)
    gt_ids = {0} | {int(i) for i in np.unique(gt_panoptic)}
    return {i: full[i] for i in sorted(gt_ids)}


def _load_generated(gen_dir: str, gt_panoptic: np.ndarray,
                    gen_boxes: str) -> tuple[np.ndarray, np.ndarray]:
    """Video plus a panoptic aligned to ground-truth entity ids.

    gen_boxes picks the segmentation source: "panoptic" trusts the maps
    stored next to the video, "video" re-derives maps from the generated
    frames by color clustering, which measures whether the synthesized
    pixels actually follow their conditioning maps.
    """
    video = tensorio.read_tensor(os.path.join(gen_dir, "video.hstn"))
    if gen_boxes == "video":
        frames = _maps_at_label_rate(np.asarray(video, dtype=np.float64))
        seg, cpal = kmeans_discretize(frames, k_max=8, seed=0)
        pan = remap_to_palette(seg, cpal, _gt_target_palette(gt_panoptic))
        return np.asarray(video, dtype=np.float64), pan
    pan = tensorio.read_tensor(os.path.join(gen_dir, "panoptic.hstn"))
    palette_path = os.path.join(gen_dir, "palette.json")
    if os.path.exists(palette_path):
        pan = remap_to_palette(pan, load_palette(palette_path),
                               _gt_target_palette(gt_panoptic))
    return np.asarray(video, dtype=np.float64), pan


def evaluate_dirs(real_dir: str, gen_dir: str, report_path: str | None = None,
                  iou_threshold: float = 0.5, extractor_seed: int = 0,
                  ids: list[str] | None = None,
                  gen_boxes: str = "panoptic") -> dict:
    """Metric report over all id-paired samples; optionally writes JSON.

    With `ids`, evaluation is restricted to exactly those samples; without,
    the two directories must hold identical id sets.
    """
    if gen_boxes not in ("panoptic", "video"):
        raise ParameterError(f"gen_boxes must be panoptic or video, got {gen_boxes!r}")
    real_ids = _sample_ids(real_dir)
    gen_ids = _sample_ids(gen_dir)
    if ids is not None:
        wanted = sorted(set(ids))
        unpaired = sorted(set(wanted) - (set(real_ids) & set(gen_ids)))
        real_ids = wanted
    else:
        unpaired = sorted(set(real_ids) ^ set(gen_ids))
    if unpaired:
        raise ParameterError(f"unpaired sample ids: {unpaired}")
    if not real_ids:
        raise ParameterError(f"no samples found under {real_dir}")

    real_videos, gen_videos, boxes_r, boxes_g = [], [], [], []
    for name in real_ids:
        sample = read_sample(os.path.join(real_dir, name))
        gen_video, gen_pan = _load_generated(os.path.join(gen_dir, name),
                                             sample.panoptic, gen_boxes)
        real_videos.append(np.asarray(sample.video, dtype=np.float64))
        gen_videos.append(gen_video)
        kinds = sample.entity_kinds
        boxes_r.append(boxes_from_panoptic(_maps_at_label_rate(sample.panoptic),
                                           kinds))
        boxes_g.append(boxes_from_panoptic(_maps_at_label_rate(gen_pan), kinds))

    report = metric_report(real_videos, gen_videos, boxes_r, boxes_g,
                           extractor=RandomFeatureExtractor(seed=extractor_seed),
                           iou_threshold=iou_threshold)
    if report_path is not None:
        parent = os.path.dirname(report_path)
        if parent:
            os.makedirs(parent, exist_ok=True)
        with open(report_path, "w") as fh:
            json.dump(report, fh, indent=1, sort_keys=True)
            fh.write("\n")
    return report
