"""Dataset plumbing: synthetic-scene corpora on disk plus automatic labeling.

A dataset directory holds `sample_XXXXX/` subdirectories (one scene each, see
scenes.write_sample), a `split.json` with train/test id lists, a
`dataset.json` manifest, and the resolved `config.json` that produced it.
Everything written here is deterministic for a fixed config, so reruns are
bit-identical.
"""

from __future__ import annotations

import json
import os

import numpy as np

from . import tensorio
from .config import RunConfig, frames_for_fps
from .errors import IntegrityError, ParameterError
from .labeling import (LabelConfig, OracleFeatures, OracleSegmenter,
                       OracleTracker, build_panoptic)
from .scenes import SceneConfig, generate_scene, read_sample, write_sample

DATASET_FILE = "dataset.json"
SPLIT_FILE = "split.json"
CONFIG_FILE = "config.json"
LABELING_FILE = "labeling.json"
PRED_PANOPTIC_FILE = "pred_panoptic.hstn"

_BACKENDS = ("oracle", "noisy-oracle")


def sample_name(index: int) -> str:
    return f"sample_{index:05d}"


def scene_config_for(cfg: RunConfig, index: int) -> SceneConfig:
    """Scene settings for the index-th sample; seeds are sequential."""
    return SceneConfig(
        F=frames_for_fps(cfg.fps), H=cfg.height, W=cfg.width, fps=cfg.fps,
        n_anatomy=cfg.n_anatomy, n_tools=cfg.n_tools,
        phase_count=cfg.phase_vocab, triplet_vocab=cfg.triplet_vocab,
        seed=cfg.seed + index)


def make_dataset(cfg: RunConfig, out_dir: str, count: int,
                 force: bool = False) -> dict:
    """Write `count` scenes with sequential seeds plus split and manifest."""
    cfg.validate()
    if count < 0:
        raise ParameterError(f"count must be >= 0, got {count}")
    if os.path.isdir(out_dir) and os.listdir(out_dir) and not force:
        raise ParameterError(
            f"output directory {out_dir!r} is not empty; pass --force to overwrite")
    os.makedirs(out_dir, exist_ok=True)

    names = []
    for i in range(count):
        scene_cfg = scene_config_for(cfg, i)
        sample = generate_scene(scene_cfg)
        name = sample_name(i)
        write_sample(sample, os.path.join(out_dir, name),
                     fps=cfg.fps, seed=scene_cfg.seed)
        names.append(name)

    # every 4th scene is held out; balanced for any count
    split = {"train": [n for i, n in enumerate(names) if i % 4 != 3],
             "test": [n for i, n in enumerate(names) if i % 4 == 3]}
    with open(os.path.join(out_dir, SPLIT_FILE), "w") as fh:
        json.dump(split, fh, indent=1, sort_keys=True)
    with open(os.path.join(out_dir, CONFIG_FILE), "w") as fh:
        fh.write(cfg.to_json())
    manifest = {"count": count, "samples": names, "fps": cfg.fps,
                "config_hash": cfg.config_hash()}
    with open(os.path.join(out_dir, DATASET_FILE), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return manifest


def list_samples(data_dir: str) -> list[str]:
    path = os.path.join(data_dir, DATASET_FILE)
    if not os.path.exists(path):
        raise IntegrityError(f"missing {DATASET_FILE} in {data_dir}")
    with open(path) as fh:
        return list(json.load(fh)["samples"])


def load_split(data_dir: str) -> dict[str, list[str]]:
    path = os.path.join(data_dir, SPLIT_FILE)
    if not os.path.exists(path):
        raise IntegrityError(f"missing {SPLIT_FILE} in {data_dir}")
    with open(path) as fh:
        return json.load(fh)


def split_samples(data_dir: str, split: str) -> list[str]:
    if split == "all":
        return list_samples(data_dir)
    table = load_split(data_dir)
    if split not in table:
        raise ParameterError(f"split must be train, test, or all, got {split!r}")
    return list(table[split])


# ---------------------------------------------------------------------------
# automatic labeling over overlapping clips

def _clip_starts(total: int, win: int, hop: int) -> list[int]:
    starts = list(range(0, max(total - win, 0) + 1, hop))
    if starts[-1] + win < total:   # tail clip so the final frames are covered
        starts.append(total - win)
    return starts


def _stitch(global_pan: np.ndarray, covered: int, local: np.ndarray,
            start: int, next_id: int) -> tuple[int, int]:
    """Merge one clip's panoptic into the global map.

    Local track ids are renamed to the global id with best mask IoU on the
    already-covered overlap frames (greedy, descending IoU); ids with no
    overlap partner get fresh global ids. Already-covered frames keep their
    existing labels.
    """
    win = local.shape[0]
    end = start + win
    overlap = range(start, min(covered, end))
    local_ids = [int(i) for i in np.unique(local) if i != 0]
    mapping: dict[int, int] = {}
    if overlap:
        g_over = global_pan[overlap.start:overlap.stop]
        l_over = local[:overlap.stop - overlap.start]
        global_ids = [int(i) for i in np.unique(g_over) if i != 0]
        cands = []
        for li in local_ids:
            lm = l_over == li
            for gi in global_ids:
                gm = g_over == gi
                inter = float(np.logical_and(lm, gm).sum())
                union = float(np.logical_or(lm, gm).sum())
                if union and inter / union >= 0.5:
                    cands.append((inter / union, li, gi))
        cands.sort(key=lambda c: (-c[0], c[1], c[2]))
        used_g: set[int] = set()
        for _, li, gi in cands:
            if li not in mapping and gi not in used_g:
                mapping[li] = gi
                used_g.add(gi)
    for li in local_ids:
        if li not in mapping:
            mapping[li] = next_id
            next_id += 1
    fresh = local[max(covered - start, 0):]
    out = np.zeros_like(fresh)
    for li, gi in mapping.items():
        out[fresh == li] = gi
    global_pan[max(covered, start):end] = out
    return end, next_id


def label_video(video: np.ndarray, gt_panoptic: np.ndarray, fps: int,
                feature_noise: float = 0.0, mask_noise: float = 0.0,
                overlap: float = 0.5, clip_seconds: int = 16,
                seed: int = 0, label_cfg: LabelConfig | None = None) -> np.ndarray:
    """Run the discovery/tracking pipeline over overlapping clips and stitch.

    Oracle backends are driven by the ground-truth panoptic; noise settings
    emulate imperfect segmenter masks and feature drift.
    """
    if not 0.0 <= overlap < 1.0:
        raise ParameterError(f"overlap must be in [0, 1), got {overlap}")
    F = video.shape[0]
    win = min(max(clip_seconds * fps, 1), F)
    hop = max(1, int(round(win * (1.0 - overlap))))
    global_pan = np.zeros(gt_panoptic.shape, dtype=np.uint16)
    covered, next_id = 0, 1
    for k, start in enumerate(_clip_starts(F, win, hop)):
        end = start + win
        seg = OracleSegmenter(gt_panoptic[start:end], mask_noise=mask_noise,
                              seed=seed + k)
        feat = OracleFeatures(video[start:end], noise=feature_noise,
                              seed=seed + k)
        tracker = OracleTracker(gt_panoptic[start:end])
        local = build_panoptic(video[start:end], seg, feat, tracker, label_cfg)
        covered, next_id = _stitch(global_pan, covered, local, start, next_id)
    return global_pan


def label_dataset(data_dir: str, backend: str = "oracle",
                  feature_noise: float = 0.0, mask_noise: float = 0.0,
                  overlap: float = 0.5, clip_seconds: int = 16,
                  seed: int = 0) -> dict:
    """Label every sample in a dataset; writes pred_panoptic.hstn per sample."""
    if backend not in _BACKENDS:
        raise ParameterError(f"backend must be one of {_BACKENDS}, got {backend!r}")
    if backend == "oracle":
        feature_noise = 0.0
        mask_noise = 0.0
    names = list_samples(data_dir)
    entity_counts = {}
    for name in names:
        sample_dir = os.path.join(data_dir, name)
        sample = read_sample(sample_dir)
        pred = label_video(sample.video, sample.panoptic, fps_of(sample_dir),
                           feature_noise=feature_noise, mask_noise=mask_noise,
                           overlap=overlap, clip_seconds=clip_seconds, seed=seed)
        tensorio.write_tensor(os.path.join(sample_dir, PRED_PANOPTIC_FILE), pred)
        entity_counts[name] = int(len(np.unique(pred)) - (0 in pred))
    manifest = {"backend": backend, "feature_noise": feature_noise,
                "mask_noise": mask_noise, "overlap": overlap,
                "clip_seconds": clip_seconds, "seed": seed,
                "output": PRED_PANOPTIC_FILE, "entities": entity_counts}
    with open(os.path.join(data_dir, LABELING_FILE), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return manifest


def fps_of(sample_dir: str) -> int:
    with open(os.path.join(sample_dir, "manifest.json")) as fh:
        return int(json.load(fh)["fps"])
