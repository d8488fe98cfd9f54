"""Hierarchical generation: segmentation-map prediction feeding video synthesis.

Full mode runs the map-prediction stage from a conditioning frame, its
segmentation map, and the phase/triplet timeline, discretizes the decoded
maps back to integer ids, recolors them, and conditions the video stage on
the result. m2v_only skips prediction and conditions directly on supplied
ground-truth maps. Everything is seeded, so reruns are bit-identical.
"""

from __future__ import annotations

import hashlib
import json
import math
import os
from dataclasses import dataclass

import numpy as np
import torch

from . import tensorio
from .codec import (LatentVideo, decode, default_palette, encode_dense,
                    kmeans_discretize, save_palette, segmap_to_color)
from .config import SEG_MAPS, RunConfig, frames_for_fps
from .diffusion import make_schedule, sample_loop
from .dit import ConditioningBundle, assemble_m2v_input, assemble_s2m_input
from .errors import ParameterError
from .train import PALETTE_SIZE, load_checkpoint_model, seg_frame_indices

VIDEO_FILE = "video.hstn"
PANOPTIC_FILE = "panoptic.hstn"
PALETTE_FILE = "palette.json"
PROVENANCE_FILE = "provenance.json"


@dataclass
class StageModel:
    """A trained denoiser plus the config and file identity it came from."""
    model: object
    cfg: RunConfig
    header: dict
    norm: object
    path: str
    sha256: str


def load_stage(path: str, expect_stage: str | None = None) -> StageModel:
    model, cfg, header, norm = load_checkpoint_model(path)
    if expect_stage is not None and cfg.stage != expect_stage:
        raise ParameterError(
            f"checkpoint {path} holds a {cfg.stage!r} stage, expected {expect_stage!r}")
    with open(path, "rb") as fh:
        digest = hashlib.sha256(fh.read()).hexdigest()
    return StageModel(model, cfg, header, norm, path, digest)


def _require(value, field: str):
    if value is None:
        raise ParameterError(f"missing conditioning input: {field}")
    return value


def _schedule_of(cfg: RunConfig):
    return make_schedule(cfg.num_timesteps, cfg.beta_start, cfg.beta_end)


def _to_eps(pred: np.ndarray, x: np.ndarray, t: int, cfg: RunConfig,
            sched) -> np.ndarray:
    """Map the network output to a noise estimate for the sampler."""
    if cfg.objective != "x0":
        return pred
    abar = sched.alpha_bar(int(t))
    return (x - math.sqrt(abar) * pred) / math.sqrt(1.0 - abar)


def _sample_s2m(stage: StageModel, first_frame: np.ndarray,
                first_segmap: np.ndarray, phases: np.ndarray,
                triplets: np.ndarray, seed: int, stride: int) -> np.ndarray:
    cfg = stage.cfg
    palette = default_palette(PALETTE_SIZE)
    z_y = encode_dense(first_frame[None], cfg.codec).data
    y_seg_color = segmap_to_color(first_segmap[None], palette)
    z_y_seg = encode_dense(y_seg_color, cfg.codec).data
    sidx = seg_frame_indices(len(phases))
    bundle = ConditioningBundle(np.asarray(phases)[sidx],
                                np.asarray(triplets)[sidx],
                                provider=cfg.provider)
    zy_t = stage.norm.normalize(torch.from_numpy(z_y.astype(np.float32)))
    zys_t = stage.norm.normalize(torch.from_numpy(z_y_seg.astype(np.float32)))
    sched = _schedule_of(cfg)

    def denoiser(x, t, _cond):
        with torch.no_grad():
            z_in = assemble_s2m_input(
                torch.from_numpy(np.asarray(x, dtype=np.float32)), zys_t, zy_t)
            pred = stage.model(z_in, int(t), bundle=bundle).double().numpy()
        return _to_eps(pred, x, t, cfg, sched)

    shape = (SEG_MAPS,) + z_y.shape[1:]
    z = sample_loop(denoiser, shape, None, sched, seed=[seed, 0], stride=stride)
    return stage.norm.denormalize(z)


def _sample_m2v(stage: StageModel, first_frame: np.ndarray,
                seg_color: np.ndarray, seed: int, stride: int,
                ablate_seg: bool) -> np.ndarray:
    cfg = stage.cfg
    frames = frames_for_fps(cfg.fps)
    latent_frames = math.ceil(frames / cfg.codec.temporal_factor)
    z_first = encode_dense(first_frame[None], cfg.codec).data
    zf_t = stage.norm.normalize(torch.from_numpy(z_first.astype(np.float32)))
    seg_t = torch.from_numpy(seg_color.astype(np.float32))
    sched = _schedule_of(cfg)

    def denoiser(x, t, _cond):
        with torch.no_grad():
            z_in = assemble_m2v_input(
                torch.from_numpy(np.asarray(x, dtype=np.float32)), zf_t)
            pred = stage.model(z_in, int(t), seg_color=seg_t,
                               target_frames=latent_frames,
                               zero_seg_tokens=ablate_seg).double().numpy()
        return _to_eps(pred, x, t, cfg, sched)

    shape = (latent_frames,) + z_first.shape[1:]
    z_vid = sample_loop(denoiser, shape, None, sched, seed=[seed, 1], stride=stride)
    z_vid = stage.norm.denormalize(z_vid)
    return np.clip(decode(LatentVideo(z_vid, "compressed", frames), cfg.codec), 0.0, 1.0)


def generate_sample(out_dir: str, m2v: StageModel | None,
                    s2m: StageModel | None = None,
                    first_frame: np.ndarray | None = None,
                    first_segmap: np.ndarray | None = None,
                    phases: np.ndarray | None = None,
                    triplets: np.ndarray | None = None,
                    gt_maps: np.ndarray | None = None,
                    mode: str = "full", seed: int = 0,
                    stride: int | None = None,
                    ablate_seg: bool = False) -> dict:
    """Generate one clip into out_dir; returns the provenance record."""
    if mode not in ("full", "m2v_only"):
        raise ParameterError(f"mode must be full or m2v_only, got {mode!r}")
    m2v = _require(m2v, "m2v_checkpoint")
    if m2v.cfg.stage != "m2v":
        raise ParameterError(f"m2v checkpoint holds stage {m2v.cfg.stage!r}")
    first_frame = np.asarray(_require(first_frame, "first_frame"), dtype=np.float64)

    k_chosen = None
    if mode == "full":
        s2m = _require(s2m, "s2m_checkpoint")
        if s2m.cfg.stage != "s2m":
            raise ParameterError(f"s2m checkpoint holds stage {s2m.cfg.stage!r}")
        if s2m.cfg.codec != m2v.cfg.codec:
            raise ParameterError("s2m and m2v checkpoints use different codecs")
        first_segmap = np.asarray(_require(first_segmap, "first_segmap"))
        phases = _require(phases, "phases")
        triplets = _require(triplets, "triplets")
        stride_s2m = stride or s2m.cfg.sample_stride
        z_maps = _sample_s2m(s2m, first_frame, first_segmap, phases, triplets,
                             seed, stride_s2m)
        maps_color = np.clip(
            decode(LatentVideo(z_maps, "dense", SEG_MAPS), s2m.cfg.codec), 0.0, 1.0)
        seg_pred, cpal = kmeans_discretize(maps_color, k_max=s2m.cfg.k_max, seed=seed)
        k_chosen = len(cpal)
    else:
        gt_maps = np.asarray(_require(gt_maps, "gt_maps"))
        stride_s2m = None
        palette = default_palette(PALETTE_SIZE)
        seg_pred = gt_maps.astype(np.int64)
        cpal = {int(i): palette[int(i)] for i in np.unique(seg_pred)}
        cpal.setdefault(0, palette[0])

    seg_color = segmap_to_color(seg_pred, cpal)
    stride_m2v = stride or m2v.cfg.sample_stride
    video = _sample_m2v(m2v, first_frame, seg_color, seed, stride_m2v, ablate_seg)

    os.makedirs(out_dir, exist_ok=True)
    tensorio.write_tensor(os.path.join(out_dir, VIDEO_FILE),
                          video.astype(np.float32))
    tensorio.write_tensor(os.path.join(out_dir, PANOPTIC_FILE),
                          seg_pred.astype(np.uint16))
    save_palette(os.path.join(out_dir, PALETTE_FILE), cpal)

    def ckpt_record(stage: StageModel | None):
        if stage is None:
            return None
        return {"path": stage.path, "sha256": stage.sha256,
                "config_hash": stage.header["config_hash"],
                "step": stage.header["step"]}

    provenance = {
        "mode": mode, "seed": int(seed), "fps": m2v.cfg.fps,
        "frames": frames_for_fps(m2v.cfg.fps), "seg_maps": SEG_MAPS,
        "s2m_checkpoint": ckpt_record(s2m if mode == "full" else None),
        "m2v_checkpoint": ckpt_record(m2v),
        "stride_s2m": stride_s2m, "stride_m2v": stride_m2v,
        "k_chosen": k_chosen, "ablate_seg": bool(ablate_seg),
    }
    with open(os.path.join(out_dir, PROVENANCE_FILE), "w") as fh:
        json.dump(provenance, fh, indent=1, sort_keys=True)
    return provenance


def generate_dataset(data_dir: str, out_dir: str, m2v_path: str,
                     s2m_path: str | None = None, mode: str = "full",
                     ids: list[str] | None = None, split: str = "test",
                     seed: int = 0, stride: int | None = None,
                     ablate_seg: bool = False) -> dict:
    """Generate one clip per dataset sample, conditioned on that sample."""
    from .dataset import split_samples
    from .scenes import read_sample

    m2v = load_stage(m2v_path, "m2v")
    s2m = load_stage(s2m_path, "s2m") if s2m_path else None
    names = sorted(ids) if ids else split_samples(data_dir, split)
    records = {}
    for i, name in enumerate(names):
        sample = read_sample(os.path.join(data_dir, name))
        sidx = seg_frame_indices(sample.video.shape[0])
        records[name] = generate_sample(
            os.path.join(out_dir, name), m2v, s2m,
            first_frame=sample.video[0],
            first_segmap=sample.panoptic[0],
            phases=sample.phases, triplets=sample.triplets,
            gt_maps=sample.panoptic[sidx] if mode == "m2v_only" else None,
            mode=mode, seed=seed + i, stride=stride, ablate_seg=ablate_seg)
    manifest = {"mode": mode, "seed": seed, "count": len(names),
                "samples": names, "data_dir": data_dir}
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "generation.json"), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return manifest
