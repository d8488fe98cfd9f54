"""Automatic panoptic video labeling.

Entities are discovered by prompting a segmenter on a point grid,
re-identified across frames by feature matching, tracked from their first
appearance, and finally merged into one integer map per frame. Backends
are pluggable; the oracle backends here answer from ground-truth panoptic
maps so the whole pipeline is testable without external models.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import ParameterError, PipelineError, ShapeError


class TrackerWarning(UserWarning):
    """A track was dropped because its tracker call failed."""


@dataclass
class EntityObservation:
    frame: int
    mask: np.ndarray            # (H, W) bool
    feature: np.ndarray         # (D_f,)
    seed_point: tuple[int, int]

    def __post_init__(self) -> None:
        self.mask = np.asarray(self.mask, dtype=bool)
        self.feature = np.asarray(self.feature, dtype=np.float64)
        if not self.mask.any():
            raise ParameterError("observation mask is empty")
        r, c = self.seed_point
        if not self.mask[r, c]:
            raise ParameterError(f"seed point {self.seed_point} outside mask")


@dataclass
class EntityTrack:
    id: int
    first_frame: int
    per_frame_masks: dict[int, np.ndarray] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.id < 1:
            raise ParameterError(f"track id must be >= 1, got {self.id}")
        if any(f < self.first_frame for f in self.per_frame_masks):
            raise ParameterError("track has masks before its first frame")

    def mean_area(self) -> float:
        if not self.per_frame_masks:
            return 0.0
        return float(np.mean([m.sum() for m in self.per_frame_masks.values()]))


@dataclass(frozen=True)
class LabelConfig:
    grid_stride: int = 4
    match_threshold: float = 0.3
    overlap_threshold: float = 0.8


# ---------------------------------------------------------------------------
# backends

class SegmenterBackend:
    """segment(frame, prompt_points) -> list of boolean masks.

    `frame` is the frame index into the video the backend was built for.
    Implementations must be deterministic for fixed inputs.
    """

    def segment(self, frame: int, prompt_points: list[tuple[int, int]]) -> list[np.ndarray]:
        raise NotImplementedError


class FeatureBackend:
    """features(frame, mask) -> 1-D descriptor vector."""

    def features(self, frame: int, mask: np.ndarray) -> np.ndarray:
        raise NotImplementedError


class TrackerBackend:
    """track(video, first_frame, seed_point) -> {frame: mask} from first_frame on."""

    def track(self, video: np.ndarray, first_frame: int,
              seed_point: tuple[int, int]) -> dict[int, np.ndarray]:
        raise NotImplementedError


class OracleSegmenter(SegmenterBackend):
    """Answers prompts from a ground-truth panoptic map.

    A prompt on entity id e returns that entity's visible mask; prompts on
    background return nothing. mask_noise > 0 randomly dilates or erodes
    each returned mask (seeded per frame and entity) to emulate an
    imperfect segmenter.
    """

    def __init__(self, panoptic: np.ndarray, mask_noise: float = 0.0, seed: int = 0):
        self.panoptic = np.asarray(panoptic)
        self.mask_noise = float(mask_noise)
        self.seed = int(seed)

    def segment(self, frame: int, prompt_points: list[tuple[int, int]]) -> list[np.ndarray]:
        seg = self.panoptic[frame]
        masks = []
        seen: set[int] = set()
        for r, c in prompt_points:
            eid = int(seg[r, c])
            if eid == 0 or eid in seen:
                continue
            seen.add(eid)
            mask = seg == eid
            if self.mask_noise > 0:
                rng = np.random.default_rng([self.seed, frame, eid])
                if rng.random() < self.mask_noise:
                    op = ndimage.binary_dilation if rng.random() < 0.5 else ndimage.binary_erosion
                    noisy = op(mask)
                    if noisy.any():
                        mask = noisy
            masks.append(mask)
        return masks


class OracleFeatures(FeatureBackend):
    """Mean color inside the mask plus the normalized mask centroid.

    noise > 0 adds seeded Gaussian perturbations of that scale per
    component, keyed by frame and centroid so repeated calls agree.
    """

    def __init__(self, video: np.ndarray, noise: float = 0.0, seed: int = 0):
        self.video = np.asarray(video)
        self.noise = float(noise)
        self.seed = int(seed)

    def features(self, frame: int, mask: np.ndarray) -> np.ndarray:
        mask = np.asarray(mask, dtype=bool)
        if not mask.any():
            raise ParameterError("cannot compute features of an empty mask")
        H, W = mask.shape
        rows, cols = np.nonzero(mask)
        mean_rgb = self.video[frame][mask].mean(axis=0)
        cy, cx = rows.mean() / max(H - 1, 1), cols.mean() / max(W - 1, 1)
        f = np.concatenate([np.asarray(mean_rgb, dtype=np.float64), [cy, cx]])
        if self.noise > 0:
            key = int(rows.mean() * 10000 + cols.mean() * 10)
            rng = np.random.default_rng([self.seed, frame, key])
            f = f + rng.normal(0.0, self.noise, f.shape)
        return f


class OracleTracker(TrackerBackend):
    """Follows the ground-truth entity under the seed point."""

    def __init__(self, panoptic: np.ndarray):
        self.panoptic = np.asarray(panoptic)

    def track(self, video: np.ndarray, first_frame: int,
              seed_point: tuple[int, int]) -> dict[int, np.ndarray]:
        r, c = seed_point
        eid = int(self.panoptic[first_frame, r, c])
        if eid == 0:
            raise PipelineError(f"seed point {seed_point} is background at frame {first_frame}")
        out = {}
        for f in range(first_frame, self.panoptic.shape[0]):
            mask = self.panoptic[f] == eid
            if mask.any():
                out[f] = mask
        return out


# ---------------------------------------------------------------------------
# pipeline stages

def grid_prompts(H: int, W: int, stride: int) -> list[tuple[int, int]]:
    """Row-major grid of prompt points offset by half a stride."""
    if stride < 1:
        raise ParameterError(f"stride must be >= 1, got {stride}")
    off = stride // 2
    return [(r, c) for r in range(off, H, stride) for c in range(off, W, stride)]


def cosine_distance(a: np.ndarray, b: np.ndarray) -> float:
    na, nb = float(np.linalg.norm(a)), float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        return 1.0
    return float(1.0 - np.dot(a, b) / (na * nb))


def match_entities(current: list[EntityObservation], previous: list[EntityObservation],
                   threshold: float) -> tuple[list[tuple[int, int]], list[EntityObservation]]:
    """Greedy 1:1 matching by ascending cosine distance.

    Returns (matches, new_entities) where matches are (current_idx,
    previous_idx) pairs with distance < threshold and new_entities are the
    unmatched current observations.
    """
    if current and previous:
        dims = {o.feature.shape for o in current} | {o.feature.shape for o in previous}
        if len(dims) != 1:
            raise ShapeError(f"feature dimensions disagree: {sorted(dims)}")
    cand = []
    for i, cur in enumerate(current):
        for j, prev in enumerate(previous):
            d = cosine_distance(cur.feature, prev.feature)
            if d < threshold:
                cand.append((d, i, j))
    cand.sort(key=lambda t: (t[0], t[1], t[2]))
    used_cur: set[int] = set()
    used_prev: set[int] = set()
    matches = []
    for d, i, j in cand:
        if i in used_cur or j in used_prev:
            continue
        matches.append((i, j))
        used_cur.add(i)
        used_prev.add(j)
    new_entities = [obs for i, obs in enumerate(current) if i not in used_cur]
    return matches, new_entities


def track_entities(video: np.ndarray, discovered: list[EntityObservation],
                   tracker: TrackerBackend) -> list[EntityTrack]:
    """One track per discovery; failures drop the track with a warning."""
    tracks = []
    next_id = 1
    for obs in discovered:
        try:
            masks = tracker.track(video, obs.frame, obs.seed_point)
        except Exception as exc:
            warnings.warn(
                f"tracker failed for entity discovered at frame {obs.frame}, "
                f"seed {obs.seed_point}: {exc}", TrackerWarning, stacklevel=2)
            continue
        tracks.append(EntityTrack(next_id, obs.frame, dict(sorted(masks.items()))))
        next_id += 1
    return tracks


def _pair_overlap(a: EntityTrack, b: EntityTrack) -> float:
    """Intersection over the smaller area, averaged over co-visible frames."""
    shared = sorted(set(a.per_frame_masks) & set(b.per_frame_masks))
    if not shared:
        return 0.0
    ratios = []
    for f in shared:
        ma, mb = a.per_frame_masks[f], b.per_frame_masks[f]
        smaller = min(ma.sum(), mb.sum())
        ratios.append((ma & mb).sum() / smaller if smaller else 0.0)
    return float(np.mean(ratios))


def merge_and_resolve(tracks: list[EntityTrack], overlap_threshold: float = 0.8,
                      n_frames: int | None = None) -> np.ndarray:
    """Merge near-duplicate tracks, resolve pixel conflicts, emit the map.

    Tracks overlapping by >= overlap_threshold merge under the lower id
    (masks unioned per frame). Remaining per-pixel conflicts go to the
    track with the larger average mask area. Unclaimed pixels are 0.
    """
    tracks = [EntityTrack(t.id, t.first_frame, dict(t.per_frame_masks)) for t in tracks]
    if n_frames is None:
        n_frames = max((max(t.per_frame_masks, default=-1) for t in tracks), default=-1) + 1
    if not tracks:
        return np.zeros((n_frames, 0, 0), dtype=np.uint16)
    H, W = next(iter(tracks[0].per_frame_masks.values())).shape

    merged = True
    while merged:
        merged = False
        tracks.sort(key=lambda t: t.id)
        for i in range(len(tracks)):
            for j in range(i + 1, len(tracks)):
                if _pair_overlap(tracks[i], tracks[j]) >= overlap_threshold:
                    lo, hi = tracks[i], tracks[j]
                    for f, m in hi.per_frame_masks.items():
                        lo.per_frame_masks[f] = lo.per_frame_masks.get(
                            f, np.zeros((H, W), dtype=bool)) | m
                    lo.first_frame = min(lo.first_frame, hi.first_frame)
                    del tracks[j]
                    merged = True
                    break
            if merged:
                break

    out = np.zeros((n_frames, H, W), dtype=np.uint16)
    order = sorted(tracks, key=lambda t: t.mean_area())  # big areas stamp last
    for t in order:
        for f, m in t.per_frame_masks.items():
            if f < n_frames:
                out[f][m] = t.id
    return out


def build_panoptic(video: np.ndarray, seg: SegmenterBackend, feat: FeatureBackend,
                   tracker: TrackerBackend, cfg: LabelConfig | None = None) -> np.ndarray:
    """Discover, re-identify, track, and merge entities over a whole video."""
    cfg = cfg or LabelConfig()
    video = np.asarray(video)
    F, H, W = video.shape[:3]
    points = grid_prompts(H, W, cfg.grid_stride)
    discovered: list[EntityObservation] = []
    previous: list[EntityObservation] = []
    for f in range(F):
        try:
            masks = seg.segment(f, points)
        except Exception as exc:
            raise PipelineError(f"segmenter failed at frame {f}: {exc}") from exc
        observations = []
        for mask in masks:
            seed_point = next((p for p in points if mask[p[0], p[1]]), None)
            if seed_point is None:
                continue
            try:
                feature = feat.features(f, mask)
            except Exception as exc:
                raise PipelineError(f"feature backend failed at frame {f}: {exc}") from exc
            observations.append(EntityObservation(f, mask, feature, seed_point))
        _, new_entities = match_entities(observations, previous, cfg.match_threshold)
        discovered.extend(new_entities)
        previous = observations
    tracks = track_entities(video, discovered, tracker)
    if not tracks:
        return np.zeros((F, H, W), dtype=np.uint16)
    return merge_and_resolve(tracks, cfg.overlap_threshold, n_frames=F)
