"""Evaluation metrics: windowed SSIM, Fréchet feature distances, and a
box-level detector-agreement protocol (hit rates and mean matched IoU)."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import NumericError, ParameterError, ShapeError

_C1 = 0.01 ** 2
_C2 = 0.03 ** 2
_WIN = 7


def _window_means(plane: np.ndarray, win: int) -> np.ndarray:
    """Mean over every win x win window (valid positions only), via cumsum."""
    c = np.cumsum(np.cumsum(plane, axis=0), axis=1)
    c = np.pad(c, ((1, 0), (1, 0)))
    s = c[win:, win:] - c[:-win, win:] - c[win:, :-win] + c[:-win, :-win]
    return s / (win * win)


def _ssim_plane(x: np.ndarray, y: np.ndarray) -> float:
    mx = _window_means(x, _WIN)
    my = _window_means(y, _WIN)
    # population moments within the window; identical inputs give bitwise
    # identical numerator and denominator, so self-similarity is exactly 1
    vx = _window_means(x * x, _WIN) - mx * mx
    vy = _window_means(y * y, _WIN) - my * my
    cxy = _window_means(x * y, _WIN) - mx * my
    num = (2 * mx * my + _C1) * (2 * cxy + _C2)
    den = (mx * mx + my * my + _C1) * (vx + vy + _C2)
    return float(np.mean(num / den))


def ssim(x: np.ndarray, y: np.ndarray) -> float:
    """Mean SSIM over 7x7 uniform windows, frames, and channels (L=1)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeError(f"shape mismatch: {x.shape} vs {y.shape}")
    if x.ndim == 3:
        x = x[..., None]
        y = y[..., None]
    if x.ndim != 4:
        raise ShapeError(f"expected (F, H, W[, C]) videos, got ndim={x.ndim}")
    F, H, W, C = x.shape
    if H < _WIN or W < _WIN:
        raise ShapeError(f"frames {H}x{W} smaller than the {_WIN}x{_WIN} window")
    for name, v in (("x", x), ("y", y)):
        if v.min() < 0.0 or v.max() > 1.0:
            raise ParameterError(f"{name} has values outside [0, 1]")
    vals = [_ssim_plane(x[f, :, :, c], y[f, :, :, c])
            for f in range(F) for c in range(C)]
    return float(np.mean(vals))


@dataclass(frozen=True)
class GaussianStats:
    """Moment summary of a feature sample: mean, covariance, sample count."""

    mean: np.ndarray
    cov: np.ndarray
    count: int

    def __post_init__(self) -> None:
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=np.float64))
        object.__setattr__(self, "cov", np.asarray(self.cov, dtype=np.float64))
        D = self.mean.shape[0] if self.mean.ndim == 1 else -1
        if self.mean.ndim != 1 or self.cov.shape != (D, D):
            raise ShapeError(
                f"mean {self.mean.shape} and cov {self.cov.shape} disagree")
        if self.count < 1:
            raise ParameterError(f"count must be >= 1, got {self.count}")
        if not np.allclose(self.cov, self.cov.T, atol=1e-10, equal_nan=True):
            raise ParameterError("covariance is not symmetric")


def gaussian_stats(features) -> GaussianStats:
    """Sample mean and covariance (denominator max(n-1, 1))."""
    try:
        X = np.asarray(features, dtype=np.float64)
    except ValueError as exc:
        raise ShapeError(f"inconsistent feature dimensions: {exc}") from None
    if X.ndim != 2:
        raise ShapeError(f"expected a list of vectors, got shape {X.shape}")
    if len(X) < 1:
        raise ParameterError("need at least one feature vector")
    mean = X.mean(axis=0)
    Xc = X - mean
    cov = Xc.T @ Xc / max(len(X) - 1, 1)
    return GaussianStats(mean, (cov + cov.T) / 2, len(X))


def _psd_sqrt(M: np.ndarray) -> np.ndarray:
    w, V = np.linalg.eigh((M + M.T) / 2)
    return (V * np.sqrt(np.maximum(w, 0.0))) @ V.T


def frechet_distance(a: GaussianStats, b: GaussianStats) -> float:
    """2-Wasserstein distance between Gaussian fits.

    ||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}), with the matrix
    square root taken through sqrt(S_a) S_b sqrt(S_a), which is symmetric
    and shares the product's eigenvalues.
    """
    if a.mean.shape != b.mean.shape:
        raise ShapeError(f"dimension mismatch: {a.mean.shape} vs {b.mean.shape}")
    for s in (a, b):
        if not (np.isfinite(s.mean).all() and np.isfinite(s.cov).all()):
            raise NumericError("non-finite Gaussian stats")
    ra = _psd_sqrt(a.cov)
    cross = _psd_sqrt(ra @ b.cov @ ra)
    d = (np.sum((a.mean - b.mean) ** 2)
         + np.trace(a.cov) + np.trace(b.cov) - 2 * np.trace(cross))
    return max(float(d), 0.0)


@dataclass(frozen=True)
class Box:
    """Half-open axis-aligned box of one entity in one frame."""

    frame: int
    top: int
    left: int
    bottom: int
    right: int
    entity_id: int
    kind: str

    def __post_init__(self) -> None:
        if self.bottom <= self.top or self.right <= self.left:
            raise ParameterError(
                f"degenerate box ({self.top},{self.left},{self.bottom},{self.right})")
        if self.kind not in ("tool", "anatomy"):
            raise ParameterError(f"unknown kind {self.kind!r}")


def box_iou(a: Box, b: Box) -> float:
    """Geometric IoU; the caller is responsible for frame scoping."""
    ih = min(a.bottom, b.bottom) - max(a.top, b.top)
    iw = min(a.right, b.right) - max(a.left, b.left)
    if ih <= 0 or iw <= 0:
        return 0.0
    inter = ih * iw
    area_a = (a.bottom - a.top) * (a.right - a.left)
    area_b = (b.bottom - b.top) * (b.right - b.left)
    return inter / (area_a + area_b - inter)


def boxes_from_panoptic(panoptic: np.ndarray, kinds: dict[int, str]) -> list[Box]:
    """Tight bounding boxes of every tool entity in every frame."""
    panoptic = np.asarray(panoptic)
    if panoptic.ndim != 3:
        raise ShapeError(f"expected (F, H, W) map, got shape {panoptic.shape}")
    missing = [int(i) for i in np.unique(panoptic) if i and int(i) not in kinds]
    if missing:
        raise ParameterError(f"ids without a declared kind: {missing}")
    boxes = []
    for f in range(panoptic.shape[0]):
        frame = panoptic[f]
        for eid in np.unique(frame):
            if eid == 0 or kinds[int(eid)] != "tool":
                continue
            rows, cols = np.nonzero(frame == eid)
            boxes.append(Box(f, int(rows.min()), int(cols.min()),
                             int(rows.max()) + 1, int(cols.max()) + 1,
                             int(eid), "tool"))
    return boxes


def _greedy_matched_ious(real: list[Box], gen: list[Box], thr: float) -> list[float]:
    cand = []
    for i, r in enumerate(real):
        for j, g in enumerate(gen):
            v = box_iou(r, g)
            if v >= thr:
                cand.append((v, i, j))
    cand.sort(key=lambda t: (-t[0], t[1], t[2]))
    used_r: set[int] = set()
    used_g: set[int] = set()
    out = []
    for v, i, j in cand:
        if i in used_r or j in used_g:
            continue
        out.append(v)
        used_r.add(i)
        used_g.add(j)
    return out


def _matched_ious(real_boxes: list[Box], gen_boxes: list[Box], thr: float) -> list[float]:
    frames = {b.frame for b in real_boxes} | {b.frame for b in gen_boxes}
    out: list[float] = []
    for f in sorted(frames):
        out.extend(_greedy_matched_ious(
            [b for b in real_boxes if b.frame == f],
            [b for b in gen_boxes if b.frame == f], thr))
    return out


def detector_agreement(real_boxes: list[Box], gen_boxes: list[Box],
                       iou_threshold: float = 0.5) -> tuple[float, float, float]:
    """Per-frame greedy one-to-one matching by descending IoU.

    Returns (hr_real, hr_gen, miou). Empty totals follow the convention
    that a rate over zero objects is 1.0; miou over zero matches is 0.0.
    """
    ious = _matched_ious(real_boxes, gen_boxes, iou_threshold)
    hr_real = len(ious) / len(real_boxes) if real_boxes else 1.0
    hr_gen = len(ious) / len(gen_boxes) if gen_boxes else 1.0
    miou = float(np.mean(ious)) if ious else 0.0
    return hr_real, hr_gen, miou


class RandomFeatureExtractor:
    """Fixed-seed random convolutional projections for the Fréchet metrics.

    A declared stand-in for a pretrained video or image backbone; absolute
    distances are not comparable across extractors, only orderings computed
    with one extractor are meaningful.
    """

    def __init__(self, dim: int = 64, seed: int = 0):
        if dim < 1:
            raise ParameterError(f"dim must be >= 1, got {dim}")
        self.dim = dim
        self.seed = seed
        rng = np.random.default_rng([seed, dim])
        self._w_video = rng.normal(0.0, (3 * 3 * 5 * 5) ** -0.5,
                                   size=(dim, 3, 3, 5, 5))
        self._w_frame = rng.normal(0.0, (3 * 5 * 5) ** -0.5,
                                   size=(dim, 3, 5, 5))

    @staticmethod
    def _check(video: np.ndarray, min_f: int) -> np.ndarray:
        video = np.asarray(video, dtype=np.float64)
        if video.ndim != 4 or video.shape[3] != 3:
            raise ShapeError(f"expected (F, H, W, 3) video, got {video.shape}")
        if video.shape[0] < min_f or video.shape[1] < 5 or video.shape[2] < 5:
            raise ShapeError(f"video {video.shape} smaller than the conv kernel")
        return video

    def video_features(self, video: np.ndarray) -> np.ndarray:
        """One feature vector per video: strided 3D conv, ReLU, global mean."""
        video = self._check(video, min_f=3)
        win = sliding_window_view(video, (3, 5, 5), axis=(0, 1, 2))
        win = win[::2, ::4, ::4]
        act = np.einsum("fhwcijk,ocijk->fhwo", win, self._w_video)
        return np.maximum(act, 0.0).mean(axis=(0, 1, 2))

    def frame_features(self, video: np.ndarray) -> np.ndarray:
        """One feature vector per frame: strided 2D conv, ReLU, global mean."""
        video = self._check(video, min_f=1)
        win = sliding_window_view(video, (5, 5), axis=(1, 2))
        win = win[:, ::4, ::4]
        act = np.einsum("fhwcij,ocij->fhwo", win, self._w_frame)
        return np.maximum(act, 0.0).mean(axis=(1, 2))


def metric_report(real_videos, gen_videos, real_boxes, gen_boxes,
                  extractor: RandomFeatureExtractor | None = None,
                  iou_threshold: float = 0.5) -> dict:
    """Aggregate report over paired videos and their detection boxes."""
    n = len(real_videos)
    if not (n == len(gen_videos) == len(real_boxes) == len(gen_boxes)):
        raise ShapeError("real/gen video and box lists must have equal length")
    if n == 0:
        raise ParameterError("need at least one video pair")
    ex = extractor if extractor is not None else RandomFeatureExtractor()
    ssim_vals = [ssim(r, g) for r, g in zip(real_videos, gen_videos)]
    fvd = frechet_distance(
        gaussian_stats([ex.video_features(v) for v in real_videos]),
        gaussian_stats([ex.video_features(v) for v in gen_videos]))
    fid = frechet_distance(
        gaussian_stats(np.concatenate([ex.frame_features(v) for v in real_videos])),
        gaussian_stats(np.concatenate([ex.frame_features(v) for v in gen_videos])))
    matched, total_r, total_g, iou_sum = 0, 0, 0, 0.0
    for rb, gb in zip(real_boxes, gen_boxes):
        ious = _matched_ious(rb, gb, iou_threshold)
        matched += len(ious)
        total_r += len(rb)
        total_g += len(gb)
        iou_sum += sum(ious)
    return {
        "fvd_analog": fvd,
        "fid_analog": fid,
        "ssim": float(np.mean(ssim_vals)),
        "hr_real": matched / total_r if total_r else 1.0,
        "hr_gen": matched / total_g if total_g else 1.0,
        "miou": iou_sum / matched if matched else 0.0,
        "n_samples": n,
    }
