"""Deterministic stand-in for the video autoencoder pair, plus the
color-space handling of segmentation maps.

Encoding is a seeded orthonormal space-to-depth projection: frames are
grouped in windows of `temporal_factor` (zero-padded tail), each
spatial_patch x spatial_patch x 3 x temporal_factor block is flattened and
multiplied by a fixed orthonormal matrix. With latent_dim equal to the
block size the round trip is exact, which keeps encode/decode out of the
way when testing the diffusion stages. Dense mode encodes every frame as
its own 1-frame window so the latent frame count equals F.

The discretization path (elbow_k, kmeans_discretize) maps generated
color-space segmentation frames back to integer panoptic maps.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import ParameterError, PaletteLookupError, ShapeError

CHANNELS = 3


@dataclass(frozen=True)
class CodecConfig:
    spatial_patch: int = 4
    temporal_factor: int = 4
    # block size p*p*3*r; the default keeps the projection square, hence lossless
    latent_dim: int = 192
    projection_seed: int = 0

    @property
    def block_size(self) -> int:
        return self.spatial_patch ** 2 * CHANNELS * self.temporal_factor

    def validate(self) -> None:
        if self.spatial_patch < 1 or self.temporal_factor < 1:
            raise ParameterError("spatial_patch and temporal_factor must be >= 1")
        if not 1 <= self.latent_dim <= self.block_size:
            raise ParameterError(
                f"latent_dim {self.latent_dim} outside 1..{self.block_size}")


@dataclass
class LatentVideo:
    data: np.ndarray          # F_lat x H' x W' x d
    mode: str                 # "dense" or "compressed"
    num_frames: int           # F of the source video


@lru_cache(maxsize=16)
def _projection(block_size: int, latent_dim: int, seed: int) -> np.ndarray:
    """Seeded orthonormal rows: latent_dim x block_size, M @ M.T = I."""
    rng = np.random.default_rng(seed)
    q, r = np.linalg.qr(rng.standard_normal((block_size, block_size)))
    q = q * np.sign(np.diag(r))  # fix the sign ambiguity of the factorization
    m = q.T[:latent_dim].copy()
    m.flags.writeable = False
    return m


def _check_video(video: np.ndarray, cfg: CodecConfig) -> None:
    cfg.validate()
    if video.ndim != 4 or video.shape[-1] != CHANNELS:
        raise ShapeError(f"expected F x H x W x {CHANNELS}, got {video.shape}")
    p = cfg.spatial_patch
    _, H, W, _ = video.shape
    if H % p or W % p:
        raise ParameterError(f"H={H}, W={W} not divisible by spatial_patch {p}")
    if video.shape[0] < 1:
        raise ParameterError("need at least one frame")


def _encode_windows(windows: np.ndarray, cfg: CodecConfig) -> np.ndarray:
    # windows: G x r x H x W x C -> G x H' x W' x d
    p, r = cfg.spatial_patch, cfg.temporal_factor
    G, _, H, W, C = windows.shape
    v = windows.reshape(G, r, H // p, p, W // p, p, C)
    v = v.transpose(0, 2, 4, 1, 3, 5, 6).reshape(G, H // p, W // p, r * p * p * C)
    m = _projection(cfg.block_size, cfg.latent_dim, cfg.projection_seed)
    return v @ m.T


def encode_compressed(video: np.ndarray, cfg: CodecConfig) -> LatentVideo:
    """Temporally compressed latents: F_lat = ceil(F / temporal_factor)."""
    _check_video(video, cfg)
    F, H, W, C = video.shape
    r = cfg.temporal_factor
    F_lat = -(-F // r)
    windows = np.zeros((F_lat, r, H, W, C), dtype=np.float64)
    windows.reshape(F_lat * r, H, W, C)[:F] = video
    return LatentVideo(_encode_windows(windows, cfg), "compressed", F)


def encode_dense(video: np.ndarray, cfg: CodecConfig) -> LatentVideo:
    """One window per frame (frame first, zero padding after): F_lat = F."""
    _check_video(video, cfg)
    F, H, W, C = video.shape
    windows = np.zeros((F, cfg.temporal_factor, H, W, C), dtype=np.float64)
    windows[:, 0] = video
    return LatentVideo(_encode_windows(windows, cfg), "dense", F)


def decode(z: LatentVideo, cfg: CodecConfig) -> np.ndarray:
    cfg.validate()
    data = z.data
    if data.ndim != 4 or data.shape[-1] != cfg.latent_dim:
        raise ShapeError(f"latent shape {data.shape} inconsistent with latent_dim {cfg.latent_dim}")
    p, r = cfg.spatial_patch, cfg.temporal_factor
    F_lat, Hp, Wp, _ = data.shape
    m = _projection(cfg.block_size, cfg.latent_dim, cfg.projection_seed)
    blocks = data @ m
    v = blocks.reshape(F_lat, Hp, Wp, r, p, p, CHANNELS)
    v = v.transpose(0, 3, 1, 4, 2, 5, 6).reshape(F_lat, r, Hp * p, Wp * p, CHANNELS)
    if z.mode == "dense":
        if z.num_frames != F_lat:
            raise ShapeError(f"dense latent with F_lat={F_lat} but num_frames={z.num_frames}")
        return v[:, 0]
    if z.mode == "compressed":
        frames = v.reshape(F_lat * r, Hp * p, Wp * p, CHANNELS)
        if not 0 < z.num_frames <= F_lat * r:
            raise ShapeError(f"num_frames {z.num_frames} outside 1..{F_lat * r}")
        return frames[: z.num_frames]
    raise ParameterError(f"unknown latent mode {z.mode!r}")


# ---------------------------------------------------------------------------
# Palettes and color-space segmentation maps

_GRID_LEVELS = (0.0, 0.5, 1.0)


@lru_cache(maxsize=4)
def _ordered_entity_colors() -> tuple[tuple[float, float, float], ...]:
    """Non-black grid colors in farthest-point order (seeded by black).

    Greedy max-min ordering keeps every prefix of the palette well spread,
    which is what makes the elbow criterion stable for any cluster count.
    Ties broken lexicographically.
    """
    candidates = sorted(
        (r, g, b)
        for r in _GRID_LEVELS for g in _GRID_LEVELS for b in _GRID_LEVELS
        if (r, g, b) != (0.0, 0.0, 0.0)
    )
    chosen: list[tuple[float, float, float]] = []
    anchors = [(0.0, 0.0, 0.0)]
    while candidates:
        best = max(
            candidates,
            key=lambda c: (min(math.dist(c, a) for a in anchors), [-x for x in c]),
        )
        chosen.append(best)
        anchors.append(best)
        candidates.remove(best)
    return tuple(chosen[:24])  # the fixed 24-color entity set


def default_palette(n_entities: int) -> dict[int, tuple[float, float, float]]:
    """Background 0 -> black plus n_entities well-separated colors."""
    colors = _ordered_entity_colors()
    if n_entities > len(colors):
        raise ParameterError(f"at most {len(colors)} entity colors available, asked {n_entities}")
    palette = {0: (0.0, 0.0, 0.0)}
    for i in range(n_entities):
        palette[i + 1] = colors[i]
    return palette


def segmap_to_color(seg: np.ndarray, palette: dict[int, tuple[float, float, float]]) -> np.ndarray:
    ids = np.unique(seg)
    missing = [int(i) for i in ids if int(i) not in palette]
    if missing:
        raise PaletteLookupError(f"ids with no palette entry: {missing}")
    table = np.zeros((int(ids.max()) + 1 if len(ids) else 1, CHANNELS))
    for i in ids:
        table[int(i)] = palette[int(i)]
    return table[seg]


def palette_quantize(colors: np.ndarray, palette: dict[int, tuple[float, float, float]]) -> np.ndarray:
    """Nearest-palette-color inverse of segmap_to_color."""
    if colors.shape[-1] != CHANNELS:
        raise ShapeError(f"expected trailing channel axis of {CHANNELS}, got {colors.shape}")
    ids = np.array(sorted(palette), dtype=np.int64)
    table = np.array([palette[int(i)] for i in ids])
    flat = colors.reshape(-1, CHANNELS)
    d2 = ((flat[:, None, :] - table[None, :, :]) ** 2).sum(axis=2)
    return ids[d2.argmin(axis=1)].reshape(colors.shape[:-1])


def palette_to_json(palette: dict[int, tuple[float, float, float]]) -> str:
    records = [[int(i)] + [float(c) for c in palette[i]] for i in sorted(palette)]
    return json.dumps(records)


def palette_from_json(text: str) -> dict[int, tuple[float, float, float]]:
    return {int(rec[0]): (float(rec[1]), float(rec[2]), float(rec[3]))
            for rec in json.loads(text)}


def save_palette(path: str | Path, palette: dict[int, tuple[float, float, float]]) -> None:
    Path(path).write_text(palette_to_json(palette))


def load_palette(path: str | Path) -> dict[int, tuple[float, float, float]]:
    return palette_from_json(Path(path).read_text())


# ---------------------------------------------------------------------------
# K-Means + elbow discretization

FIT_SUBSAMPLE = 65_536


def elbow_k(inertias) -> int:
    """K (1-indexed) maximizing the discrete second difference; ties -> smaller K."""
    inertias = np.asarray(inertias, dtype=np.float64)
    if inertias.ndim != 1 or len(inertias) < 3:
        raise ParameterError("need inertias for at least 3 values of K")
    if np.any(np.diff(inertias) > 1e-9 * max(1.0, float(inertias[0]))):
        raise ParameterError("inertias must be non-increasing in K")
    d2 = inertias[:-2] - 2.0 * inertias[1:-1] + inertias[2:]
    return int(np.argmax(d2)) + 2  # d2[j] scores K = j + 2


def _kmeans_pp_init(X: np.ndarray, K: int, rng: np.random.Generator,
                    n_candidates: int | None = None) -> np.ndarray:
    """k-means++ seeding. With n_candidates > 1 (greedy variant) several
    candidates are drawn per step and the best inertia reducer kept; with
    n_candidates=1 this is the classic sampled version."""
    n = len(X)
    if n_candidates is None:
        n_candidates = 2 + int(math.log(K)) if K > 1 else 1
    centroids = np.empty((K, X.shape[1]))
    centroids[0] = X[int(rng.integers(n))]
    d2 = ((X - centroids[0]) ** 2).sum(axis=1)
    for k in range(1, K):
        total = float(d2.sum())
        if total <= 0.0:
            centroids[k] = centroids[0]
            continue
        cand_idx = rng.choice(n, size=n_candidates, p=d2 / total)
        best_idx, best_d2, best_total = None, None, None
        for idx in cand_idx:
            nd2 = np.minimum(d2, ((X - X[int(idx)]) ** 2).sum(axis=1))
            ntot = float(nd2.sum())
            if best_total is None or ntot < best_total:
                best_idx, best_d2, best_total = int(idx), nd2, ntot
        centroids[k] = X[best_idx]
        d2 = best_d2
    return centroids


def _sq_dists(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Pairwise squared distances via the expansion trick: (n, runs, K)."""
    R, K, D = C.shape
    cross = X @ C.reshape(R * K, D).T
    d2 = (C ** 2).sum(axis=2).reshape(1, R * K) - 2.0 * cross
    d2 += (X ** 2).sum(axis=1)[:, None]
    np.maximum(d2, 0.0, out=d2)
    return d2.reshape(len(X), R, K)


def _lloyd_batch(X: np.ndarray, inits: np.ndarray, max_iter: int = 100,
                 tol: float = 1e-4) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd iterations on several initializations at once.

    X is (n, D); inits is (runs, K, D). Converged runs drop out of the
    update loop early. Returns final centroids (runs, K, D) and the
    per-run inertias.
    """
    R, K, D = inits.shape
    C = inits.copy()
    active = np.arange(R)
    for _ in range(max_iter):
        Ca = C[active]
        d2 = _sq_dists(X, Ca)
        assign = d2.argmin(axis=2)  # (n, A)
        offs = assign * len(active) + np.arange(len(active))[None, :]
        counts = np.bincount(offs.ravel(), minlength=len(active) * K)
        counts = counts.reshape(K, len(active)).T
        new = np.empty_like(Ca)
        for d in range(D):
            w = np.broadcast_to(X[:, d][:, None], offs.shape).ravel()
            sums = np.bincount(offs.ravel(), weights=w, minlength=len(active) * K)
            new[:, :, d] = sums.reshape(K, len(active)).T
        nonzero = np.maximum(counts, 1)
        new /= nonzero[:, :, None]
        for r, k in np.argwhere(counts == 0):
            new[r, k] = X[int(d2[:, r, :].min(axis=1).argmax())]  # revive on the worst-served point
        shift = np.sqrt(((new - Ca) ** 2).sum(axis=2)).max(axis=1)
        C[active] = new
        active = active[shift >= tol]
        if not len(active):
            break
    d2 = _sq_dists(X, C)
    return C, d2.min(axis=2).sum(axis=0)


def _lloyd(X: np.ndarray, centroids: np.ndarray, max_iter: int = 100,
           tol: float = 1e-4) -> tuple[np.ndarray, float]:
    C, inertias = _lloyd_batch(X, centroids[None], max_iter, tol)
    return C[0], float(inertias[0])


N_INIT = 10  # k-means restarts per K; best inertia wins


def _best_kmeans(X: np.ndarray, K: int, rng: np.random.Generator,
                 n_init: int = N_INIT,
                 warm_start: np.ndarray | None = None) -> tuple[np.ndarray, float]:
    """Best of n_init k-means++ starts, all drawn from one stream.

    The first start uses the greedy candidate variant (strong but nearly
    deterministic on well-separated data); the rest use classic sampled
    seeding so the restarts actually explore distinct basins. An optional
    warm-start centroid set competes alongside them.
    """
    inits = [_kmeans_pp_init(X, K, rng)]
    inits += [_kmeans_pp_init(X, K, rng, n_candidates=1) for _ in range(n_init - 1)]
    if warm_start is not None and len(warm_start) == K:
        inits.append(np.asarray(warm_start, dtype=np.float64))
    C, inertias = _lloyd_batch(X, np.stack(inits))
    best = int(np.argmin(inertias))
    return C[best], float(inertias[best])


def _agglomerate(centroids: np.ndarray, masses: np.ndarray, K: int) -> np.ndarray:
    """Ward-style greedy merging of weighted centroids down to K rows."""
    C = [np.asarray(c, dtype=np.float64) for c in centroids]
    m = [float(v) for v in masses]
    while len(C) > K:
        best = None
        for i in range(len(C)):
            for j in range(i + 1, len(C)):
                denom = m[i] + m[j]
                cost = (m[i] * m[j] / denom if denom else 0.0) * ((C[i] - C[j]) ** 2).sum()
                if best is None or cost < best[0]:
                    best = (cost, i, j)
        _, i, j = best
        total = m[i] + m[j]
        C[i] = (C[i] * m[i] + C[j] * m[j]) / total if total else C[i]
        m[i] = total
        del C[j], m[j]
    return np.stack(C)


def kmeans_discretize(colors: np.ndarray, k_max: int, seed: int,
                      k_fixed: int | None = None) -> tuple[np.ndarray, dict]:
    """Cluster pixel colors, pick K by elbow (or k_fixed), return an integer
    map plus the centroid palette. The cluster nearest black becomes id 0."""
    if colors.size == 0:
        raise ParameterError("empty color input")
    if colors.shape[-1] != CHANNELS:
        raise ShapeError(f"expected trailing channel axis of {CHANNELS}, got {colors.shape}")
    if k_max < 2:
        raise ParameterError(f"k_max must be >= 2, got {k_max}")
    if k_fixed is not None and not 1 <= k_fixed <= k_max:
        raise ParameterError(f"k_fixed {k_fixed} outside 1..{k_max}")
    flat = colors.reshape(-1, CHANNELS).astype(np.float64)
    rng = np.random.default_rng(seed)
    if len(flat) > FIT_SUBSAMPLE:
        fit = flat[rng.choice(len(flat), FIT_SUBSAMPLE, replace=False)]
    else:
        fit = flat

    n_distinct = len(np.unique(fit, axis=0))
    if n_distinct == 1 and k_fixed is None:
        k_fixed = 1

    centroids_by_k: dict[int, np.ndarray] = {}
    if k_fixed is not None:
        centroids_by_k[k_fixed], _ = _best_kmeans(
            fit, k_fixed, np.random.default_rng([seed, k_fixed]))
        chosen = k_fixed
    else:
        inertias = np.empty(k_max)
        warm = None
        # sweep K downward so each K inherits an agglomerated warm start
        # from the K+1 solution; kills spurious local-minimum bumps that
        # would otherwise distort the elbow curve
        for K in range(k_max, 0, -1):
            c, inertia = _best_kmeans(fit, K, np.random.default_rng([seed, K]),
                                      warm_start=warm)
            centroids_by_k[K] = c
            inertias[K - 1] = inertia
            if K > 1:
                counts = np.bincount(
                    _sq_dists(fit, c[None])[:, 0, :].argmin(axis=1), minlength=K)
                warm = _agglomerate(c, counts, K - 1)
        # guard elbow against non-monotone blips from unlucky local minima
        chosen = elbow_k(np.minimum.accumulate(inertias))

    centroids = centroids_by_k[chosen]
    order = np.argsort((centroids ** 2).sum(axis=1), kind="stable")
    bg = int(order[0])
    relabel = np.empty(chosen, dtype=np.int64)
    relabel[bg] = 0
    next_id = 1
    for k in range(chosen):
        if k != bg:
            relabel[k] = next_id
            next_id += 1
    d2 = ((flat[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    seg = relabel[d2.argmin(axis=1)].reshape(colors.shape[:-1])
    palette = {int(relabel[k]): tuple(float(v) for v in centroids[k]) for k in range(chosen)}
    return seg, palette


def remap_to_palette(seg: np.ndarray, centroid_palette: dict, target_palette: dict) -> np.ndarray:
    """Rename ids by nearest target color (aligns clustered maps with GT ids)."""
    target_ids = np.array(sorted(target_palette), dtype=np.int64)
    target_colors = np.array([target_palette[int(i)] for i in target_ids])
    mapping = {}
    for i, color in centroid_palette.items():
        d2 = ((target_colors - np.asarray(color)) ** 2).sum(axis=1)
        mapping[int(i)] = int(target_ids[d2.argmin()])
    out = np.zeros_like(seg)
    for i, j in mapping.items():
        out[seg == i] = j
    return out
