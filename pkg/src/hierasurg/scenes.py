"""Procedural generator of desk-scale surgical-like scenes.

A scene is a short video of colored entities moving over a smooth
background: anatomy blobs (slowly deforming ellipses) and elongated tools
whose motion follows a per-frame phase regime plus scripted triplet events
(instrument, verb, target). The panoptic ground truth is exact by
construction and every sample is a pure function of its seed.
"""

from __future__ import annotations

import json
import os
import zlib
from dataclasses import dataclass, field

import numpy as np

from .codec import default_palette
from .errors import GenerationError, IntegrityError, ParameterError, ShapeError
from . import tensorio

VERBS = ("grasp", "retract", "dissect")

# phase regimes: baseline drift speed in px/frame, cycled by phase id
_PHASE_SPEED = (0.0, 0.6, 1.4)


@dataclass(frozen=True)
class SceneConfig:
    F: int = 16
    H: int = 32
    W: int = 48
    fps: int = 1
    n_anatomy: int = 2
    n_tools: int = 1
    phase_count: int = 7
    triplet_vocab: int = 20
    seed: int = 0

    def validate(self) -> None:
        if self.fps not in (1, 8):
            raise ParameterError(f"fps must be 1 or 8, got {self.fps}")
        if self.F < 1:
            raise ParameterError(f"F must be >= 1, got {self.F}")
        for name, v in (("H", self.H), ("W", self.W)):
            if v % 8 != 0 or v % 4 != 0:
                raise ParameterError(f"{name}={v} must be divisible by 8 and the codec patch")
        if self.n_tools < 1:
            raise ParameterError(f"n_tools must be >= 1, got {self.n_tools}")
        if self.n_anatomy < 0:
            raise ParameterError(f"n_anatomy must be >= 0, got {self.n_anatomy}")
        if self.phase_count < 1 or self.triplet_vocab < 1:
            raise ParameterError("phase_count and triplet_vocab must be >= 1")
        if self.n_anatomy + self.n_tools > 24:
            raise ParameterError("at most 24 entities are supported by the palette")


@dataclass
class TripletEvent:
    triplet_id: int
    name: str
    tool_id: int
    target_id: int
    start: int   # first active frame
    stop: int    # one past the last active frame

    def to_json(self) -> dict:
        return {"triplet_id": self.triplet_id, "name": self.name,
                "tool_id": self.tool_id, "target_id": self.target_id,
                "start": self.start, "stop": self.stop}


@dataclass
class SceneSample:
    video: np.ndarray          # (F, H, W, 3) float32 in [0, 1]
    panoptic: np.ndarray       # (F, H, W) uint16, 0 = background
    phases: np.ndarray         # (F,) int64, piecewise constant, non-decreasing
    triplets: np.ndarray       # (F,) int64, active triplet vocab id (0 = idle)
    entity_kinds: dict[int, str]
    triplet_names: dict[int, str]
    events: list[TripletEvent] = field(default_factory=list)

    def __eq__(self, other) -> bool:
        if not isinstance(other, SceneSample):
            return NotImplemented
        return (np.array_equal(self.video, other.video)
                and np.array_equal(self.panoptic, other.panoptic)
                and np.array_equal(self.phases, other.phases)
                and np.array_equal(self.triplets, other.triplets)
                and self.entity_kinds == other.entity_kinds
                and self.triplet_names == other.triplet_names
                and [e.to_json() for e in self.events] == [e.to_json() for e in other.events])


def entity_name(entity_id: int, kinds: dict[int, str]) -> str:
    """Stable textual name: anatomy1.., tool1.. numbered within their kind."""
    kind = kinds[entity_id]
    rank = sum(1 for i in sorted(kinds) if i <= entity_id and kinds[i] == kind)
    return f"{kind}{rank}"


def triplet_table(kinds: dict[int, str], vocab_size: int) -> dict[int, str | tuple]:
    """Enumerate (verb, tool, target) combinations into a fixed id table.

    Id 0 is always the idle triplet. Returns id -> (name, tool_id, target_id)
    with (None, None) entity refs for idle.
    """
    table: dict[int, tuple] = {0: ("idle()", None, None)}
    tools = [i for i in sorted(kinds) if kinds[i] == "tool"]
    anatomies = [i for i in sorted(kinds) if kinds[i] == "anatomy"]
    tid = 1
    for tool in tools:
        for target in anatomies:
            for verb in VERBS:
                if tid >= vocab_size:
                    return table
                name = f"{verb}({entity_name(tool, kinds)},{entity_name(target, kinds)})"
                table[tid] = (name, tool, target)
                tid += 1
    return table


def _phase_schedule(cfg: SceneConfig, rng: np.random.Generator) -> np.ndarray:
    F = cfg.F
    n_segments = 1 if F < 6 else (2 if F <= 24 else 4)
    n_segments = min(n_segments, cfg.phase_count)
    cuts = [0]
    while len(cuts) < n_segments:
        lo, hi = cuts[-1] + 3, F - 3 * (n_segments - len(cuts))
        cuts.append(int(rng.integers(lo, hi + 1)) if hi >= lo else cuts[-1] + 3)
    cuts.append(F)
    phases = np.zeros(F, dtype=np.int64)
    p = int(rng.integers(0, max(1, cfg.phase_count - n_segments)))
    for s in range(n_segments):
        phases[cuts[s]:cuts[s + 1]] = p
        p = min(p + int(rng.integers(1, 3)), cfg.phase_count - 1)
    return phases


def _ellipse_mask(H: int, W: int, cy: float, cx: float, ry: float, rx: float,
                  theta: float) -> np.ndarray:
    yy, xx = np.mgrid[0:H, 0:W]
    dy, dx = yy - cy, xx - cx
    u = dx * np.cos(theta) + dy * np.sin(theta)
    v = -dx * np.sin(theta) + dy * np.cos(theta)
    return (u / rx) ** 2 + (v / ry) ** 2 <= 1.0


def _capsule_mask(H: int, W: int, cy: float, cx: float, half_len: float,
                  half_w: float, theta: float) -> np.ndarray:
    yy, xx = np.mgrid[0:H, 0:W]
    dy, dx = yy - cy, xx - cx
    u = dx * np.cos(theta) + dy * np.sin(theta)
    v = -dx * np.sin(theta) + dy * np.cos(theta)
    body = (np.abs(u) <= half_len) & (np.abs(v) <= half_w)
    caps = (np.abs(u) - half_len) ** 2 + v ** 2 <= half_w ** 2
    return body | caps


def _ray_limit(cy: float, cx: float, uy: float, ux: float, margin: float,
               H: int, W: int) -> float:
    """Largest t with (cy + t*uy, cx + t*ux) inside the margin box."""
    t = np.inf
    for c, u, lim in ((cy, uy, H), (cx, ux, W)):
        if u > 1e-9:
            t = min(t, (lim - margin - c) / u)
        elif u < -1e-9:
            t = min(t, (margin - c) / u)
    return max(t, 0.0)


def _background(cfg: SceneConfig, rng: np.random.Generator) -> np.ndarray:
    yy, xx = np.mgrid[0:cfg.H, 0:cfg.W]
    yn, xn = yy / max(cfg.H - 1, 1), xx / max(cfg.W - 1, 1)
    base = np.array([0.42, 0.40, 0.44]) + rng.uniform(-0.03, 0.03, 3)
    gdir = rng.uniform(-1, 1, 2)
    grad = 0.05 * (gdir[0] * yn + gdir[1] * xn)
    ripple = 0.02 * np.sin(2 * np.pi * (xn * rng.uniform(0.5, 1.5)
                                        + yn * rng.uniform(0.5, 1.5)
                                        + rng.uniform(0, 1)))
    img = base[None, None, :] + (grad + ripple)[:, :, None]
    return np.clip(img, 0.0, 1.0)


def generate_scene(cfg: SceneConfig) -> SceneSample:
    """Render one scene; deterministic in cfg.seed.

    Anatomy blobs sit in the central region; tools start in the border band
    and either drift at a phase-dependent speed or execute the active
    triplet's scripted verb profile relative to its target.
    """
    cfg.validate()
    rng = np.random.default_rng([int(cfg.seed), cfg.F, cfg.H, cfg.W])
    F, H, W = cfg.F, cfg.H, cfg.W
    n_entities = cfg.n_anatomy + cfg.n_tools
    kinds = {i + 1: ("anatomy" if i < cfg.n_anatomy else "tool") for i in range(n_entities)}
    palette = default_palette(n_entities)

    # --- anatomy placement: jittered ring in the central region, no overlap
    a_radius = min(H, W) / 6.5
    centers = []
    cy0, cx0 = H / 2, W / 2
    ring = min(H, W) / 3.2
    for i in range(cfg.n_anatomy):
        placed = False
        for attempt in range(64):
            ang = 2 * np.pi * (i / max(cfg.n_anatomy, 1)) + rng.uniform(-0.4, 0.4)
            rr = ring * rng.uniform(0.75, 1.05) if cfg.n_anatomy > 1 else 0.0
            cy = cy0 + rr * np.sin(ang) * (H / max(H, W))
            cx = cx0 + rr * np.cos(ang)
            if not (a_radius + 1 <= cy <= H - a_radius - 1
                    and a_radius + 1 <= cx <= W - a_radius - 1):
                continue
            if all((cy - oy) ** 2 + (cx - ox) ** 2 >= (2.1 * a_radius) ** 2
                   for oy, ox in centers):
                centers.append((cy, cx))
                placed = True
                break
        if not placed:
            raise GenerationError(
                f"could not place anatomy {i + 1} of {cfg.n_anatomy} in a {H}x{W} scene")
    a_axes = [(a_radius * rng.uniform(0.85, 1.1), a_radius * rng.uniform(0.7, 0.95))
              for _ in range(cfg.n_anatomy)]
    a_theta = rng.uniform(0, np.pi, cfg.n_anatomy)
    a_wobble = rng.uniform(0.5, 1.0, cfg.n_anatomy)   # breathing rate

    # --- tool geometry and initial pose in the border band
    t_half_len = max(min(H, W) / 7.0, 3.5)
    t_half_w = max(t_half_len / 3.2, 1.2)
    margin = t_half_len + 1.5
    if 2 * margin >= min(H, W):
        raise GenerationError(f"tools of length {2 * t_half_len:.1f} cannot fit in {H}x{W}")
    t_pos = np.empty((cfg.n_tools, 2))
    t_dir = np.empty((cfg.n_tools, 2))
    sides = rng.permutation(4)
    for j in range(cfg.n_tools):
        side = sides[j % 4]
        if side == 0:
            t_pos[j] = (margin, rng.uniform(margin, W - margin))
        elif side == 1:
            t_pos[j] = (H - margin, rng.uniform(margin, W - margin))
        elif side == 2:
            t_pos[j] = (rng.uniform(margin, H - margin), margin)
        else:
            t_pos[j] = (rng.uniform(margin, H - margin), W - margin)
        ang = rng.uniform(0, 2 * np.pi)
        t_dir[j] = (np.sin(ang), np.cos(ang))

    phases = _phase_schedule(cfg, rng)
    table = triplet_table(kinds, cfg.triplet_vocab)

    # --- schedule non-overlapping triplet events (one active at a time)
    events: list[TripletEvent] = []
    triplets = np.zeros(F, dtype=np.int64)
    usable = [tid for tid in table if tid != 0]
    if usable and F >= 8:
        n_events = min(1 + F // 16, 3)
        cursor = int(rng.integers(1, 4))
        for _ in range(n_events):
            span = int(rng.integers(5, 9))
            if cursor + span > F:
                break
            tid = int(rng.choice(usable))
            name, tool_id, target_id = table[tid]
            events.append(TripletEvent(tid, name, tool_id, target_id, cursor, cursor + span))
            triplets[cursor:cursor + span] = tid
            cursor += span + int(rng.integers(2, 5))

    # --- tool trajectories
    pos = np.empty((F, cfg.n_tools, 2))
    cur = t_pos.copy()
    heading = t_dir.copy()
    event_by_frame: list[TripletEvent | None] = [None] * F
    for ev in events:
        for f in range(ev.start, ev.stop):
            event_by_frame[f] = ev
    hover = {}
    for ev in events:
        tcy, tcx = centers[ev.target_id - 1]
        hover[id(ev)] = a_radius + t_half_len + 3.0
    for f in range(F):
        ev = event_by_frame[f]
        for j in range(cfg.n_tools):
            tool_id = cfg.n_anatomy + 1 + j
            if ev is not None and ev.tool_id == tool_id:
                tcy, tcx = centers[ev.target_id - 1]
                d_near = hover[id(ev)]
                if f == ev.start:
                    d0 = max(np.hypot(cur[j, 0] - tcy, cur[j, 1] - tcx), 1e-6)
                    cands = [((cur[j, 0] - tcy) / d0, (cur[j, 1] - tcx) / d0)]
                    base_ang = np.arctan2(cands[0][0], cands[0][1])
                    for da in np.linspace(0, np.pi, 9)[1:]:
                        for sgn in (1.0, -1.0):
                            a = base_ang + sgn * da
                            cands.append((np.sin(a), np.cos(a)))
                    pick = None
                    for u in cands:
                        if _ray_limit(tcy, tcx, u[0], u[1], margin, H, W) >= d_near + 6.0:
                            pick = u
                            break
                    if pick is None:
                        pick = max(cands,
                                   key=lambda u: _ray_limit(tcy, tcx, u[0], u[1], margin, H, W))
                    t_max = _ray_limit(tcy, tcx, pick[0], pick[1], margin, H, W)
                    hover[(id(ev), "dir")] = pick
                    hover[(id(ev), "d0")] = min(max(d0, d_near + 6.0), 0.97 * t_max)
                uy, ux = hover[(id(ev), "dir")]
                d_far = hover[(id(ev), "d0")]
                n = ev.stop - ev.start
                i = f - ev.start
                verb = ev.name.split("(")[0]
                if verb == "grasp":
                    # approach over the first 60%, then hold at hover distance
                    k = max(int(0.6 * (n - 1)), 1)
                    dist = d_far + (d_near - d_far) * min(i / k, 1.0)
                elif verb == "retract":
                    # strict V: apex lands on a frame so no two frames tie
                    k = max((n - 1) // 2, 1)
                    if i <= k:
                        dist = d_far + (d_near - d_far) * (i / k)
                    else:
                        dist = d_near + (d_far - d_near) * 0.9 * ((i - k) / max(n - 1 - k, 1))
                else:  # dissect: approach over the first half, then oscillate
                    k = max((n - 1) // 2, 1)
                    if i <= k:
                        dist = d_far + (d_near - d_far) * (i / k)
                    else:
                        dist = d_near + 1.5 * np.sin(2 * np.pi * (i - k) / max(n - 1 - k, 1))
                cur[j] = (tcy + uy * dist, tcx + ux * dist)
            else:
                speed = _PHASE_SPEED[int(phases[f]) % len(_PHASE_SPEED)]
                jitter = rng.normal(0, 0.08, 2)
                step = heading[j] * speed + jitter
                cur[j] = cur[j] + step
                for ax, lim in ((0, H), (1, W)):
                    if cur[j, ax] < margin:
                        cur[j, ax] = 2 * margin - cur[j, ax]
                        heading[j, ax] = abs(heading[j, ax])
                    elif cur[j, ax] > lim - margin:
                        cur[j, ax] = 2 * (lim - margin) - cur[j, ax]
                        heading[j, ax] = -abs(heading[j, ax])
            pos[f, j] = np.clip(cur[j], 1.0, (H - 2.0, W - 2.0))
        cur = pos[f].copy()

    t_theta = np.arctan2(heading[:, 0], heading[:, 1])

    # --- rasterize
    bg = _background(cfg, rng)
    shade_seed = rng.uniform(0, 2 * np.pi, n_entities)
    video = np.empty((F, H, W, 3), dtype=np.float64)
    panoptic = np.zeros((F, H, W), dtype=np.uint16)
    yy, xx = np.mgrid[0:H, 0:W]
    for f in range(F):
        frame = bg.copy()
        seg = np.zeros((H, W), dtype=np.uint16)
        for i in range(cfg.n_anatomy):
            ry, rx = a_axes[i]
            breathe = 1.0 + 0.08 * np.sin(2 * np.pi * a_wobble[i] * f / max(F, 1)
                                          + shade_seed[i])
            mask = _ellipse_mask(H, W, centers[i][0], centers[i][1],
                                 ry * breathe, rx * breathe, a_theta[i])
            color = np.asarray(palette[i + 1])
            shade = 0.03 * np.sin(0.4 * (yy + xx) + shade_seed[i])
            frame[mask] = np.clip(color[None, :] + shade[mask, None], 0, 1)
            seg[mask] = i + 1
        for j in range(cfg.n_tools):
            eid = cfg.n_anatomy + 1 + j
            ev = event_by_frame[f]
            if ev is not None and ev.tool_id == eid:
                tcy, tcx = centers[ev.target_id - 1]
                theta = np.arctan2(pos[f, j, 0] - tcy, pos[f, j, 1] - tcx)
            else:
                theta = t_theta[j]
            mask = _capsule_mask(H, W, pos[f, j, 0], pos[f, j, 1],
                                 t_half_len, t_half_w, theta)
            color = np.asarray(palette[eid])
            shade = 0.03 * np.sin(0.4 * (yy - xx) + shade_seed[eid - 1])
            frame[mask] = np.clip(color[None, :] + shade[mask, None], 0, 1)
            seg[mask] = eid
        video[f] = frame
        panoptic[f] = seg

    names = {tid: table[tid][0] for tid in sorted(table)}
    return SceneSample(video.astype(np.float32), panoptic, phases, triplets,
                       kinds, names, events)


# ---------------------------------------------------------------------------
# sample directory IO

_VIDEO_FILE = "video.hstn"
_PANOPTIC_FILE = "panoptic.hstn"
_LABELS_FILE = "labels.json"
_MANIFEST_FILE = "manifest.json"


def write_sample(sample: SceneSample, dir_path: str, fps: int = 1,
                 seed: int | None = None) -> dict:
    """Write the fixed sample layout; returns the manifest dict."""
    os.makedirs(dir_path, exist_ok=True)
    video = np.ascontiguousarray(sample.video, dtype=np.float32)
    panoptic = np.ascontiguousarray(sample.panoptic, dtype=np.uint16)
    tensorio.write_tensor(os.path.join(dir_path, _VIDEO_FILE), video)
    tensorio.write_tensor(os.path.join(dir_path, _PANOPTIC_FILE), panoptic)
    labels = {
        "phases": [int(p) for p in sample.phases],
        "triplets": [int(t) for t in sample.triplets],
        "entity_kinds": {str(k): v for k, v in sorted(sample.entity_kinds.items())},
        "triplet_names": {str(k): v for k, v in sorted(sample.triplet_names.items())},
        "events": [e.to_json() for e in sample.events],
    }
    labels_bytes = json.dumps(labels, indent=1, sort_keys=True).encode()
    with open(os.path.join(dir_path, _LABELS_FILE), "wb") as fh:
        fh.write(labels_bytes)
    F, H, W, _ = video.shape
    manifest = {
        "F": int(F), "H": int(H), "W": int(W), "fps": int(fps),
        "seed": None if seed is None else int(seed),
        "files": {
            _VIDEO_FILE: zlib.crc32(tensorio.tensor_to_bytes(video)) & 0xFFFFFFFF,
            _PANOPTIC_FILE: zlib.crc32(tensorio.tensor_to_bytes(panoptic)) & 0xFFFFFFFF,
            _LABELS_FILE: zlib.crc32(labels_bytes) & 0xFFFFFFFF,
        },
    }
    with open(os.path.join(dir_path, _MANIFEST_FILE), "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
    return manifest


def read_sample(dir_path: str) -> SceneSample:
    """Read a sample directory back, verifying per-file checksums."""
    man_path = os.path.join(dir_path, _MANIFEST_FILE)
    if not os.path.exists(man_path):
        raise IntegrityError(f"missing {_MANIFEST_FILE} in {dir_path}")
    with open(man_path) as fh:
        manifest = json.load(fh)
    raws = {}
    for fname, want_crc in manifest["files"].items():
        path = os.path.join(dir_path, fname)
        if not os.path.exists(path):
            raise IntegrityError(f"missing {fname} in {dir_path}")
        with open(path, "rb") as fh:
            raw = fh.read()
        got = zlib.crc32(raw) & 0xFFFFFFFF
        if got != want_crc:
            raise IntegrityError(f"checksum mismatch for {fname}: {got} != {want_crc}")
        raws[fname] = raw
    video = tensorio.tensor_from_bytes(raws[_VIDEO_FILE], 0)[0]
    panoptic = tensorio.tensor_from_bytes(raws[_PANOPTIC_FILE], 0)[0]
    labels = json.loads(raws[_LABELS_FILE])
    if video.shape[:3] != panoptic.shape:
        raise ShapeError(f"video {video.shape} and panoptic {panoptic.shape} disagree")
    events = [TripletEvent(**e) for e in labels.get("events", [])]
    return SceneSample(
        video=video,
        panoptic=panoptic,
        phases=np.asarray(labels["phases"], dtype=np.int64),
        triplets=np.asarray(labels["triplets"], dtype=np.int64),
        entity_kinds={int(k): v for k, v in labels["entity_kinds"].items()},
        triplet_names={int(k): v for k, v in labels["triplet_names"].items()},
        events=events,
    )
