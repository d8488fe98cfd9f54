"""Run configuration: one validated, JSON-serializable record per pipeline run.

A RunConfig bundles everything a command needs: which stage to train, the
codec and denoiser hyperparameters, the noise schedule, optimizer settings,
and dataset layout. Configs round-trip losslessly through JSON and carry a
content hash so artifacts can state exactly what produced them.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field

from .codec import CodecConfig
from .dit import DiTConfig
from .errors import ParameterError

# S2M always predicts this many segmentation maps (one 16 s clip at 1 FPS).
SEG_MAPS = 16

ENV_SEED = "HIERASURG_SEED"


def frames_for_fps(fps: int) -> int:
    """Output video length per clip: 16 frames at 1 FPS, 48 at 8 FPS."""
    if fps == 1:
        return 16
    if fps == 8:
        return 48
    raise ParameterError(f"fps must be 1 or 8, got {fps}")


@dataclass(frozen=True)
class RunConfig:
    stage: str = "s2m"                  # s2m | m2v
    data_dir: str = "data"
    fps: int = 1
    height: int = 32
    width: int = 48
    n_anatomy: int = 2
    n_tools: int = 1
    phase_vocab: int = 7
    triplet_vocab: int = 20
    provider: str = "label_embedding"   # phase/triplet embedding source
    # noise schedule
    num_timesteps: int = 1000
    beta_start: float = 1e-4
    beta_end: float = 0.02
    # network output semantics; the training loss is the noise-prediction
    # MSE either way (clean-latent prediction converts algebraically)
    objective: str = "x0"
    # optimizer
    step_size: float = 1e-3
    train_steps: int = 2000
    batch_size: int = 4
    seed: int = 0
    checkpoint_every: int = 0           # 0: checkpoint only at the end
    # sampling
    sample_stride: int = 1
    k_max: int = 8                      # discretization cap for predicted maps
    condition_labels: bool = True       # False: s2m phase/triplet ablation
    codec: CodecConfig = field(default_factory=CodecConfig)
    dit: DiTConfig = field(default_factory=lambda: DiTConfig(mode="s2m"))

    def validate(self) -> None:
        if self.stage not in ("s2m", "m2v"):
            raise ParameterError(f"stage must be s2m or m2v, got {self.stage!r}")
        if self.dit.mode != self.stage:
            raise ParameterError(
                f"denoiser mode {self.dit.mode!r} does not match stage {self.stage!r}")
        frames_for_fps(self.fps)
        self.codec.validate()
        for name, v in (("height", self.height), ("width", self.width)):
            if v % 8 or v % self.codec.spatial_patch:
                raise ParameterError(
                    f"{name}={v} must be divisible by 8 and by the codec patch")
        if self.n_tools < 1 or self.n_anatomy < 0:
            raise ParameterError("need n_tools >= 1 and n_anatomy >= 0")
        if self.phase_vocab < 1 or self.triplet_vocab < 1:
            raise ParameterError("phase_vocab and triplet_vocab must be >= 1")
        if self.num_timesteps < 1:
            raise ParameterError(f"num_timesteps must be >= 1, got {self.num_timesteps}")
        if not 0.0 < self.beta_start <= self.beta_end < 1.0:
            raise ParameterError(
                f"need 0 < beta_start <= beta_end < 1, got {self.beta_start}, {self.beta_end}")
        if self.objective not in ("x0", "epsilon"):
            raise ParameterError(f"objective must be x0 or epsilon, got {self.objective!r}")
        if self.step_size < 0.0:
            raise ParameterError(f"step_size must be >= 0, got {self.step_size}")
        if self.train_steps < 0:
            raise ParameterError(f"train_steps must be >= 0, got {self.train_steps}")
        if self.batch_size < 1:
            raise ParameterError(f"batch_size must be >= 1, got {self.batch_size}")
        if self.checkpoint_every < 0:
            raise ParameterError(
                f"checkpoint_every must be >= 0, got {self.checkpoint_every}")
        if self.sample_stride < 1:
            raise ParameterError(f"sample_stride must be >= 1, got {self.sample_stride}")
        if self.k_max < 2:
            raise ParameterError(f"k_max must be >= 2, got {self.k_max}")

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["codec"] = dataclasses.asdict(self.codec)
        dit = dataclasses.asdict(self.dit)
        dit.pop("mode")  # implied by stage
        d["dit"] = dit
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "RunConfig":
        data = dict(data)
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - known)
        if unknown:
            raise ParameterError(f"unknown config fields: {unknown}")
        codec = data.pop("codec", {})
        dit = data.pop("dit", {})
        if isinstance(codec, dict):
            bad = sorted(set(codec) - {f.name for f in dataclasses.fields(CodecConfig)})
            if bad:
                raise ParameterError(f"unknown codec fields: {bad}")
            codec = CodecConfig(**codec)
        if isinstance(dit, dict):
            dit = dict(dit)
            dit.pop("mode", None)
            bad = sorted(set(dit) - {f.name for f in dataclasses.fields(DiTConfig)})
            if bad:
                raise ParameterError(f"unknown dit fields: {bad}")
            stage = data.get("stage", cls.stage)
            dit = DiTConfig(mode=stage, **dit)
        return cls(codec=codec, dit=dit, **data)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "RunConfig":
        return cls.from_dict(json.loads(text))

    def config_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def resume_hash(self) -> str:
        """Config identity minus the stop point; resuming to a larger
        train_steps is continuation, not a different run."""
        d = self.to_dict()
        d.pop("train_steps")
        d.pop("checkpoint_every")
        blob = json.dumps(d, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def replace(self, **changes) -> "RunConfig":
        d = self.to_dict()
        d.update(changes)
        return RunConfig.from_dict(d)


def load_run_config(path: str | None = None,
                    overrides: dict | None = None,
                    env: dict | None = None) -> RunConfig:
    """Build a RunConfig with precedence flag > file > built-in default.

    `overrides` holds explicitly-set CLI flags (top-level field names).
    HIERASURG_SEED, when present in `env` (default os.environ), replaces the
    seed last of all.
    """
    data: dict = {}
    if path is not None:
        with open(path) as fh:
            loaded = json.load(fh)
        if not isinstance(loaded, dict):
            raise ParameterError(f"config file {path} must hold a JSON object")
        data.update(loaded)
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key in ("codec", "dit"):
            merged = dict(data.get(key, {}))
            merged.update(value)
            data[key] = merged
        else:
            data[key] = value
    env = os.environ if env is None else env
    if ENV_SEED in env:
        raw = env[ENV_SEED]
        try:
            data["seed"] = int(raw)
        except ValueError:
            raise ParameterError(f"{ENV_SEED} must be an integer, got {raw!r}") from None
    cfg = RunConfig.from_dict(data)
    cfg.validate()
    return cfg
