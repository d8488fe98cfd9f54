"""Stage training: denoising objective over precomputed latents.

Both stages follow the same loop: draw a batch, noise the clean latents at
random timesteps, predict the noise, take an adaptive-moment gradient step.
All randomness per step comes from a generator seeded with (seed, step), so
an interrupted run resumed from its checkpoint reproduces the uninterrupted
loss log bit for bit.
"""

from __future__ import annotations

import math
import os

import numpy as np
import torch

from . import tensorio
from .codec import default_palette, encode_compressed, encode_dense, segmap_to_color
from .config import SEG_MAPS, RunConfig
from .dataset import load_split, scene_config_for
from .diffusion import make_schedule
from .dit import ConditioningBundle, DiT
from .errors import ParameterError, TrainingDivergedError
from .scenes import read_sample, triplet_table

PALETTE_SIZE = 24   # one shared colorization palette across the pipeline


def seg_frame_indices(num_frames: int, n_maps: int = SEG_MAPS) -> np.ndarray:
    """Video frames carrying the n_maps segmentation maps (1 FPS alignment)."""
    if num_frames < 1:
        raise ParameterError(f"need at least 1 frame, got {num_frames}")
    if num_frames <= n_maps:
        return np.arange(num_frames, dtype=np.int64)
    return np.round(np.arange(n_maps) * (num_frames - 1) / (n_maps - 1)).astype(np.int64)


def build_model(cfg: RunConfig) -> DiT:
    """Denoiser for the configured stage, deterministically initialized."""
    phase_names = triplet_names = None
    if cfg.provider == "pretrained_table":
        kinds = {i + 1: ("anatomy" if i < cfg.n_anatomy else "tool")
                 for i in range(cfg.n_anatomy + cfg.n_tools)}
        table = triplet_table(kinds, cfg.triplet_vocab)
        phase_names = [f"phase_{i}" for i in range(cfg.phase_vocab)]
        triplet_names = [table[i][0] if i in table else f"triplet_{i}"
                         for i in range(cfg.triplet_vocab)]
    return DiT(cfg.dit, latent_dim=cfg.codec.latent_dim,
               phase_vocab=cfg.phase_vocab, triplet_vocab=cfg.triplet_vocab,
               provider=cfg.provider, phase_names=phase_names,
               triplet_names=triplet_names, seed=cfg.seed)


class LatentNormalizer:
    """Standardizes latents: per-position mean plus one global scale.

    Raw codec latents are far from unit variance and carry large structured
    offsets, which stalls a unit-noise denoising objective. The stats come
    from the training latents and ride along in the checkpoint so generation
    can sample in standardized space and undo the map before decoding.
    """

    def __init__(self, mean: torch.Tensor, std: float):
        self.mean = mean                      # (h, w, D)
        self.std = float(std)

    @classmethod
    def fit(cls, x0: torch.Tensor) -> "LatentNormalizer":
        mean = x0.mean(dim=(0, 1))
        std = max(float((x0 - mean).std()), 1e-6)
        return cls(mean, std)

    def normalize(self, x: torch.Tensor) -> torch.Tensor:
        return (x - self.mean) / self.std

    def denormalize(self, x: np.ndarray) -> np.ndarray:
        return x * self.std + self.mean.double().numpy()

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {"norm/latent_mean": self.mean.numpy().astype(np.float32),
                "norm/latent_std": np.array([self.std], dtype=np.float32)}

    @classmethod
    def from_state_arrays(cls, arrays: dict[str, np.ndarray]) -> "LatentNormalizer":
        for key in ("norm/latent_mean", "norm/latent_std"):
            if key not in arrays:
                raise ParameterError(f"checkpoint missing {key}")
        return cls(torch.from_numpy(arrays["norm/latent_mean"].copy()),
                   float(arrays["norm/latent_std"][0]))


class StageExamples:
    """Precomputed per-sample training tensors for one stage.

    norm: standardizer to reuse (e.g. the one stored in a checkpoint when
    computing held-out losses); fitted on these latents when omitted.
    """

    def __init__(self, cfg: RunConfig, sample_dirs: list[str],
                 norm: LatentNormalizer | None = None):
        if not sample_dirs:
            raise ParameterError("training requires at least one sample")
        palette = default_palette(PALETTE_SIZE)
        x0, z_y, z_y_seg, z_first, seg_color, bundles = [], [], [], [], [], []
        for path in sample_dirs:
            sample = read_sample(path)
            sidx = seg_frame_indices(sample.video.shape[0])
            maps_color = segmap_to_color(sample.panoptic[sidx], palette)
            if cfg.stage == "s2m":
                x0.append(encode_dense(maps_color, cfg.codec).data)
                z_y.append(encode_dense(sample.video[:1], cfg.codec).data)
                z_y_seg.append(encode_dense(
                    segmap_to_color(sample.panoptic[:1], palette), cfg.codec).data)
                if cfg.condition_labels:
                    bundles.append(ConditioningBundle(
                        sample.phases[sidx], sample.triplets[sidx],
                        provider=cfg.provider))
                else:  # ablation: constant ids carry no scene information
                    zeros = np.zeros(len(sidx), dtype=np.int64)
                    bundles.append(ConditioningBundle(zeros, zeros.copy(),
                                                      provider=cfg.provider))
            else:
                x0.append(encode_compressed(sample.video, cfg.codec).data)
                z_first.append(encode_dense(sample.video[:1], cfg.codec).data)
                seg_color.append(maps_color)

        def stack(parts):
            return torch.from_numpy(np.stack(parts).astype(np.float32))

        self.stage = cfg.stage
        self.objective = cfg.objective
        raw = stack(x0)
        self.norm = LatentNormalizer.fit(raw) if norm is None else norm
        self.x0 = self.norm.normalize(raw)
        self.latent_frames = self.x0.shape[1]
        if cfg.stage == "s2m":
            self.z_y = self.norm.normalize(stack(z_y))
            self.z_y_seg = self.norm.normalize(stack(z_y_seg))
            self.bundles = bundles
        else:
            self.z_first = self.norm.normalize(stack(z_first))
            self.seg_color = stack(seg_color)

    def __len__(self) -> int:
        return self.x0.shape[0]


def _assemble_batch(z: torch.Tensor, conds: list[torch.Tensor]) -> torch.Tensor:
    # batched version of the 4-D latent assembly: same channel order
    parts = [z] + [c.expand(-1, z.shape[1], -1, -1, -1) for c in conds]
    return torch.cat(parts, dim=-1)


def batch_loss(model: DiT, ex: StageExamples, idx: np.ndarray, t: np.ndarray,
               eps: torch.Tensor, sqrt_ab: torch.Tensor,
               sqrt_1mab: torch.Tensor) -> torch.Tensor:
    """Noise-prediction MSE for one batch at per-sample timesteps.

    Under the x0 objective the network outputs the clean latent and the noise
    estimate is implied: eps_hat = (x_t - sqrt(ab)*x0_hat) / sqrt(1-ab), so
    |eps_hat - eps|^2 == ab/(1-ab) * |x0_hat - x0|^2 exactly. Predicting the
    clean latent trains far faster here because it is low-rank while white
    noise is not, yet the reported loss is the same quantity either way.
    """
    sel = torch.from_numpy(np.asarray(idx, dtype=np.int64))
    x0 = ex.x0[sel]
    shape = (-1,) + (1,) * (x0.ndim - 1)
    ts = torch.from_numpy(np.asarray(t, dtype=np.int64))
    xt = sqrt_ab[ts].reshape(shape) * x0 + sqrt_1mab[ts].reshape(shape) * eps
    if ex.stage == "s2m":
        z_in = _assemble_batch(xt, [ex.z_y_seg[sel], ex.z_y[sel]])
        pred = model(z_in, t, bundle=[ex.bundles[int(i)] for i in idx])
    else:
        z_in = _assemble_batch(xt, [ex.z_first[sel]])
        pred = model(z_in, t, seg_color=ex.seg_color[sel],
                     target_frames=ex.latent_frames)
    if ex.objective == "x0":
        w = (sqrt_ab[ts] / sqrt_1mab[ts]) ** 2
        per = ((pred - x0) ** 2).reshape(len(idx), -1).mean(dim=1)
        return (w * per).mean()
    return ((pred - eps) ** 2).mean()


class MomentOptimizer:
    """Adaptive-moment gradient descent with checkpointable named buffers."""

    def __init__(self, model: DiT, step_size: float,
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.params = {n: p for n, p in sorted(model.named_parameters())
                       if p.requires_grad}
        self.step_size = step_size
        self.betas = betas
        self.eps = eps
        self.m = {n: torch.zeros_like(p) for n, p in self.params.items()}
        self.v = {n: torch.zeros_like(p) for n, p in self.params.items()}

    def step(self, k: int) -> None:
        """One update; k is the 1-based global step for bias correction."""
        b1, b2 = self.betas
        with torch.no_grad():
            for name, p in self.params.items():
                g = p.grad
                if g is None:
                    continue
                m = self.m[name].mul_(b1).add_(g, alpha=1 - b1)
                v = self.v[name].mul_(b2).addcmul_(g, g, value=1 - b2)
                m_hat = m / (1 - b1 ** k)
                v_hat = v / (1 - b2 ** k)
                p.addcdiv_(m_hat, v_hat.sqrt().add_(self.eps), value=-self.step_size)

    def state_arrays(self) -> dict[str, np.ndarray]:
        out = {}
        for name in self.params:
            out[f"adam_m/{name}"] = self.m[name].numpy().astype(np.float32)
            out[f"adam_v/{name}"] = self.v[name].numpy().astype(np.float32)
        return out

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for name in self.params:
            for prefix, buf in (("adam_m/", self.m), ("adam_v/", self.v)):
                key = prefix + name
                if key not in arrays:
                    raise ParameterError(f"checkpoint missing optimizer buffer {key}")
                with torch.no_grad():
                    buf[name].copy_(torch.from_numpy(arrays[key].copy()))


def write_stage_checkpoint(path: str, cfg: RunConfig, model: DiT,
                           opt: MomentOptimizer, norm: LatentNormalizer,
                           step: int) -> None:
    header = {"kind": "hierasurg-checkpoint", "stage": cfg.stage,
              "step": int(step), "config": cfg.to_dict(),
              "config_hash": cfg.config_hash(),
              "resume_hash": cfg.resume_hash()}
    tensors = {f"param/{n}": a for n, a in model.state_arrays().items()}
    tensors.update(opt.state_arrays())
    tensors.update(norm.state_arrays())
    tensorio.write_checkpoint(path, header, tensors)


def read_stage_checkpoint(path: str) -> tuple[dict, dict]:
    header, arrays = tensorio.read_checkpoint(path)
    if header.get("kind") != "hierasurg-checkpoint":
        raise ParameterError(f"{path} is not a stage checkpoint")
    return header, arrays


def load_checkpoint_model(path: str) -> tuple[DiT, RunConfig, dict, LatentNormalizer]:
    """Rebuild the trained denoiser recorded in a checkpoint."""
    header, arrays = read_stage_checkpoint(path)
    cfg = RunConfig.from_dict(header["config"])
    cfg.validate()
    model = build_model(cfg)
    model.load_state_arrays({n[len("param/"):]: a for n, a in arrays.items()
                             if n.startswith("param/")})
    model.eval()
    return model, cfg, header, LatentNormalizer.from_state_arrays(arrays)


def _rewrite_log_prefix(path: str, upto_step: int) -> list[str]:
    """Keep only header + rows for steps <= upto_step; returns kept lines."""
    if not os.path.exists(path):
        return ["step,loss"]
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    kept = [ln for ln in lines
            if ln == "step,loss" or int(ln.split(",")[0]) <= upto_step]
    if not kept or kept[0] != "step,loss":
        kept.insert(0, "step,loss")
    return kept


def train(cfg: RunConfig, checkpoint_path: str,
          log_path: str | None = None, resume: bool = False) -> dict:
    """Train the configured stage; writes a checkpoint and a CSV loss log."""
    cfg.validate()
    split = load_split(cfg.data_dir)
    dirs = [os.path.join(cfg.data_dir, n) for n in split["train"]]
    examples = StageExamples(cfg, dirs)
    model = build_model(cfg)
    model.train()
    opt = MomentOptimizer(model, cfg.step_size)

    start_step = 0
    if resume and os.path.exists(checkpoint_path):
        header, arrays = read_stage_checkpoint(checkpoint_path)
        if header["resume_hash"] != cfg.resume_hash():
            raise ParameterError(
                "checkpoint was trained with a different config "
                f"(stage {header['stage']!r}); refusing to resume")
        model.load_state_arrays({n[len("param/"):]: a for n, a in arrays.items()
                                 if n.startswith("param/")})
        opt.load_state_arrays(arrays)
        start_step = int(header["step"])

    log_path = log_path or checkpoint_path + ".loss.csv"
    prefix = _rewrite_log_prefix(log_path, start_step) if resume else ["step,loss"]

    sched = make_schedule(cfg.num_timesteps, cfg.beta_start, cfg.beta_end)
    ab = np.array([sched.alpha_bar(t) for t in range(cfg.num_timesteps + 1)])
    sqrt_ab = torch.from_numpy(np.sqrt(ab).astype(np.float32))
    sqrt_1mab = torch.from_numpy(np.sqrt(1.0 - ab).astype(np.float32))

    last_loss = None
    batch_shape = (cfg.batch_size,) + tuple(examples.x0.shape[1:])
    with open(log_path, "w") as log:
        log.write("\n".join(prefix) + "\n")
        for step in range(start_step + 1, cfg.train_steps + 1):
            rng = np.random.default_rng([cfg.seed, step])
            idx = rng.integers(0, len(examples), cfg.batch_size)
            t = rng.integers(1, cfg.num_timesteps + 1, cfg.batch_size)
            eps = torch.from_numpy(rng.standard_normal(batch_shape, dtype=np.float32))
            loss = batch_loss(model, examples, idx, t, eps, sqrt_ab, sqrt_1mab)
            last_loss = float(loss.detach())
            log.write(f"{step},{last_loss!r}\n")
            if not math.isfinite(last_loss):
                raise TrainingDivergedError(
                    f"stage {cfg.stage}: non-finite loss {last_loss} at step {step} "
                    f"(step_size {cfg.step_size})")
            model.zero_grad(set_to_none=True)
            loss.backward()
            opt.step(step)
            if cfg.checkpoint_every and step % cfg.checkpoint_every == 0:
                log.flush()
                write_stage_checkpoint(checkpoint_path, cfg, model, opt,
                                       examples.norm, step)

    write_stage_checkpoint(checkpoint_path, cfg, model, opt, examples.norm,
                           max(start_step, cfg.train_steps))
    return {"stage": cfg.stage, "steps": max(start_step, cfg.train_steps),
            "final_loss": last_loss, "checkpoint": checkpoint_path,
            "log": log_path}
