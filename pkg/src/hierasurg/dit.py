"""Transformer denoiser with two conditioning pathways.

The s2m variant predicts noise on dense segmentation-map latents from a
channel-concatenated input plus per-frame phase/triplet embeddings; the
m2v variant predicts noise on video latents while fusing a stream of
segmentation-map tokens through joint attention in every block.
"""

from __future__ import annotations

import math
import zlib
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .errors import NumericError, ParameterError, ShapeError, VocabularyError


# --------------------------------------------------------------- configs

@dataclass(frozen=True)
class DiTConfig:
    mode: str
    embed_dim: int = 64
    num_blocks: int = 4
    num_heads: int = 4
    token_patch: int = 2
    cond_dim: int = 64

    def __post_init__(self) -> None:
        if self.mode not in ("s2m", "m2v"):
            raise ParameterError(f"mode must be s2m or m2v, got {self.mode!r}")
        for name in ("embed_dim", "num_blocks", "num_heads", "token_patch", "cond_dim"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be >= 1")
        if self.embed_dim % self.num_heads:
            raise ParameterError(
                f"embed_dim {self.embed_dim} not divisible by num_heads {self.num_heads}")

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.num_heads


@dataclass(frozen=True)
class ConditioningBundle:
    """Per-frame phase and triplet ids; id 0 means "no triplet"."""

    phases: np.ndarray
    triplets: np.ndarray
    provider: str = "label_embedding"

    def __post_init__(self) -> None:
        object.__setattr__(self, "phases", np.asarray(self.phases, dtype=np.int64))
        object.__setattr__(self, "triplets", np.asarray(self.triplets, dtype=np.int64))
        if self.phases.shape != self.triplets.shape or self.phases.ndim != 1:
            raise ShapeError(
                f"phases {self.phases.shape} and triplets {self.triplets.shape} disagree")
        if self.provider not in ("label_embedding", "pretrained_table"):
            raise ParameterError(f"unknown provider {self.provider!r}")
        if len(self.phases) < 1:
            raise ShapeError("conditioning needs at least one frame")
        if self.phases.min() < 0 or self.triplets.min() < 0:
            raise VocabularyError("negative conditioning ids")


@dataclass
class SegTokens:
    """Flattened segmentation-map tokens with their source frame indices."""

    tokens: torch.Tensor          # (T_seg, embed) or (B, T_seg, embed)
    frame_index: np.ndarray       # (T_seg,)

    def __post_init__(self) -> None:
        self.frame_index = np.asarray(self.frame_index, dtype=np.int64)
        if self.tokens.shape[-2] != len(self.frame_index):
            raise ShapeError(
                f"{self.tokens.shape[-2]} tokens vs {len(self.frame_index)} frame indices")
        if not bool(torch.isfinite(self.tokens).all()):
            raise NumericError("non-finite segmentation tokens")


# ----------------------------------------------------------- embeddings

def sinusoidal_table(positions: torch.Tensor, dim: int) -> torch.Tensor:
    """Rows of [sin(p/10000^{2i/dim}) ; cos(p/10000^{2i/dim})]."""
    if dim % 2:
        raise ParameterError(f"embedding dim must be even, got {dim}")
    positions = positions.to(torch.float64)
    i = torch.arange(dim // 2, dtype=torch.float64)
    ang = positions[:, None] * 10000.0 ** (-2.0 * i / dim)[None, :]
    return torch.cat([torch.sin(ang), torch.cos(ang)], dim=-1)


def sinusoidal_embed(position: int, dim: int) -> torch.Tensor:
    return sinusoidal_table(torch.tensor([float(position)]), dim)[0]


def pretrained_label_table(names: list[str], dim: int, seed: int = 0) -> np.ndarray:
    """Frozen per-label vectors derived from the label text via a seeded
    hash projection; a deterministic stand-in for a text encoder."""
    rows = []
    for name in names:
        rng = np.random.default_rng([seed, zlib.crc32(name.encode())])
        rows.append(rng.normal(0.0, dim ** -0.5, size=dim))
    return np.stack(rows)


# ------------------------------------------------------- input assembly

def _as_latent(z, name: str) -> np.ndarray | torch.Tensor:
    if isinstance(z, torch.Tensor):
        if z.ndim != 4:
            raise ShapeError(f"{name} must be (F, H', W', d), got shape {tuple(z.shape)}")
        return z
    z = np.asarray(z)
    if z.ndim != 4:
        raise ShapeError(f"{name} must be (F, H', W', d), got shape {z.shape}")
    return z


def _repeat_concat(z, conds: list, names: list[str]):
    z = _as_latent(z, "z")
    torch_mode = isinstance(z, torch.Tensor)
    parts = [z]
    for cond, name in zip(conds, names):
        c = _as_latent(cond, name)
        if c.shape[0] != 1:
            raise ShapeError(f"{name} must have exactly 1 frame, got {c.shape[0]}")
        if c.shape[1:] != z.shape[1:]:
            raise ShapeError(
                f"{name} spatial/channel shape {tuple(c.shape[1:])} "
                f"does not match z {tuple(z.shape[1:])}")
        if torch_mode:
            parts.append(c.expand(z.shape[0], -1, -1, -1))
        else:
            parts.append(np.repeat(c, z.shape[0], axis=0))
    if torch_mode:
        return torch.cat(parts, dim=-1)
    return np.concatenate(parts, axis=-1)


def assemble_s2m_input(z, z_y_seg, z_y):
    """[z ; z_y_seg repeated ; z_y repeated] on the channel axis -> 3d channels."""
    return _repeat_concat(z, [z_y_seg, z_y], ["z_y_seg", "z_y"])


def assemble_m2v_input(z, z_first):
    """[z ; first-frame latent repeated] on the channel axis -> 2d channels."""
    return _repeat_concat(z, [z_first], ["z_first"])


# ------------------------------------------------- conditioning encoder

class PhaseTripletEncoder(nn.Module):
    """Embeds per-frame phase/triplet ids, convolves each stream over time
    (kernel 3, replicate same-padding), pools, and projects to cond_dim."""

    def __init__(self, phase_vocab: int, triplet_vocab: int, cond_dim: int,
                 provider: str = "label_embedding",
                 phase_names: list[str] | None = None,
                 triplet_names: list[str] | None = None,
                 table_seed: int = 0):
        super().__init__()
        if provider not in ("label_embedding", "pretrained_table"):
            raise ParameterError(f"unknown provider {provider!r}")
        self.phase_vocab = phase_vocab
        self.triplet_vocab = triplet_vocab
        self.provider = provider
        self.phase_table = nn.Embedding(phase_vocab, cond_dim)
        self.triplet_table = nn.Embedding(triplet_vocab, cond_dim)
        if provider == "pretrained_table":
            phase_names = phase_names or [f"phase{i}" for i in range(phase_vocab)]
            triplet_names = triplet_names or [f"triplet{i}" for i in range(triplet_vocab)]
            if len(phase_names) != phase_vocab or len(triplet_names) != triplet_vocab:
                raise ParameterError("label name lists must cover the vocabularies")
            with torch.no_grad():
                self.phase_table.weight.copy_(torch.from_numpy(
                    pretrained_label_table(phase_names, cond_dim, table_seed)))
                self.triplet_table.weight.copy_(torch.from_numpy(
                    pretrained_label_table(triplet_names, cond_dim, table_seed)))
            self.phase_table.weight.requires_grad_(False)
            self.triplet_table.weight.requires_grad_(False)
        self.phase_conv = nn.Conv1d(cond_dim, cond_dim, 3, padding=1,
                                    padding_mode="replicate")
        self.triplet_conv = nn.Conv1d(cond_dim, cond_dim, 3, padding=1,
                                      padding_mode="replicate")
        self.proj = nn.Linear(2 * cond_dim, cond_dim)

    def _check_ids(self, ids: torch.Tensor, vocab: int, what: str) -> None:
        if ids.numel() and (int(ids.min()) < 0 or int(ids.max()) >= vocab):
            raise VocabularyError(
                f"{what} ids must lie in [0, {vocab}), got range "
                f"[{int(ids.min())}, {int(ids.max())}]")

    def forward(self, phases: torch.Tensor, triplets: torch.Tensor) -> torch.Tensor:
        squeeze = phases.ndim == 1
        if squeeze:
            phases, triplets = phases[None], triplets[None]
        if phases.shape != triplets.shape:
            raise ShapeError(f"phases {tuple(phases.shape)} vs triplets "
                             f"{tuple(triplets.shape)}")
        self._check_ids(phases, self.phase_vocab, "phase")
        self._check_ids(triplets, self.triplet_vocab, "triplet")
        dtype = self.proj.weight.dtype
        p = self.phase_table(phases).to(dtype).transpose(1, 2)      # (B, E, F)
        tr = self.triplet_table(triplets).to(dtype).transpose(1, 2)
        p = self.phase_conv(p).mean(dim=2)
        tr = self.triplet_conv(tr).mean(dim=2)
        out = self.proj(torch.cat([p, tr], dim=1))
        return out[0] if squeeze else out

    def encode_bundle(self, bundle: ConditioningBundle) -> torch.Tensor:
        return self.forward(torch.from_numpy(bundle.phases),
                            torch.from_numpy(bundle.triplets))


# --------------------------------------------------- seg-map tokenizer

class _FrameGroupNorm(nn.Module):
    """GroupNorm with statistics per frame, so normalizing one frame never
    reads another; keeps the encoder temporally local."""

    def __init__(self, groups: int, channels: int):
        super().__init__()
        self.norm = nn.GroupNorm(groups, channels)

    def forward(self, x: torch.Tensor) -> torch.Tensor:  # (B, C, F, H, W)
        B, C, F, H, W = x.shape
        y = self.norm(x.transpose(1, 2).reshape(B * F, C, H, W))
        return y.reshape(B, F, C, H, W).transpose(1, 2)


class _ResidualDown(nn.Module):
    """3D residual block with spatial stride 2 and temporal stride 1."""

    def __init__(self, cin: int, cout: int):
        super().__init__()
        groups = math.gcd(4, cout)
        self.conv1 = nn.Conv3d(cin, cout, 3, stride=(1, 2, 2), padding=1)
        self.norm1 = _FrameGroupNorm(groups, cout)
        self.conv2 = nn.Conv3d(cout, cout, 3, padding=1)
        self.norm2 = _FrameGroupNorm(groups, cout)
        self.skip = nn.Conv3d(cin, cout, 1, stride=(1, 2, 2))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        h = torch.nn.functional.silu(self.norm1(self.conv1(x)))
        h = self.norm2(self.conv2(h))
        return torch.nn.functional.silu(self.skip(x) + h)


def _scale_index(idx: np.ndarray, src: int, dst: int) -> np.ndarray:
    if src <= 1:
        return np.zeros_like(idx)
    return np.round(idx * (dst - 1) / (src - 1)).astype(np.int64)


def _joint_positions(frame_index: np.ndarray, rows_seg: int, cols_seg: int,
                     rows: int, cols: int) -> np.ndarray:
    """Flat latent-raster index of the video token each seg token covers."""
    cell = (_scale_index(np.repeat(np.arange(rows_seg), cols_seg), rows_seg, rows) * cols
            + _scale_index(np.tile(np.arange(cols_seg), rows_seg), cols_seg, cols))
    n_frames = len(frame_index) // (rows_seg * cols_seg)
    return frame_index * (rows * cols) + np.tile(cell, n_frames)


def _seg_positions(f_seg: int, target_frames: int | None) -> np.ndarray:
    """Map seg-frame indices onto the video timeline when F_seg < F."""
    if target_frames is None or target_frames == f_seg or f_seg == 1:
        return np.arange(f_seg, dtype=np.int64) if target_frames in (None, f_seg) \
            else np.zeros(f_seg, dtype=np.int64)
    return np.round(np.arange(f_seg) * (target_frames - 1) / (f_seg - 1)).astype(np.int64)


class SegMapEncoder(nn.Module):
    """Three stride-2 residual 3D blocks (channels 32 -> 64 -> embed_dim),
    temporal stride 1, plus temporal sinusoidal embeddings per token."""

    def __init__(self, embed_dim: int):
        super().__init__()
        self.embed_dim = embed_dim
        self.blocks = nn.ModuleList([
            _ResidualDown(3, 32),
            _ResidualDown(32, 64),
            _ResidualDown(64, embed_dim),
        ])

    def forward(self, seg_color: torch.Tensor,
                target_frames: int | None = None) -> tuple[torch.Tensor, np.ndarray]:
        squeeze = seg_color.ndim == 4
        if squeeze:
            seg_color = seg_color[None]
        if seg_color.ndim != 5 or seg_color.shape[-1] != 3:
            raise ShapeError(f"expected (F, H, W, 3) maps, got {tuple(seg_color.shape)}")
        B, F, H, W, _ = seg_color.shape
        if H % 8 or W % 8:
            raise ShapeError(f"H={H}, W={W} must be divisible by 8")
        x = seg_color.permute(0, 4, 1, 2, 3)
        for blk in self.blocks:
            x = blk(x)
        x = x.permute(0, 2, 3, 4, 1)                     # (B, F, H/8, W/8, E)
        positions = _seg_positions(F, target_frames)
        pos = sinusoidal_table(torch.from_numpy(positions), self.embed_dim)
        x = x + pos.to(x.dtype)[None, :, None, None, :]
        tokens = x.reshape(B, F * (H // 8) * (W // 8), self.embed_dim)
        frame_index = np.repeat(positions, (H // 8) * (W // 8))
        return (tokens[0] if squeeze else tokens), frame_index

    def encode(self, seg_color: torch.Tensor,
               target_frames: int | None = None) -> SegTokens:
        tokens, frame_index = self.forward(seg_color, target_frames)
        return SegTokens(tokens, frame_index)


# -------------------------------------------------------- joint attention

class JointAttention(nn.Module):
    """Multi-head attention over the concatenation of two token streams,
    with one shared set of Q/K/V/O projections, split back at T."""

    def __init__(self, embed_dim: int, num_heads: int):
        super().__init__()
        if embed_dim % num_heads:
            raise ParameterError(
                f"embed_dim {embed_dim} not divisible by num_heads {num_heads}")
        self.num_heads = num_heads
        self.head_dim = embed_dim // num_heads
        self.w_q = nn.Linear(embed_dim, embed_dim)
        self.w_k = nn.Linear(embed_dim, embed_dim)
        self.w_v = nn.Linear(embed_dim, embed_dim)
        self.w_o = nn.Linear(embed_dim, embed_dim)

    def forward(self, h: torch.Tensor, h_seg: torch.Tensor | None = None,
                need_weights: bool = False):
        squeeze = h.ndim == 2
        if squeeze:
            h = h[None]
            h_seg = h_seg[None] if h_seg is not None else None
        T = h.shape[1]
        if h_seg is not None and h_seg.shape[1] > 0:
            if h_seg.shape[-1] != h.shape[-1]:
                raise ShapeError(f"stream widths differ: {h.shape[-1]} vs {h_seg.shape[-1]}")
            cat = torch.cat([h, h_seg], dim=1)
        else:
            cat = h
            h_seg = None
        B, T_tot, E = cat.shape

        def heads(x):
            return x.reshape(B, T_tot, self.num_heads, self.head_dim).transpose(1, 2)

        q, k, v = heads(self.w_q(cat)), heads(self.w_k(cat)), heads(self.w_v(cat))
        att = torch.softmax(q @ k.transpose(-2, -1) / math.sqrt(self.head_dim), dim=-1)
        z = (att @ v).transpose(1, 2).reshape(B, T_tot, E)
        z = self.w_o(z)
        out, out_seg = z[:, :T], (z[:, T:] if h_seg is not None else None)
        if squeeze:
            out = out[0]
            out_seg = out_seg[0] if out_seg is not None else None
            att = att[0]
        if need_weights:
            return out, out_seg, att
        return out, out_seg


# -------------------------------------------------------------- blocks

def _modulate(x: torch.Tensor, shift: torch.Tensor, scale: torch.Tensor) -> torch.Tensor:
    return x * (1 + scale[:, None, :]) + shift[:, None, :]


class DiTBlock(nn.Module):
    def __init__(self, embed_dim: int, num_heads: int, mlp_ratio: int = 4):
        super().__init__()
        self.norm1 = nn.LayerNorm(embed_dim, elementwise_affine=False)
        self.attn = JointAttention(embed_dim, num_heads)
        self.norm_seg = nn.LayerNorm(embed_dim, elementwise_affine=False)
        self.norm2 = nn.LayerNorm(embed_dim, elementwise_affine=False)
        self.mlp = nn.Sequential(
            nn.Linear(embed_dim, mlp_ratio * embed_dim),
            nn.GELU(),
            nn.Linear(mlp_ratio * embed_dim, embed_dim),
        )
        # zero-init: blocks start as the identity map
        self.modulation = nn.Linear(embed_dim, 6 * embed_dim)
        nn.init.zeros_(self.modulation.weight)
        nn.init.zeros_(self.modulation.bias)

    def forward(self, x: torch.Tensor, c: torch.Tensor,
                seg: torch.Tensor | None = None):
        sh1, sc1, g1, sh2, sc2, g2 = self.modulation(
            torch.nn.functional.silu(c)).chunk(6, dim=-1)
        h = _modulate(self.norm1(x), sh1, sc1)
        if seg is not None:
            a, a_seg = self.attn(h, self.norm_seg(seg))
            seg = seg + a_seg
        else:
            a, _ = self.attn(h)
        x = x + g1[:, None, :] * a
        x = x + g2[:, None, :] * self.mlp(_modulate(self.norm2(x), sh2, sc2))
        return x, seg


class DiT(nn.Module):
    """Latent-token denoiser; predicts the noise content of z_in's first
    latent_dim channels, conditioned per mode."""

    CHANNEL_FACTOR = {"s2m": 3, "m2v": 2}

    def __init__(self, config: DiTConfig, latent_dim: int,
                 phase_vocab: int = 7, triplet_vocab: int = 20,
                 provider: str = "label_embedding",
                 phase_names: list[str] | None = None,
                 triplet_names: list[str] | None = None,
                 seed: int = 0):
        super().__init__()
        if latent_dim < 1:
            raise ParameterError(f"latent_dim must be >= 1, got {latent_dim}")
        self.config = config
        self.latent_dim = latent_dim
        self.phase_vocab = phase_vocab
        self.triplet_vocab = triplet_vocab
        self.seed = seed
        E, p = config.embed_dim, config.token_patch
        c_in = latent_dim * self.CHANNEL_FACTOR[config.mode]
        self.patch_embed = nn.Linear(p * p * c_in, E)
        self.t_mlp = nn.Sequential(nn.Linear(E, E), nn.SiLU(), nn.Linear(E, E))
        if config.mode == "s2m":
            self.cond_encoder = PhaseTripletEncoder(
                phase_vocab, triplet_vocab, config.cond_dim, provider,
                phase_names, triplet_names, table_seed=seed)
            self.cond_proj = nn.Linear(config.cond_dim, E)
        else:
            self.seg_encoder = SegMapEncoder(E)
        self.blocks = nn.ModuleList(
            DiTBlock(E, config.num_heads) for _ in range(config.num_blocks))
        self.final_norm = nn.LayerNorm(E, elementwise_affine=False)
        self.final_modulation = nn.Linear(E, 2 * E)
        self.head = nn.Linear(E, p * p * latent_dim)
        self._seeded_init(seed)

    def _seeded_init(self, seed: int) -> None:
        """Deterministic parameter init; modulation layers and the output
        head stay at zero so the initial model predicts exactly zero."""
        zero = {n for n, _ in self.named_parameters()
                if "modulation" in n or n.startswith("head.")}
        gen = torch.Generator().manual_seed(seed & 0x7FFFFFFF)
        for name, par in sorted(self.named_parameters()):
            with torch.no_grad():
                if name in zero:
                    par.zero_()
                elif par.ndim >= 2:
                    fan_in = par.shape[1:].numel()
                    par.copy_(torch.randn(par.shape, generator=gen) * fan_in ** -0.5)
                elif name.endswith("weight"):
                    par.fill_(1.0)    # norm gains
                else:
                    par.zero_()

    def _tokenize(self, z_in: torch.Tensor) -> tuple[torch.Tensor, tuple]:
        B, F, Hp, Wp, C = z_in.shape
        p = self.config.token_patch
        want_c = self.latent_dim * self.CHANNEL_FACTOR[self.config.mode]
        if C != want_c:
            raise ShapeError(f"z_in has {C} channels, expected {want_c} "
                             f"for mode {self.config.mode}")
        if Hp % p or Wp % p:
            raise ShapeError(f"latent {Hp}x{Wp} not divisible by token_patch {p}")
        x = z_in.reshape(B, F, Hp // p, p, Wp // p, p, C)
        x = x.permute(0, 1, 2, 4, 3, 5, 6).reshape(
            B, F * (Hp // p) * (Wp // p), p * p * C)
        return x, (B, F, Hp, Wp)

    def _detokenize(self, tokens: torch.Tensor, dims: tuple) -> torch.Tensor:
        B, F, Hp, Wp = dims
        p, d = self.config.token_patch, self.latent_dim
        x = tokens.reshape(B, F, Hp // p, Wp // p, p, p, d)
        return x.permute(0, 1, 2, 4, 3, 5, 6).reshape(B, F, Hp, Wp, d)

    def forward(self, z_in: torch.Tensor, t,
                bundle: ConditioningBundle | list[ConditioningBundle] | None = None,
                seg_color: torch.Tensor | None = None,
                target_frames: int | None = None,
                zero_seg_tokens: bool = False) -> torch.Tensor:
        mode = self.config.mode
        if mode == "s2m":
            if seg_color is not None:
                raise ParameterError("s2m mode takes no segmentation stream")
            if zero_seg_tokens:
                raise ParameterError("s2m mode has no segmentation tokens to zero")
            if bundle is None:
                raise ParameterError("s2m mode requires a phase/triplet bundle")
        else:
            if bundle is not None:
                raise ParameterError("m2v mode takes no phase/triplet bundle")
            if seg_color is None:
                raise ParameterError("m2v mode requires segmentation maps")
        dtype = self.head.weight.dtype
        z_in = torch.as_tensor(z_in, dtype=dtype)
        squeeze = z_in.ndim == 4
        if squeeze:
            z_in = z_in[None]
        if z_in.ndim != 5:
            raise ShapeError(f"z_in must be (F, H', W', C), got {tuple(z_in.shape)}")
        x, dims = self._tokenize(z_in)
        B = dims[0]
        x = self.patch_embed(x)
        x = x + sinusoidal_table(torch.arange(x.shape[1]),
                                 self.config.embed_dim).to(dtype)[None]

        t_arr = torch.as_tensor(t, dtype=torch.float64).reshape(-1)
        if t_arr.numel() == 1:
            t_arr = t_arr.expand(B)
        c = self.t_mlp(sinusoidal_table(t_arr, self.config.embed_dim).to(dtype))
        seg = None
        if mode == "s2m":
            if isinstance(bundle, ConditioningBundle):
                phases = torch.from_numpy(bundle.phases)[None].expand(B, -1)
                triplets = torch.from_numpy(bundle.triplets)[None].expand(B, -1)
            else:
                phases = torch.from_numpy(np.stack([b.phases for b in bundle]))
                triplets = torch.from_numpy(np.stack([b.triplets for b in bundle]))
            c = c + self.cond_proj(self.cond_encoder(phases, triplets))
        else:
            seg_color = torch.as_tensor(seg_color, dtype=dtype)
            if seg_color.ndim == 4:
                seg_color = seg_color[None].expand(B, -1, -1, -1, -1)
            seg, fidx = self.seg_encoder(seg_color, target_frames)
            # appended tokens also take the backbone positional code of the
            # latent-raster cell they cover; without a shared spatial address
            # joint attention cannot learn where a map token applies
            p = self.config.token_patch
            flat = _joint_positions(fidx, seg_color.shape[2] // 8,
                                    seg_color.shape[3] // 8,
                                    dims[2] // p, dims[3] // p)
            seg = seg + sinusoidal_table(torch.from_numpy(flat),
                                         self.config.embed_dim).to(dtype)[None]
            if zero_seg_tokens:  # conditioning ablation: keep shapes, drop signal
                seg = torch.zeros_like(seg)
        for blk in self.blocks:
            x, seg = blk(x, c, seg)
        x = _modulate(self.final_norm(x),
                      *self.final_modulation(torch.nn.functional.silu(c)).chunk(2, dim=-1))
        out = self._detokenize(self.head(x), dims)
        return out[0] if squeeze else out

    # ------------------------------------------------------- checkpoints

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: par.detach().cpu().numpy().astype(np.float32)
                for name, par in self.named_parameters()}

    def load_state_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        names = {n for n, _ in self.named_parameters()}
        if names != set(arrays):
            missing = sorted(names - set(arrays))
            extra = sorted(set(arrays) - names)
            raise ParameterError(
                f"checkpoint mismatch; missing {missing}, unexpected {extra}")
        for name, par in self.named_parameters():
            arr = arrays[name]
            if tuple(arr.shape) != tuple(par.shape):
                raise ShapeError(f"{name}: checkpoint shape {arr.shape} "
                                 f"vs model {tuple(par.shape)}")
            with torch.no_grad():
                par.copy_(torch.from_numpy(arr.copy()).to(par.dtype))
