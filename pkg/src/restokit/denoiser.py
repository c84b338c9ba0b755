"""Trainable residual predictor: a small time-conditioned encoder-decoder.

The network sees the channel concatenation of the diffused image I_t and
the degraded input I_LQ (6 channels) plus an additive sinusoidal time
embedding, and predicts the residual I_LQ - I_HQ.  Parameter init is
driven by a numpy generator so identical (config, seed) pairs produce
identical weights on any platform.
"""

import math
from dataclasses import asdict, dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import checkpoint


def time_embedding(t: int, dim: int) -> np.ndarray:
    """Sinusoidal timestep embedding: interleaved sin/cos at geometrically
    spaced frequencies from 1 down to 1e-4."""
    if dim % 2 != 0:
        raise ValueError(f"embedding dim must be even, got {dim}")
    half = dim // 2
    if half == 1:
        freqs = np.array([1.0])
    else:
        freqs = 10000.0 ** (-np.arange(half, dtype=np.float64) / (half - 1))
    ang = float(t) * freqs
    emb = np.empty(dim, dtype=np.float64)
    emb[0::2] = np.sin(ang)
    emb[1::2] = np.cos(ang)
    return emb


@dataclass(frozen=True)
class DenoiserConfig:
    base_channels: int = 16
    depth: int = 2
    time_embed_dim: int = 32

    def __post_init__(self):
        if self.base_channels < 1 or self.depth < 1 or self.time_embed_dim < 1:
            raise ValueError(f"all DenoiserConfig fields must be positive: {self}")
        if self.depth > 4:
            raise ValueError(f"depth must be <= 4, got {self.depth}")
        if self.time_embed_dim % 2 != 0:
            raise ValueError(f"time_embed_dim must be even, got {self.time_embed_dim}")


def _groups(channels: int) -> int:
    for g in (8, 4, 2):
        if channels % g == 0:
            return g
    return 1


class _TimeEmbed(nn.Module):
    """Batched version of :func:`time_embedding` plus a learned projection."""

    def __init__(self, dim: int):
        super().__init__()
        half = dim // 2
        if half == 1:
            freqs = torch.ones(1)
        else:
            freqs = 10000.0 ** (-torch.arange(half, dtype=torch.float64) / (half - 1))
        self.register_buffer("freqs", freqs)
        self.proj = nn.Linear(dim, dim)

    def forward(self, t: torch.Tensor) -> torch.Tensor:
        ang = t[:, None].double() * self.freqs[None, :]
        emb = torch.empty(t.shape[0], 2 * self.freqs.shape[0], dtype=torch.float64, device=t.device)
        emb[:, 0::2] = torch.sin(ang)
        emb[:, 1::2] = torch.cos(ang)
        return F.silu(self.proj(emb.to(self.proj.weight.dtype)))


class _ConvBlock(nn.Module):
    def __init__(self, c_in: int, c_out: int, time_dim: int):
        super().__init__()
        self.conv1 = nn.Conv2d(c_in, c_out, 3, padding=1)
        self.norm1 = nn.GroupNorm(_groups(c_out), c_out)
        self.conv2 = nn.Conv2d(c_out, c_out, 3, padding=1)
        self.norm2 = nn.GroupNorm(_groups(c_out), c_out)
        self.time_bias = nn.Linear(time_dim, c_out)

    def forward(self, x, temb):
        h = F.silu(self.norm1(self.conv1(x)))
        h = h + self.time_bias(temb)[:, :, None, None]
        return F.silu(self.norm2(self.conv2(h)))


class ResidualUNet(nn.Module):
    """Encoder-decoder with skip connections over 6 input channels."""

    def __init__(self, config: DenoiserConfig):
        super().__init__()
        self.config = config
        tdim = config.time_embed_dim
        chs = [config.base_channels * 2**i for i in range(config.depth + 1)]
        self.time = _TimeEmbed(tdim)
        self.stem = nn.Conv2d(6, chs[0], 3, padding=1)
        self.enc = nn.ModuleList(
            _ConvBlock(chs[i], chs[i + 1], tdim) for i in range(config.depth)
        )
        self.mid = _ConvBlock(chs[-1], chs[-1], tdim)
        self.dec = nn.ModuleList(
            _ConvBlock(chs[i + 1] * 2, chs[i], tdim) for i in reversed(range(config.depth))
        )
        self.head = nn.Conv2d(chs[0], 3, 3, padding=1)

    def forward(self, x: torch.Tensor, t: torch.Tensor) -> torch.Tensor:
        temb = self.time(t)
        h = self.stem(x)
        skips = []
        for block in self.enc:
            h = block(h, temb)
            skips.append(h)
            h = F.avg_pool2d(h, 2)
        h = self.mid(h, temb)
        for block in self.dec:
            h = F.interpolate(h, scale_factor=2, mode="nearest")
            h = block(torch.cat([h, skips.pop()], dim=1), temb)
        return self.head(h)


def seeded_init_(net: nn.Module, seed: int) -> None:
    """Deterministic parameter init from a numpy generator.

    Conv/linear weights and biases draw from U(-1/sqrt(fan_in), +...);
    norm layers get weight 1 / bias 0; any parameter named ``head.*`` is
    zeroed so the initial prediction is exactly zero.
    """
    rng = np.random.default_rng(np.random.SeedSequence(seed))
    with torch.no_grad():
        for name, param in net.named_parameters():
            if name.startswith("head."):
                param.zero_()
            elif "norm" in name:
                param.fill_(1.0 if name.endswith("weight") else 0.0)
            elif param.dim() >= 2:
                fan_in = int(np.prod(param.shape[1:]))
                bound = 1.0 / math.sqrt(fan_in)
                param.copy_(torch.from_numpy(rng.uniform(-bound, bound, tuple(param.shape))))
            else:
                bound = 1.0 / math.sqrt(max(param.shape[0], 1))
                param.copy_(torch.from_numpy(rng.uniform(-bound, bound, tuple(param.shape))))


def to_nchw(*images) -> torch.Tensor:
    """Stack HxWx3 float images into a (1, 3*len, H, W) float32 tensor."""
    planes = [np.asarray(im, dtype=np.float32).transpose(2, 0, 1) for im in images]
    return torch.from_numpy(np.concatenate(planes, axis=0)[None])


class ResidualDenoiser:
    """Evaluation/serialization wrapper around :class:`ResidualUNet`."""

    kind = "generalist"

    def __init__(self, config: DenoiserConfig, net: ResidualUNet):
        self.config = config
        self.net = net

    @property
    def param_count(self) -> int:
        return sum(p.numel() for p in self.net.parameters())

    def predict(self, i_t, i_lq, t: int) -> np.ndarray:
        """Predicted residual for one image, evaluation mode.

        Inputs are padded (reflect) to a multiple of 2**depth and the
        output cropped back, so any reasonable tile size works.
        """
        h, w = np.shape(i_t)[:2]
        mult = 2**self.config.depth
        ph, pw = (-h) % mult, (-w) % mult
        x = to_nchw(i_t, i_lq)
        if ph or pw:
            x = F.pad(x, (0, pw, 0, ph), mode="reflect")
        self.net.eval()
        with torch.no_grad():
            out = self.net(x, torch.tensor([float(t)]))
        return out[0, :, :h, :w].numpy().transpose(1, 2, 0).astype(np.float64)

    def named_arrays(self) -> dict:
        return {k: v.detach().numpy() for k, v in self.net.state_dict().items()}

    def load_arrays(self, arrays: dict) -> None:
        state = {k: torch.from_numpy(np.asarray(v, dtype=np.float32)) for k, v in arrays.items()}
        self.net.load_state_dict(state)


def build_denoiser(config: DenoiserConfig, seed: int) -> ResidualDenoiser:
    net = ResidualUNet(config)
    net = net.float()
    seeded_init_(net, seed)
    net.eval()
    return ResidualDenoiser(config, net)


def save_checkpoint(denoiser: ResidualDenoiser, meta: dict) -> bytes:
    """Serialize parameters plus run metadata; see :mod:`restokit.checkpoint`."""
    checkpoint.require_meta(meta)
    meta = dict(meta)
    meta["model"] = {"kind": denoiser.kind, **asdict(denoiser.config)}
    return checkpoint.pack(denoiser.named_arrays(), meta)


def load_checkpoint(data: bytes) -> tuple[ResidualDenoiser, dict]:
    arrays, meta = checkpoint.unpack(data)
    model = meta.get("model", {})
    if model.get("kind") != "generalist":
        raise checkpoint.CheckpointError(
            f"checkpoint holds a {model.get('kind')!r} model, not a generalist denoiser"
        )
    config = DenoiserConfig(
        base_channels=model["base_channels"],
        depth=model["depth"],
        time_embed_dim=model["time_embed_dim"],
    )
    denoiser = ResidualDenoiser(config, ResidualUNet(config).float())
    denoiser.load_arrays(arrays)
    denoiser.net.eval()
    return denoiser, meta
