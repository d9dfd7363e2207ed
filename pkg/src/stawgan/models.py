"""Networks: dual-flow generator, shape controller, contrast network, discriminators."""

from __future__ import annotations

import hashlib
import json
import math
import os
import tempfile
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import NamedTuple

import torch
import torch.nn as nn
import torch.nn.functional as F
from torch.nn.utils.parametrizations import spectral_norm

from .errors import ConfigurationError, ShapeError

CHECKPOINT_SCHEMA = "stawgan-checkpoint/1"
N_DOMAINS = 2


@dataclass
class ModelConfig:
    image_size: int = 256
    n_domains: int = N_DOMAINS
    g_channels: int = 64
    g_down: int = 2
    g_shared: int = 4
    s_channels: int = 32
    s_down: int = 2
    c_channels: int = 16
    c_hidden: int = 64
    d_channels: int = 64
    # None picks log2(image_size) - 2 blocks, leaving a 4x4 critic map
    d_blocks: int | None = None
    d_max_channels: int = 512
    sn_power_iterations: int = 1
    leaky_slope: float = 0.2

    def __post_init__(self):
        if self.image_size % (2 ** max(self.g_down, self.s_down)) != 0:
            raise ConfigurationError(
                f"image_size {self.image_size} is not divisible by the downsampling factor"
            )
        if self.image_size % 16 != 0:
            raise ConfigurationError("image_size must be a multiple of 16 for the contrast network")
        if self.discriminator_blocks < 1 or self.image_size % (2**self.discriminator_blocks) != 0:
            raise ConfigurationError(f"invalid discriminator depth {self.d_blocks} for size {self.image_size}")

    @property
    def discriminator_blocks(self) -> int:
        if self.d_blocks is not None:
            return self.d_blocks
        return max(1, int(math.log2(self.image_size)) - 2)

    @classmethod
    def toy(cls, image_size: int = 64) -> "ModelConfig":
        """Small widths for CPU-scale runs."""
        return cls(image_size=image_size, g_channels=16, g_shared=3, s_channels=8, c_channels=8,
                   c_hidden=32, d_channels=16)


def domain_code(domains, n_domains: int = N_DOMAINS, device=None) -> torch.Tensor:
    """One-hot target-modality vectors from domain indices (or validate given one-hots)."""
    if not torch.is_tensor(domains):
        domains = torch.as_tensor(domains, device=device)
    if domains.dim() == 2:
        ok = (domains.shape[1] == n_domains and bool(((domains == 0) | (domains == 1)).all())
              and bool((domains.sum(1) == 1).all()))
        if not ok:
            raise ValueError("domain code must be a valid one-hot matrix")
        return domains.float()
    domains = domains.long().reshape(-1)
    if domains.numel() and (domains.min() < 0 or domains.max() >= n_domains):
        raise ValueError(f"domain index outside [0, {n_domains})")
    return F.one_hot(domains, n_domains).float()


def init_weights(module: nn.Module) -> None:
    if isinstance(module, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
        nn.init.normal_(module.weight, 0.0, 0.02)
        if module.bias is not None:
            nn.init.zeros_(module.bias)
    elif isinstance(module, nn.InstanceNorm2d) and module.affine:
        nn.init.ones_(module.weight)
        nn.init.zeros_(module.bias)


class ConvBlock(nn.Sequential):
    """conv -> instance norm -> leaky ReLU"""

    def __init__(self, cin, cout, kernel=3, stride=1, padding=1, slope=0.2):
        super().__init__(
            nn.Conv2d(cin, cout, kernel, stride, padding, bias=False),
            nn.InstanceNorm2d(cout, affine=True),
            nn.LeakyReLU(slope),
        )


class UpBlock(nn.Sequential):
    """bilinear x2 interpolation followed by a ConvBlock"""

    def __init__(self, cin, cout, slope=0.2):
        super().__init__(
            nn.Upsample(scale_factor=2, mode="bilinear", align_corners=False),
            ConvBlock(cin, cout, 3, 1, 1, slope),
        )


class SharedBlock(nn.Module):
    """Residual block shared by the image and target flows.

    Both flows are concatenated, fused by a 1x1 convolution, passed through a
    residual body and the result is added back to each flow.
    """

    def __init__(self, channels, slope=0.2):
        super().__init__()
        self.fuse = nn.Conv2d(2 * channels, channels, 1, bias=False)
        self.body = nn.Sequential(
            ConvBlock(channels, channels, 3, 1, 1, slope),
            nn.Conv2d(channels, channels, 3, 1, 1, bias=False),
            nn.InstanceNorm2d(channels, affine=True),
        )

    def forward(self, hx, hr):
        shared = self.body(self.fuse(torch.cat([hx, hr], dim=1)))
        return hx + shared, hr + shared


class _Encoder(nn.Sequential):
    def __init__(self, cin, width, n_down, slope):
        layers = [ConvBlock(cin, width, 7, 1, 3, slope)]
        for i in range(n_down):
            layers.append(ConvBlock(width * 2**i, width * 2 ** (i + 1), 4, 2, 1, slope))
        super().__init__(*layers)


class _Decoder(nn.Sequential):
    def __init__(self, width, cout, n_down, slope):
        layers = []
        for i in reversed(range(n_down)):
            layers.append(UpBlock(width * 2 ** (i + 1), width * 2**i, slope))
        layers += [nn.Conv2d(width, cout, 7, 1, 3), nn.Tanh()]
        super().__init__(*layers)


class TranslationOutput(NamedTuple):
    image: torch.Tensor  # x_t, Bx3xHxW
    target: torch.Tensor  # r_t, Bx1xHxW


class Generator(nn.Module):
    """G(x_s, r_s, t) -> (x_t, r_t).

    Two encoder/decoder flows, one for the whole image (3 channels) and one
    for the target image (1 channel), joined by ``SharedBlock`` layers at the
    bottleneck. The one-hot domain code is broadcast and concatenated to the
    inputs of both encoders. Single-channel (IR) images are replicated to three
    channels before the image flow.
    """

    image_channels = 3
    target_channels = 1

    def __init__(self, config: ModelConfig):
        super().__init__()
        c, slope, nd = config.g_channels, config.leaky_slope, config.n_domains
        self.n_domains = nd
        self.factor = 2**config.g_down
        self.enc_x = _Encoder(self.image_channels + nd, c, config.g_down, slope)
        self.enc_r = _Encoder(self.target_channels + nd, c, config.g_down, slope)
        self.shared = nn.ModuleList(SharedBlock(c * self.factor, slope) for _ in range(config.g_shared))
        self.dec_x = _Decoder(c, self.image_channels, config.g_down, slope)
        self.dec_r = _Decoder(c, self.target_channels, config.g_down, slope)

    def forward(self, x, r, t) -> TranslationOutput:
        x = as_three_channels(x)
        if r.dim() != 4 or r.shape[1] != self.target_channels:
            raise ShapeError(f"target image must be Bx1xHxW, got {tuple(r.shape)}")
        if x.shape[0] != r.shape[0] or x.shape[2:] != r.shape[2:]:
            raise ShapeError(f"image {tuple(x.shape)} and target {tuple(r.shape)} disagree")
        h, w = x.shape[2:]
        if h % self.factor or w % self.factor:
            raise ShapeError(f"spatial size {h}x{w} not divisible by {self.factor}")
        code = domain_code(t, self.n_domains, device=x.device).to(x.dtype)
        if code.shape[0] != x.shape[0]:
            raise ShapeError(f"{code.shape[0]} domain codes for a batch of {x.shape[0]}")
        code_map = code[:, :, None, None].expand(-1, -1, h, w)
        hx = self.enc_x(torch.cat([x, code_map], 1))
        hr = self.enc_r(torch.cat([r, code_map], 1))
        for block in self.shared:
            hx, hr = block(hx, hr)
        return TranslationOutput(self.dec_x(hx), self.dec_r(hr))


def as_three_channels(x: torch.Tensor) -> torch.Tensor:
    if x.dim() != 4 or x.shape[1] not in (1, 3):
        raise ShapeError(f"image must be Bx1xHxW or Bx3xHxW, got {tuple(x.shape)}")
    return x.expand(-1, 3, -1, -1) if x.shape[1] == 1 else x


def seg_net(generator: Generator, x: torch.Tensor, t) -> torch.Tensor:
    """Segmentation read-out: target output of G fed with the image and its gray copy."""
    x = as_three_channels(x)
    return generator(x, x.mean(dim=1, keepdim=True), t).target


class ShapeController(nn.Module):
    """Foreground probability map of a generated target image."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        c, slope = config.s_channels, config.leaky_slope
        layers = [ConvBlock(1, c, 3, 1, 1, slope)]
        for i in range(config.s_down):
            layers.append(ConvBlock(c * 2**i, c * 2 ** (i + 1), 4, 2, 1, slope))
        for i in reversed(range(config.s_down)):
            layers += [
                nn.ConvTranspose2d(c * 2 ** (i + 1), c * 2**i, 4, 2, 1, bias=False),
                nn.InstanceNorm2d(c * 2**i, affine=True),
                nn.LeakyReLU(slope),
            ]
        layers += [nn.Conv2d(c, 1, 3, 1, 1), nn.Sigmoid()]
        self.net = nn.Sequential(*layers)

    def forward(self, r):
        return self.net(r)


@dataclass
class EnhancementFactors:
    contrast: float = 1.0
    sharpness: float = 0.0
    gamma: float = 1.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.contrast, self.sharpness, self.gamma)):
            raise ValueError("enhancement factors must be finite")
        if self.contrast <= 0 or self.gamma <= 0 or self.sharpness < 0:
            raise ValueError(f"invalid enhancement factors {self}")

    def as_tensor(self, batch: int = 1, dtype=torch.float32, device=None) -> torch.Tensor:
        row = torch.tensor([self.contrast, self.sharpness, self.gamma], dtype=dtype, device=device)
        return row.expand(batch, 3)


class ContrastNet(nn.Module):
    """Predicts (contrast, sharpness, gamma) for a translated image.

    conv -> max pool -> conv -> three fully connected layers. Raw outputs
    ``z`` map to factors as ``softplus(z)/ln 2``, ``relu(z)`` and
    ``softplus(z)/ln 2``, so ``z = 0`` gives the identity (1, 0, 1).
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        c, slope = config.c_channels, config.leaky_slope
        self.image_size = config.image_size
        spatial = config.image_size // 16
        self.features = nn.Sequential(
            nn.Conv2d(3, c, 3, 2, 1),
            nn.LeakyReLU(slope),
            nn.MaxPool2d(4),
            nn.Conv2d(c, c, 3, 2, 1),
            nn.LeakyReLU(slope),
        )
        self.head = nn.Sequential(
            nn.Flatten(),
            nn.Linear(c * spatial * spatial, config.c_hidden),
            nn.LeakyReLU(slope),
            nn.Linear(config.c_hidden, config.c_hidden // 2),
            nn.LeakyReLU(slope),
            nn.Linear(config.c_hidden // 2, 3),
        )

    def forward(self, x) -> torch.Tensor:
        x = as_three_channels(x)
        if tuple(x.shape[2:]) != (self.image_size, self.image_size):
            raise ShapeError(f"contrast network expects {self.image_size}x{self.image_size}, got {tuple(x.shape[2:])}")
        z = self.head(self.features(x))
        return factors_from_raw(z)


def factors_from_raw(z: torch.Tensor) -> torch.Tensor:
    unit = F.softplus(torch.zeros((), dtype=z.dtype, device=z.device))
    contrast = F.softplus(z[:, 0]) / unit
    sharpness = F.relu(z[:, 1])
    gamma = F.softplus(z[:, 2]) / unit
    return torch.stack([contrast, sharpness, gamma], dim=1)


def _box_blur3(u):
    c = u.shape[1]
    kernel = torch.full((c, 1, 3, 3), 1.0 / 9.0, dtype=u.dtype, device=u.device)
    return F.conv2d(F.pad(u, (1, 1, 1, 1), mode="replicate"), kernel, groups=c)


def apply_enhancement(x: torch.Tensor, factors) -> torch.Tensor:
    """Apply contrast, then gamma, then unsharp masking to a [-1, 1] image batch.

    ``factors`` is an ``EnhancementFactors`` or a Bx3 tensor of
    (contrast, sharpness, gamma).
    """
    if isinstance(factors, EnhancementFactors):
        factors = factors.as_tensor(x.shape[0], x.dtype, x.device)
    c, s, g = (factors[:, i].to(x.dtype)[:, None, None, None] for i in range(3))
    u = (x + 1.0) / 2.0
    mean = u.mean(dim=(1, 2, 3), keepdim=True)
    u = mean + c * (u - mean)
    u = u.clamp(0.0, 1.0)
    # u ** g with a finite gradient at u = 0
    positive = u > 0
    u = torch.where(positive, u.clamp_min(1e-12) ** g, torch.zeros_like(u))
    u = u + s * (u - _box_blur3(u))
    return u.clamp(0.0, 1.0) * 2.0 - 1.0


class DiscriminatorOutput(NamedTuple):
    adv_map: torch.Tensor  # Bx1xhxw critic map
    domain_logits: torch.Tensor  # Bxn_domains


class Discriminator(nn.Module):
    """Critic plus domain classifier; every convolution is spectrally normalized."""

    def __init__(self, in_channels: int, config: ModelConfig):
        super().__init__()
        self.in_channels = in_channels
        self.image_size = config.image_size
        n = config.discriminator_blocks
        sn = lambda m: spectral_norm(m, n_power_iterations=config.sn_power_iterations)
        layers, cin = [], in_channels
        for i in range(n):
            cout = min(config.d_channels * 2**i, config.d_max_channels)
            layers += [sn(nn.Conv2d(cin, cout, 4, 2, 1)), nn.LeakyReLU(config.leaky_slope)]
            cin = cout
        self.body = nn.Sequential(*layers)
        final = config.image_size // 2**n
        self.adv_head = sn(nn.Conv2d(cin, 1, 3, 1, 1))
        self.cls_head = sn(nn.Conv2d(cin, config.n_domains, final, 1, 0, bias=False))

    def forward(self, z) -> DiscriminatorOutput:
        if z.dim() != 4 or z.shape[1] != self.in_channels:
            raise ShapeError(f"discriminator expects {self.in_channels} channels, got {tuple(z.shape)}")
        if tuple(z.shape[2:]) != (self.image_size, self.image_size):
            raise ShapeError(f"discriminator expects {self.image_size}x{self.image_size}, got {tuple(z.shape[2:])}")
        h = self.body(z)
        return DiscriminatorOutput(self.adv_head(h), self.cls_head(h).flatten(1))

    def spectral_modules(self):
        for m in self.modules():
            if isinstance(m, nn.Conv2d) and hasattr(m, "parametrizations"):
                yield m


class StawGAN(nn.Module):
    """Container for all five networks."""

    def __init__(self, config: ModelConfig | None = None):
        super().__init__()
        self.config = config or ModelConfig()
        self.generator = Generator(self.config)
        self.shape_controller = ShapeController(self.config)
        self.contrast_net = ContrastNet(self.config)
        self.disc_image = Discriminator(3, self.config)
        self.disc_target = Discriminator(1, self.config)
        self.reset_parameters()

    def reset_parameters(self):
        # spectral-norm wrapped convs expose the raw weight as parametrizations.weight.original
        for m in self.modules():
            if isinstance(m, (nn.Conv2d, nn.ConvTranspose2d, nn.Linear)):
                weight = m.parametrizations.weight.original if hasattr(m, "parametrizations") else m.weight
                with torch.no_grad():
                    weight.normal_(0.0, 0.02)
                    if m.bias is not None:
                        m.bias.zero_()
            elif isinstance(m, nn.InstanceNorm2d) and m.affine:
                init_weights(m)

    def translate(self, x, r, t) -> TranslationOutput:
        return self.generator(x, r, t)

    def segment(self, x, t) -> torch.Tensor:
        return seg_net(self.generator, x, t)


def state_digest(module: nn.Module) -> str:
    """sha256 over parameters and buffers, for equality checks."""
    h = hashlib.sha256()
    for name, tensor in sorted(module.state_dict().items()):
        h.update(name.encode())
        h.update(tensor.detach().cpu().contiguous().numpy().tobytes())
    return h.hexdigest()


def atomic_torch_save(obj, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    os.close(fd)
    try:
        torch.save(obj, tmp)
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.unlink(tmp)
    return path


def save_model(model: StawGAN, path: str | Path, **extra) -> Path:
    payload = {"schema": CHECKPOINT_SCHEMA, "model_config": asdict(model.config), "model": model.state_dict()}
    payload.update(extra)
    return atomic_torch_save(payload, path)


def read_checkpoint(path: str | Path) -> dict:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=False)
    if not isinstance(payload, dict) or payload.get("schema") != CHECKPOINT_SCHEMA:
        raise ConfigurationError(f"{path} is not a {CHECKPOINT_SCHEMA} checkpoint")
    return payload


def load_model(path: str | Path) -> StawGAN:
    payload = read_checkpoint(path)
    model = StawGAN(ModelConfig(**payload["model_config"]))
    model.load_state_dict(payload["model"])
    return model


def config_hash(*configs) -> str:
    blob = json.dumps([asdict(c) if hasattr(c, "__dataclass_fields__") else c for c in configs],
                      sort_keys=True, default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]
