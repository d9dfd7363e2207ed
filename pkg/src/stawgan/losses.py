"""Loss terms and their composition into the four training objectives.

All functions take NCHW tensors (or NxC logits) and reduce by the mean, so
default weights do not depend on resolution.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace

import torch
import torch.nn.functional as F

from .errors import CompositionError, ConfigurationError, ShapeError

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
# images live in [-1, 1]
DATA_RANGE = 2.0


@dataclass(frozen=True)
class LossWeights:
    lambda_u: float = 1.0
    lambda_cls_r: float = 1.0
    lambda_cls_f: float = 1.0
    lambda_rec: float = 10.0
    lambda_cross: float = 25.0
    lambda_L1: float = 1.0
    lambda_ssim: float = 1.0
    lambda_shape: float = 1.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (math.isfinite(v) and v >= 0):
                raise ConfigurationError(f"{f.name} must be a non-negative finite number, got {v}")

    def with_(self, **changes) -> "LossWeights":
        return replace(self, **changes)


# --------------------------------------------------------------------------
# adversarial and classification terms


def adv_losses(d_real: torch.Tensor, d_fake: torch.Tensor, mode: str = "wasserstein"):
    """Discriminator and generator adversarial losses from critic maps.

    ``wasserstein``: with L_adv = mean(D_real) - mean(D_fake) the discriminator
    minimizes -L_adv and the generator minimizes the fake part of L_adv,
    -mean(D_fake). ``hinge`` and ``bce`` are drop-in alternatives.
    """
    if d_real.shape[1:] != d_fake.shape[1:]:
        raise ShapeError(f"critic maps disagree: {tuple(d_real.shape)} vs {tuple(d_fake.shape)}")
    if mode == "wasserstein":
        l_adv = d_real.mean() - d_fake.mean()
        return -l_adv, -d_fake.mean()
    if mode == "hinge":
        return F.relu(1 - d_real).mean() + F.relu(1 + d_fake).mean(), -d_fake.mean()
    if mode == "bce":
        ones, zeros = torch.ones_like(d_real), torch.zeros_like(d_fake)
        loss_d = F.binary_cross_entropy_with_logits(d_real, ones) + F.binary_cross_entropy_with_logits(d_fake, zeros)
        return loss_d, F.binary_cross_entropy_with_logits(d_fake, torch.ones_like(d_fake))
    raise ConfigurationError(f"unknown adversarial mode {mode!r}")


def critic_gap(d_real: torch.Tensor, d_fake: torch.Tensor) -> torch.Tensor:
    """L_adv = mean(D_real) - mean(D_fake)."""
    return d_real.mean() - d_fake.mean()


def _labels(domains, n, device):
    labels = torch.as_tensor(domains, device=device)
    if labels.dim() == 2:
        labels = labels.argmax(1)
    labels = labels.long().reshape(-1)
    if labels.shape[0] != n:
        raise ShapeError(f"{labels.shape[0]} labels for {n} logits")
    return labels


def domain_nll(logits: torch.Tensor, domains) -> torch.Tensor:
    return F.cross_entropy(logits, _labels(domains, logits.shape[0], logits.device))


def cls_loss_real(logits_real, s, logits_translated=None, s_prime=None, lambda_u: float = 1.0) -> torch.Tensor:
    """Modality classification loss for the discriminator.

    NLL of the true domain ``s`` on real inputs plus ``lambda_u`` times the NLL
    of the source domain ``s_prime`` on translated inputs.
    """
    loss = domain_nll(logits_real, s)
    if lambda_u and logits_translated is not None:
        loss = loss + lambda_u * domain_nll(logits_translated, s_prime)
    return loss


def cls_loss_fake(logits_fake, t) -> torch.Tensor:
    """NLL of the target domain ``t`` on translated samples."""
    return domain_nll(logits_fake, t)


# --------------------------------------------------------------------------
# structural terms


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA, dtype=torch.float64) -> torch.Tensor:
    """Normalized size x size Gaussian weights."""
    coords = torch.arange(size, dtype=dtype) - (size - 1) / 2
    g = torch.exp(-(coords**2) / (2 * sigma**2))
    g = g / g.sum()
    return g[:, None] * g[None, :]


def _as_nchw(x: torch.Tensor) -> torch.Tensor:
    if x.dim() == 2:
        return x[None, None]
    if x.dim() == 3:
        return x[None]
    if x.dim() == 4:
        return x
    raise ShapeError(f"expected an image tensor with 2-4 dims, got {tuple(x.shape)}")


def ssim(
    a: torch.Tensor,
    b: torch.Tensor,
    window: int = SSIM_WINDOW,
    data_range: float = DATA_RANGE,
    sigma: float = SSIM_SIGMA,
    reduction: str = "mean",
) -> torch.Tensor:
    """Structural similarity with Gaussian-weighted windows.

    Each window position fully inside the image contributes one SSIM value;
    values are averaged over windows and channels. ``reduction="none"`` keeps
    one value per batch element.
    """
    a, b = _as_nchw(a), _as_nchw(b)
    if a.shape != b.shape:
        raise ShapeError(f"ssim inputs disagree: {tuple(a.shape)} vs {tuple(b.shape)}")
    if window < 3 or window % 2 == 0:
        raise ValueError(f"window must be odd and >= 3, got {window}")
    if min(a.shape[2:]) < window:
        raise ValueError(f"image {tuple(a.shape[2:])} smaller than the {window}x{window} window")
    c = a.shape[1]
    w = gaussian_window(window, sigma, dtype=a.dtype).to(a.device).expand(c, 1, window, window)
    conv = lambda x: F.conv2d(x, w, groups=c)
    mu_a, mu_b = conv(a), conv(b)
    var_a = conv(a * a) - mu_a**2
    var_b = conv(b * b) - mu_b**2
    cov = conv(a * b) - mu_a * mu_b
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    smap = ((2 * mu_a * mu_b + c1) * (2 * cov + c2)) / ((mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2))
    per_image = smap.mean(dim=(1, 2, 3))
    if reduction == "none":
        return per_image
    if reduction == "mean":
        return per_image.mean()
    raise ValueError(f"unknown reduction {reduction!r}")


def dssim_loss(x_paired, x_t, window: int = SSIM_WINDOW, data_range: float = DATA_RANGE) -> torch.Tensor:
    """(1 - SSIM(x_paired, x_t)) / 2."""
    if x_paired is None or (torch.is_tensor(x_paired) and x_paired.numel() == 0):
        raise ConfigurationError("DSSIM needs the paired ground-truth image; the data is unpaired")
    return (1.0 - ssim(x_paired, x_t, window=window, data_range=data_range)) / 2.0


def l1(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"L1 inputs disagree: {tuple(a.shape)} vs {tuple(b.shape)}")
    return (a - b).abs().mean()


def rec_loss(z_s, z_rec, ssim_term=None, lambda_ssim: float = 0.0) -> torch.Tensor:
    """Cycle reconstruction L1, plus ``lambda_ssim * ssim_term`` for the image flow."""
    loss = l1(z_s, z_rec)
    if ssim_term is not None and lambda_ssim:
        loss = loss + lambda_ssim * ssim_term
    return loss


def shape_loss(b_x: torch.Tensor, s_out: torch.Tensor) -> torch.Tensor:
    """Mean squared error between the foreground mask and the shape-controller output."""
    if b_x.shape != s_out.shape:
        raise ShapeError(f"shape loss inputs disagree: {tuple(b_x.shape)} vs {tuple(s_out.shape)}")
    return ((b_x - s_out) ** 2).mean()


def cross_loss(x_t: torch.Tensor, r_t: torch.Tensor, y: torch.Tensor, background: float = 0.0) -> torch.Tensor:
    """Mean |mean_c(x_t) * y + background * (1 - y) - r_t|.

    ``background`` is the value the target image takes outside the target
    area; 0 gives the plain masked comparison.
    """
    x_t, r_t, y = _as_nchw(x_t), _as_nchw(r_t), _as_nchw(y)
    if x_t.shape[2:] != r_t.shape[2:] or y.shape[2:] != r_t.shape[2:] or r_t.shape[1] != 1:
        raise ShapeError(f"cross loss shapes: x_t {tuple(x_t.shape)}, r_t {tuple(r_t.shape)}, y {tuple(y.shape)}")
    masked = x_t.mean(dim=1, keepdim=True) * y
    if background:
        masked = masked + background * (1 - y)
    return (masked - r_t).abs().mean()


def l1_enhancement_loss(enhanced_fake, x_paired) -> torch.Tensor:
    if x_paired is None or (torch.is_tensor(x_paired) and x_paired.numel() == 0):
        raise ConfigurationError("the enhancement L1 loss needs paired data")
    return l1(enhanced_fake, x_paired)


# --------------------------------------------------------------------------
# composition


@dataclass
class LossReport:
    """Per-step loss components; ``None`` marks a term absent this step.

    ``adv_*`` are generator-side adversarial terms, ``d_adv_*`` the
    discriminator-side ones (-L_adv in the Wasserstein form). ``rec_x`` is the
    cycle L1 only; DSSIM is kept in ``ssim`` and weighted at composition.
    """

    adv_x: object = None
    adv_r: object = None
    d_adv_x: object = None
    d_adv_r: object = None
    cls_r_x: object = None
    cls_r_r: object = None
    cls_f_x: object = None
    cls_f_r: object = None
    rec_x: object = None
    rec_r: object = None
    ssim: object = None
    shape: object = None
    cross: object = None
    l1: object = None
    D_x: object = None
    D_r: object = None
    G: object = None
    GS: object = None
    C: object = None

    COMPONENTS = ("adv_x", "adv_r", "d_adv_x", "d_adv_r", "cls_r_x", "cls_r_r", "cls_f_x", "cls_f_r",
                  "rec_x", "rec_r", "ssim", "shape", "cross", "l1")
    TOTALS = ("D_x", "D_r", "G", "GS", "C")

    @property
    def cls_r(self):
        return _sum_present(self.cls_r_x, self.cls_r_r)

    @property
    def cls_f(self):
        return _sum_present(self.cls_f_x, self.cls_f_r)

    def items(self):
        for name in self.COMPONENTS + self.TOTALS:
            value = getattr(self, name)
            if value is not None:
                yield name, value

    def as_floats(self) -> dict[str, float]:
        return {k: float(v.detach()) if torch.is_tensor(v) else float(v) for k, v in self.items()}

    def detached(self) -> "LossReport":
        out = LossReport()
        for k, v in self.as_floats().items():
            setattr(out, k, v)
        return out


def _sum_present(*values):
    present = [v for v in values if v is not None]
    return sum(present) if present else None


def _need(report: LossReport, *names):
    missing = [n for n in names if getattr(report, n) is None]
    if missing:
        raise CompositionError(f"missing loss components: {', '.join(missing)}")
    return [getattr(report, n) for n in names]


def compose_objectives(report: LossReport, w: LossWeights) -> LossReport:
    """Fill the D_x, D_r, G, GS and C totals from the components.

    L_D(z)  = -L_adv(z) + lambda_cls_r * L_cls^r(z)
    L_G     = sum_z [L_adv(z) + lambda_cls_f * L_cls^f(z) + lambda_rec * L_rec(z)]
              + lambda_cross * L_cross + lambda_L1 * L_L1
    L_{G,S} = L_shape(r)
    L_C     = lambda_L1 * L_L1

    with L_rec(x) = rec_x + lambda_ssim * ssim. Target-flow terms enter only
    when present; a partially present flow is an error. ``w.lambda_ssim`` is
    taken as already scheduled for the current epoch.
    """
    if report.d_adv_x is not None or report.cls_r_x is not None:
        d_adv, cls = _need(report, "d_adv_x", "cls_r_x")
        report.D_x = d_adv + w.lambda_cls_r * cls
    if report.d_adv_r is not None or report.cls_r_r is not None:
        d_adv, cls = _need(report, "d_adv_r", "cls_r_r")
        report.D_r = d_adv + w.lambda_cls_r * cls

    adv, cls, rec = _need(report, "adv_x", "cls_f_x", "rec_x")
    if report.ssim is not None:
        rec = rec + w.lambda_ssim * report.ssim
    total = adv + w.lambda_cls_f * cls + w.lambda_rec * rec
    if any(getattr(report, n) is not None for n in ("adv_r", "cls_f_r", "rec_r")):
        adv, cls, rec = _need(report, "adv_r", "cls_f_r", "rec_r")
        total = total + adv + w.lambda_cls_f * cls + w.lambda_rec * rec
    if report.cross is not None:
        total = total + w.lambda_cross * report.cross
    if report.l1 is not None:
        total = total + w.lambda_L1 * report.l1
        report.C = w.lambda_L1 * report.l1
    report.G = total
    report.GS = w.lambda_shape * report.shape if report.shape is not None else None
    return report
