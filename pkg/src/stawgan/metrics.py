"""Evaluation metrics for translation quality and target segmentation.

FID and IS take their feature extractor and classifier by injection. The
defaults are deterministic random CNNs (no downloads); values computed with
them are comparable only with each other.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .dataset import IR, RGB, DatasetManifest, PairedTranslationDataset
from .errors import ConfigurationError, ShapeError
from .losses import DATA_RANGE, ssim

PSNR_IDENTICAL = math.inf


@dataclass
class FeatureStats:
    mu: np.ndarray
    sigma: np.ndarray

    def __post_init__(self):
        self.mu = np.atleast_1d(np.asarray(self.mu, dtype=np.float64))
        self.sigma = np.atleast_2d(np.asarray(self.sigma, dtype=np.float64))
        d = self.mu.shape[0]
        if self.sigma.shape != (d, d):
            raise ShapeError(f"covariance {self.sigma.shape} does not match mean of length {d}")

    @classmethod
    def from_features(cls, feats) -> "FeatureStats":
        feats = np.asarray(feats, dtype=np.float64)
        if feats.ndim != 2 or feats.shape[0] < 2:
            raise ValueError("need an NxD feature matrix with N >= 2")
        return cls(feats.mean(axis=0), np.cov(feats, rowvar=False))


def _sqrt_psd(m: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh((m + m.T) / 2)
    return (vecs * np.sqrt(np.clip(vals, 0, None))) @ vecs.T


def fid(stats_real: FeatureStats, stats_fake: FeatureStats) -> float:
    """||mu1 - mu2||^2 + Tr(S1 + S2 - 2 (S1 S2)^(1/2)).

    Tr (S1 S2)^(1/2) equals the sum of singular values of S1^(1/2) S2^(1/2),
    which avoids squaring small eigenvalues when covariances are rank deficient.
    """
    if stats_real.mu.shape != stats_fake.mu.shape:
        raise ShapeError(f"feature dimensions differ: {stats_real.mu.shape} vs {stats_fake.mu.shape}")
    diff = stats_real.mu - stats_fake.mu
    cross = _sqrt_psd(stats_real.sigma) @ _sqrt_psd(stats_fake.sigma)
    tr_cross = np.linalg.svd(cross, compute_uv=False).sum()
    value = diff @ diff + np.trace(stats_real.sigma) + np.trace(stats_fake.sigma) - 2 * tr_cross
    return float(value)


def inception_score(class_probs, eps: float = 1e-12) -> float:
    """exp(mean_n KL(p(y|x_n) || p(y)))."""
    p = np.asarray(class_probs, dtype=np.float64)
    if p.ndim != 2 or p.shape[0] == 0:
        raise ValueError("class_probs must be a non-empty NxC matrix")
    if np.any(p < 0) or not np.allclose(p.sum(axis=1), 1.0, atol=1e-5):
        raise ValueError("rows of class_probs must be probability vectors")
    marginal = p.mean(axis=0)
    kl = np.where(p > 0, p * (np.log(np.maximum(p, eps)) - np.log(np.maximum(marginal, eps))), 0.0).sum(axis=1)
    return float(np.exp(kl.mean()))


def _np(x) -> np.ndarray:
    if torch.is_tensor(x):
        x = x.detach().cpu().numpy()
    return np.asarray(x)


def psnr(a, b, data_range: float = DATA_RANGE) -> float:
    """10 log10(R^2 / MSE) in dB; identical inputs give ``PSNR_IDENTICAL`` (+inf)."""
    a, b = _np(a).astype(np.float64), _np(b).astype(np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"psnr inputs disagree: {a.shape} vs {b.shape}")
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return PSNR_IDENTICAL
    return float(10.0 * np.log10(data_range**2 / mse))


def dsc(pred, truth) -> float:
    """Dice coefficient of two binary masks, in percent. Two empty masks agree fully (100)."""
    a, b = _np(pred).astype(bool), _np(truth).astype(bool)
    if a.shape != b.shape:
        raise ShapeError(f"dsc inputs disagree: {a.shape} vs {b.shape}")
    total = a.sum() + b.sum()
    if total == 0:
        return 100.0
    return float(100.0 * 2.0 * np.logical_and(a, b).sum() / total)


def mae(pred, truth) -> float:
    a, b = _np(pred).astype(np.float64), _np(truth).astype(np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"mae inputs disagree: {a.shape} vs {b.shape}")
    return float(np.mean(np.abs(a - b)))


def binarize(target_image) -> np.ndarray:
    """Target-flow output in [-1, 1] to a {0, 1} mask (threshold 0)."""
    return (_np(target_image) > 0).astype(np.uint8)


def batch_dsc(pred, truth) -> list[float]:
    return [dsc(p, g) for p, g in zip(_np(pred), _np(truth))]


@torch.no_grad()
def s_score(model, x_t, g, t) -> float:
    """Mean Dice (percent) between the segmentation read-out of ``x_t`` and ``g``."""
    seg = model.segment(x_t, t)
    return float(np.mean(batch_dsc(binarize(seg), g)))


# --------------------------------------------------------------------------
# backbones


class RandomFeatureExtractor(nn.Module):
    """Fixed-seed random CNN mapping [-1, 1] images to ``dim`` features."""

    def __init__(self, dim: int = 64, seed: int = 0):
        super().__init__()
        gen = torch.Generator().manual_seed(seed)
        self.net = nn.Sequential(
            nn.Conv2d(3, 32, 3, 2, 1), nn.ReLU(),
            nn.Conv2d(32, 64, 3, 2, 1), nn.ReLU(),
            nn.Conv2d(64, dim, 3, 2, 1), nn.ReLU(),
            nn.AdaptiveAvgPool2d(1), nn.Flatten(),
        )
        with torch.no_grad():
            for p in self.parameters():
                p.copy_(torch.randn(p.shape, generator=gen) * (0.5 if p.dim() > 1 else 0.1))
        self.eval()
        for p in self.parameters():
            p.requires_grad_(False)

    def forward(self, x):
        if x.shape[1] == 1:
            x = x.expand(-1, 3, -1, -1)
        return self.net(x)


class RandomClassifier(nn.Module):
    """Softmax head over a ``RandomFeatureExtractor``."""

    def __init__(self, n_classes: int = 10, seed: int = 1):
        super().__init__()
        self.features = RandomFeatureExtractor(64, seed)
        gen = torch.Generator().manual_seed(seed + 1)
        self.head = nn.Linear(64, n_classes)
        with torch.no_grad():
            self.head.weight.copy_(torch.randn(self.head.weight.shape, generator=gen))
            self.head.bias.zero_()
            self.head.requires_grad_(False)
        self.eval()

    def forward(self, x):
        f = self.features(x)
        f = (f - f.mean(1, keepdim=True)) / (f.std(1, keepdim=True) + 1e-6)
        return F.softmax(self.head(f), dim=1)


def pretrained_backbones():
    """torchvision Inception-v3 feature extractor and classifier, from the local weight cache only.

    Raises ``RuntimeError`` when the weights are not already on disk.
    """
    from torchvision.models import Inception_V3_Weights, inception_v3

    weights = Inception_V3_Weights.IMAGENET1K_V1
    cached = Path(torch.hub.get_dir()) / "checkpoints" / Path(weights.url).name
    if not cached.is_file():
        raise RuntimeError(f"pretrained Inception weights not cached at {cached}")
    net = inception_v3(weights=weights).eval()

    class _Wrap(nn.Module):
        def __init__(self, probs: bool):
            super().__init__()
            self.net, self.probs = net, probs

        def forward(self, x):
            if x.shape[1] == 1:
                x = x.expand(-1, 3, -1, -1)
            x = F.interpolate((x + 1) / 2, size=(299, 299), mode="bilinear", align_corners=False)
            mean = torch.tensor([0.485, 0.456, 0.406], device=x.device)[:, None, None]
            std = torch.tensor([0.229, 0.224, 0.225], device=x.device)[:, None, None]
            x = (x - mean) / std
            if self.probs:
                return F.softmax(self.net(x), dim=1)
            fc = self.net.fc
            self.net.fc = nn.Identity()
            try:
                return self.net(x)
            finally:
                self.net.fc = fc

    return _Wrap(False), _Wrap(True)


def default_backbones():
    try:
        return pretrained_backbones()
    except Exception:
        return RandomFeatureExtractor(), RandomClassifier()


# --------------------------------------------------------------------------
# report


@dataclass
class MetricReport:
    fid: float
    is_mean: float
    psnr_db: float
    ssim: float
    dsc_percent: float
    s_score_percent: float
    mae: float

    UNITS = {"fid": "", "is_mean": "", "psnr_db": "dB", "ssim": "", "dsc_percent": "%", "s_score_percent": "%", "mae": ""}

    def to_dict(self) -> dict[str, float]:
        return asdict(self)

    def to_text(self) -> str:
        return "".join(f"{k}={v!r}\n" for k, v in self.to_dict().items())

    def save(self, path: str | Path) -> Path:
        path = Path(path)
        path.write_text(self.to_text(), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path: str | Path) -> "MetricReport":
        values = {}
        for line in Path(path).read_text(encoding="utf-8").splitlines():
            if "=" in line:
                k, v = line.split("=", 1)
                values[k.strip()] = float(v)
        return cls(**values)

    def table(self, name: str = "model") -> str:
        """Two tables: translation quality and segmentation."""
        fmt = lambda v: "inf" if math.isinf(v) else f"{v:.4f}"
        rows = [
            "| Model | FID | IS | PSNR | SSIM |",
            "|---|---|---|---|---|",
            f"| {name} | {fmt(self.fid)} | {fmt(self.is_mean)} | {fmt(self.psnr_db)} | {fmt(self.ssim)} |",
            "",
            "| Model | DSC | S-Score | MAE |",
            "|---|---|---|---|",
            f"| {name} | {self.dsc_percent:.2f} | {self.s_score_percent:.2f} | {fmt(self.mae)} |",
        ]
        return "\n".join(rows)


class GroundTruthTranslator:
    """Returns the paired ground truth as its translation; a sanity reference for ``evaluate``."""

    def translate_batch(self, batch):
        return batch["paired"], batch["r"]

    def segment_batch(self, x_t, batch):
        return batch["r"]


def _iter_batches(data: PairedTranslationDataset, directions, batch_size: int):
    from .training import collate

    n = len(data)
    for direction in directions:
        for start in range(0, n, batch_size):
            items = [data[i] for i in range(start, min(n, start + batch_size))]
            yield collate(items, direction)


@torch.no_grad()
def evaluate(
    model,
    manifest: DatasetManifest,
    feature_extractor: nn.Module | None = None,
    classifier: nn.Module | None = None,
    image_size: int | None = None,
    batch_size: int = 16,
    device: str = "cpu",
) -> MetricReport:
    """Translate every sample in both directions and aggregate all metrics.

    ``model`` provides ``translate(x, r, t)`` and ``segment(x, t)`` (as
    ``StawGAN`` does), or ``translate_batch(batch)`` and
    ``segment_batch(x_t, batch)``. FID is averaged over the two translation
    directions; the other metrics are means over all translated samples.
    """
    if len(manifest) == 0:
        raise ConfigurationError("cannot evaluate an empty manifest")
    if feature_extractor is None or classifier is None:
        fe, cl = RandomFeatureExtractor(), RandomClassifier()
        feature_extractor = feature_extractor or fe
        classifier = classifier or cl
    if image_size is None:
        image_size = model.config.image_size if hasattr(model, "config") else 256
    if isinstance(model, nn.Module):
        model.eval()
    dev = torch.device(device)
    data = PairedTranslationDataset(manifest, size=image_size)
    directions = (IR, RGB) if manifest.paired else (None,)

    feats_real = {IR: [], RGB: []}
    feats_fake = {IR: [], RGB: []}
    probs, ssims, psnrs, dscs, s_scores, maes = [], [], [], [], [], []
    for batch in _iter_batches(data, directions, batch_size):
        batch = {k: (v.to(dev) if torch.is_tensor(v) else v) for k, v in batch.items()}
        if hasattr(model, "translate_batch"):
            x_t, r_t = model.translate_batch(batch)
            seg = model.segment_batch(x_t, batch)
        else:
            x_t, r_t = model.translate(batch["x"], batch["r"], batch["t"])
            seg = model.segment(x_t, batch["t"])
        truth = batch["y"]
        pred = binarize(r_t)
        dscs += batch_dsc(pred, truth)
        maes += [mae(p, g) for p, g in zip(pred, _np(truth))]
        s_scores += batch_dsc(binarize(seg), truth)
        probs.append(_np(classifier(x_t)))
        paired = batch["paired"]
        if paired is not None:
            ssims += _np(ssim(paired, x_t, reduction="none")).tolist()
            psnrs += [psnr(a, b) for a, b in zip(_np(paired), _np(x_t))]
            dom = int(batch["t"][0])
            feats_real[dom].append(_np(feature_extractor(paired)))
            feats_fake[dom].append(_np(feature_extractor(x_t)))

    fids = []
    for dom in (IR, RGB):
        if sum(len(f) for f in feats_real[dom]) >= 2:
            real = np.concatenate(feats_real[dom])
            fake = np.concatenate(feats_fake[dom])
            fids.append(fid(FeatureStats.from_features(real), FeatureStats.from_features(fake)))
    nan = float("nan")
    return MetricReport(
        fid=float(np.mean(fids)) if fids else nan,
        is_mean=inception_score(np.concatenate(probs)),
        psnr_db=float(np.mean(psnrs)) if psnrs else nan,
        ssim=float(np.mean(ssims)) if ssims else nan,
        dsc_percent=float(np.mean(dscs)),
        s_score_percent=float(np.mean(s_scores)),
        mae=float(np.mean(maes)),
    )
