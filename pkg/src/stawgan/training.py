"""Optimization loop: alternating critic / generator updates and the epoch schedules."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Iterator

import numpy as np
import torch

from .dataset import IR, RGB, DatasetManifest, PairedTranslationDataset
from .errors import ConfigurationError, NonFiniteLossError
from .losses import (
    LossReport,
    LossWeights,
    adv_losses,
    cls_loss_fake,
    cls_loss_real,
    compose_objectives,
    cross_loss,
    dssim_loss,
    l1,
    l1_enhancement_loss,
    shape_loss,
)
from .models import (
    ModelConfig,
    StawGAN,
    apply_enhancement,
    atomic_torch_save,
    config_hash,
    read_checkpoint,
)

logger = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    epochs: int = 50
    batch_size: int = 12
    lr_D: float = 3e-4
    lr_other: float = 2e-4
    adam_beta1: float = 0.5
    adam_beta2: float = 0.9
    dssim_start_epoch: int = 10
    # None means epochs / 2
    decay_start: float | None = None
    image_size: int = 256
    seed: int = 0
    paired: bool = True
    weights: LossWeights = field(default_factory=LossWeights)
    adv_mode: str = "wasserstein"
    use_dssim: bool = True
    use_contrast: bool = True
    # "even": target flow trains on even (0-indexed) epochs only; "always": every epoch
    target_flow_schedule: str = "even"
    ssim_window: int = 11
    # value of the target image outside the target area
    cross_background: float = -1.0
    eval_every: int = 1
    plots: bool = True

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if self.epochs < 0:
            raise ConfigurationError(f"epochs must be >= 0, got {self.epochs}")
        if self.dssim_start_epoch < 0 or (self.epochs > 0 and self.dssim_start_epoch > self.epochs):
            raise ConfigurationError(f"dssim_start_epoch {self.dssim_start_epoch} outside [0, {self.epochs}]")
        if self.lr_D <= 0 or self.lr_other <= 0:
            raise ConfigurationError("learning rates must be positive")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.target_flow_schedule not in ("even", "always"):
            raise ConfigurationError(f"unknown target_flow_schedule {self.target_flow_schedule!r}")

    @property
    def decay_start_epoch(self) -> float:
        return self.epochs / 2 if self.decay_start is None else self.decay_start

    def to_dict(self) -> dict:
        d = asdict(self)
        d["weights"] = asdict(self.weights)
        return d


def lr_schedule(epoch: float, base_lr: float, total_epochs: int, decay_start: float | None = None) -> float:
    """Constant until ``decay_start`` (default half the epochs), then linear to zero."""
    if total_epochs <= 0:
        return base_lr
    if not 0 <= epoch <= total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs}]")
    start = total_epochs / 2 if decay_start is None else decay_start
    if epoch < start:
        return base_lr
    return base_lr * (total_epochs - epoch) / (total_epochs - start)


def target_flow_active(epoch: int, schedule: str = "even") -> bool:
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return schedule == "always" or epoch % 2 == 0


def ssim_weight(epoch: int, config: TrainConfig) -> float:
    if not config.use_dssim or epoch < config.dssim_start_epoch:
        return 0.0
    return config.weights.lambda_ssim


# --------------------------------------------------------------------------
# config files: flat "key = value" lines; weights as lambda_* keys


def _coerce(value: str, current):
    if isinstance(current, bool):
        low = value.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigurationError(f"not a boolean: {value!r}")
    if value.strip().lower() == "none":
        return None
    if isinstance(current, int):
        return int(value)
    if isinstance(current, float) or current is None:
        return float(value)
    return value.strip()


def apply_overrides(config: TrainConfig, values: dict[str, str]) -> TrainConfig:
    train_keys = {f.name for f in fields(TrainConfig)} - {"weights"}
    weight_keys = {f.name for f in fields(LossWeights)}
    kwargs, wkwargs = config.to_dict(), dict(config.to_dict()["weights"])
    for key, raw in values.items():
        if key in weight_keys:
            wkwargs[key] = float(raw)
        elif key in train_keys:
            try:
                kwargs[key] = _coerce(str(raw), getattr(config, key))
            except ValueError as exc:
                raise ConfigurationError(f"bad value for {key}: {raw!r}") from exc
        else:
            raise ConfigurationError(f"unknown config key {key!r}")
    kwargs["weights"] = LossWeights(**wkwargs)
    # a short run with the default start epoch simply never enables DSSIM
    if "dssim_start_epoch" not in values and kwargs["epochs"] > 0:
        kwargs["dssim_start_epoch"] = min(kwargs["dssim_start_epoch"], kwargs["epochs"])
    return TrainConfig(**kwargs)


def read_config_file(path: str | Path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"config file not found: {path}")
    values = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key] = value
    return values


def write_config_file(config: TrainConfig, path: str | Path) -> None:
    d = config.to_dict()
    weights = d.pop("weights")
    lines = [f"{k} = {v}" for k, v in d.items()] + [f"{k} = {v}" for k, v in weights.items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# --------------------------------------------------------------------------


def collate(items: list[dict], direction: int | None = None) -> dict:
    """Stack dataset items into a translation batch.

    ``direction`` is the source domain (IR or RGB) for the whole batch. For
    unpaired items it may be None, in which case every item translates away
    from the modality it carries.
    """
    sources, xs, pairs = [], [], []
    for item in items:
        has_ir, has_rgb = item["ir"].numel() > 0, item["rgb"].numel() > 0
        src = direction if direction is not None else (IR if has_ir else RGB)
        if (src == IR and not has_ir) or (src == RGB and not has_rgb):
            raise ConfigurationError(f"item {item['index']} lacks the requested source modality")
        ir3 = item["ir"].expand(3, -1, -1) if has_ir else None
        x_src, x_other = (ir3, item["rgb"] if has_rgb else None) if src == IR else (item["rgb"], ir3)
        sources.append(src)
        xs.append(x_src)
        pairs.append(x_other)
    s = torch.tensor(sources, dtype=torch.long)
    paired = None if any(p is None for p in pairs) else torch.stack(pairs)
    return {
        "x": torch.stack(xs).contiguous(),
        "r": torch.stack([i["target"] for i in items]),
        "y": torch.stack([i["label"] for i in items]),
        "b": torch.stack([i["foreground"] for i in items]),
        "s": s,
        "t": 1 - s,
        "paired": paired,
        "index": torch.tensor([i["index"] for i in items]),
    }


def _set_requires_grad(modules, flag: bool):
    for m in modules:
        for p in m.parameters():
            p.requires_grad_(flag)


class Trainer:
    """Owns the networks, optimizers and schedules for one training run."""

    def __init__(
        self,
        config: TrainConfig,
        manifest: DatasetManifest,
        model_config: ModelConfig | None = None,
        val_manifest: DatasetManifest | None = None,
        device: str = "cpu",
    ):
        self.config = config
        self.model_config = model_config or ModelConfig(image_size=config.image_size)
        if self.model_config.image_size != config.image_size:
            raise ConfigurationError(
                f"model image_size {self.model_config.image_size} != train image_size {config.image_size}"
            )
        if config.paired and not manifest.paired:
            raise ConfigurationError("paired training requested on an unpaired manifest")
        self.device = torch.device(device)
        self.manifest = manifest
        self.val_manifest = val_manifest
        self.data = PairedTranslationDataset(manifest, size=config.image_size)
        torch.manual_seed(config.seed)
        self.model = StawGAN(self.model_config).to(self.device)
        betas = (config.adam_beta1, config.adam_beta2)
        m = self.model
        self.discriminators = [m.disc_image, m.disc_target]
        self.opt_D = torch.optim.Adam(
            [p for d in self.discriminators for p in d.parameters()], lr=config.lr_D, betas=betas
        )
        self.opt_G = torch.optim.Adam(
            [p for net in (m.generator, m.shape_controller, m.contrast_net) for p in net.parameters()],
            lr=config.lr_other,
            betas=betas,
        )
        self.epoch = 0
        self.global_step = 0
        self.history: list[tuple[int, int, dict]] = []

    # -- schedules -------------------------------------------------------

    def set_learning_rates(self, epoch: int):
        c = self.config
        for opt, base in ((self.opt_D, c.lr_D), (self.opt_G, c.lr_other)):
            lr = lr_schedule(min(epoch, c.epochs), base, c.epochs, c.decay_start)
            for group in opt.param_groups:
                group["lr"] = lr

    def epoch_plan(self, epoch: int) -> list[tuple[np.ndarray, int]]:
        """Batches (sample indices, source domain) for ``epoch``; depends only on seed and epoch."""
        rng = np.random.default_rng([self.config.seed, epoch])
        order = rng.permutation(len(self.data))
        bs = self.config.batch_size
        chunks = [order[i : i + bs] for i in range(0, len(order), bs)]
        directions = rng.integers(0, 2, size=len(chunks))
        return [(chunk, int(d)) for chunk, d in zip(chunks, directions)]

    def make_batch(self, indices, direction: int) -> dict:
        items = [self.data[int(i)] for i in indices]
        batch = collate(items, direction if self.manifest.paired else None)
        return {k: (v.to(self.device) if torch.is_tensor(v) else v) for k, v in batch.items()}

    # -- one step --------------------------------------------------------

    def train_step(self, batch: dict, epoch: int) -> LossReport:
        c, m = self.config, self.model
        w = c.weights.with_(lambda_ssim=ssim_weight(epoch, c))
        active = target_flow_active(epoch, c.target_flow_schedule)
        paired = batch.get("paired") if c.paired else None
        x_s, r_s, y, b, s, t = (batch[k] for k in ("x", "r", "y", "b", "s", "t"))
        for net in (m.generator, m.shape_controller, m.contrast_net, *self.discriminators):
            net.train()

        x_t, r_t = m.generator(x_s, r_s, t)

        # critic update
        _set_requires_grad(self.discriminators, True)
        rep = LossReport()
        real, fake = m.disc_image(x_s), m.disc_image(x_t.detach())
        rep.d_adv_x, _ = adv_losses(real.adv_map, fake.adv_map, c.adv_mode)
        rep.cls_r_x = cls_loss_real(real.domain_logits, s, fake.domain_logits, s, w.lambda_u)
        if active:
            real, fake = m.disc_target(r_s), m.disc_target(r_t.detach())
            rep.d_adv_r, _ = adv_losses(real.adv_map, fake.adv_map, c.adv_mode)
            rep.cls_r_r = cls_loss_real(real.domain_logits, s, fake.domain_logits, s, w.lambda_u)
        d_terms = compose_objectives(
            LossReport(d_adv_x=rep.d_adv_x, cls_r_x=rep.cls_r_x, d_adv_r=rep.d_adv_r, cls_r_r=rep.cls_r_r,
                       adv_x=0.0, cls_f_x=0.0, rec_x=0.0),
            w,
        )
        rep.D_x, rep.D_r = d_terms.D_x, d_terms.D_r
        d_total = rep.D_x + (rep.D_r if rep.D_r is not None else 0.0)
        self._check_finite(rep, ("d_adv_x", "cls_r_x", "d_adv_r", "cls_r_r"))
        self.opt_D.zero_grad(set_to_none=True)
        d_total.backward()
        self.opt_D.step()

        # generator (+ shape controller, + contrast network) update
        _set_requires_grad(self.discriminators, False)
        x_rec, r_rec = m.generator(x_t, r_t, s)
        out = m.disc_image(x_t)
        rep.adv_x = adv_losses(out.adv_map.detach(), out.adv_map, c.adv_mode)[1]
        rep.cls_f_x = cls_loss_fake(out.domain_logits, t)
        rep.rec_x = l1(x_s, x_rec)
        if paired is not None and w.lambda_ssim > 0:
            rep.ssim = dssim_loss(paired, x_t, window=c.ssim_window)
        if active:
            out = m.disc_target(r_t)
            rep.adv_r = adv_losses(out.adv_map.detach(), out.adv_map, c.adv_mode)[1]
            rep.cls_f_r = cls_loss_fake(out.domain_logits, t)
            rep.rec_r = l1(r_s, r_rec)
            rep.cross = cross_loss(x_t, r_t, y, background=c.cross_background)
            rep.shape = shape_loss(b, m.shape_controller(r_t))
        if paired is not None and c.use_contrast:
            factors = m.contrast_net(x_t)
            rep.l1 = l1_enhancement_loss(apply_enhancement(x_t, factors), paired)
        compose_objectives(rep, w)
        self._check_finite(rep, LossReport.COMPONENTS)
        g_total = rep.G + (rep.GS if rep.GS is not None else 0.0)
        self.opt_G.zero_grad(set_to_none=True)
        g_total.backward()
        self.opt_G.step()
        _set_requires_grad(self.discriminators, True)
        return rep.detached()

    def _check_finite(self, rep: LossReport, names):
        for name in names:
            v = getattr(rep, name)
            if v is None:
                continue
            v = float(v.detach()) if torch.is_tensor(v) else float(v)
            if not math.isfinite(v):
                raise NonFiniteLossError(name, v, self.global_step)

    # -- loops -----------------------------------------------------------

    def run_epoch(self, epoch: int, log: Callable[[str], None] | None = None) -> list[LossReport]:
        self.set_learning_rates(epoch)
        reports = []
        for indices, direction in self.epoch_plan(epoch):
            rep = self.train_step(self.make_batch(indices, direction), epoch)
            values = rep.as_floats()
            self.history.append((self.global_step, epoch, values))
            if log is not None:
                log(format_log_line(self.global_step, epoch, values))
            self.global_step += 1
            reports.append(rep)
        return reports

    def fit(self, out_dir: str | Path, epochs: int | None = None, evaluate_fn=None) -> Path:
        """Train from ``self.epoch`` up to ``config.epochs`` (or ``epochs`` more).

        Writes ``metrics.log`` (one line per step), ``ckpt_eNNN.pt`` after every
        epoch and ``last.pt``; returns the path of the final checkpoint.
        """
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        stop = self.config.epochs if epochs is None else min(self.config.epochs, self.epoch + epochs)
        last = self.save_checkpoint(out / "last.pt")
        if self.epoch == 0:
            self.save_checkpoint(out / "ckpt_e000.pt")
        with open(out / "metrics.log", "a", encoding="utf-8") as fh:
            while self.epoch < stop:
                t0 = time.perf_counter()
                reports = self.run_epoch(self.epoch, log=lambda line: fh.write(line + "\n"))
                fh.flush()
                means = epoch_means(reports)
                logger.info("epoch %d done in %.1fs: %s", self.epoch, time.perf_counter() - t0,
                            " ".join(f"{k}={v:.4f}" for k, v in means.items()))
                self.epoch += 1
                last = self.save_checkpoint(out / f"ckpt_e{self.epoch:03d}.pt")
                self.save_checkpoint(out / "last.pt")
                if evaluate_fn is not None and self.config.eval_every and self.epoch % self.config.eval_every == 0:
                    evaluate_fn(self, self.epoch)
        if self.config.plots and self.history:
            from .plots import plot_loss_curves

            plot_loss_curves(self.history, out / "loss_curves.png")
        return last

    # -- checkpoints -----------------------------------------------------

    def state(self) -> dict:
        return {
            "schema": "stawgan-checkpoint/1",
            "epoch": self.epoch,
            "global_step": self.global_step,
            "model_config": asdict(self.model_config),
            "train_config": self.config.to_dict(),
            "config_hash": config_hash(self.model_config, self.config.to_dict()),
            "model": self.model.state_dict(),
            "opt_D": self.opt_D.state_dict(),
            "opt_G": self.opt_G.state_dict(),
        }

    def save_checkpoint(self, path: str | Path) -> Path:
        return atomic_torch_save(self.state(), path)

    @classmethod
    def from_checkpoint(
        cls,
        path: str | Path,
        manifest: DatasetManifest,
        val_manifest: DatasetManifest | None = None,
        device: str = "cpu",
        config: TrainConfig | None = None,
    ) -> "Trainer":
        payload = read_checkpoint(path)
        tc = config or TrainConfig(**payload["train_config"])
        trainer = cls(tc, manifest, ModelConfig(**payload["model_config"]), val_manifest, device)
        trainer.model.load_state_dict(payload["model"])
        trainer.opt_D.load_state_dict(payload["opt_D"])
        trainer.opt_G.load_state_dict(payload["opt_G"])
        trainer.epoch = payload["epoch"]
        trainer.global_step = payload["global_step"]
        return trainer


def format_log_line(step: int, epoch: int, values: dict[str, float]) -> str:
    return " ".join([f"step={step}", f"epoch={epoch}"] + [f"{k}={v!r}" for k, v in values.items()])


def parse_log(path: str | Path) -> Iterator[dict]:
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip():
                continue
            row = dict(kv.split("=", 1) for kv in line.split())
            yield {k: (int(v) if k in ("step", "epoch") else float(v)) for k, v in row.items()}


def epoch_means(reports: list[LossReport]) -> dict[str, float]:
    sums: dict[str, list[float]] = {}
    for rep in reports:
        for k, v in rep.as_floats().items():
            sums.setdefault(k, []).append(v)
    return {k: float(np.mean(v)) for k, v in sums.items()}
