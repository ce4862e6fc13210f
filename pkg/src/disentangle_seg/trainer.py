"""Alternating training loop with cross reconstruction and routed updates.

Each step builds a four-image quadruple per sample, feeds only the two
matched images (x_a1d1, x_a2d2) through the encoders, and then applies four
sequential parameter updates from the single shared forward pass:

  1. statistics network   <- descend -(MI_1 + MI_2)      (tighten the bound)
  2. encoders + generator <- descend sum of the four reconstruction losses
     (the two cross images serve only as reconstruction ground truth)
  3. encoders             <- descend MI_1 + MI_2          (disentangle)
  4. anatomical encoder + segmentor <- descend the two segmentation losses

Routing is enforced with ``backward(inputs=...)`` so each objective can only
write gradients into its own parameter collections.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, fields, asdict
from pathlib import Path

import numpy as np
import torch

from .core import Dataset
from .losses import LossConfig, rec_loss, seg_loss
from .mine import estimate_mi, mine_training_objective, mi_loss
from .networks import ArchConfig, ModelBundle
from .transforms import TransformConfig, make_quadruple


class TrainingDiverged(RuntimeError):
    """Raised when a loss goes non-finite; carries the metrics history."""

    def __init__(self, message: str, history: list["StepMetrics"]):
        super().__init__(message)
        self.history = history


@dataclass
class TrainConfig:
    """Optimization settings plus nested architecture/transform/loss blocks."""

    learning_rate: float = 1e-4
    # statistics network only; None follows learning_rate. At short step
    # budgets the bound estimator needs a faster schedule than the encoders
    # to produce a useful disentanglement gradient at all.
    mine_learning_rate: float | None = None
    epochs: int = 200
    batch_size: int = 8
    seed: int = 0
    use_mi_loss: bool = True
    use_cross_rec: bool = True
    rec_weight: float = 1.0
    seg_weight: float = 1.0
    mi_weight: float = 1.0  # weight of the encoders' MI loss
    grad_clip: float = 0.0  # 0 disables clipping
    val_every: int = 1      # epochs between validation passes
    arch: ArchConfig = field(default_factory=ArchConfig)
    transform: TransformConfig = field(default_factory=TransformConfig)
    loss: LossConfig = field(default_factory=LossConfig)

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (marginal shuffle needs pairs)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["arch"] = self.arch.to_dict()
        d["transform"] = self.transform.to_dict()
        d["loss"] = asdict(self.loss)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        kwargs = dict(d)
        if "arch" in kwargs:
            kwargs["arch"] = ArchConfig.from_dict(kwargs["arch"])
        if "transform" in kwargs:
            kwargs["transform"] = TransformConfig.from_dict(kwargs["transform"])
        if "loss" in kwargs:
            loss_known = {f.name for f in fields(LossConfig)}
            loss_unknown = set(kwargs["loss"]) - loss_known
            if loss_unknown:
                raise ValueError(f"unknown config keys: {sorted(loss_unknown)}")
            kwargs["loss"] = LossConfig(**kwargs["loss"])
        return cls(**kwargs)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class StepMetrics:
    """Per-step scalars logged to metrics.csv."""

    step: int
    epoch: int
    mi_estimate_1: float
    mi_estimate_2: float
    seg_loss: float
    rec_11: float
    rec_22: float
    rec_12: float
    rec_21: float

    FIELDS = ("step", "epoch", "mi_estimate_1", "mi_estimate_2", "seg_loss",
              "rec_11", "rec_22", "rec_12", "rec_21")

    def row(self) -> list:
        return [getattr(self, name) for name in self.FIELDS]


def _to_tensor(arrays: list[np.ndarray]) -> torch.Tensor:
    return torch.from_numpy(np.stack(arrays)).unsqueeze(1)


def batch_quadruples(samples, rng: np.random.Generator,
                     cfg: TransformConfig) -> dict[str, torch.Tensor]:
    """Augment a batch of Samples into stacked quadruple tensors (N,1,H,W)."""
    quads = [make_quadruple(s.image, s.mask, rng, cfg) for s in samples]
    return {
        "x11": _to_tensor([q.x_a1d1 for q in quads]),
        "x22": _to_tensor([q.x_a2d2 for q in quads]),
        "x12": _to_tensor([q.x_a1d2 for q in quads]),
        "x21": _to_tensor([q.x_a2d1 for q in quads]),
        "l1": _to_tensor([q.l1 for q in quads]),
        "l2": _to_tensor([q.l2 for q in quads]),
    }


@dataclass
class Objective:
    """One routed update: a loss and the collections it may touch."""

    name: str
    loss: torch.Tensor
    targets: tuple[str, ...]


def compute_objectives(bundle: ModelBundle, batch: dict[str, torch.Tensor],
                       cfg: TrainConfig, mi_generator: torch.Generator,
                       step: int = 0, epoch: int = 0,
                       ) -> tuple[list[Objective], StepMetrics]:
    """Run the shared forward pass and build the ordered objective list."""
    bundle.train_mode()
    x11, x22 = batch["x11"], batch["x22"]

    # single shared forward pass; cross images never enter the encoders
    f_a1, f_d1 = bundle.encoder_a(x11), bundle.encoder_d(x11)
    f_a2, f_d2 = bundle.encoder_a(x22), bundle.encoder_d(x22)
    m1, m2 = bundle.segmentor(f_a1), bundle.segmentor(f_a2)
    x_hat = {
        "11": bundle.generator(f_a1, f_d1),
        "22": bundle.generator(f_a2, f_d2),
        "12": bundle.generator(f_a1, f_d2),
        "21": bundle.generator(f_a2, f_d1),
    }

    est1 = estimate_mi(bundle.mine, f_a1.values, f_d1.values, mi_generator)
    est2 = estimate_mi(bundle.mine, f_a2.values, f_d2.values, mi_generator)

    rec = {key: rec_loss(batch[f"x{key}"], x_hat[key]) for key in x_hat}
    rec_keys = ("11", "22", "12", "21") if cfg.use_cross_rec else ("11", "22")
    rec_total = cfg.rec_weight * sum(rec[k] for k in rec_keys)
    seg_total = cfg.seg_weight * (seg_loss(batch["l1"], m1, cfg.loss)
                                  + seg_loss(batch["l2"], m2, cfg.loss))

    metrics = StepMetrics(
        step=step, epoch=epoch,
        mi_estimate_1=float(est1.value.detach()),
        mi_estimate_2=float(est2.value.detach()),
        seg_loss=float(seg_total.detach()),
        rec_11=float(rec["11"].detach()), rec_22=float(rec["22"].detach()),
        rec_12=float(rec["12"].detach()), rec_21=float(rec["21"].detach()),
    )
    if not all(np.isfinite(v) for v in metrics.row()[2:]):
        raise TrainingDiverged(f"non-finite loss at step {step}: {metrics}", [metrics])

    objectives = []
    if cfg.use_mi_loss:
        objectives.append(Objective("mine_bound", mine_training_objective(est1, est2),
                                    ("mine",)))
    objectives.append(Objective("reconstruction", rec_total,
                                ("encoder_a", "encoder_d", "generator")))
    if cfg.use_mi_loss:
        objectives.append(Objective(
            "mi_encoders", cfg.mi_weight * (mi_loss(est1) + mi_loss(est2)),
            ("encoder_a", "encoder_d")))
    objectives.append(Objective("segmentation", seg_total,
                                ("encoder_a", "segmentor")))
    return objectives, metrics


def train_step(bundle: ModelBundle, optimizers: dict[str, torch.optim.Optimizer],
               batch: dict[str, torch.Tensor], cfg: TrainConfig,
               mi_generator: torch.Generator, step: int = 0, epoch: int = 0,
               history: list[StepMetrics] | None = None) -> StepMetrics:
    """One alternating update on a pre-augmented quadruple batch."""
    try:
        objectives, metrics = compute_objectives(bundle, batch, cfg, mi_generator,
                                                 step=step, epoch=epoch)
    except TrainingDiverged as e:
        raise TrainingDiverged(str(e), (history or []) + e.history) from None

    # backward everything against the forward-time parameter values first,
    # then step; a step in between would invalidate the shared graph
    stashed: list[list[torch.Tensor | None]] = []
    for i, obj in enumerate(objectives):
        params = bundle.parameters_of(*obj.targets)
        for p in params:
            p.grad = None
        obj.loss.backward(inputs=params, retain_graph=i < len(objectives) - 1)
        stashed.append([p.grad for p in params])
        for p in params:
            p.grad = None

    for obj, grads in zip(objectives, stashed):
        params = bundle.parameters_of(*obj.targets)
        for p, g in zip(params, grads):
            p.grad = g
        if cfg.grad_clip > 0:
            torch.nn.utils.clip_grad_norm_(params, cfg.grad_clip)
        for name in obj.targets:
            optimizers[name].step()
        for p in params:
            p.grad = None

    return metrics


def build_optimizers(bundle: ModelBundle, lr: float,
                     mine_lr: float | None = None) -> dict[str, torch.optim.Optimizer]:
    """One Adam per parameter collection, shared learning rate.

    The statistics network may run at its own rate (`mine_lr`).
    """
    rates = {name: lr for name in bundle.modules()}
    if mine_lr is not None:
        rates["mine"] = mine_lr
    return {name: torch.optim.Adam(module.parameters(), lr=rates[name])
            for name, module in bundle.modules().items()}


def _write_metrics_csv(path: Path, history: list[StepMetrics]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(StepMetrics.FIELDS)
        for m in history:
            writer.writerow([repr(v) if isinstance(v, float) else v for v in m.row()])


def train(cfg: TrainConfig, train_ds: Dataset, val_ds: Dataset | None = None,
          out_dir: str | Path | None = None,
          bundle: ModelBundle | None = None) -> tuple[ModelBundle, list[StepMetrics]]:
    """Run the full loop; checkpoint best-validation and final bundles.

    All randomness (init, augmentation draws, batch order, marginal
    permutations) derives from cfg.seed, so a fixed config reproduces the
    metrics CSV byte-for-byte on one platform.
    """
    from .eval_adapt import evaluate  # local import to avoid a cycle

    torch.manual_seed(cfg.seed)
    if bundle is None:
        bundle = ModelBundle.build(cfg.arch, cfg.seed)
    optimizers = build_optimizers(bundle, cfg.learning_rate, cfg.mine_learning_rate)
    aug_rng = np.random.default_rng(cfg.seed)
    order_rng = np.random.default_rng(cfg.seed + 1)
    mi_generator = torch.Generator().manual_seed(cfg.seed)

    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.json").write_text(json.dumps(cfg.to_dict(), indent=2))

    history: list[StepMetrics] = []
    val_rows: list[tuple[int, float]] = []
    best_dsc = -1.0
    step = 0
    n = len(train_ds)
    for epoch in range(cfg.epochs):
        order = order_rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            if len(idx) < 2:
                continue  # marginal shuffle needs at least a pair
            samples = [train_ds[int(i)] for i in idx]
            batch = batch_quadruples(samples, aug_rng, cfg.transform)
            metrics = train_step(bundle, optimizers, batch, cfg, mi_generator,
                                 step=step, epoch=epoch, history=history)
            history.append(metrics)
            step += 1

        if val_ds is not None and (epoch + 1) % cfg.val_every == 0:
            report = evaluate(bundle, val_ds)
            val_rows.append((epoch, report.mean_dsc))
            if report.mean_dsc > best_dsc:
                best_dsc = report.mean_dsc
                if out is not None:
                    bundle.save(out / "checkpoint_best.pt")

    if out is not None:
        bundle.save(out / "checkpoint_final.pt")
        _write_metrics_csv(out / "metrics.csv", history)
        with open(out / "val.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "mean_dsc"])
            for epoch, dsc in val_rows:
                writer.writerow([epoch, repr(dsc)])
    return bundle, history
