"""Adversarial (Wasserstein) training and the uniform-sampling baseline.

One epoch walks the shuffled training set in mini-batches. In adversarial
mode every mini-batch is one discriminator phase, and after each group of
``n_dis`` discriminator phases the generator takes one step; the batch list
wraps around so the ratio is exact.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .dataset import FilterIndex, build_filter_index
from .evaluation import evaluate_split
from .generator import Generator, GeneratorBatch, uniform_corrupt
from .models import ModelKind, SparseGrad, TKGEModel, build_model, lipschitz_enforce
from .numerics import NumericError, adagrad_step, rng_stream

log = logging.getLogger(__name__)

MODES = ("adversarial", "baseline")


class TrainingAborted(RuntimeError):
    """Raised after repeated non-finite epochs; carries the last good state."""

    def __init__(self, message, state):
        super().__init__(message)
        self.state = state


@dataclass
class TrainConfig:
    model: str = "ttranse"
    norm: str = "l1"
    de_fraction: float = 0.64
    dim: int = 100
    gen_dim: int | None = None
    lr_generator: float = 0.001
    lr_discriminator: float = 0.0001
    batch_size: int = 512
    epochs: int = 500
    n_dis: int = 5
    temperature: float = 0.5
    temperature_end: float | None = None
    clip: float | None = 0.01
    margin: float = 1.0
    mode: str = "adversarial"
    n_candidates: int = 512
    backbone: str = "ttranse"
    filter_false_negatives: bool = False
    valid_interval: int = 100
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        for name in ("lr_generator", "lr_discriminator", "temperature"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.clip is not None and not self.clip > 0:
            raise ValueError("clip must be positive (or None to disable)")
        if self.temperature_end is not None and not self.temperature_end > 0:
            raise ValueError("temperature_end must be positive")
        for name in ("batch_size", "n_dis", "dim", "n_candidates", "valid_interval", "workers"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.margin < 0:
            raise ValueError("margin must be >= 0")

    @property
    def kind(self) -> ModelKind:
        return ModelKind(self.model, self.norm, self.de_fraction)

    def temperature_at(self, epoch: int) -> float:
        if self.temperature_end is None or self.epochs <= 1:
            return self.temperature
        frac = (epoch - 1) / (self.epochs - 1)
        return self.temperature + (self.temperature_end - self.temperature) * frac

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


@dataclass
class TrainingData:
    train: np.ndarray
    n_entities: int
    n_relations: int
    n_buckets: int
    valid: np.ndarray | None = None
    filter_index: FilterIndex | None = None


@dataclass
class TrainState:
    epoch: int
    model: TKGEModel
    generator: Generator | None
    best_mrr: float | None = None
    best_epoch: int | None = None
    best_model: TKGEModel | None = None
    best_generator: Generator | None = None
    trace: list[dict] = field(default_factory=list)
    discriminator_phases: int = 0
    generator_phases: int = 0

    def final(self):
        """(model, generator) chosen by validation, or the latest ones."""
        if self.best_model is not None:
            return self.best_model, self.best_generator
        return self.model, self.generator


# -- losses --------------------------------------------------------------------

def d_output(model: TKGEModel, quads) -> np.ndarray:
    """Higher-is-more-real discriminator output."""
    return model.d_output(quads)


def discriminator_batch_loss(real, fake, model: TKGEModel):
    """Critic loss -(mean D(real) - mean D(fake)) and its parameter gradients."""
    real = np.atleast_2d(real)
    fake = np.atleast_2d(fake)
    if real.shape != fake.shape:
        raise ValueError("real and fake batches must have the same size")
    m = real.shape[0]
    sign = model.kind.orientation
    loss = -(d_output(model, real).mean() - d_output(model, fake).mean())
    if not np.isfinite(loss):
        raise NumericError(f"non-finite discriminator loss {loss}")
    grads, _ = model.score_gradients(real, upstream=-sign / m)
    fake_grads, _ = model.score_gradients(fake, upstream=sign / m)
    for name, chunks in fake_grads.parts.items():
        for rows, g in chunks:
            grads.add(name, rows, g)
    return float(loss), grads


def generator_batch_loss(batch: GeneratorBatch, model: TKGEModel, generator: Generator):
    """-mean D(soft fake); gradients flow to the generator only."""
    m = batch.quads.shape[0]
    sign = model.kind.orientation
    soft = (batch.corrupt_head, batch.candidates, batch.soft)
    out = sign * model.score_soft(batch.quads, *soft)
    loss = -out.mean()
    if not np.isfinite(loss):
        raise NumericError(f"non-finite generator loss {loss}")
    _, dweights = model.score_gradients(batch.quads, upstream=-sign / m, soft=soft)
    return float(loss), generator.gradients(batch, dweights)


def baseline_batch_loss(pos, neg, model: TKGEModel, margin: float):
    """Margin ranking for distance models, logistic for similarity models."""
    m = pos.shape[0]
    s_pos = model.score(pos)
    s_neg = model.score(neg)
    if model.kind.is_distance:
        viol = margin + s_pos - s_neg
        active = (viol > 0).astype(np.float64)
        loss = float((active * viol).mean())
        up_pos = active / m
        up_neg = -active / m
    else:
        loss = float((np.logaddexp(0, -s_pos) + np.logaddexp(0, s_neg)).mean())
        up_pos = -_sigmoid(-s_pos) / m
        up_neg = _sigmoid(s_neg) / m
    if not np.isfinite(loss):
        raise NumericError(f"non-finite baseline loss {loss}")
    grads, _ = model.score_gradients(pos, upstream=up_pos)
    neg_grads, _ = model.score_gradients(neg, upstream=up_neg)
    for name, chunks in neg_grads.parts.items():
        for rows, g in chunks:
            grads.add(name, rows, g)
    return loss, grads


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def apply_gradients(tables, grads: SparseGrad, lr: float):
    for name, (rows, g) in grads.coalesced().items():
        adagrad_step(tables[name], rows, g, lr)


# -- phases --------------------------------------------------------------------

def discriminator_phase(model, generator, positives, cfg: TrainConfig, rng, filter_index=None, temperature=None):
    """One critic update on hard generated negatives; generator untouched."""
    tau = cfg.temperature if temperature is None else temperature
    batch = generator.generate(positives, tau, cfg.n_candidates, rng, filter_index=filter_index)
    loss, grads = discriminator_batch_loss(positives, batch.negatives(), model)
    apply_gradients(model.tables, grads, cfg.lr_discriminator)
    if cfg.clip is not None:
        lipschitz_enforce(model, cfg.clip)
    model.normalize_constraints()
    return loss


def generator_phase(model, generator, positives, cfg: TrainConfig, rng, filter_index=None, temperature=None):
    """One generator update through soft mixtures; discriminator frozen."""
    tau = cfg.temperature if temperature is None else temperature
    batch = generator.generate(positives, tau, cfg.n_candidates, rng, filter_index=filter_index)
    loss, grads = generator_batch_loss(batch, model, generator)
    apply_gradients(generator.tables, grads, cfg.lr_generator)
    return loss


def baseline_phase(model, positives, cfg: TrainConfig, rng):
    negatives, _ = uniform_corrupt(positives, model.n_entities, rng)
    loss, grads = baseline_batch_loss(positives, negatives, model, cfg.margin)
    apply_gradients(model.tables, grads, cfg.lr_discriminator)
    model.normalize_constraints()
    return loss


# -- loops ---------------------------------------------------------------------

def init_state(data: TrainingData, cfg: TrainConfig) -> TrainState:
    init_rng = rng_stream(cfg.seed, "init")
    model = build_model(cfg.kind, data.n_entities, data.n_relations, data.n_buckets, cfg.dim, init_rng)
    model.normalize_constraints()
    generator = None
    if cfg.mode == "adversarial":
        gen_rng = rng_stream(cfg.seed, "init-generator")
        generator = Generator(
            data.n_entities, data.n_relations, data.n_buckets, cfg.gen_dim or cfg.dim, gen_rng, backbone=cfg.backbone
        )
    return TrainState(epoch=0, model=model, generator=generator)


def _validate(state: TrainState, data: TrainingData, cfg: TrainConfig):
    if data.valid is None or len(data.valid) == 0:
        return None
    mrr = evaluate_split(state.model, data.valid, data.filter_index, workers=cfg.workers).mrr
    if state.best_mrr is None or mrr > state.best_mrr:
        state.best_mrr = mrr
        state.best_epoch = state.epoch
        state.best_model = state.model.copy()
        state.best_generator = state.generator.copy() if state.generator is not None else None
    return mrr


def _epoch_batches(n: int, m: int, rng, multiple: int = 1):
    m = min(m, n)
    perm = rng.permutation(n)
    n_batches = math.ceil(n / m)
    n_batches = multiple * math.ceil(n_batches / multiple)
    for j in range(n_batches):
        yield perm[np.arange(j * m, (j + 1) * m) % n]


def _run(data: TrainingData, cfg: TrainConfig, epoch_fn, state: TrainState | None = None) -> TrainState:
    train = np.asarray(data.train, dtype=np.int64).reshape(-1, 4)
    if len(train) == 0:
        raise ValueError("training split is empty")
    state = state or init_state(data, cfg)
    streak = 0
    while state.epoch < cfg.epochs:
        epoch = state.epoch + 1
        snapshot = (state.model.copy(), state.generator.copy() if state.generator is not None else None)
        try:
            l_d, l_g = epoch_fn(state, epoch)
        except NumericError as exc:
            streak += 1
            log.warning("epoch %d aborted: %s", epoch, exc)
            state.model, state.generator = snapshot
            if streak > 3:
                raise TrainingAborted(f"{streak} consecutive non-finite epochs", state) from exc
            state.epoch = epoch
            state.trace.append({"epoch": epoch, "L_D": math.nan, "L_G": math.nan, "val_MRR": None})
            continue
        streak = 0
        state.epoch = epoch
        row = {"epoch": epoch, "L_D": l_d, "L_G": l_g, "val_MRR": None}
        if epoch % cfg.valid_interval == 0 or epoch == cfg.epochs:
            row["val_MRR"] = _validate(state, data, cfg)
        state.trace.append(row)
        log.info(
            "epoch %d  L_D=%.6g  L_G=%s  val_MRR=%s",
            epoch,
            l_d,
            "-" if l_g is None else f"{l_g:.6g}",
            "-" if row["val_MRR"] is None else f"{row['val_MRR']:.4f}",
        )
    return state


def adversarial_train(data: TrainingData, cfg: TrainConfig, state: TrainState | None = None) -> TrainState:
    if cfg.mode != "adversarial":
        cfg = replace(cfg, mode="adversarial")
    train = np.asarray(data.train, dtype=np.int64).reshape(-1, 4)
    batch_rng = rng_stream(cfg.seed, "batches")
    gen_rng = rng_stream(cfg.seed, "generator")
    # training facts only: held-out truths must not shape the negatives
    fidx = build_filter_index(train) if cfg.filter_false_negatives else None

    def epoch_fn(state, epoch):
        tau = cfg.temperature_at(epoch)
        d_losses, g_losses = [], []
        for j, idx in enumerate(_epoch_batches(len(train), cfg.batch_size, batch_rng, cfg.n_dis)):
            d_losses.append(discriminator_phase(state.model, state.generator, train[idx], cfg, gen_rng, fidx, tau))
            state.discriminator_phases += 1
            if (j + 1) % cfg.n_dis == 0:
                pos = train[batch_rng.integers(0, len(train), size=min(cfg.batch_size, len(train)))]
                g_losses.append(generator_phase(state.model, state.generator, pos, cfg, gen_rng, fidx, tau))
                state.generator_phases += 1
        return float(np.mean(d_losses)), float(np.mean(g_losses))

    return _run(data, cfg, epoch_fn, state)


def baseline_train(data: TrainingData, cfg: TrainConfig, state: TrainState | None = None) -> TrainState:
    if cfg.mode != "baseline":
        cfg = replace(cfg, mode="baseline")
    train = np.asarray(data.train, dtype=np.int64).reshape(-1, 4)
    batch_rng = rng_stream(cfg.seed, "batches")
    corrupt_rng = rng_stream(cfg.seed, "corruption")

    def epoch_fn(state, epoch):
        losses = [baseline_phase(state.model, train[idx], cfg, corrupt_rng) for idx in _epoch_batches(len(train), cfg.batch_size, batch_rng)]
        state.discriminator_phases += len(losses)
        return float(np.mean(losses)), None

    return _run(data, cfg, epoch_fn, state)


def train(data: TrainingData, cfg: TrainConfig) -> TrainState:
    tau = f"{cfg.temperature:g}" if cfg.temperature_end is None else f"{cfg.temperature:g}->{cfg.temperature_end:g}"
    log.info("%s training %s/%s: d=%d m=%d e=%d tau=%s seed=%d", cfg.mode, cfg.model, cfg.norm, cfg.dim, cfg.batch_size, cfg.epochs, tau, cfg.seed)
    return adversarial_train(data, cfg) if cfg.mode == "adversarial" else baseline_train(data, cfg)


def trace_csv(trace) -> str:
    lines = ["epoch,L_D,L_G,val_MRR"]
    for row in trace:
        cells = [str(row["epoch"])]
        for key in ("L_D", "L_G", "val_MRR"):
            v = row[key]
            cells.append("" if v is None else repr(float(v)))
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"
