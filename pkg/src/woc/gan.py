"""Swap discriminator, accuracy-gated schedule, and the training loop.

The discriminator sees a target and its reconstruction jointly: the two
images are channel-concatenated in randomized slot order and it predicts
which slot holds the target. Scalar branch outputs taken at several trunk
depths are averaged before the terminal sigmoid. Whether a step trains the
discriminator, propagates confusion signal into the reconstructor, or
alternates, is gated by a running accuracy estimate between two bounds.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field

import numpy as np

from . import acr as acr_mod
from . import autodiff as ad
from . import metrics, pyramid
from .autodiff import ParameterSet, Tensor
from .coder import estimate_codelength
from .quantize import QuantizedTensor, bitplane_decompose, quantize


class TrainMode(enum.Enum):
    DISCRIMINATOR_ONLY = "disc"
    ALTERNATE = "alt"
    GENERATOR_ONLY = "gen"


@dataclass
class SchedulerConfig:
    lower: float = 0.8
    upper: float = 0.95
    accuracy_momentum: float = 0.8

    def __post_init__(self):
        if not 0.0 <= self.lower < self.upper <= 1.0:
            raise ValueError("need 0 <= lower < upper <= 1")
        if not 0.0 <= self.accuracy_momentum < 1.0:
            raise ValueError("momentum must lie in [0, 1)")


@dataclass
class SchedulerState:
    accuracy: float = 0.5


def scheduler_decide(accuracy: float, config: SchedulerConfig) -> TrainMode:
    """Three-way gate on the running discriminator accuracy."""
    if not 0.0 <= accuracy <= 1.0:
        raise ValueError(f"accuracy must lie in [0,1], got {accuracy}")
    if accuracy < config.lower:
        return TrainMode.DISCRIMINATOR_ONLY
    if accuracy < config.upper:
        return TrainMode.ALTERNATE
    return TrainMode.GENERATOR_ONLY


def update_accuracy(
    state: SchedulerState, batch_accuracy: float, momentum: float
) -> SchedulerState:
    if not 0.0 <= batch_accuracy <= 1.0:
        raise ValueError("batch accuracy must lie in [0,1]")
    a = momentum * state.accuracy + (1.0 - momentum) * batch_accuracy
    return SchedulerState(accuracy=a)


@dataclass
class DiscConfig:
    in_channels: int = 6          # channel-concatenated image pair
    widths: tuple = (16, 32, 32)  # trunk depth = branch count
    leak: float = 0.2

    def __post_init__(self):
        if len(self.widths) < 2:
            raise ValueError("need at least two branch depths")


@dataclass
class Discriminator:
    config: DiscConfig
    params: ParameterSet = field(repr=False)

    @property
    def branch_count(self) -> int:
        return len(self.config.widths)


def build_discriminator(config: DiscConfig | None = None, seed: int = 0) -> Discriminator:
    if config is None:
        config = DiscConfig()
    rng = np.random.default_rng(seed)
    p = ParameterSet()
    cin = config.in_channels
    for i, width in enumerate(config.widths):
        fan = cin * 16
        std = math.sqrt(2.0 / ((1.0 + config.leak**2) * fan))
        p.add(f"disc/t{i}/w", rng.normal(0.0, std, (width, cin, 4, 4)).astype(np.float32))
        p.add(f"disc/t{i}/b", np.zeros((width, 1, 1), dtype=np.float32))
        p.add(
            f"disc/b{i}/w",
            rng.normal(0.0, 1.0 / math.sqrt(width), (1, width, 1, 1)).astype(np.float32),
        )
        p.add(f"disc/b{i}/b", np.zeros((1, 1, 1), dtype=np.float32))
        cin = width
    return Discriminator(config=config, params=p)


def random_swap(target: Tensor, reconstruction: Tensor, rng: np.random.Generator):
    """Channel-concatenate the pair in randomized slot order, per batch item.

    Returns (pair, labels); labels[i] == 1 means slot 0 of item i holds the
    target. Gradients flow through the reconstruction into both slots.
    """
    if target.shape != reconstruction.shape:
        raise ad.ShapeError(
            f"pair shapes differ: {target.shape} vs {reconstruction.shape}"
        )
    single = target.ndim == 3
    if single:
        target = ad.reshape(target, (1,) + target.shape)
        reconstruction = ad.reshape(reconstruction, (1,) + reconstruction.shape)
    n = target.shape[0]
    labels = rng.integers(0, 2, size=n).astype(np.int64)
    mask = Tensor(labels.reshape(n, 1, 1, 1).astype(np.float32))
    inv = Tensor((1.0 - labels.reshape(n, 1, 1, 1)).astype(np.float32))
    slot0 = mask * target + inv * reconstruction
    slot1 = mask * reconstruction + inv * target
    pair = ad.concat([slot0, slot1], axis=1)
    return pair, labels


def discriminator_logit(pair: Tensor, disc: Discriminator) -> Tensor:
    """Mean of per-depth branch scalars, before the sigmoid; shape (N,)."""
    cfg = disc.config
    if pair.ndim == 3:
        pair = ad.reshape(pair, (1,) + pair.shape)
    if pair.shape[1] != cfg.in_channels:
        raise ad.ShapeError(
            f"pair has {pair.shape[1]} channels, discriminator expects {cfg.in_channels}"
        )
    t = pair
    branches = []
    for i in range(len(cfg.widths)):
        t = ad.leaky_relu(
            ad.conv2d(t, disc.params[f"disc/t{i}/w"], 2, 1) + disc.params[f"disc/t{i}/b"],
            cfg.leak,
        )
        b = ad.conv2d(t, disc.params[f"disc/b{i}/w"], 1, 0) + disc.params[f"disc/b{i}/b"]
        branches.append(ad.tmean(b, axis=(1, 2, 3)))  # (N,)
    total = branches[0]
    for b in branches[1:]:
        total = total + b
    return total * (1.0 / len(branches))


def discriminator_score(pair: Tensor, disc: Discriminator) -> Tensor:
    """Probability that slot 0 holds the target."""
    return ad.sigmoid(discriminator_logit(pair, disc))


def bce_with_logits(logits: Tensor, labels: np.ndarray) -> Tensor:
    """Mean binary cross-entropy: -[y log s + (1-y) log(1-s)], stable form."""
    y = Tensor(labels.astype(np.float32))
    return ad.tmean(ad.softplus(logits) - y * logits)


def batch_accuracy(scores: np.ndarray, labels: np.ndarray) -> float:
    predictions = (np.asarray(scores) > 0.5).astype(np.int64)
    return float(np.mean(predictions == labels))


def balance_gradients(
    rec_grads: dict[str, np.ndarray],
    adv_grads: dict[str, np.ndarray],
    ratio: float = 1.0,
) -> dict[str, np.ndarray]:
    """Rescale the adversarial gradient set to `ratio` times the reconstruction
    gradient's global L2 norm, then sum. A zero adversarial norm passes through
    unscaled."""
    if set(rec_grads) != set(adv_grads):
        raise ValueError("gradient sets cover different parameters")

    def norm(grads):
        return math.sqrt(sum(float(np.sum(g.astype(np.float64) ** 2)) for g in grads.values()))

    rec_norm = norm(rec_grads)
    adv_norm = norm(adv_grads)
    scale = 1.0 if adv_norm == 0.0 else ratio * rec_norm / adv_norm
    return {k: rec_grads[k] + scale * adv_grads[k] for k in rec_grads}


# ---------------------------------------------------------------------------
# Training loop
# ---------------------------------------------------------------------------


class TrainingDiverged(RuntimeError):
    """Loss became non-finite; carries the diagnostic snapshot path."""

    def __init__(self, message: str, snapshot: str | None):
        super().__init__(message)
        self.snapshot = snapshot


@dataclass
class TrainerConfig:
    iterations: int = 3000
    batch_size: int = 16                 # paper default; desk runs override
    patch_size: int = 64
    lr: float = 3e-4                     # paper initial rate
    lr_drop_points: tuple = (0.5, 0.75)  # two reductions during training
    lr_drop_factor: float = 5.0
    adversarial_weight: float = 0.0      # balance ratio; 0 disables the GAN path
    acr_enabled: bool = True
    msssim_scales: int = 3
    seed: int = 0
    log_path: str | None = None
    acr_log_path: str | None = None
    checkpoint_every: int = 0
    checkpoint_path: str | None = None
    snapshot_path: str | None = None     # written on divergence


@dataclass
class TrainResult:
    model: pyramid.CodecModel
    discriminator: Discriminator | None
    rows: list[dict]
    acr_state: acr_mod.AcrState
    scheduler_state: SchedulerState


LOG_COLUMNS = ["iteration", "rec_loss", "ms_ssim", "mean_bits", "alpha", "disc_accuracy", "mode"]
ACR_LOG_COLUMNS = ["iteration", "alpha", "mean_bits", "target_bits"]


def _mean_codelength(levels: np.ndarray, bits: int) -> float:
    """Mean per-item estimated codelength of a batch of quantized tensors."""
    total = 0.0
    for i in range(levels.shape[0]):
        q = QuantizedTensor(levels=levels[i], bits=bits, real=Tensor(np.zeros(1)))
        total += estimate_codelength(bitplane_decompose(q))
    return total / levels.shape[0]


def _write_csv(path: str, columns: list[str], rows: list[dict]) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns, extrasaction="ignore")
        writer.writeheader()
        writer.writerows(rows)


def train_loop(
    dataset,
    model: pyramid.CodecModel,
    disc: Discriminator | None,
    acr_config: acr_mod.AcrConfig,
    sched_config: SchedulerConfig,
    hyper: TrainerConfig,
    acr_state: acr_mod.AcrState | None = None,
) -> TrainResult:
    """Optimize the codec (and optionally the discriminator) on patch batches.

    Per iteration: encode, quantize, regularize, synthesize, score 1-MS-SSIM,
    then per the scheduler either train the discriminator on swapped pairs or
    propagate confusion signal into the reconstructor with gradient balancing;
    finally fold the batch's estimated codelength into the alpha feedback loop.
    """
    rng = np.random.default_rng(hyper.seed)
    state = acr_state if acr_state is not None else acr_mod.AcrState()
    sched_state = SchedulerState()
    ms_cfg = metrics.MsSsimConfig.train_default(hyper.msssim_scales)
    adversarial = hyper.adversarial_weight > 0.0 and disc is not None
    drops = sorted(int(f * hyper.iterations) for f in hyper.lr_drop_points)
    rows: list[dict] = []
    acr_rows: list[dict] = []

    for it in range(hyper.iterations):
        lr = hyper.lr / (hyper.lr_drop_factor ** sum(1 for d in drops if it >= d))
        batch = dataset.sample(rng, hyper.batch_size, hyper.patch_size)
        x = Tensor(batch)

        decision_accuracy = sched_state.accuracy
        mode = scheduler_decide(decision_accuracy, sched_config) if adversarial else None
        train_disc = adversarial and (
            mode is TrainMode.DISCRIMINATOR_ONLY
            or (mode is TrainMode.ALTERNATE and it % 2 == 0)
        )
        train_gen_adv = adversarial and (
            mode is TrainMode.GENERATOR_ONLY
            or (mode is TrainMode.ALTERNATE and it % 2 == 1)
        )

        with ad.Tape() as tape:
            y = pyramid.encode_features(x, model)
            q = quantize(y, model.bits)
            x_hat = pyramid.synthesize(q.real, model)
            quality = metrics.ms_ssim_diff(x, x_hat, ms_cfg)
            rec_loss = 1.0 - quality
            loss = rec_loss
            if hyper.acr_enabled:
                loss = loss + acr_mod.acr_penalty(q.real, state.alpha, acr_config)
            adv_loss = None
            swap_labels = None
            if train_gen_adv:
                pair, swap_labels = random_swap(x, x_hat, rng)
                logit = discriminator_logit(pair, disc)
                adv_loss = bce_with_logits(logit, 1 - swap_labels)  # confuse: wrong slot
                gen_scores = ad.sigmoid(logit).data

        loss_value = float(loss.data)
        if not np.isfinite(loss_value):
            snapshot = hyper.snapshot_path
            if snapshot:
                np.savez(
                    snapshot,
                    batch=batch,
                    iteration=it,
                    **{k: t.data for k, t in model.params.items()},
                )
            raise TrainingDiverged(
                f"non-finite loss {loss_value} at iteration {it}", snapshot
            )

        model.params.zero_grad()
        ad.backward(loss, tape)
        rec_grads = model.params.grads()

        measured_acc = None
        if train_gen_adv:
            model.params.zero_grad()
            disc.params.zero_grad()
            ad.backward(adv_loss, tape)
            adv_grads = model.params.grads()
            disc.params.zero_grad()  # confusion never updates the discriminator
            combined = balance_gradients(rec_grads, adv_grads, hyper.adversarial_weight)
            model.params.set_grads(combined)
            measured_acc = batch_accuracy(gen_scores, swap_labels)
        else:
            model.params.set_grads(rec_grads)
        ad.adam_step(model.params, lr)

        if train_disc:
            x_const = x.detach()
            recon_const = x_hat.detach()
            with ad.Tape() as dtape:
                dpair, dlabels = random_swap(x_const, recon_const, rng)
                dlogit = discriminator_logit(dpair, disc)
                dloss = bce_with_logits(dlogit, dlabels)
            disc.params.zero_grad()
            ad.backward(dloss, dtape)
            ad.adam_step(disc.params, lr)
            measured_acc = batch_accuracy(ad.sigmoid(dlogit).data, dlabels)

        if adversarial and measured_acc is not None:
            sched_state = update_accuracy(
                sched_state, measured_acc, sched_config.accuracy_momentum
            )

        if hyper.acr_enabled:
            measured_bits = _mean_codelength(q.levels, model.bits)
            state = acr_mod.update_alpha(state, measured_bits, acr_config)

        rows.append(
            {
                "iteration": it,
                "rec_loss": float(rec_loss.data),
                "ms_ssim": float(quality.data),
                "mean_bits": state.mean_bits if hyper.acr_enabled else float("nan"),
                "alpha": state.alpha if hyper.acr_enabled else 0.0,
                "disc_accuracy": decision_accuracy if adversarial else float("nan"),
                "mode": mode.value if mode is not None else "off",
            }
        )
        if hyper.acr_enabled:
            acr_rows.append(
                {
                    "iteration": it,
                    "alpha": state.alpha,
                    "mean_bits": state.mean_bits,
                    "target_bits": acr_config.target_bits,
                }
            )

        if (
            hyper.checkpoint_every
            and hyper.checkpoint_path
            and (it + 1) % hyper.checkpoint_every == 0
        ):
            with open(hyper.checkpoint_path, "wb") as fh:
                pyramid.save_model(model, fh)

    if hyper.log_path:
        _write_csv(hyper.log_path, LOG_COLUMNS, rows)
    if hyper.acr_log_path and acr_rows:
        _write_csv(hyper.acr_log_path, ACR_LOG_COLUMNS, acr_rows)

    return TrainResult(
        model=model,
        discriminator=disc,
        rows=rows,
        acr_state=state,
        scheduler_state=sched_state,
    )
