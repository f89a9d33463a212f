"""Training loops and the pre-train / convert / fine-tune pipeline."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .device import DeviceSpec
from .network import ModelGraph, convert_to_analog, cross_entropy, replace_head
from .rng import derive_seed
from .tasks import Dataset, batches
from .tile import UpdateMode
from .trainers import Trainer, TransferConfig

__all__ = [
    "FINETUNE_MODES",
    "AnalogSetup",
    "NonFiniteLossError",
    "evaluate",
    "train",
    "finetune",
]

FINETUNE_MODES = ("digital_tl", "analog_tl", "digital_scratch", "analog_scratch")


class NonFiniteLossError(FloatingPointError):
    pass


@dataclass
class AnalogSetup:
    """Everything needed to put a digital model onto tiles."""

    device: DeviceSpec
    tau: float = 0.0
    tau_relative: bool = True
    update_mode: str = "pulsed"
    bit_length: int = 31
    out_noise_std: float = 0.0
    read_noise_std: float = 0.0

    def mode(self) -> UpdateMode:
        return UpdateMode(self.update_mode, self.bit_length)

    def convert(self, model: ModelGraph, seed: int) -> ModelGraph:
        return convert_to_analog(
            model, self.device, self.tau, seed, tau_relative=self.tau_relative,
            update_mode=self.mode(), out_noise_std=self.out_noise_std,
            read_noise_std=self.read_noise_std,
        )


def evaluate(model: ModelGraph, data: Dataset, batch_size: int = 256) -> tuple[float, float]:
    """Classification error in percent and mean cross-entropy."""
    wrong, loss_sum = 0, 0.0
    for start in range(0, len(data), batch_size):
        X = data.X[start:start + batch_size]
        y = data.y[start:start + batch_size]
        logits = model.forward(X)
        loss, _ = cross_entropy(logits, y)
        loss_sum += loss * len(y)
        wrong += int(np.sum(np.argmax(logits, axis=1) != y))
    return 100.0 * wrong / len(data), loss_sum / len(data)


def train(model: ModelGraph, trainer: Trainer, train_data: Dataset, epochs: int, seed: int,
          test_data: Dataset | None = None, jitter_std: float = 0.0):
    """Run ``epochs`` passes; return per-epoch rows ``(epoch, split, error, loss)``.

    The train row reports the running loss and error over the epoch's batches.
    """
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    trainer.attach(model)
    bs = trainer.cfg.batch_size
    rows = []
    for epoch in range(1, epochs + 1):
        wrong, loss_sum = 0, 0.0
        for X, y in batches(train_data, bs, derive_seed(seed, epoch), jitter_std):
            logits = model.forward(X)
            loss, grad = cross_entropy(logits, y)
            if not math.isfinite(loss):
                raise NonFiniteLossError(f"loss became {loss} in epoch {epoch}")
            model.backward(grad)
            trainer.step(model)
            loss_sum += loss * len(y)
            wrong += int(np.sum(np.argmax(logits, axis=1) != y))
        if not all(np.isfinite(p).all() for _, p in model.named_params()):
            # dead units can keep the loss finite while weights have blown up
            raise NonFiniteLossError(f"parameters became non-finite in epoch {epoch}")
        rows.append((epoch, "train", 100.0 * wrong / len(train_data), loss_sum / len(train_data)))
        if test_data is not None:
            err, loss = evaluate(model, test_data)
            rows.append((epoch, "test", err, loss))
    return rows


def finetune(mode: str, train_data: Dataset, test_data: Dataset, epochs: int, seed: int, *,
             pretrained: ModelGraph | None, scratch_builder, analog: AnalogSetup,
             trainer_kind: str = "cttv2", cfg: TransferConfig | None = None):
    """One fine-tuning run.

    TL modes start from ``pretrained`` with a new head sized for
    ``train_data``; scratch modes call ``scratch_builder(seed)`` and ignore any
    checkpoint. Analog modes convert once (transfer noise applied once) and
    train with ``trainer_kind``; digital modes use SGD.
    Returns ``(model, rows)``.
    """
    if mode not in FINETUNE_MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {FINETUNE_MODES}")
    cfg = cfg or TransferConfig()
    if mode.endswith("_tl"):
        if pretrained is None:
            raise ValueError(f"mode {mode} needs a pre-trained model")
        model = replace_head(pretrained, train_data.n_classes, init_seed=derive_seed(seed, 0x4EAD))
    else:
        model = scratch_builder(derive_seed(seed, 0x5C))
    if mode.startswith("analog"):
        model = analog.convert(model, derive_seed(seed, 0xC0))
        trainer = Trainer(trainer_kind, cfg, seed=derive_seed(seed, 0x7A))
    else:
        trainer = Trainer("digital_sgd", cfg, seed=derive_seed(seed, 0x7A))
    rows = train(model, trainer, train_data, epochs, derive_seed(seed, 0xE9), test_data)
    return model, rows
