"""RMSProp, plain SGD, and the epoch/minibatch training loop.

RMSProp keeps one running second-moment accumulator per parameter:

    v <- rho * v + (1 - rho) * g^2
    theta <- theta - lr * g / (sqrt(v) + eps)

eps sits outside the square root. Updates are in place so that arrays
shared between the flat parameter list and batchnorm state stay one object.

The training loop owns two independent draw streams derived from the run
seed: "shuffle" for epoch permutations and "dropout" for mask draws. With
shuffling off neither the shuffle stream nor (at rate 0) the dropout stream
is consumed, so a hand-rolled forward/backward/step loop over the same
batches reproduces fit() bit for bit.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .model import Model, model_backward, model_forward
from .tensor import RngState, stage_seed


class TrainingDivergedError(RuntimeError):
    """Loss went non-finite; carries the epoch and batch where it happened."""


@dataclass
class RmsPropState:
    lr: float = 1e-3
    rho: float = 0.9
    eps: float = 1e-8
    cache: list = field(default_factory=list)

    def validate(self):
        if self.lr <= 0:
            raise ValueError(f"lr must be > 0, got {self.lr}")
        if not 0.0 <= self.rho < 1.0:
            raise ValueError(f"rho must be in [0, 1), got {self.rho}")
        if self.eps <= 0:
            raise ValueError(f"eps must be > 0, got {self.eps}")


def rmsprop_step(params: list, grads: list, state: RmsPropState):
    """One in-place RMSProp update over parallel param/grad lists."""
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} params but {len(grads)} grads")
    if not state.cache:
        state.validate()
        state.cache = [np.zeros_like(p) for p in params]
    if len(state.cache) != len(params):
        raise ValueError("optimizer state built for a different parameter list")
    for p, g, v in zip(params, grads, state.cache):
        if p.shape != g.shape:
            raise ValueError(f"param shape {p.shape} vs grad shape {g.shape}")
        v *= state.rho
        v += (1.0 - state.rho) * np.square(g)
        p -= state.lr * g / (np.sqrt(v) + state.eps)


def sgd_step(params: list, grads: list, lr: float):
    if len(params) != len(grads):
        raise ValueError(f"{len(params)} params but {len(grads)} grads")
    for p, g in zip(params, grads):
        p -= lr * g


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    lr: float = 1e-3
    rho: float = 0.9
    eps: float = 1e-8
    shuffle: bool = True
    seed: int = 42

    def validate(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be >= 1, got {self.batch_size}")


def evaluate(model: Model, x, y, batch_size: int = 128) -> tuple[float, float]:
    """Mean cross-entropy and accuracy over a labelled set, in infer mode."""
    if len(x) == 0:
        raise ValueError("cannot evaluate an empty set")
    prev = model.mode
    model.set_mode("infer")
    try:
        total_loss = 0.0
        correct = 0
        for start in range(0, len(x), batch_size):
            xb = x[start:start + batch_size]
            yb = y[start:start + batch_size]
            result = model_forward(model, xb, yb)
            total_loss += result.loss * len(xb)
            correct += int((result.probs.argmax(axis=1) == yb).sum())
    finally:
        model.set_mode(prev)
    return total_loss / len(x), correct / len(x)


def fit(model: Model, x, y, config: TrainConfig,
        val_x=None, val_y=None, log=None) -> list[dict]:
    """Minibatch training; returns one history dict per epoch with the mean
    train loss and, when a validation set is given, val loss/accuracy.
    Non-finite loss raises TrainingDivergedError."""
    config.validate()
    if len(x) != len(y):
        raise ValueError(f"{len(x)} samples but {len(y)} labels")
    if len(x) == 0:
        raise ValueError("cannot train on an empty set")
    if (val_x is None) != (val_y is None):
        raise ValueError("validation needs both val_x and val_y")

    model.set_mode("train")
    opt = RmsPropState(lr=config.lr, rho=config.rho, eps=config.eps)
    shuffle_rng = RngState(stage_seed(config.seed, "shuffle"))
    dropout_rng = RngState(stage_seed(config.seed, "dropout"))
    n = len(x)
    history = []
    for _ in range(config.epochs):
        t0 = time.monotonic()
        order = shuffle_rng.permutation(n) if config.shuffle else np.arange(n)
        batch_losses = []
        correct = 0
        for bi, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            yb = y[idx]
            result = model_forward(model, x[idx], yb, rng=dropout_rng)
            if not np.isfinite(result.loss):
                raise TrainingDivergedError(
                    f"loss {result.loss} at epoch {model.epochs_trained + 1} "
                    f"batch {bi + 1}")
            correct += int((result.probs.argmax(axis=1) == yb).sum())
            grads = model_backward(model, result)
            rmsprop_step(model.params, grads, opt)
            batch_losses.append(result.loss)
        model.epochs_trained += 1
        stats = {
            "epoch": model.epochs_trained,
            "loss": float(np.mean(batch_losses)),
            "acc": correct / n,
            "seconds": time.monotonic() - t0,
        }
        if val_x is not None:
            stats["val_loss"], stats["val_acc"] = evaluate(
                model, val_x, val_y, batch_size=config.batch_size)
        history.append(stats)
        if log is not None:
            parts = [f"epoch {stats['epoch']:3d}", f"loss {stats['loss']:.4f}",
                     f"acc {stats['acc']:.4f}"]
            if "val_acc" in stats:
                parts += [f"val_loss {stats['val_loss']:.4f}",
                          f"val_acc {stats['val_acc']:.4f}"]
            parts.append(f"{stats['seconds']:.1f}s")
            log("  ".join(parts))
    model.set_mode("infer")
    return history
