"""Encoder-decoder training loop: Adam, mini-batches, early stopping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError
from .losses import loss_and_grad
from .networks import (CnnEncoder, CnnEncoderConfig, EncoderDecoderModel,
                       GruDecoder, GruDecoderConfig, TransformerDecoder,
                       TransformerDecoderConfig)
from .optim import Adam

LR_INTENSITY = 1e-3
LR_TRACK = 4e-4


@dataclass
class TrainConfig:
    lr: float | None = None  # None: pick by target kind (1e-3 intensity, 4e-4 track)
    batch_size: int = 64
    l2: float = 0.01
    max_epochs: int = 30
    patience: int = 10
    seed: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if self.l2 < 0:
            raise ConfigError(f"l2 must be >= 0, got {self.l2}")
        if self.batch_size < 1 or self.max_epochs < 1:
            raise ConfigError("batch_size and max_epochs must be >= 1")


@dataclass
class TrainingCurve:
    train_loss: list[float] = field(default_factory=list)
    val_loss: list[float] = field(default_factory=list)
    best_epoch: int = -1
    diverged: bool = False


def build_model(decoder_kind: str, target_kind: str, stat_dim: int,
                encoder_config: CnnEncoderConfig, rng: np.random.Generator,
                seq_len: int = 8, gru_config: GruDecoderConfig | None = None,
                transformer_config: TransformerDecoderConfig | None = None,
                ) -> EncoderDecoderModel:
    out_dim = {"intensity": 1, "track": 2}.get(target_kind)
    if out_dim is None:
        raise ConfigError(f"target kind must be intensity or track, got {target_kind!r}")
    encoder = CnnEncoder(encoder_config, rng)
    input_dim = encoder.embed_dim + stat_dim
    if decoder_kind == "gru":
        cfg = gru_config or GruDecoderConfig()
        cfg.out_dim = out_dim
        decoder = GruDecoder(input_dim, seq_len, cfg, rng)
    elif decoder_kind == "transformer":
        cfg = transformer_config or TransformerDecoderConfig()
        cfg.out_dim = out_dim
        decoder = TransformerDecoder(input_dim, seq_len, cfg, rng)
    else:
        raise ConfigError(f"decoder kind must be gru or transformer, got {decoder_kind!r}")
    return EncoderDecoderModel(encoder=encoder, decoder=decoder, decoder_kind=decoder_kind)


def train_encoder_decoder(train_cubes: np.ndarray, train_stats: np.ndarray,
                          train_targets: np.ndarray, val_cubes: np.ndarray,
                          val_stats: np.ndarray, val_targets: np.ndarray,
                          decoder_kind: str, target_kind: str,
                          config: TrainConfig,
                          encoder_config: CnnEncoderConfig | None = None,
                          gru_config: GruDecoderConfig | None = None,
                          transformer_config: TransformerDecoderConfig | None = None,
                          ) -> tuple[EncoderDecoderModel, TrainingCurve]:
    """Train on standardized inputs, early-stop on validation loss, freeze.

    Targets are standardized internally (training-set statistics); the
    parameters at the best validation epoch are restored before freezing.
    If the loss turns non-finite the loop aborts and the best finite epoch
    is kept, with the curve flagged diverged.
    """
    if len(train_targets) == 0 or len(val_targets) == 0:
        raise ConfigError("training and validation sets must be non-empty")
    rng = np.random.default_rng(config.seed)
    model = build_model(decoder_kind, target_kind, train_stats.shape[2],
                        encoder_config or CnnEncoderConfig(), rng,
                        seq_len=train_stats.shape[1], gru_config=gru_config,
                        transformer_config=transformer_config)

    t_targets = np.asarray(train_targets, dtype=float).reshape(len(train_targets), -1)
    v_targets = np.asarray(val_targets, dtype=float).reshape(len(val_targets), -1)
    model.target_mean = t_targets.mean(axis=0)
    model.target_std = t_targets.std(axis=0)
    model.target_std[model.target_std == 0.0] = 1.0
    y_train = (t_targets - model.target_mean) / model.target_std
    y_val = (v_targets - model.target_mean) / model.target_std

    lr = config.lr if config.lr is not None else (
        LR_INTENSITY if target_kind == "intensity" else LR_TRACK)
    optimizer = Adam(model.params(), lr, config.beta1, config.beta2, config.eps)
    curve = TrainingCurve()
    best_val = np.inf
    best_state: list[np.ndarray] | None = None
    since_best = 0
    n = len(y_train)

    for epoch in range(config.max_epochs):
        order = rng.permutation(n)
        epoch_loss = 0.0
        finite = True
        for start in range(0, n, config.batch_size):
            idx = order[start:start + config.batch_size]
            optimizer.zero_grads()
            pred, _ = model.forward(train_cubes[idx], train_stats[idx], train=True)
            value, dpred = loss_and_grad(pred, y_train[idx], model.params(), config.l2)
            if not np.isfinite(value):
                finite = False
                break
            model.backward(dpred)
            if any(not np.all(np.isfinite(p.grad)) for p in model.params()):
                finite = False
                break
            optimizer.step()
            epoch_loss += value * len(idx)
        if not finite:
            curve.diverged = True
            break
        curve.train_loss.append(epoch_loss / n)
        val = _validation_loss(model, val_cubes, val_stats, y_val, config.batch_size)
        curve.val_loss.append(val)
        if not np.isfinite(val):
            curve.diverged = True
            break
        if val < best_val:
            best_val = val
            best_state = [p.value.copy() for p in model.params()]
            curve.best_epoch = epoch
            since_best = 0
        else:
            since_best += 1
            if since_best >= config.patience:
                break

    if best_state is not None:
        for p, value in zip(model.params(), best_state):
            p.value[...] = value
    model.freeze()
    return model, curve


def _validation_loss(model: EncoderDecoderModel, cubes: np.ndarray, stats: np.ndarray,
                     y: np.ndarray, batch_size: int) -> float:
    total = 0.0
    for start in range(0, len(y), batch_size):
        sl = slice(start, start + batch_size)
        pred, _ = model.forward(cubes[sl], stats[sl], train=False)
        total += float(np.sum((pred - y[sl]) ** 2))
    return total / y.size
