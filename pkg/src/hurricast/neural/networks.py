"""Encoder-decoder forecasting networks and embedding extraction.

The CNN encoder turns each 9x25x25 map stack into a 128-vector; a GRU or
Transformer decoder consumes the 8-step sequence of [map embedding,
statistical features] and predicts the 24-hour target. The extractable
embedding is the second head layer's output (GRU path, 128) or the pooled
sequence representation (Transformer path, 142).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DimensionError, NotFrozenError
from .layers import (BatchNorm2d, Conv2d, Dense, Flatten, GRULayer, Layer,
                     LayerNorm, MaxPool2d, MeanPoolTime, MultiHeadSelfAttention,
                     Parameter, ReLU, sinusoidal_positions)


@dataclass
class CnnEncoderConfig:
    in_channels: int = 9
    input_hw: int = 25
    conv_channels: tuple[int, int, int] = (32, 64, 128)
    dense_hidden: int = 128
    embed_dim: int = 128
    conv_kernel: int = 3
    pool_kernel: int = 2


@dataclass
class GruDecoderConfig:
    hidden: int = 128
    layers: int = 2
    head_dims: tuple[int, int] = (512, 128)
    out_dim: int = 1  # 1 for intensity, 2 for track


@dataclass
class TransformerDecoderConfig:
    model_dim: int = 142
    layers: int = 2
    heads: int = 2
    ff_dim: int = 128
    out_dim: int = 1
    positional_encoding: bool = True


# spatial sizes through the default conv/pool stack for 25x25 inputs
EXPECTED_TRACE_25 = (25, 23, 11, 9, 4, 2, 1)


class CnnEncoder:
    def __init__(self, config: CnnEncoderConfig, rng: np.random.Generator):
        self.config = config
        c = config.in_channels
        hw = config.input_hw
        trace = [hw]
        self.layers: list[Layer] = []
        for i, width in enumerate(config.conv_channels):
            self.layers += [
                Conv2d(c, width, rng, kernel=config.conv_kernel, name=f"enc.conv{i + 1}"),
                BatchNorm2d(width, name=f"enc.bn{i + 1}"),
                ReLU(),
                MaxPool2d(config.pool_kernel),
            ]
            hw = hw - config.conv_kernel + 1
            trace.append(hw)
            hw = hw // config.pool_kernel
            trace.append(hw)
            c = width
        self.trace = tuple(trace)
        if self.config.input_hw == 25 and self.trace != EXPECTED_TRACE_25:
            raise DimensionError(
                f"conv/pool trace {self.trace} differs from expected {EXPECTED_TRACE_25}")
        if hw < 1:
            raise DimensionError(f"input {config.input_hw} collapses below 1 pixel: {trace}")
        flat = config.conv_channels[-1] * hw * hw
        self.layers += [
            Flatten(),
            Dense(flat, config.dense_hidden, rng, name="enc.fc1"),
            ReLU(),
            Dense(config.dense_hidden, config.embed_dim, rng, name="enc.fc2"),
        ]

    @property
    def embed_dim(self) -> int:
        return self.config.embed_dim

    def params(self) -> list[Parameter]:
        return [p for layer in self.layers for p in layer.params()]

    def forward(self, maps: np.ndarray, train: bool = True) -> np.ndarray:
        x = maps
        for layer in self.layers:
            x = layer.forward(x, train)
        return x

    def backward(self, dout: np.ndarray) -> np.ndarray:
        for layer in reversed(self.layers):
            dout = layer.backward(dout)
        return dout


def cnn_encode(encoder: CnnEncoder, maps: np.ndarray) -> np.ndarray:
    """Inference-mode embedding of one (9, 25, 25) map stack (or a batch)."""
    maps = np.asarray(maps, dtype=float)
    single = maps.ndim == 3
    if single:
        maps = maps[None]
    cfg = encoder.config
    if maps.shape[1:] != (cfg.in_channels, cfg.input_hw, cfg.input_hw):
        raise DimensionError(
            f"expected maps ({cfg.in_channels}, {cfg.input_hw}, {cfg.input_hw}), "
            f"got {maps.shape}")
    out = encoder.forward(maps, train=False)
    return out[0] if single else out


class GruDecoder:
    """Two GRU layers; all hidden states concatenated feed a 3-dense head."""

    def __init__(self, input_dim: int, seq_len: int, config: GruDecoderConfig,
                 rng: np.random.Generator):
        self.config = config
        self.seq_len = seq_len
        h = config.hidden
        self.grus = [GRULayer(input_dim if i == 0 else h, h, rng, name=f"dec.gru{i + 1}")
                     for i in range(config.layers)]
        concat = seq_len * h
        d1, d2 = config.head_dims
        self.fc1 = Dense(concat, d1, rng, name="dec.fc1")
        self.fc2 = Dense(d1, d2, rng, name="dec.fc2")
        self.fc3 = Dense(d2, config.out_dim, rng, name="dec.fc3")
        self.act1, self.act2 = ReLU(), ReLU()

    @property
    def embedding_dim(self) -> int:
        return self.config.head_dims[1]

    def params(self) -> list[Parameter]:
        out = [p for g in self.grus for p in g.params()]
        return out + self.fc1.params() + self.fc2.params() + self.fc3.params()

    def forward(self, seq: np.ndarray, train: bool = True):
        """Returns (prediction, hidden states (B, T, H), embedding (B, 128))."""
        if seq.ndim != 3 or seq.shape[1] != self.seq_len:
            raise DimensionError(f"expected (B, {self.seq_len}, input), got {seq.shape}")
        x = seq
        for gru in self.grus:
            x = gru.forward(x, train)
        hidden = x
        flat = hidden.reshape(hidden.shape[0], -1)
        self._flat_shape = hidden.shape
        a1 = self.act1.forward(self.fc1.forward(flat, train), train)
        emb = self.act2.forward(self.fc2.forward(a1, train), train)
        pred = self.fc3.forward(emb, train)
        return pred, hidden, emb

    def backward(self, dpred: np.ndarray) -> np.ndarray:
        d = self.fc3.backward(dpred)
        d = self.fc2.backward(self.act2.backward(d))
        d = self.fc1.backward(self.act1.backward(d))
        d = d.reshape(self._flat_shape)
        for gru in reversed(self.grus):
            d = gru.backward(d)
        return d


def gru_forward(decoder: GruDecoder, seq: np.ndarray):
    """Forward an (8, E+S) sequence (or batch) through the GRU decoder."""
    seq = np.asarray(seq, dtype=float)
    single = seq.ndim == 2
    if single:
        seq = seq[None]
    pred, hidden, emb = decoder.forward(seq, train=False)
    if single:
        return pred[0], hidden[0], emb[0]
    return pred, hidden, emb


class _FeedForward:
    def __init__(self, d: int, ff: int, rng: np.random.Generator, name: str):
        self.fc1 = Dense(d, ff, rng, name=f"{name}.ff1")
        self.fc2 = Dense(ff, d, rng, name=f"{name}.ff2")
        self.act = ReLU()

    def params(self):
        return self.fc1.params() + self.fc2.params()

    def forward(self, x, train=True):
        return self.fc2.forward(self.act.forward(self.fc1.forward(x, train), train), train)

    def backward(self, dout):
        return self.fc1.backward(self.act.backward(self.fc2.backward(dout)))


class _TransformerLayer:
    """Self-attention plus feed-forward, each with residual and layer norm."""

    def __init__(self, d: int, heads: int, ff: int, rng: np.random.Generator, name: str):
        self.attn = MultiHeadSelfAttention(d, heads, rng, name=f"{name}.attn")
        self.ln1 = LayerNorm(d, name=f"{name}.ln1")
        self.ffn = _FeedForward(d, ff, rng, name=name)
        self.ln2 = LayerNorm(d, name=f"{name}.ln2")

    def params(self):
        return (self.attn.params() + self.ln1.params()
                + self.ffn.params() + self.ln2.params())

    def forward(self, x, train=True):
        x = self.ln1.forward(x + self.attn.forward(x, train), train)
        return self.ln2.forward(x + self.ffn.forward(x, train), train)

    def backward(self, dout):
        d = self.ln2.backward(dout)
        d = d + self.ffn.backward(d)
        d = self.ln1.backward(d)
        return d + self.attn.backward(d)


class TransformerDecoder:
    """Projection to model dim, positional tokens, 2 self-attention layers,
    feature-wise mean pooling, one dense head."""

    def __init__(self, input_dim: int, seq_len: int, config: TransformerDecoderConfig,
                 rng: np.random.Generator):
        self.config = config
        self.seq_len = seq_len
        d = config.model_dim
        self.proj = Dense(input_dim, d, rng, name="dec.proj")
        self.layers = [_TransformerLayer(d, config.heads, config.ff_dim, rng,
                                         name=f"dec.layer{i + 1}")
                       for i in range(config.layers)]
        self.pool = MeanPoolTime()
        self.head = Dense(d, config.out_dim, rng, name="dec.head")
        self.positions = sinusoidal_positions(seq_len, d)

    @property
    def embedding_dim(self) -> int:
        return self.config.model_dim

    def params(self) -> list[Parameter]:
        out = self.proj.params()
        for layer in self.layers:
            out += layer.params()
        return out + self.head.params()

    def forward(self, seq: np.ndarray, train: bool = True):
        """Returns (prediction, pooled embedding (B, d), attention weights)."""
        if seq.ndim != 3 or seq.shape[1] != self.seq_len:
            raise DimensionError(f"expected (B, {self.seq_len}, input), got {seq.shape}")
        x = self.proj.forward(seq, train)
        if self.config.positional_encoding:
            x = x + self.positions[None, :, :]
        for layer in self.layers:
            x = layer.forward(x, train)
        pooled = self.pool.forward(x, train)
        pred = self.head.forward(pooled, train)
        attention = np.stack([layer.attn.last_attention for layer in self.layers])
        return pred, pooled, attention

    def backward(self, dpred: np.ndarray) -> np.ndarray:
        d = self.pool.backward(self.head.backward(dpred))
        for layer in reversed(self.layers):
            d = layer.backward(d)
        return self.proj.backward(d)


def transformer_forward(decoder: TransformerDecoder, seq: np.ndarray):
    """Forward an (8, E+S) sequence (or batch) through the Transformer decoder."""
    seq = np.asarray(seq, dtype=float)
    single = seq.ndim == 2
    if single:
        seq = seq[None]
    pred, pooled, attention = decoder.forward(seq, train=False)
    if single:
        return pred[0], pooled[0], attention[:, 0]
    return pred, pooled, attention


@dataclass
class EncoderDecoderModel:
    """CNN encoder plus one decoder, trained end to end then frozen."""

    encoder: CnnEncoder
    decoder: GruDecoder | TransformerDecoder
    decoder_kind: str  # "gru" | "transformer"
    frozen: bool = False
    # standardization of the regression target, fitted on the training split
    target_mean: np.ndarray = field(default_factory=lambda: np.zeros(1))
    target_std: np.ndarray = field(default_factory=lambda: np.ones(1))

    def params(self) -> list[Parameter]:
        return self.encoder.params() + self.decoder.params()

    @property
    def embedding_dim(self) -> int:
        return self.decoder.embedding_dim

    def forward(self, cubes: np.ndarray, stats: np.ndarray, train: bool = True):
        """Standardized-scale prediction plus the embedding, for a batch."""
        if cubes.ndim != 5:
            raise DimensionError(f"expected cubes (B, T, C, H, W), got {cubes.shape}")
        b, t = cubes.shape[:2]
        if stats.shape[:2] != (b, t):
            raise DimensionError(
                f"stats {stats.shape} misaligned with cubes {cubes.shape}")
        emb = self.encoder.forward(cubes.reshape((b * t,) + cubes.shape[2:]), train)
        self._bt = (b, t)
        seq = np.concatenate([emb.reshape(b, t, -1), stats], axis=2)
        self._stat_dim = stats.shape[2]
        if self.decoder_kind == "gru":
            pred, _, embedding = self.decoder.forward(seq, train)
        else:
            pred, embedding, _ = self.decoder.forward(seq, train)
        return pred, embedding

    def backward(self, dpred: np.ndarray) -> None:
        dseq = self.decoder.backward(dpred)
        demb = dseq[:, :, : dseq.shape[2] - self._stat_dim]
        b, t = self._bt
        self.encoder.backward(demb.reshape(b * t, -1))

    def freeze(self) -> None:
        """Quantize parameters to float32 values (matching the checkpoint
        format) and mark the model immutable."""
        for p in self.params():
            p.value[...] = p.value.astype(np.float32).astype(np.float64)
        self.frozen = True

    def predict(self, cubes: np.ndarray, stats: np.ndarray) -> np.ndarray:
        """De-standardized prediction in target units, inference mode."""
        pred, _ = self.forward(cubes, stats, train=False)
        return pred * self.target_std + self.target_mean


def extract_embeddings(model: EncoderDecoderModel, cubes: np.ndarray,
                       stats: np.ndarray) -> np.ndarray:
    """Embeddings for a batch of cases from a frozen model.

    GRU path: 128-vector from the second head layer; Transformer path:
    142-vector from the pooling layer.
    """
    if not model.frozen:
        raise NotFrozenError("extractor must be frozen before extracting embeddings")
    _, embedding = model.forward(cubes, stats, train=False)
    return embedding
