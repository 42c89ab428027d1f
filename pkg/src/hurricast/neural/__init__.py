"""From-scratch neural feature extractors: CNN encoder with GRU or
Transformer decoder, Adam training loop, gradient checking, checkpoints."""

from .checkpoint import (load_checkpoint, model_blocks, restore_params,
                         save_checkpoint)
from .layers import (BatchNorm2d, Conv2d, Dense, GRULayer, LayerNorm,
                     MaxPool2d, MeanPoolTime, MultiHeadSelfAttention,
                     Parameter, ReLU, positional_encoding, sinusoidal_positions)
from .losses import loss, loss_and_grad
from .networks import (CnnEncoder, CnnEncoderConfig, EncoderDecoderModel,
                       GruDecoder, GruDecoderConfig, TransformerDecoder,
                       TransformerDecoderConfig, cnn_encode, extract_embeddings,
                       gru_forward, transformer_forward)
from .optim import Adam, AdamState, adam_step
from .training import (LR_INTENSITY, LR_TRACK, TrainConfig, TrainingCurve,
                       build_model, train_encoder_decoder)

__all__ = [
    "Adam", "AdamState", "BatchNorm2d", "CnnEncoder", "CnnEncoderConfig",
    "Conv2d", "Dense", "EncoderDecoderModel", "GRULayer", "GruDecoder",
    "GruDecoderConfig", "LR_INTENSITY", "LR_TRACK", "LayerNorm", "MaxPool2d",
    "MeanPoolTime", "MultiHeadSelfAttention", "Parameter", "ReLU",
    "TrainConfig", "TrainingCurve", "TransformerDecoder",
    "TransformerDecoderConfig", "adam_step", "build_model", "cnn_encode",
    "extract_embeddings", "gru_forward", "load_checkpoint", "loss",
    "loss_and_grad", "model_blocks", "positional_encoding", "restore_params",
    "save_checkpoint", "sinusoidal_positions", "train_encoder_decoder",
    "transformer_forward",
]
