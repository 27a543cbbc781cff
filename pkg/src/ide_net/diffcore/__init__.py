"""Small reverse-mode autodiff core (float64, numpy-backed)."""
from . import ops
from .attention import multi_head_attention
from .gradcheck import check_gradients
from .nn import LSTM, MLP, Dropout, LayerNorm, Linear, Module, MultiHeadSelfAttention
from .optim import AdamW, OptimizerState, adamw_step, clip_grad_norm, warmup_factor
from .recurrent import lstm_sequence
from .tensor import ShapeMismatch, Tensor, as_tensor, zero_grad

__all__ = [
    "AdamW",
    "Dropout",
    "LSTM",
    "LayerNorm",
    "Linear",
    "MLP",
    "Module",
    "MultiHeadSelfAttention",
    "OptimizerState",
    "ShapeMismatch",
    "Tensor",
    "adamw_step",
    "as_tensor",
    "check_gradients",
    "clip_grad_norm",
    "lstm_sequence",
    "multi_head_attention",
    "ops",
    "warmup_factor",
    "zero_grad",
]
