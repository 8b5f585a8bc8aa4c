"""Minimal reverse-mode autodiff engine and the CNN / TCN decoders."""

from . import functional
from .checkpoint import load_checkpoint, load_state_dict, save_checkpoint, state_dict
from .models import CNN, TCN, CnnConfig, Module, TcnConfig, build_model, predict_logits
from .tensor import Parameter, Tensor, no_grad
