"""Hierarchical (U-Net style) Transformer encoder-decoder on a small numpy autodiff engine."""
from .config import DataConfig, RunConfig, load_config
from .data import Batch, Dataset, Example, Vocab, load_data, make_batch
from .decoding import beam_search, greedy_decode
from .encoder import Encoder, LayerSpec, build_schedule, level_lengths, propagate_pad
from .metrics import bleu, perplexity
from .models import ModelConfig, S2SAModel, Seq2SeqModel, build_model
from .tensor import Tensor, backward, grad_check, make_rng, no_grad, precision
from .train import TrainConfig, evaluate, load_model, train_loop

__version__ = "0.1.0"

__all__ = [
    "Batch", "DataConfig", "Dataset", "Encoder", "Example", "LayerSpec", "ModelConfig", "RunConfig",
    "S2SAModel", "Seq2SeqModel", "Tensor", "TrainConfig", "Vocab", "backward", "beam_search", "bleu",
    "build_model", "build_schedule", "evaluate", "grad_check", "greedy_decode", "level_lengths",
    "load_config", "load_data", "load_model", "make_batch", "make_rng", "no_grad", "perplexity",
    "precision", "propagate_pad", "train_loop",
]
