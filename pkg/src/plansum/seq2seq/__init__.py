from .config import ModelConfig, DecodeConfig, TrainConfig, PLAN_DECODE, PRODUCTION_TRAINING
from .vocab import Vocab, PAD, BOS, EOS, UNK, E_OPEN, E_CLOSE, EOE, SPECIALS
from .model import Seq2SeqModel, build_model, forward_probs, pad_batch, batch_token_logprobs
from .decoding import Hypothesis, beam_search, diverse_beam_search, nucleus_sample
from .gradcheck import grad_check, GradCheckError
from .checkpoint import Checkpoint, CheckpointError, save_checkpoint, load_checkpoint
from .training import make_optimizer, minibatches, train_loop

__all__ = [
    "ModelConfig", "DecodeConfig", "TrainConfig", "PLAN_DECODE", "PRODUCTION_TRAINING",
    "Vocab", "PAD", "BOS", "EOS", "UNK", "E_OPEN", "E_CLOSE", "EOE", "SPECIALS",
    "Seq2SeqModel", "build_model", "forward_probs", "pad_batch", "batch_token_logprobs",
    "Hypothesis", "beam_search", "diverse_beam_search", "nucleus_sample",
    "grad_check", "GradCheckError",
    "Checkpoint", "CheckpointError", "save_checkpoint", "load_checkpoint",
    "make_optimizer", "minibatches", "train_loop",
]
