from .model import (
    Batch,
    EmbeddingMode,
    ModelConfig,
    NumericError,
    embed,
    forward,
    greedy_decode,
    init_params,
    loss_and_grads,
    make_batch,
    n_params,
    nll_loss,
    param_shapes,
    softmax,
    zero_params,
)
from .optim import Adam, Schedule, clip_grads, global_norm
from . import checkpoint
