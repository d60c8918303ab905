"""Deep Embedded Clustering: autoencoder, loss terms, training."""

from .losses import (
    EmptySoftClusterError,
    LossBreakdown,
    NonFiniteLossError,
    hard_assign,
    kl_rows,
    kl_to_uniform,
    soft_assign,
    target_distribution,
)
from .network import (
    DESK_LAYER_SIZES,
    FULL_LAYER_SIZES,
    Adamax,
    AutoencoderParams,
    ae_forward,
    encode,
    init_params,
)
from .train import (
    ARCHITECTURES,
    ORIGINAL_WEIGHTS,
    DEFAULT_WEIGHTS,
    DecConfig,
    DecState,
    TrainingDivergedError,
    grad_check,
    load_checkpoint,
    loss_curve_csv,
    loss_terms,
    make_state,
    pretrain_autoencoder,
    save_checkpoint,
    train_dec,
)
