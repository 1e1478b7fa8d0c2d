"""Collaborative low-rank adaptation with a diversity penalty, desk scale.

Numerics are plain float64 numpy end to end.  The pieces compose in layers:
a reverse-mode tape (`autodiff`), adapter banks and their algebra
(`adapters`), the diversity regularizer (`sade`), its cost model
(`complexity`), a small frozen transformer encoder to host adapters (`vit`),
a training harness (`training`), and a binary tensor container
(`checkpoint`).  `cli` wires everything into subcommands.
"""

from .adapters import (
    AdapterConfig,
    BaseSpace,
    LambdaComponents,
    LoraBank,
    LrmBank,
    coeff_from_lambda,
    delta_w_clora,
    delta_w_lambda,
    delta_w_lora,
    delta_w_naive_sum,
    init_clora_bank,
    init_lambda_components,
    init_lora_bank,
    lrm_forward,
    merge_into_weight,
    param_count,
    rank_audit,
    scalar_census,
)
from .autodiff import FlopMeter, Tape, Tensor
from .checkpoint import load_tensors, read_header, save_tensors
from .complexity import (
    batch_threshold,
    complexity_profile,
    measured_regularizer_flops,
    reduction_table,
)
from .errors import (
    CheckpointError,
    CloraError,
    ConfigError,
    ContractError,
    DegenerateSimilarityError,
    NumericError,
    ShapeError,
)
from .linalg import frobenius_sq, numerical_rank
from .sade import (
    column_orthogonality_term,
    experts_for_module,
    mean_abs_similarity,
    rsr_gradient,
    rsr_term,
    sr_term,
    token_similarity,
)
from .training import (
    AdamW,
    EpochStats,
    SyntheticTask,
    TrainConfig,
    TrainResult,
    ablate,
    backbone_digest,
    cosine_lr,
    evaluate,
    objective,
    train,
)
from .vit import (
    AttachMode,
    VitConfig,
    VitWeights,
    adapter_placements,
    forward,
    init_vit_weights,
    merge_adapters,
    run_forward,
)

__version__ = "0.1.0"
