"""tripletlab: truncated triplet losses with rank-k negative deputies,
binomial false-negative risk, and over/under-clustering diagnostics."""

__version__ = "0.1.0"

from .geometry import (
    l2_normalize,
    cosine_distance,
    pairwise_distance_matrix,
    ascending_sort_indices,
)
from .losses import (
    ContrastiveView,
    LossConfig,
    LossResult,
    select_deputy_distance,
    deputy_ranks,
    hardest_triplet_loss,
    truncated_triplet_loss,
    infonce_loss,
    infonce_from_similarities,
    positive_only_loss,
    symmetric_loss,
    evaluate_view,
)
from .bernoulli import (
    FalseNegativeModel,
    log_binomial_coefficient,
    binomial_tail,
    exact_binomial_tail,
    risk_table,
)
from .encoder import (
    EncoderParams,
    TargetNetwork,
    OptimizerState,
    init_encoder,
    init_optimizer,
    forward,
    backward,
    ema_update,
    cosine_lr,
    sgd_momentum_step,
    save_checkpoint,
    load_checkpoint,
)
from .data import (
    SyntheticDatasetSpec,
    AugmentationSpec,
    ContrastiveBatch,
    generate_blobs,
    augment,
    sample_contrastive_batch,
    read_labeled_embeddings,
    write_embeddings,
    write_labels,
)
from .diagnostics import (
    DiagnosticsReport,
    BatchRankRecord,
    class_divergence,
    rank_negative_labels,
    single_view_rank_record,
    false_negative_frequencies,
    assignment_agreement,
    clustering_quality,
    linear_probe,
)
from .harness import (
    ExperimentConfig,
    load_config,
    run_experiment,
    compare_grid,
    parse_grid_text,
    cmd_bernoulli,
)

__all__ = [name for name in dir() if not name.startswith("_")]
