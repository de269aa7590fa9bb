"""Training, retrieval evaluation, metrics and ablations."""

from .ablation import AXES, AblationTable, Variant, run_ablation, variants_for
from .loop import (
    LOSS_COLUMNS,
    TrainingDiverged,
    TrainResult,
    model_config_for,
    read_loss_log,
    total_steps,
    train,
    write_loss_log,
)
from .metrics import average_precisions, mean_ap, recall_at_k
from .optim import AdamW, lr_schedule
from .retrieval import (
    LanguageScores,
    RetrievalReport,
    evaluate,
    format_report,
    gallery_from_triplets,
    rank_gallery,
    rerank,
    score_rankings,
    stage_one,
)
