"""Superpixel-mix: boundary-aware mixing augmentation, teacher-student
consistency training, a numerical risk-bound verifier, and the robustness
metric suite (mIoU, ECE, NLL, AUC, AUPR, FPR-95-TPR)."""

from .imgcore import (
    IGNORE_LABEL,
    gradient_for_watershed,
    morphological_gradient,
    rgb_to_lab,
)
from .superpixel import (
    MarkerGrid,
    SuperpixelMap,
    compute_superpixels,
    regular_grid_markers,
    slic,
    watershed,
)
from .mixer import (
    MixConfig,
    make_mix,
    mask_from_superpixels,
    mix_images,
    mix_probmaps,
    sample_superpixels,
    weak_augment,
)
from .metrics import (
    ScoredSamples,
    UndefinedMetricError,
    aupr,
    confusion,
    ece,
    fpr_at_95_tpr,
    mcp_confidence,
    miou,
    nll,
    roc_auc,
)
from .consistency import (
    SynthTask,
    ToyModel,
    TrainerConfig,
    cons_loss,
    ema_update,
    forward,
    grad,
    joint_loss,
    sup_loss,
    train,
)
from .bound import DiscreteDist, RiskReport, l1_distance, risk, verify_bound

__version__ = "0.1.0"
