"""Python bindings for the oodkit C++ core."""

from ._oodkit import (
    Network,
    OodkitError,
    auroc,
    ce_loss,
    detection_accuracy,
    evaluate,
    generate,
    gram,
    load_dataset,
    msp_scores,
    oecc_loss,
    run_cli,
    save_dataset,
    softmax,
    tnr_at_tpr,
)

__all__ = [
    "Network",
    "OodkitError",
    "auroc",
    "ce_loss",
    "detection_accuracy",
    "evaluate",
    "generate",
    "gram",
    "load_dataset",
    "msp_scores",
    "oecc_loss",
    "run_cli",
    "save_dataset",
    "softmax",
    "tnr_at_tpr",
]
