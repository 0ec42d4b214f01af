"""trmlab: a desk-scale laboratory for tiny recursive grid models.

Reimplements a recursive latent-reasoning model on ARC-style grid tasks
together with the full evaluation harness around it: augmentation
ensembling with majority voting, puzzle-identity ablations,
recursion-trajectory decoding, two-regime training dynamics, and inference
profiling. Every behavioral study runs as a scripted, seeded experiment.
"""

__version__ = "0.1.0"

from .arc_data import (  # noqa: F401
    Dataset,
    ExamplePair,
    Grid,
    PuzzleIdVocabulary,
    Task,
    build_vocabulary,
    load_dataset,
    parse_task,
)
from .augmentation import (  # noqa: F401
    Augmentation,
    ColorPermutation,
    DihedralElement,
    Translation,
    apply,
    expand_dataset,
    invert,
    restore_prediction,
    sample,
)
from .ensemble import EvaluationMode, evaluate_dataset, evaluate_task, majority_vote  # noqa: F401
from .metrics import PassReport, exact_match_task, pass_at_1, pass_at_k  # noqa: F401
from .model import (  # noqa: F401
    ModelConfig,
    Parameters,
    backward,
    decode_canvas,
    deep_supervision_loss,
    forward_recursive,
    init_params,
)
