"""distillpipe: distill a large teacher LLM into a small student.

The workflow: render task-engineered prompts against a dataset, have the
teacher generate synthetic labels, substitute them into the training split,
emit a vanilla-prompt fine-tuning file for a hosted platform, and evaluate
the result with task-specific metrics (entity density, accuracy, judge-graded
helpfulness, complexity, blinded human ratings) plus an inference cost model.
"""

from .core import (
    Dataset,
    Label,
    LabelKind,
    NormalizationError,
    RunManifest,
    Sample,
    TaskKind,
    Violation,
    normalize_label,
    validate_dataset,
)
from .gateway import (
    GenerationConfig,
    GenerationRecord,
    HttpBackend,
    MockBackend,
    ModelEndpoint,
    generate,
    generate_batch,
)
from .prompts import PromptInstance, PromptLibrary, PromptTemplate, builtin_library, render

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "GenerationConfig",
    "GenerationRecord",
    "HttpBackend",
    "Label",
    "LabelKind",
    "MockBackend",
    "ModelEndpoint",
    "NormalizationError",
    "PromptInstance",
    "PromptLibrary",
    "PromptTemplate",
    "RunManifest",
    "Sample",
    "TaskKind",
    "Violation",
    "builtin_library",
    "generate",
    "generate_batch",
    "normalize_label",
    "render",
    "validate_dataset",
    "__version__",
]
