"""Zero-shot DDoS flow classification with prompted chat-completion models.

Flows are serialised to ``Feature: value`` text, optionally preceded by a
knowledge prompt holding global per-feature statistics, and classified by a
chat model whose constrained answer is parsed into attack/benign
probabilities or an anomaly verdict.
"""

__version__ = "0.1.0"

from .flow_data import Dataset, FeatureSchema, FlowRecord, Label  # noqa: E402
from .prompts import TemplateId  # noqa: E402
from .backend import BackendConfig, MockParams  # noqa: E402
from .reasoning import extract_outcome  # noqa: E402
from .estimator import FlowTextSerializer, PromptFlowClassifier  # noqa: E402

__all__ = [
    "BackendConfig",
    "Dataset",
    "FeatureSchema",
    "FlowRecord",
    "FlowTextSerializer",
    "Label",
    "MockParams",
    "PromptFlowClassifier",
    "TemplateId",
    "extract_outcome",
    "__version__",
]
