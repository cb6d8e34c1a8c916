"""Activity-centric context management.

Activities nest, and so do the contexts surrounding them. A
:class:`~ctxcm.manager.ContextManager` watches an agent's action events,
works out which activity is under way, and publishes the whole context
cascade to subscribed applications.
"""

from importlib import resources as _resources

from .cascade import Cascade, ContextInstance, ActivityInstance, ResourceResolution
from .identify import ActionEvent, EventWindow, IdentificationResult, detect_drift, drift_score, identify, score
from .lifecycle import Lifecycle, FocusState
from .manager import ContextManager, EventLog, ManagerConfig, evolve, run_loop
from .model import Ontology, class_lineage, specialize, validate_ontology

__version__ = "0.1.0"

__all__ = [
    "ActionEvent",
    "ActivityInstance",
    "Cascade",
    "ContextInstance",
    "ContextManager",
    "EventLog",
    "EventWindow",
    "FocusState",
    "IdentificationResult",
    "Lifecycle",
    "ManagerConfig",
    "Ontology",
    "ResourceResolution",
    "bundled",
    "bundled_path",
    "class_lineage",
    "detect_drift",
    "drift_score",
    "evolve",
    "identify",
    "run_loop",
    "score",
    "specialize",
    "validate_ontology",
]


def bundled(name: str) -> str:
    """Text of a bundled fixture, e.g. ``bundled("workshop.ctx")``."""
    return _resources.files(__package__).joinpath("data", name).read_text(encoding="utf-8")


def bundled_path(name: str) -> str:
    return str(_resources.files(__package__).joinpath("data", name))
