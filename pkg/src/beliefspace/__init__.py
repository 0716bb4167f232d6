"""Belief elicitation and rectification for small language models."""

__version__ = "0.1.0"

from .errors import BeliefspaceError
from .lm import NEG_INF, LanguageModel, TrainableLanguageModel, WeightedExample
from .tokens import TokenSequence, Vocabulary
from .transformer import ModelConfig, TinyTransformerLM

__all__ = [
    "BeliefspaceError",
    "NEG_INF",
    "LanguageModel",
    "TrainableLanguageModel",
    "WeightedExample",
    "TokenSequence",
    "Vocabulary",
    "ModelConfig",
    "TinyTransformerLM",
    "__version__",
]
