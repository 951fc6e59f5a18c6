"""Path-based knowledge graph embedding with rule-composed paths and entity converters."""

from .config import Config
from .errors import (ConfigError, IncompatibleCheckpointError, NegativeSamplingError, NonFiniteLossError,
                     ParseError, PathKGError, ValidationError)
from .kg import Graph, Triple, TypeSystem, Vocab, load_dataset, load_type_system
from .paths import GroundedPath, PathSet, build_path_index, extract_paths_pcra
from .rules import HornRule, RuleIndex, compose_path, parse_rule_file

__version__ = "0.1.0"

__all__ = [
    "Config", "ConfigError", "IncompatibleCheckpointError", "NegativeSamplingError", "NonFiniteLossError",
    "ParseError", "PathKGError", "ValidationError", "Graph", "Triple", "TypeSystem", "Vocab", "load_dataset",
    "load_type_system", "GroundedPath", "PathSet", "build_path_index", "extract_paths_pcra", "HornRule",
    "RuleIndex", "compose_path", "parse_rule_file",
]
