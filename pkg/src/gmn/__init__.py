"""Bi-level graph matching over a user-video / user-item dual graph, in numpy."""

from .graph import DualGraph, Kind, LogFormatError, NodeId, extract_subgraph, ingest_logs, load_graph, save_graph
from .metrics import MetricError, MetricsReport, auc
from .model import GMN
from .params import ConfigError, GMNConfig, load_checkpoint, save_checkpoint
from .retrieve import export_embeddings, retrieve_topk
from .synth import make_synthetic
from .train import evaluate, fit

__all__ = [
    "ConfigError",
    "DualGraph",
    "GMN",
    "GMNConfig",
    "Kind",
    "LogFormatError",
    "MetricError",
    "MetricsReport",
    "NodeId",
    "auc",
    "evaluate",
    "export_embeddings",
    "extract_subgraph",
    "fit",
    "ingest_logs",
    "load_checkpoint",
    "load_graph",
    "make_synthetic",
    "retrieve_topk",
    "save_checkpoint",
    "save_graph",
]
