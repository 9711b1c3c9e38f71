"""Stage 4: plot documents, SVG renderings, model overlays and video commands."""

from __future__ import annotations

from .config import GraphConfig, GraphTarget, ModelRef, load_graph_config, parse_graph_config
from .document import Axis, MatrixPayload, PlotDocument, Series
from .stage import generate_deliverables

__all__ = [
    "Axis",
    "GraphConfig",
    "GraphTarget",
    "MatrixPayload",
    "ModelRef",
    "PlotDocument",
    "Series",
    "generate_deliverables",
    "load_graph_config",
    "parse_graph_config",
]
