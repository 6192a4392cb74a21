"""Adaptive landmark embeddings and certified kernel classification of persistence diagrams."""

from palace.diagram import (
    DiagramPoint,
    PersistenceDiagram,
    bottleneck_distance,
    point_bottleneck,
    read_diagrams,
    top_persistence_filter,
    write_diagrams,
)
from palace.cover import Landmark, LandmarkConfiguration
from palace.embed import embed, embed_batch
from palace.kernel import GramMatrix, gram, rkhs_distance

__version__ = "0.1.0"

__all__ = [
    "DiagramPoint",
    "PersistenceDiagram",
    "Landmark",
    "LandmarkConfiguration",
    "GramMatrix",
    "bottleneck_distance",
    "point_bottleneck",
    "read_diagrams",
    "write_diagrams",
    "top_persistence_filter",
    "embed",
    "embed_batch",
    "gram",
    "rkhs_distance",
]
