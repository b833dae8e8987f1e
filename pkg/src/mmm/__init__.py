"""MMM: a typed, annotatable epistemic graph with per-owner territories,
peer sharing, measure-driven gatekeeping, wayfarer exploration, trickling
rewards and a deterministic commons simulator."""

from .core import (
    Authorship,
    LocalMeta,
    PieceOfKnowledge,
    StructuralFinding,
    Territory,
    new_piece_id,
    now_utc,
)
from .errors import DecodeError, MmmError, TransportError
from .measures import IncidenceView, MeasureConfig, build_view

__all__ = [
    "Authorship",
    "DecodeError",
    "IncidenceView",
    "LocalMeta",
    "MeasureConfig",
    "MmmError",
    "PieceOfKnowledge",
    "StructuralFinding",
    "Territory",
    "TransportError",
    "build_view",
    "new_piece_id",
    "now_utc",
]
