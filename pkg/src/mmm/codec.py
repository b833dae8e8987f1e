"""Bit-exact MMM-JSON serialization of pieces and territories.

Canonical form: UTF-8, object keys in ascending byte order, LF line
endings, 2-space indentation, one trailing newline, ids as 32 lowercase
hex characters, timestamps ISO-8601 UTC with seconds precision, optional
fields omitted when absent, pieces sorted by id.  The schema is closed and
version-gated: unknown fields are an error, not ignored.
"""

from __future__ import annotations

import json
from typing import Any, Iterable

from .core import (
    EDGE_KINDS,
    NODE_KINDS,
    Authorship,
    PieceOfKnowledge,
    is_piece_id,
    is_timestamp,
)
from .errors import DecodeError

MMM_VERSION = "1.0"
FILE_EXTENSION = ".mmm.json"

_TOP_FIELDS = {"mmm_version", "pieces"}
_NODE_FIELDS = {"id", "kind", "content", "label", "public", "authorships", "aliases"}
_EDGE_FIELDS = _NODE_FIELDS | {"edge_kind", "source", "target", "reverse_label"}
_AUTH_FIELDS = {"authors", "timestamp"}


def canonical_bytes(obj: Any) -> bytes:
    """Canonical rendering of any JSON value; shared by every on-disk and
    wire document in the system (pieces, configs, results, messages)."""
    return (json.dumps(obj, ensure_ascii=False, sort_keys=True, indent=2) + "\n").encode("utf-8")


def piece_to_record(piece: PieceOfKnowledge) -> dict:
    record: dict[str, Any] = {
        "id": piece.id,
        "kind": piece.kind,
        "content": piece.content,
        "public": piece.public,
        "authorships": [
            {"authors": list(a.authors), "timestamp": a.timestamp} for a in piece.authorships
        ],
    }
    if piece.is_edge:
        record["edge_kind"] = piece.edge_kind
        record["source"] = piece.source
        record["target"] = piece.target
        if piece.reverse_label is not None:
            record["reverse_label"] = piece.reverse_label
    if piece.label is not None:
        record["label"] = piece.label
    if piece.aliases:
        record["aliases"] = list(piece.aliases)
    return record


def encode(pieces: Iterable[PieceOfKnowledge]) -> bytes:
    """Canonical document bytes; equal inputs give byte-identical output."""
    records = sorted((piece_to_record(p) for p in pieces), key=lambda r: r["id"])
    return canonical_bytes({"mmm_version": MMM_VERSION, "pieces": records})


def _reject_duplicate_keys(pairs):
    obj = {}
    for key, value in pairs:
        if key in obj:
            raise DecodeError("MALFORMED_SYNTAX", f"duplicate key {key!r}")
        obj[key] = value
    return obj


def _require(condition: bool, code: str, message: str) -> None:
    if not condition:
        raise DecodeError(code, message)


def record_to_piece(record: Any) -> PieceOfKnowledge:
    _require(isinstance(record, dict), "MALFORMED_SYNTAX", "piece record must be an object")
    kind = record.get("kind")
    _require(isinstance(kind, str), "MALFORMED_SYNTAX", "piece kind must be a string")
    if kind == "edge":
        allowed = _EDGE_FIELDS
    elif kind in NODE_KINDS:
        allowed = _NODE_FIELDS
    else:
        raise DecodeError("UNKNOWN_KIND", f"unknown kind {kind!r}")
    for key in record:
        if key not in allowed:
            raise DecodeError("UNKNOWN_FIELD", f"field {key!r} not allowed on a {kind} record")

    pid = record.get("id")
    _require(is_piece_id(pid), "BAD_ID_FORMAT", f"bad piece id {pid!r}")
    content = record.get("content")
    _require(isinstance(content, str), "MALFORMED_SYNTAX", f"piece {pid}: content must be a string")
    public = record.get("public")
    _require(isinstance(public, bool), "MALFORMED_SYNTAX", f"piece {pid}: public must be a boolean")

    edge_kind = source = target = None
    if kind == "edge":
        edge_kind = record.get("edge_kind")
        if edge_kind not in EDGE_KINDS:
            raise DecodeError("UNKNOWN_KIND", f"piece {pid}: unknown edge kind {edge_kind!r}")
        source, target = record.get("source"), record.get("target")
        _require(
            source is not None and target is not None,
            "EDGE_MISSING_ENDPOINT",
            f"edge {pid} must carry source and target",
        )
        _require(is_piece_id(source) and is_piece_id(target), "BAD_ID_FORMAT",
                 f"edge {pid}: endpoints must be piece ids")
        _require(source != pid and target != pid, "MALFORMED_SYNTAX",
                 f"edge {pid} references itself")

    for key in ("label", "reverse_label"):
        if key in record:
            _require(isinstance(record[key], str) and record[key] != "", "MALFORMED_SYNTAX",
                     f"piece {pid}: {key} must be a non-empty string when present")

    raw_auth = record.get("authorships")
    _require(isinstance(raw_auth, list) and raw_auth, "MALFORMED_SYNTAX",
             f"piece {pid}: authorships must be a non-empty list")
    authorships = []
    for entry in raw_auth:
        _require(isinstance(entry, dict), "MALFORMED_SYNTAX", f"piece {pid}: bad authorship entry")
        for key in entry:
            if key not in _AUTH_FIELDS:
                raise DecodeError("UNKNOWN_FIELD", f"field {key!r} not allowed in an authorship")
        authors = entry.get("authors")
        _require(
            isinstance(authors, list) and authors
            and all(isinstance(a, str) and a for a in authors),
            "MALFORMED_SYNTAX",
            f"piece {pid}: authors must be a non-empty list of names",
        )
        ts = entry.get("timestamp")
        _require(is_timestamp(ts), "BAD_TIMESTAMP", f"piece {pid}: bad timestamp {ts!r}")
        authorships.append(Authorship(tuple(authors), ts))

    aliases = record.get("aliases", [])
    _require(isinstance(aliases, list) and all(is_piece_id(a) for a in aliases),
             "BAD_ID_FORMAT" if isinstance(aliases, list) else "MALFORMED_SYNTAX",
             f"piece {pid}: aliases must be piece ids")

    return PieceOfKnowledge(
        id=pid,
        kind=kind,
        content=content,
        edge_kind=edge_kind,
        source=source,
        target=target,
        label=record.get("label"),
        reverse_label=record.get("reverse_label"),
        public=public,
        authorships=tuple(authorships),
        aliases=tuple(aliases),
    )


def decode(data: bytes | str) -> list[PieceOfKnowledge]:
    """Parse a document in canonical or whitespace/key-order variant form."""
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DecodeError("MALFORMED_SYNTAX", f"not UTF-8: {exc}") from exc
    try:
        doc = json.loads(data, object_pairs_hook=_reject_duplicate_keys)
    except json.JSONDecodeError as exc:
        raise DecodeError("MALFORMED_SYNTAX", str(exc)) from exc
    _require(isinstance(doc, dict), "MALFORMED_SYNTAX", "document must be an object")
    version = doc.get("mmm_version")
    if version != MMM_VERSION:
        raise DecodeError("UNKNOWN_VERSION", f"unsupported mmm_version {version!r}")
    for key in doc:
        if key not in _TOP_FIELDS:
            raise DecodeError("UNKNOWN_FIELD", f"unknown top-level field {key!r}")
    raw = doc.get("pieces")
    _require(isinstance(raw, list), "MALFORMED_SYNTAX", "pieces must be a list")
    pieces = [record_to_piece(r) for r in raw]
    seen: set[str] = set()
    for p in pieces:
        _require(p.id not in seen, "MALFORMED_SYNTAX", f"duplicate piece id {p.id}")
        seen.add(p.id)
    return pieces


def canonicalize(data: bytes | str) -> bytes:
    """encode after decode; idempotent."""
    return encode(decode(data))
