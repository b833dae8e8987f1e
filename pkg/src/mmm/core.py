"""Typed pieces of knowledge and the per-owner territory store.

A piece is either a typed node (narrative, question, existence) or a typed
edge; edges are pieces themselves and can be annotated like any node.  A
territory is one owner's map of pieces plus local metadata (origin, flags)
and an alias index left behind by merges.  All mutations are serialized per
territory; values handed back to callers are immutable snapshots.
"""

from __future__ import annotations

import hashlib
import re
import threading
from dataclasses import dataclass, replace
from datetime import datetime, timezone
from random import Random
from typing import Iterable, Optional

from .errors import MmmError

# ---------------------------------------------------------------------------
# identifiers, kinds, timestamps

PieceId = str
AgentId = str

NODE_KINDS = ("narrative", "question", "existence")
EDGE_KINDS = (
    "answers",
    "relate",
    "instantiates",
    "details",
    "nuances",
    "questions",
    "equates",
    "differsFrom",
)

_ID_RE = re.compile(r"^[0-9a-f]{32}$")
_TS_FORMAT = "%Y-%m-%dT%H:%M:%SZ"


def new_piece_id(rng: Random) -> PieceId:
    """Fresh 128-bit identifier rendered as 32 lowercase hex characters."""
    return f"{rng.getrandbits(128):032x}"


def derived_piece_id(*parts: str) -> PieceId:
    """Deterministic id for pieces the system itself materializes.

    Used for content-fork records so that re-applying the same foreign
    piece is idempotent.
    """
    return hashlib.md5("\x1f".join(parts).encode("utf-8")).hexdigest()


def is_piece_id(value: object) -> bool:
    return isinstance(value, str) and bool(_ID_RE.match(value))


def is_timestamp(value: object) -> bool:
    if not isinstance(value, str):
        return False
    try:
        datetime.strptime(value, _TS_FORMAT)
        return True
    except ValueError:
        return False


def now_utc() -> str:
    """Current instant, ISO-8601 UTC with seconds precision."""
    return datetime.now(timezone.utc).strftime(_TS_FORMAT)


_TOKEN_RE = re.compile(r"[^0-9a-z]+")


def normalize_tokens(text: str) -> frozenset[str]:
    """Token set of lowercased content with punctuation stripped."""
    return frozenset(t for t in _TOKEN_RE.split(text.lower()) if t)


def jaccard(a: frozenset[str], b: frozenset[str]) -> float:
    if not a and not b:
        return 1.0
    union = a | b
    if not union:
        return 1.0
    return len(a & b) / len(union)


# ---------------------------------------------------------------------------
# value types


@dataclass(frozen=True)
class Authorship:
    """One (team, instant) credit record; a piece may carry several."""

    authors: tuple[AgentId, ...]
    timestamp: str

    def __post_init__(self):
        if not self.authors or any(not a for a in self.authors):
            raise MmmError("EMPTY_AUTHOR", "authorship needs at least one non-empty author")
        if not is_timestamp(self.timestamp):
            raise MmmError("BAD_TIMESTAMP", f"bad timestamp {self.timestamp!r}")


@dataclass(frozen=True)
class PieceOfKnowledge:
    """A typed node or edge; the atomic unit of the medium.

    ``kind`` is one of the node kinds or ``edge``; edges carry ``edge_kind``
    plus ``source``/``target`` endpoints which may reference pieces held
    elsewhere.  ``public`` only ever flips false to true.  ``aliases`` lists
    ids merged into this piece.
    """

    id: PieceId
    kind: str
    content: str = ""
    edge_kind: Optional[str] = None
    source: Optional[PieceId] = None
    target: Optional[PieceId] = None
    label: Optional[str] = None
    reverse_label: Optional[str] = None
    public: bool = False
    authorships: tuple[Authorship, ...] = ()
    aliases: tuple[PieceId, ...] = ()

    @property
    def is_edge(self) -> bool:
        return self.kind == "edge"

    @property
    def labeled(self) -> bool:
        return bool(self.label)

    def check(self) -> None:
        """Raise if structurally ill-formed (independent of any territory)."""
        if not is_piece_id(self.id):
            raise MmmError("BAD_ID_FORMAT", f"bad piece id {self.id!r}")
        if self.kind == "edge":
            if self.edge_kind not in EDGE_KINDS:
                raise MmmError("UNKNOWN_KIND", f"unknown edge kind {self.edge_kind!r}")
            if self.source is None or self.target is None:
                raise MmmError("EDGE_ENDPOINTS_MISSING", f"edge {self.id} lacks endpoints")
            if not is_piece_id(self.source) or not is_piece_id(self.target):
                raise MmmError("BAD_ID_FORMAT", f"edge {self.id} has malformed endpoint ids")
            if self.source == self.id or self.target == self.id:
                raise MmmError("MALFORMED_SYNTAX", f"edge {self.id} references itself")
        elif self.kind in NODE_KINDS:
            if self.edge_kind is not None:
                raise MmmError("UNKNOWN_KIND", f"node {self.id} carries an edge kind")
            if self.source is not None or self.target is not None:
                raise MmmError("NODE_WITH_ENDPOINTS", f"node {self.id} carries endpoints")
            if self.reverse_label is not None:
                raise MmmError("NODE_WITH_ENDPOINTS", f"node {self.id} carries a reverse label")
        else:
            raise MmmError("UNKNOWN_KIND", f"unknown kind {self.kind!r}")
        if not self.authorships:
            raise MmmError("EMPTY_AUTHOR", f"piece {self.id} has no authorship")

    def authors(self) -> frozenset[AgentId]:
        """Union of agents over all authorships."""
        return frozenset(a for auth in self.authorships for a in auth.authors)


@dataclass(frozen=True)
class RedFlag:
    flagger: AgentId
    timestamp: str
    code: str


@dataclass(frozen=True)
class LocalMeta:
    """Territory-local facts about a held piece; red_flags is append-only."""

    accepted_at: str
    origin: str  # authored | accepted-share | wayfarer-step
    red_flags: tuple[RedFlag, ...] = ()


ORIGINS = ("authored", "accepted-share", "wayfarer-step")


@dataclass(frozen=True)
class StructuralFinding:
    piece: PieceId
    code: str
    severity: str  # warn | error


# built-in validation codes
UNLABELED_RELATE = "UNLABELED_RELATE"
ANSWERS_NONQUESTION_TARGET = "ANSWERS_NONQUESTION_TARGET"
DANGLING_ENDPOINT = "DANGLING_ENDPOINT"
EMPTY_CONTENT_NODE = "EMPTY_CONTENT_NODE"

CONTENT_FORK = "CONTENT_FORK"


@dataclass(frozen=True)
class ApplyResult:
    """Outcome of folding one incoming piece into a territory."""

    piece: PieceOfKnowledge
    created: bool
    fork: Optional[PieceOfKnowledge] = None


# ---------------------------------------------------------------------------
# territory


class Territory:
    """Single-writer store of pieces for one owner.

    Mutations are serialized by an internal lock; reads return frozen
    snapshots.  Deleting a piece affects this territory only.
    """

    def __init__(self, owner: AgentId):
        if not owner:
            raise MmmError("EMPTY_AUTHOR", "territory owner must be non-empty")
        self.owner = owner
        self._pieces: dict[PieceId, PieceOfKnowledge] = {}
        self._meta: dict[PieceId, LocalMeta] = {}
        self._alias: dict[PieceId, PieceId] = {}
        self._lock = threading.RLock()

    @classmethod
    def from_snapshot(
        cls,
        owner: AgentId,
        pieces: Iterable[PieceOfKnowledge],
        meta: Optional[dict[PieceId, LocalMeta]] = None,
        default_accepted_at: str = "1970-01-01T00:00:00Z",
    ) -> "Territory":
        """Rebuild a territory from persisted pieces plus saved local meta."""
        t = cls(owner)
        meta = meta or {}
        for piece in pieces:
            piece.check()
            t._pieces[piece.id] = piece
            t._meta[piece.id] = meta.get(
                piece.id, LocalMeta(accepted_at=default_accepted_at, origin="accepted-share")
            )
        for piece in t._pieces.values():
            t._register_aliases(piece.id, piece.aliases)
        return t

    # -- lookup ------------------------------------------------------------

    def __len__(self) -> int:
        return len(self._pieces)

    def __contains__(self, piece_id: PieceId) -> bool:
        return self.try_resolve(piece_id) is not None

    def ids(self) -> list[PieceId]:
        return sorted(self._pieces)

    def pieces(self) -> list[PieceOfKnowledge]:
        return [self._pieces[i] for i in sorted(self._pieces)]

    def aliases(self) -> dict[PieceId, PieceId]:
        return dict(self._alias)

    def try_resolve(self, piece_id: PieceId) -> Optional[PieceId]:
        """Canonical id for piece_id, following merge aliases, or None."""
        seen = set()
        cur = piece_id
        while cur in self._alias:
            if cur in seen:  # defensive; merge never creates cycles
                return None
            seen.add(cur)
            cur = self._alias[cur]
        return cur if cur in self._pieces else None

    def resolve(self, piece_id: PieceId) -> PieceId:
        rid = self.try_resolve(piece_id)
        if rid is None:
            raise MmmError("UNKNOWN_PIECE", f"{piece_id} does not resolve in this territory")
        return rid

    def get(self, piece_id: PieceId) -> PieceOfKnowledge:
        return self._pieces[self.resolve(piece_id)]

    def meta(self, piece_id: PieceId) -> LocalMeta:
        return self._meta[self.resolve(piece_id)]

    def flag_count(self, piece_id: PieceId) -> int:
        rid = self.try_resolve(piece_id)
        return len(self._meta[rid].red_flags) if rid else 0

    # -- authoring ---------------------------------------------------------

    def create_piece(
        self,
        kind: str,
        content: str,
        author: AgentId,
        now: str,
        rng: Random,
        label: Optional[str] = None,
        reverse_label: Optional[str] = None,
        source: Optional[PieceId] = None,
        target: Optional[PieceId] = None,
    ) -> PieceOfKnowledge:
        """Author a fresh piece; edge kinds need endpoints, node kinds none."""
        if not author:
            raise MmmError("EMPTY_AUTHOR", "author must be non-empty")
        edge_kind = None
        if kind in EDGE_KINDS or kind == "edge":
            if kind == "edge":
                raise MmmError("UNKNOWN_KIND", "pass the edge kind itself, e.g. 'answers'")
            edge_kind = kind
            kind = "edge"
            if source is None or target is None:
                raise MmmError("EDGE_ENDPOINTS_MISSING", f"{edge_kind} edge needs source and target")
        elif kind in NODE_KINDS:
            if source is not None or target is not None:
                raise MmmError("NODE_WITH_ENDPOINTS", f"{kind} piece must not carry endpoints")
        else:
            raise MmmError("UNKNOWN_KIND", f"unknown kind {kind!r}")
        with self._lock:
            piece = PieceOfKnowledge(
                id=new_piece_id(rng),
                kind=kind,
                edge_kind=edge_kind,
                content=content,
                source=source,
                target=target,
                label=label or None,
                reverse_label=reverse_label or None,
                public=False,
                authorships=(Authorship((author,), now),),
            )
            piece.check()
            self._pieces[piece.id] = piece
            self._meta[piece.id] = LocalMeta(accepted_at=now, origin="authored")
            return piece

    def annotate(
        self,
        anchor: PieceId,
        edge_kind: str,
        annotation_content: str,
        author: AgentId,
        now: str,
        rng: Random,
        label: Optional[str] = None,
    ) -> tuple[PieceOfKnowledge, PieceOfKnowledge]:
        """Attach a new node to ``anchor`` with an edge of ``edge_kind``.

        The anchor may itself be an edge-piece.  The new node is a question
        when questioning, a narrative otherwise; the edge runs new node to
        anchor.
        """
        if edge_kind not in EDGE_KINDS:
            raise MmmError("UNKNOWN_KIND", f"unknown edge kind {edge_kind!r}")
        with self._lock:
            rid = self.try_resolve(anchor)
            if rid is None:
                raise MmmError("UNKNOWN_ANCHOR", f"annotation anchor {anchor} not held here")
            node_kind = "question" if edge_kind == "questions" else "narrative"
            node = self.create_piece(node_kind, annotation_content, author, now, rng)
            edge = self.create_piece(
                edge_kind, "", author, now, rng, label=label, source=node.id, target=rid
            )
            return node, edge

    def set_public(self, piece_id: PieceId) -> PieceOfKnowledge:
        """Mark as gifted to the public domain; idempotent, irrevocable."""
        with self._lock:
            rid = self.resolve(piece_id)
            piece = self._pieces[rid]
            if not piece.public:
                piece = replace(piece, public=True)
                self._pieces[rid] = piece
            return piece

    def delete_piece(self, piece_id: PieceId) -> None:
        """Drop the piece from this territory only; edges elsewhere keep
        their endpoint ids as now-external references."""
        with self._lock:
            rid = self.resolve(piece_id)
            del self._pieces[rid]
            del self._meta[rid]
            self._alias = {a: c for a, c in self._alias.items() if c != rid}

    def red_flag(self, piece_id: PieceId, flagger: AgentId, now: str, code: str) -> LocalMeta:
        """Append a cheap mispositioning signal; never touches the piece."""
        with self._lock:
            rid = self.resolve(piece_id)
            meta = self._meta[rid]
            meta = replace(meta, red_flags=meta.red_flags + (RedFlag(flagger, now, code),))
            self._meta[rid] = meta
            return meta

    # -- validation and redundancy ------------------------------------------

    def validate(self) -> list[StructuralFinding]:
        """Deterministic structural findings; no content semantics."""
        findings: list[StructuralFinding] = []
        for pid in sorted(self._pieces):
            piece = self._pieces[pid]
            if piece.is_edge:
                if piece.edge_kind == "relate" and not piece.labeled:
                    findings.append(StructuralFinding(pid, UNLABELED_RELATE, "warn"))
                for endpoint in (piece.source, piece.target):
                    if self.try_resolve(endpoint) is None:
                        findings.append(StructuralFinding(pid, DANGLING_ENDPOINT, "warn"))
                if piece.edge_kind == "answers":
                    tid = self.try_resolve(piece.target)
                    if tid is not None and self._pieces[tid].kind != "question":
                        findings.append(StructuralFinding(pid, ANSWERS_NONQUESTION_TARGET, "error"))
            else:
                if not piece.content.strip():
                    findings.append(StructuralFinding(pid, EMPTY_CONTENT_NODE, "warn"))
        findings.sort(key=lambda f: (f.piece, f.code))
        return findings

    def detect_duplicates(self, tau: float = 0.8) -> list[tuple[PieceId, PieceId, float]]:
        """Same-kind node pairs whose normalized-content Jaccard is >= tau."""
        nodes = [p for p in self.pieces() if not p.is_edge]
        toks = {p.id: normalize_tokens(p.content) for p in nodes}
        pairs = []
        for i, a in enumerate(nodes):
            for b in nodes[i + 1 :]:
                if a.kind != b.kind:
                    continue
                sim = jaccard(toks[a.id], toks[b.id])
                if sim >= tau:
                    lo, hi = sorted((a.id, b.id))
                    pairs.append((lo, hi, sim))
        pairs.sort(key=lambda t: (-t[2], t[0], t[1]))
        return pairs

    def merge(self, keep: PieceId, absorb: PieceId) -> PieceOfKnowledge:
        """Fold ``absorb`` into ``keep``: edges re-pointed, authorships
        unioned, public OR-ed, absorb's id kept as an alias."""
        with self._lock:
            kid = self.resolve(keep)
            aid = self.resolve(absorb)
            if kid == aid:
                raise MmmError("SELF_MERGE", f"{keep} and {absorb} are the same piece")
            kp, ap = self._pieces[kid], self._pieces[aid]
            if (kp.kind, kp.edge_kind) != (ap.kind, ap.edge_kind):
                raise MmmError("KIND_MISMATCH", f"cannot merge {ap.kind} into {kp.kind}")
            for pid, piece in list(self._pieces.items()):
                if piece.is_edge and aid in (piece.source, piece.target):
                    # re-point onto keep, except where that would make an edge
                    # its own endpoint: the alias index resolves those
                    new_source = kid if piece.source == aid and pid != kid else piece.source
                    new_target = kid if piece.target == aid and pid != kid else piece.target
                    self._pieces[pid] = replace(piece, source=new_source, target=new_target)
                    kp = self._pieces[kid]  # keep may itself be that edge
            merged_auth = list(kp.authorships)
            for auth in ap.authorships:
                if auth not in merged_auth:
                    merged_auth.append(auth)
            alias_ids = list(kp.aliases)
            alias_ids.extend(a for a in (aid,) + ap.aliases if a not in alias_ids)
            merged = replace(
                kp,
                public=kp.public or ap.public,
                authorships=tuple(merged_auth),
                aliases=tuple(alias_ids),
            )
            self._pieces[kid] = merged
            del self._pieces[aid]
            kmeta, ameta = self._meta[kid], self._meta.pop(aid)
            if ameta.red_flags:
                flags = list(kmeta.red_flags)
                flags.extend(f for f in ameta.red_flags if f not in flags)
                self._meta[kid] = replace(kmeta, red_flags=tuple(flags))
            self._alias[aid] = kid
            for a in ap.aliases:
                if a not in self._pieces:
                    self._alias[a] = kid
            return merged

    # -- receiving copies ----------------------------------------------------

    def apply_incoming(self, piece: PieceOfKnowledge, origin: str, now: str) -> ApplyResult:
        """Fold a copy arriving from outside into this territory.

        Known id: authorships union (dedup by exact record), public OR, and
        on differing content the foreign text is preserved as a separate
        piece tied back by an equates edge red-flagged CONTENT_FORK.  The
        fork ids are derived from the content so re-delivery is a no-op.
        """
        if origin not in ORIGINS:
            raise MmmError("UNKNOWN_KIND", f"unknown origin {origin!r}")
        piece.check()
        with self._lock:
            rid = self.try_resolve(piece.id)
            if rid is None and piece.id not in self._alias:
                safe = self._admissible_aliases(piece.id, piece.aliases)
                stored = replace(piece, aliases=safe) if safe != piece.aliases else piece
                self._pieces[piece.id] = stored
                self._meta[piece.id] = LocalMeta(accepted_at=now, origin=origin)
                self._register_aliases(piece.id, safe)
                return ApplyResult(stored, created=True)
            rid = rid if rid is not None else self.resolve(piece.id)
            local = self._pieces[rid]
            fork = None
            if (
                local.content != piece.content
                and (local.kind, local.edge_kind) == (piece.kind, piece.edge_kind)
            ):
                fork = self._materialize_fork(rid, piece, now)
            merged_auth = list(local.authorships)
            for auth in piece.authorships:
                if auth not in merged_auth:
                    merged_auth.append(auth)
            merged_aliases = list(local.aliases)
            merged_aliases.extend(
                a for a in self._admissible_aliases(rid, piece.aliases)
                if a not in merged_aliases
            )
            updated = replace(
                local,
                public=local.public or piece.public,
                authorships=tuple(merged_auth),
                aliases=tuple(merged_aliases),
            )
            self._pieces[rid] = updated
            self._register_aliases(rid, merged_aliases)
            return ApplyResult(updated, created=False, fork=fork)

    def _admissible_aliases(self, canonical: PieceId, aliases: Iterable[PieceId]) -> tuple[PieceId, ...]:
        """Foreign alias claims consistent with this territory: an id held
        here as a distinct piece, or already aliased elsewhere, stays what
        it is locally."""
        return tuple(
            a for a in aliases
            if a != canonical
            and a not in self._pieces
            and self._alias.get(a, canonical) == canonical
        )

    def _register_aliases(self, canonical: PieceId, aliases: Iterable[PieceId]) -> None:
        for a in aliases:
            if a != canonical and a not in self._pieces and a not in self._alias:
                self._alias[a] = canonical

    def _materialize_fork(
        self, local_id: PieceId, foreign: PieceOfKnowledge, now: str
    ) -> Optional[PieceOfKnowledge]:
        fork_id = derived_piece_id("fork", local_id, foreign.content)
        if fork_id in self._pieces:
            return None
        fork = replace(foreign, id=fork_id, public=False, aliases=())
        edge = PieceOfKnowledge(
            id=derived_piece_id("fork-edge", local_id, fork_id),
            kind="edge",
            edge_kind="equates",
            content="",
            source=fork_id,
            target=local_id,
            label="content fork",
            authorships=(Authorship((self.owner,), now),),
        )
        self._pieces[fork_id] = fork
        self._meta[fork_id] = LocalMeta(accepted_at=now, origin="accepted-share")
        self._pieces[edge.id] = edge
        self._meta[edge.id] = LocalMeta(
            accepted_at=now,
            origin="accepted-share",
            red_flags=(RedFlag(self.owner, now, CONTENT_FORK),),
        )
        return fork

    def apply_bundle(self, pieces: Iterable[PieceOfKnowledge], origin: str, now: str) -> list[ApplyResult]:
        """Atomically fold several pieces in; used by sharing and import."""
        with self._lock:
            return [self.apply_incoming(p, origin, now) for p in pieces]
