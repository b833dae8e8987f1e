"""Step-by-step exploration outward from the local territory.

The frontier lists pieces exactly one incidence step away from something
already held, as reported by reachable peers; previews carry kind and
measures, never content text.  Stepping requests the 0-radius bundle for
an entry and runs it through the local gatekeeper: a reject leaves the
territory unchanged, anything else lands with origin ``wayfarer-step``
(an explicit step is the owner's review, so quarantine does not park).

Hybrid search is gated by path existence: a matching piece is served only
when the explored union of territories contains a walkable path from some
held piece to the match whose intermediate pieces the local gatekeeper
does not reject.  Otherwise the caller gets the frontier entries that
start the shortest candidate paths and has to walk.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Iterable, Optional

from .core import PieceId, PieceOfKnowledge, Territory, normalize_tokens
from .errors import MmmError, TransportError
from .gatekeeper import evaluate
from .measures import build_view
from .sharing import (
    Adjacent,
    AdjacentResult,
    Deliver,
    Find,
    FindResult,
    NotFound,
    Peer,
    PeerLink,
    Request,
    call_messages,
)


@dataclass(frozen=True)
class FrontierEntry:
    id: PieceId
    via: PieceId
    locator: str
    kind: str
    edge_kind: Optional[str]
    measures: dict

    @staticmethod
    def from_preview(preview: dict) -> "FrontierEntry":
        return FrontierEntry(
            id=preview["id"],
            via=preview["via"],
            locator=preview["locator"],
            kind=preview["kind"],
            edge_kind=preview.get("edge_kind"),
            measures=dict(preview.get("measures", {})),
        )


@dataclass(frozen=True)
class Frontier:
    entries: tuple[FrontierEntry, ...]
    peer_errors: tuple[tuple[str, str], ...] = ()


@dataclass(frozen=True)
class StepOutcome:
    decision: object  # GateDecision for the stepped piece
    applied: bool
    pieces: tuple[PieceOfKnowledge, ...] = ()


@dataclass(frozen=True)
class Served:
    piece: PieceOfKnowledge


@dataclass(frozen=True)
class PathRequired:
    entries: tuple[FrontierEntry, ...]


@dataclass(frozen=True)
class NoMatch:
    pass


def frontier(territory: Territory, links: Iterable[PeerLink]) -> Frontier:
    """Ask every peer what sits one step off the locally held ids."""
    local_ids = territory.ids()
    entries: list[FrontierEntry] = []
    errors: list[tuple[str, str]] = []
    seen = set()
    for link in sorted(links, key=lambda l: l.address):
        try:
            replies = call_messages(link, Adjacent(tuple(local_ids)))
        except TransportError as exc:
            errors.append((link.address, exc.code))
            continue
        for reply in replies:
            if not isinstance(reply, AdjacentResult):
                continue
            for preview in reply.entries:
                entry = FrontierEntry.from_preview(preview)
                if territory.try_resolve(entry.id) is not None:
                    continue  # already held, possibly under an alias
                key = (entry.via, entry.id, entry.locator)
                if key not in seen:
                    seen.add(key)
                    entries.append(entry)
    entries.sort(key=lambda e: (e.via, e.id, e.locator))
    return Frontier(tuple(entries), tuple(errors))


def _fetch(link: PeerLink, piece_id: PieceId) -> Optional[list[PieceOfKnowledge]]:
    for reply in call_messages(link, Request(piece_id, radius=0)):
        if isinstance(reply, Deliver):
            return list(reply.bundle.pieces)
        if isinstance(reply, NotFound):
            return None
    return None


def step(peer: Peer, entry: FrontierEntry, link: PeerLink) -> StepOutcome:
    """Request the entry's 0-radius bundle and gate it in."""
    pieces = _fetch(link, entry.id)
    if pieces is None:
        raise MmmError("NOT_FOUND", f"peer no longer holds {entry.id}")
    decisions = evaluate(peer.rules, pieces, peer.territory, peer.cfg, origin="wayfarer-step")
    stepped = next((p for p in pieces if p.id == entry.id), pieces[0])
    decision = decisions[stepped.id]
    if decision.verdict == "reject":
        return StepOutcome(decision, applied=False)
    keep = [p for p in pieces if decisions[p.id].verdict != "reject"]
    peer.territory.apply_bundle(keep, "wayfarer-step", peer.now_fn())
    return StepOutcome(decision, applied=True, pieces=tuple(keep))


# ---------------------------------------------------------------------------
# hybrid search


def _matches_tokens(piece: PieceOfKnowledge, tokens: frozenset[str]) -> bool:
    return tokens <= normalize_tokens(piece.content)


def hybrid_search(
    peer: Peer,
    links: Iterable[PeerLink],
    query: str,
    max_layers: Optional[int] = None,
) -> Served | PathRequired | NoMatch:
    """Serve a content match only when an admissible path to it exists."""
    territory = peer.territory
    tokens = normalize_tokens(query)
    if not tokens:
        return NoMatch()

    for pid in territory.ids():
        if _matches_tokens(territory.get(pid), tokens):
            return Served(territory.get(pid))

    links = sorted(links, key=lambda l: l.address)
    link_by_addr = {l.address: l for l in links}

    remote_matches: dict[PieceId, str] = {}
    for link in links:
        try:
            replies = call_messages(link, Find(tuple(sorted(tokens))))
        except TransportError:
            continue
        for reply in replies:
            if isinstance(reply, FindResult):
                for pid in reply.ids:
                    if territory.try_resolve(pid) is None:
                        remote_matches.setdefault(pid, link.address)
    if not remote_matches:
        return NoMatch()

    # explore the union of reachable territories layer by layer.  The local
    # structure seeds the graph (peers cannot know links held only here);
    # peers report pieces adjacent to queried ids; fetched edge records
    # contribute their own endpoint links.
    local_ids = set(territory.ids())
    adjacency: dict[PieceId, set[PieceId]] = {pid: set() for pid in local_ids}
    fetched: dict[PieceId, PieceOfKnowledge] = {}
    locator: dict[PieceId, str] = {}
    known = set(local_ids)

    def connect(a: PieceId, b: PieceId) -> None:
        adjacency.setdefault(a, set()).add(b)
        adjacency.setdefault(b, set()).add(a)

    def fetch_piece(pid: PieceId) -> Optional[PieceOfKnowledge]:
        for addr in [locator.get(pid), remote_matches.get(pid)] + [l.address for l in links]:
            if addr is None or addr not in link_by_addr:
                continue
            try:
                pieces = _fetch(link_by_addr[addr], pid)
            except TransportError:
                continue
            if pieces:
                locator.setdefault(pid, addr)
                return next((p for p in pieces if p.id == pid), pieces[0])
        return None

    def absorb(ids) -> set[PieceId]:
        """Fetch newly discovered pieces, wiring in edge endpoints and
        chasing them until the batch is closed; returns the new frontier."""
        added: set[PieceId] = set()
        queue = deque(sorted(ids))
        while queue:
            pid = queue.popleft()
            if pid in known or territory.try_resolve(pid) is not None:
                continue
            known.add(pid)
            added.add(pid)
            piece = fetch_piece(pid)
            if piece is None:
                continue
            fetched[pid] = piece
            if piece.is_edge:
                for end in (piece.source, piece.target):
                    connect(pid, end)
                    queue.append(end)
        return added

    local_view = build_view(territory)
    seed_external: set[PieceId] = set()
    for pid in local_ids:
        for nbr in local_view.step_adj[pid]:
            connect(pid, nbr)
        piece = territory.get(pid)
        if piece.is_edge:
            for end in (piece.source, piece.target):
                connect(pid, end)
                if territory.try_resolve(end) is None:
                    seed_external.add(end)
    layer = set(local_ids) | absorb(seed_external)

    layers_left = max_layers if max_layers is not None else peer.cfg.horizon
    while layer and layers_left > 0:
        layers_left -= 1
        new_ids: set[PieceId] = set()
        query_ids = tuple(sorted(layer))
        for link in links:
            try:
                replies = call_messages(link, Adjacent(query_ids))
            except TransportError:
                continue
            for reply in replies:
                if not isinstance(reply, AdjacentResult):
                    continue
                for preview in reply.entries:
                    a, b = preview["via"], preview["id"]
                    connect(a, b)
                    locator.setdefault(b, preview["locator"])
                    if b not in known and territory.try_resolve(b) is None:
                        new_ids.add(b)
        layer = absorb(new_ids)

    # gate everything discovered on one graft of the explored union
    decisions = evaluate(
        peer.rules, fetched.values(), territory, peer.cfg, origin="wayfarer-step"
    )

    def admissible(pid: PieceId) -> bool:
        if pid in local_ids:
            return True
        piece = fetched.get(pid)
        if piece is None:
            return False
        return decisions[piece.id].verdict != "reject"

    targets = {pid for pid in remote_matches if pid in known}

    # served: reachable with every intermediate admissible; nearest first
    seen = set(local_ids)
    queue = deque((pid, 0) for pid in sorted(local_ids))
    reachable: dict[PieceId, int] = {}
    while queue:
        v, d = queue.popleft()
        for w in sorted(adjacency.get(v, ())):
            if w in seen:
                continue
            if w in targets:
                reachable.setdefault(w, d + 1)
                seen.add(w)
                if admissible(w):
                    queue.append((w, d + 1))
                continue
            if admissible(w):
                seen.add(w)
                queue.append((w, d + 1))
    served_targets = sorted(reachable, key=lambda pid: (reachable[pid], pid))
    for target in served_targets:
        piece = fetched.get(target)
        if piece is not None:
            return Served(piece)

    # path required: frontier entries starting shortest candidate paths
    parent: dict[PieceId, Optional[PieceId]] = {pid: None for pid in local_ids}
    order = deque(sorted(local_ids))
    while order:
        v = order.popleft()
        for w in sorted(adjacency.get(v, ())):
            if w not in parent:
                parent[w] = v
                order.append(w)
    entries = []
    seen_first = set()
    for target in sorted(targets):
        if target not in parent:
            continue
        node = target
        while parent[node] is not None and parent[node] not in local_ids:
            node = parent[node]
        if parent[node] is None or node in local_ids:
            continue
        if node in seen_first or node not in fetched:
            continue
        seen_first.add(node)
        piece = fetched[node]
        entries.append(
            FrontierEntry(
                id=node,
                via=parent[node],
                locator=locator.get(node, ""),
                kind=piece.kind,
                edge_kind=piece.edge_kind,
                measures={},
            )
        )
    entries.sort(key=lambda e: (e.via, e.id))
    return PathRequired(tuple(entries))
