"""Territory-to-territory sharing: bundles, offers, relays, transports.

Wire format: every message is one frame, a 4-byte big-endian length prefix
followed by a canonical MMM-JSON object with a ``msg_type`` field.  The
in-process loopback transport used by tests and the simulator passes the
same frames as the TCP transport.

A :class:`Peer` wires a territory, its gatekeeper rules and a measure
config to the protocol: offers are gated piece by piece, accepted copies
land with origin ``accepted-share``, quarantined pieces park in the inbox
for the owner, relays carry coordinates only and are answered with
request/deliver.  Receipt is idempotent: replaying any message leaves the
territory byte-identical.
"""

from __future__ import annotations

import socket
import socketserver
import struct
import threading
from dataclasses import dataclass, field
from typing import Iterable, Optional

from . import codec
from .core import (
    PieceId,
    PieceOfKnowledge,
    Territory,
    normalize_tokens,
    now_utc,
)
from .errors import DecodeError, MmmError, TransportError
from .gatekeeper import GateDecision, GatekeeperRule, evaluate
from .measures import MeasureConfig, build_view, measure_value, step_ball

# ---------------------------------------------------------------------------
# bundles


@dataclass(frozen=True)
class Bundle:
    """Transferable closure: pieces plus ids of referenced absent pieces."""

    pieces: tuple[PieceOfKnowledge, ...]
    external_refs: tuple[PieceId, ...] = ()

    def check(self) -> None:
        seen: set[PieceId] = set()
        covered: set[PieceId] = set(self.external_refs)
        for piece in self.pieces:
            piece.check()
            if piece.id in seen:
                raise MmmError("MALFORMED_BUNDLE", f"duplicate id {piece.id}")
            seen.add(piece.id)
            covered.add(piece.id)
            covered.update(piece.aliases)
        for piece in self.pieces:
            if not piece.is_edge:
                continue
            for end in (piece.source, piece.target):
                if end not in covered:
                    raise MmmError("MALFORMED_BUNDLE", f"edge {piece.id} endpoint {end} not covered")

    def ids(self) -> list[PieceId]:
        return [p.id for p in self.pieces]


def make_bundle(territory: Territory, root: PieceId, glue_radius: int) -> Bundle:
    """Ball of ``glue_radius`` wayfarer steps around root, plus closure refs.

    Radius 0 is the single piece with its endpoints as external refs.
    """
    view = build_view(territory)
    members = step_ball(view, root, glue_radius)
    pieces = tuple(view.pieces[pid] for pid in sorted(members))
    covered = set(members)
    for piece in pieces:
        covered.update(piece.aliases)
    refs: set[PieceId] = set()
    for piece in pieces:
        if piece.is_edge:
            for end in (piece.source, piece.target):
                if end not in covered:
                    refs.add(end)
    return Bundle(pieces, tuple(sorted(refs)))


# ---------------------------------------------------------------------------
# protocol messages


@dataclass(frozen=True)
class Offer:
    offer_id: str
    from_agent: str
    bundle: Bundle


@dataclass(frozen=True)
class Accept:
    offer_id: str
    ids: tuple[PieceId, ...]


@dataclass(frozen=True)
class Reject:
    offer_id: str
    ids: tuple[PieceId, ...]
    reason: str


@dataclass(frozen=True)
class Relay:
    from_agent: str
    id: PieceId
    locator: str


@dataclass(frozen=True)
class Request:
    id: PieceId
    radius: Optional[int] = None


@dataclass(frozen=True)
class Deliver:
    request_ref: PieceId
    bundle: Bundle


@dataclass(frozen=True)
class NotFound:
    id: PieceId


@dataclass(frozen=True)
class Adjacent:
    """Wayfarer preview query: which pieces sit one step off these ids."""

    ids: tuple[PieceId, ...]


@dataclass(frozen=True)
class AdjacentResult:
    entries: tuple[dict, ...]


@dataclass(frozen=True)
class Find:
    tokens: tuple[str, ...]


@dataclass(frozen=True)
class FindResult:
    ids: tuple[PieceId, ...]


Message = (
    Offer | Accept | Reject | Relay | Request | Deliver | NotFound
    | Adjacent | AdjacentResult | Find | FindResult
)


def _bundle_record(bundle: Bundle) -> dict:
    return {
        "pieces": [codec.piece_to_record(p) for p in bundle.pieces],
        "external_refs": list(bundle.external_refs),
    }


def _record_bundle(record) -> Bundle:
    if not isinstance(record, dict) or set(record) != {"pieces", "external_refs"}:
        raise DecodeError("MALFORMED_SYNTAX", "bad bundle record")
    pieces = tuple(codec.record_to_piece(r) for r in record["pieces"])
    return Bundle(pieces, tuple(record["external_refs"]))


def message_to_record(msg: Message) -> dict:
    if isinstance(msg, Offer):
        return {"msg_type": "offer", "offer_id": msg.offer_id, "from": msg.from_agent,
                "bundle": _bundle_record(msg.bundle)}
    if isinstance(msg, Accept):
        return {"msg_type": "accept", "offer_id": msg.offer_id, "ids": list(msg.ids)}
    if isinstance(msg, Reject):
        return {"msg_type": "reject", "offer_id": msg.offer_id, "ids": list(msg.ids),
                "reason": msg.reason}
    if isinstance(msg, Relay):
        return {"msg_type": "relay", "from": msg.from_agent, "id": msg.id,
                "locator": msg.locator}
    if isinstance(msg, Request):
        record = {"msg_type": "request", "id": msg.id}
        if msg.radius is not None:
            record["radius"] = msg.radius
        return record
    if isinstance(msg, Deliver):
        return {"msg_type": "deliver", "request_ref": msg.request_ref,
                "bundle": _bundle_record(msg.bundle)}
    if isinstance(msg, NotFound):
        return {"msg_type": "not_found", "id": msg.id}
    if isinstance(msg, Adjacent):
        return {"msg_type": "adjacent", "ids": list(msg.ids)}
    if isinstance(msg, AdjacentResult):
        return {"msg_type": "adjacent_result", "entries": list(msg.entries)}
    if isinstance(msg, Find):
        return {"msg_type": "find", "tokens": list(msg.tokens)}
    if isinstance(msg, FindResult):
        return {"msg_type": "find_result", "ids": list(msg.ids)}
    raise MmmError("MALFORMED_SYNTAX", f"cannot encode {msg!r}")


def record_to_message(record) -> Message:
    if not isinstance(record, dict):
        raise DecodeError("MALFORMED_SYNTAX", "message must be an object")
    mtype = record.get("msg_type")
    try:
        if mtype == "offer":
            return Offer(record["offer_id"], record["from"], _record_bundle(record["bundle"]))
        if mtype == "accept":
            return Accept(record["offer_id"], tuple(record["ids"]))
        if mtype == "reject":
            return Reject(record["offer_id"], tuple(record["ids"]), record["reason"])
        if mtype == "relay":
            return Relay(record["from"], record["id"], record["locator"])
        if mtype == "request":
            return Request(record["id"], record.get("radius"))
        if mtype == "deliver":
            return Deliver(record["request_ref"], _record_bundle(record["bundle"]))
        if mtype == "not_found":
            return NotFound(record["id"])
        if mtype == "adjacent":
            return Adjacent(tuple(record["ids"]))
        if mtype == "adjacent_result":
            return AdjacentResult(tuple(record["entries"]))
        if mtype == "find":
            return Find(tuple(record["tokens"]))
        if mtype == "find_result":
            return FindResult(tuple(record["ids"]))
    except KeyError as exc:
        raise DecodeError("MALFORMED_SYNTAX", f"{mtype} message missing field {exc}") from exc
    raise DecodeError("UNKNOWN_KIND", f"unknown msg_type {mtype!r}")


def encode_message(msg: Message) -> bytes:
    return codec.canonical_bytes(message_to_record(msg))


def decode_message(data: bytes) -> Message:
    import json

    try:
        return record_to_message(json.loads(data.decode("utf-8")))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise DecodeError("MALFORMED_SYNTAX", str(exc)) from exc


# ---------------------------------------------------------------------------
# framing

_LEN = struct.Struct(">I")


def frame(payload: bytes) -> bytes:
    return _LEN.pack(len(payload)) + payload


def frame_message(msg: Message) -> bytes:
    return frame(encode_message(msg))


def split_frames(data: bytes) -> list[bytes]:
    payloads = []
    pos = 0
    while pos < len(data):
        if pos + 4 > len(data):
            raise TransportError("MALFORMED_SYNTAX", "truncated frame header")
        (length,) = _LEN.unpack_from(data, pos)
        pos += 4
        if pos + length > len(data):
            raise TransportError("MALFORMED_SYNTAX", "truncated frame body")
        payloads.append(data[pos : pos + length])
        pos += length
    return payloads


# ---------------------------------------------------------------------------
# peer node


@dataclass
class InboxItem:
    """An offer awaiting the owner: quarantined pieces and their verdicts."""

    offer_id: str
    from_agent: str
    pieces: tuple[PieceOfKnowledge, ...]
    decisions: dict[PieceId, GateDecision]
    status: str = "pending"  # pending | accepted | rejected


@dataclass
class PendingOffer:
    offer_id: str
    to: str
    ids: tuple[PieceId, ...]
    accepted: tuple[PieceId, ...] = ()
    rejected: tuple[PieceId, ...] = ()
    reject_reason: str = ""


class Peer:
    """One territory attached to the wire protocol."""

    def __init__(
        self,
        territory: Territory,
        rules: Optional[list[GatekeeperRule]] = None,
        cfg: Optional[MeasureConfig] = None,
        address: str = "",
        glue_radius: int = 1,
        now_fn=now_utc,
    ):
        self.territory = territory
        self.rules = rules if rules is not None else []
        self.cfg = cfg or MeasureConfig()
        self.address = address
        self.glue_radius = glue_radius
        self.now_fn = now_fn
        self.inbox: list[InboxItem] = []
        self.relay_notices: list[Relay] = []
        self.pending_offers: dict[str, PendingOffer] = {}
        self._offer_seq = 0
        self._processed: dict[tuple[str, str], list[Message]] = {}
        self._seen_relays: set[tuple[str, str, str]] = set()
        self._lock = threading.RLock()

    # -- outgoing ------------------------------------------------------------

    def next_offer_id(self) -> str:
        with self._lock:
            self._offer_seq += 1
            return f"{self.territory.owner}:{self._offer_seq}"

    def offer(self, link: "PeerLink", bundle: Bundle) -> str:
        """Send an offer; replies are folded into pending-offer state."""
        bundle.check()
        offer_id = self.next_offer_id()
        msg = Offer(offer_id, self.territory.owner, bundle)
        with self._lock:
            self.pending_offers[offer_id] = PendingOffer(offer_id, link.address, tuple(bundle.ids()))
        for reply in call_messages(link, msg):
            self.handle_message(reply)
        return offer_id

    def relay(self, links: Iterable["PeerLink"], piece_id: PieceId) -> list[Relay]:
        """Share coordinates only; recipients may request the bundle."""
        rid = self.territory.resolve(piece_id)
        sent = []
        for link in links:
            msg = Relay(self.territory.owner, rid, self.address)
            call_messages(link, msg)
            sent.append(msg)
        return sent

    # -- incoming ------------------------------------------------------------

    def handle_frame(self, data: bytes) -> list[bytes]:
        payloads = split_frames(data)
        replies: list[Message] = []
        for payload in payloads:
            replies.extend(self.handle_message(decode_message(payload)))
        return [frame_message(r) for r in replies]

    def handle_message(self, msg: Message) -> list[Message]:
        if isinstance(msg, Offer):
            return self.receive_offer(msg)
        if isinstance(msg, Request):
            return [self._handle_request(msg)]
        if isinstance(msg, Relay):
            self._handle_relay(msg)
            return []
        if isinstance(msg, (Accept, Reject)):
            self._handle_reply(msg)
            return []
        if isinstance(msg, Adjacent):
            return [self._handle_adjacent(msg)]
        if isinstance(msg, Find):
            return [self._handle_find(msg)]
        if isinstance(msg, (Deliver, NotFound, AdjacentResult, FindResult)):
            return []  # responses handled by their callers
        raise DecodeError("UNKNOWN_KIND", f"unhandled message {msg!r}")

    def receive_offer(self, offer: Offer) -> list[Message]:
        """Gate every offered piece; copy accepted ones in, park quarantined
        ones, reply with what was taken and what was refused."""
        key = (offer.from_agent, offer.offer_id)
        with self._lock:
            if key in self._processed:
                return list(self._processed[key])
            try:
                offer.bundle.check()
            except MmmError:
                replies: list[Message] = [
                    Reject(offer.offer_id, tuple(offer.bundle.ids()), "MALFORMED")
                ]
                self._processed[key] = replies
                return list(replies)
            now = self.now_fn()
            decisions = evaluate(self.rules, offer.bundle.pieces, self.territory, self.cfg)
            accepted = [p for p in offer.bundle.pieces if decisions[p.id].verdict == "accept"]
            rejected = [p for p in offer.bundle.pieces if decisions[p.id].verdict == "reject"]
            parked = [p for p in offer.bundle.pieces if decisions[p.id].verdict == "quarantine"]
            self.territory.apply_bundle(accepted, "accepted-share", now)
            if parked:
                self.inbox.append(
                    InboxItem(offer.offer_id, offer.from_agent, tuple(parked), decisions)
                )
            replies = []
            if accepted:
                replies.append(Accept(offer.offer_id, tuple(p.id for p in accepted)))
            if rejected:
                reason = decisions[rejected[0].id].fired_rule or "rejected"
                replies.append(Reject(offer.offer_id, tuple(p.id for p in rejected), reason))
            self._processed[key] = replies
            return list(replies)

    def accept_parked(self, offer_id: str, ids: Optional[Iterable[PieceId]] = None) -> list[PieceOfKnowledge]:
        """Owner decision on a quarantined offer; idempotent."""
        with self._lock:
            item = self._find_inbox(offer_id)
            chosen = set(ids) if ids is not None else {p.id for p in item.pieces}
            pieces = [p for p in item.pieces if p.id in chosen]
            self.territory.apply_bundle(pieces, "accepted-share", self.now_fn())
            item.status = "accepted"
            return pieces

    def reject_parked(self, offer_id: str, reason: str = "owner rejected") -> None:
        with self._lock:
            item = self._find_inbox(offer_id)
            item.status = "rejected"

    def _find_inbox(self, offer_id: str) -> InboxItem:
        for item in self.inbox:
            if item.offer_id == offer_id:
                return item
        raise MmmError("UNKNOWN_PIECE", f"no inbox entry {offer_id}")

    def _handle_request(self, msg: Request) -> Message:
        if self.territory.try_resolve(msg.id) is None:
            return NotFound(msg.id)
        radius = self.glue_radius if msg.radius is None else msg.radius
        return Deliver(msg.id, make_bundle(self.territory, msg.id, radius))

    def _handle_relay(self, msg: Relay) -> None:
        key = (msg.from_agent, msg.id, msg.locator)
        with self._lock:
            if key not in self._seen_relays:
                self._seen_relays.add(key)
                self.relay_notices.append(msg)

    def _handle_reply(self, msg: Accept | Reject) -> None:
        with self._lock:
            pending = self.pending_offers.get(msg.offer_id)
            if pending is None:
                return
            if isinstance(msg, Accept):
                pending.accepted = tuple(sorted(set(pending.accepted) | set(msg.ids)))
            else:
                pending.rejected = tuple(sorted(set(pending.rejected) | set(msg.ids)))
                pending.reject_reason = msg.reason

    def _handle_adjacent(self, msg: Adjacent) -> Message:
        view = build_view(self.territory)
        entries: list[dict] = []
        seen = set()

        def emit(via: PieceId, nbr: PieceId) -> None:
            # links between requested ids are reported too: the caller
            # knows best what it already holds (frontier filters them)
            if (via, nbr) in seen:
                return
            seen.add((via, nbr))
            piece = view.pieces[nbr]
            preview = {
                "id": nbr,
                "via": via,
                "locator": self.address,
                "kind": piece.kind,
                "measures": {
                    "depth": measure_value(view, nbr, self.cfg, "depth"),
                    "utility": measure_value(view, nbr, self.cfg, "utility"),
                    "implantation": measure_value(view, nbr, self.cfg, "implantation"),
                    "flag_count": measure_value(view, nbr, self.cfg, "flag_count"),
                },
            }
            if piece.is_edge:
                preview["edge_kind"] = piece.edge_kind
            entries.append(preview)

        held_edges = [(pid, self.territory.get(pid)) for pid in self.territory.ids()
                      if self.territory.get(pid).is_edge]
        for pid in sorted(set(msg.ids)):
            rid = self.territory.try_resolve(pid)
            if rid is not None:
                for nbr in view.step_adj[rid]:
                    emit(pid, nbr)
            # held edges referencing the requested id are one incidence step
            # away even when this peer does not hold the endpoint itself
            for eid, edge in held_edges:
                for end in (edge.source, edge.target):
                    if end == pid or (rid is not None and self.territory.try_resolve(end) == rid):
                        emit(pid, eid)
        entries.sort(key=lambda e: (e["via"], e["id"]))
        return AdjacentResult(tuple(entries))

    def _handle_find(self, msg: Find) -> Message:
        tokens = set(msg.tokens)
        if not tokens:
            return FindResult(())
        hits = []
        for pid in self.territory.ids():
            piece = self.territory.get(pid)
            if tokens <= set(normalize_tokens(piece.content)):
                hits.append(pid)
        return FindResult(tuple(sorted(hits)))


# ---------------------------------------------------------------------------
# transports


class PeerLink:
    """Anything that can carry one frame exchange to a peer."""

    address: str

    def call(self, data: bytes) -> bytes:  # pragma: no cover - interface
        raise NotImplementedError


def call_messages(link: PeerLink, msg: Message) -> list[Message]:
    """One request frame out, all reply messages back."""
    raw = link.call(frame_message(msg))
    return [decode_message(p) for p in split_frames(raw)]


class LoopbackLink(PeerLink):
    def __init__(self, network: "LoopbackNetwork", address: str):
        self.network = network
        self.address = address

    def call(self, data: bytes) -> bytes:
        return self.network.deliver(self.address, data)


class LoopbackNetwork:
    """Synchronous in-process transport with wire-identical framing."""

    def __init__(self):
        self.peers: dict[str, Peer] = {}
        self.down: set[str] = set()

    def register(self, peer: Peer, address: Optional[str] = None) -> LoopbackLink:
        address = address or peer.address or f"loop:{len(self.peers)}"
        peer.address = address
        self.peers[address] = peer
        return LoopbackLink(self, address)

    def link(self, address: str) -> LoopbackLink:
        return LoopbackLink(self, address)

    def deliver(self, address: str, data: bytes) -> bytes:
        if address in self.down or address not in self.peers:
            raise TransportError("PEER_UNREACHABLE", f"{address} is unreachable")
        return b"".join(self.peers[address].handle_frame(data))


class TcpLink(PeerLink):
    """Connect-per-exchange client for ``host:port`` peers."""

    def __init__(self, address: str, timeout: float = 5.0):
        self.address = address
        self.timeout = timeout

    def call(self, data: bytes) -> bytes:
        host, _, port = self.address.rpartition(":")
        try:
            with socket.create_connection((host, int(port)), timeout=self.timeout) as sock:
                sock.sendall(data)
                sock.shutdown(socket.SHUT_WR)
                chunks = []
                while True:
                    chunk = sock.recv(65536)
                    if not chunk:
                        break
                    chunks.append(chunk)
        except (OSError, ValueError) as exc:
            raise TransportError("PEER_UNREACHABLE", f"{self.address}: {exc}") from exc
        return b"".join(chunks)


class _PeerRequestHandler(socketserver.BaseRequestHandler):
    def handle(self):
        chunks = []
        while True:
            chunk = self.request.recv(65536)
            if not chunk:
                break
            chunks.append(chunk)
        try:
            replies = self.server.peer.handle_frame(b"".join(chunks))  # type: ignore[attr-defined]
        except MmmError:
            return
        for reply in replies:
            self.request.sendall(reply)


class PeerServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, peer: Peer, host: str = "127.0.0.1", port: int = 0):
        super().__init__((host, port), _PeerRequestHandler)
        self.peer = peer
        peer.address = f"{self.server_address[0]}:{self.server_address[1]}"

    def start(self) -> threading.Thread:
        thread = threading.Thread(target=self.serve_forever, daemon=True)
        thread.start()
        return thread
