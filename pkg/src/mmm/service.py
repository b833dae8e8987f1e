"""HTTP interface exposing one territory to the UI and to scripts.

Thin by contract: every endpoint calls exactly the library operation it
names and returns canonical MMM-JSON (rules are plain text).  Mutations
are serialized per territory and flushed to the territory directory, so
shutting the service down never loses state.
"""

from __future__ import annotations

import json
import re
import threading
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from typing import Callable, Optional
from urllib.parse import parse_qs, urlparse

from . import codec
from .core import Territory
from .errors import DecodeError, MmmError, TransportError
from .measures import build_view, measure_value, topography
from .reward import activity_profile, trickle
from .sharing import PeerLink, PeerServer, TcpLink, make_bundle
from .storage import (
    TerritoryDir,
    rules_file_text,
    save_dir,
    save_rules,
    session_now,
    session_rng,
)
from .wayfarer import (
    FrontierEntry,
    PathRequired,
    Served,
    frontier,
    hybrid_search,
    step,
)

_NOT_FOUND_CODES = {"UNKNOWN_PIECE", "UNKNOWN_ANCHOR", "UNKNOWN_VERSION", "NOT_FOUND"}


def _decision_record(decision) -> dict:
    return {"verdict": decision.verdict, "fired_rule": decision.fired_rule}


def _entry_record(entry: FrontierEntry) -> dict:
    record = {
        "id": entry.id,
        "via": entry.via,
        "locator": entry.locator,
        "kind": entry.kind,
        "measures": entry.measures,
    }
    if entry.edge_kind:
        record["edge_kind"] = entry.edge_kind
    return record


def _finite(value: float) -> Optional[float]:
    return None if value == float("inf") else value


class ServiceState:
    """Routes bound to one territory directory."""

    def __init__(
        self,
        store: TerritoryDir,
        peers: Optional[list[str]] = None,
        link_factory: Callable[[str], PeerLink] = TcpLink,
    ):
        self.store = store
        self.peer = store.peer
        self.link_factory = link_factory
        self.peer_addresses = list(peers if peers is not None else store.config.get("peers", []))
        self.lock = threading.RLock()
        self.routes: list[tuple[str, re.Pattern, Callable]] = [
            ("GET", re.compile(r"^/pieces$"), self.get_pieces),
            ("POST", re.compile(r"^/pieces$"), self.post_piece),
            ("GET", re.compile(r"^/pieces/(?P<pid>[0-9a-f]{32})$"), self.get_piece),
            ("POST", re.compile(r"^/pieces/(?P<pid>[0-9a-f]{32})/public$"), self.post_public),
            ("DELETE", re.compile(r"^/pieces/(?P<pid>[0-9a-f]{32})$"), self.delete_piece),
            ("POST", re.compile(r"^/pieces/(?P<pid>[0-9a-f]{32})/flag$"), self.post_flag),
            ("POST", re.compile(r"^/annotate$"), self.post_annotate),
            ("GET", re.compile(r"^/findings$"), self.get_findings),
            ("GET", re.compile(r"^/measures/(?P<pid>[0-9a-f]{32})$"), self.get_measures),
            ("GET", re.compile(r"^/topography$"), self.get_topography),
            ("GET", re.compile(r"^/duplicates$"), self.get_duplicates),
            ("POST", re.compile(r"^/merge$"), self.post_merge),
            ("GET", re.compile(r"^/rules$"), self.get_rules),
            ("PUT", re.compile(r"^/rules$"), self.put_rules),
            ("GET", re.compile(r"^/frontier$"), self.get_frontier),
            ("POST", re.compile(r"^/step$"), self.post_step),
            ("GET", re.compile(r"^/search$"), self.get_search),
            ("POST", re.compile(r"^/offer$"), self.post_offer),
            ("GET", re.compile(r"^/inbox$"), self.get_inbox),
            ("POST", re.compile(r"^/inbox/(?P<offer_id>[^/]+)/accept$"), self.post_inbox_accept),
            ("POST", re.compile(r"^/inbox/(?P<offer_id>[^/]+)/reject$"), self.post_inbox_reject),
            ("POST", re.compile(r"^/relay$"), self.post_relay),
            ("POST", re.compile(r"^/reward/trickle$"), self.post_trickle),
            ("GET", re.compile(r"^/activity/(?P<agent>[^/]+)$"), self.get_activity),
        ]

    @property
    def territory(self) -> Territory:
        return self.peer.territory

    def links(self) -> list[PeerLink]:
        return [self.link_factory(a) for a in self.peer_addresses]

    def dispatch(self, method: str, path: str, query: dict, body: Optional[dict | str]):
        for route_method, pattern, handler in self.routes:
            match = pattern.match(path)
            if match and route_method == method:
                return handler(query=query, body=body, **match.groupdict())
        raise MmmError("NOT_FOUND", f"no route {method} {path}")

    def _flush(self) -> None:
        save_dir(self.store)

    # -- pieces -------------------------------------------------------------

    def get_pieces(self, query, body):
        doc = json.loads(codec.encode(self.territory.pieces()))
        return 200, doc

    def get_piece(self, query, body, pid):
        return 200, codec.piece_to_record(self.territory.get(pid))

    def post_piece(self, query, body):
        body = _require_object(body)
        with self.lock:
            piece = self.territory.create_piece(
                kind=body.get("kind", "narrative"),
                content=body.get("content", ""),
                author=body.get("author", self.territory.owner),
                now=session_now(),
                rng=session_rng(self.territory),
                label=body.get("label"),
                reverse_label=body.get("reverse_label"),
                source=body.get("source"),
                target=body.get("target"),
            )
            self._flush()
        return 201, codec.piece_to_record(piece)

    def post_public(self, query, body, pid):
        with self.lock:
            piece = self.territory.set_public(pid)
            self._flush()
        return 200, codec.piece_to_record(piece)

    def delete_piece(self, query, body, pid):
        with self.lock:
            self.territory.delete_piece(pid)
            self._flush()
        return 204, None

    def post_flag(self, query, body, pid):
        body = _require_object(body)
        with self.lock:
            meta = self.territory.red_flag(
                pid, body.get("flagger", self.territory.owner),
                session_now(), body.get("code", "flag"),
            )
            self._flush()
        return 200, {
            "id": self.territory.resolve(pid),
            "red_flags": [
                {"flagger": f.flagger, "timestamp": f.timestamp, "code": f.code}
                for f in meta.red_flags
            ],
        }

    def post_annotate(self, query, body):
        body = _require_object(body)
        with self.lock:
            node, edge = self.territory.annotate(
                anchor=body.get("anchor", ""),
                edge_kind=body.get("edge_kind", "nuances"),
                annotation_content=body.get("content", ""),
                author=body.get("author", self.territory.owner),
                now=session_now(),
                rng=session_rng(self.territory),
                label=body.get("label"),
            )
            self._flush()
        return 201, {"node": codec.piece_to_record(node), "edge": codec.piece_to_record(edge)}

    # -- validation, measures -----------------------------------------------

    def get_findings(self, query, body):
        findings = self.territory.validate()
        return 200, {
            "findings": [
                {"piece": f.piece, "code": f.code, "severity": f.severity} for f in findings
            ]
        }

    def get_measures(self, query, body, pid):
        names = query.get("names", ["depth,utility,implantation,visibility,flag_count"])[0]
        to = query.get("to", [None])[0]
        view = build_view(self.territory)
        values = {}
        for name in [n.strip() for n in names.split(",") if n.strip()]:
            values[name] = _finite(
                measure_value(view, pid, self.peer.cfg, name, to=to)
            )
        return 200, {"id": self.territory.resolve(pid), "measures": values}

    def get_topography(self, query, body):
        measure = query.get("measure", ["depth"])[0]
        grid = topography(build_view(self.territory), self.peer.cfg, measure)
        return 200, {
            "measure": measure,
            "grid": [
                {"piece": e.piece, "x": e.x, "y": e.y, "height": e.height} for e in grid
            ],
        }

    def get_duplicates(self, query, body):
        tau = float(query.get("tau", ["0.8"])[0])
        pairs = self.territory.detect_duplicates(tau)
        return 200, {
            "pairs": [{"a": a, "b": b, "similarity": s} for a, b, s in pairs]
        }

    def post_merge(self, query, body):
        body = _require_object(body)
        with self.lock:
            merged = self.territory.merge(body.get("keep", ""), body.get("absorb", ""))
            self._flush()
        return 200, codec.piece_to_record(merged)

    # -- rules ---------------------------------------------------------------

    def get_rules(self, query, body):
        return 200, rules_file_text(self.store)

    def put_rules(self, query, body):
        if not isinstance(body, str):
            raise MmmError("SYNTAX_ERROR", "rules body must be text")
        with self.lock:
            save_rules(self.store, body)
        return 204, None

    # -- wayfarer ------------------------------------------------------------

    def get_frontier(self, query, body):
        front = frontier(self.territory, self.links())
        return 200, {
            "entries": [_entry_record(e) for e in front.entries],
            "peer_errors": [list(e) for e in front.peer_errors],
        }

    def post_step(self, query, body):
        body = _require_object(body)
        entry = FrontierEntry(
            id=body.get("id", ""),
            via=body.get("via", ""),
            locator=body.get("locator", ""),
            kind=body.get("kind", ""),
            edge_kind=body.get("edge_kind"),
            measures={},
        )
        with self.lock:
            outcome = step(self.peer, entry, self.link_factory(entry.locator))
            self._flush()
        return 200, {
            "decision": _decision_record(outcome.decision),
            "applied": outcome.applied,
            "pieces": [p.id for p in outcome.pieces],
        }

    def get_search(self, query, body):
        q = query.get("q", [""])[0]
        result = hybrid_search(self.peer, self.links(), q)
        if isinstance(result, Served):
            return 200, {"result": "served", "piece": codec.piece_to_record(result.piece)}
        if isinstance(result, PathRequired):
            return 200, {
                "result": "path_required",
                "entries": [_entry_record(e) for e in result.entries],
            }
        return 200, {"result": "no_match"}

    # -- sharing -------------------------------------------------------------

    def post_offer(self, query, body):
        body = _require_object(body)
        root = body.get("root", "")
        radius = body.get("glue_radius", self.peer.glue_radius)
        with self.lock:
            bundle = make_bundle(self.territory, root, radius)
            offer_id = self.peer.offer(self.link_factory(body.get("to", "")), bundle)
            self._flush()
        pending = self.peer.pending_offers[offer_id]
        return 200, {
            "offer_id": offer_id,
            "ids": list(pending.ids),
            "accepted": list(pending.accepted),
            "rejected": list(pending.rejected),
        }

    def get_inbox(self, query, body):
        items = []
        for item in self.peer.inbox:
            items.append(
                {
                    "offer_id": item.offer_id,
                    "from": item.from_agent,
                    "status": item.status,
                    "pieces": [codec.piece_to_record(p) for p in item.pieces],
                    "decisions": {
                        pid: _decision_record(d) for pid, d in sorted(item.decisions.items())
                    },
                }
            )
        return 200, {"items": items}

    def post_inbox_accept(self, query, body, offer_id):
        body = body if isinstance(body, dict) else {}
        with self.lock:
            pieces = self.peer.accept_parked(offer_id, body.get("ids"))
            self._flush()
        return 200, {"accepted": [p.id for p in pieces]}

    def post_inbox_reject(self, query, body, offer_id):
        body = body if isinstance(body, dict) else {}
        with self.lock:
            self.peer.reject_parked(offer_id, body.get("reason", "owner rejected"))
            self._flush()
        return 200, {"rejected": offer_id}

    def post_relay(self, query, body):
        body = _require_object(body)
        to = body.get("to", [])
        if isinstance(to, str):
            to = [to]
        with self.lock:
            sent = self.peer.relay([self.link_factory(a) for a in to], body.get("id", ""))
        return 200, {"relayed": body.get("id", ""), "recipients": len(sent)}

    # -- rewards ---------------------------------------------------------------

    def post_trickle(self, query, body):
        body = _require_object(body)
        dist = trickle(
            build_view(self.territory),
            body.get("id", ""),
            float(body.get("total", 0.0)),
            float(body.get("gamma", 0.5)),
            int(body.get("horizon", 4)),
        )
        return 200, {
            "total": dist.total,
            "shares": {agent: value for agent, value in sorted(dist.shares.items())},
        }

    def get_activity(self, query, body, agent):
        profile = activity_profile(build_view(self.territory), agent)
        return 200, {
            "agent": profile.agent,
            "questions_answered_by_others": profile.questions_answered_by_others,
            "glue_authored": profile.glue_authored,
            "bridges_authored": profile.bridges_authored,
        }


def _require_object(body) -> dict:
    if not isinstance(body, dict):
        raise MmmError("MALFORMED_SYNTAX", "request body must be a JSON object")
    return body


class _Handler(BaseHTTPRequestHandler):
    server: "ServiceServer"

    def log_message(self, fmt, *args):  # quiet tests and scripts
        pass

    def _run(self, method: str) -> None:
        parsed = urlparse(self.path)
        query = parse_qs(parsed.query)
        length = int(self.headers.get("Content-Length") or 0)
        raw = self.rfile.read(length) if length else b""
        body: Optional[dict | str] = None
        if raw:
            if (self.headers.get("Content-Type") or "").startswith("text/plain"):
                body = raw.decode("utf-8")
            else:
                try:
                    body = json.loads(raw.decode("utf-8"))
                except (json.JSONDecodeError, UnicodeDecodeError):
                    self._send(400, {"error": "MALFORMED_SYNTAX", "message": "bad JSON body"})
                    return
        try:
            status, payload = self.server.state.dispatch(method, parsed.path, query, body)
        except TransportError as exc:
            self._send(502, {"error": exc.code, "message": exc.message})
            return
        except (DecodeError, MmmError) as exc:
            status = 404 if exc.code in _NOT_FOUND_CODES else 400
            self._send(status, {"error": exc.code, "message": exc.message})
            return
        self._send(status, payload)

    def _send(self, status: int, payload) -> None:
        if payload is None:
            self.send_response(status)
            self.send_header("Content-Length", "0")
            self.end_headers()
            return
        if isinstance(payload, str):
            data = payload.encode("utf-8")
            ctype = "text/plain; charset=utf-8"
        else:
            data = codec.canonical_bytes(payload)
            ctype = "application/json; charset=utf-8"
        self.send_response(status)
        self.send_header("Content-Type", ctype)
        self.send_header("Content-Length", str(len(data)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.end_headers()
        self.wfile.write(data)

    def do_GET(self):
        self._run("GET")

    def do_POST(self):
        self._run("POST")

    def do_PUT(self):
        self._run("PUT")

    def do_DELETE(self):
        self._run("DELETE")

    def do_OPTIONS(self):
        # CORS preflight for the browser client
        self.send_response(204)
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, PUT, DELETE, OPTIONS")
        self.send_header("Access-Control-Allow-Headers", "Content-Type")
        self.send_header("Content-Length", "0")
        self.end_headers()


class ServiceServer(ThreadingHTTPServer):
    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, state: ServiceState, host: str, port: int):
        try:
            super().__init__((host, port), _Handler)
        except OSError as exc:
            raise MmmError("BIND_FAILED", f"{host}:{port}: {exc}") from exc
        self.state = state


def serve(
    store: TerritoryDir,
    bind: str = "127.0.0.1:0",
    peers: Optional[list[str]] = None,
    peer_bind: Optional[str] = None,
    link_factory: Callable[[str], PeerLink] = TcpLink,
) -> tuple[ServiceServer, Optional[PeerServer]]:
    """Start the HTTP service (and optionally the wire-protocol listener).

    Callers own shutdown; shutting down flushes the territory to disk.
    """
    host, _, port = bind.rpartition(":")
    state = ServiceState(store, peers=peers, link_factory=link_factory)
    server = ServiceServer(state, host or "127.0.0.1", int(port))
    peer_server = None
    if peer_bind:
        phost, _, pport = peer_bind.rpartition(":")
        try:
            peer_server = PeerServer(store.peer, phost or "127.0.0.1", int(pport))
        except OSError as exc:
            server.server_close()
            raise MmmError("BIND_FAILED", f"{peer_bind}: {exc}") from exc
        peer_server.start()
    threading.Thread(target=server.serve_forever, daemon=True).start()
    return server, peer_server


def shutdown(server: ServiceServer, peer_server: Optional[PeerServer] = None) -> None:
    server.shutdown()
    server.server_close()
    if peer_server is not None:
        peer_server.shutdown()
        peer_server.server_close()
    save_dir(server.state.store)
