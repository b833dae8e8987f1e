"""Territory directories on disk.

A territory lives in a directory holding:

  territory.mmm.json   the pieces, canonical MMM-JSON
  rules.txt            gatekeeper rules, verbatim text
  config.mmm.json      owner, glue radius, peers, measure config
  meta.mmm.json        local metadata sidecar (origin, flags, accepted_at)
  inbox.mmm.json       parked offers awaiting the owner

All JSON files are canonical bytes.  A ``.lock`` file beside the territory
serializes CLI mutations.
"""

from __future__ import annotations

import hashlib
import json
import os
import time
from dataclasses import dataclass
from pathlib import Path
from random import Random

from . import codec
from .core import LocalMeta, RedFlag, Territory, now_utc
from .errors import MmmError
from .gatekeeper import GateDecision, parse_rules
from .measures import MeasureConfig
from .sharing import InboxItem, Peer

CONFIG_VERSION = "1.0"
META_VERSION = "1.0"
INBOX_VERSION = "1.0"

TERRITORY_FILE = "territory.mmm.json"
RULES_FILE = "rules.txt"
CONFIG_FILE = "config.mmm.json"
META_FILE = "meta.mmm.json"
INBOX_FILE = "inbox.mmm.json"


def session_now() -> str:
    """Wall clock, or the MMM_NOW override used by deterministic tests."""
    return os.environ.get("MMM_NOW") or now_utc()


def session_rng(territory: Territory) -> Random:
    """Id stream: seeded from MMM_SEED mixed with the territory's current
    ids so repeated runs reproduce and successive creations differ."""
    seed_env = os.environ.get("MMM_SEED")
    if seed_env is None:
        return Random()
    digest = hashlib.md5(
        (seed_env + ":" + ",".join(territory.ids())).encode("utf-8")
    ).hexdigest()
    return Random(int(digest, 16))


@dataclass
class TerritoryDir:
    path: Path
    peer: Peer
    config: dict

    @property
    def territory(self) -> Territory:
        return self.peer.territory


def default_config(owner: str) -> dict:
    return {
        "config_version": CONFIG_VERSION,
        "owner": owner,
        "glue_radius": 1,
        "peers": [],
        "measure_config": {},
    }


def init_dir(path: Path, owner: str) -> TerritoryDir:
    path = Path(path)
    if (path / TERRITORY_FILE).exists():
        raise MmmError("LOAD_FAILED", f"{path} already holds a territory")
    path.mkdir(parents=True, exist_ok=True)
    (path / TERRITORY_FILE).write_bytes(codec.encode([]))
    (path / RULES_FILE).write_text("", encoding="utf-8")
    (path / CONFIG_FILE).write_bytes(codec.canonical_bytes(default_config(owner)))
    return load_dir(path)


def _load_json(path: Path):
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise MmmError("LOAD_FAILED", f"{path}: {exc}") from exc


def load_dir(path: Path) -> TerritoryDir:
    path = Path(path)
    territory_file = path / TERRITORY_FILE
    if not territory_file.exists():
        raise MmmError("LOAD_FAILED", f"no territory at {path}")
    pieces = codec.decode(territory_file.read_bytes())

    config = default_config(owner=path.name or "owner")
    if (path / CONFIG_FILE).exists():
        loaded = _load_json(path / CONFIG_FILE)
        if not isinstance(loaded, dict) or loaded.get("config_version") != CONFIG_VERSION:
            raise MmmError("LOAD_FAILED", f"bad config in {path}")
        config.update(loaded)

    meta: dict[str, LocalMeta] = {}
    if (path / META_FILE).exists():
        doc = _load_json(path / META_FILE)
        if doc.get("meta_version") != META_VERSION:
            raise MmmError("LOAD_FAILED", f"bad meta sidecar in {path}")
        for entry in doc.get("entries", []):
            meta[entry["id"]] = LocalMeta(
                accepted_at=entry["accepted_at"],
                origin=entry["origin"],
                red_flags=tuple(
                    RedFlag(f["flagger"], f["timestamp"], f["code"])
                    for f in entry.get("red_flags", [])
                ),
            )

    territory = Territory.from_snapshot(config["owner"], pieces, meta)
    rules_path = path / RULES_FILE
    rules = parse_rules(rules_path.read_text(encoding="utf-8")) if rules_path.exists() else []
    cfg = MeasureConfig(**config.get("measure_config", {}))
    peer = Peer(territory, rules, cfg=cfg, glue_radius=config.get("glue_radius", 1),
                now_fn=session_now)

    inbox_path = path / INBOX_FILE
    if inbox_path.exists():
        doc = _load_json(inbox_path)
        if doc.get("inbox_version") != INBOX_VERSION:
            raise MmmError("LOAD_FAILED", f"bad inbox sidecar in {path}")
        for item in doc.get("items", []):
            peer.inbox.append(
                InboxItem(
                    offer_id=item["offer_id"],
                    from_agent=item["from"],
                    pieces=tuple(codec.record_to_piece(r) for r in item["pieces"]),
                    decisions={
                        pid: GateDecision(d["verdict"], d.get("fired_rule"))
                        for pid, d in item["decisions"].items()
                    },
                    status=item["status"],
                )
            )
    return TerritoryDir(path=path, peer=peer, config=config)


def save_dir(store: TerritoryDir) -> None:
    path = store.path
    territory = store.peer.territory
    (path / TERRITORY_FILE).write_bytes(codec.encode(territory.pieces()))
    entries = []
    for pid in territory.ids():
        m = territory.meta(pid)
        entry = {"id": pid, "accepted_at": m.accepted_at, "origin": m.origin}
        if m.red_flags:
            entry["red_flags"] = [
                {"flagger": f.flagger, "timestamp": f.timestamp, "code": f.code}
                for f in m.red_flags
            ]
        entries.append(entry)
    (path / META_FILE).write_bytes(
        codec.canonical_bytes({"meta_version": META_VERSION, "entries": entries})
    )
    items = []
    for item in store.peer.inbox:
        items.append(
            {
                "offer_id": item.offer_id,
                "from": item.from_agent,
                "status": item.status,
                "pieces": [codec.piece_to_record(p) for p in item.pieces],
                "decisions": {
                    pid: {"verdict": d.verdict, "fired_rule": d.fired_rule}
                    for pid, d in sorted(item.decisions.items())
                },
            }
        )
    (path / INBOX_FILE).write_bytes(
        codec.canonical_bytes({"inbox_version": INBOX_VERSION, "items": items})
    )


def save_rules(store: TerritoryDir, text: str) -> None:
    parse_rules(text)  # reject before persisting
    (store.path / RULES_FILE).write_text(text, encoding="utf-8")
    store.peer.rules = parse_rules(text)


def rules_file_text(store: TerritoryDir) -> str:
    rules_path = store.path / RULES_FILE
    return rules_path.read_text(encoding="utf-8") if rules_path.exists() else ""


class DirLock:
    """Best-effort exclusive lock beside the territory file."""

    def __init__(self, path: Path, timeout: float = 5.0):
        self.lock_path = Path(path) / ".lock"
        self.timeout = timeout

    def __enter__(self):
        deadline = time.monotonic() + self.timeout
        while True:
            try:
                fd = os.open(self.lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
                os.write(fd, str(os.getpid()).encode())
                os.close(fd)
                return self
            except FileExistsError:
                if time.monotonic() >= deadline:
                    raise MmmError("LOAD_FAILED", f"territory locked: {self.lock_path}")
                time.sleep(0.05)

    def __exit__(self, *exc):
        try:
            self.lock_path.unlink()
        except FileNotFoundError:
            pass
        return False
