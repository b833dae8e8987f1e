"""Command-line front door.

Territory state lives in a directory (territory.mmm.json, rules.txt,
config.mmm.json plus sidecars).  Stdout carries canonical MMM-JSON or flat
comma-separated tables; diagnostics go to stderr.  Exit codes: 0 success,
1 domain error, 2 usage error.  MMM_SEED makes created ids deterministic;
MMM_NOW pins timestamps for golden tests.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from . import codec
from .errors import MmmError
from .gatekeeper import parse_rules
from .measures import build_view, measure_value, topography
from .reward import activity_profile, trickle
from .service import serve, shutdown
from .sharing import TcpLink, make_bundle
from .sim import load_scenario, run_scenario
from .storage import (
    DirLock,
    init_dir,
    load_dir,
    rules_file_text,
    save_dir,
    save_rules,
    session_now,
    session_rng,
)
from .wayfarer import FrontierEntry, PathRequired, Served, frontier, hybrid_search, step


def _print_json(obj) -> None:
    sys.stdout.write(codec.canonical_bytes(obj).decode("utf-8"))


def _print_piece(piece) -> None:
    _print_json(codec.piece_to_record(piece))


def _links(store, peers_arg):
    addresses = peers_arg.split(",") if peers_arg else store.config.get("peers", [])
    return [TcpLink(a) for a in addresses if a]


def cmd_init(args):
    store = init_dir(Path(args.territory), args.owner or Path(args.territory).name)
    _print_json(store.config)


def cmd_add(args):
    with DirLock(args.territory):
        store = load_dir(Path(args.territory))
        piece = store.territory.create_piece(
            args.kind, args.content, args.author or store.territory.owner,
            session_now(), session_rng(store.territory), label=args.label,
        )
        save_dir(store)
    _print_piece(piece)


def cmd_link(args):
    with DirLock(args.territory):
        store = load_dir(Path(args.territory))
        piece = store.territory.create_piece(
            args.edge_kind, args.content, args.author or store.territory.owner,
            session_now(), session_rng(store.territory),
            label=args.label, reverse_label=args.reverse_label,
            source=args.source, target=args.target,
        )
        save_dir(store)
    _print_piece(piece)


def cmd_annotate(args):
    with DirLock(args.territory):
        store = load_dir(Path(args.territory))
        node, edge = store.territory.annotate(
            args.anchor, args.edge_kind, args.content,
            args.author or store.territory.owner,
            session_now(), session_rng(store.territory), label=args.label,
        )
        save_dir(store)
    _print_json({"node": codec.piece_to_record(node), "edge": codec.piece_to_record(edge)})


def cmd_public(args):
    with DirLock(args.territory):
        store = load_dir(Path(args.territory))
        piece = store.territory.set_public(args.id)
        save_dir(store)
    _print_piece(piece)


def cmd_delete(args):
    with DirLock(args.territory):
        store = load_dir(Path(args.territory))
        store.territory.delete_piece(args.id)
        save_dir(store)
    _print_json({"deleted": args.id})


def cmd_flag(args):
    with DirLock(args.territory):
        store = load_dir(Path(args.territory))
        store.territory.red_flag(
            args.id, args.flagger or store.territory.owner, session_now(), args.code
        )
        save_dir(store)
    _print_json({"flagged": args.id, "flags": store.territory.flag_count(args.id)})


def cmd_validate(args):
    store = load_dir(Path(args.territory))
    findings = store.territory.validate()
    _print_json({
        "findings": [
            {"piece": f.piece, "code": f.code, "severity": f.severity} for f in findings
        ]
    })


def cmd_measure(args):
    store = load_dir(Path(args.territory))
    view = build_view(store.territory)
    value = measure_value(view, args.id, store.peer.cfg, args.name, to=args.to)
    if value == float("inf"):
        print("unreachable")
    elif value == int(value) and args.name in ("depth", "utility", "flag_count", "closeness"):
        print(int(value))
    else:
        print(value)


def cmd_topo(args):
    store = load_dir(Path(args.territory))
    grid = topography(build_view(store.territory), store.peer.cfg, args.measure)
    _print_json({
        "measure": args.measure,
        "grid": [{"piece": e.piece, "x": e.x, "y": e.y, "height": e.height} for e in grid],
    })


def cmd_dup(args):
    store = load_dir(Path(args.territory))
    pairs = store.territory.detect_duplicates(args.tau)
    _print_json({"pairs": [{"a": a, "b": b, "similarity": s} for a, b, s in pairs]})


def _earliest_authorship(piece) -> tuple[str, str]:
    return (min(a.timestamp for a in piece.authorships), piece.id)


def cmd_merge(args):
    with DirLock(args.territory):
        store = load_dir(Path(args.territory))
        t = store.territory
        a, b = t.get(args.a), t.get(args.b)
        if args.keep:
            keep = args.keep
            absorb = args.b if t.resolve(args.keep) == t.resolve(args.a) else args.a
        else:
            keep, absorb = ((a.id, b.id) if _earliest_authorship(a) <= _earliest_authorship(b)
                            else (b.id, a.id))
        merged = t.merge(keep, absorb)
        save_dir(store)
    _print_piece(merged)


def cmd_rules(args):
    store = load_dir(Path(args.territory))
    if args.action == "get":
        sys.stdout.write(rules_file_text(store))
    elif args.action == "set":
        text = Path(args.file).read_text(encoding="utf-8") if args.file else sys.stdin.read()
        with DirLock(args.territory):
            save_rules(store, text)
        _print_json({"rules": len(store.peer.rules)})
    else:  # check
        text = Path(args.file).read_text(encoding="utf-8") if args.file else rules_file_text(store)
        rules = parse_rules(text)
        _print_json({"ok": True, "rules": len(rules)})


def cmd_serve(args):
    import time

    territory = args.territory or args.territory_opt
    if not territory:
        raise MmmError("LOAD_FAILED", "serve needs a territory (positional or --territory)")
    store = load_dir(Path(territory))
    peers = args.peers.split(",") if args.peers else None
    server, peer_server = serve(store, bind=args.bind, peers=peers, peer_bind=args.peer_bind)
    host, port = server.server_address[:2]
    print(f"serving {territory} on http://{host}:{port}", file=sys.stderr, flush=True)
    if peer_server:
        print(f"peer protocol on {store.peer.address}", file=sys.stderr, flush=True)
    try:
        while True:
            time.sleep(3600)
    except KeyboardInterrupt:
        pass
    finally:
        shutdown(server, peer_server)


def cmd_offer(args):
    with DirLock(args.territory):
        store = load_dir(Path(args.territory))
        bundle = make_bundle(store.territory, args.root, args.radius)
        offer_id = store.peer.offer(TcpLink(args.to), bundle)
        save_dir(store)
    pending = store.peer.pending_offers[offer_id]
    _print_json({
        "offer_id": offer_id,
        "ids": list(pending.ids),
        "accepted": list(pending.accepted),
        "rejected": list(pending.rejected),
    })


def cmd_inbox(args):
    store = load_dir(Path(args.territory))
    _print_json({
        "items": [
            {
                "offer_id": item.offer_id,
                "from": item.from_agent,
                "status": item.status,
                "pieces": [p.id for p in item.pieces],
            }
            for item in store.peer.inbox
        ]
    })


def cmd_accept(args):
    with DirLock(args.territory):
        store = load_dir(Path(args.territory))
        ids = args.ids.split(",") if args.ids else None
        pieces = store.peer.accept_parked(args.offer_id, ids)
        save_dir(store)
    _print_json({"accepted": [p.id for p in pieces]})


def cmd_reject(args):
    with DirLock(args.territory):
        store = load_dir(Path(args.territory))
        store.peer.reject_parked(args.offer_id, args.reason)
        save_dir(store)
    _print_json({"rejected": args.offer_id})


def cmd_relay(args):
    store = load_dir(Path(args.territory))
    sent = store.peer.relay([TcpLink(a) for a in args.to.split(",") if a], args.id)
    _print_json({"relayed": args.id, "recipients": len(sent)})


def cmd_frontier(args):
    store = load_dir(Path(args.territory))
    front = frontier(store.territory, _links(store, args.peers))
    _print_json({
        "entries": [
            {
                "id": e.id, "via": e.via, "locator": e.locator,
                "kind": e.kind, "edge_kind": e.edge_kind, "measures": e.measures,
            }
            for e in front.entries
        ],
        "peer_errors": [list(x) for x in front.peer_errors],
    })


def cmd_step(args):
    with DirLock(args.territory):
        store = load_dir(Path(args.territory))
        entry = FrontierEntry(args.id, args.via or "", args.locator, "", None, {})
        outcome = step(store.peer, entry, TcpLink(args.locator))
        save_dir(store)
    _print_json({
        "verdict": outcome.decision.verdict,
        "fired_rule": outcome.decision.fired_rule,
        "applied": outcome.applied,
        "pieces": [p.id for p in outcome.pieces],
    })


def cmd_search(args):
    store = load_dir(Path(args.territory))
    result = hybrid_search(store.peer, _links(store, args.peers), args.query)
    if isinstance(result, Served):
        _print_json({"result": "served", "piece": codec.piece_to_record(result.piece)})
    elif isinstance(result, PathRequired):
        _print_json({
            "result": "path_required",
            "entries": [{"id": e.id, "via": e.via, "locator": e.locator} for e in result.entries],
        })
    else:
        _print_json({"result": "no_match"})


def cmd_trickle(args):
    store = load_dir(Path(args.territory))
    dist = trickle(build_view(store.territory), args.id, args.total, args.gamma, args.horizon)
    _print_json({"total": dist.total, "shares": dict(sorted(dist.shares.items()))})


def cmd_activity(args):
    store = load_dir(Path(args.territory))
    profile = activity_profile(build_view(store.territory), args.agent)
    _print_json({
        "agent": profile.agent,
        "questions_answered_by_others": profile.questions_answered_by_others,
        "glue_authored": profile.glue_authored,
        "bridges_authored": profile.bridges_authored,
    })


def cmd_sim_run(args):
    scenario = load_scenario(Path(args.scenario).read_bytes())
    result = run_scenario(scenario, seed=args.seed)
    if args.out:
        Path(args.out).write_bytes(result.to_bytes())
    if args.json:
        sys.stdout.buffer.write(result.to_bytes())
    else:
        sys.stdout.write(result.to_csv())


def cmd_import(args):
    data = Path(args.file).read_bytes() if args.file != "-" else sys.stdin.buffer.read()
    pieces = codec.decode(data)
    with DirLock(args.territory):
        store = load_dir(Path(args.territory))
        results = store.territory.apply_bundle(pieces, "accepted-share", session_now())
        save_dir(store)
    _print_json({
        "imported": len(results),
        "created": sum(1 for r in results if r.created),
        "forks": sum(1 for r in results if r.fork is not None),
    })


def cmd_export(args):
    store = load_dir(Path(args.territory))
    data = codec.encode(store.territory.pieces())
    if args.file:
        Path(args.file).write_bytes(data)
        _print_json({"exported": len(store.territory)})
    else:
        sys.stdout.buffer.write(data)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mmm", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, *specs, **kwargs):
        p = sub.add_parser(name, **kwargs)
        for spec in specs:
            flags, opts = spec
            p.add_argument(*flags, **opts)
        p.set_defaults(fn=fn)
        return p

    T = (("territory",), {"help": "territory directory"})

    add("init", cmd_init, T, (("--owner",), {"default": None}))
    add("add", cmd_add, T, (("kind",), {"choices": ["narrative", "question", "existence"]}),
        (("content",), {}), (("--label",), {}), (("--author",), {}))
    add("link", cmd_link, T, (("edge_kind",), {}), (("source",), {}), (("target",), {}),
        (("--content",), {"default": ""}), (("--label",), {}),
        (("--reverse-label",), {"dest": "reverse_label"}), (("--author",), {}))
    add("annotate", cmd_annotate, T, (("anchor",), {}), (("edge_kind",), {}),
        (("content",), {}), (("--label",), {}), (("--author",), {}))
    add("public", cmd_public, T, (("id",), {}))
    add("delete", cmd_delete, T, (("id",), {}))
    add("flag", cmd_flag, T, (("id",), {}), (("code",), {}), (("--flagger",), {}))
    add("validate", cmd_validate, T)
    add("measure", cmd_measure, T, (("id",), {}), (("name",), {}), (("--to",), {}))
    add("topo", cmd_topo, T, (("measure",), {}))
    add("dup", cmd_dup, T, (("--tau",), {"type": float, "default": 0.8}))
    add("merge", cmd_merge, T, (("a",), {}), (("b",), {}), (("--keep",), {}))
    add("rules", cmd_rules, T, (("action",), {"choices": ["get", "set", "check"]}),
        (("file",), {"nargs": "?"}))
    add("serve", cmd_serve, (("territory",), {"nargs": "?", "help": "territory directory"}),
        (("--territory",), {"dest": "territory_opt"}),
        (("--bind",), {"default": "127.0.0.1:8765"}),
        (("--peers",), {}), (("--peer-bind",), {"dest": "peer_bind"}))
    add("offer", cmd_offer, T, (("root",), {}), (("--to",), {"required": True}),
        (("--radius",), {"type": int, "default": 1}))
    add("inbox", cmd_inbox, T)
    add("accept", cmd_accept, T, (("offer_id",), {}), (("--ids",), {}))
    add("reject", cmd_reject, T, (("offer_id",), {}),
        (("--reason",), {"default": "owner rejected"}))
    add("relay", cmd_relay, T, (("id",), {}), (("--to",), {"required": True}))
    add("frontier", cmd_frontier, T, (("--peers",), {}))
    add("step", cmd_step, T, (("id",), {}), (("--via",), {}),
        (("--locator",), {"required": True}))
    add("search", cmd_search, T, (("query",), {}), (("--peers",), {}))
    add("trickle", cmd_trickle, T, (("id",), {}), (("total",), {"type": float}),
        (("--gamma",), {"type": float, "default": 0.5}),
        (("--horizon",), {"type": int, "default": 4}))
    add("activity", cmd_activity, T, (("agent",), {}))

    sim = sub.add_parser("sim")
    sim_sub = sim.add_subparsers(dest="sim_command", required=True)
    run = sim_sub.add_parser("run")
    run.add_argument("scenario")
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--out")
    run.add_argument("--json", action="store_true")
    run.set_defaults(fn=cmd_sim_run)

    add("import", cmd_import, T, (("file",), {}))
    add("export", cmd_export, T, (("file",), {"nargs": "?"}))
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args.fn(args)
    except MmmError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
