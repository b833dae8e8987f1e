"""Bundles, protocol messages, offers, relays, idempotent receipt."""

from random import Random

import pytest

from conftest import build_sky_territory, ts
from mmm import codec
from mmm.core import Territory
from mmm.errors import MmmError, TransportError
from mmm.gatekeeper import parse_rules
from mmm.sharing import (
    Accept,
    Bundle,
    Find,
    FindResult,
    LoopbackNetwork,
    Offer,
    Peer,
    PeerServer,
    Reject,
    Relay,
    Request,
    TcpLink,
    call_messages,
    decode_message,
    encode_message,
    frame,
    make_bundle,
    split_frames,
)


def loop_pair(rules_a="", rules_b=""):
    net = LoopbackNetwork()
    ta, _ = build_sky_territory()
    tb = Territory("bob")
    a = Peer(ta, parse_rules(rules_a), address="a", now_fn=lambda: ts(100))
    b = Peer(tb, parse_rules(rules_b), address="b", now_fn=lambda: ts(100))
    net.register(a, "a")
    net.register(b, "b")
    return net, a, b


def test_make_bundle_radius_one(sky):
    t, n = sky
    bundle = make_bundle(t, n["narr"].id, 1)
    assert set(bundle.ids()) == {n["narr"].id, n["answers_narr"].id, n["answers_yes"].id}
    assert set(bundle.external_refs) == {n["qsky"].id, n["qyesno"].id}


def test_make_bundle_radius_zero_and_isolated(sky):
    t, n = sky
    edge_bundle = make_bundle(t, n["answers_blue"].id, 0)
    assert edge_bundle.ids() == [n["answers_blue"].id]
    assert set(edge_bundle.external_refs) == {n["blue"].id, n["qsky"].id}
    iso = t.create_piece("narrative", "island", "erin", ts(60), Random(3))
    bundle = make_bundle(t, iso.id, 2)
    assert bundle.ids() == [iso.id]
    assert bundle.external_refs == ()


def test_bundle_closure_property():
    r = Random(404)
    from conftest import random_territory

    for _ in range(30):
        t = random_territory(r)
        root = r.choice(t.ids())
        bundle = make_bundle(t, root, r.randint(0, 3))
        bundle.check()  # closure holds by construction


def test_bundle_closure_violation():
    t, n = build_sky_territory()
    broken = Bundle((n["answers_blue"],), ())
    with pytest.raises(MmmError) as err:
        broken.check()
    assert err.value.code == "MALFORMED_BUNDLE"


def test_message_codec_round_trip(sky):
    t, n = sky
    msgs = [
        Offer("alice:1", "alice", make_bundle(t, n["narr"].id, 1)),
        Accept("alice:1", (n["narr"].id,)),
        Reject("alice:1", (n["narr"].id,), "nope"),
        Relay("alice", n["narr"].id, "host:9"),
        Request(n["narr"].id, radius=0),
        Find(("sky", "blue")),
        FindResult((n["narr"].id,)),
    ]
    for msg in msgs:
        assert decode_message(encode_message(msg)) == msg


def test_framing():
    payloads = [b"abc", b"", b"\x00\x01\x02"]
    stream = b"".join(frame(p) for p in payloads)
    assert split_frames(stream) == payloads
    with pytest.raises(TransportError):
        split_frames(stream[:-1])


def test_offer_accept_flow():
    net, a, b = loop_pair(rules_b="accept if true")
    bundle = make_bundle(a.territory, a.territory.ids()[0], 1)
    offer_id = a.offer(net.link("b"), bundle)
    assert set(a.pending_offers[offer_id].accepted) == set(bundle.ids())
    for pid in bundle.ids():
        assert pid in b.territory
        assert b.territory.meta(pid).origin == "accepted-share"


def test_offer_reject_flow(sky):
    net, a, b = loop_pair(
        rules_b="reject if kind == narrative and depth(ctx) == 0 and implantation(ctx) < 1.0"
    )
    t = Territory("tmp")
    narr = t.create_piece("narrative", "stray claim", "alice", ts(0), Random(11))
    offer_id = a.offer(net.link("b"), Bundle((narr,), ()))
    pending = a.pending_offers[offer_id]
    assert pending.rejected == (narr.id,)
    assert "reject if kind == narrative" in pending.reject_reason
    assert narr.id not in b.territory


def test_offer_quarantine_parks_in_inbox():
    net, a, b = loop_pair()  # no rules on b: default quarantine
    t = Territory("tmp")
    narr = t.create_piece("narrative", "needs review", "alice", ts(0), Random(12))
    offer_id = a.offer(net.link("b"), Bundle((narr,), ()))
    assert narr.id not in b.territory
    assert len(b.inbox) == 1
    item = b.inbox[0]
    assert item.offer_id == offer_id
    b.accept_parked(offer_id)
    assert narr.id in b.territory
    assert b.territory.meta(narr.id).origin == "accepted-share"


def test_duplicate_offer_processed_once():
    net, a, b = loop_pair(rules_b="accept if true")
    bundle = make_bundle(a.territory, a.territory.ids()[0], 1)
    msg = Offer("alice:77", "alice", bundle)
    link = net.link("b")
    first = call_messages(link, msg)
    snapshot = codec.encode(b.territory.pieces())
    second = call_messages(link, msg)
    assert first == second
    assert codec.encode(b.territory.pieces()) == snapshot
    assert len(b.inbox) == 0


def test_known_id_gains_authorship_not_pieces():
    net, a, b = loop_pair(rules_b="accept if true")
    piece = a.territory.pieces()[0]
    b.territory.apply_bundle([piece], "accepted-share", ts(1))
    count = len(b.territory)
    from dataclasses import replace

    from mmm.core import Authorship

    reauthored = replace(piece, authorships=piece.authorships + (Authorship(("zoe",), ts(2)),))
    a.offer(net.link("b"), Bundle((reauthored,), tuple(
        e for e in (piece.source, piece.target) if e
    )))
    assert len(b.territory) == count
    assert len(b.territory.get(piece.id).authorships) == len(piece.authorships) + 1


def test_offer_malformed_rejected_whole():
    net, a, b = loop_pair()
    t = Territory("tmp")
    r = Random(13)
    x = t.create_piece("narrative", "x", "alice", ts(0), r)
    y = t.create_piece("narrative", "y", "alice", ts(1), r)
    e = t.create_piece("relate", "", "alice", ts(2), r, source=x.id, target=y.id)
    broken = Offer("alice:9", "alice", Bundle((e,), ()))  # closure violated
    replies = call_messages(net.link("b"), broken)
    assert len(replies) == 1
    assert isinstance(replies[0], Reject)
    assert replies[0].reason == "MALFORMED"


def test_relay_carries_no_content_and_delivers_on_request():
    net, a, b = loop_pair(rules_b="accept if true")
    pid = sorted(a.territory.ids())[0]
    a.relay([net.link("b")], pid)
    assert len(b.relay_notices) == 1
    notice = b.relay_notices[0]
    assert notice.id == pid and notice.locator == "a"
    assert pid not in b.territory  # no spontaneous content
    replies = call_messages(net.link(notice.locator), Request(notice.id, radius=0))
    bundle = replies[0].bundle
    b.receive_offer(Offer("via-relay:1", notice.from_agent, bundle))
    assert pid in b.territory


def test_relay_unknown_piece():
    net, a, b = loop_pair()
    with pytest.raises(MmmError) as err:
        a.relay([net.link("b")], "0" * 32)
    assert err.value.code == "UNKNOWN_PIECE"


def test_request_for_deleted_piece_not_found():
    net, a, b = loop_pair()
    pid = a.territory.ids()[0]
    a.territory.delete_piece(pid)
    replies = call_messages(net.link("a"), Request(pid))
    from mmm.sharing import NotFound

    assert replies == [NotFound(pid)]


def test_unreachable_peer():
    net, a, b = loop_pair()
    net.down.add("b")
    with pytest.raises(TransportError) as err:
        call_messages(net.link("b"), Request("0" * 32))
    assert err.value.code == "PEER_UNREACHABLE"


def test_copy_semantics_sender_untouched():
    net, a, b = loop_pair(rules_b="accept if true")
    before = codec.encode(a.territory.pieces())
    bundle = make_bundle(a.territory, a.territory.ids()[0], 2)
    a.offer(net.link("b"), bundle)
    b.territory.set_public(bundle.ids()[0])
    assert codec.encode(a.territory.pieces()) == before


def test_tcp_transport_round_trip():
    ta, n = build_sky_territory()
    peer = Peer(ta, parse_rules("accept if true"))
    server = PeerServer(peer, "127.0.0.1", 0)
    thread = server.start()
    try:
        link = TcpLink(peer.address)
        replies = call_messages(link, Find(("sky", "blue")))
        assert isinstance(replies[0], FindResult)
        assert n["narr"].id in replies[0].ids
        replies = call_messages(link, Request(n["narr"].id, radius=0))
        assert replies[0].bundle.ids() == [n["narr"].id]
    finally:
        server.shutdown()
        server.server_close()
    with pytest.raises(TransportError):
        TcpLink(peer.address, timeout=0.5).call(b"\x00\x00\x00\x00")
