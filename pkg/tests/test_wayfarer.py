"""Frontier previews, stepping, and path-gated hybrid search."""

from random import Random

import pytest

from conftest import build_sky_territory, ts
from mmm.core import Territory
from mmm.errors import MmmError
from mmm.gatekeeper import parse_rules
from mmm.sharing import LoopbackNetwork, Peer
from mmm.wayfarer import NoMatch, PathRequired, Served, frontier, hybrid_search, step


def seeker_with_fixture_peer(seeker_pieces=("qsky",), rules=""):
    """A seeker territory holding named fixture pieces, one peer with all."""
    full, n = build_sky_territory()
    net = LoopbackNetwork()
    holder = Peer(full, parse_rules("accept if true"), now_fn=lambda: ts(200))
    net.register(holder, "peer1")
    mine = Territory("seeker")
    mine.apply_bundle([n[name] for name in seeker_pieces], "accepted-share", ts(199))
    me = Peer(mine, parse_rules(rules), now_fn=lambda: ts(201))
    net.register(me, "me")
    return net, me, holder, n


def test_frontier_from_one_question():
    net, me, holder, n = seeker_with_fixture_peer()
    front = frontier(me.territory, [net.link("peer1")])
    assert front.peer_errors == ()
    assert {e.id for e in front.entries} == {n["answers_narr"].id, n["answers_blue"].id}
    entry = front.entries[0]
    assert entry.via == n["qsky"].id
    assert entry.kind == "edge"
    assert "depth" in entry.measures
    # previews never expose content text
    assert not hasattr(entry, "content")


def test_frontier_empty_territory():
    net, me, holder, _ = seeker_with_fixture_peer(seeker_pieces=())
    me.territory = Territory("fresh")
    front = frontier(me.territory, [net.link("peer1")])
    assert front.entries == ()


def test_frontier_no_peers():
    _, me, _, _ = seeker_with_fixture_peer()
    front = frontier(me.territory, [])
    assert front.entries == () and front.peer_errors == ()


def test_frontier_unreachable_peer_reported():
    net, me, holder, _ = seeker_with_fixture_peer()
    net.down.add("peer1")
    front = frontier(me.territory, [net.link("peer1")])
    assert front.entries == ()
    assert front.peer_errors == (("peer1", "PEER_UNREACHABLE"),)


def test_step_twice_reaches_answer():
    net, me, holder, n = seeker_with_fixture_peer()
    link = net.link("peer1")
    front = frontier(me.territory, [link])
    e2 = next(e for e in front.entries if e.id == n["answers_narr"].id)
    outcome = step(me, e2, link)
    assert outcome.applied
    assert me.territory.meta(e2.id).origin == "wayfarer-step"
    front = frontier(me.territory, [link])
    n4 = next(e for e in front.entries if e.id == n["narr"].id)
    step(me, n4, link)
    assert set(me.territory.ids()) == {n["qsky"].id, n["answers_narr"].id, n["narr"].id}


def test_step_rejected_leaves_territory_unchanged():
    net, me, holder, n = seeker_with_fixture_peer(rules="reject if kind == edge")
    link = net.link("peer1")
    front = frontier(me.territory, [link])
    before = set(me.territory.ids())
    outcome = step(me, front.entries[0], link)
    assert not outcome.applied
    assert outcome.decision.verdict == "reject"
    assert set(me.territory.ids()) == before


def test_step_stale_entry_not_found():
    net, me, holder, n = seeker_with_fixture_peer()
    link = net.link("peer1")
    front = frontier(me.territory, [link])
    entry = front.entries[0]
    holder.territory.delete_piece(entry.id)
    with pytest.raises(MmmError) as err:
        step(me, entry, link)
    assert err.value.code == "NOT_FOUND"
    assert set(me.territory.ids()) == {n["qsky"].id}


def test_search_served_through_connected_path():
    net, me, holder, n = seeker_with_fixture_peer()
    result = hybrid_search(me, [net.link("peer1")], "sky blue")
    assert isinstance(result, Served)
    assert result.piece.id == n["narr"].id


def test_search_empty_territory_path_required():
    net, me, holder, _ = seeker_with_fixture_peer()
    me.territory = Territory("fresh")
    result = hybrid_search(me, [net.link("peer1")], "sky blue")
    assert isinstance(result, PathRequired)
    assert result.entries == ()


def test_search_no_match_anywhere():
    net, me, holder, _ = seeker_with_fixture_peer()
    assert isinstance(hybrid_search(me, [net.link("peer1")], "plasma physics"), NoMatch)


def test_search_disconnected_match_never_served():
    net, me, holder, n = seeker_with_fixture_peer()
    island = holder.territory.create_piece(
        "narrative", "sky blue panorama print", "carol", ts(205), Random(21)
    )
    result = hybrid_search(me, [net.link("peer1")], "panorama print")
    assert isinstance(result, PathRequired)
    assert result.entries == ()


def test_search_local_match_served_without_steps():
    net, me, holder, n = seeker_with_fixture_peer(seeker_pieces=("qsky", "narr"))
    result = hybrid_search(me, [], "sky blue")
    assert isinstance(result, Served)
    assert result.piece.id == n["narr"].id


def test_search_attention_reuse():
    """Once one wayfarer has walked the path, a companion sharing the same
    territory is served with zero steps."""
    net, me, holder, n = seeker_with_fixture_peer()
    link = net.link("peer1")
    # walk: qsky -> answers edge -> narrative
    front = frontier(me.territory, [link])
    e2 = next(e for e in front.entries if e.id == n["answers_narr"].id)
    step(me, e2, link)
    front = frontier(me.territory, [link])
    n4 = next(e for e in front.entries if e.id == n["narr"].id)
    step(me, n4, link)
    companion = Peer(me.territory, [], now_fn=lambda: ts(240))
    assert isinstance(hybrid_search(companion, [], "sky blue"), Served)


def test_search_rejected_intermediate_blocks_serving():
    """All candidate paths run through edges; rejecting edges blocks them."""
    net, me, holder, n = seeker_with_fixture_peer(rules="reject if kind == edge")
    result = hybrid_search(me, [net.link("peer1")], "sky blue")
    assert isinstance(result, PathRequired)
    assert len(result.entries) > 0  # the walk is pointed at, not served


def test_search_monotone_in_territory():
    net, me, holder, n = seeker_with_fixture_peer()
    link = net.link("peer1")
    servable_before = isinstance(hybrid_search(me, [link], "sky blue"), Served)
    me.territory.apply_bundle(
        [n["answers_narr"], n["narr"]], "wayfarer-step", ts(230)
    )
    assert isinstance(hybrid_search(me, [link], "sky blue"), Served) >= servable_before
