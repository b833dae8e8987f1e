"""Authorship accounting: trickling rewards and producer activity profiles.

A reward granted for piece k trickles backward through the chains that k
was built on: breadth-first over incidence-backward steps (a piece leads
to its incoming edge-pieces, an edge-piece leads on to its source), each
contributing piece taken at its minimal backward distance d with raw
weight gamma**d.  A piece's raw weight is split equally among the agents
in its authorships, then everything is scaled so the shares sum to the
granted total.  Edge-pieces earn shares: their authors did the glue work.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

from .core import AgentId, PieceId
from .errors import MmmError
from .measures import IncidenceView


@dataclass(frozen=True)
class RewardDistribution:
    total: float
    shares: dict[AgentId, float]


@dataclass(frozen=True)
class ActivityProfile:
    agent: AgentId
    questions_answered_by_others: int
    glue_authored: int
    bridges_authored: int


def backward_weights(view: IncidenceView, k: PieceId, gamma: float, horizon: int) -> dict[PieceId, float]:
    """Raw contribution weights gamma**d at minimal backward distance d."""
    rid = view.require(k)
    dist: dict[PieceId, int] = {rid: 0}
    queue = deque([rid])
    while queue:
        v = queue.popleft()
        d = dist[v]
        if d >= horizon:
            continue
        nxt = []
        for eid, (src, tgt) in view.edge_endpoints.items():
            if tgt == v and eid not in dist:
                nxt.append(eid)
        if v in view.edge_endpoints:
            src = view.edge_endpoints[v][0]
            if src is not None and src not in dist:
                nxt.append(src)
        for w in sorted(nxt):
            dist[w] = d + 1
            queue.append(w)
    return {pid: gamma**d for pid, d in dist.items()}


def trickle(
    view: IncidenceView, k: PieceId, total: float, gamma: float, horizon: int
) -> RewardDistribution:
    """Distribute ``total`` backward from k; shares sum to total."""
    if total < 0:
        raise MmmError("NEGATIVE_TOTAL", "reward total must be non-negative")
    weights = backward_weights(view, k, gamma, horizon)
    raw: dict[AgentId, float] = {}
    for pid, weight in weights.items():
        agents = sorted(view.pieces[pid].authors())
        for agent in agents:
            raw[agent] = raw.get(agent, 0.0) + weight / len(agents)
    denom = sum(weights.values())
    shares = {agent: total * value / denom for agent, value in raw.items()}
    return RewardDistribution(total, shares)


def _components_without(view: IncidenceView, skip: PieceId) -> list[set[PieceId]]:
    adj: dict[PieceId, set[PieceId]] = {v: set() for v in view.pieces if v != skip}
    for eid, (src, tgt) in view.edge_endpoints.items():
        if eid == skip:
            continue
        for end in (src, tgt):
            if end is not None and end != skip:
                adj[eid].add(end)
                adj[end].add(eid)
        if src is not None and tgt is not None and skip not in (src, tgt):
            adj[src].add(tgt)
            adj[tgt].add(src)
    comps = []
    seen: set[PieceId] = set()
    for start in adj:
        if start in seen:
            continue
        comp = {start}
        seen.add(start)
        queue = deque([start])
        while queue:
            v = queue.popleft()
            for w in adj[v]:
                if w not in seen:
                    seen.add(w)
                    comp.add(w)
                    queue.append(w)
        comps.append(comp)
    return comps


def activity_profile(view: IncidenceView, agent: AgentId) -> ActivityProfile:
    """Deterministic counts of characteristic contributions by one agent."""
    questions = 0
    for pid, piece in view.pieces.items():
        if piece.kind != "question" or agent not in piece.authors():
            continue
        for eid, (_, tgt) in view.edge_endpoints.items():
            edge = view.pieces[eid]
            if edge.edge_kind != "answers" or tgt != pid:
                continue
            if any(a != agent for a in edge.authors()):
                questions += 1
                break
    glue = 0
    bridges = 0
    for eid, (src, tgt) in view.edge_endpoints.items():
        edge = view.pieces[eid]
        if agent not in edge.authors():
            continue
        glue += 1
        if src is None or tgt is None or src == tgt:
            continue
        comps = _components_without(view, eid)
        src_comp = next(c for c in comps if src in c)
        if tgt not in src_comp:
            bridges += 1
    return ActivityProfile(agent, questions, glue, bridges)
