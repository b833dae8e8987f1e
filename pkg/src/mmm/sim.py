"""Deterministic multi-agent commons simulation.

Agents with per-tick attention budgets author, glue, share, relay and
consume through their gatekeepers over the loopback transport.  All
randomness flows from one seeded generator consumed in a fixed order
(agents advance sorted by id), so a scenario plus a seed reproduces a
byte-identical result document.

Strategies:

* ``cooperative``: produce a piece, glue it onto something already held,
  then offer the piece with its glue (radius 1).
* ``free_rider``: produce bare notes or pick up copies, share them with
  zero glue (radius 0), never spend attention on linking.
* ``relay_only``: forward coordinates of held pieces; recipients may
  request the bundle through their own gatekeeper.

The seasonality rule is a hard share precondition when an agent's
``seasonality_alpha`` is nonzero: a piece may be shared or relayed only
once the agent's own attention invested in it reaches alpha.  Spent
attention never carries over between ticks.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from random import Random
from typing import Iterable, Optional

from . import codec
from .core import Territory
from .errors import MmmError
from .gatekeeper import evaluate, parse_rules
from .measures import (
    EXACT_VISIBILITY_LIMIT,
    MeasureConfig,
    build_view,
    implantation,
    visibility,
    visibility_exact,
)
from .sharing import LoopbackNetwork, Peer, Request, call_messages, make_bundle

SCENARIO_VERSION = "1.0"
RESULT_VERSION = "1.0"
STRATEGIES = ("cooperative", "free_rider", "relay_only")

_BASE = datetime(2030, 1, 1, tzinfo=timezone.utc)

_AGENT_FIELDS = {
    "id", "strategy", "attention_budget_per_tick", "cost_produce", "cost_glue",
    "cost_annotate", "cost_relay", "seasonality_alpha", "rules",
}
_SCENARIO_FIELDS = {
    "scenario_version", "name", "ticks", "seed", "recipients_per_share",
    "measure_config", "agents", "purge",
}
_MEASURE_FIELDS = {"horizon", "walk_length", "walk_count", "label_factor_unlabeled"}


@dataclass(frozen=True)
class AgentSpec:
    id: str
    strategy: str
    attention_budget_per_tick: float
    cost_produce: float
    cost_glue: float
    cost_annotate: float
    cost_relay: float
    seasonality_alpha: float
    rules: tuple[str, ...]


@dataclass(frozen=True)
class Scenario:
    name: str
    ticks: int
    seed: int
    recipients_per_share: int
    cfg: MeasureConfig
    agents: tuple[AgentSpec, ...]
    purge: Optional[tuple[int, str]]  # (tick, author)


def _bad(cond: bool, message: str) -> None:
    if cond:
        raise MmmError("BAD_SCENARIO", message)


def load_scenario(data: bytes | str | dict) -> Scenario:
    """Parse and validate a scenario config document."""
    if isinstance(data, (bytes, str)):
        try:
            doc = json.loads(data)
        except json.JSONDecodeError as exc:
            raise MmmError("BAD_SCENARIO", f"not JSON: {exc}") from exc
    else:
        doc = data
    _bad(not isinstance(doc, dict), "scenario must be an object")
    _bad(doc.get("scenario_version") != SCENARIO_VERSION,
         f"unsupported scenario_version {doc.get('scenario_version')!r}")
    unknown = set(doc) - _SCENARIO_FIELDS
    _bad(bool(unknown), f"unknown scenario fields {sorted(unknown)}")
    ticks = doc.get("ticks")
    _bad(not isinstance(ticks, int) or ticks < 1, "ticks must be a positive integer")
    seed = doc.get("seed", 0)
    _bad(not isinstance(seed, int), "seed must be an integer")
    fan = doc.get("recipients_per_share", 2)
    _bad(not isinstance(fan, int) or fan < 1, "recipients_per_share must be >= 1")
    mc = doc.get("measure_config", {})
    _bad(not isinstance(mc, dict) or bool(set(mc) - _MEASURE_FIELDS),
         "bad measure_config")
    cfg = MeasureConfig(**mc)
    raw_agents = doc.get("agents")
    _bad(not isinstance(raw_agents, list) or not raw_agents, "agents must be non-empty")
    agents = []
    for entry in raw_agents:
        _bad(not isinstance(entry, dict), "agent must be an object")
        _bad(bool(set(entry) - _AGENT_FIELDS), f"unknown agent fields {sorted(set(entry) - _AGENT_FIELDS)}")
        spec = AgentSpec(
            id=entry.get("id", ""),
            strategy=entry.get("strategy", ""),
            attention_budget_per_tick=entry.get("attention_budget_per_tick", 0),
            cost_produce=entry.get("cost_produce", 3),
            cost_glue=entry.get("cost_glue", 2),
            cost_annotate=entry.get("cost_annotate", 2),
            cost_relay=entry.get("cost_relay", 1),
            seasonality_alpha=entry.get("seasonality_alpha", 0),
            rules=tuple(entry.get("rules", ["accept if true"])),
        )
        _bad(not spec.id, "agent id required")
        _bad(spec.strategy not in STRATEGIES, f"unknown strategy {spec.strategy!r}")
        _bad(min(spec.cost_produce, spec.cost_glue, spec.cost_annotate,
                 spec.cost_relay, spec.seasonality_alpha) < 0, "costs must be >= 0")
        _bad(not spec.cost_relay <= spec.cost_annotate <= spec.cost_produce,
             "costs must satisfy relay <= annotate <= produce")
        parse_rules("\n".join(spec.rules))  # fail fast on bad rule text
        agents.append(spec)
    ids = [a.id for a in agents]
    _bad(len(set(ids)) != len(ids), "agent ids must be unique")
    purge = None
    if "purge" in doc:
        p = doc["purge"]
        _bad(not isinstance(p, dict) or set(p) != {"tick", "author"}, "bad purge event")
        purge = (p["tick"], p["author"])
    return Scenario(
        name=doc.get("name", "scenario"),
        ticks=ticks,
        seed=seed,
        recipients_per_share=fan,
        cfg=cfg,
        agents=tuple(sorted(agents, key=lambda a: a.id)),
        purge=purge,
    )


def global_union(territories: Iterable[Territory]) -> set[str]:
    """Canonical ids present in at least one territory, alias-resolved."""
    union: set[str] = set()
    for t in territories:
        union.update(t.ids())
    return union


@dataclass
class _SimAgent:
    spec: AgentSpec
    peer: Peer
    invested: dict[str, float] = field(default_factory=dict)
    produced_or_annotated: set[str] = field(default_factory=set)
    shared_roots: set[str] = field(default_factory=set)
    attention_spent: float = 0.0
    relay_cursor: int = 0

    def invest(self, pid: str, amount: float) -> None:
        self.invested[pid] = self.invested.get(pid, 0.0) + amount

    def may_share(self, pid: str) -> bool:
        alpha = self.spec.seasonality_alpha
        return alpha <= 0 or self.invested.get(pid, 0.0) >= alpha


@dataclass(frozen=True)
class AgentResult:
    id: str
    strategy: str
    attention_spent: float
    pieces_shared: int
    pieces_invested: int
    territory_size: int


@dataclass(frozen=True)
class ScenarioResult:
    name: str
    seed: int
    ticks: int
    agents: tuple[AgentResult, ...]
    global_union_size: int
    extinct_ids: tuple[str, ...]
    mean_visibility_by_strategy: dict[str, Optional[float]]
    mean_visibility_glued: Optional[float]
    mean_visibility_zero_glue: Optional[float]
    shared_glued_count: int
    shared_zero_glue_count: int
    redundancy_ratio: float

    def to_record(self) -> dict:
        return {
            "result_version": RESULT_VERSION,
            "scenario": self.name,
            "seed": self.seed,
            "ticks": self.ticks,
            "agents": [
                {
                    "id": a.id,
                    "strategy": a.strategy,
                    "attention_spent": round(a.attention_spent, 9),
                    "pieces_shared": a.pieces_shared,
                    "pieces_invested": a.pieces_invested,
                    "territory_size": a.territory_size,
                }
                for a in self.agents
            ],
            "global_union_size": self.global_union_size,
            "extinct_ids": list(self.extinct_ids),
            "mean_visibility_by_strategy": {
                k: (None if v is None else round(v, 9))
                for k, v in sorted(self.mean_visibility_by_strategy.items())
            },
            "mean_visibility_glued": None if self.mean_visibility_glued is None
            else round(self.mean_visibility_glued, 9),
            "mean_visibility_zero_glue": None if self.mean_visibility_zero_glue is None
            else round(self.mean_visibility_zero_glue, 9),
            "shared_glued_count": self.shared_glued_count,
            "shared_zero_glue_count": self.shared_zero_glue_count,
            "redundancy_ratio": round(self.redundancy_ratio, 9),
        }

    def to_bytes(self) -> bytes:
        return codec.canonical_bytes(self.to_record())

    def to_csv(self) -> str:
        """Flat scope,metric,value table."""
        out = io.StringIO()
        writer = csv.writer(out, lineterminator="\n")
        writer.writerow(["scope", "metric", "value"])
        for a in self.agents:
            writer.writerow([a.id, "strategy", a.strategy])
            writer.writerow([a.id, "attention_spent", round(a.attention_spent, 9)])
            writer.writerow([a.id, "pieces_shared", a.pieces_shared])
            writer.writerow([a.id, "pieces_invested", a.pieces_invested])
            writer.writerow([a.id, "territory_size", a.territory_size])
        writer.writerow(["global", "union_size", self.global_union_size])
        writer.writerow(["global", "extinct_count", len(self.extinct_ids)])
        for k, v in sorted(self.mean_visibility_by_strategy.items()):
            writer.writerow(["global", f"mean_visibility_{k}", "" if v is None else round(v, 9)])
        writer.writerow(["global", "mean_visibility_glued",
                         "" if self.mean_visibility_glued is None else round(self.mean_visibility_glued, 9)])
        writer.writerow(["global", "mean_visibility_zero_glue",
                         "" if self.mean_visibility_zero_glue is None else round(self.mean_visibility_zero_glue, 9)])
        writer.writerow(["global", "redundancy_ratio", round(self.redundancy_ratio, 9)])
        return out.getvalue()


def _tick_ts(tick: int, slot: int = 0) -> str:
    return (_BASE + timedelta(minutes=tick, seconds=slot)).strftime("%Y-%m-%dT%H:%M:%SZ")


def run_scenario(scenario: Scenario, seed: Optional[int] = None) -> ScenarioResult:
    """Run the full tick loop and measure the resulting commons."""
    seed = scenario.seed if seed is None else seed
    rng = Random(seed)
    net = LoopbackNetwork()
    agents: dict[str, _SimAgent] = {}
    for spec in scenario.agents:
        peer = Peer(
            Territory(spec.id),
            parse_rules("\n".join(spec.rules)),
            cfg=scenario.cfg,
            glue_radius=1,
        )
        net.register(peer, spec.id)
        agents[spec.id] = _SimAgent(spec, peer)
    order = sorted(agents)
    ever_ids: set[str] = set()
    strategy_of_root: dict[str, set[str]] = {}

    for tick in range(scenario.ticks):
        if scenario.purge and scenario.purge[0] == tick:
            author = scenario.purge[1]
            for aid in order:
                territory = agents[aid].peer.territory
                doomed = [pid for pid in territory.ids()
                          if author in territory.get(pid).authors()]
                for pid in doomed:
                    territory.delete_piece(pid)
        for aid in order:
            agents[aid].peer.now_fn = lambda t=tick: _tick_ts(t, 30)
        for aid in order:
            _agent_turn(agents[aid], agents, net, rng, tick, scenario, strategy_of_root)
        for aid in order:
            ever_ids.update(agents[aid].peer.territory.ids())

    return _collect(scenario, seed, agents, ever_ids, strategy_of_root)


def _other_ids(agents: dict[str, _SimAgent], me: str) -> list[str]:
    return [a for a in sorted(agents) if a != me]


def _agent_turn(
    agent: _SimAgent,
    agents: dict[str, _SimAgent],
    net: LoopbackNetwork,
    rng: Random,
    tick: int,
    scenario: Scenario,
    strategy_of_root: dict[str, set[str]],
) -> None:
    spec = agent.spec
    budget = spec.attention_budget_per_tick
    territory = agent.peer.territory
    now = _tick_ts(tick)

    # consume relay notices first: request unknown pieces, gate the bundles
    while agent.relay_cursor < len(agent.peer.relay_notices):
        notice = agent.peer.relay_notices[agent.relay_cursor]
        agent.relay_cursor += 1
        if territory.try_resolve(notice.id) is not None:
            continue
        try:
            replies = call_messages(net.link(notice.locator), Request(notice.id))
        except MmmError:
            continue
        for reply in replies:
            if not hasattr(reply, "bundle"):
                continue
            decisions = evaluate(agent.peer.rules, reply.bundle.pieces, territory, scenario.cfg)
            accepted = [p for p in reply.bundle.pieces
                        if decisions[p.id].verdict == "accept"]
            territory.apply_bundle(accepted, "accepted-share", now)

    def spend(amount: float) -> bool:
        nonlocal budget
        if budget < amount:
            return False
        budget -= amount
        agent.attention_spent += amount
        return True

    def share(root: str, radius: int) -> None:
        if not agent.may_share(root):
            return
        if not spend(spec.cost_relay):
            return
        others = _other_ids(agents, spec.id)
        fan = min(scenario.recipients_per_share, len(others))
        for recipient in rng.sample(others, fan) if fan else []:
            bundle = make_bundle(territory, root, radius)
            agent.peer.offer(net.link(recipient), bundle)
        rid = territory.resolve(root)
        agent.shared_roots.add(rid)
        strategy_of_root.setdefault(rid, set()).add(spec.strategy)

    if spec.strategy == "cooperative":
        produced = None
        if spend(spec.cost_produce):
            kind = "question" if rng.random() < 0.2 else "narrative"
            content = f"{spec.id} {kind} {tick}"
            produced = territory.create_piece(kind, content, spec.id, now, rng)
            agent.invest(produced.id, spec.cost_produce)
            agent.produced_or_annotated.add(produced.id)
        if produced is not None and len(territory) > 1 and spend(spec.cost_glue):
            candidates = [pid for pid in territory.ids() if pid != produced.id]
            target = rng.choice(candidates)
            target_piece = territory.get(target)
            if target_piece.kind == "question" and produced.kind == "narrative":
                kind = "answers"
            elif target_piece.is_edge:
                kind = "nuances"
            else:
                kind = "details" if rng.random() < 0.8 else "relate"
            edge = territory.create_piece(
                kind, "", spec.id, now, rng, label="context", source=produced.id, target=target,
            )
            agent.invest(edge.id, spec.cost_glue)
            agent.invest(produced.id, spec.cost_glue)
            agent.produced_or_annotated.add(edge.id)
        if produced is not None:
            share(produced.id, 1)

    elif spec.strategy == "free_rider":
        foreign = [pid for pid in territory.ids()
                   if spec.id not in territory.get(pid).authors()
                   and not territory.get(pid).is_edge]
        if foreign and rng.random() < 0.5:
            root = rng.choice(foreign)
            share(root, 0)
        elif spend(spec.cost_produce):
            content = (
                "hot take of the day" if rng.random() < 0.4
                else f"{spec.id} note {tick}"
            )
            produced = territory.create_piece("narrative", content, spec.id, now, rng)
            agent.invest(produced.id, spec.cost_produce)
            agent.produced_or_annotated.add(produced.id)
            share(produced.id, 0)

    elif spec.strategy == "relay_only":
        ids = territory.ids()
        if ids:
            pid = rng.choice(ids)
            if agent.may_share(pid) and spend(spec.cost_relay):
                others = _other_ids(agents, spec.id)
                fan = min(scenario.recipients_per_share, len(others))
                links = [net.link(r) for r in (rng.sample(others, fan) if fan else [])]
                agent.peer.relay(links, pid)
                rid = territory.resolve(pid)
                agent.shared_roots.add(rid)
                strategy_of_root.setdefault(rid, set()).add(spec.strategy)


def _mean(values: list[float]) -> Optional[float]:
    return sum(values) / len(values) if values else None


def _collect(
    scenario: Scenario,
    seed: int,
    agents: dict[str, _SimAgent],
    ever_ids: set[str],
    strategy_of_root: dict[str, set[str]],
) -> ScenarioResult:
    territories = [agents[aid].peer.territory for aid in sorted(agents)]
    union_ids = global_union(territories)
    alias_covered: set[str] = set()
    for t in territories:
        alias_covered.update(t.aliases())
    extinct = tuple(sorted(ever_ids - union_ids - alias_covered))

    merged = Territory("union")
    stamp = _tick_ts(scenario.ticks, 59)
    for t in territories:
        merged.apply_bundle(t.pieces(), "accepted-share", stamp)
    view = build_view(merged)

    def vis(pid: str) -> Optional[float]:
        rid = merged.try_resolve(pid)
        if rid is None:
            return None
        if len(view) <= EXACT_VISIBILITY_LIMIT:
            return visibility_exact(view, rid, scenario.cfg)
        return visibility(view, rid, scenario.cfg, Random(seed ^ 0xC0FFEE))

    by_strategy: dict[str, list[float]] = {s: [] for s in STRATEGIES}
    glued: list[float] = []
    zero_glue: list[float] = []
    for root in sorted(strategy_of_root):
        value = vis(root)
        if value is None:
            continue
        for strategy in strategy_of_root[root]:
            by_strategy[strategy].append(value)
        rid = merged.resolve(root)
        if implantation(view, rid, scenario.cfg) > 0:
            glued.append(value)
        else:
            zero_glue.append(value)

    dup_pairs = merged.detect_duplicates(0.8)
    agents_out = tuple(
        AgentResult(
            id=aid,
            strategy=agents[aid].spec.strategy,
            attention_spent=agents[aid].attention_spent,
            pieces_shared=len(agents[aid].shared_roots),
            pieces_invested=sum(
                1
                for pid, amount in agents[aid].invested.items()
                if amount >= max(agents[aid].spec.seasonality_alpha, 1e-12)
            ),
            territory_size=len(agents[aid].peer.territory),
        )
        for aid in sorted(agents)
    )
    return ScenarioResult(
        name=scenario.name,
        seed=seed,
        ticks=scenario.ticks,
        agents=agents_out,
        global_union_size=len(union_ids),
        extinct_ids=extinct,
        mean_visibility_by_strategy={s: _mean(v) for s, v in by_strategy.items()},
        mean_visibility_glued=_mean(glued),
        mean_visibility_zero_glue=_mean(zero_glue),
        shared_glued_count=len(glued),
        shared_zero_glue_count=len(zero_glue),
        redundancy_ratio=len(dup_pairs) / max(1, len(merged)),
    )
