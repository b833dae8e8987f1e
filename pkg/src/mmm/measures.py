"""Graph-theoretic epistemic measures over a territory view.

Every piece, node or edge, is a vertex of the view.  An edge-piece e with
locally resolved endpoints a and b contributes:

  * incidence links e-a and e-b (stepping onto or off the edge costs 1);
  * an undirected traversal link a-b (crossing the edge costs 1 hop);
  * a directed hop a->b used by depth and utility.

Closeness, areas, balls and visibility walk the undirected links
(incidence plus traversal); wayfarer stepping and bundle radii use the
incidence links alone, exposed here as ``step_ball``.  Endpoints that do
not resolve locally are absent from the view.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from random import Random
from typing import Callable, Iterable, Optional

from .core import EDGE_KINDS, PieceId, PieceOfKnowledge, Territory
from .errors import MmmError

DEFAULT_KIND_WEIGHTS = {
    "answers": 1.0,
    "details": 1.0,
    "nuances": 1.0,
    "questions": 1.0,
    "instantiates": 0.9,
    "equates": 0.8,
    "differsFrom": 0.8,
    "relate": 0.4,
}

MEASURE_NAMES = ("depth", "utility", "implantation", "visibility", "flag_count", "closeness")

# exact visibility evaluation is affordable up to this view size
EXACT_VISIBILITY_LIMIT = 12


@dataclass(frozen=True)
class MeasureConfig:
    horizon: int = 16
    kind_weights: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_KIND_WEIGHTS))
    label_factor_unlabeled: float = 0.5
    closeness_threshold: int = 2
    walk_length: int = 4
    walk_count: int = 10000

    def __post_init__(self):
        if self.horizon < 1:
            raise MmmError("BAD_SCENARIO", "horizon must be >= 1")
        for kind, weight in self.kind_weights.items():
            if kind not in EDGE_KINDS:
                raise MmmError("UNKNOWN_KIND", f"unknown edge kind {kind!r} in weights")
            if weight < 0:
                raise MmmError("BAD_SCENARIO", f"negative weight for {kind}")

    def weight(self, edge_kind: str) -> float:
        return self.kind_weights.get(edge_kind, 0.0)


class IncidenceView:
    """Read-only graph view; build with :func:`build_view`."""

    def __init__(
        self,
        pieces: dict[PieceId, PieceOfKnowledge],
        resolve: Callable[[PieceId], Optional[PieceId]],
        flag_counts: dict[PieceId, int],
        origins: dict[PieceId, str],
    ):
        self.pieces = pieces
        self.flag_counts = flag_counts
        self.origins = origins
        self._resolve = resolve
        self.edge_endpoints: dict[PieceId, tuple[Optional[PieceId], Optional[PieceId]]] = {}
        step: dict[PieceId, set[PieceId]] = {pid: set() for pid in pieces}
        dist: dict[PieceId, set[PieceId]] = {pid: set() for pid in pieces}
        out: dict[PieceId, set[PieceId]] = {pid: set() for pid in pieces}
        inc: dict[PieceId, set[PieceId]] = {pid: set() for pid in pieces}
        for pid, piece in pieces.items():
            if not piece.is_edge:
                continue
            src = self._member(piece.source)
            tgt = self._member(piece.target)
            self.edge_endpoints[pid] = (src, tgt)
            for end in (src, tgt):
                if end is not None:
                    step[pid].add(end)
                    step[end].add(pid)
                    dist[pid].add(end)
                    dist[end].add(pid)
            if src is not None and tgt is not None:
                dist[src].add(tgt)
                dist[tgt].add(src)
                out[src].add(tgt)
                inc[tgt].add(src)
        self.step_adj = {pid: tuple(sorted(s)) for pid, s in step.items()}
        self.dist_adj = {pid: tuple(sorted(s)) for pid, s in dist.items()}
        self.out_adj = {pid: tuple(sorted(s)) for pid, s in out.items()}
        self.in_adj = {pid: tuple(sorted(s)) for pid, s in inc.items()}

    def _member(self, pid: Optional[PieceId]) -> Optional[PieceId]:
        if pid is None:
            return None
        rid = self._resolve(pid)
        return rid if rid in self.pieces else None

    def __len__(self) -> int:
        return len(self.pieces)

    def __contains__(self, pid: PieceId) -> bool:
        return self._member(pid) is not None

    def require(self, pid: PieceId) -> PieceId:
        rid = self._member(pid)
        if rid is None:
            raise MmmError("UNKNOWN_PIECE", f"{pid} is not in the view")
        return rid

    def vertices(self) -> list[PieceId]:
        return sorted(self.pieces)


def build_view(
    territory: Territory,
    extra_pieces: Iterable[PieceOfKnowledge] = (),
    extra_origin: str = "accepted-share",
) -> IncidenceView:
    """View of a territory, optionally with candidate pieces grafted on.

    Grafted pieces keep their own ids; endpoints resolve first through the
    territory's alias index, then among the grafted ids.
    """
    pieces = {pid: territory.get(pid) for pid in territory.ids()}
    flags = {pid: territory.flag_count(pid) for pid in pieces}
    origins = {pid: territory.meta(pid).origin for pid in pieces}
    extras = {}
    for piece in extra_pieces:
        if territory.try_resolve(piece.id) is None and piece.id not in pieces:
            extras[piece.id] = piece
    pieces.update(extras)
    flags.update({pid: territory.flag_count(pid) for pid in extras})
    origins.update({pid: extra_origin for pid in extras})

    def resolve(pid: PieceId) -> Optional[PieceId]:
        rid = territory.try_resolve(pid)
        if rid is not None:
            return rid
        return pid if pid in pieces else None

    return IncidenceView(pieces, resolve, flags, origins)


# ---------------------------------------------------------------------------
# distances and components


def closeness(view: IncidenceView, a: PieceId, b: PieceId) -> Optional[int]:
    """Minimum hop distance between two pieces, direction-agnostic;
    None when unreachable."""
    start, goal = view.require(a), view.require(b)
    if start == goal:
        return 0
    seen = {start}
    queue = deque([(start, 0)])
    while queue:
        v, d = queue.popleft()
        for w in view.dist_adj[v]:
            if w == goal:
                return d + 1
            if w not in seen:
                seen.add(w)
                queue.append((w, d + 1))
    return None


def _components(adj: dict[PieceId, tuple[PieceId, ...]]) -> list[frozenset[PieceId]]:
    seen: set[PieceId] = set()
    comps = []
    for start in sorted(adj):
        if start in seen:
            continue
        comp = {start}
        queue = deque([start])
        seen.add(start)
        while queue:
            v = queue.popleft()
            for w in adj[v]:
                if w not in seen:
                    seen.add(w)
                    comp.add(w)
                    queue.append(w)
        comps.append(frozenset(comp))
    comps.sort(key=min)
    return comps


def areas(view: IncidenceView) -> list[frozenset[PieceId]]:
    """Connected components of the view, ordered by smallest member id."""
    return _components(view.dist_adj)


def _bounded_bfs(
    adj: dict[PieceId, tuple[PieceId, ...]], start: PieceId, radius: int
) -> frozenset[PieceId]:
    seen = {start}
    queue = deque([(start, 0)])
    while queue:
        v, d = queue.popleft()
        if d == radius:
            continue
        for w in adj[v]:
            if w not in seen:
                seen.add(w)
                queue.append((w, d + 1))
    return frozenset(seen)


def ball(view: IncidenceView, seed: PieceId, radius: int) -> frozenset[PieceId]:
    """Pieces within ``radius`` of ``seed`` under hop-and-incidence counting."""
    return _bounded_bfs(view.dist_adj, view.require(seed), radius)


def step_ball(view: IncidenceView, seed: PieceId, radius: int) -> frozenset[PieceId]:
    """Pieces within ``radius`` wayfarer steps (node-edge incidence only)."""
    return _bounded_bfs(view.step_adj, view.require(seed), radius)


# ---------------------------------------------------------------------------
# path depth and utility


def _longest_simple_path(
    adj: dict[PieceId, tuple[PieceId, ...]], start: PieceId, horizon: int
) -> int:
    best = 0
    visited = {start}

    def walk(v: PieceId, length: int) -> None:
        nonlocal best
        if length > best:
            best = length
        if length >= horizon:
            return
        for w in adj[v]:
            if w not in visited:
                visited.add(w)
                walk(w, length + 1)
                visited.discard(w)

    walk(start, 0)
    return best


def depth(view: IncidenceView, k: PieceId, cfg: MeasureConfig) -> int:
    """Length of the longest simple directed path terminating at k,
    bounded by the horizon."""
    return _longest_simple_path(view.in_adj, view.require(k), cfg.horizon)


def utility(view: IncidenceView, k: PieceId, cfg: MeasureConfig) -> int:
    """Mirror of depth over outgoing paths."""
    return _longest_simple_path(view.out_adj, view.require(k), cfg.horizon)


# ---------------------------------------------------------------------------
# implantation and visibility


def implantation(view: IncidenceView, k: PieceId, cfg: MeasureConfig) -> float:
    """Weighted sum over incident edge-pieces; unlabeled edges count less."""
    rid = view.require(k)
    total = 0.0
    for eid, (src, tgt) in view.edge_endpoints.items():
        if rid not in (src, tgt):
            continue
        edge = view.pieces[eid]
        factor = 1.0 if edge.labeled else cfg.label_factor_unlabeled
        total += cfg.weight(edge.edge_kind) * factor
    return total


def visibility(view: IncidenceView, k: PieceId, cfg: MeasureConfig, rng: Random) -> float:
    """Estimated probability that a random walk of ``walk_length`` hops from
    a uniformly random start vertex visits k, over ``walk_count`` walks."""
    rid = view.require(k)
    verts = view.vertices()
    if not verts:
        raise MmmError("EMPTY_VIEW", "cannot walk an empty view")
    hits = 0
    for _ in range(cfg.walk_count):
        v = verts[rng.randrange(len(verts))]
        if v == rid:
            hits += 1
            continue
        for _ in range(cfg.walk_length):
            nbrs = view.dist_adj[v]
            if not nbrs:
                break
            v = nbrs[rng.randrange(len(nbrs))]
            if v == rid:
                hits += 1
                break
    return hits / cfg.walk_count


def visibility_exact(view: IncidenceView, k: PieceId, cfg: MeasureConfig) -> float:
    """Exact hit probability by absorbing-walk dynamic programming; meant
    for small views and as the Monte-Carlo oracle."""
    rid = view.require(k)
    verts = view.vertices()
    if not verts:
        raise MmmError("EMPTY_VIEW", "cannot walk an empty view")
    mass = {v: 1.0 / len(verts) for v in verts}
    absorbed = mass.pop(rid, 0.0)
    for _ in range(cfg.walk_length):
        nxt: dict[PieceId, float] = {}
        for v, m in mass.items():
            nbrs = view.dist_adj[v]
            if not nbrs:
                nxt[v] = nxt.get(v, 0.0) + m
                continue
            share = m / len(nbrs)
            for w in nbrs:
                nxt[w] = nxt.get(w, 0.0) + share
        absorbed += nxt.pop(rid, 0.0)
        mass = nxt
    return absorbed


# ---------------------------------------------------------------------------
# one name-indexed entry point shared by gatekeeper, service and CLI

_VISIBILITY_SEED = 0x5EED


def measure_value(
    view: IncidenceView,
    k: PieceId,
    cfg: MeasureConfig,
    name: str,
    to: Optional[PieceId] = None,
    local_ids: Optional[Iterable[PieceId]] = None,
) -> float:
    """Evaluate a measure by its public name.

    ``closeness`` needs a second piece (``to``) or a set of pieces
    (``local_ids``) and yields the distance to the nearest; unreachable is
    +infinity.  Visibility uses the exact evaluation when the view is small
    enough, otherwise a fixed-seed walk estimate, so verdicts stay
    deterministic.
    """
    if name == "depth":
        return float(depth(view, k, cfg))
    if name == "utility":
        return float(utility(view, k, cfg))
    if name == "implantation":
        return implantation(view, k, cfg)
    if name == "visibility":
        if len(view) <= EXACT_VISIBILITY_LIMIT:
            return visibility_exact(view, k, cfg)
        return visibility(view, k, cfg, Random(_VISIBILITY_SEED))
    if name == "flag_count":
        return float(view.flag_counts.get(view.require(k), 0))
    if name == "closeness":
        if to is not None:
            d = closeness(view, k, to)
            return float("inf") if d is None else float(d)
        best = float("inf")
        for other in local_ids or ():
            if other not in view:
                continue
            d = closeness(view, k, other)
            if d is not None:
                best = min(best, float(d))
        return best
    raise MmmError("UNKNOWN_MEASURE", f"unknown measure {name!r}")


# ---------------------------------------------------------------------------
# topography export


@dataclass(frozen=True)
class TopographyEntry:
    piece: PieceId
    x: float
    y: float
    height: float


def topography(view: IncidenceView, cfg: MeasureConfig, measure: str) -> list[TopographyEntry]:
    """Deterministic 2D layout with the chosen measure as height.

    Force layout with a fixed iteration count and a fixed-seed start, so
    identical views give identical grids.
    """
    if measure not in ("depth", "utility", "implantation", "visibility"):
        raise MmmError("UNKNOWN_MEASURE", f"unknown topography measure {measure!r}")
    verts = view.vertices()
    if not verts:
        return []
    rng = Random(1729)
    n = len(verts)
    pos = {}
    for i, v in enumerate(verts):
        angle = 2.0 * math.pi * i / n
        pos[v] = [math.cos(angle) + rng.uniform(-0.01, 0.01),
                  math.sin(angle) + rng.uniform(-0.01, 0.01)]
    k = math.sqrt(4.0 / n)
    for it in range(60):
        temp = 0.1 * (1.0 - it / 60.0)
        disp = {v: [0.0, 0.0] for v in verts}
        for i, v in enumerate(verts):
            for w in verts[i + 1:]:
                dx = pos[v][0] - pos[w][0]
                dy = pos[v][1] - pos[w][1]
                d2 = dx * dx + dy * dy or 1e-9
                f = k * k / d2
                disp[v][0] += dx * f
                disp[v][1] += dy * f
                disp[w][0] -= dx * f
                disp[w][1] -= dy * f
        for v in verts:
            for w in view.dist_adj[v]:
                if w <= v:
                    continue
                dx = pos[v][0] - pos[w][0]
                dy = pos[v][1] - pos[w][1]
                d = math.sqrt(dx * dx + dy * dy) or 1e-9
                pull = d / k
                disp[v][0] -= dx * pull
                disp[v][1] -= dy * pull
                disp[w][0] += dx * pull
                disp[w][1] += dy * pull
        for v in verts:
            dx, dy = disp[v]
            d = math.sqrt(dx * dx + dy * dy) or 1e-9
            step = min(d, temp)
            pos[v][0] += dx / d * step
            pos[v][1] += dy / d * step
    entries = []
    for v in verts:
        height = measure_value(view, v, cfg, measure)
        entries.append(TopographyEntry(v, round(pos[v][0], 6), round(pos[v][1], 6), height))
    return entries
