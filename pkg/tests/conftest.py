"""Shared fixtures: the sky-colour demo graph and random territory makers."""

from __future__ import annotations

from datetime import datetime, timedelta, timezone
from random import Random

import pytest

from mmm.core import EDGE_KINDS, NODE_KINDS, PieceOfKnowledge, Territory

BASE_TS = datetime(2024, 1, 5, 12, 0, 0, tzinfo=timezone.utc)


def ts(minutes: int = 0) -> str:
    return (BASE_TS + timedelta(minutes=minutes)).strftime("%Y-%m-%dT%H:%M:%SZ")


def build_sky_territory(owner: str = "alice"):
    """The demo graph used across the suite.

    Nine nodes and eight edges around the question "What colour is the
    sky?": answers from a narrative and from Blue, a yes-labelled answer to
    a second question, an unlabeled relate edge, a definition, a
    translation, a differsFrom and an instantiates edge.
    """
    rng = Random(20240101)
    t = Territory(owner)
    n: dict[str, PieceOfKnowledge] = {}

    def node(name, kind, content, author, minute):
        n[name] = t.create_piece(kind, content, author, ts(minute), rng)

    def edge(name, kind, source, target, author, minute, label=None, reverse_label=None):
        n[name] = t.create_piece(
            kind, "", author, ts(minute), rng,
            label=label, reverse_label=reverse_label,
            source=n[source].id, target=n[target].id,
        )

    node("qsky", "question", "What colour is the sky?", "alice", 0)
    node("blue", "existence", "Blue", "alice", 1)
    node("qyesno", "question", "Is the sky is blue?", "bob", 2)
    node("narr", "narrative", "The sky is blue.", "bob", 3)
    node("tobeblue", "existence", "To be blue", "alice", 4)
    node("daytime", "existence", "the colour of a cloudless daytime sky", "carol", 5)
    node("turquoise", "existence", "Turquoise", "carol", 6)
    node("bleu", "existence", "bleu", "carol", 7)
    node("colour", "existence", "color", "alice", 8)

    edge("relate_blue", "relate", "blue", "tobeblue", "alice", 9)
    edge("answers_narr", "answers", "narr", "qsky", "bob", 10)
    edge("answers_yes", "answers", "narr", "qyesno", "bob", 11, label="yes")
    edge("answers_blue", "answers", "blue", "qsky", "alice", 12)
    edge("instantiates", "instantiates", "blue", "colour", "alice", 13, label="is a")
    edge("details_def", "details", "daytime", "blue", "carol", 14, label="definition")
    edge("differs", "differsFrom", "blue", "turquoise", "carol", 15,
         label="add a bit of green", reverse_label="remove some green")
    edge("equates_fr", "equates", "bleu", "blue", "carol", 16,
         label="language translation FR ↔ EN")
    return t, n


@pytest.fixture
def sky():
    return build_sky_territory()


# ---------------------------------------------------------------------------
# random territory generation for oracle and property suites

AUTHORS = ("ann", "ben", "cho", "dee")
WORDS = (
    "sky", "blue", "rain", "graph", "note", "question", "light", "cloud",
    "water", "deep", "glue", "bridge", "answer", "field",
)


def random_content(rng: Random) -> str:
    return " ".join(rng.choice(WORDS) for _ in range(rng.randint(1, 4)))


def random_territory(
    rng: Random,
    max_pieces: int = 12,
    owner: str = "gen",
    external_prob: float = 0.1,
) -> Territory:
    """Small random territory; edges may land on edges and may dangle."""
    t = Territory(owner)
    minute = 0
    n_nodes = rng.randint(1, max(1, max_pieces // 2))
    for _ in range(n_nodes):
        t.create_piece(
            rng.choice(NODE_KINDS), random_content(rng),
            rng.choice(AUTHORS), ts(minute), rng,
            label=rng.choice((None, "tag")),
        )
        minute += 1
    total = rng.randint(n_nodes, max_pieces)
    while len(t) < total:
        ids = t.ids()
        if rng.random() < 0.75 and len(ids) >= 2:
            src, tgt = rng.sample(ids, 2)
            if rng.random() < external_prob:
                tgt = f"{rng.getrandbits(128):032x}"
            t.create_piece(
                rng.choice(EDGE_KINDS), "", rng.choice(AUTHORS), ts(minute), rng,
                label=rng.choice((None, "link", None)),
                source=src, target=tgt,
            )
        else:
            t.create_piece(
                rng.choice(NODE_KINDS), random_content(rng),
                rng.choice(AUTHORS), ts(minute), rng,
            )
        minute += 1
    return t
