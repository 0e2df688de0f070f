"""Small rule-generated knowledge bases for desk-scale experiments."""

from __future__ import annotations

import numpy as np

from convkb.data import KnowledgeBase

# r2 = r0 then r1, r3 = r1 then r2
DEFAULT_OFFSETS = (1, 7, 8, 15)


def compositional_kb(n_entities: int = 60, offsets=DEFAULT_OFFSETS, n_test: int = 50, n_valid: int = 30,
                     seed: int = 0) -> KnowledgeBase:
    """Entities on a ring; relation j links i to i + offsets[j] and to the antipode of that.

    Each relation is 1-to-2 (and 2-to-1), so 60 entities and 4 relations give
    480 triples. A seeded shuffle holds out ``n_test`` (then ``n_valid``)
    triples; the rest are training data.
    """
    half = n_entities // 2
    triples = []
    for r, off in enumerate(offsets):
        for i in range(n_entities):
            triples.append((i, r, (i + off) % n_entities))
            triples.append((i, r, (i + off + half) % n_entities))
    order = np.random.default_rng(seed).permutation(len(triples))
    triples = [triples[i] for i in order]
    test = triples[:n_test]
    valid = triples[n_test:n_test + n_valid]
    train = triples[n_test + n_valid:]
    entities = [f"e{i:03d}" for i in range(n_entities)]
    relations = [f"plus{off}" for off in offsets]
    return KnowledgeBase.from_triples(entities, relations, train, valid, test)
