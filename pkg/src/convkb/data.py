"""Triple files, vocabularies, filter index and Bernoulli corruption statistics."""

from __future__ import annotations

import hashlib
import logging
import os
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from convkb.errors import DataError, DuplicateTripleError, ParseError

logger = logging.getLogger(__name__)

SPLITS = ("train", "valid", "test")


class Vocab:
    """Dense 0-based label -> id mapping in first-seen order."""

    def __init__(self, labels=()):
        self.labels: list[str] = []
        self.index: dict[str, int] = {}
        for label in labels:
            self.add(label)

    def add(self, label: str) -> int:
        idx = self.index.get(label)
        if idx is None:
            idx = len(self.labels)
            self.index[label] = idx
            self.labels.append(label)
        return idx

    def __len__(self):
        return len(self.labels)

    def __getitem__(self, label):
        return self.index[label]

    def __contains__(self, label):
        return label in self.index


def parse_triples(path, entities: Vocab, relations: Vocab) -> list[tuple[int, int, int]]:
    """Read a ``head<TAB>relation<TAB>tail`` file, growing the vocabularies.

    Blank lines are skipped. Labels are taken verbatim.
    """
    triples = []
    with open(path, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ParseError(path, lineno, f"expected 3 tab-separated fields, got {len(parts)}")
            h, r, t = parts
            triples.append((entities.add(h), relations.add(r), entities.add(t)))
    return triples


def write_triples(path, triples, entities, relations) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for h, r, t in triples:
            f.write(f"{entities[h]}\t{relations[r]}\t{entities[t]}\n")


def _as_array(triples) -> np.ndarray:
    arr = np.asarray(triples, dtype=np.int64)
    return arr.reshape(-1, 3)


@dataclass(frozen=True, eq=False)
class KnowledgeBase:
    entities: tuple[str, ...]
    relations: tuple[str, ...]
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    filter_index: frozenset = field(repr=False)

    @classmethod
    def from_triples(cls, entities, relations, train, valid=(), test=()):
        splits = {"train": _as_array(train), "valid": _as_array(valid), "test": _as_array(test)}
        n_e, n_r = len(entities), len(relations)
        for name, arr in splits.items():
            if arr.size and (arr[:, [0, 2]].min() < 0 or arr[:, [0, 2]].max() >= n_e
                             or arr[:, 1].min() < 0 or arr[:, 1].max() >= n_r):
                raise DataError(f"{name} split has ids outside the vocabulary")
            seen = set()
            for row in arr.tolist():
                key = tuple(row)
                if key in seen:
                    raise DuplicateTripleError(name, (entities[key[0]], relations[key[1]], entities[key[2]]))
                seen.add(key)
            arr.setflags(write=False)
        index = frozenset(tuple(row) for arr in splits.values() for row in arr.tolist())
        return cls(tuple(entities), tuple(relations), filter_index=index, **splits)

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    def split(self, name: str) -> np.ndarray:
        if name not in SPLITS:
            raise ValueError(f"unknown split {name!r}")
        return getattr(self, name)

    def __contains__(self, triple) -> bool:
        return tuple(int(x) for x in triple) in self.filter_index

    @cached_property
    def train_set(self) -> frozenset:
        return frozenset(tuple(row) for row in self.train.tolist())

    @cached_property
    def _train_keys(self) -> np.ndarray:
        return np.sort(self.triple_keys(self.train))

    def triple_keys(self, triples) -> np.ndarray:
        """Injective int64 code for each (h, r, t) row."""
        t = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
        return (t[:, 0] * self.n_relations + t[:, 1]) * self.n_entities + t[:, 2]

    def in_train(self, triples) -> np.ndarray:
        """Boolean mask: which rows of ``triples`` are training triples."""
        keys, ref = self.triple_keys(triples), self._train_keys
        if ref.size == 0:
            return np.zeros(len(keys), dtype=bool)
        pos = np.minimum(np.searchsorted(ref, keys), ref.size - 1)
        return ref[pos] == keys

    @cached_property
    def known_tails(self) -> dict[tuple[int, int], np.ndarray]:
        """(head, relation) -> every tail seen in any split."""
        return _group(self.filter_index, key=lambda h, r, t: (h, r), value=lambda h, r, t: t)

    @cached_property
    def known_heads(self) -> dict[tuple[int, int], np.ndarray]:
        """(relation, tail) -> every head seen in any split."""
        return _group(self.filter_index, key=lambda h, r, t: (r, t), value=lambda h, r, t: h)

    @cached_property
    def train_entity_mask(self) -> np.ndarray:
        mask = np.zeros(self.n_entities, dtype=bool)
        mask[self.train[:, 0]] = True
        mask[self.train[:, 2]] = True
        return mask

    def vocab_hash(self) -> str:
        return vocab_hash(self.entities, self.relations)


def vocab_hash(entities, relations) -> str:
    digest = hashlib.sha256()
    for group in (entities, relations):
        for label in group:
            raw = label.encode("utf-8")
            digest.update(len(raw).to_bytes(4, "little"))
            digest.update(raw)
        digest.update(b"\xff\xff\xff\xff")
    return digest.hexdigest()


def _group(triples, key, value):
    groups: dict = {}
    for trip in triples:
        groups.setdefault(key(*trip), []).append(value(*trip))
    return {k: np.array(sorted(v), dtype=np.int64) for k, v in groups.items()}


def build_kb(train_path, valid_path, test_path) -> KnowledgeBase:
    entities, relations = Vocab(), Vocab()
    splits = [parse_triples(p, entities, relations) for p in (train_path, valid_path, test_path)]
    return KnowledgeBase.from_triples(entities.labels, relations.labels, *splits)


def load_kb(data_dir) -> KnowledgeBase:
    """Load ``train.txt``, ``valid.txt`` and ``test.txt`` from a directory."""
    paths = [os.path.join(data_dir, f"{name}.txt") for name in SPLITS]
    for p in paths:
        if not os.path.isfile(p):
            raise DataError(f"missing split file {p}")
    return build_kb(*paths)


def save_kb(kb: KnowledgeBase, data_dir) -> None:
    os.makedirs(data_dir, exist_ok=True)
    for name in SPLITS:
        write_triples(os.path.join(data_dir, f"{name}.txt"), kb.split(name).tolist(),
                      kb.entities, kb.relations)


@dataclass(frozen=True, eq=False)
class RelationStats:
    """Per-relation tails-per-head, heads-per-tail and head-corruption probability.

    Indexed by relation id. Relations missing from the training split get
    ``tph = hpt = nan`` and ``head_prob = 0.5``.
    """

    tph: np.ndarray
    hpt: np.ndarray
    head_prob: np.ndarray


def bernoulli_stats(kb: KnowledgeBase) -> RelationStats:
    if len(kb.train) == 0:
        raise DataError("training split is empty")
    n_r = kb.n_relations
    tph = np.full(n_r, np.nan)
    hpt = np.full(n_r, np.nan)
    head_prob = np.full(n_r, 0.5)
    rels = kb.train[:, 1]
    for r in range(n_r):
        rows = kb.train[rels == r]
        if len(rows) == 0:
            logger.warning("relation %r absent from train; head-corruption probability set to 0.5",
                           kb.relations[r])
            continue
        n = len(rows)
        tph[r] = n / len(np.unique(rows[:, 0]))
        hpt[r] = n / len(np.unique(rows[:, 2]))
        head_prob[r] = tph[r] / (tph[r] + hpt[r])
    for arr in (tph, hpt, head_prob):
        arr.setflags(write=False)
    return RelationStats(tph, hpt, head_prob)


def split_stats(kb: KnowledgeBase) -> list[tuple[str, int, int, int]]:
    """Rows of (split, entities, relations, triples).

    Per-split rows count the distinct entities and relations occurring in that
    split; the final ``all`` row carries the vocabulary sizes and the number of
    triples over every split.
    """
    rows = []
    for name in SPLITS:
        arr = kb.split(name)
        n_ent = len(np.unique(arr[:, [0, 2]])) if len(arr) else 0
        n_rel = len(np.unique(arr[:, 1])) if len(arr) else 0
        rows.append((name, n_ent, n_rel, len(arr)))
    rows.append(("all", kb.n_entities, kb.n_relations, sum(r[3] for r in rows)))
    return rows
