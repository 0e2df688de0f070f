"""Link-prediction ranking with raw or filtered candidate sets."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from convkb.data import KnowledgeBase
from convkb.errors import DataError, EvaluationError

HEAD, TAIL = "head", "tail"


@dataclass(frozen=True)
class EvalConfig:
    setting: str = "filtered"
    cutoffs: tuple[int, ...] = (1, 3, 10)

    def __post_init__(self):
        if self.setting not in ("filtered", "raw"):
            raise ValueError(f"setting must be 'filtered' or 'raw', got {self.setting!r}")
        if not self.cutoffs or min(self.cutoffs) < 1:
            raise ValueError("cutoffs must be positive")


@dataclass
class RankingReport:
    """Ranks for both sides of every evaluated triple, plus aggregates.

    ``ranks`` has shape (n, 2): column 0 predicts the head, column 1 the tail.
    """

    ranks: np.ndarray
    cutoffs: tuple[int, ...] = (1, 3, 10)
    mr: float = field(init=False)
    mrr: float = field(init=False)
    hits_at: dict[int, float] = field(init=False)

    def __post_init__(self):
        flat = np.asarray(self.ranks, dtype=np.int64).ravel()
        if flat.size == 0:
            raise ValueError("no ranks to aggregate")
        self.mr = float(flat.mean())
        self.mrr = float((1.0 / flat).mean())
        self.hits_at = {n: float((flat <= n).mean()) for n in sorted(self.cutoffs)}

    @classmethod
    def from_ranks(cls, ranks, cutoffs=(1, 3, 10)) -> RankingReport:
        return cls(np.asarray(ranks, dtype=np.int64).reshape(-1, 1), tuple(cutoffs))

    def line(self) -> str:
        """``MR<TAB>MRR<TAB>H@N...`` with hits in percent."""
        cols = [f"{self.mr:.4f}", f"{self.mrr:.6f}"] + [f"{100 * self.hits_at[n]:.2f}" for n in sorted(self.hits_at)]
        return "\t".join(cols)

    def header(self) -> str:
        return "\t".join(["MR", "MRR"] + [f"H@{n}" for n in sorted(self.hits_at)])


def candidate_triples(triple, side: str, n_entities: int) -> np.ndarray:
    h, r, t = (int(x) for x in triple)
    cand = np.empty((n_entities, 3), dtype=np.int64)
    cand[:, 0] = h
    cand[:, 1] = r
    cand[:, 2] = t
    cand[:, 0 if side == HEAD else 2] = np.arange(n_entities)
    return cand


def rank_from_scores(scores: np.ndarray, true_idx: int, exclude=None) -> int:
    """1 + competitors scoring below or equal to the true candidate (ties count against it)."""
    target = scores[true_idx]
    ahead = scores <= target
    ahead[true_idx] = False
    if exclude is not None and len(exclude):
        ahead[exclude] = False
    return 1 + int(ahead.sum())


def _known_competitors(triple, side, kb: KnowledgeBase):
    h, r, t = (int(x) for x in triple)
    known = kb.known_heads.get((r, t)) if side == HEAD else kb.known_tails.get((h, r))
    return known if known is not None else np.empty(0, dtype=np.int64)


def rank_triple(scorer, triple, side: str, kb: KnowledgeBase, cfg: EvalConfig = EvalConfig()) -> int:
    """Rank of ``triple`` among all its head- or tail-substituted candidates."""
    if side not in (HEAD, TAIL):
        raise ValueError(f"side must be 'head' or 'tail', got {side!r}")
    cand = candidate_triples(triple, side, kb.n_entities)
    scores = np.asarray(scorer(cand), dtype=np.float64)
    bad = ~np.isfinite(scores)
    if bad.any():
        raise EvaluationError(f"non-finite score for candidate {tuple(cand[np.argmax(bad)].tolist())}")
    true_idx = int(triple[0] if side == HEAD else triple[2])
    exclude = _known_competitors(triple, side, kb) if cfg.setting == "filtered" else None
    return rank_from_scores(scores, true_idx, exclude)


def evaluate(scorer, kb: KnowledgeBase, cfg: EvalConfig = EvalConfig(), split: str = "test") -> RankingReport:
    triples = kb.split(split)
    if len(triples) == 0:
        raise DataError(f"{split} split is empty")
    ranks = np.empty((len(triples), 2), dtype=np.int64)
    for i, trip in enumerate(triples):
        ranks[i, 0] = rank_triple(scorer, trip, HEAD, kb, cfg)
        ranks[i, 1] = rank_triple(scorer, trip, TAIL, kb, cfg)
    return RankingReport(ranks, tuple(cfg.cutoffs))


def write_ranks(path, report: RankingReport, triples, kb: KnowledgeBase) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("head\trelation\ttail\thead_rank\ttail_rank\n")
        for (h, r, t), (hr, tr) in zip(triples, report.ranks):
            f.write(f"{kb.entities[h]}\t{kb.relations[r]}\t{kb.entities[t]}\t{hr}\t{tr}\n")
