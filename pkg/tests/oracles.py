"""Independent reference implementations used only by the tests."""

import math

import numpy as np


def convkb_score_loops(params, emb, triple):
    h, r, t = triple
    g = {"relu": lambda x: max(x, 0.0), "abs": abs, "square": lambda x: x * x,
         "identity": lambda x: x}[params.activation]
    k = emb.k
    total = 0.0
    for f in range(params.tau):
        w0, w1, w2 = params.filters[f]
        for i in range(k):
            v = g(w0 * emb.entity[h, i] + w1 * emb.relation[r, i] + w2 * emb.entity[t, i] + params.biases[f])
            total += v * params.weight[f * k + i]
    return total


def transe_score_loops(emb, triple, p):
    h, r, t = triple
    return sum(abs(emb.entity[h, i] + emb.relation[r, i] - emb.entity[t, i]) ** p for i in range(emb.k))


def full_sort_rank(scorer, kb, triple, side, setting):
    """Sort every candidate; competitors tied with the true triple are placed ahead of it."""
    h, r, t = (int(x) for x in triple)
    cands = []
    for e in range(kb.n_entities):
        cand = (e, r, t) if side == "head" else (h, r, e)
        is_true = cand == (h, r, t)
        if setting == "filtered" and not is_true and cand in kb.filter_index:
            continue
        score = float(scorer(np.array([cand]))[0])
        cands.append((score, 1 if is_true else 0, cand))
    cands.sort(key=lambda c: (c[0], c[1]))
    return 1 + [c[2] for c in cands].index((h, r, t))


def brute_force_report(scorer, kb, setting, split="test"):
    ranks = []
    for trip in kb.split(split):
        ranks.append(full_sort_rank(scorer, kb, trip, "head", setting))
        ranks.append(full_sort_rank(scorer, kb, trip, "tail", setting))
    mr = sum(ranks) / len(ranks)
    mrr = math.fsum(1.0 / x for x in ranks) / len(ranks)
    hits = {n: sum(x <= n for x in ranks) / len(ranks) for n in (1, 3, 10)}
    return ranks, mr, mrr, hits


def count_bernoulli(triples, r):
    """tails-per-head, heads-per-tail for relation r by explicit counting."""
    heads, tails = {}, {}
    for h, rel, t in triples:
        if rel != r:
            continue
        heads.setdefault(h, set()).add(t)
        tails.setdefault(t, set()).add(h)
    tph = sum(len(v) for v in heads.values()) / len(heads)
    hpt = sum(len(v) for v in tails.values()) / len(tails)
    return tph, hpt
