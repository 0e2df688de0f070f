"""Negative sampling, losses, analytic gradients, optimizers and the epoch loop."""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from convkb.data import KnowledgeBase, RelationStats, bernoulli_stats
from convkb.errors import ConfigError, NumericalError, SamplingError
from convkb.model import (
    ConvKB,
    EmbeddingStore,
    TransE,
    convkb_preactivations,
    get_activation,
    init_convkb_params,
    init_transe_embeddings,
)

logger = logging.getLogger(__name__)

MAX_RESAMPLE = 1000

# tags mixed into the base seed so every random stream is independent
_EMB_STREAM = 1
_PARAM_STREAM = 2
_EPOCH_STREAM = 0


# ---------------------------------------------------------------------------
# negative sampling


def sample_corrupted(triple, kb: KnowledgeBase, stats: RelationStats, rng: np.random.Generator):
    """Corrupt head (w.p. head_prob[r]) or tail with a uniform entity, avoiding training triples."""
    return tuple(corrupt_batch(np.asarray([triple]), kb, stats, rng)[0].tolist())


def corrupt_batch(triples, kb, stats, rng, neg_ratio: int = 1) -> np.ndarray:
    """``neg_ratio`` corruptions per triple, grouped by draw: row j*n + i corrupts triple i.

    The side is drawn once per row; rows that land on a training triple redraw
    only the replacement entity, up to MAX_RESAMPLE times.
    """
    if kb.n_entities < 2:
        raise SamplingError("need at least two entities to corrupt a triple")
    out = np.tile(np.asarray(triples, dtype=np.int64).reshape(-1, 3), (neg_ratio, 1))
    col = np.where(rng.random(len(out)) < stats.head_prob[out[:, 1]], 0, 2)
    pending = np.arange(len(out))
    for _ in range(MAX_RESAMPLE):
        if pending.size == 0:
            return out
        out[pending, col[pending]] = rng.integers(kb.n_entities, size=pending.size)
        pending = pending[kb.in_train(out[pending])]
    if pending.size == 0:
        return out
    i = int(pending[0]) % (len(out) // neg_ratio)
    trip = tuple(np.asarray(triples).reshape(-1, 3)[i].tolist())
    raise SamplingError(f"no corrupted triple outside train found for {trip} after {MAX_RESAMPLE} draws")


# ---------------------------------------------------------------------------
# losses


def softplus(x):
    """log(1 + exp(x)) without overflow."""
    x = np.asarray(x, dtype=np.float64)
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    return np.exp(-softplus(-x))


def softplus_loss(scores, labels, w, lam: float) -> float:
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.float64)
    if scores.shape != labels.shape:
        raise ValueError(f"{scores.shape[0]} scores but {labels.shape[0]} labels")
    w = np.asarray(w, dtype=np.float64)
    return float(softplus(labels * scores).sum() + 0.5 * lam * np.dot(w, w))


def margin_loss(pos_score, neg_score, gamma: float):
    if np.any(np.asarray(gamma) <= 0):
        raise ConfigError("margin must be positive")
    out = np.maximum(0.0, gamma + np.asarray(pos_score) - np.asarray(neg_score))
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# gradients


def _sparse_sum(ids, rows):
    uniq, inv = np.unique(ids, return_inverse=True)
    out = np.zeros((len(uniq), rows.shape[1]))
    np.add.at(out, inv.ravel(), rows)
    return uniq, out


@dataclass(eq=False)
class GradientSet:
    """Embedding gradients as (sorted unique ids, rows); dense blocks are None for TransE."""

    entity_ids: np.ndarray
    entity: np.ndarray
    relation_ids: np.ndarray
    relation: np.ndarray
    filters: np.ndarray | None = None
    biases: np.ndarray | None = None
    weight: np.ndarray | None = None

    def sparse_blocks(self):
        yield "entity", self.entity_ids, self.entity
        yield "relation", self.relation_ids, self.relation

    def dense_blocks(self):
        for name in ("filters", "biases", "weight"):
            value = getattr(self, name)
            if value is not None:
                yield name, value

    def keep_entities(self, mask: np.ndarray) -> GradientSet:
        """Drop rows for entities where ``mask`` is False."""
        keep = mask[self.entity_ids]
        return GradientSet(self.entity_ids[keep], self.entity[keep], self.relation_ids, self.relation,
                           self.filters, self.biases, self.weight)


def grad_convkb(model: ConvKB, triples, labels, lam: float) -> tuple[float, GradientSet]:
    """Softplus loss over labelled triples plus (lam/2)||w||^2, and its exact gradient."""
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    labels = np.asarray(labels, dtype=np.float64)
    params, emb = model.params, model.emb
    g, dg = get_activation(params.activation)
    tau, k = params.tau, emb.k
    weight = params.weight.reshape(tau, k)

    A = emb.triple_matrix(triples)                  # (n, k, 3)
    pre = convkb_preactivations(params, A)          # (n, tau, k)
    act = g(pre)
    scores = np.einsum("nfk,fk->n", act, weight)
    bad = ~np.isfinite(scores)
    if bad.any():
        raise NumericalError(f"non-finite score for triple {tuple(triples[np.argmax(bad)].tolist())}")
    loss = softplus_loss(scores, labels, params.weight, lam)

    dscore = labels * sigmoid(labels * scores)      # dL/df
    dweight = np.einsum("n,nfk->fk", dscore, act).ravel() + lam * params.weight
    dpre = dscore[:, None, None] * weight[None] * dg(pre)
    dfilters = np.einsum("nfk,nkc->fc", dpre, A)
    dbiases = dpre.sum(axis=(0, 2))
    dA = np.einsum("nfk,fc->nkc", dpre, params.filters)

    ent_ids, ent = _sparse_sum(np.concatenate([triples[:, 0], triples[:, 2]]),
                               np.concatenate([dA[:, :, 0], dA[:, :, 2]]))
    rel_ids, rel = _sparse_sum(triples[:, 1], dA[:, :, 1])
    grads = GradientSet(ent_ids, ent, rel_ids, rel, dfilters, dbiases, dweight)
    return loss, grads


def grad_transe(model: TransE, pos, neg, gamma: float) -> tuple[float, GradientSet]:
    """Summed margin loss over (pos[i], neg[i]) pairs and its subgradient.

    Subgradients: zero for pairs whose hinge is exactly zero, and sign(0) = 0 for
    the L1 residual.
    """
    pos = np.asarray(pos, dtype=np.int64).reshape(-1, 3)
    neg = np.asarray(neg, dtype=np.int64).reshape(-1, 3)
    if pos.shape != neg.shape:
        raise ValueError("pos and neg must pair up one-to-one")
    emb, p = model.emb, model.p

    def residual(trip):
        return emb.entity[trip[:, 0]] + emb.relation[trip[:, 1]] - emb.entity[trip[:, 2]]

    res_pos, res_neg = residual(pos), residual(neg)
    if p == 1:
        s_pos, s_neg = np.abs(res_pos).sum(1), np.abs(res_neg).sum(1)
        d_pos, d_neg = np.sign(res_pos), np.sign(res_neg)
    else:
        s_pos, s_neg = np.square(res_pos).sum(1), np.square(res_neg).sum(1)
        d_pos, d_neg = 2.0 * res_pos, 2.0 * res_neg
    hinge = gamma + s_pos - s_neg
    active = (hinge > 0).astype(np.float64)[:, None]
    loss = float(np.maximum(hinge, 0.0).sum())

    g_pos = active * d_pos    # d loss / d residual of the valid triple
    g_neg = -active * d_neg
    ent_ids, ent = _sparse_sum(
        np.concatenate([pos[:, 0], pos[:, 2], neg[:, 0], neg[:, 2]]),
        np.concatenate([g_pos, -g_pos, g_neg, -g_neg]))
    rel_ids, rel = _sparse_sum(np.concatenate([pos[:, 1], neg[:, 1]]), np.concatenate([g_pos, g_neg]))
    return loss, GradientSet(ent_ids, ent, rel_ids, rel)


def loss_and_grad(model, triples, labels, lam: float = 0.0, gamma: float = 1.0):
    """Dispatch on model kind. TransE pairs the i-th +1 row with the i-th -1 row."""
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    labels = np.asarray(labels)
    if model.kind == "convkb":
        return grad_convkb(model, triples, labels, lam)
    return grad_transe(model, triples[labels > 0], triples[labels < 0], gamma)


# ---------------------------------------------------------------------------
# optimizers


def param_blocks(model) -> dict[str, np.ndarray]:
    """Named parameter arrays of a model; a dict of arrays is passed through."""
    if isinstance(model, dict):
        return model
    blocks = {"entity": model.emb.entity, "relation": model.emb.relation}
    if model.kind == "convkb":
        blocks.update(filters=model.params.filters, biases=model.params.biases, weight=model.params.weight)
    return blocks


@dataclass(eq=False)
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_model(cls, model, **kw) -> AdamState:
        blocks = param_blocks(model)
        return cls({n: np.zeros_like(b) for n, b in blocks.items()},
                   {n: np.zeros_like(b) for n, b in blocks.items()}, **kw)


def adam_step(state: AdamState, grads: GradientSet, model, lr: float) -> AdamState:
    """One Adam update. Embedding rows absent from ``grads`` keep their params and moments."""
    blocks = param_blocks(model)
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1, bc2 = 1.0 - b1 ** state.t, 1.0 - b2 ** state.t

    def update(name, idx, g):
        m, v = state.m[name], state.v[name]
        m[idx] = b1 * m[idx] + (1.0 - b1) * g
        v[idx] = b2 * v[idx] + (1.0 - b2) * g * g
        blocks[name][idx] -= lr * (m[idx] / bc1) / (np.sqrt(v[idx] / bc2) + state.eps)

    for name, ids, rows in grads.sparse_blocks():
        if len(ids):
            update(name, ids, rows)
    for name, g in grads.dense_blocks():
        update(name, slice(None), g)
    return state


def sgd_step(model, grads: GradientSet, lr: float) -> None:
    blocks = param_blocks(model)
    for name, ids, rows in grads.sparse_blocks():
        blocks[name][ids] -= lr * rows
    for name, g in grads.dense_blocks():
        blocks[name] -= lr * g


def normalize_entities(emb: EmbeddingStore) -> None:
    """Rescale every entity row to unit L2 norm in place; all-zero rows are left alone."""
    norms = np.linalg.norm(emb.entity, axis=1)
    zero = norms == 0
    if zero.any():
        logger.warning("%d zero entity rows left unnormalized", int(zero.sum()))
    norms[zero] = 1.0
    emb.entity /= norms[:, None]


# ---------------------------------------------------------------------------
# configuration and the epoch loop

MODEL_DEFAULTS = {
    "transe": {"lr": 5e-4, "epochs": 3000, "optimizer": "sgd", "normalize": True},
    "convkb": {"lr": 1e-4, "epochs": 200, "optimizer": "adam", "normalize": False},
}


@dataclass
class TrainConfig:
    """Hyperparameters. ``None`` fields take per-model defaults (see MODEL_DEFAULTS)."""

    model: str = "convkb"
    k: int = 50
    tau: int = 50
    p: int = 1
    gamma: float = 1.0
    lam: float = 0.001
    lr: float | None = None
    batch_size: int = 256
    epochs: int | None = None
    neg_ratio: int = 1
    seed: int = 7
    filter_init: str = "tnormal"
    activation: str = "relu"
    optimizer: str | None = None
    normalize: bool | None = None
    freeze_unseen: bool = True

    def __post_init__(self):
        if self.model not in MODEL_DEFAULTS:
            raise ConfigError(f"unknown model {self.model!r}")
        for key, value in MODEL_DEFAULTS[self.model].items():
            if getattr(self, key) is None:
                setattr(self, key, value)
        self.validate()

    def validate(self):
        positive = {"k": self.k, "batch_size": self.batch_size, "neg_ratio": self.neg_ratio}
        if self.model == "convkb":
            positive["tau"] = self.tau
        else:
            positive["gamma"] = self.gamma
        for name, value in positive.items():
            if not value > 0:
                raise ConfigError(f"{name} must be positive, got {value}")
        if self.lr < 0 or self.lam < 0 or self.epochs < 0:
            raise ConfigError("lr, lambda and epochs must be non-negative")
        if self.p not in (1, 2):
            raise ConfigError(f"p must be 1 or 2, got {self.p}")
        if self.optimizer not in ("sgd", "adam"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.filter_init not in ("tnormal", "fixed"):
            raise ConfigError(f"unknown filter init {self.filter_init!r}")
        get_activation(self.activation)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in known})


def build_model(config: TrainConfig, kb: KnowledgeBase, init_emb: EmbeddingStore | None = None):
    """Fresh model for ``config``; ``init_emb`` (e.g. trained TransE vectors) seeds the embeddings."""
    if init_emb is not None:
        if init_emb.entity.shape != (kb.n_entities, config.k) or init_emb.relation.shape != (kb.n_relations, config.k):
            raise ConfigError(
                f"initial embeddings {init_emb.entity.shape}/{init_emb.relation.shape} do not match "
                f"{kb.n_entities}/{kb.n_relations} x k={config.k}")
        emb = init_emb.copy()
    else:
        emb = init_transe_embeddings([config.seed, _EMB_STREAM], config.k, kb.n_entities, kb.n_relations)
    if config.model == "transe":
        return TransE(emb, config.p)
    params = init_convkb_params([config.seed, _PARAM_STREAM], config.k, config.tau,
                                config.filter_init, config.activation)
    return ConvKB(emb, params)


@dataclass
class EpochStats:
    epoch: int
    mean_loss: float
    seconds: float = field(compare=False)


class Trainer:
    """Owns the model, optimizer state and epoch counter for one training run.

    Each epoch draws its shuffle and its corruptions from a generator seeded by
    ``(seed, epoch)``, so a run is reproducible and can resume from a checkpoint.
    """

    def __init__(self, model, kb: KnowledgeBase, config: TrainConfig, adam: AdamState | None = None, epoch: int = 0):
        if model.kind != config.model:
            raise ConfigError(f"model is {model.kind} but config says {config.model}")
        self.model = model
        self.kb = kb
        self.config = config
        self.stats = bernoulli_stats(kb)
        self.epoch = epoch
        if config.optimizer == "adam":
            self.adam = adam if adam is not None else AdamState.for_model(model)
        else:
            self.adam = None

    def _step(self, grads: GradientSet):
        if self.config.freeze_unseen:
            grads = grads.keep_entities(self.kb.train_entity_mask)
        if self.adam is not None:
            adam_step(self.adam, grads, self.model, self.config.lr)
        else:
            sgd_step(self.model, grads, self.config.lr)

    def train_epoch(self) -> EpochStats:
        cfg, kb = self.config, self.kb
        start = time.perf_counter()
        rng = np.random.default_rng([cfg.seed, _EPOCH_STREAM, self.epoch])
        order = kb.train[rng.permutation(len(kb.train))]
        total, count = 0.0, 0
        for lo in range(0, len(order), cfg.batch_size):
            pos = order[lo:lo + cfg.batch_size]
            if cfg.normalize:
                normalize_entities(self.model.emb)
            neg = corrupt_batch(pos, kb, self.stats, rng, cfg.neg_ratio)
            if self.model.kind == "transe":
                loss, grads = grad_transe(self.model, np.tile(pos, (cfg.neg_ratio, 1)), neg, cfg.gamma)
                count += len(neg)
            else:
                triples = np.concatenate([pos, neg])
                labels = np.concatenate([np.ones(len(pos)), -np.ones(len(neg))])
                loss, grads = grad_convkb(self.model, triples, labels, cfg.lam)
                count += len(triples)
            total += loss
            self._step(grads)
        self.epoch += 1
        return EpochStats(self.epoch, total / max(count, 1), time.perf_counter() - start)

    def fit(self, epochs: int | None = None, callback=None) -> list[EpochStats]:
        history = []
        n = self.config.epochs if epochs is None else epochs
        for _ in range(n):
            stats = self.train_epoch()
            history.append(stats)
            if callback is not None:
                callback(stats)
        return history


# ---------------------------------------------------------------------------
# finite-difference verification


@dataclass
class CheckReport:
    max_rel_error: dict[str, float]
    checked: int
    skipped: int
    tol: float

    @property
    def worst(self) -> float:
        return max(self.max_rel_error.values(), default=0.0)

    @property
    def passed(self) -> bool:
        return self.checked > 0 and self.worst <= self.tol


_XP = np.longdouble


def _oracle_terms(kind, P, triples, labels, lam, gamma, activation, p):
    """Additive loss terms and kink quantities, written out element by element.

    Runs in extended precision on its own copy of the parameters and shares no
    code with the vectorized scorers or the backward pass.
    """
    h, r, t = triples[:, 0], triples[:, 1], triples[:, 2]
    E, R = P["entity"], P["relation"]
    if kind == "convkb":
        F, b = P["filters"], P["biases"]
        tau = F.shape[0]
        W = P["weight"].reshape(tau, -1)
        pre = np.stack([F[f, 0] * E[h] + F[f, 1] * R[r] + F[f, 2] * E[t] + b[f] for f in range(tau)], axis=1)
        if activation == "relu":
            act = np.where(pre > 0, pre, _XP(0))
        elif activation == "abs":
            act = np.abs(pre)
        elif activation == "square":
            act = pre * pre
        else:
            act = pre
        score = (act * W[None]).sum(axis=(1, 2))
        z = labels.astype(_XP) * score
        data = np.where(z > 0, z + np.log1p(np.exp(-z)), np.log1p(np.exp(z)))
        terms = np.concatenate([data, _XP(0.5) * _XP(lam) * P["weight"] ** 2])
        kinks = pre.ravel() if activation in ("relu", "abs") else np.empty(0, dtype=_XP)
        return terms, kinks
    res = E[h] + R[r] - E[t]
    dist = np.abs(res).sum(axis=1) if p == 1 else (res * res).sum(axis=1)
    hinge = _XP(gamma) + dist[labels > 0] - dist[labels < 0]
    terms = np.where(hinge > 0, hinge, _XP(0))
    kinks = np.concatenate([hinge, res.ravel()]) if p == 1 else hinge
    return terms, kinks


def finite_diff_check(model, triples, labels, h: float = 1e-6, tol: float = 1e-4,
                      lam: float = 0.001, gamma: float = 1.0, floor: float = 1e-6,
                      corrupt: bool = False) -> CheckReport:
    """Compare analytic gradients against central differences, component by component.

    Relative error is ``|a - n| / max(|a|, |n|, floor)``; the floor only matters
    for components that are zero up to rounding. Components whose perturbation
    moves a kink quantity (ReLU/abs pre-activation, L1 residual, hinge) lying
    within ``2h`` of zero, or flips its sign, are skipped. With ``corrupt`` the
    largest analytic component is scaled by 1.01 first, which the check must
    catch.
    """
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    labels = np.asarray(labels, dtype=np.float64)
    _, grads = loss_and_grad(model, triples, labels, lam, gamma)
    P = {name: block.astype(_XP) for name, block in param_blocks(model).items()}
    activation = model.params.activation if model.kind == "convkb" else None
    p = getattr(model, "p", None)

    def oracle():
        return _oracle_terms(model.kind, P, triples, labels, lam, gamma, activation, p)

    analytic: dict[str, list] = {}   # name -> [(index, value)]
    for name, ids, rows in grads.sparse_blocks():
        analytic[name] = [((int(i), j), rows[n, j]) for n, i in enumerate(ids) for j in range(rows.shape[1])]
    for name, g in grads.dense_blocks():
        analytic[name] = [(idx, g[idx]) for idx in np.ndindex(g.shape)]

    if corrupt:
        name, pos = max(((n, i) for n in analytic for i in range(len(analytic[n]))),
                        key=lambda ni: abs(analytic[ni[0]][ni[1]][1]))
        idx, val = analytic[name][pos]
        analytic[name][pos] = (idx, val * 1.01)

    _, kink0 = oracle()
    step = _XP(h)
    worst: dict[str, float] = {}
    checked = skipped = 0
    for name, comps in analytic.items():
        arr = P[name]
        worst[name] = 0.0
        for idx, a in comps:
            orig = arr[idx]
            arr[idx] = orig + step
            plus, kink_p = oracle()
            arr[idx] = orig - step
            minus, kink_m = oracle()
            arr[idx] = orig
            moved = kink_p != kink_m
            if np.any(np.sign(kink_p) != np.sign(kink_m)) or np.any(moved & (np.abs(kink0) < 2 * h)):
                skipped += 1
                continue
            # untouched terms cancel exactly
            num = float((plus - minus).sum() / (2 * step))
            err = abs(a - num) / max(abs(a), abs(num), floor)
            worst[name] = max(worst[name], err)
            checked += 1
    return CheckReport(worst, checked, skipped, tol)
