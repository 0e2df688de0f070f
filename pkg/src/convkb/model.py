"""Embedding tables, the TransE and ConvKB scorers, and their initializers.

All scores are implausibilities: lower means more likely to be a valid triple.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from convkb.errors import ConfigError

TNORMAL_STDDEV = 0.1
FIXED_FILTER = (0.1, 0.1, -0.1)

# caps the (batch, tau, k) pre-activation tensor built while scoring
_SCORE_CHUNK_ELEMS = 1 << 22


def relu(x):
    return np.maximum(x, 0.0)


def relu_grad(x):
    return (x > 0).astype(x.dtype)


def square_grad(x):
    return 2.0 * x


ACTIVATIONS = {
    "relu": (relu, relu_grad),
    "abs": (np.abs, np.sign),
    "square": (np.square, square_grad),
    "identity": (lambda x: x, np.ones_like),
}


def get_activation(name: str):
    try:
        return ACTIVATIONS[name]
    except KeyError:
        raise ConfigError(f"unknown activation {name!r}; choose from {sorted(ACTIVATIONS)}") from None


@dataclass(eq=False)
class EmbeddingStore:
    entity: np.ndarray    # (n_entities, k)
    relation: np.ndarray  # (n_relations, k)

    def __post_init__(self):
        self.entity = np.asarray(self.entity, dtype=np.float64)
        self.relation = np.asarray(self.relation, dtype=np.float64)
        if self.entity.ndim != 2 or self.relation.ndim != 2 or self.entity.shape[1] != self.relation.shape[1]:
            raise ConfigError(f"inconsistent embedding shapes {self.entity.shape} / {self.relation.shape}")

    @property
    def k(self) -> int:
        return self.entity.shape[1]

    def copy(self) -> EmbeddingStore:
        return EmbeddingStore(self.entity.copy(), self.relation.copy())

    def triple_matrix(self, triples: np.ndarray) -> np.ndarray:
        """Stack ``[v_h, v_r, v_t]`` as columns: shape (n, k, 3)."""
        triples = np.asarray(triples)
        return np.stack([self.entity[triples[:, 0]],
                         self.relation[triples[:, 1]],
                         self.entity[triples[:, 2]]], axis=-1)


@dataclass(eq=False)
class ConvKBParams:
    filters: np.ndarray  # (tau, 3)
    biases: np.ndarray   # (tau,)
    weight: np.ndarray   # (tau * k,), filter-major
    activation: str = "relu"

    def __post_init__(self):
        self.filters = np.asarray(self.filters, dtype=np.float64)
        self.biases = np.asarray(self.biases, dtype=np.float64)
        self.weight = np.asarray(self.weight, dtype=np.float64)
        get_activation(self.activation)
        if self.filters.ndim != 2 or self.filters.shape[1] != 3 or self.filters.shape[0] < 1:
            raise ConfigError(f"filters must have shape (tau, 3), got {self.filters.shape}")
        if self.biases.shape != (self.tau,):
            raise ConfigError(f"expected {self.tau} biases, got shape {self.biases.shape}")
        if self.weight.ndim != 1 or self.weight.size % self.tau:
            raise ConfigError(f"weight length {self.weight.size} is not a multiple of tau={self.tau}")

    @property
    def tau(self) -> int:
        return self.filters.shape[0]

    @property
    def k(self) -> int:
        return self.weight.size // self.tau

    def copy(self) -> ConvKBParams:
        return ConvKBParams(self.filters.copy(), self.biases.copy(), self.weight.copy(), self.activation)


def init_transe_embeddings(seed, k: int, n_entities: int, n_relations: int) -> EmbeddingStore:
    """Uniform draws from [-6/sqrt(k), 6/sqrt(k)]."""
    if k < 1 or n_entities < 1 or n_relations < 1:
        raise ConfigError("k and vocabulary sizes must be positive")
    rng = np.random.default_rng(seed)
    bound = 6.0 / np.sqrt(k)
    entity = rng.uniform(-bound, bound, size=(n_entities, k))
    relation = rng.uniform(-bound, bound, size=(n_relations, k))
    return EmbeddingStore(entity, relation)


def truncated_normal(rng, shape, stddev=TNORMAL_STDDEV) -> np.ndarray:
    """Zero-mean normal samples, redrawing any outside two standard deviations."""
    out = rng.normal(0.0, stddev, size=shape)
    bad = np.abs(out) > 2 * stddev
    while bad.any():
        out[bad] = rng.normal(0.0, stddev, size=int(bad.sum()))
        bad = np.abs(out) > 2 * stddev
    return out


def init_convkb_params(seed, k: int, tau: int, scheme: str = "tnormal", activation: str = "relu") -> ConvKBParams:
    if k < 1 or tau < 1:
        raise ConfigError("k and tau must be positive")
    rng = np.random.default_rng(seed)
    if scheme == "fixed":
        filters = np.tile(np.array(FIXED_FILTER), (tau, 1))
    elif scheme == "tnormal":
        filters = truncated_normal(rng, (tau, 3))
    else:
        raise ConfigError(f"unknown filter init {scheme!r}")
    weight = truncated_normal(rng, (tau * k,))
    return ConvKBParams(filters, np.zeros(tau), weight, activation)


def _as_triples(triples):
    arr = np.asarray(triples, dtype=np.int64)
    return arr.reshape(-1, 3), arr.ndim == 1


def score_transe(emb: EmbeddingStore, triples, p: int = 1):
    """``sum_i |h_i + r_i - t_i|^p``; a float for one triple, an array for many."""
    arr, single = _as_triples(triples)
    resid = emb.entity[arr[:, 0]] + emb.relation[arr[:, 1]] - emb.entity[arr[:, 2]]
    if p == 1:
        scores = np.abs(resid).sum(axis=1)
    elif p == 2:
        scores = np.square(resid).sum(axis=1)
    else:
        raise ConfigError(f"p must be 1 or 2, got {p}")
    return float(scores[0]) if single else scores


def feature_map(A, filt, bias: float, activation: str = "relu") -> np.ndarray:
    """One filter swept over the rows of a (k, 3) triple matrix."""
    A = np.asarray(A, dtype=np.float64)
    filt = np.asarray(filt, dtype=np.float64)
    if filt.shape != (3,):
        raise ConfigError(f"filter must have width 3, got shape {filt.shape}")
    g, _ = get_activation(activation)
    return g(A @ filt + bias)


def convkb_preactivations(params: ConvKBParams, A: np.ndarray) -> np.ndarray:
    """(n, k, 3) triple matrices -> (n, tau, k) pre-activations."""
    return np.einsum("nkc,fc->nfk", A, params.filters) + params.biases[None, :, None]


def score_convkb(params: ConvKBParams, emb: EmbeddingStore, triples):
    """``concat(g([v_h, v_r, v_t] * filters)) . w`` with feature maps concatenated filter-major."""
    if params.k != emb.k:
        raise ConfigError(f"weight length {params.weight.size} does not match tau*k = {params.tau}*{emb.k}")
    arr, single = _as_triples(triples)
    g, _ = get_activation(params.activation)
    weight = params.weight.reshape(params.tau, emb.k)
    chunk = max(1, _SCORE_CHUNK_ELEMS // (params.tau * emb.k))
    scores = np.empty(len(arr))
    for start in range(0, len(arr), chunk):
        part = arr[start:start + chunk]
        act = g(convkb_preactivations(params, emb.triple_matrix(part)))
        scores[start:start + chunk] = np.einsum("nfk,fk->n", act, weight)
    return float(scores[0]) if single else scores


class TransE:
    kind = "transe"

    def __init__(self, emb: EmbeddingStore, p: int = 1):
        if p not in (1, 2):
            raise ConfigError(f"p must be 1 or 2, got {p}")
        self.emb = emb
        self.p = p

    def score(self, triples):
        return score_transe(self.emb, triples, self.p)

    __call__ = score


class ConvKB:
    kind = "convkb"

    def __init__(self, emb: EmbeddingStore, params: ConvKBParams):
        if params.k != emb.k:
            raise ConfigError(f"ConvKB weight length {params.weight.size} != tau*k = {params.tau}*{emb.k}")
        self.emb = emb
        self.params = params

    def score(self, triples):
        return score_convkb(self.params, self.emb, triples)

    __call__ = score

    @classmethod
    def transe_equivalent(cls, emb: EmbeddingStore, p: int = 1) -> ConvKB:
        """Single [1, 1, -1] filter, zero bias, all-ones weight: scores equal TransE's."""
        activation = {1: "abs", 2: "square"}[p]
        params = ConvKBParams(np.array([[1.0, 1.0, -1.0]]), np.zeros(1), np.ones(emb.k), activation)
        return cls(emb, params)
