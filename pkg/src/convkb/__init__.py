"""ConvKB and TransE knowledge-base completion in plain numpy."""

from convkb.data import KnowledgeBase, RelationStats, bernoulli_stats, build_kb, load_kb, parse_triples
from convkb.errors import (
    CheckpointError,
    ConfigError,
    ConvKBError,
    DataError,
    DuplicateTripleError,
    EvaluationError,
    NumericalError,
    ParseError,
    SamplingError,
)
from convkb.evaluation import EvalConfig, RankingReport, evaluate, rank_triple
from convkb.model import (
    ConvKB,
    ConvKBParams,
    EmbeddingStore,
    TransE,
    feature_map,
    init_convkb_params,
    init_transe_embeddings,
    score_convkb,
    score_transe,
)
from convkb.training import TrainConfig, Trainer, build_model, finite_diff_check

__version__ = "0.1.0"
