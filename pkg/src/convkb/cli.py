"""Command-line entry point: train, eval, sweep, gradcheck, stats."""

from __future__ import annotations

import argparse
import itertools
import logging
import sys
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from convkb.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from convkb.data import SPLITS, KnowledgeBase, load_kb, split_stats
from convkb.errors import ConfigError, ConvKBError, DataError, NumericalError
from convkb.evaluation import EvalConfig, evaluate, write_ranks
from convkb.model import ConvKB, ConvKBParams, EmbeddingStore, TransE
from convkb.training import TrainConfig, Trainer, build_model, finite_diff_check

logger = logging.getLogger("convkb")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

# grids searched for the two benchmark datasets
PRESET_GRIDS = {
    "transe": {"k": [50, 100], "lr": [1e-4, 5e-4, 1e-3, 5e-3], "p": [1, 2], "gamma": [1.0, 3.0, 5.0, 7.0]},
    "convkb": {"lr": [5e-6, 1e-5, 5e-5, 1e-4, 5e-4], "tau": [50, 100, 200, 400, 500],
               "filter_init": ["tnormal", "fixed"]},
}

GRADCHECK_TOL = {"relu": 1e-4, "abs": 1e-4, "square": 1e-6, "identity": 1e-6}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_hparams(p: argparse.ArgumentParser, multi: bool = False):
    """Hyperparameter flags; in sweep mode each takes a comma-separated list."""

    def typ(base):
        if not multi:
            return base

        def parse(text):
            try:
                return [base(x) for x in text.split(",") if x]
            except ValueError as e:
                raise argparse.ArgumentTypeError(str(e)) from None
        return parse

    p.add_argument("--model", type=typ(str), default=None, help="transe or convkb")
    p.add_argument("--k", type=typ(int), default=None, help="embedding size (default 50)")
    p.add_argument("--tau", type=typ(int), default=None, help="number of filters (default 50)")
    p.add_argument("--p", type=typ(int), default=None, help="TransE norm, 1 or 2")
    p.add_argument("--gamma", type=typ(float), default=None, help="TransE margin")
    p.add_argument("--lambda", dest="lam", type=typ(float), default=None, help="L2 on the weight vector (default 0.001)")
    p.add_argument("--lr", type=typ(float), default=None)
    p.add_argument("--batch", dest="batch_size", type=typ(int), default=None, help="default 256")
    p.add_argument("--epochs", type=typ(int), default=None, help="default 3000 (TransE) / 200 (ConvKB)")
    p.add_argument("--neg-ratio", dest="neg_ratio", type=typ(int), default=None, help="default 1")
    p.add_argument("--filter-init", dest="filter_init", type=typ(str), default=None, help="tnormal or fixed")
    p.add_argument("--activation", type=typ(str), default=None, help="relu (default), abs, square, identity")
    p.add_argument("--normalize", action=argparse.BooleanOptionalAction, default=None,
                   help="unit-norm entity rows before each batch (default: on for TransE only)")
    p.add_argument("--freeze-unseen", dest="freeze_unseen", action=argparse.BooleanOptionalAction, default=None,
                   help="keep entities absent from train at their initial values (default on)")
    p.add_argument("--init-from", dest="init_from", default=None, help="checkpoint whose embeddings seed this run")


_HPARAMS = ("model", "k", "tau", "p", "gamma", "lam", "lr", "batch_size", "epochs", "neg_ratio",
            "filter_init", "activation", "normalize", "freeze_unseen")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="convkb", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="train a model and write a checkpoint")
    p.add_argument("--data", required=True, help="directory with train.txt, valid.txt, test.txt")
    _add_hparams(p)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--log", default=None, help="loss log TSV (default: <out>.loss.tsv)")

    p = sub.add_parser("eval", help="rank the test (or valid) split with a checkpoint")
    p.add_argument("--data", required=True)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--setting", choices=("filtered", "raw"), default="filtered")
    p.add_argument("--split", choices=("test", "valid"), default="test")
    p.add_argument("--ranks", default=None, help="write per-triple ranks to this TSV")
    p.add_argument("--header", action="store_true", help="print a column header line first")

    p = sub.add_parser("sweep", help="grid search selected by validation Hits@10")
    p.add_argument("--data", required=True)
    _add_hparams(p, multi=True)
    p.add_argument("--preset-grid", choices=sorted(PRESET_GRIDS), default=None,
                   help="start from the benchmark search grid for this model; explicit flags override")
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--jobs", type=int, default=1, help="grid points trained in parallel")
    p.add_argument("--out", default=None, help="TSV path (default stdout)")

    p = sub.add_parser("gradcheck", help="finite-difference check of both models' gradients")
    p.add_argument("--instances", type=int, default=100)
    p.add_argument("--activation", choices=sorted(GRADCHECK_TOL), default="relu",
                   help="ConvKB activation; TransE uses p=1 for relu/abs and p=2 otherwise")
    p.add_argument("--model", choices=("both", "transe", "convkb"), default="both")
    p.add_argument("--step", type=float, default=1e-6)
    p.add_argument("--tol", type=float, default=None, help="default 1e-4 (kinked) or 1e-6 (smooth)")
    p.add_argument("--corrupt", action="store_true", help="perturb one analytic component (must fail)")
    p.add_argument("--seed", type=int, default=7)

    p = sub.add_parser("stats", help="vocabulary and split sizes")
    p.add_argument("--data", required=True)
    return parser


# ---------------------------------------------------------------------------


def _config_from_args(args, kb_init: Checkpoint | None = None) -> TrainConfig:
    values = {name: getattr(args, name) for name in _HPARAMS}
    if kb_init is not None and values.get("k") is None:
        values["k"] = kb_init.model.emb.k
    values = {key: v for key, v in values.items() if v is not None}
    return TrainConfig(seed=args.seed, **values)


def _init_checkpoint(path, kb: KnowledgeBase) -> Checkpoint:
    init = load_checkpoint(path)
    init.check_vocab(kb)
    return init


def train_run(kb: KnowledgeBase, config: TrainConfig, init: Checkpoint | None = None, log=None):
    """Train from scratch (or from ``init``'s embeddings); returns (checkpoint, history)."""
    model = build_model(config, kb, init.model.emb if init is not None else None)
    trainer = Trainer(model, kb, config)
    history = trainer.fit(callback=log)
    ckpt = Checkpoint(config, model, kb.entities, kb.relations, trainer.adam, trainer.epoch)
    return ckpt, history


def cmd_train(args) -> int:
    kb = load_kb(args.data)
    init = _init_checkpoint(args.init_from, kb) if args.init_from else None
    config = _config_from_args(args, init)
    log_path = args.log or f"{args.out}.loss.tsv"
    with open(log_path, "w", encoding="utf-8") as log:
        log.write("epoch\tmean_loss\n")

        def on_epoch(stats):
            log.write(f"{stats.epoch}\t{stats.mean_loss!r}\n")
            log.flush()
            logger.info("epoch %d loss %.6f (%.2fs)", stats.epoch, stats.mean_loss, stats.seconds)

        ckpt, _ = train_run(kb, config, init, on_epoch)
    save_checkpoint(args.out, ckpt)
    return EXIT_OK


def cmd_eval(args) -> int:
    kb = load_kb(args.data)
    ckpt = load_checkpoint(args.checkpoint)
    ckpt.check_vocab(kb)
    report = evaluate(ckpt.model, kb, EvalConfig(args.setting), split=args.split)
    if args.header:
        print(report.header())
    print(report.line())
    if args.ranks:
        write_ranks(args.ranks, report, kb.split(args.split), kb)
    return EXIT_OK


def sweep_grid(args) -> list[dict]:
    grid: dict[str, list] = {}
    if args.preset_grid:
        grid.update(PRESET_GRIDS[args.preset_grid])
        grid.setdefault("model", [args.preset_grid])
    for name in _HPARAMS:
        value = getattr(args, name)
        if value is None:
            continue
        grid[name] = value if isinstance(value, list) else [value]
    if any(len(v) == 0 for v in grid.values()):
        raise ConfigError("empty grid")
    names = list(grid)
    return [dict(zip(names, combo)) for combo in itertools.product(*(grid[n] for n in names))]


def _sweep_point(data_dir, point, seed, init_from):
    kb = load_kb(data_dir)
    init = _init_checkpoint(init_from, kb) if init_from else None
    if init is not None:
        point = {**point}
        point.setdefault("k", init.model.emb.k)
    config = TrainConfig(seed=seed, **point)
    ckpt, _ = train_run(kb, config, init)
    report = evaluate(ckpt.model, kb, EvalConfig("filtered"), split="valid")
    return report.mr, report.mrr, report.hits_at[10]


def select_best(rows: list[dict]) -> int:
    """Index of the highest Hits@10; ties go to lower MR, then the earlier row."""
    return min(range(len(rows)), key=lambda i: (-rows[i]["hits10"], rows[i]["mr"], i))


def cmd_sweep(args) -> int:
    points = sweep_grid(args)
    if not points:
        raise ConfigError("empty grid")
    init_from = args.init_from
    for point in points:
        TrainConfig(seed=args.seed, **point)  # fail fast on a bad grid value
    if args.jobs > 1:
        with ProcessPoolExecutor(args.jobs) as pool:
            futures = [pool.submit(_sweep_point, args.data, pt, args.seed, init_from) for pt in points]
            results = [f.result() for f in futures]
    else:
        results = [_sweep_point(args.data, pt, args.seed, init_from) for pt in points]

    names = sorted({n for pt in points for n in pt}, key=_HPARAMS.index)
    rows = [dict(pt, mr=mr, mrr=mrr, hits10=h10) for pt, (mr, mrr, h10) in zip(points, results)]
    best = select_best(rows)
    lines = ["\t".join(names + ["MR", "MRR", "H@10"])]
    for row in rows:
        lines.append("\t".join([str(row[n]) for n in names]
                               + [f"{row['mr']!r}", f"{row['mrr']!r}", f"{row['hits10']!r}"]))
    table = "\n".join(lines) + "\n"
    if args.out:
        with open(args.out, "w", encoding="utf-8") as f:
            f.write(table)
    else:
        sys.stdout.write(table)
    best_desc = " ".join(f"--{n.replace('_', '-')} {rows[best][n]}" for n in names)
    print(f"best\t{best_desc}\tH@10={100 * rows[best]['hits10']:.2f}")
    return EXIT_OK


def random_instance(rng: np.random.Generator, kind: str, k: int, tau: int, activation: str,
                    n_entities: int = 8, n_relations: int = 3, n_pairs: int = 2):
    """Random model plus a labelled batch: ``n_pairs`` valid/corrupted pairs, interleaved."""
    emb = EmbeddingStore(rng.normal(0, 0.5, (n_entities, k)), rng.normal(0, 0.5, (n_relations, k)))
    if kind == "convkb":
        model = ConvKB(emb, ConvKBParams(rng.normal(0, 0.5, (tau, 3)), rng.normal(0, 0.5, tau),
                                         rng.normal(0, 0.5, tau * k), activation))
    else:
        model = TransE(emb, 1 if activation in ("relu", "abs") else 2)
    triples = np.stack([rng.integers(n_entities, size=2 * n_pairs), rng.integers(n_relations, size=2 * n_pairs),
                        rng.integers(n_entities, size=2 * n_pairs)], axis=1)
    labels = np.tile([1.0, -1.0], n_pairs)
    return model, triples, labels


def run_gradcheck(instances: int = 100, activation: str = "relu", model: str = "both", seed: int = 7,
                  step: float = 1e-6, tol: float | None = None, corrupt: bool = False):
    """Yield (label, CheckReport) for each random instance."""
    tol = GRADCHECK_TOL[activation] if tol is None else tol
    kinds = ("transe", "convkb") if model == "both" else (model,)
    rng = np.random.default_rng(seed)
    shapes = list(itertools.product((2, 4, 8), (1, 3, 5)))
    for i in range(instances):
        kind = kinds[i % len(kinds)]
        k, tau = shapes[i % len(shapes)]
        inst, triples, labels = random_instance(rng, kind, k, tau, activation)
        report = finite_diff_check(inst, triples, labels, h=step, tol=tol, lam=0.001, gamma=10.0, corrupt=corrupt)
        label = f"{kind}\tk={k}" + (f"\ttau={tau}\t{activation}" if kind == "convkb" else f"\tp={inst.p}")
        yield label, report


def cmd_gradcheck(args) -> int:
    worst, failures, total = 0.0, 0, 0
    for label, report in run_gradcheck(args.instances, args.activation, args.model, args.seed,
                                       args.step, args.tol, args.corrupt):
        total += 1
        worst = max(worst, report.worst)
        if not report.passed:
            failures += 1
            print(f"FAIL\t{label}\tmax_rel_err={report.worst:.3e}\ttol={report.tol:.0e}")
    status = "PASS" if failures == 0 else "FAIL"
    print(f"{status}\t{total - failures}/{total} instances\tmax_rel_err={worst:.3e}")
    return EXIT_OK if failures == 0 else EXIT_NUMERIC


def cmd_stats(args) -> int:
    kb = load_kb(args.data)
    if all(len(kb.split(s)) == 0 for s in SPLITS):
        logger.warning("dataset %s is empty", args.data)
    for row in split_stats(kb):
        print("\t".join(str(x) for x in row))
    return EXIT_OK


COMMANDS = {"train": cmd_train, "eval": cmd_eval, "sweep": cmd_sweep, "gradcheck": cmd_gradcheck, "stats": cmd_stats}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA
    except NumericalError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except ConvKBError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
