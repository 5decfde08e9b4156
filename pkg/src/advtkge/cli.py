"""Command-line entry point: ``advtkge <command> ...``.

Exit codes: 0 success, 1 usage error, 2 data or configuration error,
3 numeric abort during training.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .config import RunConfig
from .dataset import DataError, decode, load_prepared, prepare, save_prepared
from .evaluation import RankMetrics, evaluate_split
from .generator import uniform_corrupt
from .numerics import NumericError, pca_project, rng_stream
from .trainer import TrainingAborted, TrainingData, trace_csv, train

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

CHECKPOINT_NAME = "checkpoint.bin"
TRACE_NAME = "trace.csv"
CONFIG_NAME = "effective.cfg"

log = logging.getLogger("advtkge")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _load_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if getattr(args, "config", None) else RunConfig()
    return RunConfig.from_overrides(getattr(args, "set", None) or [], cfg)


def _pick(path, fallback, what):
    chosen = path or fallback
    if not chosen:
        raise UsageError(f"no {what} given (pass it as an argument or set it in the config)")
    return Path(chosen)


def _write(path: Path | None, text: str):
    if path is None:
        sys.stdout.write(text)
    else:
        path.write_text(text, encoding="utf-8")


# -- commands --------------------------------------------------------------------

def cmd_prepare(args) -> int:
    cfg = _load_config(args)
    raw = _pick(args.raw_dir, cfg.raw_dir, "raw dataset directory")
    out = _pick(args.out_dir, cfg.prepared_dir, "output directory")
    ds = prepare(raw, cfg.bucketing, cfg.min_threshold, cfg.target_buckets)
    save_prepared(ds, out)
    m = ds.metadata
    log.info("prepared %s: %d entities, %d relations, %d buckets", out, m["n_entities"], m["n_relations"], m["n_buckets"])
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _load_config(args)
    if args.filter_false_negatives:
        cfg = cfg.updated(filter_false_negatives=True)
    prep = _pick(args.prepared_dir, cfg.prepared_dir, "prepared dataset directory")
    out = _pick(args.out_dir, cfg.output_dir, "output directory")
    ds = load_prepared(prep)
    data = TrainingData(
        ds.splits["train"], ds.vocab.n_entities, ds.vocab.n_relations, ds.n_buckets, ds.splits["valid"], ds.filter_index()
    )
    out.mkdir(parents=True, exist_ok=True)
    (out / CONFIG_NAME).write_text(cfg.dumps(), encoding="utf-8")
    try:
        state = train(data, cfg.train_config())
    except TrainingAborted as exc:
        _save_state(out, exc.state, cfg)
        log.error("training aborted: %s (last good state saved)", exc)
        return EXIT_NUMERIC
    _save_state(out, state, cfg)
    return EXIT_OK


def _save_state(out: Path, state, cfg: RunConfig):
    model, generator = state.final()
    meta = {"best_epoch": state.best_epoch, "best_mrr": state.best_mrr, "epochs_run": state.epoch, "config": cfg.dumps()}
    ckpt.save(out / CHECKPOINT_NAME, model, generator, meta)
    (out / TRACE_NAME).write_text(trace_csv(state.trace), encoding="utf-8")


def cmd_eval(args) -> int:
    cp = ckpt.load(args.checkpoint)
    ds = load_prepared(args.prepared_dir)
    cp.check_compatible(ds.vocab.n_entities, ds.vocab.n_relations, ds.n_buckets)
    if args.split not in ds.splits:
        raise UsageError(f"unknown split {args.split!r}")
    quads = ds.splits[args.split]
    fidx = None if args.raw else ds.filter_index()
    metrics, ranks = evaluate_split(cp.model, quads, fidx, workers=args.workers, return_ranks=True)
    _write(args.out, f"split,{RankMetrics.CSV_HEADER}\n{args.split},{metrics.csv_row()}\n")
    if args.ranks is not None:
        lines = ["slot\thead\trelation\ttail\tbucket\trank"]
        for slot in ("head", "tail"):
            for q, r in zip(quads.tolist(), ranks[slot].tolist()):
                lines.append("\t".join([slot, *map(str, q), repr(r)]))
        args.ranks.write_text("\n".join(lines) + "\n", encoding="utf-8")
    log.info("\n%s", metrics.table())
    return EXIT_OK


SAMPLE_HEADER = "\t".join(
    f"{kind}_{col}" for kind in ("positive", "uniform", "generator") for col in ("head", "relation", "tail", "time")
)


def cmd_sample_negatives(args) -> int:
    if args.n < 0:
        raise UsageError("n must be >= 0")
    cp = ckpt.load(args.checkpoint)
    if cp.generator is None:
        raise DataError(
            "checkpoint has no generator section; it was trained in baseline mode, so only uniform negatives exist"
        )
    ds = load_prepared(args.prepared_dir)
    cp.check_compatible(ds.vocab.n_entities, ds.vocab.n_relations, ds.n_buckets)
    quads = ds.splits[args.split]
    rng = rng_stream(args.seed, "sample-negatives")
    lines = [SAMPLE_HEADER]
    if args.n > 0:
        if len(quads) == 0:
            raise DataError(f"split {args.split!r} is empty")
        pos = quads[rng.integers(0, len(quads), size=args.n)]
        corrupt_head = rng.random(args.n) < 0.5
        uni, _ = uniform_corrupt(pos, ds.vocab.n_entities, rng, corrupt_head)
        batch = cp.generator.generate(pos, args.temperature, args.candidates, rng, corrupt_head=corrupt_head)
        gen = batch.negatives()
        for row in zip(decode(pos, ds.vocab, ds.bucketing), decode(uni, ds.vocab, ds.bucketing), decode(gen, ds.vocab, ds.bucketing)):
            lines.append("\t".join(cell for fact in row for cell in fact))
    _write(args.out, "\n".join(lines) + "\n")
    return EXIT_OK


def _parse_list(spec: str | None) -> list[str] | None:
    if spec is None:
        return None
    if spec.startswith("@"):
        text = Path(spec[1:]).read_text(encoding="utf-8")
        return [line.strip() for line in text.splitlines() if line.strip()]
    return [s.strip() for s in spec.split(",") if s.strip()]


def cmd_export_embeddings(args) -> int:
    if args.pca_k not in (0, 2, 3):
        raise UsageError("pca-k must be 0, 2 or 3")
    cp = ckpt.load(args.checkpoint)
    ds = load_prepared(args.prepared_dir)
    cp.check_compatible(ds.vocab.n_entities, ds.vocab.n_relations, ds.n_buckets)
    names = _parse_list(args.entities)
    if names is None:
        ids = list(range(ds.vocab.n_entities))
    else:
        ids = []
        for name in names:
            if name in ds.vocab.entity_ids:
                ids.append(ds.vocab.entity_ids[name])
            else:
                log.warning("unknown entity %r skipped", name)
    buckets = [int(b) for b in _parse_list(args.buckets)] if args.buckets else None
    if buckets is not None:
        bad = [b for b in buckets if not 0 <= b < ds.n_buckets]
        if bad:
            raise UsageError(f"bucket ids out of range: {bad}")
    timed = buckets is not None and cp.model.time_aware_vectors
    if timed:
        ent = np.repeat(np.asarray(ids, dtype=np.int64), len(buckets))
        tt = np.tile(np.asarray(buckets, dtype=np.int64), len(ids))
    else:
        if buckets is not None:
            log.warning("model %s has static entity vectors; bucket list ignored", cp.kind.tag)
        ent = np.asarray(ids, dtype=np.int64)
        tt = None
    vectors = cp.model.entity_vectors(ent, tt) if len(ent) else np.zeros((0, cp.model.entity_width))
    if args.pca_k and len(ent):
        vectors = pca_project(vectors, args.pca_k)
    lines = []
    for i, e in enumerate(ent.tolist()):
        label = ds.vocab.entities[e]
        cells = [label] + ([str(int(tt[i]))] if timed else []) + [repr(float(v)) for v in vectors[i]]
        lines.append("\t".join(cells))
    _write(args.out, "".join(line + "\n" for line in lines))
    return EXIT_OK


# -- wiring --------------------------------------------------------------------

def _add_config_args(p):
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="advtkge", description="Temporal KG embeddings with adversarial negative sampling.")
    parser.add_argument("-q", "--quiet", action="store_true", help="suppress progress output")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("prepare", help="parse a raw dataset into a prepared directory")
    p.add_argument("raw_dir", nargs="?")
    p.add_argument("out_dir", nargs="?")
    _add_config_args(p)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("train", help="train a model; writes checkpoint, trace and effective config")
    p.add_argument("prepared_dir", nargs="?")
    p.add_argument("out_dir", nargs="?")
    _add_config_args(p)
    p.add_argument(
        "--filter-false-negatives", action="store_true", help="mask generator candidates that form known training facts"
    )
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="filtered link-prediction metrics as CSV")
    p.add_argument("checkpoint")
    p.add_argument("prepared_dir")
    p.add_argument("--split", default="test")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", type=Path)
    p.add_argument("--ranks", type=Path, help="also write per-query ranks as TSV")
    p.add_argument("--raw", action="store_true", help="debug: unfiltered ranking")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("sample-negatives", help="uniform and generator negatives side by side (TSV)")
    p.add_argument("checkpoint")
    p.add_argument("prepared_dir")
    p.add_argument("-n", type=int, default=10)
    p.add_argument("--split", default="train", choices=("train", "valid", "test"))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--temperature", type=float, default=0.5)
    p.add_argument("--candidates", type=int, default=512)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_sample_negatives)

    p = sub.add_parser("export-embeddings", help="entity vectors as TSV, optionally PCA-projected")
    p.add_argument("checkpoint")
    p.add_argument("prepared_dir")
    p.add_argument("--entities", help="comma-separated names, or @file with one name per line")
    p.add_argument("--buckets", help="bucket ids for time-aware vectors (comma list or @file)")
    p.add_argument("--pca-k", type=int, default=0)
    p.add_argument("--out", type=Path)
    p.set_defaults(func=cmd_export_embeddings)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(message)s"))
    log.handlers[:] = [handler]
    log.setLevel(logging.WARNING if args.quiet else logging.INFO)
    log.propagate = False
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"advtkge: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TrainingAborted, NumericError) as exc:
        print(f"advtkge: numeric abort: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except DataError as exc:
        print(f"advtkge: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (OSError, ValueError) as exc:
        print(f"advtkge: data error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
