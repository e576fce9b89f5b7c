"""Command-line entry point.

Each subcommand reads its inputs, writes its outputs, prints one JSON
summary line on stdout and logs to stderr. Exit codes: 0 ok, 1 usage
error, 2 data/contract error, 3 external service failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import dataclass, fields
from datetime import date
from pathlib import Path
from typing import Sequence

import numpy as np

from . import clients
from .coi import CandidatePool, coi_filter, recall_candidates
from .corpus import (
    Corpus, Paper, author_from_json, author_to_json, disambiguate_authors, ingest_papers,
    load_normalized_papers, normalize_space, paper_to_json, read_jsonl_lines,
)
from .errors import DataError, RevrankError, TransportError
from .evaluate import benchmark_stats, evaluate_scores, load_benchmark, report_tsv
from .jsonl import dumps, read_jsonl, write_jsonl
from .pipeline import (
    SCORERS, ScoringContext, build_indexes, build_profiles, build_stores, load_index_dir,
    profile_window, save_index_dir, score_benchmark, training_embeddings,
)
from .prefgen import generate_training_set, load_triplets, save_triplets
from .profile import ReviewerProfile
from .train import AdapterModel, Batch, TrainConfig, grad_check, train_adapter, write_history

log = logging.getLogger("revrank")

COMMANDS = ("ingest", "disambiguate", "profile", "index", "recall", "prefgen", "train",
            "rank", "eval", "stats", "gradcheck")


@dataclass
class PipelineConfig:
    # paths
    raw: str | None = None
    corpus: str | None = None
    authors: str | None = None
    profiles: str | None = None
    index_dir: str | None = None
    triplets: str | None = None
    model: str | None = None
    history: str | None = None
    benchmark: str | None = None
    benchmark_papers: str | None = None
    report: str | None = None
    # clients
    backend: str = "stub"
    embed_dim: int = 64
    # knobs
    recall_threshold: float | None = None
    coi: str = "on"
    k1: float = 1.2
    b: float = 0.75
    n_keywords: int = 5
    reference_date: str | None = None
    budget: int = 3000
    rank: int = 16
    temperature: float = 0.0634
    lambda_ce: float = 0.915
    lr: float = 1e-3
    epochs: int = 15
    batch: int = 4
    seed: int = 622
    patience: int = 6
    warmup: float = 0.05
    scorer: str = "trained-adapter"
    query: str | None = None
    top_k: int = 10
    scale_max: int = 5
    states: int = 50
    epsilon: float = 1e-5


PATH_FIELDS = frozenset({"raw", "corpus", "authors", "profiles", "index_dir", "triplets", "model",
                         "history", "benchmark", "benchmark_papers", "report"})


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _provenance(cfg: PipelineConfig, command: str) -> dict:
    """Effective settings echoed into artifacts. Paths are left out so that
    identical runs in different directories write identical bytes."""
    knobs = {f.name: getattr(cfg, f.name) for f in fields(cfg) if f.name not in PATH_FIELDS}
    return {"command": command, "config": knobs}


def _need(cfg: PipelineConfig, *names: str) -> None:
    missing = [n for n in names if getattr(cfg, n) in (None, "")]
    if missing:
        raise UsageError("missing required setting(s): " + ", ".join("--" + n.replace("_", "-") for n in missing))


def _need_files(cfg: PipelineConfig, *names: str) -> None:
    _need(cfg, *names)
    for n in names:
        p = Path(getattr(cfg, n))
        if n == "index_dir":
            if not p.is_dir():
                raise DataError(f"--index-dir {p} is not a directory")
        elif not p.is_file():
            raise DataError(f"--{n.replace('_', '-')} {p} does not exist")


def _emit(summary: dict) -> None:
    print(dumps(summary))


# -- clients -----------------------------------------------------------------


def _client_config() -> clients.ClientConfig:
    return clients.ClientConfig.from_env()


def make_embedder(cfg: PipelineConfig):
    if cfg.backend == "stub":
        return clients.StubEmbedder(cfg.embed_dim)
    return clients.HttpEmbedder(_client_config())


def make_keyword_client(cfg: PipelineConfig):
    if cfg.backend == "stub":
        return clients.StubKeywordExtractor()
    return clients.HttpKeywordExtractor(_client_config())


def make_verifier(cfg: PipelineConfig):
    if cfg.backend == "stub":
        return clients.StubVerifier()
    return clients.HttpVerifier(_client_config())


# -- loaders -----------------------------------------------------------------


def _load_corpus(cfg: PipelineConfig) -> Corpus:
    _need_files(cfg, "corpus", "authors")
    papers, _ = load_normalized_papers(cfg.corpus)
    authors = [author_from_json(row) for row in read_jsonl(cfg.authors)]
    return Corpus(papers, authors)


def _load_profiles(cfg: PipelineConfig) -> dict[str, ReviewerProfile]:
    _need_files(cfg, "profiles")
    return {p.author_id: p for p in (ReviewerProfile.from_json(r) for r in read_jsonl(cfg.profiles))}


def _window(cfg: PipelineConfig, corpus: Corpus):
    ref = date.fromisoformat(cfg.reference_date) if cfg.reference_date else None
    return profile_window(corpus, ref)


def _context(cfg: PipelineConfig, with_model: bool) -> ScoringContext:
    corpus = _load_corpus(cfg)
    profiles = _load_profiles(cfg)
    _need_files(cfg, "index_dir")
    paper_index, profile_index, paper_store, profile_store = load_index_dir(cfg.index_dir)
    model = None
    if with_model:
        _need_files(cfg, "model")
        model = AdapterModel.load(cfg.model)
    return ScoringContext(corpus, profiles, paper_index, profile_index, paper_store, profile_store,
                          make_embedder(cfg), _window(cfg, corpus), model)


def _benchmark_papers(cfg: PipelineConfig) -> dict[str, Paper]:
    if not cfg.benchmark_papers:
        return {}
    out = {}
    for row in read_jsonl(cfg.benchmark_papers):
        pid = str(row["id"])
        out[pid] = Paper(pid, normalize_space(row.get("title")), normalize_space(row.get("abstract")),
                         (), date.min)
    return out


# -- commands ----------------------------------------------------------------


def cmd_ingest(cfg):
    _need_files(cfg, "raw")
    _need(cfg, "corpus")
    result = ingest_papers(read_jsonl_lines(cfg.raw))
    for rej in result.rejected:
        log.info("rejected record %d (id=%s): %s", rej.index, rej.record_id, rej.reason)
    mentions = {m.mention_id: m for m in result.mentions}
    write_jsonl(cfg.corpus, (paper_to_json(p, mentions) for p in result.papers), _provenance(cfg, "ingest"))
    return {"stage": "ingest", "papers": len(result.papers), "mentions": len(result.mentions),
            "rejected": result.reject_count, "superseded": result.superseded}


def cmd_disambiguate(cfg):
    _need_files(cfg, "corpus")
    _need(cfg, "authors")
    _, mentions = load_normalized_papers(cfg.corpus)
    authors = disambiguate_authors(mentions, make_verifier(cfg))
    write_jsonl(cfg.authors, (author_to_json(a) for a in authors), _provenance(cfg, "disambiguate"))
    return {"stage": "disambiguate", "mentions": len(mentions), "authors": len(authors)}


def cmd_profile(cfg):
    corpus = _load_corpus(cfg)
    _need(cfg, "profiles")
    window = _window(cfg, corpus)
    profiles, cold = build_profiles(corpus, make_keyword_client(cfg), cfg.n_keywords, window)
    write_jsonl(cfg.profiles, (profiles[a].to_json() for a in sorted(profiles)), _provenance(cfg, "profile"))
    if cold:
        log.info("%d author(s) without papers in %s..%s were not profiled", len(cold), *window)
    return {"stage": "profile", "profiles": len(profiles), "cold_start": len(cold),
            "window": [window[0].isoformat(), window[1].isoformat()]}


def cmd_index(cfg):
    corpus = _load_corpus(cfg)
    profiles = _load_profiles(cfg)
    _need(cfg, "index_dir")
    paper_index, profile_index = build_indexes(corpus, profiles, cfg.k1, cfg.b)
    paper_store, profile_store = build_stores(corpus, profiles, make_embedder(cfg))
    save_index_dir(cfg.index_dir, paper_index, profile_index, paper_store, profile_store,
                   _provenance(cfg, "index"))
    return {"stage": "index", "papers": len(paper_index), "profiles": len(profile_index),
            "dim": paper_store.dim}


def _pool(cfg, ctx: ScoringContext, paper: Paper, coi: bool | None = None) -> CandidatePool:
    if cfg.recall_threshold is not None:
        pool = recall_candidates(ctx.paper_store, ctx.corpus, paper.id, cfg.recall_threshold,
                                 ctx.query_vector(paper))
        pool = CandidatePool(pool.query_paper_id, frozenset(c for c in pool.candidates if c in ctx.profiles),
                             {c: p for c, p in pool.provenance.items() if c in ctx.profiles})
    else:
        pool = CandidatePool(paper.id, frozenset(ctx.profiles), {})
    if coi is None:
        coi = cfg.coi == "on"
    if coi and paper.id in ctx.corpus.papers:
        pool = coi_filter(pool, ctx.corpus.paper_authors(paper.id), ctx.corpus.graph)
    return pool


def _query_paper(cfg, ctx) -> Paper:
    _need(cfg, "query")
    paper = ctx.corpus.papers.get(cfg.query) or _benchmark_papers(cfg).get(cfg.query)
    if paper is None:
        raise DataError(f"unknown query paper {cfg.query}")
    return paper


def cmd_recall(cfg):
    if cfg.recall_threshold is None:
        raise UsageError("recall needs an explicit --recall-threshold")
    ctx = _context(cfg, with_model=False)
    paper = _query_paper(cfg, ctx)
    pool = _pool(cfg, ctx, paper)
    out = {"stage": "recall", **pool.to_json()}
    if cfg.report:
        Path(cfg.report).write_text(dumps(out) + "\n", encoding="utf-8")
    return out


def cmd_prefgen(cfg):
    ctx = _context(cfg, with_model=False)
    _need(cfg, "triplets")
    holdout = set()
    if cfg.benchmark:
        holdout = {r.paper_id for r in load_benchmark(cfg.benchmark, scale_max=cfg.scale_max)}
    pools = None
    if cfg.recall_threshold is not None:
        # generate_training_set applies COI itself
        pools = {pid: _pool(cfg, ctx, p, coi=False).candidates
                 for pid, p in ctx.corpus.papers.items() if pid not in holdout}
    triplets = generate_training_set(ctx.corpus, ctx.profiles, ctx.paper_index, ctx.profile_index,
                                     cfg.budget, cfg.seed, holdout, pools)
    save_triplets(cfg.triplets, triplets, _provenance(cfg, "prefgen"))
    views = {}
    for t in triplets:
        views[t.view] = views.get(t.view, 0) + 1
    return {"stage": "prefgen", "triplets": len(triplets), "holdout": len(holdout), **views}


def cmd_train(cfg):
    _need_files(cfg, "triplets", "index_dir")
    _need(cfg, "model")
    triplets = load_triplets(cfg.triplets)
    _, _, paper_store, profile_store = load_index_dir(cfg.index_dir)
    model = AdapterModel.init(paper_store.dim, cfg.rank, cfg.temperature, cfg.lambda_ce, cfg.seed)
    tc = TrainConfig(learning_rate=cfg.lr, epochs=cfg.epochs, batch_size=cfg.batch,
                     warmup_fraction=cfg.warmup, patience=cfg.patience, seed=cfg.seed)
    best, history = train_adapter(model, triplets, training_embeddings(paper_store, profile_store), tc)
    best.save(cfg.model)
    if cfg.history:
        write_history(cfg.history, history)
    best_val = min(h["val_loss"] for h in history)
    return {"stage": "train", "triplets": len(triplets), "epochs_run": history[-1]["epoch"],
            "val_loss_initial": history[0]["val_loss"], "val_loss_best": best_val}


def cmd_rank(cfg):
    if cfg.scorer not in SCORERS:
        raise UsageError(f"--scorer must be one of {', '.join(SCORERS)}")
    ctx = _context(cfg, with_model=cfg.scorer == "trained-adapter")
    paper = _query_paper(cfg, ctx)
    pool = _pool(cfg, ctx, paper)
    scores = ctx.score(cfg.scorer, paper, pool.candidates)
    ranked = sorted(scores.items(), key=lambda kv: (-kv[1], kv[0]))[: cfg.top_k]
    return {"stage": "rank", "query": paper.id, "scorer": cfg.scorer,
            "ranking": [[r, s] for r, s in ranked]}


def cmd_eval(cfg):
    if cfg.scorer not in SCORERS:
        raise UsageError(f"--scorer must be one of {', '.join(SCORERS)}")
    _need_files(cfg, "benchmark")
    records = load_benchmark(cfg.benchmark, cfg.benchmark_papers, cfg.scale_max)
    ctx = _context(cfg, with_model=cfg.scorer == "trained-adapter")
    scores = score_benchmark(ctx, cfg.scorer, records, _benchmark_papers(cfg))
    report = {"meta": _provenance(cfg, "eval"), "scorer": cfg.scorer, **evaluate_scores(records, scores)}
    if cfg.report:
        Path(cfg.report).write_text(json.dumps(report, sort_keys=True, indent=2) + "\n", encoding="utf-8")
        Path(cfg.report).with_suffix(".tsv").write_text(report_tsv(report), encoding="utf-8")
    return {"stage": "eval", "scorer": cfg.scorer, "pairs": report["all"]["pairs"],
            "loss": report["all"]["loss"], "precision": report["all"]["precision"]}


def cmd_stats(cfg):
    _need_files(cfg, "benchmark")
    records = load_benchmark(cfg.benchmark, cfg.benchmark_papers, cfg.scale_max)
    stats = benchmark_stats(records, cfg.scale_max)
    if cfg.report:
        Path(cfg.report).write_text(json.dumps(stats, sort_keys=True, indent=2) + "\n", encoding="utf-8")
    return {"stage": "stats", "records": stats["records"], "ratings": stats["rating"]["counts"],
            "pairs": stats["pairs"]}


GRADCHECK_TOLERANCE = 1e-4


def cmd_gradcheck(cfg):
    rng = np.random.default_rng(cfg.seed)
    worst = 0.0
    for state in range(cfg.states):
        d, r = cfg.embed_dim, min(cfg.rank, cfg.embed_dim)
        model = AdapterModel(rng.normal(0, 0.1, (d, r)), rng.normal(0, 0.1, (d, r)),
                             cfg.temperature, cfg.lambda_ce)
        E = rng.normal(size=(3 * cfg.batch, d))
        E /= np.linalg.norm(E, axis=1, keepdims=True)
        n = cfg.batch
        batch = Batch.from_indices(E, np.arange(n), np.arange(n, 2 * n), np.arange(2 * n, 3 * n))
        worst = max(worst, grad_check(model, batch, cfg.epsilon, seed=state))
    ok = bool(worst <= GRADCHECK_TOLERANCE)
    if not ok:
        log.error("gradient check failed: max relative error %.3e", worst)
    return {"stage": "gradcheck", "states": cfg.states, "max_rel_error": float(worst), "ok": ok}, (0 if ok else 2)


HANDLERS = {name: globals()[f"cmd_{name}"] for name in COMMANDS}


# -- argument parsing --------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="JSON file with PipelineConfig keys")
    common.add_argument("--log-level", default="INFO")
    for f in fields(PipelineConfig):
        flags = ["--" + f.name.replace("_", "-")]
        if "_" in f.name:
            flags.append("--" + f.name)
        kind = {"int": int, "float": float, "float | None": float}.get(str(f.type), str)
        kwargs = {"dest": f.name, "default": argparse.SUPPRESS, "type": kind}
        if f.name == "backend":
            kwargs["choices"] = ("stub", "http")
        if f.name == "coi":
            kwargs["choices"] = ("on", "off")
        common.add_argument(*flags, **kwargs)
    parser = _Parser(prog="revrank", description="Reviewer expertise ranking pipeline.")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    for name in COMMANDS:
        sub.add_parser(name, parents=[common])
    return parser


def _type_ok(declared: str, value) -> bool:
    if value is None:
        return declared.endswith("| None")
    if isinstance(value, bool):
        return False
    if declared.startswith("int"):
        return isinstance(value, int)
    if declared.startswith("float"):
        return isinstance(value, (int, float))
    return isinstance(value, str)


def resolve_config(args: argparse.Namespace) -> PipelineConfig:
    """Flags override the config file, which overrides built-in defaults."""
    values = {}
    if getattr(args, "config", None):
        try:
            loaded = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read config {args.config}: {exc}") from None
        if not isinstance(loaded, dict):
            raise UsageError("config file must hold a JSON object")
        known = {f.name: f for f in fields(PipelineConfig)}
        unknown = sorted(set(loaded) - set(known))
        if unknown:
            raise UsageError(f"unknown config key(s): {', '.join(unknown)}")
        for key, value in loaded.items():
            if not _type_ok(str(known[key].type), value):
                raise UsageError(f"config key {key!r} has a value of the wrong type: {value!r}")
        values.update(loaded)
    for f in fields(PipelineConfig):
        if hasattr(args, f.name):
            values[f.name] = getattr(args, f.name)
    for key, allowed in (("backend", ("stub", "http")), ("coi", ("on", "off"))):
        if key in values and values[key] not in allowed:
            raise UsageError(f"{key} must be one of {', '.join(allowed)}")
    return PipelineConfig(**values)


def run_command(argv: Sequence[str]) -> int:
    try:
        args = build_parser().parse_args(list(argv))
        if not args.command:
            raise UsageError(f"choose a command: {' | '.join(COMMANDS)}")
        logging.basicConfig(level=getattr(logging, str(args.log_level).upper(), logging.INFO),
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        cfg = resolve_config(args)
        result = HANDLERS[args.command](cfg)
    except UsageError as exc:
        print(f"revrank: usage error: {exc}", file=sys.stderr)
        return 1
    except TransportError as exc:
        print(f"revrank {args.command}: external service failure: {exc}", file=sys.stderr)
        return 3
    except (RevrankError, ValueError, KeyError, OSError) as exc:
        print(f"revrank {args.command}: {exc}", file=sys.stderr)
        return 2
    code = 0
    if isinstance(result, tuple):
        result, code = result
    _emit(result)
    return code


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))


if __name__ == "__main__":
    main()
