"""Command-line entry point: prepare, train, predict, rank, evaluate, inspect, simulate.

Exit codes: 0 success, 1 data or model error, 2 usage error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import corpus, evaluation, inference, latent_model, regression_oracle, synthgen
from .config import ConfigError, RunConfig, dump_config, load_config
from .features import compute_stats, item_stats_tsv, stats_tsv

log = logging.getLogger("revhelp")

EXIT_OK, EXIT_DATA, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    pass


class _RepeatFilter(logging.Filter):
    """Pass the first few records per message template, then count the rest silently."""

    def __init__(self, limit: int = 5):
        super().__init__()
        self.limit = limit
        self.seen: dict[str, int] = {}

    def filter(self, record: logging.LogRecord) -> bool:
        if record.levelno < logging.WARNING:
            return True
        n = self.seen.get(record.msg, 0) + 1
        self.seen[record.msg] = n
        return n <= self.limit

    def summary(self) -> None:
        for msg, n in self.seen.items():
            if n > self.limit:
                sys.stderr.write(f"WARNING: {n - self.limit} more like {msg!r} suppressed\n")


# --- helpers -------------------------------------------------------------------


def _config(args, **overrides) -> RunConfig:
    try:
        return load_config(getattr(args, "config", None), overrides)
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc


def _load_model(args):
    """Load prepared data and a snapshot, refusing combinations that do not belong together."""
    split = corpus.load_split(args.data_dir)
    state, asg = latent_model.load_snapshot(args.snapshot_dir)
    if state.vocab != split.vocab:
        raise latent_model.SnapshotError(
            f"snapshot vocabulary (W={state.W}) does not match {args.data_dir} (W={len(split.vocab)})"
        )
    lengths = np.diff(asg.offsets)
    if lengths.size != len(split.train) or any(len(d.tokens) != n for d, n in zip(split.train, lengths)):
        raise latent_model.SnapshotError(
            f"snapshot covers {lengths.size} training reviews; {args.data_dir} has {len(split.train)} "
            "with different lengths"
        )
    stats = compute_stats(split.train, split.background_user_key, state.hyper.timeliness_scale)
    predictor = inference.Predictor(state, stats, inference.final_levels(split.train, asg))
    return split, state, asg, predictor


def _pick(split, which: str):
    return split.test if which == "test" else split.train


def _scores(predictor, reviews) -> np.ndarray:
    return np.array([predictor.predict(d) for d in reviews])


def _out_file(path: str) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    return p


# --- subcommands -----------------------------------------------------------------


def cmd_prepare(args) -> int:
    cfg = _config(args, min_df=args.min_df, train_min_votes=args.train_min_votes, test_min_votes=args.test_min_votes)
    schema = None
    if args.schema:
        try:
            schema = json.loads(Path(args.schema).read_text(encoding="utf-8"))
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read schema {args.schema}: {exc}") from exc
    diagnostics: dict[str, int] = {}
    reviews = corpus.ingest(args.input, schema, diagnostics)
    split = corpus.split_corpus(
        reviews,
        train_min_votes=cfg.train_min_votes,
        test_min_votes=cfg.test_min_votes,
        test_per_user=cfg.test_per_user,
        longtail_threshold=cfg.longtail_threshold,
        min_df=cfg.min_df,
        max_vocab=cfg.max_vocab,
        policy=corpus.TokenizePolicy(min_length=cfg.min_token_length),
    )
    out = Path(args.out_dir)
    corpus.save_split(split, out)
    stats = compute_stats(split.train, split.background_user_key, cfg.timeliness_scale_days * 86400.0)
    (out / "user_stats.tsv").write_text(stats_tsv(stats), encoding="utf-8")
    (out / "item_stats.tsv").write_text(item_stats_tsv(stats), encoding="utf-8")
    report = {
        "n_input": len(reviews),
        "n_train": len(split.train),
        "n_test": len(split.test),
        "W": len(split.vocab),
        "n_regular_users": split.background_user_key,
        "dropped": {**diagnostics, **split.dropped_counts},
    }
    (out / "prepare_report.json").write_text(json.dumps(report, indent=1, sort_keys=True) + "\n", encoding="utf-8")
    log.info("prepared %d train / %d test reviews, W=%d", len(split.train), len(split.test), len(split.vocab))
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = _config(args, seed=args.seed, iterations=args.iterations, E=args.E, Z=args.Z, delta=args.delta, mu=args.mu)
    try:
        hyper = cfg.hyper()
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    split = corpus.load_split(args.data_dir)
    result = inference.train(split, hyper, check=args.check)
    extra = {
        "log_likelihood": [r["log_likelihood"] for r in result.history],
        "train_mse": [r["train_mse"] for r in result.history],
        "converged": result.converged,
    }
    latent_model.save_snapshot(result.state, result.assignments, args.snapshot_dir, extra)
    inference.write_history(Path(args.snapshot_dir) / "iterations.csv", result.history)
    (Path(args.snapshot_dir) / "config.txt").write_text(dump_config(cfg), encoding="utf-8")
    return EXIT_OK


def cmd_predict(args) -> int:
    split, state, _, predictor = _load_model(args)
    reviews = _pick(split, args.split)
    scores = _scores(predictor, reviews)
    lines = ["review_index\tuser_id\titem_id\tlevel\tpredicted\thelpfulness\n"]
    for d, s in zip(reviews, scores):
        lvl = predictor.level(d.user_key) + 1
        lines.append(f"{d.review_index}\t{d.user_id}\t{d.item_id}\t{lvl}\t{float(s)!r}\t{d.helpfulness!r}\n")
    _out_file(args.out).write_text("".join(lines), encoding="utf-8")
    if predictor.empty_reviews:
        log.warning("%d reviews had no in-vocabulary tokens", predictor.empty_reviews)
    return EXIT_OK


def rank_lines(items, review_ids, scores) -> list[str]:
    """Per-item lists ordered by descending score; ties keep review order."""
    groups: dict = {}
    for it, rid, s in zip(items, review_ids, scores):
        groups.setdefault(it, []).append((rid, float(s)))
    lines = ["item_id\trank\treview_index\tpredicted\n"]
    for it in sorted(groups):
        ranked = sorted(groups[it], key=lambda p: (-p[1], p[0]))
        lines.extend(f"{it}\t{r}\t{rid}\t{s!r}\n" for r, (rid, s) in enumerate(ranked, start=1))
    return lines


def cmd_rank(args) -> int:
    split, _, _, predictor = _load_model(args)
    reviews = _pick(split, args.split)
    scores = _scores(predictor, reviews)
    lines = rank_lines([d.item_id for d in reviews], [d.review_index for d in reviews], scores)
    _out_file(args.out).write_text("".join(lines), encoding="utf-8")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    cfg = _config(args)
    split, _, _, predictor = _load_model(args)
    reviews = _pick(split, args.split)
    if len(reviews) < 2:
        raise corpus.CorpusError(f"need at least 2 {args.split} reviews to evaluate, found {len(reviews)}")
    scores = _scores(predictor, reviews)
    truth = [d.helpfulness for d in reviews]
    report = evaluation.evaluate(scores, truth, [d.item_id for d in reviews], cfg.kendall_variant)
    _out_file(args.out).write_text(report.to_json(), encoding="utf-8")
    return EXIT_OK


def _matrix_tsv(M: np.ndarray) -> str:
    E = M.shape[0]
    head = "level\t" + "\t".join(str(e + 1) for e in range(E)) + "\n"
    return head + "".join(f"{i + 1}\t" + "\t".join(repr(float(x)) for x in row) + "\n" for i, row in enumerate(M))


def cmd_inspect(args) -> int:
    cfg = _config(args)
    split, state, asg, predictor = _load_model(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    kl_theta, kl_phi = evaluation.kl_matrices(state)
    (out / "kl_theta.tsv").write_text(_matrix_tsv(kl_theta), encoding="utf-8")
    (out / "kl_phi.tsv").write_text(_matrix_tsv(kl_phi), encoding="utf-8")

    if split.test:
        reviews = split.test
        levels = [predictor.level(d.user_key) for d in reviews]
        scores = _scores(predictor, reviews)
    else:
        reviews, levels = split.train, asg.levels
        scores = np.array([d.helpfulness for d in reviews])
    cells = evaluation.salient_words(state, [d.tokens for d in reviews], levels, scores, cfg.top_k)
    lines = ["expertise\thelpfulness\trank\tword\tcontrast\n"]
    for (tier, helpful), words in cells.items():
        lines.extend(f"{tier}\t{helpful}\t{r}\t{w}\t{c!r}\n" for r, (w, c) in enumerate(words, start=1))
    (out / "salient_words.tsv").write_text("".join(lines), encoding="utf-8")

    lls = latent_model.read_manifest(args.snapshot_dir).get("extra", {}).get("log_likelihood")
    if not lls:
        lls = [inference.log_likelihood(state, asg, split, predictor.stats)]
    (out / "loglik.csv").write_text(
        "iteration,log_likelihood\n" + "".join(f"{i},{v!r}\n" for i, v in enumerate(lls)), encoding="utf-8"
    )
    return EXIT_OK


def cmd_simulate(args) -> int:
    cfg = _config(args, seed=args.seed)
    try:
        synth = cfg.synth()
    except ConfigError as exc:
        raise UsageError(str(exc)) from exc
    corpus_ = synthgen.generate(synth)
    synthgen.write_corpus(corpus_, args.out_dir)
    log.info("simulated %d reviews into %s", len(corpus_.reviews), args.out_dir)
    return EXIT_OK


def cmd_oracle_check(args) -> int:
    """Cross-check the main ridge solver against the elimination oracle on random problems."""
    rng = np.random.default_rng(args.seed)
    worst = 0.0
    for _ in range(args.instances):
        n, p = int(rng.integers(20, 300)), int(rng.integers(1, 40))
        X, y = rng.normal(size=(n, p)), rng.normal(size=n)
        mu = float(10 ** rng.uniform(-4, 0))
        diff = np.max(np.abs(inference.fit_regression(X, y, mu) - regression_oracle.solve_ridge(X, y, mu)))
        worst = max(worst, float(diff))
    print(f"max |main - oracle| over {args.instances} instances: {worst:.3e}")
    return EXIT_OK if worst < 1e-8 else EXIT_DATA


# --- parser ----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="revhelp", description="Expertise-aware review helpfulness model.")
    p.add_argument("-q", "--quiet", action="store_true", help="only log warnings and errors")
    sub = p.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name, fn, help_text, **kw):
        sp = sub.add_parser(name, help=help_text, **kw)
        sp.set_defaults(func=fn)
        sp.add_argument("--config", help="flat key = value config file")
        return sp

    sp = add("prepare", cmd_prepare, "ingest, tokenize and split a JSON Lines review dump")
    sp.add_argument("--input", required=True)
    sp.add_argument("--schema", help="JSON object mapping logical fields to input keys")
    sp.add_argument("--out-dir", required=True)
    sp.add_argument("--min-df", type=int)
    sp.add_argument("--train-min-votes", type=int)
    sp.add_argument("--test-min-votes", type=int)

    sp = add("train", cmd_train, "fit the model on prepared data")
    sp.add_argument("--data-dir", required=True)
    sp.add_argument("--snapshot-dir", required=True)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--iterations", type=int)
    sp.add_argument("--E", type=int)
    sp.add_argument("--Z", type=int)
    sp.add_argument("--delta", type=float)
    sp.add_argument("--mu", type=float)
    sp.add_argument("--check", action="store_true", help="verify counts against a recount after every sweep")

    for name, fn, text in [
        ("predict", cmd_predict, "write per-review helpfulness scores (TSV)"),
        ("rank", cmd_rank, "write per-item review rankings (TSV)"),
        ("evaluate", cmd_evaluate, "write prediction and ranking metrics (JSON)"),
        ("inspect", cmd_inspect, "write KL matrices, salient words and the log-likelihood curve"),
    ]:
        sp = add(name, fn, text)
        sp.add_argument("--snapshot-dir", required=True)
        sp.add_argument("--data-dir", required=True)
        sp.add_argument("--out", required=True)
        sp.add_argument("--split", choices=("test", "train"), default="test")

    sp = add("simulate", cmd_simulate, "generate a synthetic corpus with known ground truth")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out-dir", required=True)

    sp = sub.add_parser("oracle-check")
    sp.set_defaults(func=cmd_oracle_check)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--instances", type=int, default=20)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    repeat = _RepeatFilter()
    handler.addFilter(repeat)
    root = logging.getLogger()
    root.addHandler(handler)
    log.setLevel(logging.WARNING if args.quiet else logging.INFO)
    try:
        return args.func(args)
    except UsageError as exc:
        sys.stderr.write(f"revhelp {args.command}: usage error: {exc}\n")
        return EXIT_USAGE
    except (
        corpus.CorpusError,
        latent_model.SnapshotError,
        synthgen.SynthError,
        inference.CountMismatch,
        regression_oracle.OracleError,
        ValueError,
        OSError,
    ) as exc:
        sys.stderr.write(f"revhelp {args.command}: error: {exc}\n")
        return EXIT_DATA
    finally:
        root.removeHandler(handler)
        repeat.summary()
