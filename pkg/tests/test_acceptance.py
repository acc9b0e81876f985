"""End-to-end acceptance checks, one test per criterion.

Each test records a PASS/FAIL line that is echoed in the terminal summary.
"""

import itertools
import math
import time

import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from revhelp import inference
from revhelp.cli import main
from revhelp.corpus import CorpusSplit, TokenizedReview, Vocabulary
from revhelp.evaluation import kendall_tau, spearman
from revhelp.features import compute_stats, consistency_matrix
from revhelp.inference import Predictor, fit_regression, train
from revhelp.latent_model import HyperParams, ModelState, init, load_snapshot, read_manifest, save_snapshot
from revhelp.regression_oracle import (
    finite_difference_gradient,
    gd_minimize,
    ridge_gradient,
    ridge_objective,
    solve_ridge,
)
from revhelp.synthgen import SynthConfig, generate

from conftest import record_criterion, user_trajectories


def monotone(train_docs, levels) -> bool:
    return all(set(np.diff([0] + t).tolist()) <= {0, 1} for t in user_trajectories(train_docs, levels).values())


def monotone_hook(train_docs):
    def hook(stage, state, asg):
        assert monotone(train_docs, asg.levels), f"non-monotone trajectory after {stage} sweep"

    return hook


# --- 1 ---------------------------------------------------------------------------------


def brute_facet_terms(tokens_by_doc, levels, facets_by_doc, psi_block, delta, E, Z, W, d, j):
    """Unnormalized conditional for token (d, j) by explicit loops over a full recount."""
    n = [[[0] * W for _ in range(Z)] for _ in range(E)]
    for dd, (toks, facs) in enumerate(zip(tokens_by_doc, facets_by_doc)):
        for jj, (w, z) in enumerate(zip(toks, facs)):
            if (dd, jj) != (d, j):
                n[levels[dd]][z][w] += 1
    e, w = levels[d], tokens_by_doc[d][j]
    norm = sum(math.exp(psi_block[e][z]) for z in range(Z))
    return [
        math.exp(psi_block[e][k]) / norm * (n[e][k][w] + delta) / (sum(n[e][k]) + W * delta)
        for k in range(Z)
    ]


def test_criterion_01_facet_conditional_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(11)
    E, Z, W = 2, 3, 10
    vocab = Vocabulary([f"w{i}" for i in range(W)], np.ones(W, dtype=np.int64))
    docs = [
        TokenizedReview(i, 0, i, rng.integers(0, W, size=n), 4.0, i, 0.5)
        for i, n in enumerate([6, 4, 7])
    ]
    split = CorpusSplit(docs, [], vocab, 1)
    hyper = HyperParams(E=E, Z=Z, delta=0.05, seed=3)
    state, asg = init(hyper, split)
    state.psi = rng.normal(size=hyper.n_params)
    # put the middle review at the upper level and rebuild counts
    asg.levels[1] = 1
    tokens = np.concatenate([d.tokens for d in docs])
    state.word_counts, state.word_row_totals = inference.recount(asg, tokens, E, Z, W)

    worst = 0.0
    step = np.random.default_rng(5)
    for d, doc in enumerate(docs):
        facets = asg.doc_facets(d)
        for j in range(len(doc.tokens)):
            brute = brute_facet_terms(
                [x.tokens.tolist() for x in docs], asg.levels.tolist(),
                [asg.doc_facets(k).tolist() for k in range(3)], state.psi_block.tolist(),
                hyper.delta, E, Z, W, d, j,
            )
            brute = np.array(brute) / sum(brute)
            e, w, k = asg.levels[d], doc.tokens[j], facets[j]
            state.word_counts[e, k, w] -= 1
            state.word_row_totals[e, k] -= 1
            got = inference.facet_conditional(e, w, state)
            state.word_counts[e, k, w] += 1
            state.word_row_totals[e, k] += 1
            worst = max(worst, float(np.max(np.abs(got - brute))))
            inference.sample_facet(doc.tokens, j, e, facets, state, step)
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-12 and elapsed < 1.0
    record_criterion(1, "facet conditional equals brute-force enumeration", ok, f"max diff {worst:.2e}, {elapsed:.2f}s")
    assert ok


# --- 2 ---------------------------------------------------------------------------------


def brute_expertise(tokens, facets, e_prev, gamma, counts, trans, psi_block, delta):
    """Exhaustive evaluation of both candidates with the review already removed from the counts."""
    E, Z, W = len(counts), len(counts[0]), len(counts[0][0])
    best, best_score = None, -math.inf
    for c in (e_prev, e_prev + 1):
        if c >= E:
            continue
        same = 1 if c == e_prev else 0
        s = math.log((trans[e_prev][c] + same + gamma) / (sum(trans[e_prev]) + same + E * gamma))
        lse = math.log(sum(math.exp(v) for v in psi_block[c]))
        for w, z in zip(tokens, facets):
            s += psi_block[c][z] - lse
            s += math.log((counts[c][z][w] + delta) / (sum(counts[c][z]) + W * delta))
        if s > best_score:
            best, best_score = c, s
    return best


def test_criterion_02_expertise_update_oracle():
    t0 = time.perf_counter()
    rng = np.random.default_rng(22)
    mismatches = 0
    for _ in range(1000):
        E, Z, W = int(rng.integers(2, 5)), int(rng.integers(2, 4)), int(rng.integers(3, 7))
        n_tok = int(rng.integers(1, 6))
        tokens = rng.integers(0, W, size=n_tok)
        facets = rng.integers(0, Z, size=n_tok)
        e_prev = int(rng.integers(0, E))
        e_old = min(e_prev + int(rng.integers(0, 2)), E - 1)
        counts = rng.integers(0, 6, size=(E, Z, W))
        trans = np.triu(rng.integers(0, 6, size=(E, E))) * (np.abs(np.subtract.outer(range(E), range(E))) <= 1)
        hyper = HyperParams(E=E, Z=Z, delta=float(rng.uniform(0.01, 1.0)))
        gamma = float(rng.uniform(0.05, 0.95))
        psi = rng.normal(size=hyper.n_params) * 2
        brute = brute_expertise(
            tokens.tolist(), facets.tolist(), e_prev, gamma, counts.tolist(), trans.tolist(),
            psi[7:].reshape(E, Z).tolist(), hyper.delta,
        )
        # state holds the review at e_old with its transition counted from e_prev
        full = counts.copy()
        np.add.at(full, (e_old, facets, tokens), 1)
        tr = trans.copy()
        tr[e_prev, e_old] += 1
        vocab = Vocabulary([f"w{i}" for i in range(W)], np.ones(W, dtype=np.int64))
        state = ModelState(psi, full, full.sum(axis=2), tr, vocab, hyper)
        got = inference.update_expertise(tokens, facets, e_old, e_prev, e_prev, gamma, state)
        mismatches += got != brute
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and elapsed < 5.0
    record_criterion(2, "expertise argmax equals exhaustive evaluation", ok, f"{mismatches}/1000 mismatches, {elapsed:.2f}s")
    assert ok


# --- 3 ---------------------------------------------------------------------------------


def test_criterion_03_regression_oracle():
    rng = np.random.default_rng(33)
    worst_w, worst_gap, worst_grad = 0.0, -math.inf, 0.0
    for _ in range(100):
        n, p = int(rng.integers(10, 501)), int(rng.integers(1, 61))
        X = rng.normal(size=(n, p))
        y = X @ rng.normal(size=p) * 0.1 + rng.normal(size=n)
        mu = float(10 ** rng.uniform(-4, 0))
        main_w = fit_regression(X, y, mu)
        oracle_w = solve_ridge(X, y, mu)
        worst_w = max(worst_w, float(np.max(np.abs(main_w - oracle_w))))
        gd = gd_minimize(X, y, mu, steps=300)
        worst_gap = max(worst_gap, ridge_objective(main_w, X, y, mu) - ridge_objective(gd, X, y, mu))
        at = rng.normal(size=p + 1)
        g = ridge_gradient(at, X, y, mu)
        fd = finite_difference_gradient(lambda v: ridge_objective(v, X, y, mu), at)
        worst_grad = max(worst_grad, float(np.max(np.abs(g - fd)) / np.max(np.abs(g))))
    ok = worst_w < 1e-8 and worst_gap <= 1e-6 and worst_grad < 1e-6
    record_criterion(
        3, "ridge solver agrees with elimination oracle", ok,
        f"max |dw| {worst_w:.1e}, objective gap {worst_gap:.1e}, grad rel err {worst_grad:.1e}",
    )
    assert ok


# --- 4 ---------------------------------------------------------------------------------


def test_criterion_04_count_consistency():
    c = generate(SynthConfig(n_users=50, reviews_per_user=20, seed=4))
    assert len(c.split.train) == 1000
    checks = []
    hook = monotone_hook(c.split.train)
    try:
        train(c.split, HyperParams(E=2, Z=3, outer_iterations=30, tol=0.0, seed=4), check=True,
              on_sweep=lambda *a: (checks.append(a[0]), hook(*a)))
        ok, detail = len(checks) == 60, f"{len(checks)} sweeps verified"
    except inference.CountMismatch as exc:
        ok, detail = False, str(exc)
    record_criterion(4, "incremental counts equal recount after every sweep", ok, detail)
    assert ok


# --- 5 ---------------------------------------------------------------------------------


def test_criterion_05_monotone_expertise():
    violations, runs = 0, 0
    for E, Z, W, seed in [(2, 3, 100, 0), (3, 3, 150, 1), (5, 4, 400, 2)]:
        c = generate(SynthConfig(E=E, Z=Z, W=W, n_users=60, reviews_per_user=15, advance_prob=0.15, seed=seed))
        state, asg = init(HyperParams(E=E, Z=Z, seed=seed), c.split)
        violations += int(np.any(asg.levels != 0))

        def hook(stage, st, a):
            nonlocal violations
            violations += not monotone(c.split.train, a.levels)

        train(c.split, HyperParams(E=E, Z=Z, outer_iterations=15, seed=seed), on_sweep=hook)
        runs += 1
    ok = violations == 0
    record_criterion(5, "expertise trajectories monotone with unit steps", ok, f"{runs} runs, {violations} violations")
    assert ok


# --- 6 ---------------------------------------------------------------------------------


def test_criterion_06_loglik_trend():
    lines, ok = [], True
    for seed in range(5):
        c = generate(SynthConfig(seed=seed))
        assert len(c.split.train) == 2000
        t0 = time.perf_counter()
        r = train(c.split, HyperParams(E=2, Z=3, outer_iterations=30, seed=seed),
                  on_sweep=monotone_hook(c.split.train))
        elapsed = time.perf_counter() - t0
        ll = np.array([h["log_likelihood"] for h in r.history])
        frac = float(np.mean(np.diff(ll) >= -1e-9))
        good = ll[-1] > ll[0] and frac >= 0.9 and elapsed < 60
        ok &= good
        lines.append(f"seed {seed}: {frac:.2f} non-negative, {elapsed:.1f}s")
    record_criterion(6, "log-likelihood rises over training", ok, "; ".join(lines))
    assert ok


# --- 7 ---------------------------------------------------------------------------------


def top_words(dist: np.ndarray, k: int = 5) -> set[int]:
    return set(np.argsort(-dist, kind="stable")[:k].tolist())


def test_criterion_07_synthetic_recovery():
    passes, detail = 0, []
    for seed in range(5):
        c = generate(SynthConfig(seed=seed))
        r = train(c.split, HyperParams(E=2, Z=3, outer_iterations=30, seed=seed),
                  on_sweep=monotone_hook(c.split.train))
        learned = r.state.phi_matrix().reshape(-1, c.phi.shape[2])
        truth = c.phi.reshape(-1, c.phi.shape[2])
        overlap = np.array([[len(top_words(a) & top_words(b)) / 5 for b in truth] for a in learned])
        rows, cols = linear_sum_assignment(-overlap)
        worst = float(overlap[rows, cols].min())
        passes += worst >= 0.8
        detail.append(f"{worst:.1f}")
    ok = passes >= 4
    record_criterion(7, "top-5 facet words recovered after matching", ok,
                     f"{passes}/5 seeds; worst per-seed overlap {', '.join(detail)}")
    assert ok


# --- 8 ---------------------------------------------------------------------------------


def test_criterion_08_latent_factors_beat_consistency_only():
    wins, detail = 0, []
    for seed in range(10):
        c = generate(SynthConfig(test_per_user=3, reviews_per_user=23, seed=seed))
        split = c.split
        stats = compute_stats(split.train, split.background_user_key)
        r = train(split, HyperParams(E=2, Z=3, outer_iterations=20, seed=seed), stats=stats,
                  on_sweep=monotone_hook(split.train))
        pred = Predictor.from_training(r.state, r.assignments, split, stats)
        truth = np.array([d.helpfulness for d in split.test])
        full = np.mean((np.array([pred.predict(d) for d in split.test]) - truth) ** 2)
        w = fit_regression(consistency_matrix(split.train, stats), np.array([d.helpfulness for d in split.train]), 1e-3)
        base_pred = np.clip(w[0] + consistency_matrix(split.test, stats) @ w[1:], 0, 1)
        base = np.mean((base_pred - truth) ** 2)
        wins += full < base
        detail.append(f"{full:.4f}<{base:.4f}" if full < base else f"{full:.4f}>={base:.4f}")
    ok = wins >= 8
    record_criterion(8, "full model beats consistency-only regression", ok, f"{wins}/10 seeds")
    assert ok


# --- 9 ---------------------------------------------------------------------------------


def pairwise_kendall(p, t) -> float:
    sp = np.sign(p[:, None] - p[None, :])
    st = np.sign(t[:, None] - t[None, :])
    s = int(np.triu(sp * st, k=1).sum())
    return s / math.comb(len(p), 2)


def average_ranks(x) -> np.ndarray:
    order = sorted(range(len(x)), key=lambda i: x[i])
    ranks = [0.0] * len(x)
    i = 0
    while i < len(order):
        j = i
        while j + 1 < len(order) and x[order[j + 1]] == x[order[i]]:
            j += 1
        for k in range(i, j + 1):
            ranks[order[k]] = (i + j) / 2 + 1
        i = j + 1
    return np.array(ranks)


def rank_pearson(p, t) -> float:
    a, b = average_ranks(p), average_ranks(t)
    a, b = a - a.mean(), b - b.mean()
    return float((a @ b) / math.sqrt((a @ a) * (b @ b)))


def test_criterion_09_metric_oracles():
    rng = np.random.default_rng(99)
    k_bad, s_worst = 0, 0.0
    for trial in range(1000):
        n = int(rng.integers(2, 201))
        if trial % 2:
            p, t = rng.integers(0, 8, size=n).astype(float), rng.integers(0, 8, size=n).astype(float)
        else:
            p, t = rng.permutation(n).astype(float), rng.normal(size=n)
        k_bad += kendall_tau(p, t) != pairwise_kendall(p, t)
        if np.ptp(p) > 0 and np.ptp(t) > 0:
            s_worst = max(s_worst, abs(spearman(p, t) - rank_pearson(p, t)))
    worked = kendall_tau([1, 2, 3], [1, 3, 2]) == 1 / 3 and spearman([1, 2, 3], [1, 3, 2]) == 0.5
    ok = k_bad == 0 and s_worst < 1e-12 and worked
    record_criterion(9, "rank metrics match pair-counting and rank oracles", ok,
                     f"kendall mismatches {k_bad}, spearman max diff {s_worst:.1e}, worked values {worked}")
    assert ok


# --- 10 --------------------------------------------------------------------------------


def test_criterion_10_determinism_and_persistence(tmp_path):
    assert main(["-q", "simulate", "--seed", "10", "--out-dir", str(tmp_path / "sim")]) == 0
    for run in ("a", "b"):
        d = tmp_path / run
        assert main(["-q", "prepare", "--input", str(tmp_path / "sim" / "reviews.jsonl"), "--out-dir", str(d / "data")]) == 0
        assert main(["-q", "train", "--data-dir", str(d / "data"), "--snapshot-dir", str(d / "snap"),
                     "--E", "2", "--Z", "3", "--iterations", "10", "--seed", "7"]) == 0
        assert main(["-q", "evaluate", "--data-dir", str(d / "data"), "--snapshot-dir", str(d / "snap"),
                     "--out", str(d / "report.json")]) == 0
    names = sorted(read_manifest(tmp_path / "a" / "snap")["crc32"]) + ["manifest.json"]
    same_snap = all((tmp_path / "a" / "snap" / n).read_bytes() == (tmp_path / "b" / "snap" / n).read_bytes() for n in names)
    same_report = (tmp_path / "a" / "report.json").read_bytes() == (tmp_path / "b" / "report.json").read_bytes()
    state, asg = load_snapshot(tmp_path / "a" / "snap")
    save_snapshot(state, asg, tmp_path / "copy", read_manifest(tmp_path / "a" / "snap")["extra"])
    round_trip = all((tmp_path / "a" / "snap" / n).read_bytes() == (tmp_path / "copy" / n).read_bytes() for n in names)
    ok = same_snap and same_report and round_trip
    record_criterion(10, "pipeline runs are byte-identical and snapshots round-trip", ok,
                     f"snapshots {same_snap}, reports {same_report}, round trip {round_trip}")
    assert ok


# --- 11 --------------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_11_desk_scale_performance():
    c = generate(SynthConfig(E=5, Z=10, W=1000, n_users=500, reviews_per_user=20, doc_length=50, seed=11))
    assert len(c.split.train) == 10_000
    t0 = time.perf_counter()
    r = train(c.split, HyperParams(E=5, Z=10, outer_iterations=30, tol=0.0, seed=11),
              on_sweep=monotone_hook(c.split.train))
    elapsed = time.perf_counter() - t0
    ok = len(r.history) == 31 and elapsed < 120
    record_criterion(11, "10k reviews, E=5, Z=10, 30 iterations under 2 minutes", ok, f"{elapsed:.1f}s")
    assert ok
