"""Alternating training loop: expertise sweep, facet sweep, xi estimation, regression, theta refresh."""

from __future__ import annotations

import csv
import logging
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import _kernels
from .corpus import CorpusSplit, TokenizedReview
from .features import Stats, compute_stats, consistency_features, consistency_matrix
from .latent_model import (
    Assignments,
    HyperParams,
    ModelState,
    init,
    previous_review,
    recount,
    recount_transitions,
    theta_from_psi,
    xi_for_review,
)

log = logging.getLogger(__name__)


class CountMismatch(AssertionError):
    """Incremental count tensors disagree with a recount of the assignments."""


# --- single-site conditionals ------------------------------------------------


def facet_conditional(e: int, w: int, state: ModelState, theta: np.ndarray | None = None) -> np.ndarray:
    """Normalized facet posterior for one token whose own count is already removed."""
    theta = state.theta if theta is None else theta
    d = state.hyper.delta
    word = (state.word_counts[e, :, w] + d) / (state.word_row_totals[e] + state.W * d)
    p = theta[e] * word
    return p / p.sum()


def sample_facet(
    review_tokens: np.ndarray,
    j: int,
    level: int,
    facets: np.ndarray,
    state: ModelState,
    rng: np.random.Generator,
) -> int:
    """Resample the facet of token ``j`` of a review in place; ``facets`` are the review's labels."""
    w, k = int(review_tokens[j]), int(facets[j])
    state.word_counts[level, k, w] -= 1
    state.word_row_totals[level, k] -= 1
    p = facet_conditional(level, w, state)
    k = int(rng.choice(len(p), p=p))
    facets[j] = k
    state.word_counts[level, k, w] += 1
    state.word_row_totals[level, k] += 1
    return k


def transition_prior(e_prev: int, e_next: int, gamma_u: float, state: ModelState) -> float:
    """Smoothed transition estimate; callers must have removed the review's own transition."""
    if e_next not in (e_prev, e_prev + 1):
        raise ValueError(f"illegal expertise transition {e_prev} -> {e_next}")
    E = state.hyper.E
    n = state.transition_counts
    same = 1.0 if e_prev == e_next else 0.0
    return (n[e_prev, e_next] + same + gamma_u) / (n[e_prev].sum() + same + E * gamma_u)


def expertise_scores(
    tokens: np.ndarray, facets: np.ndarray, e_prev: int, gamma_u: float, state: ModelState
) -> dict[int, float]:
    """Log-space conditional for the candidate levels {e_prev, e_prev + 1}.

    The review's tokens and incoming transition must already be excluded from the counts.
    """
    log_theta = np.log(state.theta)
    d = state.hyper.delta
    out = {}
    for c in (e_prev, e_prev + 1):
        if c >= state.hyper.E:
            continue
        word = (state.word_counts[c, facets, tokens] + d) / (state.word_row_totals[c, facets] + state.W * d)
        out[c] = float(np.log(transition_prior(e_prev, c, gamma_u, state)) + np.sum(log_theta[c, facets] + np.log(word)))
    return out


def update_expertise(
    tokens: np.ndarray,
    facets: np.ndarray,
    e_old: int,
    src_old: int,
    e_prev: int,
    gamma_u: float,
    state: ModelState,
) -> int:
    """Pick the more probable of {e_prev, e_prev + 1} for one review and move its counts.

    ``src_old`` is the predecessor level under which the review's incoming
    transition is currently counted. Ties keep the review at ``e_prev``.
    """
    state.transition_counts[src_old, e_old] -= 1
    np.subtract.at(state.word_counts, (e_old, facets, tokens), 1)
    np.subtract.at(state.word_row_totals, (e_old, facets), 1)
    scores = expertise_scores(tokens, facets, e_prev, gamma_u, state)
    best = e_prev
    if e_prev + 1 in scores and scores[e_prev + 1] > scores[e_prev]:
        best = e_prev + 1
    state.transition_counts[e_prev, best] += 1
    np.add.at(state.word_counts, (best, facets, tokens), 1)
    np.add.at(state.word_row_totals, (best, facets), 1)
    return best


# --- regression ----------------------------------------------------------------


def objective(psi: np.ndarray, X: np.ndarray, y: np.ndarray, mu: float) -> float:
    """Mean squared error plus mu * ||weights||^2; psi[0] is the unpenalized bias."""
    r = y - psi[0] - X @ psi[1:]
    return float(np.mean(r**2) + mu * np.dot(psi[1:], psi[1:]))


def objective_grad(psi: np.ndarray, X: np.ndarray, y: np.ndarray, mu: float) -> np.ndarray:
    r = y - psi[0] - X @ psi[1:]
    n = len(y)
    g = np.empty_like(psi)
    g[0] = -2.0 * r.sum() / n
    g[1:] = -2.0 * (X.T @ r) / n + 2.0 * mu * psi[1:]
    return g


def fit_regression(X: np.ndarray, y: np.ndarray, mu: float, fit_intercept: bool = True) -> np.ndarray:
    """Exact ridge solution of the mean-squared-error objective.

    Returns ``[bias, weights...]``; the penalty enters the normal equations as
    ``mu * N`` so the minimizer matches the mean-based objective. A singular
    unpenalized system falls back to the minimum-norm least-squares solution.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = X.shape
    A = np.hstack([np.ones((n, 1)), X]) if fit_intercept else X
    pen = np.full(A.shape[1], mu * n)
    if fit_intercept:
        pen[0] = 0.0
    G = A.T @ A + np.diag(pen)
    b = A.T @ y
    try:
        if np.linalg.cond(G) > 1e12:
            raise np.linalg.LinAlgError("ill-conditioned")
        w = np.linalg.solve(G, b)
    except np.linalg.LinAlgError:
        warnings.warn("singular normal equations; using minimum-norm solution", RuntimeWarning, stacklevel=2)
        w = np.linalg.lstsq(G, b, rcond=None)[0]
    return w if fit_intercept else np.concatenate([[0.0], w])


# --- training ----------------------------------------------------------------


@dataclass
class FlatCorpus:
    """Training reviews flattened into contiguous arrays for the sweep kernels."""

    tokens: np.ndarray
    offsets: np.ndarray
    prev_doc: np.ndarray
    gamma: np.ndarray
    helpfulness: np.ndarray
    consistency: np.ndarray

    @classmethod
    def build(cls, train: Sequence[TokenizedReview], stats: Stats) -> "FlatCorpus":
        lengths = np.array([len(d.tokens) for d in train], dtype=np.int64)
        return cls(
            tokens=np.concatenate([d.tokens for d in train]).astype(np.int64),
            offsets=np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64),
            prev_doc=previous_review(np.array([d.user_key for d in train], dtype=np.int64)),
            gamma=np.array([stats.user(d.user_key).activity_rate for d in train]),
            helpfulness=np.array([d.helpfulness for d in train]),
            consistency=consistency_matrix(train, stats),
        )


@dataclass
class TrainResult:
    state: ModelState
    assignments: Assignments
    history: list[dict] = field(default_factory=list)
    converged: bool = False


def check_counts(state: ModelState, assignments: Assignments, flat: FlatCorpus) -> None:
    E, Z = state.hyper.E, state.hyper.Z
    counts, totals = recount(assignments, flat.tokens, E, Z, state.W)
    if not np.array_equal(counts, state.word_counts) or not np.array_equal(totals, state.word_row_totals):
        raise CountMismatch("word counts diverged from assignments")
    if not np.array_equal(recount_transitions(assignments.levels, flat.prev_doc, E), state.transition_counts):
        raise CountMismatch("transition counts diverged from assignments")


def log_likelihood_terms(state: ModelState, assignments: Assignments, flat: FlatCorpus) -> tuple[float, float]:
    """(token term, transition term) of the data log-likelihood under current point estimates."""
    return _kernels.loglik_terms(
        flat.tokens,
        flat.offsets,
        assignments.facets,
        assignments.levels,
        flat.prev_doc,
        flat.gamma,
        state.word_counts,
        state.word_row_totals,
        state.transition_counts,
        np.log(state.theta),
        state.hyper.delta,
    )


def log_likelihood(state: ModelState, assignments: Assignments, split: CorpusSplit, stats: Stats | None = None) -> float:
    stats = stats or compute_stats(split.train, split.background_user_key, state.hyper.timeliness_scale)
    return float(sum(log_likelihood_terms(state, assignments, FlatCorpus.build(split.train, stats))))


def latent_features(state: ModelState, assignments: Assignments, flat: FlatCorpus) -> np.ndarray:
    return _kernels.xi_rows(flat.tokens, flat.offsets, assignments.levels, state.phi_matrix())


def design_matrix(state: ModelState, assignments: Assignments, flat: FlatCorpus) -> np.ndarray:
    return np.hstack([flat.consistency, latent_features(state, assignments, flat)])


def _predict_rows(psi: np.ndarray, X: np.ndarray) -> np.ndarray:
    return np.clip(psi[0] + X @ psi[1:], 0.0, 1.0)


def sweep_streams(seed: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, 1]))


def train(
    split: CorpusSplit,
    hyper: HyperParams,
    stats: Stats | None = None,
    check: bool = False,
    on_sweep: Callable[[str, ModelState, Assignments], None] | None = None,
    start: tuple[ModelState, Assignments] | None = None,
) -> TrainResult:
    """Run the alternating optimization for ``hyper.outer_iterations`` iterations.

    ``history`` row 0 describes the initialized model. Training stops early when
    the relative log-likelihood change stays below ``hyper.tol`` for
    ``hyper.patience`` consecutive iterations. With ``check`` set, counts are
    verified against a full recount after every sweep.
    """
    stats = stats or compute_stats(split.train, split.background_user_key, hyper.timeliness_scale)
    state, asg = start if start is not None else init(hyper, split)
    flat = FlatCorpus.build(split.train, stats)
    rng = sweep_streams(hyper.seed)
    t0 = time.perf_counter()

    def row(it: int) -> dict:
        ll = float(sum(log_likelihood_terms(state, asg, flat)))
        X = design_matrix(state, asg, flat)
        mse = float(np.mean((_predict_rows(state.psi, X) - flat.helpfulness) ** 2))
        return {"iteration": it, "log_likelihood": ll, "train_mse": mse, "seconds_elapsed": time.perf_counter() - t0}

    def after(stage: str) -> None:
        if check:
            check_counts(state, asg, flat)
        if on_sweep is not None:
            on_sweep(stage, state, asg)

    result = TrainResult(state, asg, [row(0)])
    quiet = 0
    for it in range(1, hyper.outer_iterations + 1):
        log_theta = np.log(state.theta)
        for _ in range(hyper.expertise_sweeps):
            _kernels.expertise_sweep(
                flat.tokens, flat.offsets, asg.facets, asg.levels, flat.prev_doc, flat.gamma,
                state.word_counts, state.word_row_totals, state.transition_counts, log_theta, hyper.delta,
            )
            after("expertise")
        theta = state.theta
        for _ in range(hyper.facet_sweeps):
            uniforms = rng.random(flat.tokens.size)
            _kernels.facet_sweep(
                flat.tokens, flat.offsets, asg.levels, asg.facets,
                state.word_counts, state.word_row_totals, theta, hyper.delta, uniforms,
            )
            after("facet")
        X = design_matrix(state, asg, flat)
        state.psi = fit_regression(X, flat.helpfulness, hyper.mu)

        rec = row(it)
        result.history.append(rec)
        log.info("iteration %d: log-likelihood %.6g, train mse %.6g", it, rec["log_likelihood"], rec["train_mse"])
        prev = result.history[-2]["log_likelihood"]
        rel = abs(rec["log_likelihood"] - prev) / max(abs(prev), 1e-300)
        quiet = quiet + 1 if rel < hyper.tol else 0
        if quiet >= hyper.patience:
            result.converged = True
            break
    return result


def write_history(path: str | Path, history: Sequence[dict]) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["iteration", "log_likelihood", "train_mse", "seconds_elapsed"])
        for r in history:
            w.writerow([r["iteration"], repr(r["log_likelihood"]), repr(r["train_mse"]), f"{r['seconds_elapsed']:.3f}"])


# --- prediction ----------------------------------------------------------------


def final_levels(train: Sequence[TokenizedReview], assignments: Assignments) -> dict[int, int]:
    """Each user's level at their latest training review."""
    out: dict[int, int] = {}
    for d, lvl in zip(train, assignments.levels):
        out[d.user_key] = int(lvl)
    return out


class Predictor:
    """Scores reviews with a frozen model; safe to share across readers."""

    def __init__(self, state: ModelState, stats: Stats, user_levels: dict[int, int]):
        self.state = state
        self.stats = stats
        self.user_levels = dict(user_levels)
        self.phi = state.phi_matrix()
        self.phi.setflags(write=False)
        self.empty_reviews = 0

    @classmethod
    def from_training(cls, state: ModelState, assignments: Assignments, split: CorpusSplit, stats: Stats | None = None):
        stats = stats or compute_stats(split.train, split.background_user_key, state.hyper.timeliness_scale)
        return cls(state, stats, final_levels(split.train, assignments))

    def level(self, user_key: int) -> int:
        if user_key in self.user_levels:
            return self.user_levels[user_key]
        return self.user_levels.get(self.stats.background_user_key, 0)

    def features(self, review: TokenizedReview) -> np.ndarray:
        tokens = np.asarray(review.tokens, dtype=np.int64)
        tokens = tokens[(tokens >= 0) & (tokens < self.state.W)]
        if tokens.size == 0:
            self.empty_reviews += 1
        xi = xi_for_review(tokens, self.level(review.user_key), self.state, self.phi)
        return np.concatenate([consistency_features(review, self.stats), xi.ravel()])

    def raw_score(self, review: TokenizedReview) -> float:
        psi = self.state.psi
        return float(psi[0] + self.features(review) @ psi[1:])

    def predict(self, review: TokenizedReview) -> float:
        return min(1.0, max(0.0, self.raw_score(review)))


def predict(review: TokenizedReview, state: ModelState, stats: Stats, user_levels: dict[int, int]) -> float:
    return Predictor(state, stats, user_levels).predict(review)
