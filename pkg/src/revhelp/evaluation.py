"""Prediction and ranking metrics, expertise divergence matrices, salient word lists."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from numba import njit
from scipy.stats import rankdata

from .latent_model import ModelState

log = logging.getLogger(__name__)


@dataclass
class EvalReport:
    mse: float
    r_squared: float
    spearman: float
    kendall: float
    n_test: int
    per_item: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=1, sort_keys=True) + "\n"


def _pair(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    p = np.asarray(pred, dtype=float).ravel()
    t = np.asarray(truth, dtype=float).ravel()
    if p.shape != t.shape:
        raise ValueError(f"length mismatch: {p.size} predictions vs {t.size} targets")
    return p, t


def mse(pred, truth) -> float:
    p, t = _pair(pred, truth)
    if p.size == 0:
        raise ValueError("mse of empty vectors")
    return float(np.mean((p - t) ** 2))


def pearson(a: np.ndarray, b: np.ndarray) -> float | None:
    """Pearson correlation, or None when either vector is constant."""
    a = a - a.mean()
    b = b - b.mean()
    va, vb = a @ a, b @ b
    if va == 0 or vb == 0:
        return None
    return float(np.clip((a @ b) / np.sqrt(va * vb), -1.0, 1.0))


def r_squared(pred, truth) -> float:
    p, t = _pair(pred, truth)
    r = pearson(p, t)
    if r is None:
        log.warning("r_squared: zero variance input, returning 0")
        return 0.0
    return r * r


def spearman(pred, truth) -> float:
    """Pearson correlation of average ranks."""
    p, t = _pair(pred, truth)
    if p.size < 2:
        raise ValueError("spearman needs at least 2 observations")
    r = pearson(rankdata(p), rankdata(t))
    if r is None:
        log.warning("spearman: all-tied input, returning 0")
        return 0.0
    return r


@njit(cache=True)
def _count_inversions(a):
    n = a.shape[0]
    a = a.copy()
    buf = np.empty_like(a)
    inv = 0
    width = 1
    while width < n:
        for lo in range(0, n, 2 * width):
            mid = min(lo + width, n)
            hi = min(lo + 2 * width, n)
            i, j, k = lo, mid, lo
            while i < mid and j < hi:
                if a[j] < a[i]:
                    buf[k] = a[j]
                    inv += mid - i
                    j += 1
                else:
                    buf[k] = a[i]
                    i += 1
                k += 1
            while i < mid:
                buf[k] = a[i]
                i += 1
                k += 1
            while j < hi:
                buf[k] = a[j]
                j += 1
                k += 1
        a, buf = buf, a
        width *= 2
    return inv


def _tied_pairs(*cols: np.ndarray) -> int:
    _, counts = np.unique(np.column_stack(cols), axis=0, return_counts=True)
    return int(np.sum(counts * (counts - 1) // 2))


def concordance(pred, truth) -> tuple[int, int, int, int, int]:
    """(concordant - discordant, total pairs, pairs tied in pred, tied in truth, tied in both)."""
    p, t = _pair(pred, truth)
    n = p.size
    n0 = n * (n - 1) // 2
    order = np.lexsort((t, p))
    swaps = int(_count_inversions(t[order]))
    n1, n2, n3 = _tied_pairs(p), _tied_pairs(t), _tied_pairs(p, t)
    return n0 - n1 - n2 + n3 - 2 * swaps, n0, n1, n2, n3


def kendall_tau(pred, truth, variant: str = "a") -> float:
    """Kendall correlation; tau-a divides by all pairs, tau-b corrects for ties."""
    p, _ = _pair(pred, truth)
    if p.size < 2:
        raise ValueError("kendall_tau needs at least 2 observations")
    s, n0, n1, n2, _ = concordance(pred, truth)
    if variant == "a":
        return s / n0
    if variant == "b":
        denom = np.sqrt(float(n0 - n1) * float(n0 - n2))
        if denom == 0:
            log.warning("kendall_tau: all-tied input, returning 0")
            return 0.0
        return float(s / denom)
    raise ValueError(f"unknown Kendall variant {variant!r}")


def evaluate(pred, truth, items: Sequence | None = None, kendall_variant: str = "a") -> EvalReport:
    """Pooled metrics plus, when ``items`` is given, per-item averaged rank correlations."""
    p, t = _pair(pred, truth)
    report = EvalReport(
        mse=mse(p, t),
        r_squared=r_squared(p, t),
        spearman=spearman(p, t) if p.size >= 2 else 0.0,
        kendall=kendall_tau(p, t, kendall_variant) if p.size >= 2 else 0.0,
        n_test=int(p.size),
    )
    if items is not None:
        groups: dict = {}
        for k, item in enumerate(items):
            groups.setdefault(item, []).append(k)
        rho, tau = [], []
        for idx in groups.values():
            if len(idx) < 2:
                continue
            pi, ti = p[idx], t[idx]
            if np.ptp(pi) == 0 or np.ptp(ti) == 0:
                continue
            rho.append(spearman(pi, ti))
            tau.append(kendall_tau(pi, ti, kendall_variant))
        report.per_item = {
            "n_items": len(rho),
            "spearman": float(np.mean(rho)) if rho else 0.0,
            "kendall": float(np.mean(tau)) if tau else 0.0,
        }
    return report


def kl_rows(P: np.ndarray) -> np.ndarray:
    """Matrix of D_KL(P[i] || P[j]) in nats for strictly positive rows."""
    P = np.asarray(P, dtype=float)
    logP = np.log(P)
    K = np.vstack([(P[i] * (logP[i] - logP)).sum(axis=1) for i in range(P.shape[0])])
    np.fill_diagonal(K, 0.0)
    return np.maximum(K, 0.0)


def kl_matrices(state: ModelState) -> tuple[np.ndarray, np.ndarray]:
    """Facet-preference and language-model divergences between expertise levels.

    The language-model divergence compares the per-level joint distributions
    over (facet, word) cells, theta[e, z] * phi[e, z, w].
    """
    theta = state.theta
    joint = (theta[:, :, None] * state.phi_matrix()).reshape(state.hyper.E, -1)
    return kl_rows(theta), kl_rows(joint)


def salient_words(
    state: ModelState,
    review_tokens: Sequence[np.ndarray],
    levels: Sequence[int],
    scores: Sequence[float],
    top_k: int = 30,
) -> dict[tuple[str, str], list[tuple[str, float]]]:
    """Words that distinguish expert/amateur reviews in the most/least helpful quartiles.

    Each review contributes its expected word distribution: its facet
    proportions at its level mixed over the smoothed facet-word distributions.
    Words are scored by the log ratio of the cell's mean distribution to the
    corpus-wide mean distribution.
    """
    levels = np.asarray(levels, dtype=np.int64)
    scores = np.asarray(scores, dtype=float)
    phi = state.phi_matrix()
    W = state.W
    mix = np.zeros((len(review_tokens), W))
    for d, toks in enumerate(review_tokens):
        toks = np.asarray(toks, dtype=np.int64)
        if toks.size == 0:
            mix[d] = 1.0 / W
            continue
        s = phi[levels[d]][:, toks].sum(axis=1)
        mix[d] = (s / s.sum()) @ phi[levels[d]]
    glob = np.log(mix.mean(axis=0))

    lo, hi = np.quantile(scores, [0.25, 0.75]) if scores.size else (0.0, 0.0)
    tiers = {"expert": levels == state.hyper.E - 1, "amateur": levels == 0}
    helpful = {"most": scores >= hi, "least": scores <= lo}
    out = {}
    for tname, tmask in tiers.items():
        for hname, hmask in helpful.items():
            sel = tmask & hmask
            if not sel.any():
                log.warning("salient_words: no reviews in cell (%s, %s)", tname, hname)
                out[(tname, hname)] = []
                continue
            contrast = np.log(mix[sel].mean(axis=0)) - glob
            order = np.lexsort((np.arange(W), -contrast))[: min(top_k, W)]
            out[(tname, hname)] = [(state.vocab.index_to_word[w], float(contrast[w])) for w in order]
    return out
