"""Forward simulation of the review generative process with known parameters."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import CorpusSplit, Review, TokenizedReview, Vocabulary, write_jsonl
from .features import N_CONSISTENCY, YEAR_SECONDS


class SynthError(ValueError):
    pass


@dataclass
class SynthConfig:
    E: int = 2
    Z: int = 3
    W: int = 100
    n_users: int = 100
    reviews_per_user: int = 20
    n_items: int = 40
    doc_length: int = 50
    seed: int = 0
    noise: float = 0.05
    test_per_user: int = 0
    advance_prob: float = 0.08
    time_step: int = 86400
    start_time: int = 1_300_000_000
    votes: int = 100
    timeliness_scale: float = YEAR_SECONDS
    true_theta: np.ndarray | None = None
    true_phi: np.ndarray | None = None
    true_pi: np.ndarray | None = None
    helpfulness_weights: np.ndarray | None = None


@dataclass
class SyntheticCorpus:
    split: CorpusSplit
    reviews: list[Review]
    theta: np.ndarray
    phi: np.ndarray
    pi: np.ndarray
    psi: np.ndarray
    train_levels: np.ndarray
    test_levels: np.ndarray
    train_features: np.ndarray
    test_features: np.ndarray
    train_facets: list[np.ndarray] = field(default_factory=list)
    n_clamped: int = 0

    def ground_truth(self) -> dict:
        return {
            "theta": self.theta.tolist(),
            "phi": self.phi.tolist(),
            "pi": self.pi.tolist(),
            "psi": self.psi.tolist(),
            "train": [
                {"review_index": d.review_index, "level": int(lv) + 1}
                for d, lv in zip(self.split.train, self.train_levels)
            ],
            "test": [
                {"review_index": d.review_index, "level": int(lv) + 1}
                for d, lv in zip(self.split.test, self.test_levels)
            ],
        }


def word_blocks(E: int, Z: int, W: int) -> list[list[np.ndarray]]:
    """Disjoint word index blocks per (level, facet).

    The entry level gets one share of the vocabulary and every higher level
    three, so expert words are individually rarer than entry-level words.
    """
    share = np.where(np.arange(E) == 0, 1.0, 3.0)
    per_level = np.floor(W * share / share.sum()).astype(int)
    per_level[-1] += W - per_level.sum()
    blocks, start = [], 0
    for e in range(E):
        sizes = np.full(Z, per_level[e] // Z)
        sizes[: per_level[e] % Z] += 1
        if sizes.min() < 5:
            raise SynthError(f"W={W} too small for disjoint 5-word blocks with E={E}, Z={Z}")
        row = []
        for s in sizes:
            row.append(np.arange(start, start + s))
            start += s
        blocks.append(row)
    return blocks


def default_phi(E: int, Z: int, W: int) -> np.ndarray:
    """Each (level, facet) owns a disjoint block: five head words at weight 2, tail at weight 1."""
    phi = np.zeros((E, Z, W))
    for e, row in enumerate(word_blocks(E, Z, W)):
        for z, block in enumerate(row):
            weights = np.ones(block.size)
            weights[:5] = 2.0
            phi[e, z, block] = weights / weights.sum()
    return phi


def default_theta(E: int, Z: int) -> np.ndarray:
    a = np.linspace(2.0, 1.0, Z)
    b = a[::-1].copy()
    s = np.linspace(0.0, 1.0, E)[:, None]
    theta = (1 - s) * a + s * b
    return theta / theta.sum(axis=1, keepdims=True)


def default_pi(E: int, advance: float) -> np.ndarray:
    pi = np.eye(E) * (1 - advance)
    for e in range(E - 1):
        pi[e, e + 1] = advance
    pi[E - 1, E - 1] = 1.0
    return pi


def default_psi(E: int, Z: int) -> np.ndarray:
    """Bias, consistency weights and a latent block whose facet contrast grows with level."""
    cons = np.array([0.3, 0.2, -0.04, -0.04, -0.02, 0.05])
    latent = np.linspace(0.0, 1.0, E)[:, None] * np.linspace(-0.35, 0.35, Z)[None, :]
    return np.concatenate([[0.2], cons, latent.ravel()])


def _check_simplex(name: str, rows: np.ndarray) -> None:
    if np.any(rows < 0) or not np.allclose(rows.sum(axis=-1), 1.0, atol=1e-9):
        raise SynthError(f"{name} rows must lie on the probability simplex")


def generate(cfg: SynthConfig) -> SyntheticCorpus:
    """Simulate users whose expertise starts at the entry level and advances one step at a time."""
    E, Z, W = cfg.E, cfg.Z, cfg.W
    theta = default_theta(E, Z) if cfg.true_theta is None else np.asarray(cfg.true_theta, dtype=float)
    phi = default_phi(E, Z, W) if cfg.true_phi is None else np.asarray(cfg.true_phi, dtype=float)
    pi = default_pi(E, cfg.advance_prob) if cfg.true_pi is None else np.asarray(cfg.true_pi, dtype=float)
    psi = default_psi(E, Z) if cfg.helpfulness_weights is None else np.asarray(cfg.helpfulness_weights, dtype=float)
    if theta.shape != (E, Z) or phi.shape != (E, Z, W) or pi.shape != (E, E):
        raise SynthError("true parameter shapes do not match (E, Z, W)")
    if psi.shape != (1 + N_CONSISTENCY + E * Z,):
        raise SynthError(f"helpfulness_weights must have {1 + N_CONSISTENCY + E * Z} entries")
    _check_simplex("true_theta", theta)
    _check_simplex("true_phi", phi)
    _check_simplex("true_pi", pi)
    for a in range(E):
        for b in range(E):
            if pi[a, b] > 0 and b not in (a, a + 1):
                raise SynthError(f"true_pi allows illegal transition {a + 1} -> {b + 1}")

    phi_cdf = np.cumsum(phi, axis=2)
    root = np.random.SeedSequence(cfg.seed)
    global_ss, *user_ss = root.spawn(cfg.n_users + 1)
    g = np.random.default_rng(global_ss)
    item_offset = g.normal(0.0, 0.5, cfg.n_items)
    item_quality = g.uniform(0.2, 0.8, cfg.n_items)

    rows = []
    for u in range(cfg.n_users):
        rng = np.random.default_rng(user_ss[u])
        user_quality = rng.uniform(0.2, 0.8)
        user_mean = rng.uniform(3.0, 4.5)
        t = cfg.start_time + int(rng.integers(0, int(2 * YEAR_SECONDS)))
        level = 0
        for k in range(cfg.reviews_per_user):
            if k > 0:
                level = int(rng.choice(E, p=pi[level]))
            facets = rng.choice(Z, size=cfg.doc_length, p=theta[level])
            words = np.empty(cfg.doc_length, dtype=np.int64)
            for z in np.unique(facets):
                sel = facets == z
                words[sel] = np.searchsorted(phi_cdf[level, z], rng.random(sel.sum()), side="right")
            np.minimum(words, W - 1, out=words)
            item = int(rng.integers(cfg.n_items))
            rating = float(np.clip(np.rint(user_mean + item_offset[item] + rng.normal(0, 1)), 1, 5))
            rows.append(
                dict(user=u, item=item, t=t, level=level, facets=facets, words=words, rating=rating,
                     user_quality=user_quality, user_mean=user_mean, noise=rng.normal(0.0, cfg.noise) if cfg.noise > 0 else 0.0,
                     last=k >= cfg.reviews_per_user - cfg.test_per_user)
            )
            t += cfg.time_step

    item_t0: dict[int, int] = {}
    for r in rows:
        item_t0[r["item"]] = min(item_t0.get(r["item"], r["t"]), r["t"])
    item_mean = {i: 3.75 + item_offset[i] for i in range(cfg.n_items)}
    global_mean = 3.75

    n_clamped = 0
    for r in rows:
        xi = phi[r["level"]][:, r["words"]].sum(axis=1)
        block = np.zeros((E, Z))
        block[r["level"]] = xi / xi.sum()
        b_t = math.exp(-(r["t"] - item_t0[r["item"]]) / cfg.timeliness_scale)
        cons = [
            r["user_quality"], item_quality[r["item"]], abs(r["rating"] - r["user_mean"]),
            abs(r["rating"] - item_mean[r["item"]]), abs(r["rating"] - global_mean), b_t,
        ]
        r["features"] = np.concatenate([cons, block.ravel()])
        h = psi[0] + r["features"] @ psi[1:] + r["noise"]
        if not 0.0 <= h <= 1.0:
            n_clamped += 1
        r["h"] = float(np.clip(h, 0.0, 1.0))

    words = [f"w{w:0{len(str(W - 1))}d}" for w in range(W)]
    reviews, train, test = [], [], []
    train_meta, test_meta = [], []
    for pos, r in enumerate(rows):
        x = int(round(r["h"] * cfg.votes))
        reviews.append(Review(f"u{r['user']}", f"i{r['item']}", r["rating"], r["t"],
                              " ".join(words[w] for w in r["words"]), x, cfg.votes))
        doc = TokenizedReview(pos, r["user"], r["item"], r["words"], r["rating"], r["t"], r["h"],
                              f"u{r['user']}", f"i{r['item']}")
        (test if r["last"] else train).append(doc)
        (test_meta if r["last"] else train_meta).append(r)

    def ordered(docs, meta):
        order = sorted(range(len(docs)), key=lambda k: (docs[k].timestamp, docs[k].review_index))
        return [docs[k] for k in order], [meta[k] for k in order]

    train, train_meta = ordered(train, train_meta)
    test, test_meta = ordered(test, test_meta)
    df = np.zeros(W, dtype=np.int64)
    for d in train:
        df[np.unique(d.tokens)] += 1
    split = CorpusSplit(train, test, Vocabulary(words, df), cfg.n_users, {})

    def feats(meta):
        return np.vstack([m["features"] for m in meta]) if meta else np.zeros((0, psi.size - 1))

    return SyntheticCorpus(
        split=split,
        reviews=reviews,
        theta=theta,
        phi=phi,
        pi=pi,
        psi=psi,
        train_levels=np.array([m["level"] for m in train_meta], dtype=np.int64),
        test_levels=np.array([m["level"] for m in test_meta], dtype=np.int64),
        train_features=feats(train_meta),
        test_features=feats(test_meta),
        train_facets=[m["facets"] for m in train_meta],
        n_clamped=n_clamped,
    )


def write_corpus(corpus: SyntheticCorpus, out_dir: str | Path) -> None:
    """Write reviews.jsonl in the default ingestion schema plus ground_truth.json."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_jsonl(
        out / "reviews.jsonl",
        (
            {"user": r.user_id, "item": r.item_id, "rating": r.rating, "time": r.timestamp,
             "text": r.text, "helpful": [r.helpful_votes, r.total_votes]}
            for r in corpus.reviews
        ),
    )
    (out / "ground_truth.json").write_text(json.dumps(corpus.ground_truth(), sort_keys=True) + "\n", encoding="utf-8")
