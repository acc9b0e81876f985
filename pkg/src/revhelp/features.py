"""Observed consistency features: reputation, prominence, rating deviations, timeliness."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .corpus import TokenizedReview

log = logging.getLogger(__name__)

YEAR_SECONDS = 365.25 * 86400.0
N_CONSISTENCY = 6
CONSISTENCY_NAMES = (
    "user_reputation",
    "item_prominence",
    "user_rating_dev",
    "item_rating_dev",
    "global_rating_dev",
    "timeliness",
)


@dataclass(frozen=True)
class UserStats:
    beta_u: float
    mean_rating_u: float
    review_count: int
    activity_rate: float


@dataclass(frozen=True)
class ItemStats:
    beta_i: float
    mean_rating_i: float
    first_review_time: int


@dataclass(frozen=True)
class GlobalStats:
    mean_rating_g: float
    mean_posts_per_user: float
    mean_helpfulness_g: float
    rating_scale: tuple[float, float]


@dataclass
class Stats:
    users: dict[int, UserStats]
    items: dict[int, ItemStats]
    glob: GlobalStats
    background_user_key: int = -1
    timeliness_scale: float = YEAR_SECONDS

    def user(self, key: int) -> UserStats:
        """Stats for a user key; unseen users fall back to the background user, then global means."""
        if key in self.users:
            return self.users[key]
        if self.background_user_key in self.users:
            return self.users[self.background_user_key]
        g = self.glob
        return UserStats(g.mean_helpfulness_g, g.mean_rating_g, 0, 0.0)


@dataclass
class FeatureVector:
    consistency: np.ndarray
    latent: np.ndarray

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.consistency, self.latent])


def activity_rate(review_count: int, mean_posts: float) -> float:
    return review_count / (review_count + mean_posts)


def compute_stats(
    train: Sequence[TokenizedReview],
    background_user_key: int = -1,
    timeliness_scale: float = YEAR_SECONDS,
) -> Stats:
    """Per-user, per-item and global statistics over the training reviews.

    The background user is one user when computing the mean post count.
    """
    if not train:
        raise ValueError("compute_stats needs at least one training review")
    user_h: dict[int, list[float]] = {}
    user_r: dict[int, list[float]] = {}
    item_h: dict[int, list[float]] = {}
    item_r: dict[int, list[float]] = {}
    item_t0: dict[int, int] = {}
    for d in train:
        user_h.setdefault(d.user_key, []).append(d.helpfulness)
        user_r.setdefault(d.user_key, []).append(d.rating)
        item_h.setdefault(d.item_key, []).append(d.helpfulness)
        item_r.setdefault(d.item_key, []).append(d.rating)
        item_t0[d.item_key] = min(item_t0.get(d.item_key, d.timestamp), d.timestamp)

    ratings = [d.rating for d in train]
    d_avg = len(train) / len(user_h)
    glob = GlobalStats(
        mean_rating_g=float(np.mean(ratings)),
        mean_posts_per_user=d_avg,
        mean_helpfulness_g=float(np.mean([d.helpfulness for d in train])),
        rating_scale=(float(min(ratings)), float(max(ratings))),
    )
    users = {
        u: UserStats(
            beta_u=float(np.mean(user_h[u])),
            mean_rating_u=float(np.mean(user_r[u])),
            review_count=len(user_h[u]),
            activity_rate=activity_rate(len(user_h[u]), d_avg),
        )
        for u in sorted(user_h)
    }
    items = {
        i: ItemStats(float(np.mean(item_h[i])), float(np.mean(item_r[i])), item_t0[i])
        for i in sorted(item_h)
    }
    return Stats(users, items, glob, background_user_key, timeliness_scale)


def timeliness(t: int, t0: int, scale: float = YEAR_SECONDS) -> float:
    """Early-bird decay exp(-(t - t0) / scale); reviews older than t0 clamp to 1."""
    if scale <= 0:
        raise ValueError("timeliness scale must be positive")
    if t < t0:
        log.warning("review time %d precedes the item's first review time %d", t, t0)
        return 1.0
    return math.exp(-(t - t0) / scale)


def consistency_features(review: TokenizedReview, stats: Stats) -> np.ndarray:
    us = stats.user(review.user_key)
    g = stats.glob
    it = stats.items.get(review.item_key)
    if it is None:
        beta_i, mean_i, b_t = g.mean_helpfulness_g, g.mean_rating_g, 1.0
    else:
        beta_i, mean_i = it.beta_i, it.mean_rating_i
        b_t = timeliness(review.timestamp, it.first_review_time, stats.timeliness_scale)
    r = review.rating
    return np.array(
        [us.beta_u, beta_i, abs(r - us.mean_rating_u), abs(r - mean_i), abs(r - g.mean_rating_g), b_t]
    )


def feature_vector(review: TokenizedReview, stats: Stats, xi: np.ndarray) -> FeatureVector:
    return FeatureVector(consistency_features(review, stats), np.asarray(xi, dtype=float).ravel())


def consistency_matrix(reviews: Sequence[TokenizedReview], stats: Stats) -> np.ndarray:
    if not reviews:
        return np.zeros((0, N_CONSISTENCY))
    return np.vstack([consistency_features(d, stats) for d in reviews])


def stats_tsv(stats: Stats) -> str:
    lines = ["user_key\tbeta_u\tmean_rating_u\treview_count\tactivity_rate\n"]
    for u, s in stats.users.items():
        lines.append(f"{u}\t{s.beta_u!r}\t{s.mean_rating_u!r}\t{s.review_count}\t{s.activity_rate!r}\n")
    return "".join(lines)


def item_stats_tsv(stats: Stats) -> str:
    lines = ["item_key\tbeta_i\tmean_rating_i\tfirst_review_time\n"]
    for i, s in stats.items.items():
        lines.append(f"{i}\t{s.beta_i!r}\t{s.mean_rating_i!r}\t{s.first_review_time}\n")
    return "".join(lines)
