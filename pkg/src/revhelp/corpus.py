"""Review ingestion, tokenization, vocabulary building and train/test splitting."""

from __future__ import annotations

import json
import logging
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

log = logging.getLogger(__name__)


class CorpusError(RuntimeError):
    """Fatal data error raised while building a corpus."""


DEFAULT_SCHEMA = {
    "user_id": "user",
    "item_id": "item",
    "rating": "rating",
    "timestamp": "time",
    "text": "text",
    "votes": "helpful",
}

STOPWORDS = frozenset(
    """
    a about above after again against all am an and any are as at be because been
    before being below between both but by can could did do does doing down during
    each few for from further had has have having he her here hers herself him
    himself his how i if in into is it its itself just me more most my myself no nor
    not now of off on once only or other our ours ourselves out over own same she
    should so some such than that the their theirs them themselves then there these
    they this those through to too under until up very was we were what when where
    which while who whom why will with would you your yours yourself yourselves
    """.split()
)

_SPLIT = re.compile(r"[^0-9a-z]+")


@dataclass(frozen=True)
class Review:
    user_id: str
    item_id: str
    rating: float
    timestamp: int
    text: str
    helpful_votes: int
    total_votes: int

    @property
    def helpfulness(self) -> float | None:
        if self.total_votes <= 0:
            return None
        return self.helpful_votes / self.total_votes


@dataclass
class TokenizedReview:
    review_index: int
    user_key: int
    item_key: int
    tokens: np.ndarray
    rating: float
    timestamp: int
    helpfulness: float
    user_id: str = ""
    item_id: str = ""

    def to_json(self) -> dict:
        return {
            "review_index": self.review_index,
            "user_key": self.user_key,
            "item_key": self.item_key,
            "user_id": self.user_id,
            "item_id": self.item_id,
            "rating": self.rating,
            "timestamp": self.timestamp,
            "helpfulness": self.helpfulness,
            "tokens": [int(t) for t in self.tokens],
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "TokenizedReview":
        return cls(
            review_index=int(obj["review_index"]),
            user_key=int(obj["user_key"]),
            item_key=int(obj["item_key"]),
            tokens=np.asarray(obj["tokens"], dtype=np.int64),
            rating=float(obj["rating"]),
            timestamp=int(obj["timestamp"]),
            helpfulness=float(obj["helpfulness"]),
            user_id=str(obj.get("user_id", "")),
            item_id=str(obj.get("item_id", "")),
        )


@dataclass
class Vocabulary:
    index_to_word: list[str]
    doc_frequency: np.ndarray
    word_to_index: dict[str, int] = field(init=False)

    def __post_init__(self) -> None:
        self.word_to_index = {w: i for i, w in enumerate(self.index_to_word)}
        self.doc_frequency = np.asarray(self.doc_frequency, dtype=np.int64)
        if len(self.word_to_index) != len(self.index_to_word):
            raise CorpusError("vocabulary words are not unique")

    def __len__(self) -> int:
        return len(self.index_to_word)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Vocabulary):
            return NotImplemented
        return self.index_to_word == other.index_to_word and np.array_equal(
            self.doc_frequency, other.doc_frequency
        )

    def encode(self, tokens: Iterable[str]) -> np.ndarray:
        idx = [self.word_to_index[t] for t in tokens if t in self.word_to_index]
        return np.asarray(idx, dtype=np.int64)

    def to_tsv(self) -> str:
        return "".join(
            f"{i}\t{w}\t{int(df)}\n"
            for i, (w, df) in enumerate(zip(self.index_to_word, self.doc_frequency))
        )

    @classmethod
    def from_tsv(cls, text: str) -> "Vocabulary":
        words, dfs = [], []
        for n, line in enumerate(text.splitlines()):
            if not line:
                continue
            i, w, df = line.split("\t")
            if int(i) != n:
                raise CorpusError(f"vocab.tsv: non-dense index {i} on line {n + 1}")
            words.append(w)
            dfs.append(int(df))
        return cls(words, np.asarray(dfs, dtype=np.int64))


@dataclass
class CorpusSplit:
    train: list[TokenizedReview]
    test: list[TokenizedReview]
    vocab: Vocabulary
    background_user_key: int
    dropped_counts: dict[str, int] = field(default_factory=dict)


@dataclass(frozen=True)
class TokenizePolicy:
    stopwords: frozenset[str] = STOPWORDS
    min_length: int = 2


def tokenize(text: str, policy: TokenizePolicy = TokenizePolicy()) -> list[str]:
    """Lowercase, split on non-alphanumeric runs, drop stopwords and short tokens."""
    return [
        t
        for t in _SPLIT.split(text.lower())
        if len(t) >= policy.min_length and t not in policy.stopwords
    ]


def _parse_record(obj: Mapping, schema: Mapping[str, str]) -> Review:
    def get(name):
        key = schema[name]
        if key not in obj:
            raise KeyError(name)
        return obj[key]

    if "votes" in schema:
        votes = get("votes")
        x, y = int(votes[0]), int(votes[1])
    else:
        x, y = int(get("helpful_votes")), int(get("total_votes"))
    if x < 0 or y < 0 or x > y:
        raise ValueError(f"invalid votes {x}/{y}")
    text = get("text")
    if not isinstance(text, str):
        raise ValueError("text is not a string")
    return Review(
        user_id=str(get("user_id")),
        item_id=str(get("item_id")),
        rating=float(get("rating")),
        timestamp=int(get("timestamp")),
        text=text,
        helpful_votes=x,
        total_votes=y,
    )


def ingest(
    path: str | Path,
    schema: Mapping[str, str] | None = None,
    diagnostics: dict[str, int] | None = None,
) -> list[Review]:
    """Read a JSON Lines review dump.

    Malformed lines are skipped and tallied into ``diagnostics`` under
    ``missing_field`` or ``malformed``. More than half the lines being bad is fatal.
    """
    schema = dict(DEFAULT_SCHEMA if schema is None else schema)
    diagnostics = {} if diagnostics is None else diagnostics
    try:
        raw = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise CorpusError(f"cannot read {path}: {exc}") from exc

    reviews: list[Review] = []
    offenders: list[str] = []
    n_lines = 0
    for lineno, line in enumerate(raw.splitlines(), start=1):
        if not line.strip():
            continue
        n_lines += 1
        try:
            obj = json.loads(line)
            if not isinstance(obj, dict):
                raise ValueError("not an object")
            reviews.append(_parse_record(obj, schema))
        except KeyError:
            diagnostics["missing_field"] = diagnostics.get("missing_field", 0) + 1
            offenders.append(f"line {lineno}: {line[:80]}")
        except (ValueError, TypeError, IndexError):
            diagnostics["malformed"] = diagnostics.get("malformed", 0) + 1
            offenders.append(f"line {lineno}: {line[:80]}")

    if n_lines == 0:
        log.warning("%s contains no reviews", path)
    elif len(offenders) * 2 > n_lines:
        sample = "\n  ".join(offenders[:5])
        raise CorpusError(
            f"{len(offenders)} of {n_lines} lines in {path} are malformed; e.g.\n  {sample}"
        )
    return reviews


def build_vocabulary(
    token_lists: Iterable[Sequence[str]], min_df: int = 5, max_vocab: int = 50000
) -> Vocabulary:
    """Keep words with document frequency >= min_df, at most max_vocab of them.

    Words are ordered by descending df, ties broken lexicographically.
    """
    if min_df < 1:
        raise ValueError("min_df must be >= 1")
    df: Counter[str] = Counter()
    for toks in token_lists:
        df.update(set(toks))
    kept = sorted((w for w, c in df.items() if c >= min_df), key=lambda w: (-df[w], w))
    kept = kept[:max_vocab]
    if not kept:
        raise CorpusError(f"empty vocabulary after filtering with min_df={min_df}")
    return Vocabulary(kept, np.array([df[w] for w in kept], dtype=np.int64))


def split_corpus(
    reviews: Sequence[Review],
    train_min_votes: int = 20,
    test_min_votes: int = 5,
    test_per_user: int = 3,
    longtail_threshold: int = 10,
    min_df: int = 5,
    max_vocab: int = 50000,
    policy: TokenizePolicy = TokenizePolicy(),
    vocab: Vocabulary | None = None,
) -> CorpusSplit:
    """Form the withheld test set, the vote-filtered train set and the background user.

    Per user, the ``test_per_user`` most recent reviews with at least
    ``test_min_votes`` votes are withheld; the remaining ones with at least
    ``train_min_votes`` votes form the train set. The vocabulary (unless given)
    is built from train candidates only. Users left with fewer than
    ``longtail_threshold`` train reviews share the background user key.
    """
    for name, v in [
        ("train_min_votes", train_min_votes),
        ("test_min_votes", test_min_votes),
        ("test_per_user", test_per_user),
        ("longtail_threshold", longtail_threshold),
    ]:
        if v < 1:
            raise ValueError(f"{name} must be >= 1")

    dropped: Counter[str] = Counter()
    by_user: dict[str, list[int]] = defaultdict(list)
    for pos, r in enumerate(reviews):
        if r.total_votes <= 0:
            dropped["no_votes"] += 1
            continue
        by_user[r.user_id].append(pos)

    train_pos: list[int] = []
    test_pos: list[int] = []
    for user in sorted(by_user):
        # input position breaks timestamp ties
        positions = sorted(by_user[user], key=lambda p: (reviews[p].timestamp, p))
        eligible = [p for p in positions if reviews[p].total_votes >= test_min_votes]
        withheld = set(eligible[-test_per_user:]) if eligible else set()
        for p in positions:
            if p in withheld:
                test_pos.append(p)
            elif reviews[p].total_votes >= train_min_votes:
                train_pos.append(p)
            else:
                dropped["below_train_votes"] += 1

    texts = {p: tokenize(reviews[p].text, policy) for p in train_pos + test_pos}
    if vocab is None:
        if not train_pos:
            raise CorpusError(
                f"empty train set (train_min_votes={train_min_votes}); try a lower threshold"
            )
        vocab = build_vocabulary((texts[p] for p in train_pos), min_df, max_vocab)

    encoded = {p: vocab.encode(texts[p]) for p in texts}
    for name, positions in [("train", train_pos), ("test", test_pos)]:
        empty = [p for p in positions if encoded[p].size == 0]
        if empty:
            dropped[f"empty_{name}_tokens"] += len(empty)
            positions[:] = [p for p in positions if encoded[p].size]
    if not train_pos:
        raise CorpusError(
            f"empty train set after filtering (train_min_votes={train_min_votes}); "
            "try a lower threshold"
        )

    train_counts = Counter(reviews[p].user_id for p in train_pos)
    regular = sorted(u for u, c in train_counts.items() if c >= longtail_threshold)
    user_key = {u: k for k, u in enumerate(regular)}
    background = len(regular)
    items = sorted({reviews[p].item_id for p in train_pos + test_pos})
    item_key = {it: k for k, it in enumerate(items)}

    def make(p: int) -> TokenizedReview:
        r = reviews[p]
        return TokenizedReview(
            review_index=p,
            user_key=user_key.get(r.user_id, background),
            item_key=item_key[r.item_id],
            tokens=encoded[p],
            rating=r.rating,
            timestamp=r.timestamp,
            helpfulness=r.helpful_votes / r.total_votes,
            user_id=r.user_id,
            item_id=r.item_id,
        )

    train = sorted((make(p) for p in train_pos), key=lambda d: (d.timestamp, d.review_index))
    test = sorted((make(p) for p in test_pos), key=lambda d: (d.timestamp, d.review_index))
    return CorpusSplit(train, test, vocab, background, dict(sorted(dropped.items())))


def write_jsonl(path: str | Path, rows: Iterable[Mapping]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def save_split(split: CorpusSplit, out_dir: str | Path) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_jsonl(out / "train.jsonl", (d.to_json() for d in split.train))
    write_jsonl(out / "test.jsonl", (d.to_json() for d in split.test))
    (out / "vocab.tsv").write_text(split.vocab.to_tsv(), encoding="utf-8", newline="\n")
    meta = {"background_user_key": split.background_user_key, "dropped_counts": split.dropped_counts}
    (out / "split.json").write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n", encoding="utf-8")


def load_split(data_dir: str | Path) -> CorpusSplit:
    d = Path(data_dir)
    try:
        vocab = Vocabulary.from_tsv((d / "vocab.tsv").read_text(encoding="utf-8"))
        meta = json.loads((d / "split.json").read_text(encoding="utf-8"))

        def read(name):
            with open(d / name, encoding="utf-8") as fh:
                return [TokenizedReview.from_json(json.loads(line)) for line in fh if line.strip()]

        train, test = read("train.jsonl"), read("test.jsonl")
    except (OSError, ValueError, KeyError) as exc:
        raise CorpusError(f"cannot load prepared data from {d}: {exc}") from exc
    W = len(vocab)
    for doc in train + test:
        if doc.tokens.size and (doc.tokens.min() < 0 or doc.tokens.max() >= W):
            raise CorpusError(f"review {doc.review_index} has token index outside vocabulary")
    return CorpusSplit(train, test, vocab, int(meta["background_user_key"]), meta["dropped_counts"])
