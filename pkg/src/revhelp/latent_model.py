"""Latent state of the joint model and its on-disk snapshot format.

Expertise levels are stored 0-based (index 0 is the entry level). The
regression vector ``psi`` is laid out as ``[bias, 6 consistency weights,
E*Z latent weights (row-major)]``.
"""

from __future__ import annotations

import dataclasses
import json
import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import CorpusSplit, Vocabulary
from .features import N_CONSISTENCY, YEAR_SECONDS

FORMAT_VERSION = 1
MAGIC = b"HLPS1"


class SnapshotError(RuntimeError):
    pass


@dataclass
class HyperParams:
    E: int = 5
    Z: int = 50
    delta: float = 0.1
    mu: float = 1e-3
    outer_iterations: int = 30
    seed: int = 0
    timeliness_scale: float = YEAR_SECONDS
    tol: float = 1e-5
    patience: int = 3
    facet_sweeps: int = 1
    expertise_sweeps: int = 1

    def __post_init__(self) -> None:
        if self.E < 2 or self.Z < 2:
            raise ValueError(f"need E >= 2 and Z >= 2, got E={self.E}, Z={self.Z}")
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.mu < 0:
            raise ValueError("mu must be non-negative")
        if self.outer_iterations < 0:
            raise ValueError("outer_iterations must be non-negative")
        if self.timeliness_scale <= 0:
            raise ValueError("timeliness_scale must be positive")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 bits")

    @property
    def n_params(self) -> int:
        return 1 + N_CONSISTENCY + self.E * self.Z


@dataclass
class ModelState:
    psi: np.ndarray
    word_counts: np.ndarray
    word_row_totals: np.ndarray
    transition_counts: np.ndarray
    vocab: Vocabulary
    hyper: HyperParams

    @property
    def W(self) -> int:
        return self.word_counts.shape[2]

    @property
    def psi_block(self) -> np.ndarray:
        return self.psi[1 + N_CONSISTENCY :].reshape(self.hyper.E, self.hyper.Z)

    @property
    def theta(self) -> np.ndarray:
        return theta_from_psi(self.psi_block)

    def phi_matrix(self) -> np.ndarray:
        """Smoothed expertise-facet-word distributions, shape (E, Z, W)."""
        d = self.hyper.delta
        return (self.word_counts + d) / (self.word_row_totals[:, :, None] + self.W * d)

    def copy(self) -> "ModelState":
        return ModelState(
            self.psi.copy(),
            self.word_counts.copy(),
            self.word_row_totals.copy(),
            self.transition_counts.copy(),
            self.vocab,
            dataclasses.replace(self.hyper),
        )


@dataclass
class Assignments:
    facets: np.ndarray
    offsets: np.ndarray
    levels: np.ndarray

    def doc_facets(self, d: int) -> np.ndarray:
        return self.facets[self.offsets[d] : self.offsets[d + 1]]

    def copy(self) -> "Assignments":
        return Assignments(self.facets.copy(), self.offsets.copy(), self.levels.copy())


def theta_from_psi(psi_block: np.ndarray) -> np.ndarray:
    """Row-wise softmax mapping natural parameters onto the simplex."""
    psi_block = np.asarray(psi_block, dtype=float)
    shifted = psi_block - psi_block.max(axis=-1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=-1, keepdims=True)


def phi(e: int, z: int, w: int, state: ModelState) -> float:
    d = state.hyper.delta
    return (state.word_counts[e, z, w] + d) / (state.word_row_totals[e, z] + state.W * d)


def xi_for_review(
    tokens: np.ndarray, e: int, state: ModelState, phi_matrix: np.ndarray | None = None
) -> np.ndarray:
    """Facet proportions of a review at level ``e``, placed in row ``e`` of an E x Z block.

    An empty token sequence yields the all-zero block.
    """
    E, Z = state.hyper.E, state.hyper.Z
    out = np.zeros((E, Z))
    tokens = np.asarray(tokens, dtype=np.int64)
    if tokens.size == 0:
        return out
    pm = state.phi_matrix() if phi_matrix is None else phi_matrix
    s = pm[e][:, tokens].sum(axis=1)
    out[e] = s / s.sum()
    return out


def recount(assignments: Assignments, tokens: np.ndarray, E: int, Z: int, W: int):
    """Rebuild (word_counts, word_row_totals) from scratch."""
    doc_of_token = np.repeat(np.arange(len(assignments.levels)), np.diff(assignments.offsets))
    counts = np.zeros((E, Z, W), dtype=np.int64)
    np.add.at(counts, (assignments.levels[doc_of_token], assignments.facets, tokens), 1)
    return counts, counts.sum(axis=2)


def recount_transitions(levels: np.ndarray, prev_doc: np.ndarray, E: int) -> np.ndarray:
    """Transition counts with a virtual entry-level predecessor for each user's first review."""
    src = np.where(prev_doc >= 0, levels[np.maximum(prev_doc, 0)], 0)
    trans = np.zeros((E, E), dtype=np.int64)
    np.add.at(trans, (src, levels), 1)
    return trans


def previous_review(user_keys: np.ndarray) -> np.ndarray:
    """Index of each review's predecessor by the same user (reviews already time-ordered)."""
    last: dict[int, int] = {}
    prev = np.full(len(user_keys), -1, dtype=np.int64)
    for d, u in enumerate(user_keys):
        prev[d] = last.get(int(u), -1)
        last[int(u)] = d
    return prev


def init(hyper: HyperParams, split: CorpusSplit) -> tuple[ModelState, Assignments]:
    """Uniformly random facets, every review at the entry level, zero regression weights."""
    E, Z, W = hyper.E, hyper.Z, len(split.vocab)
    rng = np.random.default_rng(hyper.seed)
    lengths = np.array([len(d.tokens) for d in split.train], dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(lengths)]).astype(np.int64)
    tokens = (
        np.concatenate([d.tokens for d in split.train]).astype(np.int64)
        if split.train
        else np.zeros(0, dtype=np.int64)
    )
    facets = rng.integers(0, Z, size=tokens.size, dtype=np.int64)
    levels = np.zeros(len(split.train), dtype=np.int64)
    assignments = Assignments(facets, offsets, levels)
    counts, totals = recount(assignments, tokens, E, Z, W)
    prev = previous_review(np.array([d.user_key for d in split.train], dtype=np.int64))
    state = ModelState(
        psi=np.zeros(hyper.n_params),
        word_counts=counts,
        word_row_totals=totals,
        transition_counts=recount_transitions(levels, prev, E),
        vocab=split.vocab,
        hyper=hyper,
    )
    return state, assignments


# --- snapshot persistence -------------------------------------------------


def _encode_arrays(arrays: list[np.ndarray]) -> bytes:
    parts = [MAGIC, struct.pack("<I", len(arrays))]
    for a in arrays:
        if a.dtype.kind == "f":
            code, data = b"f", a.astype("<f8")
        elif a.dtype.kind in "iu":
            code, data = b"i", a.astype("<i8")
        else:
            raise TypeError(f"unsupported dtype {a.dtype}")
        parts.append(code + struct.pack("<B", a.ndim) + struct.pack(f"<{a.ndim}q", *a.shape))
        parts.append(np.ascontiguousarray(data).tobytes())
    return b"".join(parts)


def _decode_arrays(buf: bytes, name: str) -> list[np.ndarray]:
    if buf[: len(MAGIC)] != MAGIC:
        raise SnapshotError(f"{name}: bad magic header")
    pos = len(MAGIC)
    (n,) = struct.unpack_from("<I", buf, pos)
    pos += 4
    out = []
    for _ in range(n):
        code = buf[pos : pos + 1]
        (ndim,) = struct.unpack_from("<B", buf, pos + 1)
        pos += 2
        shape = struct.unpack_from(f"<{ndim}q", buf, pos)
        pos += 8 * ndim
        dtype = {b"f": "<f8", b"i": "<i8"}.get(code)
        if dtype is None:
            raise SnapshotError(f"{name}: unknown dtype code {code!r}")
        size = int(np.prod(shape, dtype=np.int64)) * 8
        arr = np.frombuffer(buf, dtype=dtype, count=size // 8, offset=pos).reshape(shape)
        out.append(arr.astype(np.float64 if code == b"f" else np.int64))
        pos += size
    if pos != len(buf):
        raise SnapshotError(f"{name}: trailing bytes")
    return out


def save_snapshot(
    state: ModelState, assignments: Assignments, directory: str | Path, extra: dict | None = None
) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    blobs = {
        "psi.bin": _encode_arrays([state.psi]),
        "counts_ezw.bin": _encode_arrays([state.word_counts]),
        "trans_ee.bin": _encode_arrays([state.transition_counts]),
        "assignments.bin": _encode_arrays([assignments.facets, assignments.offsets, assignments.levels]),
        "vocab.tsv": state.vocab.to_tsv().encode("utf-8"),
    }
    for name, blob in blobs.items():
        (d / name).write_bytes(blob)
    manifest = {
        "format_version": FORMAT_VERSION,
        "hyper": dataclasses.asdict(state.hyper),
        "W": state.W,
        "n_reviews": int(len(assignments.levels)),
        "n_tokens": int(len(assignments.facets)),
        "crc32": {name: zlib.crc32(blob) for name, blob in blobs.items()},
        "extra": extra or {},
    }
    (d / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def load_snapshot(
    directory: str | Path, expect: HyperParams | None = None
) -> tuple[ModelState, Assignments]:
    """Load and verify a snapshot; raises SnapshotError on any mismatch."""
    d = Path(directory)
    try:
        manifest = json.loads((d / "manifest.json").read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise SnapshotError(f"cannot read manifest in {d}: {exc}") from exc
    version = manifest.get("format_version")
    if version != FORMAT_VERSION:
        raise SnapshotError(f"snapshot format version {version}, this build reads version {FORMAT_VERSION}")
    blobs = {}
    for name, crc in manifest["crc32"].items():
        try:
            blob = (d / name).read_bytes()
        except OSError as exc:
            raise SnapshotError(f"missing snapshot file {name}: {exc}") from exc
        if zlib.crc32(blob) != crc:
            raise SnapshotError(f"checksum mismatch in {name}")
        blobs[name] = blob

    hyper = HyperParams(**manifest["hyper"])
    if expect is not None and (expect.E, expect.Z) != (hyper.E, hyper.Z):
        raise SnapshotError(f"snapshot has E={hyper.E}, Z={hyper.Z}; expected E={expect.E}, Z={expect.Z}")
    vocab = Vocabulary.from_tsv(blobs["vocab.tsv"].decode("utf-8"))
    (psi,) = _decode_arrays(blobs["psi.bin"], "psi.bin")
    (counts,) = _decode_arrays(blobs["counts_ezw.bin"], "counts_ezw.bin")
    (trans,) = _decode_arrays(blobs["trans_ee.bin"], "trans_ee.bin")
    facets, offsets, levels = _decode_arrays(blobs["assignments.bin"], "assignments.bin")

    E, Z, W = hyper.E, hyper.Z, len(vocab)
    expected_shapes = {
        "psi": ((hyper.n_params,), psi.shape),
        "word_counts": ((E, Z, W), counts.shape),
        "transition_counts": ((E, E), trans.shape),
        "offsets": ((manifest["n_reviews"] + 1,), offsets.shape),
        "facets": ((manifest["n_tokens"],), facets.shape),
    }
    for what, (want, got) in expected_shapes.items():
        if tuple(want) != tuple(got):
            raise SnapshotError(f"shape mismatch for {what}: manifest implies {want}, file has {got}")
    state = ModelState(psi, counts, counts.sum(axis=2), trans, vocab, hyper)
    return state, Assignments(facets, offsets, levels)


def read_manifest(directory: str | Path) -> dict:
    return json.loads((Path(directory) / "manifest.json").read_text(encoding="utf-8"))
