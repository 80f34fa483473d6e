"""Embedding storage, max-cosine scoring against symptom options, and
per-symptom threshold calibration.

A sentence's relevance to a symptom is its maximum cosine similarity against
the symptom's four option embeddings; a sentence only needs to be close to
one intensity level to be relevant, so the max is preferred over the mean.
Per-symptom classification thresholds are the mean train-split score plus
two standard deviations.

All dot products accumulate in float64, strictly sequentially over vector
components (no reassociation, no FMA), even though vectors are stored as
float32. This makes scoring bitwise reproducible: parallel and sequential
execution agree exactly, and a pure-Python left-to-right loop reproduces the
kernel's output bit for bit.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import IO, Mapping, Sequence

import numpy as np
from numba import njit, prange

from symptomrank.corpus import NUM_SYMPTOMS, OPTIONS_PER_SYMPTOM
from symptomrank.fileio import open_text, open_write
from symptomrank.runs import ScoreTable

EMBEDDING_MAGIC = b"EMB1"

OPTION_ID_TEMPLATE = "bdi:{symptom_id}:{intensity}"


class EmbeddingLoadError(ValueError):
    """Malformed embedding file."""


@dataclass
class EmbeddingStore:
    """Immutable id -> float32 vector store with a contiguous matrix."""

    dimension: int
    ids: list[str]
    matrix: np.ndarray  # (len(ids), dimension) float32

    def __post_init__(self):
        self._index = {doc_id: i for i, doc_id in enumerate(self.ids)}

    def __len__(self) -> int:
        return len(self.ids)

    def __contains__(self, doc_id: str) -> bool:
        return doc_id in self._index

    def vector(self, doc_id: str) -> np.ndarray:
        return self.matrix[self._index[doc_id]]

    def subset(self, doc_ids: Sequence[str]) -> "EmbeddingStore":
        """Store restricted to the given ids, in the given order."""
        missing = [d for d in doc_ids if d not in self._index]
        if missing:
            raise KeyError(f"missing embeddings for: {', '.join(missing[:10])}")
        rows = [self._index[d] for d in doc_ids]
        return EmbeddingStore(
            dimension=self.dimension, ids=list(doc_ids), matrix=self.matrix[rows]
        )

    @classmethod
    def from_vectors(cls, vectors: Mapping[str, Sequence[float]]) -> "EmbeddingStore":
        ids = list(vectors)
        matrix = np.asarray([vectors[i] for i in ids], dtype=np.float32)
        if matrix.ndim != 2:
            raise EmbeddingLoadError("vectors must share one dimension")
        if not np.all(np.isfinite(matrix)):
            raise EmbeddingLoadError("non-finite component in input vectors")
        return cls(dimension=matrix.shape[1], ids=ids, matrix=matrix)


def load_embeddings(source: str | Path | IO) -> EmbeddingStore:
    """Load vectors from the binary (EMB1) or line-delimited text format.

    Binary: magic "EMB1", u32-LE dimension, then per record a u16-LE id
    length, the UTF-8 id bytes, and dimension float32-LE components.
    Text: `doc_id<TAB>f1,f2,...,fD` lines. The format is sniffed from the
    first four bytes when a path or byte stream is given.
    """
    if isinstance(source, (str, Path)):
        with open(source, "rb") as fh:
            head = fh.read(4)
            fh.seek(0)
            if head == EMBEDDING_MAGIC:
                return _load_binary(fh)
            return _load_text_lines(fh.read().decode("utf-8").splitlines())
    if hasattr(source, "read"):
        data = source.read()
        if isinstance(data, bytes):
            if data[:4] == EMBEDDING_MAGIC:
                import io

                return _load_binary(io.BytesIO(data))
            return _load_text_lines(data.decode("utf-8").splitlines())
        return _load_text_lines(data.splitlines())
    raise TypeError(f"cannot load embeddings from {type(source)!r}")


def _load_binary(fh) -> EmbeddingStore:
    magic = fh.read(4)
    if magic != EMBEDDING_MAGIC:
        raise EmbeddingLoadError(f"bad magic {magic!r}, expected {EMBEDDING_MAGIC!r}")
    header = fh.read(4)
    if len(header) != 4:
        raise EmbeddingLoadError("truncated header")
    dimension = struct.unpack("<I", header)[0]
    if dimension == 0:
        raise EmbeddingLoadError("dimension must be positive")
    ids: list[str] = []
    rows: list[bytes] = []
    seen: set[str] = set()
    ordinal = 0
    vec_bytes = 4 * dimension
    while True:
        len_raw = fh.read(2)
        if not len_raw:
            break
        ordinal += 1
        if len(len_raw) != 2:
            raise EmbeddingLoadError(f"record {ordinal}: truncated id length")
        id_len = struct.unpack("<H", len_raw)[0]
        id_raw = fh.read(id_len)
        if len(id_raw) != id_len:
            raise EmbeddingLoadError(f"record {ordinal}: truncated id")
        doc_id = id_raw.decode("utf-8")
        raw = fh.read(vec_bytes)
        if len(raw) != vec_bytes:
            raise EmbeddingLoadError(
                f"record {ordinal} ({doc_id!r}): truncated vector "
                f"({len(raw)} of {vec_bytes} bytes)"
            )
        if doc_id in seen:
            raise EmbeddingLoadError(f"record {ordinal}: duplicate doc_id {doc_id!r}")
        seen.add(doc_id)
        ids.append(doc_id)
        rows.append(raw)
    matrix = (
        np.frombuffer(b"".join(rows), dtype="<f4").reshape(len(ids), dimension).copy()
        if ids
        else np.empty((0, dimension), dtype=np.float32)
    )
    bad = np.flatnonzero(~np.isfinite(matrix).all(axis=1))
    if bad.size:
        raise EmbeddingLoadError(
            f"record {bad[0] + 1} ({ids[bad[0]]!r}): non-finite component"
        )
    return EmbeddingStore(dimension=dimension, ids=ids, matrix=matrix)


def _load_text_lines(lines: Sequence[str]) -> EmbeddingStore:
    ids: list[str] = []
    rows: list[np.ndarray] = []
    seen: set[str] = set()
    dimension: int | None = None
    ordinal = 0
    for line in lines:
        if not line.strip():
            continue
        ordinal += 1
        parts = line.split("\t")
        if len(parts) != 2:
            raise EmbeddingLoadError(f"record {ordinal}: expected `id<TAB>floats`")
        doc_id, floats = parts
        try:
            vec = np.asarray([float(x) for x in floats.split(",")], dtype=np.float32)
        except ValueError:
            raise EmbeddingLoadError(f"record {ordinal} ({doc_id!r}): bad float") from None
        if dimension is None:
            dimension = len(vec)
            if dimension == 0:
                raise EmbeddingLoadError(f"record {ordinal}: empty vector")
        elif len(vec) != dimension:
            raise EmbeddingLoadError(
                f"record {ordinal} ({doc_id!r}): dimension {len(vec)} != {dimension}"
            )
        if not np.all(np.isfinite(vec)):
            raise EmbeddingLoadError(f"record {ordinal} ({doc_id!r}): non-finite component")
        if doc_id in seen:
            raise EmbeddingLoadError(f"record {ordinal}: duplicate doc_id {doc_id!r}")
        seen.add(doc_id)
        ids.append(doc_id)
        rows.append(vec)
    if dimension is None:
        raise EmbeddingLoadError("empty embedding file")
    return EmbeddingStore(
        dimension=dimension, ids=ids, matrix=np.vstack(rows).astype(np.float32)
    )


def write_embeddings(
    store: EmbeddingStore, sink: str | Path | IO, binary: bool = True
) -> None:
    if binary:
        close = False
        if isinstance(sink, (str, Path)):
            sink = open(sink, "wb")
            close = True
        try:
            sink.write(EMBEDDING_MAGIC)
            sink.write(struct.pack("<I", store.dimension))
            for i, doc_id in enumerate(store.ids):
                raw_id = doc_id.encode("utf-8")
                sink.write(struct.pack("<H", len(raw_id)))
                sink.write(raw_id)
                sink.write(store.matrix[i].astype("<f4").tobytes())
        finally:
            if close:
                sink.close()
    else:
        stream, owned = open_write(sink)
        try:
            for i, doc_id in enumerate(store.ids):
                floats = ",".join(repr(float(x)) for x in store.matrix[i])
                stream.write(f"{doc_id}\t{floats}\n")
        finally:
            if owned:
                stream.close()


# ---------------------------------------------------------------------------
# Cosine arithmetic (strict sequential float64 accumulation)
# ---------------------------------------------------------------------------

@njit(cache=True)
def _seq_dot(a, b) -> float:
    acc = 0.0
    for k in range(a.shape[0]):
        acc += np.float64(a[k]) * np.float64(b[k])
    return acc


@njit(cache=True)
def _maxcos_rows(sentences, options, option_norms, group_size, out):
    n = sentences.shape[0]
    n_options = options.shape[0]
    n_groups = n_options // group_size
    for i in range(n):
        s_norm = math.sqrt(_seq_dot(sentences[i], sentences[i]))
        for g in range(n_groups):
            best = -2.0
            for j in range(g * group_size, (g + 1) * group_size):
                cos = _seq_dot(sentences[i], options[j]) / (s_norm * option_norms[j])
                if cos > best:
                    best = cos
            out[i, g] = best


@njit(parallel=True, cache=True)
def _maxcos_rows_parallel(sentences, options, option_norms, group_size, out):
    n = sentences.shape[0]
    n_options = options.shape[0]
    n_groups = n_options // group_size
    for i in prange(n):
        s_norm = math.sqrt(_seq_dot(sentences[i], sentences[i]))
        for g in range(n_groups):
            best = -2.0
            for j in range(g * group_size, (g + 1) * group_size):
                cos = _seq_dot(sentences[i], options[j]) / (s_norm * option_norms[j])
                if cos > best:
                    best = cos
            out[i, g] = best


def _as_f32_vector(v) -> np.ndarray:
    arr = np.ascontiguousarray(v, dtype=np.float32)
    if arr.ndim != 1:
        raise ValueError("expected a 1-D vector")
    return arr


def cosine(a, b) -> float:
    """Cosine similarity dot(a,b) / (|a| |b|), accumulated in float64."""
    va, vb = _as_f32_vector(a), _as_f32_vector(b)
    if va.shape[0] != vb.shape[0]:
        raise ValueError(f"dimension mismatch: {va.shape[0]} vs {vb.shape[0]}")
    na = math.sqrt(_seq_dot(va, va))
    nb = math.sqrt(_seq_dot(vb, vb))
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine undefined for zero-norm vector")
    return _seq_dot(va, vb) / (na * nb)


def max_option_similarity(sentence, option_vectors: Sequence) -> float:
    """Maximum cosine between the sentence and each symptom option."""
    if len(option_vectors) != OPTIONS_PER_SYMPTOM:
        raise ValueError(f"expected {OPTIONS_PER_SYMPTOM} option vectors, got {len(option_vectors)}")
    return max(cosine(sentence, opt) for opt in option_vectors)


def option_doc_id(symptom_id: int, intensity: int) -> str:
    return OPTION_ID_TEMPLATE.format(symptom_id=symptom_id, intensity=intensity)


def extract_option_vectors(
    store: EmbeddingStore, symptom_ids: Sequence[int] | None = None
) -> dict[int, np.ndarray]:
    """Pull the per-symptom 4 x D option matrices out of an embedding store.

    Option vectors live under doc ids "bdi:<symptom>:<intensity>". Missing
    vectors are reported for all symptoms at once, before any scoring.
    """
    symptom_ids = list(symptom_ids) if symptom_ids is not None else list(range(1, NUM_SYMPTOMS + 1))
    missing = [
        option_doc_id(sid, i)
        for sid in symptom_ids
        for i in range(OPTIONS_PER_SYMPTOM)
        if option_doc_id(sid, i) not in store
    ]
    if missing:
        raise KeyError(f"missing option vectors: {', '.join(missing)}")
    return {
        sid: np.vstack([store.vector(option_doc_id(sid, i)) for i in range(OPTIONS_PER_SYMPTOM)])
        for sid in symptom_ids
    }


def maxcos_matrix(
    store: EmbeddingStore,
    options: Mapping[int, np.ndarray],
    parallel: bool = True,
) -> tuple[list[int], np.ndarray]:
    """Score every store sentence against every symptom's options.

    Returns (sorted symptom ids, N x S float64 matrix of maxcos scores).
    Parallel execution partitions sentences across threads; each score is an
    independent sequential reduction, so both modes are bitwise identical.
    """
    symptom_ids = sorted(options)
    blocks = []
    for sid in symptom_ids:
        block = np.ascontiguousarray(options[sid], dtype=np.float32)
        if block.shape != (OPTIONS_PER_SYMPTOM, store.dimension):
            raise ValueError(
                f"symptom {sid}: option matrix shape {block.shape} != "
                f"({OPTIONS_PER_SYMPTOM}, {store.dimension})"
            )
        blocks.append(block)
    option_matrix = np.vstack(blocks) if blocks else np.empty((0, store.dimension), np.float32)

    zero_rows = np.flatnonzero(~np.any(store.matrix != 0, axis=1))
    if zero_rows.size:
        raise ValueError(f"zero-norm sentence vector: {store.ids[zero_rows[0]]!r}")
    if option_matrix.size and not np.all(np.any(option_matrix != 0, axis=1)):
        raise ValueError("zero-norm option vector")

    option_norms = np.asarray(
        [math.sqrt(_seq_dot(option_matrix[j], option_matrix[j])) for j in range(option_matrix.shape[0])],
        dtype=np.float64,
    )
    out = np.empty((len(store), len(symptom_ids)), dtype=np.float64)
    kernel = _maxcos_rows_parallel if parallel else _maxcos_rows
    kernel(store.matrix, option_matrix, option_norms, OPTIONS_PER_SYMPTOM, out)
    return symptom_ids, out


def score_corpus(
    store: EmbeddingStore,
    options: Mapping[int, np.ndarray],
    parallel: bool = True,
    tag: str = "maxcos",
) -> ScoreTable:
    """ScoreTable of maxcos scores for every (symptom, sentence) pair."""
    symptom_ids, matrix = maxcos_matrix(store, options, parallel=parallel)
    table = ScoreTable(approach_tag=tag)
    for col, sid in enumerate(symptom_ids):
        for row, doc_id in enumerate(store.ids):
            table.scores[(sid, doc_id)] = float(matrix[row, col])
    return table


# ---------------------------------------------------------------------------
# Threshold calibration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ThresholdStat:
    threshold: float
    mean: float
    std: float
    n: int


@dataclass
class SymptomThresholds:
    """Per-symptom positive cutoffs: train-score mean plus two population stds."""

    stats: dict[int, ThresholdStat]

    def threshold(self, symptom_id: int) -> float:
        return self.stats[symptom_id].threshold

    def as_mapping(self) -> dict[int, float]:
        return {sid: st.threshold for sid, st in self.stats.items()}


def calibrate_thresholds(train_scores: Mapping[int, Sequence[float]]) -> SymptomThresholds:
    """threshold = mean + 2 * population std of each symptom's train scores."""
    stats: dict[int, ThresholdStat] = {}
    for sid in sorted(train_scores):
        scores = np.asarray(train_scores[sid], dtype=np.float64)
        if scores.size < 2:
            raise ValueError(f"symptom {sid}: need >= 2 train scores, got {scores.size}")
        mean = float(np.mean(scores))
        std = float(np.sqrt(np.mean((scores - mean) ** 2)))
        stats[sid] = ThresholdStat(threshold=mean + 2.0 * std, mean=mean, std=std, n=scores.size)
    return SymptomThresholds(stats=stats)


def write_thresholds(thresholds: SymptomThresholds, sink: str | Path | IO) -> None:
    stream, owned = open_write(sink)
    try:
        for sid in sorted(thresholds.stats):
            st = thresholds.stats[sid]
            stream.write(f"{sid}\t{st.threshold!r}\t{st.mean!r}\t{st.std!r}\t{st.n}\n")
    finally:
        if owned:
            stream.close()


def read_thresholds(source: str | Path | IO) -> SymptomThresholds:
    stats: dict[int, ThresholdStat] = {}
    stream, owned = open_text(source)
    try:
        for lineno, line in enumerate(stream, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 5:
                raise ValueError(f"thresholds line {lineno}: expected 5 fields")
            sid = int(parts[0])
            stats[sid] = ThresholdStat(
                threshold=float(parts[1]), mean=float(parts[2]),
                std=float(parts[3]), n=int(parts[4]),
            )
    finally:
        if owned:
            stream.close()
    return SymptomThresholds(stats=stats)
