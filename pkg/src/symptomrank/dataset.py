"""Labeled (sentence, symptom) instances and the development-split machinery.

Each annotated sentence carries two binary relevance labels per symptom:
one by annotator majority and one by unanimous vote. The pair maps onto a
three-point regression target (0, 2/3, 1) so both label kinds feed a single
score scale; thresholding that scale at 0.5 recovers the majority label.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Mapping, Sequence

from symptomrank.fileio import open_text, open_write

TARGET_NEGATIVE = 0.0
TARGET_MAJORITY_ONLY = 2.0 / 3.0
TARGET_UNANIMOUS = 1.0

SYNTHETIC_PREFIX = "synth-"


@dataclass(frozen=True)
class LabeledInstance:
    """Annotation of one (sentence, symptom) pair."""

    doc_id: str
    symptom_id: int
    majority: bool
    unanimity: bool
    synthetic: bool = False


@dataclass(frozen=True)
class SplitAssignment:
    doc_id: str
    symptom_id: int
    split: str  # "train" | "val"


@dataclass
class MergeReport:
    """Provenance of a synthetic up-sampling merge."""

    per_symptom: dict[int, int] = field(default_factory=dict)

    @property
    def total(self) -> int:
        return sum(self.per_symptom.values())


def map_labels(inst: LabeledInstance) -> float:
    """Map the (majority, unanimity) label pair to the regression target.

    majority=0 -> 0; majority=1 and unanimity=0 -> 2/3; unanimity=1 -> 1.
    Rejects the inconsistent (majority=0, unanimity=1) combination.
    """
    if inst.unanimity and not inst.majority:
        raise ValueError(
            f"inconsistent annotation for ({inst.doc_id!r}, symptom {inst.symptom_id}): "
            "unanimity=1 requires majority=1"
        )
    if inst.unanimity:
        return TARGET_UNANIMOUS
    if inst.majority:
        return TARGET_MAJORITY_ONLY
    return TARGET_NEGATIVE


def binarize(score: float, threshold: float = 0.5) -> bool:
    """True iff score >= threshold. The boundary is inclusive."""
    if math.isnan(score):
        raise ValueError("cannot binarize NaN score")
    return score >= threshold


def _assignment_hash(seed: int, doc_id: str, symptom_id: int) -> int:
    digest = hashlib.blake2b(
        f"{seed}:{doc_id}:{symptom_id}".encode("utf-8"), digest_size=8
    ).digest()
    return int.from_bytes(digest, "big")


def _round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


def stratified_split(
    instances: Sequence[LabeledInstance],
    train_fraction: float = 0.8,
    seed: int = 0,
) -> list[SplitAssignment]:
    """Assign every instance to train or val, stratified per (symptom, target).

    Strata are (symptom_id, regression target class); within each stratum
    round(train_fraction * size) instances go to train, clamped so neither
    split is empty when the stratum has at least 2 members. Singleton strata
    go to train. Membership is a pure function of (seed, doc_id, symptom_id),
    so the split is stable under input reordering; changing the seed permutes
    members but preserves all per-stratum counts.
    """
    if not instances:
        raise ValueError("cannot split an empty instance sequence")
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")

    strata: dict[tuple[int, float], list[LabeledInstance]] = {}
    seen: set[tuple[str, int]] = set()
    for inst in instances:
        key = (inst.doc_id, inst.symptom_id)
        if key in seen:
            raise ValueError(f"duplicate instance for {key}")
        seen.add(key)
        strata.setdefault((inst.symptom_id, map_labels(inst)), []).append(inst)

    train_keys: set[tuple[str, int]] = set()
    for members in strata.values():
        members = sorted(
            members,
            key=lambda m: (_assignment_hash(seed, m.doc_id, m.symptom_id), m.doc_id),
        )
        n = len(members)
        n_train = _round_half_up(train_fraction * n)
        if n >= 2:
            n_train = min(max(n_train, 1), n - 1)
        else:
            n_train = n  # singleton stratum goes to train
        for m in members[:n_train]:
            train_keys.add((m.doc_id, m.symptom_id))

    return [
        SplitAssignment(
            doc_id=inst.doc_id,
            symptom_id=inst.symptom_id,
            split="train" if (inst.doc_id, inst.symptom_id) in train_keys else "val",
        )
        for inst in instances
    ]


def merge_synthetic(
    train: Sequence[LabeledInstance],
    synth: Sequence[LabeledInstance],
) -> tuple[list[LabeledInstance], MergeReport]:
    """Append synthetic positives to the train instances.

    Synthetic instances must be positive under both labels. Their doc_ids
    are forced to carry the "synth-" prefix; a prefixed id colliding with a
    real doc_id is an error. Original instances pass through untouched.
    """
    real_ids = {inst.doc_id for inst in train}
    report = MergeReport()
    merged = list(train)
    seen_synth: set[str] = set()
    for inst in synth:
        if not inst.synthetic:
            raise ValueError(f"instance {inst.doc_id!r} is not marked synthetic")
        if not (inst.majority and inst.unanimity):
            raise ValueError(
                f"synthetic instance {inst.doc_id!r} must be positive under both labels"
            )
        doc_id = inst.doc_id
        if not doc_id.startswith(SYNTHETIC_PREFIX):
            doc_id = SYNTHETIC_PREFIX + doc_id
        if doc_id in real_ids:
            raise ValueError(f"synthetic doc_id {doc_id!r} collides with a real doc_id")
        key = (doc_id, inst.symptom_id)
        if (doc_id, inst.symptom_id) in seen_synth:
            raise ValueError(f"duplicate synthetic instance for {key}")
        seen_synth.add(key)
        merged.append(
            LabeledInstance(
                doc_id=doc_id,
                symptom_id=inst.symptom_id,
                majority=True,
                unanimity=True,
                synthetic=True,
            )
        )
        report.per_symptom[inst.symptom_id] = report.per_symptom.get(inst.symptom_id, 0) + 1
    return merged, report


# ---------------------------------------------------------------------------
# File formats (tab-separated, UTF-8)
# ---------------------------------------------------------------------------

def read_labels(source: str | Path | IO) -> list[LabeledInstance]:
    """Read `doc_id<TAB>symptom_id<TAB>majority<TAB>unanimity` rows."""
    out = []
    for lineno, parts in _tsv_rows(source, 4, "labels"):
        doc_id, sid, maj, unan = parts
        out.append(
            LabeledInstance(
                doc_id=doc_id,
                symptom_id=_parse_symptom_id(sid, lineno),
                majority=_parse_bit(maj, lineno),
                unanimity=_parse_bit(unan, lineno),
            )
        )
    return out


def write_labels(labels: Iterable[LabeledInstance], sink: str | Path | IO) -> None:
    _write_rows(
        sink,
        (
            (l.doc_id, str(l.symptom_id), str(int(l.majority)), str(int(l.unanimity)))
            for l in labels
        ),
    )


def read_split(source: str | Path | IO) -> list[SplitAssignment]:
    """Read `doc_id<TAB>symptom_id<TAB>train|val` rows."""
    out = []
    for lineno, parts in _tsv_rows(source, 3, "split"):
        doc_id, sid, split = parts
        if split not in ("train", "val"):
            raise ValueError(f"split file line {lineno}: bad split value {split!r}")
        out.append(SplitAssignment(doc_id, _parse_symptom_id(sid, lineno), split))
    return out


def write_split(assignments: Iterable[SplitAssignment], sink: str | Path | IO) -> None:
    _write_rows(sink, ((a.doc_id, str(a.symptom_id), a.split) for a in assignments))


def read_synthetic_sentences(
    source: str | Path | IO,
) -> tuple[list[LabeledInstance], dict[str, str]]:
    """Read `doc_id<TAB>symptom_id<TAB>text<TAB>generator_tag` rows.

    Returns positive synthetic instances plus a doc_id -> text mapping.
    """
    instances = []
    texts: dict[str, str] = {}
    for lineno, parts in _tsv_rows(source, 4, "synthetic sentences"):
        doc_id, sid, text, _tag = parts
        instances.append(
            LabeledInstance(
                doc_id=doc_id,
                symptom_id=_parse_symptom_id(sid, lineno),
                majority=True,
                unanimity=True,
                synthetic=True,
            )
        )
        texts[doc_id] = text
    return instances, texts


def train_doc_ids(split: Iterable[SplitAssignment]) -> Mapping[int, set[str]]:
    """Per-symptom sets of train-split doc ids."""
    out: dict[int, set[str]] = {}
    for a in split:
        if a.split == "train":
            out.setdefault(a.symptom_id, set()).add(a.doc_id)
    return out


def _tsv_rows(source, width: int, what: str):
    stream, owned = open_text(source)
    try:
        for lineno, line in enumerate(stream, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != width:
                raise ValueError(
                    f"{what} file line {lineno}: expected {width} tab-separated fields, got {len(parts)}"
                )
            yield lineno, parts
    finally:
        if owned:
            stream.close()


def _write_rows(sink, rows) -> None:
    stream, owned = open_write(sink)
    try:
        for row in rows:
            stream.write("\t".join(row) + "\n")
    finally:
        if owned:
            stream.close()


def _parse_symptom_id(raw: str, lineno: int) -> int:
    try:
        sid = int(raw)
    except ValueError:
        raise ValueError(f"line {lineno}: bad symptom id {raw!r}") from None
    if not 1 <= sid <= 21:
        raise ValueError(f"line {lineno}: symptom id {sid} out of range 1..21")
    return sid


def _parse_bit(raw: str, lineno: int) -> bool:
    if raw == "0":
        return False
    if raw == "1":
        return True
    raise ValueError(f"line {lineno}: expected 0 or 1, got {raw!r}")
