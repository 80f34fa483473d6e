"""Construction of ranked submission runs from score tables and oracle grades.

Five run types are supported: two regression-score runs (mix23 and the
per-symptom best of the two augmented variants), the similarity run
(maxcos), a max-score fusion of the three, and a high-precision unanimity
run that keeps only sentences positive under all three approaches plus the
LLM grader, ranked by minimum score. Runs are capped at 1,000 sentences per
symptom and serialized in the TREC run format.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable, Mapping, Sequence

from symptomrank.fileio import open_text, open_write

RUN_CAP = 1000


class ScoreTableError(ValueError):
    """Malformed score table input."""


class RunFormatError(ValueError):
    """Malformed run file or run-invariant violation."""


@dataclass
class ScoreTable:
    """Per-approach relevance scores keyed by (symptom_id, doc_id)."""

    approach_tag: str
    scores: dict[tuple[int, str], float] = field(default_factory=dict)

    def symptoms(self) -> list[int]:
        return sorted({sid for sid, _ in self.scores})

    def docs(self, symptom_id: int) -> set[str]:
        return {doc for sid, doc in self.scores if sid == symptom_id}

    def restrict(self, universe: Mapping[int, set[str]]) -> "ScoreTable":
        """Keep only entries whose doc id is in the per-symptom universe."""
        kept = {
            (sid, doc): score
            for (sid, doc), score in self.scores.items()
            if doc in universe.get(sid, ())
        }
        return ScoreTable(self.approach_tag, kept)


@dataclass
class PositiveSet:
    """Per-symptom sets of doc ids one approach classified as relevant."""

    tag: str
    docs: dict[int, set[str]] = field(default_factory=dict)

    def get(self, symptom_id: int) -> set[str]:
        return self.docs.get(symptom_id, set())


@dataclass(frozen=True)
class RunEntry:
    doc_id: str
    rank: int
    score: float


@dataclass
class Run:
    """Ranked retrieval output: per symptom, up to RUN_CAP (doc, rank, score) rows."""

    tag: str
    entries: dict[int, list[RunEntry]] = field(default_factory=dict)

    def validate(self, cap: int = RUN_CAP) -> None:
        for sid, rows in self.entries.items():
            if len(rows) > cap:
                raise RunFormatError(f"symptom {sid}: {len(rows)} entries exceed cap {cap}")
            seen: set[str] = set()
            for i, row in enumerate(rows):
                if row.rank != i + 1:
                    raise RunFormatError(
                        f"symptom {sid}: rank {row.rank} at position {i + 1} is not consecutive"
                    )
                if i > 0 and row.score > rows[i - 1].score:
                    raise RunFormatError(
                        f"symptom {sid}: score increases at rank {row.rank}"
                    )
                if row.doc_id in seen:
                    raise RunFormatError(f"symptom {sid}: duplicate doc {row.doc_id!r}")
                seen.add(row.doc_id)


@dataclass(frozen=True)
class PositiveRule:
    """Positivity rule applied to a score table.

    Regression scores are positive at score >= 0.5 (inclusive boundary);
    calibrated similarity scores are positive strictly above their
    per-symptom threshold.
    """

    thresholds: float | Mapping[int, float]
    inclusive: bool

    @classmethod
    def regression(cls, threshold: float = 0.5) -> "PositiveRule":
        return cls(thresholds=threshold, inclusive=True)

    @classmethod
    def calibrated(cls, thresholds: Mapping[int, float]) -> "PositiveRule":
        return cls(thresholds=dict(thresholds), inclusive=False)

    def threshold_for(self, symptom_id: int) -> float:
        if isinstance(self.thresholds, Mapping):
            if symptom_id not in self.thresholds:
                raise ScoreTableError(f"no threshold defined for symptom {symptom_id}")
            return self.thresholds[symptom_id]
        return self.thresholds

    def is_positive(self, symptom_id: int, score: float) -> bool:
        t = self.threshold_for(symptom_id)
        return score >= t if self.inclusive else score > t


def ingest_score_table(source: str | Path | IO, tag: str) -> ScoreTable:
    """Read `symptom_id<TAB>doc_id<TAB>score` rows into a validated table."""
    table = ScoreTable(approach_tag=tag)
    stream, owned = open_text(source)
    try:
        for lineno, line in enumerate(stream, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ScoreTableError(
                    f"line {lineno}: expected 3 tab-separated fields, got {len(parts)}"
                )
            sid_raw, doc_id, score_raw = parts
            try:
                sid = int(sid_raw)
            except ValueError:
                raise ScoreTableError(f"line {lineno}: bad symptom id {sid_raw!r}") from None
            try:
                score = float(score_raw)
            except ValueError:
                raise ScoreTableError(f"line {lineno}: bad score {score_raw!r}") from None
            if not math.isfinite(score):
                raise ScoreTableError(f"line {lineno}: non-finite score {score_raw!r}")
            if (sid, doc_id) in table.scores:
                raise ScoreTableError(
                    f"line {lineno}: duplicate key (symptom {sid}, doc {doc_id!r})"
                )
            table.scores[(sid, doc_id)] = score
    finally:
        if owned:
            stream.close()
    return table


def write_score_table(table: ScoreTable, sink: str | Path | IO) -> None:
    """Write scores with full float precision (repr round-trips exactly)."""
    stream, owned = open_write(sink)
    try:
        for sid, doc in sorted(table.scores):
            stream.write(f"{sid}\t{doc}\t{table.scores[(sid, doc)]!r}\n")
    finally:
        if owned:
            stream.close()


def positive_set(table: ScoreTable, rule: PositiveRule) -> PositiveSet:
    """All docs the rule classifies positive, per symptom, without any cap."""
    out = PositiveSet(tag=table.approach_tag)
    for sid in table.symptoms():
        rule.threshold_for(sid)  # surface missing thresholds before scanning
    for (sid, doc), score in table.scores.items():
        if rule.is_positive(sid, score):
            out.docs.setdefault(sid, set()).add(doc)
    return out


def _ranked(entries: Iterable[tuple[str, float]], cap: int) -> list[RunEntry]:
    ordered = sorted(entries, key=lambda t: (-t[1], t[0]))[:cap]
    return [RunEntry(doc_id=d, rank=i + 1, score=s) for i, (d, s) in enumerate(ordered)]


def build_positive_run(
    table: ScoreTable, positive_rule: PositiveRule, cap: int = RUN_CAP
) -> Run:
    """Rank the rule's positives by descending score (ties: ascending doc id).

    A symptom with no positives yields a legal empty list.
    """
    run = Run(tag=table.approach_tag)
    for sid in table.symptoms():
        members = [
            (doc, score)
            for (s, doc), score in table.scores.items()
            if s == sid and positive_rule.is_positive(sid, score)
        ]
        run.entries[sid] = _ranked(members, cap)
    return run


def select_aug_best(
    table_1step: ScoreTable,
    table_2step: ScoreTable,
    val_f1: Mapping[tuple[int, str], float],
    tag: str = "aug-best",
) -> tuple[ScoreTable, dict[int, str]]:
    """Per symptom, copy scores from the augmented variant with higher val F1.

    Ties go to the 2-step variant (it saw the original distribution last).
    Returns the combined table plus per-symptom provenance.
    """
    symptoms = sorted(set(table_1step.symptoms()) | set(table_2step.symptoms()))
    combined = ScoreTable(approach_tag=tag)
    provenance: dict[int, str] = {}
    for sid in symptoms:
        key1 = (sid, table_1step.approach_tag)
        key2 = (sid, table_2step.approach_tag)
        if key1 not in val_f1 or key2 not in val_f1:
            missing = key1 if key1 not in val_f1 else key2
            raise ScoreTableError(f"missing validation F1 for symptom {missing[0]}, approach {missing[1]!r}")
        source = table_1step if val_f1[key1] > val_f1[key2] else table_2step
        provenance[sid] = source.approach_tag
        for (s, doc), score in source.scores.items():
            if s == sid:
                combined.scores[(sid, doc)] = score
    return combined, provenance


def filter_candidates(
    universe: Mapping[int, set[str]], maxcos_positives: PositiveSet
) -> dict[int, set[str]]:
    """Per symptom, intersect the candidate universe with the maxcos positives."""
    return {sid: docs & maxcos_positives.get(sid) for sid, docs in universe.items()}


def ensemble_max(
    tables: Sequence[ScoreTable], cap: int = RUN_CAP, tag: str = "max"
) -> Run:
    """Rank by the maximum score any component table assigns each doc.

    Docs missing from some tables use the max over the tables that contain
    them; a doc present in no table is excluded.
    """
    symptoms = sorted({sid for t in tables for sid in t.symptoms()})
    run = Run(tag=tag)
    for sid in symptoms:
        best: dict[str, float] = {}
        for t in tables:
            for (s, doc), score in t.scores.items():
                if s != sid:
                    continue
                if doc not in best or score > best[doc]:
                    best[doc] = score
        run.entries[sid] = _ranked(best.items(), cap)
    return run


def ensemble_unanimity(
    positives: Sequence[PositiveSet],
    oracle_grades: Mapping[tuple[int, str], int],
    tables: Sequence[ScoreTable],
    cap: int = RUN_CAP,
    tag: str = "unanimity",
) -> Run:
    """Keep docs positive under every approach and the oracle; rank by min score.

    Membership is the intersection of the given positive sets, further
    restricted to docs the oracle graded relevant. Every doc in the raw
    intersection must carry an oracle grade; missing grades are an error
    listing the uncovered (symptom, doc) pairs.
    """
    if len(positives) != len(tables):
        raise ValueError("need one positive set per score table")
    symptoms = sorted({sid for p in positives for sid in p.docs})
    missing: list[tuple[int, str]] = []
    run = Run(tag=tag)
    for sid in symptoms:
        common = set.intersection(*[p.get(sid) for p in positives]) if positives else set()
        members = []
        for doc in common:
            if (sid, doc) not in oracle_grades:
                missing.append((sid, doc))
                continue
            if oracle_grades[(sid, doc)] != 1:
                continue
            members.append((doc, min(t.scores[(sid, doc)] for t in tables)))
        run.entries[sid] = _ranked(members, cap)
    if missing:
        listed = ", ".join(f"({sid}, {doc!r})" for sid, doc in sorted(missing)[:20])
        more = "" if len(missing) <= 20 else f" and {len(missing) - 20} more"
        raise ValueError(f"missing oracle grades for {len(missing)} pairs: {listed}{more}")
    return run


# ---------------------------------------------------------------------------
# TREC run files and companion formats
# ---------------------------------------------------------------------------

def write_run_file(run: Run, sink: str | Path | IO, cap: int = RUN_CAP) -> None:
    """Write `<symptom> Q0 <doc> <rank> <score> <tag>` lines.

    Symptoms ascend, ranks ascend within each symptom, scores print with 6
    decimal places.
    """
    run.validate(cap=cap)
    stream, owned = open_write(sink)
    try:
        for sid in sorted(run.entries):
            for row in run.entries[sid]:
                stream.write(
                    f"{sid} Q0 {row.doc_id} {row.rank} {row.score:.6f} {run.tag}\n"
                )
    finally:
        if owned:
            stream.close()


def parse_run_file(source: str | Path | IO, cap: int = RUN_CAP) -> Run:
    """Parse a run file written by write_run_file; exact inverse on well-formed files."""
    run: Run | None = None
    last_sid: int | None = None
    stream, owned = open_text(source)
    try:
        for lineno, line in enumerate(stream, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split()
            if len(parts) != 6:
                raise RunFormatError(f"line {lineno}: expected 6 fields, got {len(parts)}")
            sid_raw, q0, doc_id, rank_raw, score_raw, tag = parts
            if q0 != "Q0":
                raise RunFormatError(f"line {lineno}: second field must be Q0")
            try:
                sid = int(sid_raw)
                rank = int(rank_raw)
                score = float(score_raw)
            except ValueError:
                raise RunFormatError(f"line {lineno}: bad numeric field") from None
            if run is None:
                run = Run(tag=tag)
            elif tag != run.tag:
                raise RunFormatError(f"line {lineno}: mixed run tags {run.tag!r} and {tag!r}")
            if last_sid is not None and sid < last_sid:
                raise RunFormatError(f"line {lineno}: symptom ids must ascend")
            if sid != last_sid:
                if sid in run.entries:
                    raise RunFormatError(f"line {lineno}: symptom {sid} appears in two blocks")
                run.entries[sid] = []
                last_sid = sid
            rows = run.entries[sid]
            if rank != len(rows) + 1:
                raise RunFormatError(
                    f"line {lineno}: rank {rank} is not consecutive (expected {len(rows) + 1})"
                )
            if rows and score > rows[-1].score:
                raise RunFormatError(f"line {lineno}: score inversion")
            if any(r.doc_id == doc_id for r in rows):
                raise RunFormatError(f"line {lineno}: duplicate doc {doc_id!r}")
            if len(rows) >= cap:
                raise RunFormatError(f"line {lineno}: symptom {sid} exceeds cap {cap}")
            rows.append(RunEntry(doc_id=doc_id, rank=rank, score=score))
    finally:
        if owned:
            stream.close()
    if run is None:
        raise RunFormatError("empty run file")
    return run


def write_positive_set(pset: PositiveSet, sink: str | Path | IO) -> None:
    stream, owned = open_write(sink)
    try:
        for sid in sorted(pset.docs):
            for doc in sorted(pset.docs[sid]):
                stream.write(f"{sid}\t{doc}\n")
    finally:
        if owned:
            stream.close()


def read_positive_set(source: str | Path | IO, tag: str) -> PositiveSet:
    pset = PositiveSet(tag=tag)
    stream, owned = open_text(source)
    try:
        for lineno, line in enumerate(stream, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ValueError(f"positive-set line {lineno}: expected 2 fields")
            pset.docs.setdefault(int(parts[0]), set()).add(parts[1])
    finally:
        if owned:
            stream.close()
    return pset


def read_val_f1(source: str | Path | IO) -> dict[tuple[int, str], float]:
    """Read `symptom_id<TAB>approach_tag<TAB>f1` rows."""
    out: dict[tuple[int, str], float] = {}
    stream, owned = open_text(source)
    try:
        for lineno, line in enumerate(stream, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise ValueError(f"F1 file line {lineno}: expected 3 fields")
            key = (int(parts[0]), parts[1])
            if key in out:
                raise ValueError(f"F1 file line {lineno}: duplicate key {key}")
            out[key] = float(parts[2])
    finally:
        if owned:
            stream.close()
    return out


def write_val_f1(values: Mapping[tuple[int, str], float], sink: str | Path | IO) -> None:
    stream, owned = open_write(sink)
    try:
        for sid, tag in sorted(values):
            stream.write(f"{sid}\t{tag}\t{values[(sid, tag)]!r}\n")
    finally:
        if owned:
            stream.close()
