"""Classification and retrieval evaluation against relevance judgments.

Classification: per-symptom F1 over judged documents, macro-averaged across
the 21 symptoms (mean +/- population standard deviation), reported for both
the majority and unanimity annotation settings with their delta.

Retrieval: trec_eval-compatible AP, R-PREC, P@10, and NDCG@1000 with binary
gains. Unjudged documents count as non-relevant; symptoms without any
relevant document are excluded from macro averages with a warning.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Mapping, Sequence

from symptomrank.corpus import NUM_SYMPTOMS
from symptomrank.fileio import open_text, open_write
from symptomrank.runs import PositiveSet, Run

logger = logging.getLogger(__name__)

IR_METRICS = ("AP", "R-PREC", "P@10", "NDCG@1000")


class UndefinedMetricError(ValueError):
    """Metric undefined because the symptom has no relevant documents."""


@dataclass
class Qrels:
    """Binary relevance judgments for one annotation setting."""

    setting: str  # "majority" | "unanimity"
    judgments: dict[tuple[int, str], int] = field(default_factory=dict)

    def symptoms(self) -> list[int]:
        return sorted({sid for sid, _ in self.judgments})

    def judged_docs(self, symptom_id: int) -> set[str]:
        return {doc for (sid, doc) in self.judgments if sid == symptom_id}

    def relevant_docs(self, symptom_id: int) -> set[str]:
        return {
            doc
            for (sid, doc), rel in self.judgments.items()
            if sid == symptom_id and rel == 1
        }


def read_qrels(source: str | Path | IO, setting: str) -> Qrels:
    """Read TREC qrels lines `<symptom_id> 0 <doc_id> <0|1>`."""
    qrels = Qrels(setting=setting)
    stream, owned = open_text(source)
    try:
        for lineno, line in enumerate(stream, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 4:
                raise ValueError(f"qrels line {lineno}: expected 4 fields, got {len(parts)}")
            sid_raw, _iter, doc_id, rel_raw = parts
            try:
                sid, rel = int(sid_raw), int(rel_raw)
            except ValueError:
                raise ValueError(f"qrels line {lineno}: bad numeric field") from None
            if rel not in (0, 1):
                raise ValueError(f"qrels line {lineno}: relevance must be 0 or 1")
            if (sid, doc_id) in qrels.judgments:
                raise ValueError(f"qrels line {lineno}: duplicate judgment for ({sid}, {doc_id!r})")
            qrels.judgments[(sid, doc_id)] = rel
    finally:
        if owned:
            stream.close()
    return qrels


def write_qrels(qrels: Qrels, sink: str | Path | IO) -> None:
    stream, owned = open_write(sink)
    try:
        for sid, doc in sorted(qrels.judgments):
            stream.write(f"{sid} 0 {doc} {qrels.judgments[(sid, doc)]}\n")
    finally:
        if owned:
            stream.close()


# ---------------------------------------------------------------------------
# Classification metrics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0


def f1(counts: ConfusionCounts) -> float:
    """2tp / (2tp + fp + fn), with 0 when the denominator is 0."""
    denom = 2 * counts.tp + counts.fp + counts.fn
    if denom == 0:
        return 0.0
    return 2 * counts.tp / denom


def confusion(predicted_positive: set[str], qrels: Qrels, symptom_id: int) -> ConfusionCounts:
    """Confusion counts over judged docs only; absent from the set = negative."""
    tp = fp = fn = tn = 0
    for (sid, doc), rel in qrels.judgments.items():
        if sid != symptom_id:
            continue
        predicted = doc in predicted_positive
        if predicted and rel == 1:
            tp += 1
        elif predicted:
            fp += 1
        elif rel == 1:
            fn += 1
        else:
            tn += 1
    return ConfusionCounts(tp=tp, fp=fp, fn=fn, tn=tn)


@dataclass
class ClassificationReport:
    setting: str
    per_symptom: dict[int, float]
    macro_mean: float
    macro_std: float


def _macro(values: Sequence[float]) -> tuple[float, float]:
    mean = sum(values) / len(values)
    std = math.sqrt(sum((v - mean) ** 2 for v in values) / len(values))
    return mean, std


def evaluate_classification(predictions: PositiveSet, qrels: Qrels) -> ClassificationReport:
    """Per-symptom F1 plus macro mean +/- population std over the 21 symptoms."""
    symptoms = qrels.symptoms()
    if len(symptoms) < NUM_SYMPTOMS:
        raise ValueError(
            f"qrels covers {len(symptoms)} symptoms, expected {NUM_SYMPTOMS}"
        )
    per_symptom = {
        sid: f1(confusion(predictions.get(sid), qrels, sid)) for sid in symptoms
    }
    mean, std = _macro(list(per_symptom.values()))
    return ClassificationReport(
        setting=qrels.setting, per_symptom=per_symptom, macro_mean=mean, macro_std=std
    )


def classification_delta(majority: ClassificationReport, unanimity: ClassificationReport) -> float:
    """Macro-F1 change from the majority to the stricter unanimity setting."""
    return unanimity.macro_mean - majority.macro_mean


# ---------------------------------------------------------------------------
# Retrieval metrics
# ---------------------------------------------------------------------------

def average_precision(ranking: Sequence[str], relevant: set[str]) -> float:
    """Mean of precision-at-rank over relevant retrieved docs, divided by R.

    Unretrieved relevant docs contribute 0; unjudged docs are non-relevant.
    """
    if not relevant:
        raise UndefinedMetricError("AP undefined with no relevant documents")
    hits = 0
    total = 0.0
    for i, doc in enumerate(ranking, start=1):
        if doc in relevant:
            hits += 1
            total += hits / i
    return total / len(relevant)


def r_precision(ranking: Sequence[str], relevant: set[str]) -> float:
    """Fraction of relevant docs within the top R; short runs pad as non-relevant."""
    if not relevant:
        raise UndefinedMetricError("R-PREC undefined with no relevant documents")
    r = len(relevant)
    return sum(1 for doc in ranking[:r] if doc in relevant) / r


def precision_at_k(ranking: Sequence[str], relevant: set[str], k: int = 10) -> float:
    """Relevant count in the top k divided by k; short runs pad as non-relevant."""
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    return sum(1 for doc in ranking[:k] if doc in relevant) / k


def ndcg_at_k(ranking: Sequence[str], relevant: set[str], k: int = 1000) -> float:
    """Binary-gain NDCG: DCG uses 1/log2(rank+1); IDCG puts all R relevant first."""
    if not relevant:
        raise UndefinedMetricError("NDCG undefined with no relevant documents")
    dcg = sum(
        1.0 / math.log2(i + 1)
        for i, doc in enumerate(ranking[:k], start=1)
        if doc in relevant
    )
    ideal = sum(1.0 / math.log2(i + 1) for i in range(1, min(len(relevant), k) + 1))
    return dcg / ideal


@dataclass
class IrReport:
    """Per-symptom and macro values for each IR metric, for one (run, qrels) pair."""

    run_tag: str
    setting: str
    per_symptom: dict[str, dict[int, float]]  # metric -> symptom -> value
    macro: dict[str, float]  # metric -> mean over evaluable symptoms
    skipped: list[int]  # symptoms with no relevant docs


def evaluate_ir(run: Run, qrels: Qrels) -> IrReport:
    """All four IR metrics per symptom, macro-averaged where R >= 1."""
    qrels_symptoms = set(qrels.symptoms())
    if not qrels_symptoms & set(run.entries):
        raise ValueError(
            f"run {run.tag!r} and qrels share no symptom ids"
        )
    per_symptom: dict[str, dict[int, float]] = {m: {} for m in IR_METRICS}
    skipped: list[int] = []
    for sid in sorted(qrels_symptoms):
        relevant = qrels.relevant_docs(sid)
        if not relevant:
            skipped.append(sid)
            logger.warning(
                "symptom %d has no relevant docs in %s qrels; excluded from macro averages",
                sid, qrels.setting,
            )
            continue
        ranking = [row.doc_id for row in run.entries.get(sid, [])]
        per_symptom["AP"][sid] = average_precision(ranking, relevant)
        per_symptom["R-PREC"][sid] = r_precision(ranking, relevant)
        per_symptom["P@10"][sid] = precision_at_k(ranking, relevant, k=10)
        per_symptom["NDCG@1000"][sid] = ndcg_at_k(ranking, relevant, k=1000)
    if not per_symptom["AP"]:
        raise UndefinedMetricError(
            f"no symptom in {qrels.setting} qrels has relevant documents"
        )
    macro = {m: _macro(list(vals.values()))[0] for m, vals in per_symptom.items()}
    return IrReport(
        run_tag=run.tag, setting=qrels.setting,
        per_symptom=per_symptom, macro=macro, skipped=skipped,
    )


# ---------------------------------------------------------------------------
# Report rendering (aligned text + TSV)
# ---------------------------------------------------------------------------

def render_classification_table(
    rows: Sequence[tuple[str, ClassificationReport, ClassificationReport]],
) -> str:
    """Aligned text table: approach, majority, unanimity, delta."""
    width = max([len("Approach")] + [len(tag) for tag, _, _ in rows]) + 2
    lines = [f"{'Approach':<{width}}{'Majority':<14}{'Unanimity':<14}{'Δ':<8}"]
    for tag, maj, unan in rows:
        lines.append(
            f"{tag:<{width}}"
            f"{_pm(maj):<14}{_pm(unan):<14}"
            f"{classification_delta(maj, unan):+.3f}"
        )
    return "\n".join(lines) + "\n"


def _pm(report: ClassificationReport) -> str:
    return f"{report.macro_mean:.3f}±{report.macro_std:.3f}"


def classification_table_tsv(
    rows: Sequence[tuple[str, ClassificationReport, ClassificationReport]],
) -> str:
    lines = ["approach\tmajority_f1\tmajority_std\tunanimity_f1\tunanimity_std\tdelta"]
    for tag, maj, unan in rows:
        lines.append(
            f"{tag}\t{maj.macro_mean:.6f}\t{maj.macro_std:.6f}"
            f"\t{unan.macro_mean:.6f}\t{unan.macro_std:.6f}"
            f"\t{classification_delta(maj, unan):.6f}"
        )
    return "\n".join(lines) + "\n"


def render_ir_table(reports: Mapping[str, Sequence[IrReport]]) -> str:
    """Aligned text table: one section per annotation setting, one row per run."""
    width = max(
        [len("Run")] + [len(r.run_tag) for reps in reports.values() for r in reps]
    ) + 2
    lines = []
    for setting, reps in reports.items():
        lines.append(f"== annotator {setting} evaluation ==")
        header = f"{'Run':<{width}}" + "".join(f"{m:<11}" for m in IR_METRICS)
        lines.append(header)
        for rep in reps:
            row = f"{rep.run_tag:<{width}}" + "".join(
                f"{rep.macro[m]:<11.3f}" for m in IR_METRICS
            )
            lines.append(row)
        lines.append("")
    return "\n".join(lines).rstrip("\n") + "\n"


def ir_table_tsv(reports: Mapping[str, Sequence[IrReport]]) -> str:
    lines = ["setting\trun\t" + "\t".join(m.lower().replace("@", "_at_").replace("-", "_") for m in IR_METRICS)]
    for setting, reps in reports.items():
        for rep in reps:
            lines.append(
                f"{setting}\t{rep.run_tag}\t" + "\t".join(f"{rep.macro[m]:.6f}" for m in IR_METRICS)
            )
    return "\n".join(lines) + "\n"
