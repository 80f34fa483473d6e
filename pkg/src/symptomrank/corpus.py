"""Sentence corpus handling: TREC-format parsing, near-duplicate removal, and
the BDI-II questionnaire.

Corpus files contain one ``<DOC>...</DOC>`` block per sentence with a
``<DOCNO>`` id, a ``<TEXT>`` body, and optional ``<PRE>``/``<POST>`` context
elements. Duplicate sentences that differ only in case, surrounding
whitespace, or trailing punctuation are collapsed onto their first
occurrence, with conflicting annotations reconciled by majority vote.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, replace
from pathlib import Path
from typing import IO, Iterable, Iterator, Sequence

from symptomrank.dataset import LabeledInstance
from symptomrank.fileio import open_text, open_write

NUM_SYMPTOMS = 21
OPTIONS_PER_SYMPTOM = 4

_TRAILING_PUNCT = ".!?…"


class TrecParseError(ValueError):
    """Malformed TREC corpus input.

    Carries the byte offset of the offending document and its 1-based
    ordinal within the file, when known.
    """

    def __init__(self, message: str, offset: int | None = None, ordinal: int | None = None):
        detail = message
        if ordinal is not None:
            detail += f" (doc ordinal {ordinal}"
            if offset is not None:
                detail += f", byte offset {offset}"
            detail += ")"
        elif offset is not None:
            detail += f" (byte offset {offset})"
        super().__init__(detail)
        self.offset = offset
        self.ordinal = ordinal


class QuestionnaireError(ValueError):
    """Invalid questionnaire file."""


@dataclass(frozen=True)
class SentenceRecord:
    """One corpus sentence: unique id, text, optional surrounding context."""

    doc_id: str
    text: str
    pre: str | None = None
    post: str | None = None


@dataclass(frozen=True)
class Symptom:
    """One BDI-II item: id in 1..21, name, and 4 options ordered by intensity."""

    id: int
    name: str
    options: tuple[str, str, str, str]


def normalize_text(text: str) -> str:
    """Reduce a sentence to its near-duplicate key.

    Lowercases, collapses internal whitespace runs to single spaces, strips
    surrounding whitespace, and iteratively removes trailing sentence
    punctuation (``.``, ``!``, ``?``, ellipsis). Total and idempotent.
    """
    key = " ".join(text.lower().split())
    while key and key[-1] in _TRAILING_PUNCT:
        key = key[:-1].rstrip()
    return key


_TAG_RE = re.compile(r"<(/?)(DOC|DOCNO|TEXT|PRE|POST)>")


def parse_trec_corpus(source: str | Path | IO) -> Iterator[SentenceRecord]:
    """Stream SentenceRecords out of a TREC-format corpus.

    Documents are ``<DOC>`` blocks holding ``<DOCNO>`` and ``<TEXT>`` plus
    optional ``<PRE>`` and ``<POST>``; whitespace between elements is
    arbitrary. Records are yielded in file order without buffering the
    whole corpus. Raises TrecParseError (with byte offset and doc ordinal)
    on missing elements, unclosed tags, or duplicate doc ids.
    """
    stream, owned = open_text(source)
    try:
        seen: dict[str, int] = {}
        ordinal = 0
        buffer = ""
        consumed = 0  # bytes consumed before `buffer`
        doc_start: int | None = None
        eof = False

        def refill() -> None:
            # read more only when the buffer lacks a complete element, so
            # memory stays bounded by one document plus a chunk
            nonlocal buffer, eof
            chunk = stream.read(65536)
            if chunk:
                buffer += chunk
            else:
                eof = True

        while True:
            if doc_start is None:
                pos = buffer.find("<DOC>")
                if pos < 0:
                    if eof:
                        if buffer.strip():
                            raise TrecParseError(
                                "stray content outside <DOC> blocks", offset=consumed
                            )
                        return
                    # keep a tail in case a tag straddles the chunk boundary
                    keep = min(len(buffer), 8)
                    discard = buffer[:-keep] if keep else buffer
                    if discard.strip():
                        raise TrecParseError(
                            "stray content outside <DOC> blocks", offset=consumed
                        )
                    consumed += _utf8_len(discard)
                    buffer = buffer[-keep:] if keep else ""
                    refill()
                    continue
                if buffer[:pos].strip():
                    raise TrecParseError(
                        "stray content outside <DOC> blocks", offset=consumed
                    )
                consumed += _utf8_len(buffer[:pos])
                buffer = buffer[pos:]
                doc_start = consumed
                ordinal += 1
            end = buffer.find("</DOC>")
            if end < 0:
                if eof:
                    raise TrecParseError(
                        "unclosed <DOC>", offset=doc_start, ordinal=ordinal
                    )
                refill()
                continue
            block = buffer[len("<DOC>") : end]
            record = _parse_doc_block(block, doc_start, ordinal)
            if record.doc_id in seen:
                raise TrecParseError(
                    f"duplicate doc_id {record.doc_id!r}: ordinals "
                    f"{seen[record.doc_id]} and {ordinal}",
                    offset=doc_start,
                    ordinal=ordinal,
                )
            seen[record.doc_id] = ordinal
            yield record
            consumed += _utf8_len(buffer[: end + len("</DOC>")])
            buffer = buffer[end + len("</DOC>") :]
            doc_start = None
    finally:
        if owned:
            stream.close()


def _utf8_len(s: str) -> int:
    return len(s.encode("utf-8"))


def _parse_doc_block(block: str, offset: int, ordinal: int) -> SentenceRecord:
    fields: dict[str, str] = {}
    pos = 0
    while True:
        m = _TAG_RE.search(block, pos)
        if m is None:
            if block[pos:].strip():
                raise TrecParseError(
                    f"stray content {block[pos:].strip()[:40]!r} inside <DOC>",
                    offset=offset,
                    ordinal=ordinal,
                )
            break
        closing, tag = m.group(1), m.group(2)
        if closing or tag == "DOC":
            raise TrecParseError(
                f"unexpected <{closing}{tag}>", offset=offset, ordinal=ordinal
            )
        if block[pos : m.start()].strip():
            raise TrecParseError(
                f"stray content before <{tag}>", offset=offset, ordinal=ordinal
            )
        close = block.find(f"</{tag}>", m.end())
        if close < 0:
            raise TrecParseError(f"unclosed <{tag}>", offset=offset, ordinal=ordinal)
        if tag in fields:
            raise TrecParseError(f"repeated <{tag}>", offset=offset, ordinal=ordinal)
        fields[tag] = block[m.end() : close].strip()
        pos = close + len(f"</{tag}>")
    if "DOCNO" not in fields or not fields["DOCNO"]:
        raise TrecParseError("missing <DOCNO>", offset=offset, ordinal=ordinal)
    if "TEXT" not in fields:
        raise TrecParseError("missing <TEXT>", offset=offset, ordinal=ordinal)
    if not fields["TEXT"]:
        raise TrecParseError("empty <TEXT>", offset=offset, ordinal=ordinal)
    return SentenceRecord(
        doc_id=fields["DOCNO"],
        text=fields["TEXT"],
        pre=fields.get("PRE") or None,
        post=fields.get("POST") or None,
    )


def write_trec_corpus(records: Iterable[SentenceRecord], sink: str | Path | IO) -> None:
    """Serialize records back to the TREC corpus format parsed above."""
    stream, owned = open_write(sink)
    try:
        for rec in records:
            stream.write("<DOC>\n")
            stream.write(f"<DOCNO>{rec.doc_id}</DOCNO>\n")
            if rec.pre is not None:
                stream.write(f"<PRE>{rec.pre}</PRE>\n")
            stream.write(f"<TEXT>{rec.text}</TEXT>\n")
            if rec.post is not None:
                stream.write(f"<POST>{rec.post}</POST>\n")
            stream.write("</DOC>\n")
    finally:
        if owned:
            stream.close()


def _majority_vote(votes: Sequence[bool]) -> bool:
    # even split resolves to negative: precision over recall
    positives = sum(votes)
    return positives * 2 > len(votes)


def dedup_with_reconciliation(
    records: Sequence[SentenceRecord],
    labels: Sequence[LabeledInstance],
) -> tuple[list[SentenceRecord], list[LabeledInstance]]:
    """Collapse near-duplicate sentences and reconcile their annotations.

    Records sharing a normalized key collapse onto the first occurrence in
    input order. For every (key, symptom) group the kept record receives the
    majority vote of the group's majority labels and, separately, of its
    unanimity labels; ties resolve to non-relevant. Labels of dropped
    duplicates are re-pointed at the kept doc_id. Only labeled duplicates
    vote; unlabeled ones contribute nothing.
    """
    keeper_of: dict[str, str] = {}  # normalized key -> kept doc_id
    kept_for_doc: dict[str, str] = {}  # any doc_id -> kept doc_id
    kept_records: list[SentenceRecord] = []
    for rec in records:
        key = normalize_text(rec.text)
        if key not in keeper_of:
            keeper_of[key] = rec.doc_id
            kept_records.append(rec)
        kept_for_doc[rec.doc_id] = keeper_of[key]

    groups: dict[tuple[str, int], list[LabeledInstance]] = {}
    order: list[tuple[str, int]] = []
    for inst in labels:
        if inst.doc_id not in kept_for_doc:
            raise ValueError(f"label references unknown doc_id {inst.doc_id!r}")
        group_key = (kept_for_doc[inst.doc_id], inst.symptom_id)
        if group_key not in groups:
            groups[group_key] = []
            order.append(group_key)
        groups[group_key].append(inst)

    merged: list[LabeledInstance] = []
    for kept_doc, symptom_id in order:
        group = groups[(kept_doc, symptom_id)]
        merged.append(
            replace(
                group[0],
                doc_id=kept_doc,
                symptom_id=symptom_id,
                majority=_majority_vote([g.majority for g in group]),
                unanimity=_majority_vote([g.unanimity for g in group]),
            )
        )
    return kept_records, merged


def dedup_index(records: Sequence[SentenceRecord]) -> dict[str, str]:
    """Map every doc_id to the doc_id its normalized key collapses onto."""
    keeper_of: dict[str, str] = {}
    index: dict[str, str] = {}
    for rec in records:
        key = normalize_text(rec.text)
        if key not in keeper_of:
            keeper_of[key] = rec.doc_id
        index[rec.doc_id] = keeper_of[key]
    return index


_SYMPTOM_HEADER_RE = re.compile(r"^(\d+)\.\s+(.+)$")
_OPTION_RE = re.compile(r"^([0-3])\.\s+(.+)$")


def load_questionnaire(source: str | Path | IO) -> list[Symptom]:
    """Load the 21-item questionnaire from its data file.

    Format: one record per symptom, records separated by blank lines,
    ``#`` comment lines ignored. Each record is a ``<id>. <name>`` header
    followed by exactly four option lines ``0. ...`` through ``3. ...`` in
    intensity order.
    """
    stream, owned = open_text(source)
    try:
        text = stream.read()
    finally:
        if owned:
            stream.close()

    blocks: list[list[str]] = []
    current: list[str] = []
    for line in text.splitlines():
        line = line.strip()
        if line.startswith("#"):
            continue
        if not line:
            if current:
                blocks.append(current)
                current = []
            continue
        current.append(line)
    if current:
        blocks.append(current)

    symptoms: list[Symptom] = []
    seen_ids: set[int] = set()
    for block in blocks:
        header = _SYMPTOM_HEADER_RE.match(block[0])
        if header is None:
            raise QuestionnaireError(f"bad symptom header: {block[0]!r}")
        symptom_id = int(header.group(1))
        name = header.group(2).strip()
        if not 1 <= symptom_id <= NUM_SYMPTOMS:
            raise QuestionnaireError(f"symptom id {symptom_id} out of range 1..{NUM_SYMPTOMS}")
        if symptom_id in seen_ids:
            raise QuestionnaireError(f"duplicate symptom id {symptom_id}")
        seen_ids.add(symptom_id)
        option_lines = block[1:]
        if len(option_lines) != OPTIONS_PER_SYMPTOM:
            raise QuestionnaireError(
                f"symptom {symptom_id} ({name}) has {len(option_lines)} options, expected {OPTIONS_PER_SYMPTOM}"
            )
        options = []
        for intensity, line in enumerate(option_lines):
            m = _OPTION_RE.match(line)
            if m is None or int(m.group(1)) != intensity:
                raise QuestionnaireError(
                    f"symptom {symptom_id} ({name}): option line {line!r} should start with '{intensity}. '"
                )
            options.append(m.group(2).strip())
        symptoms.append(Symptom(id=symptom_id, name=name, options=tuple(options)))

    if len(symptoms) != NUM_SYMPTOMS:
        raise QuestionnaireError(f"expected {NUM_SYMPTOMS} symptoms, found {len(symptoms)}")
    symptoms.sort(key=lambda s: s.id)
    return symptoms


def default_questionnaire_path() -> Path:
    """Path of the BDI-II questionnaire bundled with the package."""
    return Path(__file__).parent / "data" / "bdi2_questionnaire.txt"


def load_default_questionnaire() -> list[Symptom]:
    return load_questionnaire(default_questionnaire_path())
