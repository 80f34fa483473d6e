"""LLM relevance grading and synthetic sentence generation.

Builds k-shot relevance prompts for a chat-completion backend (live HTTP or
a scripted mock), selecting the k positive and k negative exemplars most
similar to the candidate sentence, and parses the graded responses. Also
builds the up-sampling prompts that ask a generator for first-person
sentences relevant to a symptom.

Exemplar pools are restricted to the extreme regression targets (0 and 1),
keeping a clear separation between the two outcomes. Candidate context
(surrounding sentences) is excluded from prompts by default and available
behind an opt-in flag.
"""

from __future__ import annotations

import hashlib
import json
import re
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Protocol, Sequence

from symptomrank.corpus import SentenceRecord, Symptom
from symptomrank.dataset import (
    TARGET_NEGATIVE,
    TARGET_UNANIMOUS,
    LabeledInstance,
    map_labels,
)
from symptomrank.similarity import EmbeddingStore, cosine

SUPPORTED_K = (0, 1, 3, 5)


class GradeParseError(ValueError):
    """Response carried no unambiguous relevance grade."""

    def __init__(self, raw: str):
        super().__init__(f"no parseable grade in response: {raw[:120]!r}")
        self.raw = raw


class OracleTransportError(RuntimeError):
    """Transient backend failure that survived all retries."""


class OracleConfigError(RuntimeError):
    """Non-retryable backend failure (bad endpoint, credentials, request)."""


class OracleFormatError(RuntimeError):
    """Backend kept answering in an unusable format."""


class ExemplarPoolError(ValueError):
    """Exemplar pool too small for the requested k."""


@dataclass(frozen=True)
class Exemplar:
    doc_id: str
    text: str
    vector: object  # float32 vector


@dataclass
class ExemplarPool:
    """Per-symptom labeled exemplars, restricted to targets 0 and 1."""

    positives: dict[int, list[Exemplar]] = field(default_factory=dict)
    negatives: dict[int, list[Exemplar]] = field(default_factory=dict)


@dataclass(frozen=True)
class PromptSpec:
    k: int
    symptom_id: int
    include_context: bool = False

    def __post_init__(self):
        if self.k not in SUPPORTED_K:
            raise ValueError(f"k must be one of {SUPPORTED_K}, got {self.k}")


@dataclass(frozen=True)
class OracleResponse:
    raw: str
    grade: int | None
    retries: int = 0


def build_exemplar_pool(
    instances: Iterable[LabeledInstance],
    texts: Mapping[str, str],
    store: EmbeddingStore,
) -> ExemplarPool:
    """Index labeled sentences by symptom, keeping only targets 0 and 1."""
    pool = ExemplarPool()
    for inst in instances:
        target = map_labels(inst)
        if target == TARGET_UNANIMOUS:
            side = pool.positives
        elif target == TARGET_NEGATIVE:
            side = pool.negatives
        else:
            continue  # majority-only labels are ambiguous exemplars
        if inst.doc_id not in texts:
            raise KeyError(f"no text for exemplar doc {inst.doc_id!r}")
        if inst.doc_id not in store:
            raise KeyError(f"no embedding for exemplar doc {inst.doc_id!r}")
        side.setdefault(inst.symptom_id, []).append(
            Exemplar(doc_id=inst.doc_id, text=texts[inst.doc_id], vector=store.vector(inst.doc_id))
        )
    return pool


def _top_k(candidate, exemplars: Sequence[Exemplar], k: int) -> list[Exemplar]:
    scored = [(cosine(candidate, ex.vector), ex) for ex in exemplars]
    scored.sort(key=lambda t: (-t[0], t[1].doc_id))
    return [ex for _, ex in scored[:k]]


def select_exemplars(
    candidate, pool: ExemplarPool, symptom_id: int, k: int
) -> list[tuple[Exemplar, int]]:
    """The k positives and k negatives most similar to the candidate.

    Ties break on ascending doc_id. Output alternates negative/positive in
    descending similarity, which avoids biasing the grader with a label
    block at either end.
    """
    if k == 0:
        return []
    positives = pool.positives.get(symptom_id, [])
    negatives = pool.negatives.get(symptom_id, [])
    if len(positives) < k:
        raise ExemplarPoolError(
            f"symptom {symptom_id}: need {k} positive exemplars, pool has {len(positives)}"
        )
    if len(negatives) < k:
        raise ExemplarPoolError(
            f"symptom {symptom_id}: need {k} negative exemplars, pool has {len(negatives)}"
        )
    chosen_pos = _top_k(candidate, positives, k)
    chosen_neg = _top_k(candidate, negatives, k)
    out: list[tuple[Exemplar, int]] = []
    for neg, pos in zip(chosen_neg, chosen_pos):
        out.append((neg, 0))
        out.append((pos, 1))
    return out


_PROMPT_PREAMBLE = (
    "Consider the following item in Beck's Depression Inventory (BDI-II):\n"
    "{number}. {name}\n"
    "{options}\n"
    "\n"
    "The task consists of annotating sentences in the collection that are "
    "topically relevant to the item (relevant to the question and/or to the "
    "answers). Note: A relevant sentence should provide some information "
    "about the state of the individual related to the topic of the BDI item. "
    "But it is not necessary that the exact same words are used. Your job is "
    "to assess sentences on how topically relevant they are for the BDI item.\n"
    "\n"
    "The relevance grades are:\n"
    "1. Relevant: A relevant sentence should be topically related to the BDI "
    "item (regardless of the wording) and, additionally, it should refer to "
    "the state of the writer about the BDI item.\n"
    "0. Non-Relevant: A non-relevant sentence does not address any topic "
    "related to the question and/or the answers of the BDI item (or it is "
    "related to the topic but does not represent the writer's state about "
    "the BDI item).\n"
    "\n"
)

_EXAMPLES_LEAD_IN = (
    "Together with each sentence, you will receive a set of examples to help "
    "with the classification. "
)

_ANSWER_INSTRUCTION = "Answer with just the grade. Use the format [GRADE].\n\n"


def build_relevance_prompt(
    symptom: Symptom,
    exemplars: Sequence[tuple[Exemplar, int]],
    sentence_text: str,
    spec: PromptSpec,
    pre: str | None = None,
    post: str | None = None,
) -> str:
    """Instantiate the relevance-grading prompt, byte-deterministically.

    The exemplar section (lead-in plus Example lines) is omitted entirely
    when k = 0. Context lines appear only when the spec opts in.
    """
    if symptom.id != spec.symptom_id:
        raise ValueError(f"spec is for symptom {spec.symptom_id}, got symptom {symptom.id}")
    if len(exemplars) != 2 * spec.k:
        raise ValueError(f"k={spec.k} requires {2 * spec.k} exemplars, got {len(exemplars)}")
    options = "\n".join(f"{i}. {opt}" for i, opt in enumerate(symptom.options))
    prompt = _PROMPT_PREAMBLE.format(number=symptom.id, name=symptom.name, options=options)
    if spec.k > 0:
        prompt += _EXAMPLES_LEAD_IN + _ANSWER_INSTRUCTION
        for exemplar, label in exemplars:
            prompt += f"Example: {exemplar.text}. Classification: {label}\n"
        prompt += "\n"
    else:
        prompt += _ANSWER_INSTRUCTION
    if spec.include_context:
        if pre:
            prompt += f"Context (previous sentence): {pre}\n"
        if post:
            prompt += f"Context (next sentence): {post}\n"
    prompt += f"Sentence: {sentence_text}. Classification:"
    return prompt


_BRACKET_GRADE_RE = re.compile(r"\[([01])\]")


def parse_grade(raw: str) -> int:
    """Extract the 0/1 grade: first bracketed grade wins, else a lone token."""
    m = _BRACKET_GRADE_RE.search(raw)
    if m:
        return int(m.group(1))
    stripped = raw.strip()
    if stripped in ("0", "1"):
        return int(stripped)
    raise GradeParseError(raw)


# ---------------------------------------------------------------------------
# Backends
# ---------------------------------------------------------------------------

class Backend(Protocol):
    def complete(self, prompt: str) -> str: ...


def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:16]


class RateLimiter:
    """Thread-safe minimum-interval limiter (requests per second)."""

    def __init__(self, requests_per_second: float):
        if requests_per_second <= 0:
            raise ValueError("requests_per_second must be positive")
        self._interval = 1.0 / requests_per_second
        self._lock = threading.Lock()
        self._next_slot = 0.0

    def acquire(self) -> None:
        with self._lock:
            now = time.monotonic()
            wait = self._next_slot - now
            self._next_slot = max(now, self._next_slot) + self._interval
        if wait > 0:
            time.sleep(wait)


class MockBackend:
    """Deterministic scripted backend; no network.

    Sequence mode replays canned responses in request order; hash mode maps
    a prompt's hash to its canned response. Script files are line-delimited
    with ``\\n``/``\\t`` escapes; hash-mode lines are `<hash><TAB><response>`.
    """

    def __init__(
        self,
        responses: Sequence[str] | None = None,
        by_hash: Mapping[str, str] | None = None,
    ):
        if (responses is None) == (by_hash is None):
            raise ValueError("provide exactly one of responses / by_hash")
        self._responses = list(responses) if responses is not None else None
        self._by_hash = dict(by_hash) if by_hash is not None else None
        self._cursor = 0
        self._lock = threading.Lock()
        self.requests: list[str] = []

    @classmethod
    def from_script(cls, path: str | Path, mode: str = "sequence") -> "MockBackend":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        if mode == "sequence":
            return cls(responses=[_unescape(l) for l in lines if l])
        if mode == "hash":
            by_hash = {}
            for line in lines:
                if not line:
                    continue
                key, _, resp = line.partition("\t")
                by_hash[key] = _unescape(resp)
            return cls(by_hash=by_hash)
        raise ValueError(f"unknown mock mode {mode!r}")

    def complete(self, prompt: str) -> str:
        with self._lock:
            self.requests.append(prompt)
            if self._by_hash is not None:
                key = prompt_hash(prompt)
                if key not in self._by_hash:
                    raise OracleTransportError(f"mock script has no response for hash {key}")
                return self._by_hash[key]
            if self._cursor >= len(self._responses):
                raise OracleTransportError(
                    f"mock script exhausted after {len(self._responses)} responses"
                )
            response = self._responses[self._cursor]
            self._cursor += 1
            return response


def _unescape(s: str) -> str:
    return s.replace("\\n", "\n").replace("\\t", "\t")


class HttpBackend:
    """OpenAI-compatible chat-completions client with retry and rate limiting.

    Transient failures (connection errors, HTTP 5xx, 429) retry with
    exponential backoff up to max_retries; other 4xx responses raise a
    configuration error immediately. Requests decode greedily
    (temperature 0) for determinism.
    """

    def __init__(
        self,
        endpoint: str,
        model: str,
        api_key: str | None = None,
        temperature: float = 0.0,
        max_retries: int = 3,
        backoff_base: float = 0.5,
        requests_per_second: float | None = None,
        timeout: float = 60.0,
        session=None,
        sleep: Callable[[float], None] = time.sleep,
    ):
        import requests

        self.endpoint = endpoint
        self.model = model
        self.api_key = api_key
        self.temperature = temperature
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self.timeout = timeout
        self._session = session if session is not None else requests.Session()
        self._limiter = RateLimiter(requests_per_second) if requests_per_second else None
        self._sleep = sleep

    def complete(self, prompt: str) -> str:
        import requests

        payload = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.temperature,
        }
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        delay = self.backoff_base
        last_error = None
        for attempt in range(self.max_retries + 1):
            if self._limiter is not None:
                self._limiter.acquire()
            try:
                response = self._session.post(
                    self.endpoint, json=payload, headers=headers, timeout=self.timeout
                )
            except requests.RequestException as exc:
                last_error = repr(exc)
            else:
                if response.status_code == 200:
                    body = response.json()
                    try:
                        return body["choices"][0]["message"]["content"]
                    except (KeyError, IndexError, TypeError):
                        raise OracleConfigError(
                            f"unexpected response shape from {self.endpoint}"
                        ) from None
                if response.status_code == 429 or response.status_code >= 500:
                    last_error = f"HTTP {response.status_code}"
                else:
                    raise OracleConfigError(
                        f"HTTP {response.status_code} from {self.endpoint}: "
                        f"{response.text[:200]}"
                    )
            if attempt < self.max_retries:
                self._sleep(delay)
                delay *= 2
        raise OracleTransportError(
            f"exhausted {self.max_retries} retries against {self.endpoint}: {last_error}"
        )


def request_relevance(backend: Backend, prompt: str) -> OracleResponse:
    """Ask for a grade; on an unparseable answer, re-ask once before failing."""
    raw = backend.complete(prompt)
    try:
        return OracleResponse(raw=raw, grade=parse_grade(raw), retries=0)
    except GradeParseError:
        pass
    retry_raw = backend.complete(prompt)
    try:
        return OracleResponse(raw=retry_raw, grade=parse_grade(retry_raw), retries=1)
    except GradeParseError as exc:
        raise OracleFormatError(
            f"unparseable grade after re-ask: {raw[:80]!r} then {retry_raw[:80]!r}"
        ) from exc


# ---------------------------------------------------------------------------
# Synthetic sentence generation
# ---------------------------------------------------------------------------

_SYNTHESIS_TEMPLATE = (
    "You are generating training sentences about one depression symptom.\n"
    "\n"
    "Consider the following item in Beck's Depression Inventory (BDI-II):\n"
    "{number}. {name}\n"
    "{options}\n"
    "\n"
    "Write {n} distinct sentences, in the first person, that someone might "
    "post on social media and that are relevant to this item. A relevant "
    "sentence provides some information about the writer's state related to "
    "the topic of the item, regardless of the exact wording. Vary the "
    "phrasing, intensity, and vocabulary. Reply with one sentence per line, "
    "numbered 1 to {n}, and nothing else."
)

_LINE_PREFIX_RE = re.compile(r"^\s*(?:\d+\s*[.)]\s*|[-*•]\s*)")


def build_synthesis_prompt(symptom: Symptom, n: int = 100) -> str:
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    options = "\n".join(f"{i}. {opt}" for i, opt in enumerate(symptom.options))
    return _SYNTHESIS_TEMPLATE.format(
        number=symptom.id, name=symptom.name, options=options, n=n
    )


def parse_synthetic_sentences(raw: str, n: int) -> list[str]:
    """Strip numbering/bullets, drop blanks, dedup case-insensitively, cap at n.

    Raises OracleFormatError when fewer than n/2 usable sentences come back,
    signalling the caller to re-request.
    """
    sentences: list[str] = []
    seen: set[str] = set()
    for line in raw.splitlines():
        cleaned = _LINE_PREFIX_RE.sub("", line).strip()
        if not cleaned:
            continue
        key = cleaned.casefold()
        if key in seen:
            continue
        seen.add(key)
        sentences.append(cleaned)
    if len(sentences) < n / 2:
        raise OracleFormatError(
            f"only {len(sentences)} usable sentences of {n} requested; re-request"
        )
    return sentences[:n]


def synthesize(
    backend: Backend,
    symptom: Symptom,
    n: int = 100,
    generator_tag: str = "gen",
    max_attempts: int = 2,
) -> list[str]:
    """Request n synthetic sentences, re-asking on under-filled responses."""
    prompt = build_synthesis_prompt(symptom, n=n)
    last: OracleFormatError | None = None
    for _ in range(max_attempts):
        raw = backend.complete(prompt)
        try:
            return parse_synthetic_sentences(raw, n)
        except OracleFormatError as exc:
            last = exc
    raise last  # type: ignore[misc]


# ---------------------------------------------------------------------------
# Annotation log and the resumable grading loop
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AnnotationRecord:
    doc_id: str
    symptom_id: int
    k: int
    prompt_hash: str
    raw: str
    grade: int
    retries: int


def read_annotation_log(path: str | Path) -> list[AnnotationRecord]:
    records = []
    path = Path(path)
    if not path.exists():
        return records
    lines = path.read_text(encoding="utf-8").splitlines()
    for i, line in enumerate(lines):
        line = line.strip()
        if not line:
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError:
            if i == len(lines) - 1:
                break  # torn final line from an interrupted append; re-grade it
            raise
        records.append(AnnotationRecord(**obj))
    return records


def grades_from_log(records: Iterable[AnnotationRecord]) -> dict[tuple[int, str], int]:
    return {(r.symptom_id, r.doc_id): r.grade for r in records}


@dataclass
class AnnotationSummary:
    graded: int = 0
    skipped: int = 0


def run_annotation(
    backend: Backend,
    pool: ExemplarPool,
    store: EmbeddingStore,
    sentences: Mapping[str, SentenceRecord],
    symptoms: Mapping[int, Symptom],
    targets: Sequence[tuple[int, str]],
    k: int,
    log_path: str | Path,
    include_context: bool = False,
    concurrency: int = 1,
) -> AnnotationSummary:
    """Grade every (symptom, doc) target, appending to a resumable log.

    Targets already present in the log are skipped, so an interrupted run
    resumes without duplicate requests. Requests are issued in sorted target
    order; with concurrency > 1 a bounded worker pool keeps that many
    requests in flight while log appends stay serialized.
    """
    log_path = Path(log_path)
    done = {(r.symptom_id, r.doc_id) for r in read_annotation_log(log_path)}
    todo = [t for t in sorted(set(targets)) if t not in done]
    summary = AnnotationSummary(skipped=len(set(targets)) - len(todo))
    if not todo:
        return summary

    log_path.parent.mkdir(parents=True, exist_ok=True)
    write_lock = threading.Lock()

    def grade_one(target: tuple[int, str]) -> AnnotationRecord:
        sid, doc_id = target
        record = sentences[doc_id]
        spec = PromptSpec(k=k, symptom_id=sid, include_context=include_context)
        exemplars = select_exemplars(store.vector(doc_id), pool, sid, k)
        prompt = build_relevance_prompt(
            symptoms[sid], exemplars, record.text, spec, pre=record.pre, post=record.post
        )
        response = request_relevance(backend, prompt)
        return AnnotationRecord(
            doc_id=doc_id,
            symptom_id=sid,
            k=k,
            prompt_hash=prompt_hash(prompt),
            raw=response.raw,
            grade=response.grade,
            retries=response.retries,
        )

    with open(log_path, "a", encoding="utf-8") as log:

        def emit(record: AnnotationRecord) -> None:
            with write_lock:
                log.write(json.dumps(record.__dict__, ensure_ascii=False) + "\n")
                log.flush()
                summary.graded += 1

        if concurrency <= 1:
            for target in todo:
                emit(grade_one(target))
        else:
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(max_workers=concurrency) as pool_exec:
                for record in pool_exec.map(grade_one, todo):
                    emit(record)
    return summary
