"""Command-line pipeline: prepare -> score -> annotate -> build-runs -> evaluate.

Each subcommand reads its inputs from a YAML config, writes its outputs under
the configured output directory (atomically, so interrupted stages leave no
partial files), and exits non-zero with a message on any failure. Stages are
independent so the expensive ones (corpus scoring, oracle calls) can be
cached and re-entered.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from symptomrank import corpus as corpus_mod
from symptomrank import dataset, evaluation, oracle, runs, similarity
from symptomrank.config import ConfigError, PipelineConfig, load_config
from symptomrank.fileio import atomic_write

RUN_ORDER = ["mix23", "aug-best", "maxcos", "max", "unanimity"]
AUG_1STEP = "mix23-aug-1step"
AUG_2STEP = "mix23-aug-2step"


def main(argv: list[str] | None = None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        config = load_config(args.config)
        if getattr(args, "seed", None) is not None:
            config.seed = args.seed
        if getattr(args, "k", None) is not None:
            config.oracle.k = args.k
        return args.handler(config, args)
    except Exception as exc:  # surface module errors as messages, not tracebacks
        print(f"error: {exc}", file=sys.stderr)
        return 1


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="symptomrank",
        description="Rank sentences by relevance to BDI-II depression symptoms.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="dedup corpus, reconcile labels, build the split")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=None, help="override split seed")
    p.set_defaults(handler=cmd_prepare)

    p = sub.add_parser("score", help="max-cosine scoring plus threshold calibration")
    p.add_argument("--config", required=True)
    p.set_defaults(handler=cmd_score)

    p = sub.add_parser("annotate", help="grade candidate sentences with the oracle")
    p.add_argument("--config", required=True)
    p.add_argument("--k", type=int, default=None, help="override exemplar count per label")
    p.set_defaults(handler=cmd_annotate)

    p = sub.add_parser("build-runs", help="construct the five submission runs")
    p.add_argument("--config", required=True)
    p.add_argument("--k", type=int, default=None, help="grade log to use for unanimity")
    p.set_defaults(handler=cmd_build_runs)

    p = sub.add_parser("evaluate", help="classification and IR reports against qrels")
    p.add_argument("--config", required=True)
    p.add_argument("--setting", choices=["majority", "unanimity"], default=None)
    p.set_defaults(handler=cmd_evaluate)
    return parser


# ---------------------------------------------------------------------------
# prepare
# ---------------------------------------------------------------------------

def cmd_prepare(config: PipelineConfig, args) -> int:
    config.require("corpus", "labels")
    questionnaire = corpus_mod.load_questionnaire(config.questionnaire_path)
    records = list(corpus_mod.parse_trec_corpus(config.corpus))
    labels = dataset.read_labels(config.labels)

    kept, merged = corpus_mod.dedup_with_reconciliation(records, labels)
    index = corpus_mod.dedup_index(records)
    split = dataset.stratified_split(merged, config.train_fraction, seed=config.seed)

    out = config.output_dir / "prepared"
    with atomic_write(out / "corpus_index.tsv") as fh:
        for rec in records:
            fh.write(f"{rec.doc_id}\t{index[rec.doc_id]}\n")
    with atomic_write(out / "labels.tsv") as fh:
        dataset.write_labels(merged, fh)
    with atomic_write(out / "split.tsv") as fh:
        dataset.write_split(split, fh)

    counts_text, counts_tsv = _count_tables(questionnaire, merged, split)
    with atomic_write(out / "counts.txt") as fh:
        fh.write(counts_text)
    with atomic_write(out / "counts.tsv") as fh:
        fh.write(counts_tsv)

    if config.synthetic is not None:
        config.require("synthetic")
        synth, _texts = dataset.read_synthetic_sentences(config.synthetic)
        train_keys = {(a.doc_id, a.symptom_id) for a in split if a.split == "train"}
        train = [l for l in merged if (l.doc_id, l.symptom_id) in train_keys]
        augmented, report = dataset.merge_synthetic(train, synth)
        with atomic_write(out / "train_augmented.tsv") as fh:
            dataset.write_labels(augmented, fh)
        with atomic_write(out / "synthetic_merge.tsv") as fh:
            for sid in sorted(report.per_symptom):
                fh.write(f"{sid}\t{report.per_symptom[sid]}\n")
            fh.write(f"total\t{report.total}\n")

    dropped = len(records) - len(kept)
    print(
        f"prepare: kept {len(kept)} of {len(records)} sentences "
        f"({dropped} duplicates collapsed); {len(merged)} reconciled labels; "
        f"split seed {config.seed}"
    )
    return 0


def _count_tables(questionnaire, labels, split) -> tuple[str, str]:
    split_of = {(a.doc_id, a.symptom_id): a.split for a in split}
    names = {s.id: s.name for s in questionnaire}
    rows = []
    totals = {"train": [0, 0, 0], "val": [0, 0, 0]}
    for sid in sorted(names):
        cells = {}
        for part in ("train", "val"):
            members = [
                l for l in labels
                if l.symptom_id == sid and split_of[(l.doc_id, l.symptom_id)] == part
            ]
            n = len(members)
            maj = sum(1 for l in members if l.majority)
            unan = sum(1 for l in members if l.unanimity)
            cells[part] = (n, maj, unan)
            totals[part][0] += n
            totals[part][1] += maj
            totals[part][2] += unan
        rows.append((names[sid], cells["train"], cells["val"]))

    def fmt(cell):
        return f"{cell[0]} ({cell[1]}/{cell[2]})"

    def total_of(train, val):
        return tuple(t + v for t, v in zip(train, val))

    width = max(len("Symptom"), max(len(n) for n in names.values())) + 2
    text_lines = [f"{'Symptom':<{width}}{'train':<20}{'val':<18}{'Total':<20}"]
    tsv_lines = [
        "symptom\ttrain\ttrain_majority\ttrain_unanimity"
        "\tval\tval_majority\tval_unanimity\ttotal\ttotal_majority\ttotal_unanimity"
    ]
    for name, train, val in rows:
        total = total_of(train, val)
        text_lines.append(f"{name:<{width}}{fmt(train):<20}{fmt(val):<18}{fmt(total):<20}")
        tsv_lines.append(
            f"{name}\t" + "\t".join(str(x) for x in (*train, *val, *total))
        )
    grand_total = total_of(totals["train"], totals["val"])
    text_lines.append(
        f"{'Total':<{width}}{fmt(totals['train']):<20}{fmt(totals['val']):<18}"
        f"{fmt(grand_total):<20}"
    )
    tsv_lines.append(
        "Total\t" + "\t".join(str(x) for x in (*totals["train"], *totals["val"], *grand_total))
    )
    return "\n".join(text_lines) + "\n", "\n".join(tsv_lines) + "\n"


# ---------------------------------------------------------------------------
# score
# ---------------------------------------------------------------------------

def _kept_doc_ids(config: PipelineConfig) -> list[str]:
    index_path = config.output_dir / "prepared" / "corpus_index.tsv"
    if not index_path.exists():
        raise ConfigError(f"{index_path} not found; run `symptomrank prepare` first")
    kept: list[str] = []
    seen: set[str] = set()
    with open(index_path, encoding="utf-8") as fh:
        for line in fh:
            doc_id, keeper = line.rstrip("\n").split("\t")
            if doc_id == keeper and doc_id not in seen:
                kept.append(doc_id)
                seen.add(doc_id)
    return kept


def cmd_score(config: PipelineConfig, args) -> int:
    config.require("embeddings")
    store = similarity.load_embeddings(config.embeddings)
    options = similarity.extract_option_vectors(store)
    kept_ids = _kept_doc_ids(config)
    sentence_store = store.subset(kept_ids)

    table = similarity.score_corpus(
        sentence_store, options, parallel=config.scoring_parallel
    )
    split = dataset.read_split(config.output_dir / "prepared" / "split.tsv")
    train_docs = dataset.train_doc_ids(split)
    train_scores = {}
    for sid, docs in sorted(train_docs.items()):
        missing = [d for d in docs if (sid, d) not in table.scores]
        if missing:
            raise ConfigError(
                f"symptom {sid}: no maxcos score for train docs {sorted(missing)[:5]}"
            )
        train_scores[sid] = [table.scores[(sid, d)] for d in sorted(docs)]
    thresholds = similarity.calibrate_thresholds(train_scores)
    positives = runs.positive_set(
        table, runs.PositiveRule.calibrated(thresholds.as_mapping())
    )

    out = config.output_dir / "scored"
    with atomic_write(out / "maxcos_scores.tsv") as fh:
        runs.write_score_table(table, fh)
    with atomic_write(out / "thresholds.tsv") as fh:
        similarity.write_thresholds(thresholds, fh)
    with atomic_write(out / "maxcos_positives.tsv") as fh:
        runs.write_positive_set(positives, fh)

    n_pos = sum(len(d) for d in positives.docs.values())
    print(
        f"score: {len(sentence_store)} sentences x {len(options)} symptoms scored; "
        f"{len(thresholds.stats)} thresholds calibrated; {n_pos} positives"
    )
    return 0


# ---------------------------------------------------------------------------
# annotate
# ---------------------------------------------------------------------------

def _make_backend(config: PipelineConfig):
    settings = config.oracle
    if settings.backend == "mock":
        if settings.mock_script is None:
            raise ConfigError("oracle.backend is 'mock' but oracle.mock_script is unset")
        return oracle.MockBackend.from_script(settings.mock_script, mode=settings.mock_mode)
    if settings.endpoint is None:
        raise ConfigError(
            "oracle.backend is 'http' but no endpoint configured "
            "(set oracle.endpoint or SYMPTOMRANK_ENDPOINT)"
        )
    return oracle.HttpBackend(
        endpoint=settings.endpoint,
        model=settings.model,
        api_key=config.api_key(),
        max_retries=settings.max_retries,
        requests_per_second=settings.requests_per_second,
    )


def _regression_positive_sets(config: PipelineConfig, candidates) -> dict[str, runs.PositiveSet]:
    """mix23 and aug-best positive sets restricted to the candidate universe."""
    config.require("score_tables", "val_f1")
    for tag in ("mix23", AUG_1STEP, AUG_2STEP):
        if tag not in config.score_tables:
            raise ConfigError(f"config paths.score_tables is missing {tag!r}")
    mix23 = runs.ingest_score_table(config.score_tables["mix23"], "mix23")
    aug1 = runs.ingest_score_table(config.score_tables[AUG_1STEP], AUG_1STEP)
    aug2 = runs.ingest_score_table(config.score_tables[AUG_2STEP], AUG_2STEP)
    val_f1 = runs.read_val_f1(config.val_f1)
    aug_best, _ = runs.select_aug_best(aug1, aug2, val_f1)
    rule = runs.PositiveRule.regression()
    restricted = {
        "mix23": mix23.restrict(candidates),
        "aug-best": aug_best.restrict(candidates),
    }
    return {tag: runs.positive_set(t, rule) for tag, t in restricted.items()}


def _intersection_targets(config: PipelineConfig) -> list[tuple[int, str]]:
    scored = config.output_dir / "scored"
    if not (scored / "maxcos_positives.tsv").exists():
        raise ConfigError(f"{scored}/maxcos_positives.tsv not found; run `symptomrank score` first")
    maxcos_positives = runs.read_positive_set(scored / "maxcos_positives.tsv", "maxcos")
    candidates = dict(maxcos_positives.docs)
    psets = _regression_positive_sets(config, candidates)
    targets = []
    for sid in sorted(candidates):
        common = (
            candidates[sid]
            & psets["mix23"].get(sid)
            & psets["aug-best"].get(sid)
        )
        targets.extend((sid, doc) for doc in sorted(common))
    return targets


def _read_targets_file(path: str | Path) -> list[tuple[int, str]]:
    targets = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise ConfigError(f"targets file line {lineno}: expected `symptom<TAB>doc`")
            targets.append((int(parts[0]), parts[1]))
    return targets


def cmd_annotate(config: PipelineConfig, args) -> int:
    config.require("corpus", "labels", "embeddings")
    settings = config.oracle
    questionnaire = {s.id: s for s in corpus_mod.load_questionnaire(config.questionnaire_path)}
    store = similarity.load_embeddings(config.embeddings)

    records = list(corpus_mod.parse_trec_corpus(config.corpus))
    kept, merged = corpus_mod.dedup_with_reconciliation(records, dataset.read_labels(config.labels))
    sentences = {rec.doc_id: rec for rec in kept}

    split_path = config.output_dir / "prepared" / "split.tsv"
    if not split_path.exists():
        raise ConfigError(f"{split_path} not found; run `symptomrank prepare` first")
    split = dataset.read_split(split_path)
    train_keys = {(a.doc_id, a.symptom_id) for a in split if a.split == "train"}
    train_labels = [l for l in merged if (l.doc_id, l.symptom_id) in train_keys]
    pool = oracle.build_exemplar_pool(
        train_labels, {d: r.text for d, r in sentences.items()}, store
    )

    if settings.targets == "intersection":
        targets = _intersection_targets(config)
    else:
        targets = _read_targets_file(settings.targets)

    backend = _make_backend(config)
    # scripted sequence responses must map to a stable request order
    concurrency = 1 if settings.backend == "mock" else settings.concurrency
    log_path = config.output_dir / "oracle" / f"grades_k{settings.k}.jsonl"
    summary = oracle.run_annotation(
        backend=backend,
        pool=pool,
        store=store,
        sentences=sentences,
        symptoms=questionnaire,
        targets=targets,
        k=settings.k,
        log_path=log_path,
        include_context=settings.include_context,
        concurrency=concurrency,
    )

    grades = oracle.grades_from_log(oracle.read_annotation_log(log_path))
    shot_tag = f"{settings.k}-shot"
    pset = runs.PositiveSet(tag=shot_tag)
    for (sid, doc), grade in grades.items():
        if grade == 1:
            pset.docs.setdefault(sid, set()).add(doc)
    with atomic_write(config.output_dir / "positives" / f"{shot_tag}.tsv") as fh:
        runs.write_positive_set(pset, fh)

    print(
        f"annotate: {summary.graded} graded, {summary.skipped} already logged "
        f"(k={settings.k}, log {log_path})"
    )
    return 0


# ---------------------------------------------------------------------------
# build-runs
# ---------------------------------------------------------------------------

def cmd_build_runs(config: PipelineConfig, args) -> int:
    config.require("score_tables", "val_f1")
    scored = config.output_dir / "scored"
    for name in ("maxcos_scores.tsv", "thresholds.tsv", "maxcos_positives.tsv"):
        if not (scored / name).exists():
            raise ConfigError(f"{scored / name} not found; run `symptomrank score` first")

    maxcos_table = runs.ingest_score_table(scored / "maxcos_scores.tsv", "maxcos")
    thresholds = similarity.read_thresholds(scored / "thresholds.tsv")
    maxcos_positives = runs.read_positive_set(scored / "maxcos_positives.tsv", "maxcos")

    mix23 = runs.ingest_score_table(config.score_tables["mix23"], "mix23")
    aug1 = runs.ingest_score_table(config.score_tables[AUG_1STEP], AUG_1STEP)
    aug2 = runs.ingest_score_table(config.score_tables[AUG_2STEP], AUG_2STEP)
    val_f1 = runs.read_val_f1(config.val_f1)
    aug_best, provenance = runs.select_aug_best(aug1, aug2, val_f1)

    universe = {sid: maxcos_table.docs(sid) for sid in maxcos_table.symptoms()}
    candidates = runs.filter_candidates(universe, maxcos_positives)
    mix23_c = mix23.restrict(candidates)
    aug_best_c = aug_best.restrict(candidates)
    maxcos_c = maxcos_table.restrict(candidates)

    regression = runs.PositiveRule.regression()
    calibrated = runs.PositiveRule.calibrated(thresholds.as_mapping())
    cap = config.run_cap

    run_files = {
        "mix23": runs.build_positive_run(mix23_c, regression, cap=cap),
        "aug-best": runs.build_positive_run(aug_best_c, regression, cap=cap),
        "maxcos": runs.build_positive_run(maxcos_table, calibrated, cap=cap),
    }
    tables = [mix23_c, aug_best_c, maxcos_c]
    run_files["max"] = runs.ensemble_max(tables, cap=cap)

    grade_log = config.output_dir / "oracle" / f"grades_k{config.oracle.k}.jsonl"
    if not grade_log.exists():
        raise ConfigError(
            f"unanimity run needs oracle grades: {grade_log} not found; "
            "run `symptomrank annotate` first"
        )
    grades = oracle.grades_from_log(oracle.read_annotation_log(grade_log))
    positive_sets = [
        runs.positive_set(mix23_c, regression),
        runs.positive_set(aug_best_c, regression),
        maxcos_positives,
    ]
    run_files["unanimity"] = runs.ensemble_unanimity(positive_sets, grades, tables, cap=cap)

    out = config.output_dir / "runs"
    for tag in RUN_ORDER:
        with atomic_write(out / f"{tag}.run") as fh:
            runs.write_run_file(run_files[tag], fh, cap=cap)
    with atomic_write(config.output_dir / "aug_best_provenance.tsv") as fh:
        for sid in sorted(provenance):
            fh.write(f"{sid}\t{provenance[sid]}\n")
    positives_dir = config.output_dir / "positives"
    for tag, pset in (
        ("mix23", positive_sets[0]),
        ("aug-best", positive_sets[1]),
        ("maxcos", maxcos_positives),
    ):
        with atomic_write(positives_dir / f"{tag}.tsv") as fh:
            runs.write_positive_set(pset, fh)

    for tag in RUN_ORDER:
        sizes = [len(v) for v in run_files[tag].entries.values()]
        empty = sum(1 for s in sizes if s == 0)
        print(
            f"build-runs: {tag}: {sum(sizes)} entries across {len(sizes)} symptoms"
            + (f" ({empty} empty)" if empty else "")
        )
    return 0


# ---------------------------------------------------------------------------
# evaluate
# ---------------------------------------------------------------------------

_CLASSIFICATION_ORDER = ["mix23", "aug-best", "maxcos"]


def _approach_sort_key(tag: str) -> tuple[int, str]:
    if tag in _CLASSIFICATION_ORDER:
        return (_CLASSIFICATION_ORDER.index(tag), tag)
    return (len(_CLASSIFICATION_ORDER), tag)


def cmd_evaluate(config: PipelineConfig, args) -> int:
    settings = ["majority", "unanimity"] if args.setting is None else [args.setting]
    qrels = {}
    for setting in settings:
        path = getattr(config, f"qrels_{setting}")
        if path is None:
            raise ConfigError(f"config is missing paths.qrels_{setting}")
        config.require(f"qrels_{setting}")
        qrels[setting] = evaluation.read_qrels(path, setting)

    out = config.output_dir / "reports"

    positives_dir = config.output_dir / "positives"
    pset_files = sorted(positives_dir.glob("*.tsv")) if positives_dir.exists() else []
    if pset_files:
        tags = sorted((p.stem for p in pset_files), key=_approach_sort_key)
        reports = {
            tag: {
                setting: evaluation.evaluate_classification(
                    runs.read_positive_set(positives_dir / f"{tag}.tsv", tag), q
                )
                for setting, q in qrels.items()
            }
            for tag in tags
        }
        if len(settings) == 2:
            rows = [(tag, reports[tag]["majority"], reports[tag]["unanimity"]) for tag in tags]
            text = evaluation.render_classification_table(rows)
            tsv = evaluation.classification_table_tsv(rows)
        else:
            only = settings[0]
            lines = [f"Approach\t{only}_f1\t{only}_std"]
            for tag in tags:
                r = reports[tag][only]
                lines.append(f"{tag}\t{r.macro_mean:.6f}\t{r.macro_std:.6f}")
            text = tsv = "\n".join(lines) + "\n"
        with atomic_write(out / "classification.txt") as fh:
            fh.write(text)
        with atomic_write(out / "classification.tsv") as fh:
            fh.write(tsv)
        print("evaluate: classification report over " + ", ".join(tags))

    runs_dir = config.output_dir / "runs"
    run_files = sorted(runs_dir.glob("*.run")) if runs_dir.exists() else []
    if run_files:
        tag_order = {tag: i for i, tag in enumerate(RUN_ORDER)}
        parsed = [runs.parse_run_file(p, cap=config.run_cap) for p in run_files]
        parsed.sort(key=lambda r: (tag_order.get(r.tag, len(RUN_ORDER)), r.tag))
        ir_reports = {
            setting: [evaluation.evaluate_ir(run, q) for run in parsed]
            for setting, q in qrels.items()
        }
        with atomic_write(out / "ir.txt") as fh:
            fh.write(evaluation.render_ir_table(ir_reports))
        with atomic_write(out / "ir.tsv") as fh:
            fh.write(evaluation.ir_table_tsv(ir_reports))
        print(f"evaluate: IR report over {len(parsed)} runs x {len(settings)} settings")

    if not pset_files and not run_files:
        raise ConfigError(
            f"nothing to evaluate: no positive sets or run files under {config.output_dir}"
        )
    return 0


if __name__ == "__main__":
    sys.exit(main())
