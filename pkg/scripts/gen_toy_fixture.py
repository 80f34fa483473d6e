#!/usr/bin/env python3
"""Regenerate the bundled toy fixture under fixtures/toy/.

The fixture is a fully self-contained 200-sentence pipeline input: TREC
corpus with injected near-duplicates, labels, 16-d random embeddings (binary
and text), three regression score tables, validation F1 values, qrels for
both annotation settings, a scripted mock oracle, and a config file wiring
it all together. Everything is seeded, so rerunning this script reproduces
the fixture byte for byte.
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from symptomrank import corpus as corpus_mod
from symptomrank import dataset, runs, similarity

ROOT = Path(__file__).resolve().parents[1]
OUT = ROOT / "fixtures" / "toy"
DIM = 16
SEED = 42

PHRASES = {
    1: "I feel so sad these days",
    2: "nothing about my future looks good",
    3: "I keep thinking about everything I failed at",
    4: "the things I loved do not feel fun anymore",
    5: "I feel guilty about letting everyone down",
    6: "I feel like life is punishing me",
    7: "I really do not like who I am",
    8: "I keep blaming myself for every small mistake",
    9: "sometimes I think everyone would be better off without me",
    10: "I keep crying over the smallest things",
    11: "I cannot sit still, everything makes me restless",
    12: "I stopped caring about people around me",
    13: "I cannot make even simple decisions anymore",
    14: "I feel completely useless to everyone",
    15: "I have no energy left for anything",
    16: "I barely sleep at night anymore",
    17: "every little thing makes me snap lately",
    18: "I have no appetite at all this week",
    19: "I cannot focus on anything for more than a minute",
    20: "I am exhausted no matter how much I rest",
    21: "I have lost all interest in intimacy",
}

FILLERS = [
    "the bus was late again this morning",
    "we watched the game at my cousin's place",
    "this recipe needs more garlic honestly",
    "my laptop finally arrived from the shop",
    "the weather was great for a picnic",
    "I repainted the kitchen over the weekend",
    "the new album is okay, not their best",
    "traffic on the bridge was terrible today",
    "our team shipped the release on time",
    "the garden tomatoes are ripening early",
    "grabbed coffee with an old friend downtown",
]


def main() -> None:
    rng = np.random.default_rng(SEED)
    OUT.mkdir(parents=True, exist_ok=True)

    # --- sentences: 9 on-topic per symptom (189) + 11 fillers = 200 base docs
    records = []
    topic_of = {}
    doc_no = 0
    for sid in range(1, 22):
        for variant in range(9):
            doc_no += 1
            doc_id = f"t{doc_no:04d}"
            text = f"{PHRASES[sid]} (entry {variant + 1})"
            pre = "it has been a long week" if variant % 3 == 0 else None
            post = "anyway, that is where I am" if variant % 4 == 0 else None
            records.append(corpus_mod.SentenceRecord(doc_id, text, pre, post))
            topic_of[doc_id] = sid
    for filler in FILLERS:
        doc_no += 1
        doc_id = f"t{doc_no:04d}"
        records.append(corpus_mod.SentenceRecord(doc_id, filler))
        topic_of[doc_id] = 0

    # --- inject 8 near-duplicates of on-topic sentences (case/punct variants)
    dup_sources = [records[i] for i in range(0, 160, 21)][:8]
    for j, src in enumerate(dup_sources):
        doc_no += 1
        doc_id = f"t{doc_no:04d}"
        text = src.text.upper() if j % 2 == 0 else src.text + "."
        records.append(corpus_mod.SentenceRecord(doc_id, text))
        topic_of[doc_id] = topic_of[src.doc_id]
    assert len(records) == 208

    with open(OUT / "corpus.trec", "w", encoding="utf-8") as fh:
        corpus_mod.write_trec_corpus(records, fh)

    index = corpus_mod.dedup_index(records)
    kept_ids = [r.doc_id for r in records if index[r.doc_id] == r.doc_id]

    # --- labels: 9 positives (7 unanimous) + 75 negatives per symptom, so the
    # score distribution is negative-dominated the way a real corpus is and
    # the mean + 2*std threshold lands between the two clusters
    label_rows = []
    by_topic = {}
    for rec in records:
        by_topic.setdefault(topic_of[rec.doc_id], []).append(rec.doc_id)
    all_base = [r.doc_id for r in records[:200]]
    for sid in range(1, 22):
        on_topic = [d for d in by_topic.get(sid, []) if index[d] == d][:9]
        for i, doc in enumerate(on_topic):
            label_rows.append((doc, sid, 1, 1 if i < 7 else 0))
        off_topic = [d for d in all_base if topic_of[d] != sid and index[d] == d]
        picks = rng.choice(len(off_topic), size=75, replace=False)
        for p in sorted(picks):
            label_rows.append((off_topic[p], sid, 0, 0))
    # a couple of duplicate docs also carry (conflicting) labels to exercise
    # reconciliation end to end
    for src in dup_sources[:2]:
        dup_id = [r.doc_id for r in records if index[r.doc_id] == src.doc_id and r.doc_id != src.doc_id][0]
        label_rows.append((dup_id, topic_of[src.doc_id], 1, 0))
    with open(OUT / "labels.tsv", "w", encoding="utf-8") as fh:
        for doc, sid, maj, unan in label_rows:
            fh.write(f"{doc}\t{sid}\t{maj}\t{unan}\n")

    # --- embeddings: option vectors random; on-topic sentences hug an option
    vectors: dict[str, np.ndarray] = {}
    option_vecs = {}
    for sid in range(1, 22):
        for intensity in range(4):
            v = rng.normal(size=DIM)
            v /= np.linalg.norm(v)
            option_vecs[(sid, intensity)] = v
            vectors[similarity.option_doc_id(sid, intensity)] = v
    for rec in records:
        sid = topic_of[rec.doc_id]
        if sid == 0:
            v = rng.normal(size=DIM)
        else:
            base = option_vecs[(sid, int(rng.integers(0, 4)))]
            v = 0.92 * base + 0.05 * rng.normal(size=DIM)
        vectors[rec.doc_id] = v / np.linalg.norm(v)
    store = similarity.EmbeddingStore.from_vectors(vectors)
    similarity.write_embeddings(store, OUT / "embeddings.emb", binary=True)
    similarity.write_embeddings(store, OUT / "embeddings.tsv", binary=False)

    # --- regression score tables over kept docs
    labeled_pos = {(doc, sid) for doc, sid, maj, _ in label_rows if maj == 1}
    for tag, fname, lift in (
        ("mix23", "scores_mix23.tsv", 0.0),
        ("mix23-aug-1step", "scores_aug1.tsv", 0.02),
        ("mix23-aug-2step", "scores_aug2.tsv", 0.03),
    ):
        table = runs.ScoreTable(approach_tag=tag)
        for sid in range(1, 22):
            for doc in kept_ids:
                relevant = topic_of[doc] == sid or (doc, sid) in labeled_pos
                base = 0.78 if relevant else 0.18
                noise = float(rng.normal(scale=0.16))
                table.scores[(sid, doc)] = float(np.clip(base + lift + noise, 0.0, 1.0))
        runs.write_score_table(table, OUT / fname)

    # --- validation F1 per symptom for the two augmented variants
    f1_values = {}
    for sid in range(1, 22):
        f1_values[(sid, "mix23-aug-1step")] = round(float(rng.uniform(0.70, 0.95)), 3)
        f1_values[(sid, "mix23-aug-2step")] = round(float(rng.uniform(0.70, 0.95)), 3)
    runs.write_val_f1(f1_values, OUT / "val_f1.tsv")

    # --- qrels straight from the reconciled labels
    records_kept, merged = corpus_mod.dedup_with_reconciliation(
        records, dataset.read_labels(OUT / "labels.tsv")
    )
    with open(OUT / "qrels_majority.txt", "w", encoding="utf-8") as fh:
        for l in sorted(merged, key=lambda l: (l.symptom_id, l.doc_id)):
            fh.write(f"{l.symptom_id} 0 {l.doc_id} {int(l.majority)}\n")
    with open(OUT / "qrels_unanimity.txt", "w", encoding="utf-8") as fh:
        for l in sorted(merged, key=lambda l: (l.symptom_id, l.doc_id)):
            fh.write(f"{l.symptom_id} 0 {l.doc_id} {int(l.unanimity)}\n")

    # --- scripted mock oracle: plenty of parseable grades, mild format variety
    forms_pos = ["[1]", "[1]", "[1]", "1", "Relevant: [1]"]
    forms_neg = ["[0]", "[0]", "0", "Non-relevant: [0]"]
    with open(OUT / "mock_oracle.txt", "w", encoding="utf-8") as fh:
        for _ in range(4500):
            if rng.random() < 0.8:
                fh.write(forms_pos[int(rng.integers(0, len(forms_pos)))] + "\n")
            else:
                fh.write(forms_neg[int(rng.integers(0, len(forms_neg)))] + "\n")

    (OUT / "config.yaml").write_text(
        """\
paths:
  corpus: corpus.trec
  labels: labels.tsv
  embeddings: embeddings.emb
  score_tables:
    mix23: scores_mix23.tsv
    mix23-aug-1step: scores_aug1.tsv
    mix23-aug-2step: scores_aug2.tsv
  val_f1: val_f1.tsv
  qrels_majority: qrels_majority.txt
  qrels_unanimity: qrels_unanimity.txt
  output_dir: out
split:
  seed: 13
  train_fraction: 0.8
oracle:
  k: 5
  backend: mock
  mock_script: mock_oracle.txt
  mock_mode: sequence
  targets: intersection
runs:
  cap: 1000
""",
        encoding="utf-8",
    )
    print(f"wrote toy fixture to {OUT} ({len(records)} docs, {len(kept_ids)} kept)")


if __name__ == "__main__":
    main()
