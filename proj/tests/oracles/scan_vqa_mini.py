"""Single-pass scan of the vqa_mini fixture; writes manifest.json.

Independent of the C++ code: category lookup via str.lower/split, word counts
via str.split, tokens via NFC + whitespace split + peeling of Unicode
punctuation (general category P*).
"""
import json
import pathlib
import unicodedata

HERE = pathlib.Path(__file__).resolve().parent.parent / "fixtures" / "vqa_mini"
CATEGORIES = ["activity", "animal", "attribute", "binary", "color", "count", "food", "location",
              "material", "object", "other", "predicate", "shape", "spatial", "stuff", "time"]


def key(s):
    return " ".join(unicodedata.normalize("NFC", s).lower().split())


def tokens(s):
    out = []
    for w in unicodedata.normalize("NFC", s).split():
        lead, trail = [], []
        while w and unicodedata.category(w[0]).startswith("P"):
            lead.append(w[0]); w = w[1:]
        while w and unicodedata.category(w[-1]).startswith("P"):
            trail.insert(0, w[-1]); w = w[:-1]
        out += lead + ([w] if w else []) + trail
    return out


cmap = {}
for line in (HERE / "category_map.tsv").read_text(encoding="utf-8").splitlines():
    if line.strip():
        a, c = line.split("\t")
        cmap[key(a)] = c
qs = {q["question_id"]: q for q in json.loads((HERE / "questions.json").read_text("utf-8"))["questions"]}
kept = []
for a in json.loads((HERE / "annotations.json").read_text("utf-8"))["annotations"]:
    if key(a["multiple_choice_answer"]) in cmap:
        q = qs[a["question_id"]]
        kept.append((q["image_id"], q["question"], a["multiple_choice_answer"], cmap[key(a["multiple_choice_answer"])]))

words = [len(q.split()) for _, q, _, _ in kept]
vocab = []
for doc in [q for _, q, _, _ in kept] + [a for _, _, a, _ in kept]:
    for t in tokens(doc):
        if t not in vocab:
            vocab.append(t)
for c in CATEGORIES:
    if c not in vocab:
        vocab.append(c)

manifest = {
    "n_questions_total": len(qs),
    "n_retained": len(kept),
    "stats": {"n_questions": len(kept), "n_images": len({i for i, _, _, _ in kept}),
              "max_words": max(words), "min_words": min(words), "avg_words": sum(words) / len(words)},
    "retained_categories": [c for _, _, _, c in kept],
    "vocab_size": 4 + len(vocab),
    "category_map_rows": len(cmap),
}
(HERE / "manifest.json").write_text(json.dumps(manifest, ensure_ascii=False, indent=1) + "\n", "utf-8")
print(json.dumps(manifest, ensure_ascii=False))
