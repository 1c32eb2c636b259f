"""Synthetic MIND-format corpus where clicks follow category affinity.

Every category owns a set of topic words; titles and abstracts mix topic
words with shared filler.  Each user likes a few categories, has browsed
news from them, and in every impression clicks the liked-category
candidates and ignores the rest.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

CATEGORY_NAMES = (
    "sports", "finance", "tv", "travel", "health", "music", "weather", "autos",
    "foodanddrink", "lifestyle", "movies", "news",
)


@dataclass
class SyntheticSpec:
    n_users: int = 50
    n_news: int = 200
    n_categories: int = 6
    topic_words: int = 12
    filler_words: int = 40
    title_words: tuple[int, int] = (4, 10)
    content_words: tuple[int, int] = (12, 30)
    title_topic_fraction: float = 0.4
    content_topic_fraction: float = 0.4
    liked_categories: tuple[int, int] = (1, 3)
    history_len: tuple[int, int] = (5, 15)
    train_impressions: int = 4
    valid_impressions: int = 2
    positives: tuple[int, int] = (1, 2)
    negatives: tuple[int, int] = (4, 8)
    noise_clicks: float = 0.0
    seed: int = 0


@dataclass
class SyntheticPaths:
    news: Path
    train_behaviors: Path
    valid_behaviors: Path
    embeddings: Path | None = None


def _words(rng, n_range, topic, filler, frac):
    n = int(rng.integers(n_range[0], n_range[1] + 1))
    out = []
    for _ in range(n):
        pool = topic if rng.random() < frac else filler
        out.append(pool[int(rng.integers(len(pool)))])
    return " ".join(out)


def generate(out_dir, spec: SyntheticSpec = SyntheticSpec(), embed_dim: int | None = None) -> SyntheticPaths:
    """Write ``news.tsv``, ``behaviors_train.tsv``, ``behaviors_valid.tsv``.

    With ``embed_dim`` set, also writes ``embeddings.txt`` with random
    vectors for every word (GloVe text layout).
    """
    if spec.n_categories > len(CATEGORY_NAMES):
        raise ValueError(f"at most {len(CATEGORY_NAMES)} categories supported")
    rng = np.random.default_rng(spec.seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cats = CATEGORY_NAMES[: spec.n_categories]
    topic = {c: [f"{c}{j}" for j in range(spec.topic_words)] for c in cats}
    filler = [f"w{j}" for j in range(spec.filler_words)]

    news_cat = {}
    by_cat: dict[str, list[str]] = {c: [] for c in cats}
    with open(out / "news.tsv", "w", encoding="utf-8") as fh:
        for i in range(spec.n_news):
            nid = f"N{i + 1}"
            cat = cats[i % len(cats)]
            title = _words(rng, spec.title_words, topic[cat], filler, spec.title_topic_fraction)
            body = _words(rng, spec.content_words, topic[cat], filler, spec.content_topic_fraction)
            fh.write(f"{nid}\t{cat}\t{cat}sub\t{title}\t{body}\thttps://example.invalid/{nid}\t[]\t[]\n")
            news_cat[nid] = cat
            by_cat[cat].append(nid)

    def impression(user_likes, exclude):
        liked = [n for c in user_likes for n in by_cat[c] if n not in exclude]
        other = [n for c in cats if c not in user_likes for n in by_cat[c]]
        n_pos = int(rng.integers(spec.positives[0], spec.positives[1] + 1))
        n_neg = int(rng.integers(spec.negatives[0], spec.negatives[1] + 1))
        pos = list(rng.choice(liked, size=min(n_pos, len(liked)), replace=False))
        neg = list(rng.choice(other, size=min(n_neg, len(other)), replace=False))
        items = [(n, 1) for n in pos] + [(n, 0) for n in neg]
        if spec.noise_clicks:
            items = [(n, 1 - l) if rng.random() < spec.noise_clicks else (n, l) for n, l in items]
        order = rng.permutation(len(items))
        return " ".join(f"{items[j][0]}-{items[j][1]}" for j in order)

    train_fh = open(out / "behaviors_train.tsv", "w", encoding="utf-8")
    valid_fh = open(out / "behaviors_valid.tsv", "w", encoding="utf-8")
    imp_id = 0
    with train_fh, valid_fh:
        for u in range(spec.n_users):
            uid = f"U{u + 1}"
            n_like = int(rng.integers(spec.liked_categories[0], spec.liked_categories[1] + 1))
            likes = [cats[j] for j in rng.choice(len(cats), size=n_like, replace=False)]
            pool = [n for c in likes for n in by_cat[c]]
            h_len = int(rng.integers(spec.history_len[0], spec.history_len[1] + 1))
            history = list(rng.choice(pool, size=min(h_len, len(pool) - 1), replace=False))
            hist_text = " ".join(history)
            for fh, count in ((train_fh, spec.train_impressions), (valid_fh, spec.valid_impressions)):
                for _ in range(count):
                    imp_id += 1
                    fh.write(f"{imp_id}\t{uid}\t11/15/2019 8:00:00 AM\t{hist_text}\t{impression(likes, set(history))}\n")

    emb_path = None
    if embed_dim:
        emb_path = out / "embeddings.txt"
        vocab = sorted({w for ws in topic.values() for w in ws} | set(filler))
        with open(emb_path, "w", encoding="utf-8") as fh:
            for w in vocab:
                vec = rng.normal(0, 0.3, size=embed_dim)
                fh.write(w + " " + " ".join(f"{x:.5f}" for x in vec) + "\n")
    return SyntheticPaths(out / "news.tsv", out / "behaviors_train.tsv", out / "behaviors_valid.tsv", emb_path)
