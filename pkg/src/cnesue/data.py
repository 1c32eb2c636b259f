"""MIND-format ingestion: news and behaviour TSVs, vocabulary, word vectors.

``news.tsv`` columns: news id, category, subcategory, title, abstract, url,
title entities, abstract entities.  ``behaviors.tsv`` columns: impression id,
user id, time, history (space-separated news ids), impressions
(space-separated ``<news id>-<0|1>``).
"""
from __future__ import annotations

import hashlib
import logging
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from .errors import ConfigError, DataFormatError

log = logging.getLogger(__name__)

PAD, UNK = 0, 1
PAD_TOKEN, UNK_TOKEN = "<pad>", "<unk>"
TITLE_LEN, CONTENT_LEN = 32, 128
HISTORY_CAP = 50
NEG_K = 4

_TOKEN_RE = re.compile(r"[a-z0-9]+")


def tokenize(text: str) -> list[str]:
    """Lowercase and split on runs of non-alphanumeric characters."""
    return _TOKEN_RE.findall(text.lower())


class Vocabulary:
    """Token <-> id map with ``<pad>`` at 0 and ``<unk>`` at 1."""

    def __init__(self, tokens: Iterable[str] = ()):
        self.itos: list[str] = [PAD_TOKEN, UNK_TOKEN]
        self.stoi: dict[str, int] = {PAD_TOKEN: PAD, UNK_TOKEN: UNK}
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        idx = self.stoi.get(token)
        if idx is None:
            idx = self.stoi[token] = len(self.itos)
            self.itos.append(token)
        return idx

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, token: str) -> bool:
        return token in self.stoi

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.stoi.get(t, UNK) for t in tokens]

    def digest(self) -> str:
        return hashlib.sha1("\n".join(self.itos).encode("utf-8")).hexdigest()

    def save(self, path) -> None:
        Path(path).write_text("\n".join(self.itos[2:]) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "Vocabulary":
        lines = Path(path).read_text(encoding="utf-8").splitlines()
        return cls(t for t in lines if t)


@dataclass(frozen=True, eq=False)
class NewsArticle:
    news_id: str
    category: str
    title: np.ndarray
    content: np.ndarray
    title_words: tuple[str, ...] = ()
    content_words: tuple[str, ...] = ()

    @property
    def title_mask(self) -> np.ndarray:
        return self.title != PAD

    @property
    def content_mask(self) -> np.ndarray:
        return self.content != PAD


def _pad(ids: list[int], length: int) -> np.ndarray:
    out = np.zeros(length, dtype=np.int32)
    ids = ids[:length] or [UNK]
    out[: len(ids)] = ids
    return out


def _news_rows(path) -> Iterator[tuple[int, list[str]]]:
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            cols = line.split("\t")
            if not 5 <= len(cols) <= 8:
                raise DataFormatError(path, line_no, f"expected 5-8 tab-separated columns, got {len(cols)}")
            yield line_no, cols


def build_vocabulary(news_paths: Iterable, min_count: int = 1) -> Vocabulary:
    """Vocabulary over title and abstract tokens of the given news files."""
    counts: Counter = Counter()
    for path in news_paths:
        for _, cols in _news_rows(path):
            counts.update(tokenize(cols[3]))
            counts.update(tokenize(cols[4]))
    keep = sorted((t for t, c in counts.items() if c >= min_count), key=lambda t: (-counts[t], t))
    return Vocabulary(keep)


def parse_news_tsv(path, vocab: Vocabulary, title_len: int = TITLE_LEN, content_len: int = CONTENT_LEN) -> list[NewsArticle]:
    """Tokenise titles (column 4) and abstracts (column 5) to fixed-length id arrays.

    Empty titles or abstracts become a single ``<unk>`` token so every mask
    has at least one real position.
    """
    articles = []
    for _, cols in _news_rows(path):
        title = tokenize(cols[3])[:title_len]
        content = tokenize(cols[4])[:content_len]
        articles.append(
            NewsArticle(
                news_id=cols[0],
                category=cols[1],
                title=_pad(vocab.encode(title), title_len),
                content=_pad(vocab.encode(content), content_len),
                title_words=tuple(title) or (UNK_TOKEN,),
                content_words=tuple(content) or (UNK_TOKEN,),
            )
        )
    return articles


class NewsTable:
    """Stacked token arrays for fast batched lookup by news id."""

    def __init__(self, articles: Iterable[NewsArticle]):
        self.articles: list[NewsArticle] = []
        self.index: dict[str, int] = {}
        for a in articles:
            if a.news_id in self.index:
                log.debug("duplicate news id %s, keeping first", a.news_id)
                continue
            self.index[a.news_id] = len(self.articles)
            self.articles.append(a)
        if not self.articles:
            raise ConfigError("news table is empty")
        self.titles = np.stack([a.title for a in self.articles])
        self.contents = np.stack([a.content for a in self.articles])
        self.categories = [a.category for a in self.articles]

    def __len__(self) -> int:
        return len(self.articles)

    def __contains__(self, news_id: str) -> bool:
        return news_id in self.index

    def __getitem__(self, news_id: str) -> NewsArticle:
        return self.articles[self.index[news_id]]

    def rows(self, news_ids: Iterable[str]) -> np.ndarray:
        return np.fromiter((self.index[n] for n in news_ids), dtype=np.int64)

    def mean_title_length(self) -> float:
        return float((self.titles != PAD).sum(axis=1).mean())


@dataclass(frozen=True)
class UserHistory:
    user_id: str
    clicked: tuple[str, ...]


@dataclass(frozen=True)
class ImpressionSample:
    """One training unit (positive + K negatives) or one eval impression.

    For ``kind == "train"`` the candidate list is ``(positive, *negatives)``
    and labels are ``(1, 0, ..., 0)``.
    """

    kind: str
    impression_id: str
    user_id: str
    history: tuple[str, ...]
    candidates: tuple[str, ...]
    labels: tuple[int, ...]

    @property
    def positive(self) -> str:
        return self.candidates[0]

    @property
    def negatives(self) -> tuple[str, ...]:
        return self.candidates[1:]

    def to_line(self) -> str:
        cands = " ".join(f"{c}-{l}" for c, l in zip(self.candidates, self.labels))
        return "\t".join([self.kind, self.impression_id, self.user_id, " ".join(self.history), cands])

    @classmethod
    def from_line(cls, line: str) -> "ImpressionSample":
        kind, imp, user, hist, cands = line.rstrip("\n").split("\t")
        pairs = [c.rsplit("-", 1) for c in cands.split()]
        return cls(
            kind=kind,
            impression_id=imp,
            user_id=user,
            history=tuple(hist.split()),
            candidates=tuple(p[0] for p in pairs),
            labels=tuple(int(p[1]) for p in pairs),
        )


@dataclass
class BehaviorStats:
    rows: int = 0
    missing_candidates: int = 0
    missing_history: int = 0
    no_positive: int = 0
    no_negative: int = 0
    replacement_draws: int = 0
    empty_history: int = 0
    extra: dict = field(default_factory=dict)


def _behavior_rows(path) -> Iterator[tuple[int, list[str]]]:
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            line = line.rstrip("\n").rstrip("\r")
            if not line.strip():
                continue
            cols = line.split("\t")
            if len(cols) != 5:
                raise DataFormatError(path, line_no, f"expected 5 tab-separated columns, got {len(cols)}")
            yield line_no, cols


def _parse_candidates(path, line_no, field_text) -> list[tuple[str, int]]:
    out = []
    for item in field_text.split():
        nid, sep, lab = item.rpartition("-")
        if not sep or lab not in ("0", "1"):
            raise DataFormatError(path, line_no, f"bad impression entry {item!r}")
        out.append((nid, int(lab)))
    return out


def parse_behaviors_tsv(
    path,
    news: NewsTable,
    mode: str = "train",
    k: int = NEG_K,
    history_cap: int = HISTORY_CAP,
    rng: np.random.Generator | None = None,
    stats: BehaviorStats | None = None,
) -> list[ImpressionSample]:
    """Turn behaviour logs into samples.

    ``mode="train"``: one sample per clicked candidate with ``k`` negatives
    drawn without replacement from the same impression's non-clicked
    candidates (with replacement if fewer than ``k`` exist).
    ``mode="eval"``: one sample per impression with all candidates and labels.
    """
    if mode not in ("train", "eval"):
        raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    if history_cap < 0:
        raise ConfigError(f"history cap must be >= 0, got {history_cap}")
    rng = rng if rng is not None else np.random.default_rng(0)
    stats = stats if stats is not None else BehaviorStats()
    samples: list[ImpressionSample] = []
    for line_no, cols in _behavior_rows(path):
        stats.rows += 1
        imp_id, user_id, _time, hist_text, imp_text = cols
        hist = [h for h in hist_text.split() if h in news]
        stats.missing_history += len(hist_text.split()) - len(hist)
        hist = tuple(hist[-history_cap:]) if history_cap else ()
        if not hist:
            stats.empty_history += 1
        cands = []
        for nid, lab in _parse_candidates(path, line_no, imp_text):
            if nid in news:
                cands.append((nid, lab))
            else:
                stats.missing_candidates += 1
        if mode == "eval":
            if cands:
                samples.append(
                    ImpressionSample("eval", imp_id, user_id, hist, tuple(c for c, _ in cands), tuple(l for _, l in cands))
                )
            continue
        positives = [c for c, l in cands if l == 1]
        pool = [c for c, l in cands if l == 0]
        if not positives:
            stats.no_positive += 1
            continue
        if not pool:
            stats.no_negative += len(positives)
            continue
        for pos in positives:
            replace = len(pool) < k
            stats.replacement_draws += int(replace)
            picks = rng.choice(len(pool), size=k, replace=replace)
            negs = tuple(pool[i] for i in picks)
            samples.append(ImpressionSample("train", imp_id, user_id, hist, (pos, *negs), (1,) + (0,) * k))
    if stats.missing_candidates or stats.missing_history:
        log.warning(
            "%s: skipped %d candidates and %d history entries absent from the news table",
            path, stats.missing_candidates, stats.missing_history,
        )
    return samples


def write_samples(path, samples: Iterable[ImpressionSample]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for s in samples:
            fh.write(s.to_line() + "\n")


def read_samples(path) -> list[ImpressionSample]:
    with open(path, encoding="utf-8") as fh:
        return [ImpressionSample.from_line(line) for line in fh if line.strip()]


def user_histories(samples: Iterable[ImpressionSample]) -> dict[str, UserHistory]:
    """Latest history seen per user (last occurrence wins)."""
    out = {}
    for s in samples:
        out[s.user_id] = UserHistory(s.user_id, s.history)
    return out


def load_embeddings(
    path, vocab: Vocabulary, dim: int = 300, rng: np.random.Generator | None = None
) -> tuple[np.ndarray, float]:
    """Initialise a ``[len(vocab), dim]`` matrix from a GloVe-style text file.

    Matched words copy the file's vector; other rows ~ U(-0.1, 0.1); the pad
    row is zero.  Returns ``(matrix, fraction of vocabulary matched)``.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    mat = rng.uniform(-0.1, 0.1, size=(len(vocab), dim))
    mat[PAD] = 0.0
    matched = 0
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            parts = line.rstrip().split(" ")
            if len(parts) < 2:
                continue
            if len(parts) - 1 != dim:
                raise ConfigError(f"{path}:{line_no}: vector has {len(parts) - 1} dims, expected {dim}")
            idx = vocab.stoi.get(parts[0])
            if idx is None or idx == PAD:
                continue
            mat[idx] = np.asarray(parts[1:], dtype=np.float64)
            matched += 1
    n_real = len(vocab) - 1
    return mat, (matched / n_real if n_real else 0.0)


def random_embeddings(vocab_size: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    mat = rng.uniform(-0.1, 0.1, size=(vocab_size, dim))
    mat[PAD] = 0.0
    return mat


def news_cache_key(path, vocab: Vocabulary, title_len: int, content_len: int) -> str:
    p = Path(path).resolve()
    st = p.stat()
    raw = f"{p}|{st.st_size}|{st.st_mtime_ns}|{vocab.digest()}|{title_len}|{content_len}"
    return hashlib.sha1(raw.encode("utf-8")).hexdigest()[:16]


def load_news_cached(path, vocab: Vocabulary, title_len: int, content_len: int, cache_dir=None) -> NewsTable:
    """``parse_news_tsv`` behind an optional ``.npz`` cache keyed by input and config."""
    if cache_dir is None:
        return NewsTable(parse_news_tsv(path, vocab, title_len, content_len))
    cache_dir = Path(cache_dir)
    cache_dir.mkdir(parents=True, exist_ok=True)
    cache = cache_dir / f"news-{news_cache_key(path, vocab, title_len, content_len)}.npz"
    if cache.exists():
        z = np.load(cache, allow_pickle=False)
        arts = [
            NewsArticle(nid, cat, t, c, tuple(tw.split(" ")), tuple(cw.split(" ")))
            for nid, cat, t, c, tw, cw in zip(z["ids"], z["cats"], z["titles"], z["contents"], z["tw"], z["cw"])
        ]
        return NewsTable(arts)
    arts = parse_news_tsv(path, vocab, title_len, content_len)
    np.savez(
        cache,
        ids=np.array([a.news_id for a in arts]),
        cats=np.array([a.category for a in arts]),
        titles=np.stack([a.title for a in arts]),
        contents=np.stack([a.content for a in arts]),
        tw=np.array([" ".join(a.title_words) for a in arts]),
        cw=np.array([" ".join(a.content_words) for a in arts]),
    )
    return NewsTable(arts)
