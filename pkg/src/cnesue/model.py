"""Full recommender: parameters, initialisation, batched scoring."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from typing import Sequence

import numpy as np

from .cne import SIDES, CneFlags, NewsRepresentation, encode_news
from .data import ImpressionSample, NewsTable
from .errors import ConfigError, DimensionError
from .sue import SueFlags, UserRepresentation, build_cluster_graph, encode_user
from .tensor import ModelParams, Tensor, mul, no_grad, stack, sum_, take_rows

ABLATIONS = ("full", "cne-wo-cs", "cne-wo-ca", "sue-wo-gcn", "sue-wo-hca")


@dataclass
class ModelConfig:
    vocab_size: int
    embed_dim: int = 300
    hidden: int = 128
    attn_dim: int = 200
    gcn_layers: int = 4
    dropout: float = 0.2
    ablation: str = "full"
    dtype: str = "float32"

    def __post_init__(self):
        if self.ablation not in ABLATIONS:
            raise ConfigError(f"unknown ablation {self.ablation!r}; choose from {', '.join(ABLATIONS)}")
        if self.gcn_layers < 1:
            raise ConfigError(f"gcn_layers must be >= 1, got {self.gcn_layers}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout must lie in [0, 1), got {self.dropout}")
        for name in ("vocab_size", "embed_dim", "hidden", "attn_dim"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if self.vocab_size < 2:
            raise ConfigError("vocabulary needs at least the pad and unk entries")

    @property
    def news_dim(self) -> int:
        return 4 * self.hidden

    @property
    def cne_flags(self) -> CneFlags:
        return CneFlags(cross_select=self.ablation != "cne-wo-cs", cross_attend=self.ablation != "cne-wo-ca")

    @property
    def sue_flags(self) -> SueFlags:
        return SueFlags(gcn=self.ablation != "sue-wo-gcn", hierarchical=self.ablation != "sue-wo-hca")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in d.items() if k in names})


def _xavier(rng, fan_out, fan_in, shape=None):
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=shape or (fan_out, fan_in))


def init_params(cfg: ModelConfig, rng: np.random.Generator, embeddings: np.ndarray | None = None) -> ModelParams:
    """Create every parameter the configured variant uses."""
    p = ModelParams(dtype=cfg.dtype)
    E, H, A, d = cfg.embed_dim, cfg.hidden, cfg.attn_dim, cfg.news_dim
    if embeddings is None:
        emb = rng.uniform(-0.1, 0.1, size=(cfg.vocab_size, E))
        emb[0] = 0.0
    else:
        if embeddings.shape != (cfg.vocab_size, E):
            raise DimensionError(f"embedding matrix {embeddings.shape} vs config {(cfg.vocab_size, E)}")
        emb = embeddings
    p.add("cne.embedding", emb)

    flags = cfg.cne_flags
    bound = 1.0 / math.sqrt(H)
    for side in SIDES:
        pre = f"cne.{side}."
        for direction in ("lstm_fwd", "lstm_bwd"):
            p.add(pre + direction + ".w_ih", rng.uniform(-bound, bound, size=(4 * H, E)))
            p.add(pre + direction + ".w_hh", rng.uniform(-bound, bound, size=(4 * H, H)))
            b = rng.uniform(-bound, bound, size=4 * H)
            b[H : 2 * H] += 1.0
            p.add(pre + direction + ".b", b)
        if flags.cross_select:
            p.add(pre + "gate.w_h", _xavier(rng, 2 * H, 2 * H))
            p.add(pre + "gate.w_m", _xavier(rng, 2 * H, 2 * H))
            p.add(pre + "gate.b", np.zeros(2 * H))
        p.add(pre + "self.w", _xavier(rng, A, 2 * H))
        p.add(pre + "self.b", np.zeros(A))
        p.add(pre + "self.v", rng.uniform(-1 / math.sqrt(A), 1 / math.sqrt(A), size=A))
        if flags.cross_attend:
            p.add(pre + "cross.wq", _xavier(rng, A, 2 * H, shape=(2 * H, A)))
            p.add(pre + "cross.wk", _xavier(rng, A, 2 * H, shape=(2 * H, A)))

    sflags = cfg.sue_flags
    if sflags.gcn:
        for layer in range(cfg.gcn_layers):
            p.add(f"sue.gcn.{layer}.w", _xavier(rng, d, d))
    if sflags.hierarchical:
        p.add("sue.intra.wq", _xavier(rng, A, d, shape=(d, A)))
        p.add("sue.intra.wk", _xavier(rng, A, d, shape=(d, A)))
        p.add("sue.cluster.w", _xavier(rng, d, d))
        p.add("sue.cluster.b", np.zeros(d))
        p.add("sue.inter.wq", _xavier(rng, A, d, shape=(d, A)))
        p.add("sue.inter.wk", _xavier(rng, A, d, shape=(d, A)))
    else:
        p.add("sue.flat.wq", _xavier(rng, A, d, shape=(d, A)))
        p.add("sue.flat.wk", _xavier(rng, A, d, shape=(d, A)))
    return p


def score(news_vec: Tensor, user_vec: Tensor) -> Tensor:
    """Dot product along the last axis."""
    if news_vec.shape != user_vec.shape:
        raise DimensionError(f"score: news {news_vec.shape} vs user {user_vec.shape}")
    return sum_(mul(news_vec, user_vec), axis=-1)


class Recommender:
    """Ties news encoding, user encoding and scoring to one parameter set."""

    def __init__(self, cfg: ModelConfig, params: ModelParams):
        self.cfg = cfg
        self.params = params

    @classmethod
    def create(cls, cfg: ModelConfig, seed: int = 0, embeddings: np.ndarray | None = None) -> "Recommender":
        return cls(cfg, init_params(cfg, np.random.default_rng(seed), embeddings))

    def encode_news(self, titles, contents, training=False, rng=None, keep_attention=False) -> NewsRepresentation:
        return encode_news(
            titles, contents, self.params, self.cfg.cne_flags,
            dropout_rate=self.cfg.dropout, training=training, rng=rng, keep_attention=keep_attention,
        )

    def encode_user(self, history: Tensor | None, categories, cand: Tensor, training=False, rng=None, graph=None) -> UserRepresentation:
        return encode_user(
            history, categories, cand, self.params, self.cfg.sue_flags,
            dropout_rate=self.cfg.dropout, training=training, rng=rng, graph=graph,
        )

    def forward(
        self,
        samples: Sequence[ImpressionSample],
        news: NewsTable,
        training: bool = False,
        rng: np.random.Generator | None = None,
    ) -> Tensor:
        """Scores ``[B, S]`` for samples that share a candidate count ``S``."""
        if not samples:
            raise ConfigError("empty batch")
        S = len(samples[0].candidates)
        rows = {}
        for s in samples:
            if len(s.candidates) != S:
                raise DimensionError("forward: samples in a batch must share the candidate count")
            for nid in (*s.history, *s.candidates):
                rows.setdefault(nid, len(rows))
        table_rows = news.rows(rows)
        vecs = self.encode_news(news.titles[table_rows], news.contents[table_rows], training, rng).vector
        out = []
        for s in samples:
            cand = take_rows(vecs, [rows[c] for c in s.candidates])
            hist = take_rows(vecs, [rows[h] for h in s.history]) if s.history else None
            cats = [news[h].category for h in s.history]
            user = self.encode_user(hist, cats, cand, training, rng)
            out.append(score(cand, user.vector))
        return stack(out, axis=0)

    def news_matrix(self, news: NewsTable, ids=None, chunk: int = 256) -> tuple[np.ndarray, dict[str, int]]:
        """Inference-mode vectors for ``ids`` (default: every article).

        Returns the ``[n, d]`` matrix and a map from news id to its row.
        """
        ids = list(news.index) if ids is None else list(dict.fromkeys(ids))
        rows = news.rows(ids)
        parts = []
        with no_grad():
            for start in range(0, len(rows), chunk):
                r = rows[start : start + chunk]
                parts.append(self.encode_news(news.titles[r], news.contents[r]).vector.data)
        d = self.cfg.news_dim
        matrix = np.concatenate(parts, axis=0) if parts else np.zeros((0, d), dtype=self.params.dtype)
        return matrix, {nid: i for i, nid in enumerate(ids)}

    def score_impression(self, sample: ImpressionSample, news: NewsTable, matrix: np.ndarray, index: dict[str, int]) -> np.ndarray:
        """Inference-mode scores for every candidate of one impression."""
        with no_grad():
            cand = Tensor(matrix[[index[c] for c in sample.candidates]])
            hist = Tensor(matrix[[index[h] for h in sample.history]]) if sample.history else None
            cats = [news[h].category for h in sample.history]
            user = self.encode_user(hist, cats, cand)
            return score(cand, user.vector).data.astype(np.float64)

    def user_graph(self, sample: ImpressionSample, news: NewsTable):
        return build_cluster_graph([news[h].category for h in sample.history])


def save_model(path, model: Recommender, **meta) -> None:
    from .tensor import save_arrays

    save_arrays(path, model.params.state_dict(), {"model": model.cfg.to_dict(), **meta})


def read_checkpoint_config(path) -> tuple[ModelConfig, dict]:
    from .tensor import load_arrays

    _, meta = load_arrays(path)
    return ModelConfig.from_dict(meta["model"]), meta


def check_compatible(saved: ModelConfig, wanted: ModelConfig) -> None:
    """Raise if a checkpoint trained as ``saved`` cannot serve as ``wanted``."""
    if saved.ablation != wanted.ablation:
        raise ConfigError(f"checkpoint was trained as {saved.ablation!r}, requested {wanted.ablation!r}")
    for name in ("vocab_size", "embed_dim", "hidden", "attn_dim", "gcn_layers"):
        a, b = getattr(saved, name), getattr(wanted, name)
        if a != b:
            raise DimensionError(f"{name}: checkpoint has {a}, configuration asks for {b}")


def load_model(path, expect: ModelConfig | None = None) -> tuple[Recommender, dict]:
    """Rebuild a :class:`Recommender` from a checkpoint file."""
    from .tensor import load_arrays

    arrays, meta = load_arrays(path)
    cfg = ModelConfig.from_dict(meta["model"])
    if expect is not None:
        check_compatible(cfg, expect)
    params = ModelParams(dtype=cfg.dtype)
    for name, arr in arrays.items():
        params.add(name, arr)
    expected = init_params(cfg, np.random.default_rng(0))
    for name in expected:
        if name not in params:
            raise ConfigError(f"checkpoint {path} lacks parameter {name}")
        if params[name].shape != expected[name].shape:
            raise DimensionError(f"parameter {name}: checkpoint {params[name].shape} vs config {expected[name].shape}")
    extra = sorted(set(params) - set(expected))
    if extra:
        raise ConfigError(f"checkpoint {path} has parameters unused by {cfg.ablation!r}: {extra[:3]}")
    return Recommender(cfg, params), meta
