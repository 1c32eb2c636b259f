"""Command-line entry point: ``cnesue {train,evaluate,inspect,ablate,make-synthetic}``.

Exit codes: 0 success, 2 configuration or path problem, 3 runtime abort.
Log verbosity comes from ``CNESUE_LOG_LEVEL`` (default ``WARNING``).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import data, synthetic
from .errors import CneSueError, ConfigError, DataFormatError, DimensionError
from .evaluation import evaluate
from .model import ABLATIONS, ModelConfig, Recommender, check_compatible, load_model
from .training import TrainConfig, train

log = logging.getLogger("cnesue")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
VALID_FRACTION = 0.1

# Options that may also come from a ``--config`` key=value file.
_FILE_KEYS = {
    "news", "behaviors", "valid_behaviors", "embeddings", "out", "seed", "k", "batch", "lr",
    "gcn_layers", "history_cap", "title_len", "content_len", "ablation", "max_epochs",
    "patience", "embed_dim", "hidden", "attn_dim", "dropout", "dtype", "cache_dir",
}


def _require_file(path, what: str) -> Path:
    if path is None:
        raise ConfigError(f"--{what} is required")
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"{what} file not found: {p}")
    return p


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    p = _require_file(path, "config")
    out = {}
    for line_no, raw in enumerate(p.read_text(encoding="utf-8").splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip().replace("-", "_")
        if not sep or key not in _FILE_KEYS:
            raise ConfigError(f"{p}:{line_no}: unrecognised config line {raw!r}")
        out[key] = value.strip()
    return out


def _data_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--news", help="news TSV")
    p.add_argument("--behaviors", help="behaviour TSV")
    p.add_argument("--title-len", type=int, default=data.TITLE_LEN)
    p.add_argument("--content-len", type=int, default=data.CONTENT_LEN)
    p.add_argument("--history-cap", type=int, default=data.HISTORY_CAP)
    p.add_argument("--cache-dir", help="directory for parsed-news caches")


def _model_args(p: argparse.ArgumentParser, defaults: bool = True) -> None:
    d = (lambda v: v) if defaults else (lambda v: None)
    p.add_argument("--ablation", choices=ABLATIONS, default=d("full"))
    p.add_argument("--embed-dim", type=int, default=d(300))
    p.add_argument("--hidden", type=int, default=d(128))
    p.add_argument("--attn-dim", type=int, default=d(200))
    p.add_argument("--gcn-layers", type=int, default=d(4))


def _train_args(p: argparse.ArgumentParser) -> None:
    _data_args(p)
    _model_args(p)
    p.add_argument("--config", help="key=value file; command-line flags take precedence")
    p.add_argument("--valid-behaviors", help="validation behaviour TSV (default: hold out the last impressions)")
    p.add_argument("--embeddings", help="GloVe-format word vectors")
    p.add_argument("--out", help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--k", type=int, default=4, help="negatives per positive")
    p.add_argument("--batch", type=int, default=64)
    p.add_argument("--lr", type=float, default=1e-4)
    p.add_argument("--dropout", type=float, default=0.2)
    p.add_argument("--dtype", choices=("float32", "float64"), default="float32")
    p.add_argument("--max-epochs", type=int, default=20)
    p.add_argument("--patience", type=int, default=5)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cnesue", description="Collaborative news encoding with structural user encoding.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model with validation early stopping")
    _train_args(p)

    p = sub.add_parser("evaluate", help="score a behaviour file with a checkpoint")
    _data_args(p)
    _model_args(p, defaults=False)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab", help="vocabulary file (default: vocab.txt beside the checkpoint)")
    p.add_argument("--out", help="report file (default: eval_report.txt beside the checkpoint)")

    p = sub.add_parser("inspect", aliases=["inspect-attention"], help="dump word attention or a user's cluster graph")
    _data_args(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--vocab")
    p.add_argument("--news-id")
    p.add_argument("--user-id")
    p.add_argument("--candidate", help="candidate news id that conditions the user attention")

    p = sub.add_parser("ablate", help="train every variant over several seeds and compare validation AUC")
    _train_args(p)
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--variants", nargs="+", choices=ABLATIONS, default=list(ABLATIONS))

    p = sub.add_parser("make-synthetic", help="write a small category-affinity dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--users", type=int, default=50)
    p.add_argument("--n-news", type=int, default=200)
    p.add_argument("--categories", type=int, default=6)
    p.add_argument("--embed-dim", type=int, help="also write random word vectors of this size")
    return parser


def parse_args(argv=None) -> argparse.Namespace:
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        file_values = read_config_file(args.config)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        actions = {a.dest: a for a in sub._actions}
        # Re-parse with file values as defaults so explicit flags still win.
        for key, raw in file_values.items():
            action = actions[key]
            value = action.type(raw) if action.type else raw
            if action.choices and value not in action.choices:
                raise ConfigError(f"config {key}={raw!r}: choose from {', '.join(map(str, action.choices))}")
            sub.set_defaults(**{key: value})
        args = parser.parse_args(argv)
    return args


# ---------------------------------------------------------------- helpers


def _model_config(args, vocab_size: int) -> ModelConfig:
    return ModelConfig(
        vocab_size=vocab_size,
        embed_dim=args.embed_dim,
        hidden=args.hidden,
        attn_dim=args.attn_dim,
        gcn_layers=args.gcn_layers,
        dropout=args.dropout,
        ablation=args.ablation,
        dtype=args.dtype,
    )


def _train_config(args, seed: int) -> TrainConfig:
    return TrainConfig(
        k=args.k, batch_size=args.batch, lr=args.lr, patience=args.patience,
        max_epochs=args.max_epochs, seed=seed,
    )


def split_validation(train_samples, eval_samples, fraction: float = VALID_FRACTION):
    """Hold out the last ``fraction`` of impressions (file order) for validation."""
    order = list(dict.fromkeys(s.impression_id for s in eval_samples))
    n_valid = max(1, int(round(len(order) * fraction)))
    if len(order) < 2:
        raise ConfigError("need at least two impressions to hold out a validation split")
    held = set(order[-n_valid:])
    return [s for s in train_samples if s.impression_id not in held], [s for s in eval_samples if s.impression_id in held]


class _Prepared:
    def __init__(self, vocab, news, train_samples, valid_samples, embeddings, coverage):
        self.vocab = vocab
        self.news = news
        self.train_samples = train_samples
        self.valid_samples = valid_samples
        self.embeddings = embeddings
        self.coverage = coverage


def _prepare(args) -> _Prepared:
    news_path = _require_file(args.news, "news")
    beh_path = _require_file(args.behaviors, "behaviors")
    valid_path = _require_file(args.valid_behaviors, "valid-behaviors") if args.valid_behaviors else None
    emb_path = _require_file(args.embeddings, "embeddings") if args.embeddings else None
    vocab = data.build_vocabulary([news_path])
    news = data.load_news_cached(news_path, vocab, args.title_len, args.content_len, args.cache_dir)
    rng = np.random.default_rng(args.seed)
    stats = data.BehaviorStats()
    train_samples = data.parse_behaviors_tsv(beh_path, news, "train", args.k, args.history_cap, rng, stats)
    if valid_path is not None:
        valid_samples = data.parse_behaviors_tsv(valid_path, news, "eval", args.k, args.history_cap)
    else:
        eval_all = data.parse_behaviors_tsv(beh_path, news, "eval", args.k, args.history_cap)
        train_samples, valid_samples = split_validation(train_samples, eval_all)
    log.info("vocabulary %d, news %d, train samples %d, valid impressions %d",
             len(vocab), len(news), len(train_samples), len(valid_samples))
    embeddings, coverage = None, None
    if emb_path is not None:
        embeddings, coverage = data.load_embeddings(emb_path, vocab, args.embed_dim, np.random.default_rng(args.seed))
        log.info("embedding coverage %.3f", coverage)
    return _Prepared(vocab, news, train_samples, valid_samples, embeddings, coverage)


def _snapshot(args, path: Path, **extra) -> None:
    keys = sorted(k for k in vars(args) if k in _FILE_KEYS)
    lines = [f"{k} = {getattr(args, k)}" for k in keys if getattr(args, k) is not None]
    lines += [f"# {k} = {v}" for k, v in extra.items()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _data_meta(args, vocab) -> dict:
    return {
        "data": {"title_len": args.title_len, "content_len": args.content_len, "history_cap": args.history_cap},
        "vocab_digest": vocab.digest(),
    }


def _train_one(args, prep: _Prepared, out_dir: Path, seed: int, ablation: str):
    out_dir.mkdir(parents=True, exist_ok=True)
    prep.vocab.save(out_dir / "vocab.txt")
    args.ablation = ablation
    _snapshot(args, out_dir / "config.txt", resolved_seed=seed)
    cfg = _model_config(args, len(prep.vocab))
    model = Recommender.create(cfg, seed=seed, embeddings=prep.embeddings)
    state = train(
        model, prep.train_samples, prep.valid_samples, prep.news, _train_config(args, seed),
        out_dir=out_dir, extra_meta=_data_meta(args, prep.vocab),
    )
    return model, state


def cmd_train(args) -> int:
    if not args.out:
        raise ConfigError("--out is required")
    prep = _prepare(args)
    _, state = _train_one(args, prep, Path(args.out), args.seed, args.ablation)
    print(f"best epoch {state.best_epoch} validation auc {state.best_auc:.6f}")
    print(f"checkpoint {Path(args.out) / 'model.ckpt'}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    if not args.out:
        raise ConfigError("--out is required")
    prep = _prepare(args)
    out = Path(args.out)
    rows = []
    for variant in args.variants:
        aucs = []
        for seed in range(args.seed, args.seed + args.seeds):
            _, state = _train_one(args, prep, out / variant / f"seed{seed}", seed, variant)
            aucs.append(state.best_auc)
        rows.append((variant, aucs))
    lines = ["variant\tmean_auc\t" + "\t".join(f"seed{s}" for s in range(args.seed, args.seed + args.seeds))]
    for variant, aucs in rows:
        lines.append(f"{variant}\t{np.mean(aucs):.6f}\t" + "\t".join(f"{a:.6f}" for a in aucs))
    table = "\n".join(lines)
    (out / "ablation.tsv").write_text(table + "\n", encoding="utf-8")
    print(table)
    return EXIT_OK


def _load_for_inference(args):
    ckpt = _require_file(args.checkpoint, "checkpoint")
    vocab_path = _require_file(args.vocab or ckpt.parent / "vocab.txt", "vocab")
    vocab = data.Vocabulary.load(vocab_path)
    model, meta = load_model(ckpt)
    digest = meta.get("vocab_digest")
    if digest is not None and digest != vocab.digest():
        raise ConfigError(f"vocabulary {vocab_path} does not match the one checkpoint {ckpt} was trained with")
    if len(vocab) != model.cfg.vocab_size:
        raise DimensionError(f"vocab_size: checkpoint has {model.cfg.vocab_size}, {vocab_path} has {len(vocab)}")
    news_path = _require_file(args.news, "news")
    saved = meta.get("data", {})
    title_len = saved.get("title_len", args.title_len)
    content_len = saved.get("content_len", args.content_len)
    news = data.load_news_cached(news_path, vocab, title_len, content_len, args.cache_dir)
    return ckpt, model, meta, news


def cmd_evaluate(args) -> int:
    ckpt, model, meta, news = _load_for_inference(args)
    saved = model.cfg
    wanted = ModelConfig(
        vocab_size=saved.vocab_size,
        embed_dim=args.embed_dim or saved.embed_dim,
        hidden=args.hidden or saved.hidden,
        attn_dim=args.attn_dim or saved.attn_dim,
        gcn_layers=args.gcn_layers or saved.gcn_layers,
        ablation=args.ablation or saved.ablation,
    )
    check_compatible(saved, wanted)
    beh = _require_file(args.behaviors, "behaviors")
    history_cap = meta.get("data", {}).get("history_cap", args.history_cap)
    stats = data.BehaviorStats()
    samples = data.parse_behaviors_tsv(beh, news, "eval", history_cap=history_cap, stats=stats)
    report = evaluate(model, samples, news)
    print(report.to_text())
    out = Path(args.out) if args.out else ckpt.parent / "eval_report.txt"
    out.write_text(report.to_kv() + "\n", encoding="utf-8")
    print(f"report {out}")
    return EXIT_OK


def _bucket(w: float) -> str:
    """Coarse magnitude marker for a weight in ``[0, 1]``."""
    return "#" * min(4, int(w * 8 + 0.5))


def _inspect_news(model, news, news_id) -> str:
    if news_id not in news:
        raise ConfigError(f"unknown news id {news_id!r}")
    art = news[news_id]
    from .tensor import no_grad

    with no_grad():
        rep = model.encode_news(art.title[None], art.content[None], keep_attention=True)
    lines = [f"news {news_id} category {art.category}"]
    for side, words in (("title", art.title_words), ("content", art.content_words)):
        weights = rep.word_weights(side)[0]
        lines.append(f"[{side}]")
        lines.append("pos\ttoken\talpha\tself\tcross\tband")
        a_self = rep.attention[f"{side}_self"][0]
        a_cross = rep.attention.get(f"{side}_cross")
        for i, w in enumerate(words):
            cross = f"{a_cross[0][i]:.6f}" if a_cross is not None else "-"
            lines.append(f"{i}\t{w}\t{weights[i]:.6f}\t{a_self[i]:.6f}\t{cross}\t{_bucket(weights[i])}")
    return "\n".join(lines)


def _inspect_user(args, model, news, user_id) -> str:
    beh = _require_file(args.behaviors, "behaviors")
    samples = data.parse_behaviors_tsv(beh, news, "eval", history_cap=args.history_cap)
    hist = data.user_histories(samples).get(user_id)
    if hist is None:
        raise ConfigError(f"unknown user id {user_id!r} in {beh}")
    if not hist.clicked:
        return f"user {user_id} has an empty history"
    graph = model.user_graph(data.ImpressionSample("eval", "-", user_id, hist.clicked, (), ()), news)
    lines = [f"user {user_id}", graph.dump(hist.clicked)]
    cand_id = args.candidate
    if cand_id is None:
        return "\n".join(lines)
    if cand_id not in news:
        raise ConfigError(f"unknown candidate news id {cand_id!r}")
    matrix, index = model.news_matrix(news, (*hist.clicked, cand_id))
    from .tensor import Tensor, no_grad

    with no_grad():
        rep = model.encode_user(
            Tensor(matrix[[index[h] for h in hist.clicked]]),
            graph.categories,
            Tensor(matrix[[index[cand_id]]]),
            graph=graph,
        )
    lines.append(f"candidate {cand_id} category {news[cand_id].category}")
    if "flat" in rep.attention:
        lines.append("node\tnews\talpha_flat")
        for i, nid in enumerate(hist.clicked):
            lines.append(f"{i}\t{nid}\t{rep.attention['flat'][0, i]:.6f}")
        return "\n".join(lines)
    intra, inter = rep.attention["intra"][0], rep.attention["inter"][0]
    lines.append("cluster\tcategory\talpha_inter")
    for j, cat in enumerate(graph.cluster_labels):
        lines.append(f"{j}\t{cat}\t{inter[j]:.6f}")
    lines.append("node\tnews\tcluster\talpha_intra")
    for j, members in enumerate(graph.clusters):
        for i in members:
            lines.append(f"{i}\t{hist.clicked[i]}\t{j}\t{intra[j, i]:.6f}")
    return "\n".join(lines)


def cmd_inspect(args) -> int:
    if bool(args.news_id) == bool(args.user_id):
        raise ConfigError("give exactly one of --news-id or --user-id")
    _, model, _, news = _load_for_inference(args)
    if args.news_id:
        print(_inspect_news(model, news, args.news_id))
    else:
        print(_inspect_user(args, model, news, args.user_id))
    return EXIT_OK


def cmd_make_synthetic(args) -> int:
    spec = synthetic.SyntheticSpec(n_users=args.users, n_news=args.n_news, n_categories=args.categories, seed=args.seed)
    try:
        paths = synthetic.generate(args.out, spec, embed_dim=args.embed_dim)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    print(json.dumps({k: str(v) for k, v in vars(paths).items() if v is not None}, indent=1))
    return EXIT_OK


COMMANDS = {
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "inspect": cmd_inspect,
    "inspect-attention": cmd_inspect,
    "ablate": cmd_ablate,
    "make-synthetic": cmd_make_synthetic,
}


def main(argv=None) -> int:
    level = os.environ.get("CNESUE_LOG_LEVEL", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")
    try:
        args = parse_args(argv)
        return COMMANDS[args.command](args)
    except (ConfigError, DataFormatError, DimensionError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CneSueError as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (FloatingPointError, MemoryError) as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
