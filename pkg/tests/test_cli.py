import subprocess
import sys

import numpy as np
import pytest

from cnesue import cli
from cnesue.evaluation import MetricReport
from cnesue.tensor import load_arrays
from cnesue.training import read_metrics_log

SMALL = ["--embed-dim", "8", "--hidden", "4", "--attn-dim", "6", "--title-len", "8", "--content-len", "16"]


def train_args(tiny, out, *extra):
    p = tiny.paths
    return [
        "train", "--news", str(p.news), "--behaviors", str(p.train_behaviors),
        "--valid-behaviors", str(p.valid_behaviors), "--out", str(out), "--lr", "1e-2",
        "--max-epochs", "2", *SMALL, *extra,
    ]


@pytest.fixture(scope="module")
def trained(tiny, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    assert cli.main(train_args(tiny, out, "--seed", "7")) == 0
    return out


class TestTrain:
    def test_artifacts(self, trained):
        for name in ("model.ckpt", "last.ckpt", "metrics.tsv", "config.txt", "vocab.txt"):
            assert (trained / name).exists()
        config = (trained / "config.txt").read_text()
        assert "seed = 7" in config and "ablation = full" in config

    def test_same_seed_identical_logs(self, tiny, trained, tmp_path):
        assert cli.main(train_args(tiny, tmp_path, "--seed", "7")) == 0
        a = [{k: v for k, v in r.items() if k != "seconds"} for r in read_metrics_log(trained / "metrics.tsv")]
        b = [{k: v for k, v in r.items() if k != "seconds"} for r in read_metrics_log(tmp_path / "metrics.tsv")]
        assert a == b

    def test_missing_behaviors_exit_two_names_path(self, tiny, tmp_path, capsys):
        args = train_args(tiny, tmp_path)
        args[args.index("--behaviors") + 1] = str(tmp_path / "absent.tsv")
        assert cli.main(args) == 2
        assert "absent.tsv" in capsys.readouterr().err

    def test_without_gcn_checkpoint_has_no_gcn_weights(self, tiny, tmp_path):
        assert cli.main(train_args(tiny, tmp_path, "--ablation", "sue-wo-gcn", "--max-epochs", "1")) == 0
        arrays, meta = load_arrays(tmp_path / "model.ckpt")
        assert meta["model"]["ablation"] == "sue-wo-gcn"
        assert not any(n.startswith("sue.gcn.") for n in arrays)

    def test_config_file_with_override(self, tiny, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# comment\nlr = 0.5\nmax-epochs = 1\nseed = 3\n", encoding="utf-8")
        args = cli.parse_args(train_args(tiny, tmp_path / "o", "--config", str(cfg), "--lr", "0.01"))
        assert args.lr == 0.01 and args.seed == 3
        assert args.max_epochs == 2  # explicit flag from train_args wins

    def test_bad_config_line(self, tiny, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("bogus = 1\n", encoding="utf-8")
        assert cli.main(train_args(tiny, tmp_path / "o", "--config", str(cfg))) == 2

    def test_default_validation_split(self, tiny, tmp_path):
        p = tiny.paths
        args = ["train", "--news", str(p.news), "--behaviors", str(p.train_behaviors), "--out", str(tmp_path),
                "--max-epochs", "1", *SMALL]
        assert cli.main(args) == 0

    def test_runtime_abort_exit_three(self, tiny, tmp_path, monkeypatch):
        from cnesue.errors import NonFiniteError

        def boom(*a, **k):
            raise NonFiniteError("loss became nan")

        monkeypatch.setattr(cli, "train", boom)
        assert cli.main(train_args(tiny, tmp_path)) == 3


class TestEvaluate:
    def eval_args(self, tiny, trained, *extra):
        return ["evaluate", "--checkpoint", str(trained / "last.ckpt"), "--news", str(tiny.paths.news),
                "--behaviors", str(tiny.paths.valid_behaviors), "--out", str(trained / "report.txt"), *extra]

    def test_reproduces_final_logged_metrics(self, tiny, trained, capsys):
        assert cli.main(self.eval_args(tiny, trained)) == 0
        out = capsys.readouterr().out
        assert "excluded" in out
        report = MetricReport.from_kv((trained / "report.txt").read_text())
        last = read_metrics_log(trained / "metrics.tsv")[-1]
        for m in ("auc", "mrr", "ndcg@5", "ndcg@10"):
            assert report[m] == pytest.approx(last[m], abs=1e-6)

    def test_ablation_mismatch_rejected(self, tiny, trained, capsys):
        assert cli.main(self.eval_args(tiny, trained, "--ablation", "cne-wo-cs")) == 2
        assert "cne-wo-cs" in capsys.readouterr().err

    def test_dim_mismatch_names_both(self, tiny, trained, capsys):
        assert cli.main(self.eval_args(tiny, trained, "--hidden", "9")) == 2
        err = capsys.readouterr().err
        assert "4" in err and "9" in err


class TestInspect:
    def base(self, tiny, trained):
        return ["inspect", "--checkpoint", str(trained / "model.ckpt"), "--news", str(tiny.paths.news)]

    def test_news_weights_normalised(self, tiny, trained, capsys):
        nid = tiny.news.articles[0].news_id
        assert cli.main(self.base(tiny, trained) + ["--news-id", nid]) == 0
        lines = capsys.readouterr().out.splitlines()
        for side in ("[title]", "[content]"):
            start = lines.index(side) + 2
            rows = []
            for line in lines[start:]:
                if line.startswith("["):
                    break
                rows.append(float(line.split("\t")[2]))
            assert all(0 <= w <= 1 for w in rows)
            assert sum(rows) == pytest.approx(1.0, abs=1e-5)

    def test_single_token_title(self, tiny, trained, tmp_path, capsys):
        news = tmp_path / "one.tsv"
        news.write_text(tiny.paths.news.read_text() + "NX\tsports\ts\tonlyword\tsome body text\tu\t[]\t[]\n")
        # vocabulary comes from the checkpoint directory, so unseen words map to unk
        assert cli.main(["inspect", "--checkpoint", str(trained / "model.ckpt"), "--news", str(news), "--news-id", "NX"]) == 0
        out = capsys.readouterr().out.splitlines()
        row = out[out.index("[title]") + 2].split("\t")
        assert float(row[2]) == pytest.approx(1.0)

    def test_user_graph_and_attention(self, tiny, trained, capsys):
        s = tiny.valid[0]
        args = self.base(tiny, trained) + ["--behaviors", str(tiny.paths.valid_behaviors), "--user-id", s.user_id,
                                           "--candidate", s.candidates[0]]
        assert cli.main(args) == 0
        out = capsys.readouterr().out
        assert "clusters" in out and "alpha_inter" in out and "alpha_intra" in out

    def test_unknown_ids(self, tiny, trained):
        assert cli.main(self.base(tiny, trained) + ["--news-id", "NOPE"]) == 2
        assert cli.main(self.base(tiny, trained) + ["--behaviors", str(tiny.paths.valid_behaviors), "--user-id", "NOPE"]) == 2
        assert cli.main(self.base(tiny, trained)) == 2


class TestOther:
    def test_make_synthetic(self, tmp_path, capsys):
        assert cli.main(["make-synthetic", "--out", str(tmp_path), "--users", "5", "--n-news", "20"]) == 0
        assert (tmp_path / "news.tsv").exists() and (tmp_path / "behaviors_valid.tsv").exists()

    def test_ablate_table(self, tiny, tmp_path, capsys):
        p = tiny.paths
        args = ["ablate", "--news", str(p.news), "--behaviors", str(p.train_behaviors), "--valid-behaviors",
                str(p.valid_behaviors), "--out", str(tmp_path), "--max-epochs", "1", "--seeds", "2",
                "--variants", "full", "sue-wo-gcn", *SMALL]
        assert cli.main(args) == 0
        table = (tmp_path / "ablation.tsv").read_text().splitlines()
        assert table[0].startswith("variant\tmean_auc") and len(table) == 3

    def test_console_entry_point(self):
        r = subprocess.run([sys.executable, "-m", "cnesue.cli", "--help"], capture_output=True, text=True)
        assert r.returncode == 0 and "inspect" in r.stdout
