import sys

import numpy as np
import pytest

from cnesue import data, synthetic
from cnesue.model import ModelConfig, Recommender


class TinyData:
    def __init__(self, root):
        spec = synthetic.SyntheticSpec(n_users=12, n_news=40, n_categories=4, train_impressions=2, valid_impressions=1, seed=3)
        self.paths = synthetic.generate(root, spec, embed_dim=8)
        self.vocab = data.build_vocabulary([self.paths.news])
        self.news = data.NewsTable(data.parse_news_tsv(self.paths.news, self.vocab, 8, 16))
        self.train = data.parse_behaviors_tsv(self.paths.train_behaviors, self.news, "train", rng=np.random.default_rng(0))
        self.valid = data.parse_behaviors_tsv(self.paths.valid_behaviors, self.news, "eval")

    def config(self, **kw):
        base = dict(vocab_size=len(self.vocab), embed_dim=8, hidden=4, attn_dim=6)
        base.update(kw)
        return ModelConfig(**base)

    def model(self, seed=0, **kw):
        return Recommender.create(self.config(**kw), seed=seed)


@pytest.fixture(scope="session")
def tiny(tmp_path_factory):
    return TinyData(tmp_path_factory.mktemp("tiny"))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "VERDICTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
