import json
import os
import sys
from pathlib import Path

import numpy as np
import pytest
import torch

sys.path.insert(0, str(Path(__file__).parent))

from resper.corpus import dump_corpus  # noqa: E402
from resper.model import ResPerNet  # noqa: E402
from resper.synthetic import make_corpus  # noqa: E402

DATA_DIR = os.environ.get("RESPER_DATA_DIR")


def corpus_path(domain):
    """Path to a released annotated corpus, or None when unavailable."""
    if not DATA_DIR:
        return None
    path = Path(DATA_DIR) / f"{domain.lower()}.jsonl"
    return path if path.exists() else None


@pytest.fixture
def cb_convs():
    return make_corpus("CB", 12, seed=3)


@pytest.fixture
def p4g_convs():
    return make_corpus("P4G", 12, seed=4)


@pytest.fixture
def write_jsonl(tmp_path):
    def _write(records, name="corpus.jsonl"):
        path = tmp_path / name
        with path.open("w", encoding="utf-8") as fh:
            for r in records:
                fh.write((r if isinstance(r, str) else json.dumps(r)) + "\n")
        return path

    return _write


@pytest.fixture
def corpus_file(tmp_path, cb_convs):
    path = tmp_path / "cb.jsonl"
    dump_corpus(cb_convs, path)
    return path


def toy_net(d_emb=6, d_h1=4, d_h2=4, seed=0, context="causal", dtype=torch.float64):
    torch.manual_seed(seed)
    return ResPerNet(d_emb, d_h1, d_h2, context=context).to(dtype)


def random_conversation(rng, n_utts, d_emb, max_tokens=6, dtype=torch.float64):
    return [torch.as_tensor(rng.normal(size=(int(rng.integers(1, max_tokens + 1)), d_emb)), dtype=dtype)
            for _ in range(n_utts)]


@pytest.fixture(scope="session")
def tiny_bert(tmp_path_factory):
    """Small randomly initialised BERT + fast tokenizer standing in for a pretrained encoder."""
    transformers = pytest.importorskip("transformers")
    words = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]", "river", "bank", "loan", "the", "a",
             "money", "##s", "i", "want", "to", "go", "price", "?", ",", "no", "yes"]
    d = tmp_path_factory.mktemp("tinybert")
    (d / "vocab.txt").write_text("\n".join(words))
    tok = transformers.BertTokenizerFast(vocab_file=str(d / "vocab.txt"), do_lower_case=True)
    torch.manual_seed(0)
    cfg = transformers.BertConfig(vocab_size=len(words), hidden_size=16, num_hidden_layers=2,
                                  num_attention_heads=2, intermediate_size=32)
    model = transformers.BertModel(cfg)
    from resper.embeddings import ContextualEmbedder, EmbedderSpec

    return ContextualEmbedder(EmbedderSpec.contextual("tiny-test-bert", 16), model, tok)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    acceptance = sys.modules.get("test_acceptance")
    results = getattr(acceptance, "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(results):
        verdict, title, detail = results[n]
        terminalreporter.write_line(f"criterion {n:>2} {verdict}: {title}" + (f" ({detail})" if detail else ""))
