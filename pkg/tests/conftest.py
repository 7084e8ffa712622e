import sys
from pathlib import Path

import pytest

ROOT = Path(__file__).resolve().parent.parent
CORPUS = ROOT / "corpus"


@pytest.fixture(scope="session")
def corpus():
    from oxflow.harness import load_corpus

    return load_corpus(CORPUS)


@pytest.fixture(scope="session")
def corpus_dir():
    return CORPUS
