from pathlib import Path

import pytest

from embed_export.cli import main as cli_main

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def queries_tsv() -> Path:
    return FIXTURES / "queries.tsv"


@pytest.fixture
def queries_jsonl() -> Path:
    return FIXTURES / "queries.jsonl"


@pytest.fixture
def topics_jsonl() -> Path:
    return FIXTURES / "topics.jsonl"


@pytest.fixture
def run_cli():
    """Invoke the embed CLI in-process; returns the exit code."""
    def run(*args) -> int:
        return cli_main([str(a) for a in args])
    return run
