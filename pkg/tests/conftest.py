from __future__ import annotations

import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

FIXTURES = Path(__file__).parent / "fixtures"

FIXTURE_FILES = (
    "arbin_single.csv",
    "arbin_multichannel.csv",
    "maccor_export.csv",
    "cellA.017",
    "basytec_run.txt",
    "biologic_cell.mpt",
    "novonix_cycling.csv",
    "admiral_squidstat.txt",
)


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture()
def data_dir(tmp_path: Path) -> Path:
    d = tmp_path / "data"
    d.mkdir()
    return d
