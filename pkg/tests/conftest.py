import pytest

from services.matrix_service import MatrixService


@pytest.fixture
def transfer_08():
    return MatrixService.build_transfer(0.8, 12)


@pytest.fixture
def registry(tmp_path, monkeypatch):
    """Point the run registry at a throwaway SQLite file."""
    url = f"sqlite:///{tmp_path / 'runs.db'}"
    monkeypatch.setenv("OPHYDRO_DB", url)
    return url
