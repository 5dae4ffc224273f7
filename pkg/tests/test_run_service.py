import hashlib

import pytest

from database import get_db
from exceptions import OphydroError, ParameterError
from services.run_service import MANIFEST_NAME, RunService, file_digest
from utils import TOOL_VERSION


@pytest.fixture
def db(registry):
    gen = get_db(registry)
    session = next(gen)
    yield session
    gen.close()


@pytest.fixture
def finished_run(tmp_path):
    run_dir = RunService.prepare_run_dir(tmp_path / "run")
    (run_dir / "spectrum.csv").write_text("m,eigenvalue\n1,0.5\n", encoding="utf-8")
    manifest = RunService.build_manifest("spectrum", {"p": 0.8, "L": 8}, [run_dir / "spectrum.csv"], seeds=[7])
    RunService.write_manifest(run_dir, manifest)
    return run_dir, manifest


def test_file_digest(tmp_path):
    path = tmp_path / "a.txt"
    path.write_bytes(b"ophydro\n")
    assert file_digest(path) == hashlib.sha256(b"ophydro\n").hexdigest()


def test_prepare_run_dir_rejects_files(tmp_path):
    target = tmp_path / "plain"
    target.write_text("x")
    with pytest.raises(ParameterError):
        RunService.prepare_run_dir(target)
    assert RunService.prepare_run_dir(tmp_path / "a" / "b").is_dir()


def test_manifest_round_trip(finished_run):
    run_dir, manifest = finished_run
    assert (run_dir / MANIFEST_NAME).exists()
    loaded = RunService.load_manifest(run_dir)
    assert loaded.command == "spectrum"
    assert loaded.parameters == {"p": 0.8, "L": 8}
    assert loaded.seeds == [7]
    assert loaded.tool_version == TOOL_VERSION
    assert loaded.outputs[0].name == "spectrum.csv"
    assert loaded.tolerances["stochastic"] == pytest.approx(1e-12)


def test_verify_outputs_detects_changes(finished_run):
    run_dir, manifest = finished_run
    assert RunService.verify_outputs(manifest, run_dir) == []
    (run_dir / "spectrum.csv").write_text("m,eigenvalue\n1,0.6\n", encoding="utf-8")
    assert RunService.verify_outputs(manifest, run_dir) == ["spectrum.csv"]
    (run_dir / "spectrum.csv").unlink()
    assert RunService.verify_outputs(manifest, run_dir) == ["spectrum.csv"]


def test_load_manifest_errors(tmp_path):
    with pytest.raises(ParameterError):
        RunService.load_manifest(tmp_path / "missing.json")
    bad = tmp_path / MANIFEST_NAME
    bad.write_text("{not json", encoding="utf-8")
    with pytest.raises(ParameterError):
        RunService.load_manifest(bad)


def test_registry_crud(db, finished_run):
    run_dir, manifest = finished_run
    record = RunService.record_run(db, manifest, run_dir)
    assert record.id is not None
    assert record.status == "ok"
    assert [o.name for o in record.outputs] == ["spectrum.csv"]
    assert RunService.get_run(db, record.id).run_dir == str(run_dir.resolve())

    other = RunService.build_manifest("walk", {"seed": 1}, [])
    RunService.record_run(db, other, run_dir)
    assert len(RunService.list_runs(db)) == 2
    assert [r.command for r in RunService.list_runs(db, "walk")] == ["walk"]

    RunService.delete_run(db, record.id)
    with pytest.raises(OphydroError) as err:
        RunService.get_run(db, record.id)
    assert err.value.exit_code == 1
    assert len(RunService.list_runs(db)) == 1
