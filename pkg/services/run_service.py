import hashlib
import json
import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

from sqlalchemy.orm import Session

import models, schemas
from exceptions import OphydroError, ParameterError
from utils import TOOL_VERSION, get_settings

logger = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"


def file_digest(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


class RunService:

    # ───────────────────────────── RUN DIRECTORIES ─────────────────────────────

    @staticmethod
    def prepare_run_dir(out: Path) -> Path:
        out = Path(out)
        if out.exists() and not out.is_dir():
            raise ParameterError(f"output path {out} exists and is not a directory")
        out.mkdir(parents=True, exist_ok=True)
        return out

    @staticmethod
    def build_manifest(
        command: str,
        parameters: Dict[str, Any],
        outputs: Sequence[Path],
        seeds: Sequence[int] = (),
    ) -> schemas.RunManifest:
        settings = get_settings()
        return schemas.RunManifest(
            command=command,
            parameters=parameters,
            seeds=[int(s) for s in seeds],
            tool_version=TOOL_VERSION,
            timestamp=datetime.now(timezone.utc),
            threads=settings.threads,
            tolerances=settings.tolerances.model_dump(),
            outputs=[schemas.OutputFile(name=Path(p).name, sha256=file_digest(Path(p))) for p in outputs],
        )

    @staticmethod
    def write_manifest(run_dir: Path, manifest: schemas.RunManifest) -> Path:
        path = Path(run_dir) / MANIFEST_NAME
        path.write_text(manifest.model_dump_json(indent=2) + "\n", encoding="utf-8")
        logger.info("✅ %s: %d outputs recorded in %s", manifest.command, len(manifest.outputs), path)
        return path

    @staticmethod
    def load_manifest(path: Path) -> schemas.RunManifest:
        path = Path(path)
        if path.is_dir():
            path = path / MANIFEST_NAME
        if not path.exists():
            raise ParameterError(f"manifest not found: {path}")
        try:
            return schemas.RunManifest.model_validate_json(path.read_text(encoding="utf-8"))
        except ValueError as exc:
            raise ParameterError(f"invalid manifest {path}: {exc}")

    @staticmethod
    def verify_outputs(manifest: schemas.RunManifest, run_dir: Path) -> List[str]:
        """Names of recorded outputs that are missing or whose digest differs."""
        mismatched = []
        for out in manifest.outputs:
            path = Path(run_dir) / out.name
            if not path.exists() or file_digest(path) != out.sha256:
                mismatched.append(out.name)
        return mismatched

    # ───────────────────────────── REGISTRY CRUD ─────────────────────────────

    @staticmethod
    def record_run(db: Session, manifest: schemas.RunManifest, run_dir: Path, status: str = "ok") -> models.RunRecord:
        record = models.RunRecord(
            command=manifest.command,
            parameters=json.dumps(manifest.parameters, sort_keys=True),
            run_dir=str(Path(run_dir).resolve()),
            tool_version=manifest.tool_version,
            status=status,
            created_at=manifest.timestamp,
        )
        record.outputs = [models.RunOutput(name=o.name, sha256=o.sha256) for o in manifest.outputs]
        db.add(record)
        db.commit()
        db.refresh(record)
        return record

    @staticmethod
    def get_run(db: Session, run_id: int) -> models.RunRecord:
        record = db.query(models.RunRecord).filter(models.RunRecord.id == run_id).first()
        if not record:
            raise OphydroError(f"run {run_id} not found", exit_code=1)
        return record

    @staticmethod
    def list_runs(db: Session, command: Optional[str] = None) -> List[models.RunRecord]:
        query = db.query(models.RunRecord)
        if command:
            query = query.filter(models.RunRecord.command == command)
        return query.order_by(models.RunRecord.id).all()

    @staticmethod
    def delete_run(db: Session, run_id: int):
        record = RunService.get_run(db, run_id)
        db.delete(record)
        db.commit()
        return {"detail": f"run {run_id} deleted"}
