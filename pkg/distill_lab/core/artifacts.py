"""
Artifact Store

Every file a run produces lives under one output directory. Writes go to a
temporary name and are renamed into place; each artifact's content digest
is recorded in `manifest.json` together with the stage that wrote it.
"""

import hashlib
import json
import logging
import math
import os
import tempfile
from pathlib import Path
from typing import Any, Callable, Dict, Iterable, List, Optional, Sequence, Tuple, Union

from .errors import ArtifactError

logger = logging.getLogger(__name__)

MANIFEST = "manifest.json"
MISSING = "NA"


def atomic_write_text(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as f:
            f.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def text_digest(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def format_cell(value: Any) -> str:
    """Table cell text; floats keep full repr precision"""
    if value is None:
        return MISSING
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        if math.isnan(value):
            return "nan"
        return repr(float(value))
    return str(value)


def _provenance_value(value: Any) -> str:
    if isinstance(value, (list, tuple)):
        return ",".join(format_cell(v) for v in value)
    return format_cell(value)


class Layout:
    """Relative artifact paths"""

    MATRIX = "data/matrix.npz"
    CONFIG = "config.yaml"
    RUN_RECORD = "run_record.json"
    ANALYTIC_PASSK = "passk/analytic.json"
    COMPLEXITY = "complexity/sweep.json"
    COUPON = "complexity/coupon.json"

    @staticmethod
    def dataset(seed: int, split: str) -> str:
        return f"data/seed-{seed}/{split}.npz"

    @staticmethod
    def teacher(seed: int) -> str:
        return f"models/seed-{seed}/teacher.npz"

    @staticmethod
    def student(seed: int, arm: str) -> str:
        return f"models/seed-{seed}/student-{arm}.npz"

    @staticmethod
    def snapshot(seed: int, arm: str, step: int) -> str:
        return f"models/seed-{seed}/student-{arm}/step-{step:07d}.npz"

    @staticmethod
    def teacher_snapshot(seed: int, step: int) -> str:
        return f"models/seed-{seed}/teacher/step-{step:07d}.npz"

    @staticmethod
    def training_log(seed: int, model: str) -> str:
        return f"models/seed-{seed}/{model}.train.json"

    @staticmethod
    def labels(seed: int, label_key: str) -> str:
        return f"labels/seed-{seed}/{label_key}.npz"

    @staticmethod
    def report(seed: int, model: str) -> str:
        return f"reports/seed-{seed}/{model}.json"

    @staticmethod
    def passk(seed: int, model: str) -> str:
        return f"passk/seed-{seed}/{model}.json"

    @staticmethod
    def figure(name: str) -> str:
        return f"figures/{name}.tsv"

    @staticmethod
    def stage_marker(stage: str) -> str:
        return f"stages/{stage}.json"


class ArtifactStore:
    """Files under the run's output directory plus a digest manifest"""

    def __init__(self, root: Union[str, Path]):
        self.root = Path(root)
        self._manifest: Optional[Dict[str, Dict[str, str]]] = None

    def path(self, relpath: str) -> Path:
        target = self.root / relpath
        target.parent.mkdir(parents=True, exist_ok=True)
        return target

    def exists(self, relpath: str) -> bool:
        return (self.root / relpath).is_file()

    def require(self, relpaths: Iterable[str], stage: str) -> None:
        missing = [p for p in relpaths if not self.exists(p)]
        if missing:
            raise ArtifactError(
                f"Stage '{stage}' needs {', '.join(missing)} under {self.root}; run the producing stage first"
            )

    @property
    def manifest(self) -> Dict[str, Dict[str, str]]:
        if self._manifest is None:
            path = self.root / MANIFEST
            self._manifest = json.loads(path.read_text()) if path.is_file() else {}
        return self._manifest

    def record(self, relpath: str, digest: str, stage: str) -> str:
        self.manifest[relpath] = {"digest": digest, "stage": stage}
        atomic_write_text(self.root / MANIFEST, json.dumps(self.manifest, indent=2, sort_keys=True) + "\n")
        return relpath

    def digest(self, relpath: str) -> Optional[str]:
        entry = self.manifest.get(relpath)
        return entry["digest"] if entry else None

    def save(self, relpath: str, writer: Callable[..., str], *args, stage: str) -> str:
        """Run an archive writer `writer(path, *args) -> digest` and record it"""
        digest = writer(self.path(relpath), *args)
        logger.debug(f"Wrote {relpath} ({digest[:12]})")
        return self.record(relpath, digest, stage)

    def write_text(self, relpath: str, text: str, stage: str) -> str:
        atomic_write_text(self.path(relpath), text)
        return self.record(relpath, text_digest(text), stage)

    def read_text(self, relpath: str) -> str:
        path = self.root / relpath
        if not path.is_file():
            raise ArtifactError(f"Missing artifact {relpath} under {self.root}")
        return path.read_text(encoding="utf-8")

    def write_json(self, relpath: str, data: Any, stage: str) -> str:
        return self.write_text(relpath, json.dumps(data, indent=2, sort_keys=True) + "\n", stage)

    def read_json(self, relpath: str) -> Any:
        return json.loads(self.read_text(relpath))

    def write_table(
        self,
        relpath: str,
        columns: Sequence[str],
        rows: Sequence[Sequence[Any]],
        provenance: Dict[str, Any],
        stage: str,
    ) -> str:
        """Tab-separated table with `# key: value` provenance lines"""
        if not rows:
            raise ArtifactError(f"Refusing to write {relpath}: no rows")
        lines = [f"# {key}: {_provenance_value(value)}" for key, value in provenance.items()]
        lines.append("\t".join(columns))
        for row in rows:
            if len(row) != len(columns):
                raise ArtifactError(f"Row {row!r} does not match columns {list(columns)} in {relpath}")
            lines.append("\t".join(format_cell(v) for v in row))
        return self.write_text(relpath, "\n".join(lines) + "\n", stage)

    def read_table(self, relpath: str) -> Tuple[Dict[str, str], List[Dict[str, str]]]:
        provenance: Dict[str, str] = {}
        header: Optional[List[str]] = None
        rows: List[Dict[str, str]] = []
        for line in self.read_text(relpath).splitlines():
            if line.startswith("# "):
                key, _, value = line[2:].partition(": ")
                provenance[key] = value
            elif header is None:
                header = line.split("\t")
            else:
                rows.append(dict(zip(header, line.split("\t"))))
        return provenance, rows

    def remove(self, relpath: str) -> None:
        (self.root / relpath).unlink(missing_ok=True)
        if relpath in self.manifest:
            del self.manifest[relpath]
            atomic_write_text(self.root / MANIFEST, json.dumps(self.manifest, indent=2, sort_keys=True) + "\n")
