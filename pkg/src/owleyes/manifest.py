"""JSON-lines dataset manifest shared by the generator and the trainer."""

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from owleyes.errors import ManifestError

LABELS = ("clean", "bug")


@dataclass
class ManifestRow:
    path: str
    label: str
    category: Optional[str] = None
    region: Optional[tuple] = None
    seed: Optional[int] = None
    source: Optional[str] = None

    def __post_init__(self):
        if self.label not in LABELS:
            raise ManifestError(f"label must be one of {LABELS}, got {self.label!r}")
        if self.region is not None:
            self.region = tuple(int(v) for v in self.region)
        if self.label == "bug" and (self.category is None or self.region is None or self.seed is None):
            raise ManifestError(f"bug row {self.path} must carry category, region and seed")
        if self.label == "clean" and (self.category is not None or self.region is not None):
            raise ManifestError(f"clean row {self.path} must not carry category or region")

    @property
    def target(self) -> int:
        return LABELS.index(self.label)

    def to_json(self) -> str:
        obj = {
            "path": self.path,
            "label": self.label,
            "category": self.category,
            "region": list(self.region) if self.region is not None else None,
            "seed": self.seed,
            "source": self.source,
        }
        return json.dumps(obj, ensure_ascii=False, separators=(", ", ": "))


@dataclass
class DatasetManifest:
    rows: list
    header: dict = field(default_factory=dict)
    base_dir: Path = field(default_factory=Path)

    def __len__(self):
        return len(self.rows)

    def resolve(self, row: ManifestRow) -> Path:
        p = Path(row.path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    def labels(self):
        return [r.target for r in self.rows]

    def dumps(self) -> str:
        lines = [json.dumps({"header": self.header}, ensure_ascii=False, sort_keys=True)]
        lines.extend(r.to_json() for r in self.rows)
        return "\n".join(lines) + "\n"

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.dumps(), encoding="utf-8")
        return path

    @classmethod
    def loads(cls, text: str, base_dir=Path(".")) -> "DatasetManifest":
        header = {}
        rows = []
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ManifestError(f"line {lineno}: {exc}") from exc
            if "header" in obj:
                header = obj["header"]
                continue
            try:
                rows.append(ManifestRow(**obj))
            except TypeError as exc:
                raise ManifestError(f"line {lineno}: {exc}") from exc
        return cls(rows=rows, header=header, base_dir=Path(base_dir))

    @classmethod
    def read(cls, path) -> "DatasetManifest":
        path = Path(path)
        return cls.loads(path.read_text(encoding="utf-8"), base_dir=path.parent)
