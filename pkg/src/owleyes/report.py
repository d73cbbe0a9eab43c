"""Batch detection over a screenshot folder and JSON/HTML report emission."""

import html
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from owleyes import __version__
from owleyes.checkpoint import checkpoint_id, load_checkpoint
from owleyes.imaging import load_image, save_png
from owleyes.localize import grad_cam, heatmap_to_region, render_overlay
from owleyes.model import BUG, Verdict, predict_batch, preprocess_image
from owleyes.synth import IMAGE_EXTS

ROW_KEYS = ("path", "verdict", "bug_probability", "region", "overlay_path", "hierarchy_path")
DOC_KEYS = ("tool_version", "model_checkpoint_id", "input_dir", "num_screens", "num_issues", "rows", "skipped")


@dataclass
class ReportRow:
    path: str
    verdict: str
    bug_probability: float
    region: Optional[list] = None
    overlay_path: Optional[str] = None
    hierarchy_path: Optional[str] = None

    def to_dict(self):
        return {k: getattr(self, k) for k in ROW_KEYS}


@dataclass
class ReportDocument:
    tool_version: str
    model_checkpoint_id: str
    input_dir: str
    rows: list = field(default_factory=list)
    skipped: list = field(default_factory=list)  # [{"path", "reason"}]

    def __post_init__(self):
        self.rows = sorted(self.rows, key=lambda r: r.path)
        self.skipped = sorted(self.skipped, key=lambda s: s["path"])

    @property
    def num_screens(self):
        return len(self.rows)

    @property
    def num_issues(self):
        return sum(r.verdict == "bug" for r in self.rows)

    def to_dict(self):
        d = {k: getattr(self, k) for k in DOC_KEYS}
        d["rows"] = [r.to_dict() for r in self.rows]
        d["skipped"] = [{"path": s["path"], "reason": s["reason"]} for s in self.skipped]
        return d

    @classmethod
    def from_dict(cls, d):
        rows = [ReportRow(**{k: r.get(k) for k in ROW_KEYS}) for r in d.get("rows", [])]
        doc = cls(d["tool_version"], d["model_checkpoint_id"], d.get("input_dir", ""), rows, list(d.get("skipped", [])))
        if doc.num_screens != d.get("num_screens", doc.num_screens) or doc.num_issues != d.get("num_issues", doc.num_issues):
            raise ValueError("report counts disagree with its rows")
        return doc


def _scan(input_dir: Path):
    return sorted(p for p in input_dir.rglob("*") if p.is_file() and p.suffix.lower() in IMAGE_EXTS)


def run_detect_batch(model_path, input_dir, threshold: float = 0.5, with_overlays: bool = False,
                     overlay_dir=None) -> ReportDocument:
    """Classify every image under ``input_dir``; localize the ones judged buggy.

    ``threshold`` is the heatmap level that bounds the reported region.
    Overlays are written under ``overlay_dir`` (never into ``input_dir``).
    """
    model_path, input_dir = Path(model_path), Path(input_dir)
    model = load_checkpoint(model_path)
    ckpt = checkpoint_id(model_path)
    if not input_dir.is_dir():
        raise FileNotFoundError(f"input directory not found: {input_dir}")
    if with_overlays and overlay_dir is None:
        raise ValueError("with_overlays requires an overlay_dir")

    rows, skipped = [], []
    for p in _scan(input_dir):
        rel = p.relative_to(input_dir).as_posix()
        try:
            img = load_image(p)
        except Exception as exc:  # Pillow raises several unrelated types
            skipped.append({"path": rel, "reason": f"{type(exc).__name__}: {exc}"})
            continue
        x = preprocess_image(img, model.config.height, model.config.width, model.dtype)
        verdict = Verdict.from_probability(predict_batch(model, x)[0])
        sidecar = p.with_suffix(".json")
        row = ReportRow(path=rel, verdict="bug" if verdict.is_bug else "clean",
                        bug_probability=round(verdict.bug_probability, 6),
                        hierarchy_path=sidecar.relative_to(input_dir).as_posix() if sidecar.is_file() else None)
        if verdict.is_bug:
            hm = grad_cam(model, img, BUG)
            row.region = heatmap_to_region(hm, threshold).to_list()
            if with_overlays:
                out = Path(overlay_dir) / (Path(rel).with_suffix("").as_posix().replace("/", "__") + "_overlay.png")
                save_png(render_overlay(img, hm), out)
                row.overlay_path = out.as_posix()
        rows.append(row)
    return ReportDocument(__version__, ckpt, input_dir.as_posix(), rows, skipped)


def report_json(r: ReportDocument) -> str:
    return json.dumps(r.to_dict(), indent=2, ensure_ascii=False) + "\n"


def emit_report_json(r: ReportDocument, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report_json(r), encoding="utf-8")
    return path


def load_report_json(path) -> ReportDocument:
    return ReportDocument.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


_CSS = """body{font-family:sans-serif;margin:2em;color:#222}
table{border-collapse:collapse}td,th{border:1px solid #ccc;padding:4px 8px;text-align:left}
tr.bug{background:#fde2e1}.summary{font-size:1.3em;margin-bottom:1em}"""


def _link(target, base: Path):
    if target is None:
        return ""
    href = Path(os.path.relpath(target, base)).as_posix()
    return f'<a href="{html.escape(href, quote=True)}">{html.escape(Path(target).name)}</a>'


def report_html(r: ReportDocument, base_dir=".") -> str:
    """Static page; links are relative to ``base_dir`` (the page's own folder)."""
    base = Path(base_dir)
    n = r.num_issues
    out = ["<!DOCTYPE html>", '<html lang="en"><head><meta charset="utf-8">',
           "<title>UI display issue report</title>", f"<style>{_CSS}</style></head><body>",
           "<h1>UI display issue report</h1>",
           f'<p class="summary">{n} issue{"" if n == 1 else "s"} in {r.num_screens} screen{"" if r.num_screens == 1 else "s"}</p>',
           f"<p>model {html.escape(r.model_checkpoint_id)}, tool {html.escape(r.tool_version)}</p>",
           "<table><thead><tr><th>screenshot</th><th>verdict</th><th>bug probability</th>"
           "<th>region</th><th>overlay</th><th>hierarchy</th></tr></thead><tbody>"]
    for row in r.rows:
        shot = os.path.join(r.input_dir, row.path)
        hier = os.path.join(r.input_dir, row.hierarchy_path) if row.hierarchy_path else None
        region = "" if row.region is None else html.escape(", ".join(map(str, row.region)))
        out.append(f'<tr class="{row.verdict}"><td>{_link(shot, base)}</td><td>{row.verdict}</td>'
                   f"<td>{row.bug_probability:.6f}</td><td>{region}</td>"
                   f"<td>{_link(row.overlay_path, base)}</td><td>{_link(hier, base)}</td></tr>")
    out.append("</tbody></table>")
    if r.skipped:
        out.append("<h2>Skipped files</h2><ul>")
        out.extend(f"<li>{html.escape(s['path'])}: {html.escape(s['reason'])}</li>" for s in r.skipped)
        out.append("</ul>")
    out.append("</body></html>")
    return "\n".join(out) + "\n"


def emit_report_html(r: ReportDocument, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(report_html(r, path.parent), encoding="utf-8")
    return path
