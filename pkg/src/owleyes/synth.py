"""Synthetic UI display issues injected into clean screenshots.

A screenshot comes with its view hierarchy (Rico-style JSON).  Text and image
widgets are located from the hierarchy, one is picked with a seeded draw, and
a category-specific rule corrupts its pixels.  Every rule only touches pixels
inside the returned region, except the full-screen blur.
"""

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Optional

import numpy as np

from owleyes import __version__
from owleyes.errors import DimensionError, HierarchyParseError, ManifestError, NoCandidateError
from owleyes.font import GLYPH_H, draw_text
from owleyes.imaging import gaussian_blur, load_image, save_png
from owleyes.manifest import DatasetManifest, ManifestRow
from owleyes.rng import SplitMix64, mix_seed

log = logging.getLogger(__name__)

IMAGE_EXTS = (".png", ".jpg", ".jpeg")
CONTAINER_SUFFIXES = ("Layout", "ViewGroup", "ScrollView", "ListView", "RecyclerView", "ViewPager", "WebView")

MISSING_FILL = (0xCC, 0xCC, 0xCC)
MISSING_LINE = (0x88, 0x88, 0x88)


class IssueCategory(str, Enum):
    COMPONENT_OCCLUSION = "ComponentOcclusion"
    TEXT_OVERLAP = "TextOverlap"
    MISSING_IMAGE = "MissingImage"
    NULL_VALUE = "NullValue"
    BLURRED_SCREEN = "BlurredScreen"

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        for member in cls:
            if name in (member.value, member.name, member.value.lower(), member.name.lower()):
                return member
        raise ValueError(f"unknown issue category {name!r}; choose from {[m.value for m in cls]}")


@dataclass
class ViewNode:
    widget_type: str
    bounds: tuple  # (left, top, right, bottom), clamped to the screen
    text: Optional[str] = None
    children: list = field(default_factory=list)
    visible: bool = True
    accepted: bool = True
    parent: Optional["ViewNode"] = field(default=None, repr=False, compare=False)

    @property
    def width(self):
        return self.bounds[2] - self.bounds[0]

    @property
    def height(self):
        return self.bounds[3] - self.bounds[1]

    @property
    def center(self):
        return ((self.bounds[0] + self.bounds[2]) / 2, (self.bounds[1] + self.bounds[3]) / 2)

    def walk(self):
        yield self
        for c in self.children:
            yield from c.walk()


@dataclass
class ViewHierarchy:
    root: Optional[ViewNode]
    screen_dims: tuple  # (width, height)
    skipped: int = 0  # nodes without usable bounds

    def nodes(self):
        return [] if self.root is None else [n for n in self.root.walk() if n.accepted]

    @property
    def text_candidates(self):
        return [n for n in self.nodes() if n.widget_type.endswith("TextView")]

    @property
    def image_candidates(self):
        return [n for n in self.nodes() if n.widget_type.endswith("ImageView")]

    @property
    def widget_candidates(self):
        w, h = self.screen_dims
        return [
            n for n in self.nodes()
            if not n.children
            and not n.widget_type.endswith(CONTAINER_SUFFIXES)
            and n.width * n.height < 0.9 * w * h
        ]

    def pool(self, category: "IssueCategory"):
        category = IssueCategory.parse(category)
        if category in (IssueCategory.TEXT_OVERLAP, IssueCategory.NULL_VALUE):
            return self.text_candidates
        if category is IssueCategory.MISSING_IMAGE:
            return self.image_candidates
        if category is IssueCategory.COMPONENT_OCCLUSION:
            return self.widget_candidates
        return []


@dataclass
class BugRecord:
    category: IssueCategory
    region: tuple
    seed: int
    source_path: Optional[str] = None
    output_path: Optional[str] = None


# ------------------------------------------------------------------ parsing


def _root_object(obj):
    if isinstance(obj, dict):
        if isinstance(obj.get("activity"), dict) and "root" in obj["activity"]:
            return obj["activity"]["root"]
        if isinstance(obj.get("root"), dict):
            return obj["root"]
    return obj


def root_extent(json_text: str):
    """(right, bottom) of the root node's bounds, or None."""
    try:
        root = _root_object(json.loads(json_text))
        b = root.get("bounds")
        return (int(b[2]), int(b[3])) if b and len(b) == 4 else None
    except (ValueError, AttributeError, TypeError):
        return None


def _is_visible(raw):
    vis = raw.get("visibility", raw.get("visible", True))
    if isinstance(vis, str):
        vis = vis.lower() == "visible"
    if raw.get("visible-to-user") is False:
        return False
    return bool(vis)


def parse_hierarchy(json_text: str, screen_dims, source_dims=None) -> ViewHierarchy:
    """Parse Rico or simplified hierarchy JSON.

    ``screen_dims`` is (width, height) of the screenshot.  ``source_dims`` is
    the coordinate space of the bounds when it differs from the screenshot
    (Rico reports bounds at 1440x2560 for 1080x1920 captures).
    """
    try:
        obj = json.loads(json_text)
    except json.JSONDecodeError as exc:
        raise HierarchyParseError(f"malformed hierarchy JSON: {exc}") from exc
    sw, sh = screen_dims
    sx = sy = 1.0
    if source_dims is not None:
        sx, sy = sw / source_dims[0], sh / source_dims[1]
    hierarchy = ViewHierarchy(root=None, screen_dims=(sw, sh))

    def build(raw, parent, parent_visible):
        if not isinstance(raw, dict):
            return None
        widget = str(raw.get("class") or raw.get("widget_type") or raw.get("type") or "")
        visible = parent_visible and _is_visible(raw)
        bounds = raw.get("bounds")
        accepted = True
        if not (isinstance(bounds, (list, tuple)) and len(bounds) == 4):
            hierarchy.skipped += 1
            accepted = False
            clamped = (0, 0, 0, 0)
        else:
            l, t, r, b = (float(v) for v in bounds)
            clamped = (
                int(round(min(max(l * sx, 0), sw))),
                int(round(min(max(t * sy, 0), sh))),
                int(round(min(max(r * sx, 0), sw))),
                int(round(min(max(b * sy, 0), sh))),
            )
            if r <= l or b <= t or clamped[2] <= clamped[0] or clamped[3] <= clamped[1]:
                accepted = False
        node = ViewNode(
            widget_type=widget,
            bounds=clamped,
            text=raw.get("text"),
            visible=visible,
            accepted=accepted and visible,
            parent=parent,
        )
        for child in raw.get("children") or []:
            c = build(child, node, visible)
            if c is not None:
                node.children.append(c)
        return node

    hierarchy.root = build(_root_object(obj), None, True)
    if hierarchy.skipped:
        log.warning("%d hierarchy nodes without usable bounds skipped", hierarchy.skipped)
    return hierarchy


# ---------------------------------------------------------------- selection


def select_target(h: ViewHierarchy, category, seed: int) -> Optional[ViewNode]:
    """Uniform seeded pick from the category's pool.  BlurredScreen needs no node."""
    category = IssueCategory.parse(category)
    if category is IssueCategory.BLURRED_SCREEN:
        return None
    pool = h.pool(category)
    if not pool:
        raise NoCandidateError(f"no candidate widget for {category.value}")
    return pool[SplitMix64(seed).randbelow(len(pool))]


# ---------------------------------------------------------------- injection


def _union(a, b):
    return (min(a[0], b[0]), min(a[1], b[1]), max(a[2], b[2]), max(a[3], b[3]))


def _paste_shifted(img, rect, dx, dy):
    """Copy ``rect`` and paste it displaced by (dx, dy), clipped to the image.

    Returns (output, pasted rect) or None when the paste leaves no trace.
    """
    H, W = img.shape[:2]
    l, t, r, b = rect
    pl, pt, pr, pb = max(l + dx, 0), max(t + dy, 0), min(r + dx, W), min(b + dy, H)
    if pr <= pl or pb <= pt:
        return None
    patch = img[pt - dy:pb - dy, pl - dx:pr - dx].copy()
    out = img.copy()
    out[pt:pb, pl:pr] = patch
    if np.array_equal(out[pt:pb, pl:pr], img[pt:pb, pl:pr]):
        return None
    return out, (pl, pt, pr, pb)


def _shift_with_fallback(img, rect, moves):
    """Try each (dx, dy) in order; the first that changes pixels wins."""
    for dx, dy in moves:
        res = _paste_shifted(img, rect, dx, dy)
        if res is not None:
            out, pasted = res
            return out, _union(rect, pasted)
    dx, dy = moves[0]
    H, W = img.shape[:2]
    l, t, r, b = rect
    pasted = (max(l + dx, 0), max(t + dy, 0), min(r + dx, W), min(b + dy, H))
    return img.copy(), _union(rect, pasted)


def _nearest_neighbour(node: ViewNode, h: ViewHierarchy):
    siblings = []
    if node.parent is not None:
        siblings = [c for c in node.parent.children if c is not node and c.accepted]
    if not siblings:
        siblings = [n for n in h.widget_candidates if n is not node]
    if not siblings:
        return None
    cx, cy = node.center
    return min(siblings, key=lambda s: (s.center[0] - cx) ** 2 + (s.center[1] - cy) ** 2)


def _occlusion(img, h, node, rng):
    w, ht = node.width, node.height
    frac = rng.uniform_range(0.3, 0.6)
    other = _nearest_neighbour(node, h)
    if other is not None and other.center != node.center:
        vx = other.center[0] - node.center[0]
        vy = other.center[1] - node.center[1]
        horizontal = abs(vx) >= abs(vy)
        sign = (1 if vx > 0 else -1) if horizontal else (1 if vy > 0 else -1)
    else:
        horizontal = rng.next_u64() & 1 == 0
        sign = rng.sign()
    dx_mag = max(1, int(round(frac * w)))
    dy_mag = max(1, int(round(frac * ht)))
    primary = (sign * dx_mag, 0) if horizontal else (0, sign * dy_mag)
    moves = [primary, (-primary[0], -primary[1])]
    moves += [(0, dy_mag), (0, -dy_mag)] if horizontal else [(dx_mag, 0), (-dx_mag, 0)]
    return _shift_with_fallback(img, node.bounds, moves)


def _text_overlap(img, node, rng):
    frac = rng.uniform_range(0.4, 0.6)
    sign = rng.sign()
    dy = sign * max(1, int(round(frac * node.height)))
    return _shift_with_fallback(img, node.bounds, [(0, dy), (0, -dy)])


def _missing_image(img, rect):
    l, t, r, b = rect
    out = img.copy()
    out[t:b, l:r] = MISSING_FILL
    w, h = r - l, b - t
    color = np.array(MISSING_LINE, dtype=np.uint8)

    def plot(x, y):
        if l <= x < r and t <= y < b:
            out[y, x] = color

    # Both diagonals, 2 px wide, walking the longer side one pixel at a time.
    steps = max(w, h)
    for k in range(steps):
        f = k / (steps - 1) if steps > 1 else 0.0
        x = l + int(round(f * (w - 1)))
        y = t + int(round(f * (h - 1)))
        x2 = r - 1 - int(round(f * (w - 1)))
        if w >= h:
            plot(x, y), plot(x, y + 1), plot(x2, y), plot(x2, y + 1)
        else:
            plot(x, y), plot(x + 1, y), plot(x2, y), plot(x2 - 1, y)
    return out, rect


def _border_median(img, rect):
    l, t, r, b = rect
    sub = img[t:b, l:r].reshape(b - t, r - l, -1)
    border = np.concatenate([sub[0], sub[-1], sub[:, 0], sub[:, -1]])
    return np.median(border, axis=0).round().astype(np.uint8)


def _null_value(img, rect):
    l, t, r, b = rect
    out = img.copy()
    bg = _border_median(img, rect)
    out[t:b, l:r] = bg
    h = b - t
    scale = max(1, int(0.6 * h) // GLYPH_H)
    lum = 0.299 * bg[0] + 0.587 * bg[1] + 0.114 * bg[2]
    ink = (0, 0, 0) if lum > 128 else (255, 255, 255)
    y = t + (h - GLYPH_H * scale) // 2
    draw_text(out, "null", l + scale, y, scale, ink, clip=rect)
    return out, rect


def inject_issue(img: np.ndarray, h: ViewHierarchy, category, seed: int):
    """Returns (corrupted copy of img, BugRecord)."""
    category = IssueCategory.parse(category)
    H, W = img.shape[:2]
    if (W, H) != tuple(h.screen_dims):
        raise DimensionError(f"image is {W}x{H} but hierarchy describes {h.screen_dims[0]}x{h.screen_dims[1]}")
    node = select_target(h, category, seed)
    rng = SplitMix64(mix_seed(seed, 1))
    if category is IssueCategory.BLURRED_SCREEN:
        out, region = gaussian_blur(img, W / 100.0), (0, 0, W, H)
    elif category is IssueCategory.COMPONENT_OCCLUSION:
        out, region = _occlusion(img, h, node, rng)
    elif category is IssueCategory.TEXT_OVERLAP:
        out, region = _text_overlap(img, node, rng)
    elif category is IssueCategory.MISSING_IMAGE:
        out, region = _missing_image(img, node.bounds)
    else:
        out, region = _null_value(img, node.bounds)
    return out, BugRecord(category=category, region=tuple(int(v) for v in region), seed=int(seed))


# ------------------------------------------------------------------ dataset


def find_corpus(corpus_dir):
    """Sorted (image path, hierarchy path) pairs sharing a basename."""
    corpus_dir = Path(corpus_dir)
    pairs = []
    for p in sorted(corpus_dir.iterdir()):
        if p.suffix.lower() in IMAGE_EXTS:
            j = p.with_suffix(".json")
            if j.exists():
                pairs.append((p, j))
    return pairs


def split_counts(count, categories):
    k = len(categories)
    return {c: count // k + (1 if i < count % k else 0) for i, c in enumerate(categories)}


_CORPUS_CACHE = {}


def _load_pair(img_path, json_path):
    key = (str(img_path), str(json_path))
    if key not in _CORPUS_CACHE:
        img = load_image(img_path)
        text = Path(json_path).read_text(encoding="utf-8")
        dims = (img.shape[1], img.shape[0])
        extent = root_extent(text)
        src = extent if extent and (extent[0] > dims[0] or extent[1] > dims[1]) else None
        if len(_CORPUS_CACHE) > 64:
            _CORPUS_CACHE.clear()
        _CORPUS_CACHE[key] = (img, parse_hierarchy(text, dims, src))
    return _CORPUS_CACHE[key]


def _bug_task(args):
    pairs, out_dir, row, category, seed = args
    category = IssueCategory.parse(category)
    start = SplitMix64(seed).randbelow(len(pairs))
    for k in range(len(pairs)):
        img_path, json_path = pairs[(start + k) % len(pairs)]
        img, h = _load_pair(img_path, json_path)
        try:
            out, rec = inject_issue(img, h, category, seed)
        except NoCandidateError:
            continue
        rel = f"bug/{row:06d}_{category.value}.png"
        save_png(out, Path(out_dir) / rel)
        return ManifestRow(path=rel, label="bug", category=category.value, region=rec.region,
                           seed=seed, source=Path(img_path).name)
    return None


def _clean_task(args):
    pairs, out_dir, index, seed = args
    img_path, _ = pairs[SplitMix64(seed).randbelow(len(pairs))]
    rel = f"clean/{index:06d}.png"
    save_png(load_image(img_path), Path(out_dir) / rel)
    return ManifestRow(path=rel, label="clean", source=Path(img_path).name)


def _run(tasks, fn, workers):
    if workers <= 1 or len(tasks) < 2:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, tasks, chunksize=max(1, len(tasks) // (workers * 4))))


def default_workers():
    try:
        n = int(os.environ.get("OWLEYES_THREADS", "0"))
    except ValueError:
        n = 0
    return n if n > 0 else (os.cpu_count() or 1)


def generate_dataset(corpus_dir, out_dir, count: int, categories=None, master_seed: int = 0,
                     workers: Optional[int] = None) -> DatasetManifest:
    """Write ``count`` bug images plus ``count`` clean copies and a manifest.

    Row ``r`` (bug rows first, then clean rows) uses seed mix_seed(master_seed, r),
    so the output does not depend on ``workers``.
    """
    if count <= 0:
        raise ValueError("count must be positive")
    categories = [IssueCategory.parse(c) for c in (categories or list(IssueCategory))]
    pairs = find_corpus(corpus_dir)
    if not pairs:
        raise ManifestError(f"no (image, hierarchy JSON) pairs found in {corpus_dir}")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    workers = default_workers() if workers is None else workers

    requested = split_counts(count, categories)
    bug_tasks = []
    row = 0
    for cat in categories:
        for _ in range(requested[cat]):
            bug_tasks.append((pairs, str(out_dir), row, cat.value, mix_seed(master_seed, row)))
            row += 1
    clean_tasks = [(pairs, str(out_dir), i, mix_seed(master_seed, count + i)) for i in range(count)]

    bug_rows = _run(bug_tasks, _bug_task, workers)
    clean_rows = _run(clean_tasks, _clean_task, workers)
    filled = {c.value: 0 for c in categories}
    for r in bug_rows:
        if r is not None:
            filled[r.category] += 1
    rows = sorted([r for r in bug_rows if r is not None] + clean_rows, key=lambda r: r.path)
    header = {
        "tool": "owleyes",
        "tool_version": __version__,
        "master_seed": master_seed,
        "count": count,
        "categories": [c.value for c in categories],
        "requested": {c.value: requested[c] for c in categories},
        "filled": filled,
    }
    for name, n in filled.items():
        if n < header["requested"][name]:
            log.warning("category %s under-filled: %d of %d", name, n, header["requested"][name])
    manifest = DatasetManifest(rows=rows, header=header, base_dir=out_dir)
    manifest.write(out_dir / "manifest.jsonl")
    return manifest
