"""Toy screenshot corpus: procedurally drawn app screens with Rico-style hierarchies.

Stands in for a real screenshot corpus in tests and demos.  Each screen has a
status bar, a few text rows, buttons and image tiles; every widget appears in
the JSON hierarchy with its pixel bounds.
"""

import json
from pathlib import Path

import numpy as np

from owleyes.font import draw_text, text_width
from owleyes.imaging import save_png
from owleyes.rng import SplitMix64, mix_seed

WORDS = ("home", "profile", "settings", "news", "music", "order", "total", "price", "share",
         "login", "search", "photos", "cart", "menu", "about", "help", "today", "events")


def _color(rng, lo, hi):
    return tuple(int(lo + rng.randbelow(hi - lo + 1)) for _ in range(3))


def _picture(rng, w, h):
    """Saturated gradient with a few blobs, standing in for photo content."""
    a = np.array(_color(rng, 20, 235), dtype=np.float64)
    b = np.array(_color(rng, 20, 235), dtype=np.float64)
    yy, xx = np.mgrid[0:h, 0:w]
    t = ((xx / max(w - 1, 1)) * rng.uniform() + (yy / max(h - 1, 1)) * (1 - rng.uniform()))[..., None]
    t = np.clip(t, 0, 1)
    pic = a * (1 - t) + b * t
    for _ in range(2 + rng.randbelow(3)):
        cx, cy = rng.uniform() * w, rng.uniform() * h
        rad = (0.15 + 0.3 * rng.uniform()) * min(w, h)
        mask = (xx - cx) ** 2 + (yy - cy) ** 2 <= rad ** 2
        pic[mask] = _color(rng, 0, 255)
    return np.clip(pic, 0, 255).astype(np.uint8)


def _node(cls, bounds, children=(), text=None):
    d = {"class": cls, "bounds": [int(v) for v in bounds], "visibility": "visible", "children": list(children)}
    if text is not None:
        d["text"] = text
    return d


def make_screen(seed: int, width: int = 128, height: int = 192):
    """Return (RGB raster, hierarchy dict) for one toy screen."""
    rng = SplitMix64(seed)
    bg = _color(rng, 225, 255)
    img = np.empty((height, width, 3), dtype=np.uint8)
    img[...] = bg
    bar_h = max(6, height // 24)
    bar = _color(rng, 20, 90)
    img[:bar_h] = bar
    status = _node("android.view.View", (0, 0, width, bar_h))

    kinds = ["image", "text", "text"]
    heights = {"image": (max(24, height // 4), max(32, height * 3 // 8)), "text": (12, 18), "button": (16, 22)}
    extras = ["text", "button", "image", "text", "button", "text"]
    for _ in range(6):
        kinds.insert(rng.randbelow(len(kinds) + 1), rng.choice(extras))
    margin, gap = 4, 4
    plan = [(k, heights[k][0] + rng.randbelow(heights[k][1] - heights[k][0] + 1)) for k in kinds]
    avail = height - bar_h - 2 * margin
    required = {"image": 1, "text": 2}
    while sum(h for _, h in plan) + gap * (len(plan) - 1) > avail:
        # Drop the last item that is not needed to keep the required mix.
        for i in range(len(plan) - 1, -1, -1):
            k = plan[i][0]
            if sum(1 for kk, _ in plan if kk == k) > required.get(k, 0):
                del plan[i]
                break

    rows = []
    y = bar_h + margin
    for kind, h in plan:
        if kind == "image":
            if rng.randbelow(2) and width >= 64:
                half = (width - 2 * margin - gap) // 2
                tiles = []
                for x0 in (margin, margin + half + gap):
                    img[y:y + h, x0:x0 + half] = _picture(rng, half, h)
                    tiles.append(_node("android.widget.ImageView", (x0, y, x0 + half, y + h)))
                rows.append(_node("android.widget.LinearLayout", (margin, y, width - margin, y + h), tiles))
            else:
                w = width - 2 * margin
                img[y:y + h, margin:margin + w] = _picture(rng, w, h)
                rows.append(_node("android.widget.ImageView", (margin, y, margin + w, y + h)))
        elif kind == "text":
            scale = 2 if h >= 16 and rng.randbelow(2) else 1
            words = " ".join(rng.choice(WORDS) for _ in range(3))
            while text_width(words, scale) > width - 2 * margin - 4 and " " in words:
                words = words.rsplit(" ", 1)[0]
            tw = min(width - 2 * margin, text_width(words, scale) + 4)
            ink = _color(rng, 0, 80)
            draw_text(img, words, margin + 2, y + (h - 7 * scale) // 2, scale, ink,
                      clip=(margin, y, margin + tw, y + h))
            rows.append(_node("android.widget.TextView", (margin, y, margin + tw, y + h), text=words))
        else:
            label = rng.choice(WORDS)
            bw = min(width - 2 * margin, text_width(label, 1) + 16)
            x0 = margin + rng.randbelow(max(1, width - 2 * margin - bw + 1))
            img[y:y + h, x0:x0 + bw] = _color(rng, 40, 200)
            draw_text(img, label, x0 + 8, y + (h - 7) // 2, 1, (255, 255, 255), clip=(x0, y, x0 + bw, y + h))
            rows.append(_node("android.widget.Button", (x0, y, x0 + bw, y + h), text=label))
        y += h + gap

    content = _node("android.widget.LinearLayout", (0, bar_h, width, height), rows)
    root = _node("android.widget.FrameLayout", (0, 0, width, height), [status, content])
    return img, {"activity": {"root": root}}


def make_toy_corpus(out_dir, count: int, seed: int = 0, width: int = 128, height: int = 192):
    """Write ``count`` screens as screen_NNNN.png + screen_NNNN.json."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for i in range(count):
        img, hierarchy = make_screen(mix_seed(seed, i), width, height)
        stem = out_dir / f"screen_{i:04d}"
        save_png(img, stem.with_suffix(".png"))
        stem.with_suffix(".json").write_text(json.dumps(hierarchy, indent=1), encoding="utf-8")
        paths.append(stem.with_suffix(".png"))
    return paths
