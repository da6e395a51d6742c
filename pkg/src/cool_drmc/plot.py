"""Static SVG rendering of traces and M-sweep tables."""
from __future__ import annotations

import csv
import json
from collections import defaultdict
from typing import Dict, List, Sequence, Tuple
from xml.sax.saxutils import escape

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]
W, H, PAD = 480, 360, 40


def _scale(points: Sequence[Tuple[float, float]]):
    if not points:
        return lambda p: (W / 2, H / 2)
    xs = [p[0] for p in points]
    ys = [p[1] for p in points]
    x0, x1, y0, y1 = min(xs), max(xs), min(ys), max(ys)
    s = min((W - 2 * PAD) / max(x1 - x0, 1e-9), (H - 2 * PAD) / max(y1 - y0, 1e-9))
    return lambda p: (PAD + (p[0] - x0) * s, H - PAD - (p[1] - y0) * s)


def _svg(body: List[str], title: str) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">\n'
            f'<title>{escape(title)}</title>\n<rect width="{W}" height="{H}" fill="white"/>\n')
    return head + "".join(body) + "</svg>\n"


def _polyline(pts, color, cls):
    coords = " ".join(f"{x:.2f},{y:.2f}" for x, y in pts)
    return f'<polyline class="{cls}" points="{coords}" fill="none" stroke="{color}" stroke-width="1.5"/>\n'


def trajectory_svg(records: List[dict]) -> str:
    """One polyline per robot through its recorded positions."""
    paths: Dict[str, List[Tuple[float, float]]] = defaultdict(list)
    for i, r in enumerate(records):
        for key in ("t", "robot", "x"):
            if key not in r:
                raise ValueError(f"trace record {i + 1} lacks field {key!r}")
        paths[str(r["robot"])].append((float(r["x"][0]), float(r["x"][1])))
    f = _scale([p for ps in paths.values() for p in ps])
    body = []
    for k, (rid, ps) in enumerate(sorted(paths.items())):
        color = PALETTE[k % len(PALETTE)]
        body.append(_polyline([f(p) for p in ps], color, f"robot robot-{escape(rid)}"))
        x, y = f(ps[-1])
        body.append(f'<text x="{x + 4:.2f}" y="{y:.2f}" font-size="10" fill="{color}">{escape(rid)}</text>\n')
    return _svg(body, "trajectories")


def sweep_svg(rows: List[dict]) -> str:
    """Mean cost and mean SDP time against M, each normalised to its own range."""
    acc = defaultdict(lambda: [0.0, 0.0, 0])
    for i, r in enumerate(rows):
        for key in ("M", "avg_cost", "sdp_ms"):
            if key not in r:
                raise ValueError(f"sweep row {i + 1} lacks field {key!r}")
        a = acc[int(r["M"])]
        a[0] += float(r["avg_cost"])
        a[1] += float(r["sdp_ms"])
        a[2] += 1
    Ms = sorted(acc)
    body = []
    for j, (name, color) in enumerate((("avg_cost", PALETTE[0]), ("sdp_ms", PALETTE[1]))):
        vals = [acc[m][j] / acc[m][2] for m in Ms]
        if not vals:
            continue
        lo, hi = min(vals), max(vals)
        span = hi - lo if hi > lo else 1.0
        x0, x1 = (Ms[0], Ms[-1]) if Ms[-1] > Ms[0] else (Ms[0] - 1, Ms[0] + 1)
        pts = [(PAD + (m - x0) / (x1 - x0) * (W - 2 * PAD), H - PAD - (v - lo) / span * (H - 2 * PAD))
               for m, v in zip(Ms, vals)]
        body.append(_polyline(pts, color, f"curve curve-{name}"))
        body.append(f'<text x="{PAD}" y="{16 + 12 * j}" font-size="10" fill="{color}">{name}</text>\n')
    for m in Ms:
        x = PAD + ((m - Ms[0]) / (Ms[-1] - Ms[0]) if Ms[-1] > Ms[0] else 0.5) * (W - 2 * PAD)
        body.append(f'<text class="tick" x="{x:.2f}" y="{H - PAD / 3:.2f}" font-size="9">{m}</text>\n')
    return _svg(body, "M sweep")


def plot_file(src: str, dst: str):
    with open(src) as fh:
        text = fh.read()
    if src.endswith(".csv"):
        out = sweep_svg(list(csv.DictReader(text.splitlines())))
    else:
        recs = []
        for n, line in enumerate(text.splitlines(), 1):
            if line.strip():
                try:
                    recs.append(json.loads(line))
                except json.JSONDecodeError as exc:
                    raise ValueError(f"{src}:{n}: {exc.msg}") from None
        out = trajectory_svg(recs)
    with open(dst, "w") as fh:
        fh.write(out)
