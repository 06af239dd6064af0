"""Deterministic SVG views of a finished run (scatter, trajectories, IFC vs N)."""

from __future__ import annotations

import csv
import json
from collections import defaultdict
from pathlib import Path

SIZE = 400
PAD = 30
COLORS = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"]


class _Frame:
    """Maps data coordinates into a padded square canvas."""

    def __init__(self, xs, ys):
        self.x0, self.x1 = _span(xs)
        self.y0, self.y1 = _span(ys)

    def __call__(self, x, y):
        u = PAD + (x - self.x0) / (self.x1 - self.x0) * (SIZE - 2 * PAD)
        v = SIZE - PAD - (y - self.y0) / (self.y1 - self.y0) * (SIZE - 2 * PAD)
        return f"{u:.2f}", f"{v:.2f}"

    def axes(self) -> str:
        return (
            f'<rect x="{PAD}" y="{PAD}" width="{SIZE - 2 * PAD}" height="{SIZE - 2 * PAD}" '
            f'fill="none" stroke="#888"/>'
            f'<text x="{PAD}" y="{SIZE - 8}" font-size="10">x: [{self.x0:.3g}, {self.x1:.3g}]</text>'
            f'<text x="{SIZE / 2}" y="{SIZE - 8}" font-size="10">y: [{self.y0:.3g}, {self.y1:.3g}]</text>'
        )


def _span(vals):
    lo, hi = min(vals), max(vals)
    if hi - lo < 1e-9:
        lo, hi = lo - 1.0, hi + 1.0
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


def _svg(title: str, body: str) -> str:
    return (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" '
        f'viewBox="0 0 {SIZE} {SIZE}">\n'
        f'<text x="{PAD}" y="18" font-size="12">{title}</text>\n{body}\n</svg>\n'
    )


def scatter_svg(points, title: str) -> str:
    xs, ys = [p[0] for p in points], [p[1] for p in points]
    fr = _Frame(xs, ys)
    dots = "".join(
        '<circle cx="{}" cy="{}" r="1.5" fill="#1f77b4" fill-opacity="0.6"/>'.format(*fr(x, y))
        for x, y in points
    )
    return _svg(title, fr.axes() + dots)


def trajectories_svg(paths_by_method: dict[str, list[list[tuple[float, float]]]], title: str) -> str:
    xs = [x for paths in paths_by_method.values() for p in paths for x, _ in p]
    ys = [y for paths in paths_by_method.values() for p in paths for _, y in p]
    fr = _Frame(xs, ys)
    body = [fr.axes()]
    for i, (method, paths) in enumerate(sorted(paths_by_method.items())):
        color = COLORS[i % len(COLORS)]
        body.append(f'<text x="{SIZE - 150}" y="{18 + 12 * i}" font-size="10" fill="{color}">{method}</text>')
        for p in paths:
            pts = " ".join(",".join(fr(x, y)) for x, y in p)
            body.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="0.7"/>')
    return _svg(title, "".join(body))


def line_chart_svg(series: dict[str, list[tuple[float, float]]], title: str) -> str:
    xs = [x for pts in series.values() for x, _ in pts]
    ys = [y for pts in series.values() for _, y in pts]
    fr = _Frame(xs, ys)
    body = [fr.axes()]
    for i, (name, pts) in enumerate(sorted(series.items())):
        color = COLORS[i % len(COLORS)]
        pts = sorted(pts)
        body.append(f'<text x="{SIZE - 150}" y="{18 + 12 * i}" font-size="10" fill="{color}">{name}</text>')
        body.append(
            '<polyline points="{}" fill="none" stroke="{}" stroke-width="1.5"/>'.format(
                " ".join(",".join(fr(x, y)) for x, y in pts), color
            )
        )
    return _svg(title, "".join(body))


def export_plots(out_dir) -> list[Path]:
    """Render scatter, trajectory and IFC-vs-N views into ``out_dir/plots``.

    Inputs are validated before anything is written.
    """
    out_dir = Path(out_dir)
    finals_path, sweep_path = out_dir / "finals.csv", out_dir / "sweep.csv"
    for p in (finals_path, sweep_path):
        if not p.exists():
            raise FileNotFoundError(f"missing run artifact {p}")
    finals = defaultdict(list)
    with finals_path.open() as fh:
        for row in csv.DictReader(fh):
            finals[(row["method"], int(row["N_steps"]))].append((float(row["x"]), float(row["y"])))
    if not finals or any(not pts for pts in finals.values()):
        raise ValueError("no final samples to plot")
    ifc_series = defaultdict(list)
    with sweep_path.open() as fh:
        for row in csv.DictReader(fh):
            ifc_series[row["method"]].append((float(row["N_steps"]), float(row["ifc"])))
    paths = defaultdict(dict)
    tdir = out_dir / "trajectories"
    for method, n in finals:
        tp = tdir / f"{method}_N{n}.json"
        if tp.exists():
            t = json.loads(tp.read_text())
            states = t["states"] + [t["final"]]
            paths[n][method] = [[tuple(s[i]) for s in states] for i in range(len(t["final"]))]

    docs = {}
    for (method, n), pts in sorted(finals.items()):
        docs[f"scatter_{method}_N{n}.svg"] = scatter_svg(pts, f"{method}, N={n}")
    for n, by_method in sorted(paths.items()):
        docs[f"trajectories_N{n}.svg"] = trajectories_svg(by_method, f"trajectories, N={n}")
    docs["ifc_vs_n.svg"] = line_chart_svg(ifc_series, "IFC (dB) vs inference steps")

    pdir = out_dir / "plots"
    pdir.mkdir(parents=True, exist_ok=True)
    written = []
    for name, text in docs.items():
        (pdir / name).write_text(text)
        written.append(pdir / name)
    return written
