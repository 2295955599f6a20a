"""Snapshot, heatmap and timing files.

Snapshot layout for ``kind`` at ``step``::

    {kind}_{step:06}.csv    numeric grid, row-major, 17 significant digits;
                            row r is y = r / (rows - 1) * length_y (row 0 at y = 0)
    {kind}_{step:06}.txt    "key value" metadata: kind, step, time, rows,
                            cols, length_x, length_y, min, max

Both files depend only on the simulated values, so identical runs produce
identical bytes.
"""
from __future__ import annotations

import os
from collections import OrderedDict
from dataclasses import dataclass
from pathlib import Path

import numpy as np

OUTPUT_ROOT_ENV = "CO2SEQ_OUTPUT_ROOT"
KINDS = ("saturation", "pressure")


@dataclass
class Snapshot:
    step: int
    time: float
    kind: str
    grid: np.ndarray                  # (rows, cols), rows along y
    extent: tuple[float, float]       # (length_x, length_y) in m

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"snapshot kind must be one of {KINDS}, got {self.kind!r}")
        self.grid = np.asarray(self.grid, dtype=float)
        if self.grid.ndim != 2:
            raise ValueError("snapshot grid must be 2D")

    @property
    def stem(self) -> str:
        return f"{self.kind}_{self.step:06d}"


def resolve_output_dir(path) -> Path:
    """Relative output paths go under ``$CO2SEQ_OUTPUT_ROOT`` when it is set."""
    path = Path(path)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not path.is_absolute():
        path = Path(root) / path
    return path


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def write_snapshot(snap: Snapshot, directory) -> tuple[Path, Path]:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    csv_path = directory / f"{snap.stem}.csv"
    meta_path = directory / f"{snap.stem}.txt"
    with csv_path.open("w") as fh:
        for row in snap.grid:
            fh.write(",".join(_fmt(v) for v in row) + "\n")
    rows, cols = snap.grid.shape
    meta = OrderedDict([
        ("kind", snap.kind), ("step", str(snap.step)), ("time", _fmt(snap.time)),
        ("rows", str(rows)), ("cols", str(cols)),
        ("length_x", _fmt(snap.extent[0])), ("length_y", _fmt(snap.extent[1])),
        ("min", _fmt(float(snap.grid.min()))), ("max", _fmt(float(snap.grid.max()))),
    ])
    meta_path.write_text("".join(f"{k} {v}\n" for k, v in meta.items()))
    return csv_path, meta_path


def read_metadata(path) -> dict[str, str]:
    out = {}
    for line in Path(path).read_text().splitlines():
        if line.strip():
            key, _, value = line.partition(" ")
            out[key] = value.strip()
    return out


def read_snapshot(csv_path) -> Snapshot:
    """Inverse of :func:`write_snapshot`; values round-trip exactly."""
    csv_path = Path(csv_path)
    meta = read_metadata(csv_path.with_suffix(".txt"))
    rows = [[float(t) for t in line.split(",")]
            for line in csv_path.read_text().splitlines() if line.strip()]
    grid = np.array(rows, dtype=float)
    if grid.shape != (int(meta["rows"]), int(meta["cols"])):
        raise ValueError(f"{csv_path}: grid shape {grid.shape} disagrees with metadata")
    return Snapshot(int(meta["step"]), float(meta["time"]), meta["kind"], grid,
                    (float(meta["length_x"]), float(meta["length_y"])))


def list_snapshots(directory, kind: str) -> list[Path]:
    return sorted(Path(directory).glob(f"{kind}_[0-9][0-9][0-9][0-9][0-9][0-9].csv"))


# fixed blue-white-red palette for signed fields, gray for the rest
_PALETTE = np.array([[59, 76, 192], [221, 221, 221], [180, 4, 38]], dtype=float)


def heatmap_pixels(grid: np.ndarray, lo: float | None = None, hi: float | None = None,
                   color: bool = False) -> np.ndarray:
    """Map values linearly onto 0..255 (or RGB). Image row 0 is the top (max y)."""
    g = np.asarray(grid, dtype=float)
    lo = float(g.min()) if lo is None else lo
    hi = float(g.max()) if hi is None else hi
    if hi > lo:
        t = np.clip((g - lo) / (hi - lo), 0.0, 1.0)
    else:
        t = np.zeros_like(g)
    t = t[::-1]
    if not color:
        return np.rint(255 * t).astype(np.uint8)
    seg = np.minimum((t * 2).astype(int), 1)
    frac = (t * 2 - seg)[..., None]
    rgb = _PALETTE[seg] * (1 - frac) + _PALETTE[seg + 1] * frac
    return np.rint(rgb).astype(np.uint8)


def render_heatmap(snap: Snapshot, path, color: bool = False) -> Path:
    """Write a binary PGM (gray) or PPM (``color=True``) with one pixel per grid value."""
    path = Path(path)
    pix = heatmap_pixels(snap.grid, color=color)
    rows, cols = snap.grid.shape
    magic = "P6" if color else "P5"
    with path.open("wb") as fh:
        fh.write(f"{magic}\n{cols} {rows}\n255\n".encode("ascii"))
        fh.write(pix.tobytes())
    return path


def read_pnm(path) -> np.ndarray:
    """Read a binary PGM/PPM written by :func:`render_heatmap`."""
    data = Path(path).read_bytes()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        start = pos
        while not data[pos:pos + 1].isspace():
            pos += 1
        tokens.append(data[start:pos].decode("ascii"))
    pos += 1
    magic, cols, rows = tokens[0], int(tokens[1]), int(tokens[2])
    depth = 3 if magic == "P6" else 1
    pix = np.frombuffer(data[pos:pos + rows * cols * depth], dtype=np.uint8)
    return pix.reshape((rows, cols, depth) if depth == 3 else (rows, cols))


def write_timings(records, path) -> Path:
    """CSV ``phase,step,seconds`` then a blank line and per-phase totals.

    The summary block has header ``phase,count,total_seconds`` and one row
    per distinct phase in first-seen order.
    """
    path = Path(path)
    totals: OrderedDict[str, list] = OrderedDict()
    with path.open("w") as fh:
        fh.write("phase,step,seconds\n")
        for r in records:
            fh.write(f"{r.phase},{r.step},{r.seconds:.9f}\n")
            t = totals.setdefault(r.phase, [0, 0.0])
            t[0] += 1
            t[1] += r.seconds
        if totals:
            fh.write("\nphase,count,total_seconds\n")
            for phase, (count, total) in totals.items():
                fh.write(f"{phase},{count},{total:.9f}\n")
    return path


def read_timings(path) -> tuple[list[tuple[str, int, float]], dict[str, tuple[int, float]]]:
    """Return ``(records, summary)`` from a file written by :func:`write_timings`."""
    blocks = Path(path).read_text().split("\n\n")
    records = []
    for line in blocks[0].splitlines()[1:]:
        phase, step, sec = line.split(",")
        records.append((phase, int(step), float(sec)))
    summary = {}
    if len(blocks) > 1:
        for line in blocks[1].splitlines()[1:]:
            if line.strip():
                phase, count, total = line.split(",")
                summary[phase] = (int(count), float(total))
    return records, summary


def write_loss_history(pretrain, updates, path) -> Path:
    """CSV ``phase,index,epoch,loss``; ``index`` numbers the update phases."""
    path = Path(path)
    with path.open("w") as fh:
        fh.write("phase,index,epoch,loss\n")
        if pretrain is not None:
            for e, v in enumerate(pretrain):
                fh.write(f"pretrain,0,{e},{_fmt(v)}\n")
        for i, hist in enumerate(updates):
            for e, v in enumerate(hist):
                fh.write(f"update,{i},{e},{_fmt(v)}\n")
    return path
