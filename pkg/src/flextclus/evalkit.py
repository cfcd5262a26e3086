"""Error metrics and feature-wise task-cluster analysis."""

from __future__ import annotations

import colorsys
import xml.etree.ElementTree as ET
from dataclasses import dataclass
from pathlib import Path

import numpy as np


def _flat(values) -> np.ndarray:
    if isinstance(values, np.ndarray):
        return values.ravel().astype(float)
    parts = [np.ravel(np.asarray(v, dtype=float)) for v in values]
    return np.concatenate(parts) if parts else np.empty(0)


def nmse(predictions, targets) -> float:
    """MSE over all samples (of all tasks) divided by the targets' variance.

    Both arguments may be flat arrays or per-task lists of arrays.
    """
    p, y = _flat(predictions), _flat(targets)
    if p.shape != y.shape:
        raise ValueError(f"{p.size} predictions for {y.size} targets")
    var = float(np.var(y)) if y.size else 0.0
    if var == 0.0:
        raise ValueError("targets have zero variance")
    return float(np.mean((p - y) ** 2)) / var


def rmse(predictions, targets) -> float:
    p, y = _flat(predictions), _flat(targets)
    if p.size == 0:
        raise ValueError("rmse of an empty sample")
    if p.shape != y.shape:
        raise ValueError(f"{p.size} predictions for {y.size} targets")
    return float(np.sqrt(np.mean((p - y) ** 2)))


def relabel_rows(labels) -> np.ndarray:
    """Renumber each row's labels 0, 1, ... in order of first appearance."""
    labels = np.atleast_2d(np.asarray(labels))
    out = np.empty(labels.shape, dtype=int)
    for d, row in enumerate(labels):
        seen: dict = {}
        for t, lab in enumerate(row):
            out[d, t] = seen.setdefault(lab, len(seen))
    return out


@dataclass(frozen=True)
class ClusterMatrix:
    labels: np.ndarray

    def __post_init__(self):
        labels = np.array(self.labels, dtype=int)
        labels.flags.writeable = False
        object.__setattr__(self, "labels", labels)

    @property
    def shape(self):
        return self.labels.shape

    def n_clusters(self) -> np.ndarray:
        return np.array([len(set(row)) for row in self.labels])


def extract_clusters(U, tol: float = 0.0) -> ClusterMatrix:
    """Group tasks with equal (within `tol`, chained after sorting) U entries per row."""
    if tol < 0:
        raise ValueError("tol must be nonnegative")
    U = np.atleast_2d(np.asarray(U, dtype=float))
    D, T = U.shape
    raw = np.empty((D, T), dtype=int)
    for d in range(D):
        order = np.argsort(U[d], kind="stable")
        z = U[d, order]
        ids = np.concatenate([[0], np.cumsum(np.diff(z) > tol)]) if T else np.empty(0, int)
        raw[d, order] = ids
    return ClusterMatrix(relabel_rows(raw))


def rand_index(a, b) -> float:
    """Fraction of element pairs on which two partitions agree."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError(f"label vectors must be 1-d and equal length, got {a.shape}, {b.shape}")
    n = a.size
    if n < 2:
        return 1.0
    iu = np.triu_indices(n, k=1)
    same_a = a[iu[0]] == a[iu[1]]
    same_b = b[iu[0]] == b[iu[1]]
    return float(np.mean(same_a == same_b))


def row_rand_indices(a: ClusterMatrix, b) -> np.ndarray:
    lb = b.labels if isinstance(b, ClusterMatrix) else np.asarray(b)
    return np.array([rand_index(x, y) for x, y in zip(a.labels, lb)])


# --- SVG -------------------------------------------------------------------------

def _palette(k: int) -> list[str]:
    base = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
            "#8c564b", "#e377c2", "#bcbd22", "#17becf", "#7f7f7f"]
    if k <= len(base):
        return base[:k]
    out = list(base)
    for i in range(k - len(base)):
        h = (i * 0.618033988749895) % 1.0
        r, g, b = colorsys.hsv_to_rgb(h, 0.55, 0.9)
        out.append(f"#{int(r * 255):02x}{int(g * 255):02x}{int(b * 255):02x}")
    return out


def _diverging(v: float, vmax: float) -> str:
    # black at zero, brighter red for positive and blue for negative
    x = 0.0 if vmax == 0 else min(abs(v) / vmax, 1.0)
    lvl = int(round(255 * x))
    return f"#{lvl:02x}0000" if v > 0 else f"#0000{lvl:02x}" if v < 0 else "#000000"


def heatmap_svg(matrix, path, cell: int = 14, title: str | None = None) -> Path:
    """Write a D x T grid (rows = features, columns = tasks) as SVG.

    A :class:`ClusterMatrix` is colored per row from a fixed palette, so
    colors on different rows are unrelated.  A real matrix uses a
    symmetric diverging scale with black at zero.
    """
    path = Path(path)
    if isinstance(matrix, ClusterMatrix):
        data = matrix.labels
        pal = _palette(int(data.max()) + 1 if data.size else 1)
        color = lambda v: pal[int(v)]  # noqa: E731
    else:
        data = np.atleast_2d(np.asarray(matrix, dtype=float))
        vmax = float(np.abs(data).max()) if data.size else 0.0
        color = lambda v: _diverging(float(v), vmax)  # noqa: E731
    D, T = data.shape
    top = 18 if title else 0
    svg = ET.Element("svg", xmlns="http://www.w3.org/2000/svg", version="1.1",
                     width=str(T * cell), height=str(D * cell + top))
    if title:
        t = ET.SubElement(svg, "text", x="2", y="13", style="font: 11px sans-serif")
        t.text = title
    for d in range(D):
        for j in range(T):
            ET.SubElement(svg, "rect", {
                "class": "cell", "x": str(j * cell), "y": str(top + d * cell),
                "width": str(cell), "height": str(cell), "fill": color(data[d, j]),
                "data-feature": str(d), "data-task": str(j),
            })
    try:
        ET.ElementTree(svg).write(path, encoding="utf-8", xml_declaration=True)
    except OSError as exc:
        raise OSError(f"cannot write heatmap to {path}: {exc}") from exc
    return path
