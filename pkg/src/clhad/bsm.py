"""Background selection: spectral similarity thresholding plus window-mean concatenation."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import ArgumentError, FormatError, SelectionError, SimilarityError
from .hsi_io import CUBE_DTYPE, HsiCube

DEFAULT_MU = 0.99
DEFAULT_WINDOW = 3


@dataclass(frozen=True, eq=False)
class BackgroundSet:
    vectors: np.ndarray  # (n_b, 2C) float32
    indices: np.ndarray  # linear pixel indices, row-major
    source_task: str = ""
    threshold_used: float = DEFAULT_MU
    window: int = DEFAULT_WINDOW

    def __post_init__(self):
        vectors = np.asarray(self.vectors, dtype=np.float32)
        indices = np.asarray(self.indices, dtype=np.int64)
        if vectors.ndim != 2 or vectors.shape[0] < 1:
            raise SelectionError(f"background set needs at least one row, got shape {vectors.shape}")
        if vectors.shape[0] != indices.shape[0]:
            raise SelectionError("vectors and indices disagree in length")
        if np.unique(indices).size != indices.size:
            raise SelectionError("background indices must be unique")
        object.__setattr__(self, "vectors", vectors)
        object.__setattr__(self, "indices", indices)

    def __len__(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


def sam_similarity(a, b) -> float:
    """Cosine form of the spectral angle mapper (no arccos)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ArgumentError(f"spectra differ in length: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise SimilarityError("zero-norm spectrum (dead pixel)")
    return float(np.clip(a @ b / (na * nb), -1.0, 1.0))


def _check_window(w: int):
    if w < 1 or w % 2 == 0:
        raise ArgumentError(f"window must be a positive odd integer, got {w}")


def window_sums(cube: HsiCube, w: int = DEFAULT_WINDOW) -> np.ndarray:
    """Sum of the w x w neighbourhood (centre included) with replicate padding, float64.

    Terms are accumulated in raster order of the window so that
    :func:`ssns_augment` reproduces each entry exactly.
    """
    _check_window(w)
    r = w // 2
    d = cube.data.astype(np.float64)
    padded = np.pad(d, ((r, r), (r, r), (0, 0)), mode="edge")
    h, wd = cube.height, cube.width
    acc = np.zeros_like(d)
    for dy in range(w):
        for dx in range(w):
            acc += padded[dy:dy + h, dx:dx + wd]
    return acc


def ssns_augment(cube: HsiCube, i: int, w: int = DEFAULT_WINDOW) -> np.ndarray:
    """Concatenate pixel ``i`` with its w x w replicate-padded window mean (length 2C)."""
    _check_window(w)
    row, col = divmod(int(i), cube.width)
    if not 0 <= row < cube.height:
        raise ArgumentError(f"pixel index {i} outside a {cube.height}x{cube.width} cube")
    r = w // 2
    d = cube.data.astype(np.float64)
    acc = np.zeros(cube.bands)
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            y = min(max(row + dy, 0), cube.height - 1)
            x = min(max(col + dx, 0), cube.width - 1)
            acc += d[y, x]
    mean = acc / (w * w)
    return np.concatenate([d[row, col], mean]).astype(np.float32)


def ssns_all(cube: HsiCube, w: int = DEFAULT_WINDOW) -> np.ndarray:
    """SSNS vectors for every pixel, (H*W, 2C) float32, row-major pixel order."""
    mean = window_sums(cube, w) / (w * w)
    d = cube.data.astype(np.float64)
    out = np.concatenate([d, mean], axis=2).astype(np.float32)
    return out.reshape(-1, 2 * cube.bands)


def neighbour_similarity(cube: HsiCube, w: int = DEFAULT_WINDOW) -> np.ndarray:
    """Per-pixel cosine similarity to the mean of its neighbours (centre excluded).

    Dead pixels, or pixels whose neighbour mean has zero norm, get NaN.
    """
    _check_window(w)
    if w < 3:
        raise ArgumentError("window must be >= 3 to have neighbours")
    d = cube.data.astype(np.float64)
    neigh = (window_sums(cube, w) - d) / (w * w - 1)
    dot = np.einsum("hwc,hwc->hw", d, neigh)
    norms = np.linalg.norm(d, axis=2) * np.linalg.norm(neigh, axis=2)
    with np.errstate(invalid="ignore", divide="ignore"):
        sim = np.where(norms > 0, dot / norms, np.nan)
    return sim.ravel()


def select_background(cube: HsiCube, mu: float = DEFAULT_MU, w: int = DEFAULT_WINDOW):
    """Return (selection vector s, BackgroundSet). ``s[i] == 0`` marks background."""
    if not 0.0 < mu <= 1.0:
        raise ArgumentError(f"mu must lie in (0, 1], got {mu}")
    sim = neighbour_similarity(cube, w)
    keep = np.nan_to_num(sim, nan=-np.inf) >= mu
    s = (~keep).astype(np.uint8)
    idx = np.flatnonzero(keep)
    if idx.size == 0:
        raise SelectionError(f"no pixel of {cube.name!r} reaches similarity {mu}; lower mu")
    vectors = ssns_all(cube, w)[idx]
    return s, BackgroundSet(vectors, idx, cube.name, float(mu), int(w))


def save_background(bs: BackgroundSet, path) -> Path:
    path = Path(path).with_suffix(".bsq")
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(np.ascontiguousarray(bs.vectors, dtype=CUBE_DTYPE).tobytes())
    meta = {
        "rows": len(bs),
        "cols": bs.dim,
        "indices": bs.indices.tolist(),
        "mu": bs.threshold_used,
        "w": bs.window,
        "task": bs.source_task,
    }
    path.with_suffix(".json").write_text(json.dumps(meta) + "\n")
    return path


def load_background(path) -> BackgroundSet:
    path = Path(path).with_suffix(".bsq")
    meta = json.loads(path.with_suffix(".json").read_text())
    raw = path.read_bytes()
    if len(raw) != meta["rows"] * meta["cols"] * 4:
        raise FormatError(f"{path}: payload size does not match {meta['rows']}x{meta['cols']}")
    vectors = np.frombuffer(raw, dtype=CUBE_DTYPE).reshape(meta["rows"], meta["cols"])
    return BackgroundSet(vectors.copy(), meta["indices"], meta["task"], meta["mu"], meta["w"])
