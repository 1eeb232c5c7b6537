"""Cube and mask data model, BSQ storage and the synthetic scene generator."""

from __future__ import annotations

import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import ArgumentError, DataError, FormatError

CUBE_DTYPE = np.dtype("<f4")
MASK_DTYPE = np.dtype("u1")


@dataclass(frozen=True, eq=False)
class HsiCube:
    """H x W x C radiance cube. ``data`` is stored as float32."""

    data: np.ndarray
    name: str = "cube"

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float32)
        if data.ndim != 3:
            raise DataError(f"cube data must be 3-D (H, W, C), got shape {data.shape}")
        h, w, c = data.shape
        if h * w < 1 or c < 2:
            raise DataError(f"cube needs at least one pixel and two bands, got {data.shape}")
        if not np.all(np.isfinite(data)):
            raise DataError(f"cube {self.name!r} contains non-finite values")
        data.setflags(write=False)
        object.__setattr__(self, "data", data)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def bands(self) -> int:
        return self.data.shape[2]

    @property
    def shape(self):
        return self.data.shape

    def pixels(self) -> np.ndarray:
        """Row-major (H*W, C) view of the spectra."""
        return self.data.reshape(-1, self.bands)

    def normalize(self) -> HsiCube:
        """Per-cube min-max scaling to [0, 1]; a constant cube maps to zeros."""
        d = self.data.astype(np.float64)
        lo, hi = d.min(), d.max()
        if hi > lo:
            d = (d - lo) / (hi - lo)
        else:
            d = np.zeros_like(d)
        return HsiCube(np.clip(d, 0.0, 1.0).astype(np.float32), self.name)


@dataclass(frozen=True, eq=False)
class GroundTruthMask:
    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2:
            raise DataError(f"mask must be 2-D, got shape {labels.shape}")
        if not np.isin(labels, (0, 1)).all():
            raise DataError("mask values must be 0 or 1")
        labels = labels.astype(np.uint8)
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    def matches(self, cube: HsiCube) -> bool:
        return self.labels.shape == cube.data.shape[:2]


# ---------------------------------------------------------------- storage


def _paths(path) -> tuple[Path, Path]:
    """Return (payload, sidecar) for either member of the pair."""
    path = Path(path)
    if path.suffix == ".json":
        header = path
        matches = [p for p in (path.with_suffix(".bsq"), path.with_suffix(".mask")) if p.exists()]
        payload = matches[0] if matches else path.with_suffix(".bsq")
        return payload, header
    return path, path.with_suffix(".json")


def _read_header(header: Path) -> dict:
    try:
        meta = json.loads(header.read_text())
    except FileNotFoundError:
        raise FormatError(f"missing sidecar header {header}") from None
    except json.JSONDecodeError as exc:
        raise FormatError(f"unreadable header {header}: {exc}") from None
    for key in ("width", "height", "bands"):
        if not isinstance(meta.get(key), int) or meta[key] < 1:
            raise FormatError(f"header {header} has invalid {key!r}: {meta.get(key)!r}")
    return meta


def _read_payload(payload: Path, meta: dict, dtype: np.dtype) -> np.ndarray:
    try:
        raw = payload.read_bytes()
    except FileNotFoundError:
        raise FormatError(f"missing payload {payload}") from None
    expected = meta["width"] * meta["height"] * meta["bands"] * dtype.itemsize
    if len(raw) != expected:
        raise FormatError(f"{payload}: header declares {expected} bytes, payload has {len(raw)}")
    return np.frombuffer(raw, dtype=dtype)


def save_cube(cube: HsiCube, path) -> Path:
    """Write ``cube`` as BSQ float32 little-endian plus JSON sidecar. Returns the payload path."""
    payload, header = _paths(path)
    if payload.suffix != ".bsq":
        payload = payload.with_suffix(".bsq")
    payload.parent.mkdir(parents=True, exist_ok=True)
    bsq = np.ascontiguousarray(np.transpose(cube.data, (2, 0, 1)), dtype=CUBE_DTYPE)
    payload.write_bytes(bsq.tobytes())
    meta = {
        "width": cube.width,
        "height": cube.height,
        "bands": cube.bands,
        "dtype": "f32le",
        "order": "bsq",
        "name": cube.name,
    }
    header.write_text(json.dumps(meta, indent=2) + "\n")
    return payload


def load_cube(path, normalize: bool = False) -> HsiCube:
    """Read a cube written by :func:`save_cube`. ``path`` may name the payload or the sidecar."""
    payload, header = _paths(path)
    meta = _read_header(header)
    if meta.get("dtype", "f32le") != "f32le" or meta.get("order", "bsq") != "bsq":
        raise FormatError(f"{header}: unsupported dtype/order {meta.get('dtype')}/{meta.get('order')}")
    flat = _read_payload(payload, meta, CUBE_DTYPE)
    data = flat.reshape(meta["bands"], meta["height"], meta["width"]).transpose(1, 2, 0)
    if not np.all(np.isfinite(data)):
        raise DataError(f"{payload} contains non-finite values")
    cube = HsiCube(data.astype(np.float32), meta.get("name", payload.stem))
    return cube.normalize() if normalize else cube


def save_mask(mask: GroundTruthMask, path, name: str = "mask") -> Path:
    payload, header = _paths(path)
    if payload.suffix != ".mask":
        payload = payload.with_suffix(".mask")
    payload.parent.mkdir(parents=True, exist_ok=True)
    payload.write_bytes(np.ascontiguousarray(mask.labels, dtype=MASK_DTYPE).tobytes())
    meta = {
        "width": mask.width,
        "height": mask.height,
        "bands": 1,
        "dtype": "u8",
        "order": "bsq",
        "name": name,
    }
    header.write_text(json.dumps(meta, indent=2) + "\n")
    return payload


def load_mask(path) -> GroundTruthMask:
    payload, header = _paths(path)
    if payload.suffix != ".mask":
        payload = payload.with_suffix(".mask")
    meta = _read_header(header)
    if meta["bands"] != 1:
        raise FormatError(f"{header}: masks must declare bands=1")
    flat = _read_payload(payload, meta, MASK_DTYPE)
    return GroundTruthMask(flat.reshape(meta["height"], meta["width"]).copy())


def mask_path_for(cube_path) -> Path:
    """Conventional location of the ground-truth mask paired with a cube."""
    payload, _ = _paths(cube_path)
    return payload.with_name(payload.stem + "_gt.mask")


# ---------------------------------------------------------------- band alignment


def resample_bands(cube: HsiCube, target_bands: int) -> HsiCube:
    """Linearly interpolate every spectrum onto ``target_bands`` evenly spaced samples."""
    if target_bands < 2:
        raise ArgumentError(f"target_bands must be >= 2, got {target_bands}")
    if target_bands > cube.bands:
        raise ArgumentError(f"cannot upsample {cube.bands} bands to {target_bands}")
    if target_bands == cube.bands:
        return cube
    pos = np.arange(target_bands) * (cube.bands - 1) / (target_bands - 1)
    lo = np.minimum(np.floor(pos).astype(int), cube.bands - 2)
    frac = pos - lo
    d = cube.data.astype(np.float64)
    out = d[..., lo] * (1.0 - frac) + d[..., lo + 1] * frac
    return HsiCube(out.astype(np.float32), cube.name)


# ---------------------------------------------------------------- synthetic scenes


@dataclass(frozen=True)
class SceneSpec:
    size: int = 64
    bands: int = 64
    n_endmembers: int = 3
    anomaly_fraction: float = 0.01
    noise_sigma: float = 0.003
    seed: int = 0
    name: str = "synthetic"

    def __post_init__(self):
        if self.size < 8:
            raise ArgumentError(f"size must be >= 8, got {self.size}")
        if self.bands < 2:
            raise ArgumentError(f"bands must be >= 2, got {self.bands}")
        if self.n_endmembers < 1:
            raise ArgumentError("n_endmembers must be >= 1")
        if not 0.0 < self.anomaly_fraction <= 0.05:
            raise ArgumentError(f"anomaly_fraction must lie in (0, 0.05], got {self.anomaly_fraction}")
        if self.noise_sigma < 0:
            raise ArgumentError("noise_sigma must be >= 0")

    @property
    def n_anomalies(self) -> int:
        return max(1, round(self.anomaly_fraction * self.size * self.size))


def _smooth_spectrum(rng: np.random.Generator, wl: np.ndarray, n_bumps: int) -> np.ndarray:
    s = rng.uniform(0.15, 0.35) + rng.uniform(-0.15, 0.15) * wl
    for _ in range(n_bumps):
        center = rng.uniform(-0.1, 1.1)
        width = rng.uniform(0.06, 0.25)
        s = s + rng.uniform(-0.3, 0.5) * np.exp(-0.5 * ((wl - center) / width) ** 2)
    return np.clip(s, 0.02, None)


def _abundances(rng: np.random.Generator, size: int, k: int) -> np.ndarray:
    fields = rng.normal(size=(k, size, size))
    fields = np.stack([gaussian_filter(f, sigma=size / 10, mode="wrap") for f in fields])
    fields /= fields.std(axis=(1, 2), keepdims=True) + 1e-12
    logits = 1.5 * fields
    e = np.exp(logits - logits.max(axis=0, keepdims=True))
    return np.transpose(e / e.sum(axis=0), (1, 2, 0))


def _anomaly_sites(rng: np.random.Generator, size: int, count: int) -> list[tuple[int, int]]:
    # isolated single pixels, at least 3 apart so no background pixel sees two anomalies
    sites: list[tuple[int, int]] = []
    taken = np.zeros((size, size), dtype=bool)
    order = rng.permutation(size * size)
    for flat in order:
        r, c = divmod(int(flat), size)
        if r < 1 or c < 1 or r >= size - 1 or c >= size - 1 or taken[r, c]:
            continue
        sites.append((r, c))
        taken[max(r - 2, 0): r + 3, max(c - 2, 0): c + 3] = True
        if len(sites) == count:
            return sites
    raise ArgumentError(f"cannot place {count} isolated anomalies in a {size}x{size} scene")


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def synth_scene(spec: SceneSpec) -> tuple[HsiCube, GroundTruthMask]:
    """Deterministic scene: smooth endmember mixtures plus isolated sub-pixel anomalies."""
    rng = np.random.default_rng(spec.seed)
    wl = np.linspace(0.0, 1.0, spec.bands)
    endmembers = np.stack([_smooth_spectrum(rng, wl, 3) for _ in range(spec.n_endmembers)])
    abund = _abundances(rng, spec.size, spec.n_endmembers)
    background = abund @ endmembers
    bg_mean = background.reshape(-1, spec.bands).mean(axis=0)

    # redraw the target signature until it is spectrally distinct from the background
    for _ in range(1000):
        signature = _smooth_spectrum(rng, wl, 4)
        if _cosine(signature, bg_mean) < 0.9 and all(_cosine(signature, e) < 0.95 for e in endmembers):
            break
    else:  # pragma: no cover - practically unreachable
        raise DataError("could not draw a distinct anomaly signature")

    scene = background.copy()
    labels = np.zeros((spec.size, spec.size), dtype=np.uint8)
    for r, c in _anomaly_sites(rng, spec.size, spec.n_anomalies):
        fill = rng.uniform(0.5, 0.8)
        scene[r, c] = (1.0 - fill) * background[r, c] + fill * signature * rng.uniform(0.9, 1.1)
        labels[r, c] = 1
    scene = scene + rng.normal(scale=spec.noise_sigma, size=scene.shape)
    cube = HsiCube(np.clip(scene, 0.0, None).astype(np.float32), spec.name).normalize()

    pix = cube.pixels().astype(np.float64)
    flat = labels.ravel().astype(bool)
    if _cosine(pix[flat].mean(axis=0), pix[~flat].mean(axis=0)) >= 0.99:
        raise DataError("generated anomalies are not spectrally separable from the background")
    return cube, GroundTruthMask(labels)


def synth_stream(n_tasks: int, spec: SceneSpec = SceneSpec()) -> list[tuple[HsiCube, GroundTruthMask]]:
    """``n_tasks`` scenes with independently drawn endmembers, one seed per task."""
    if n_tasks < 1:
        raise ArgumentError(f"need at least one task, got {n_tasks}")
    return [synth_scene(replace(spec, seed=spec.seed * 1000 + t, name=f"{spec.name}{t:02d}"))
            for t in range(1, n_tasks + 1)]
