"""Anomaly scoring, 3-D ROC triplet and the continual ACC/BWT/FWT metrics."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bsm import DEFAULT_WINDOW, ssns_all
from .errors import MetricError, ShapeError
from .hsi_io import GroundTruthMask, HsiCube, _paths, _read_header, _read_payload


@dataclass
class AnomalyMap:
    """Raw per-pixel squared reconstruction error plus its min-max record."""

    scores: np.ndarray  # (H, W) float64, >= 0
    lo: float = field(init=False)
    hi: float = field(init=False)

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.ndim != 2:
            raise ShapeError(f"anomaly map must be 2-D, got {self.scores.shape}")
        if not np.all(np.isfinite(self.scores)):
            raise MetricError("anomaly scores must be finite")
        self.lo, self.hi = float(self.scores.min()), float(self.scores.max())

    @property
    def normalized(self) -> np.ndarray:
        if self.hi > self.lo:
            return (self.scores - self.lo) / (self.hi - self.lo)
        return np.zeros_like(self.scores)


def save_anomaly_map(amap: AnomalyMap, path, name: str = "anomaly_map") -> Path:
    """Write the normalised map as a single-band BSQ float32 file; the sidecar keeps the raw range."""
    payload, header = _paths(path)
    if payload.suffix != ".bsq":
        payload = payload.with_suffix(".bsq")
    payload.parent.mkdir(parents=True, exist_ok=True)
    payload.write_bytes(np.ascontiguousarray(amap.normalized, dtype="<f4").tobytes())
    h, w = amap.scores.shape
    meta = {"width": w, "height": h, "bands": 1, "dtype": "f32le", "order": "bsq",
            "name": name, "score_min": amap.lo, "score_max": amap.hi}
    header.write_text(json.dumps(meta, indent=2) + "\n")
    return payload


def load_anomaly_map(path) -> np.ndarray:
    """Normalised (H, W) scores from :func:`save_anomaly_map`."""
    payload, header = _paths(path)
    meta = _read_header(header)
    if meta["bands"] != 1:
        raise ShapeError(f"{header}: anomaly maps are single-band")
    flat = _read_payload(payload, meta, np.dtype("<f4"))
    return flat.reshape(meta["height"], meta["width"]).astype(np.float64)


def reconstruction_scores(vectors: np.ndarray, reconstructed: np.ndarray) -> np.ndarray:
    diff = np.asarray(reconstructed, dtype=np.float64) - np.asarray(vectors, dtype=np.float64)
    return (diff ** 2).sum(axis=1)


def anomaly_map(cube: HsiCube, state, w: int = DEFAULT_WINDOW, batch: int = 8192) -> AnomalyMap:
    """Squared L2 distance between each pixel's SSNS vector and its reconstruction."""
    if 2 * cube.bands != state.input_dim:
        raise ShapeError(f"cube has {cube.bands} bands; model expects {state.input_dim // 2}")
    vectors = ssns_all(cube, w)
    rec = np.concatenate([state.reconstruct(vectors[i:i + batch])
                          for i in range(0, len(vectors), batch)])
    return AnomalyMap(reconstruction_scores(vectors, rec).reshape(cube.height, cube.width))


@dataclass
class RocTriplet:
    tau: np.ndarray  # descending thresholds
    pd: np.ndarray
    pf: np.ndarray
    auc_df: float
    auc_dtau: float
    auc_ftau: float

    @property
    def auc_bs(self) -> float:
        return auc_bs(self)

    def summary(self) -> dict:
        return {"auc_df": self.auc_df, "auc_dtau": self.auc_dtau,
                "auc_ftau": self.auc_ftau, "auc_bs": self.auc_bs}


def roc_triplet(amap, gt) -> RocTriplet:
    """Exact ROC over every distinct normalised score plus {0, 1}; detection is score >= tau.

    ``amap`` is an AnomalyMap or an array of normalised scores; ``gt`` a mask
    or label array of the same shape.
    """
    scores = amap.normalized if isinstance(amap, AnomalyMap) else np.asarray(amap, dtype=np.float64)
    labels = gt.labels if isinstance(gt, GroundTruthMask) else np.asarray(gt)
    if scores.shape != labels.shape:
        raise ShapeError(f"map {scores.shape} and mask {labels.shape} differ")
    s = scores.ravel()
    y = labels.ravel().astype(bool)
    n_pos, n_neg = int(y.sum()), int((~y).sum())
    if n_pos == 0 or n_neg == 0:
        raise MetricError("ground truth needs at least one anomaly and one background pixel")
    tau = np.unique(np.concatenate([s, [0.0, 1.0]]))[::-1]
    pos, neg = np.sort(s[y]), np.sort(s[~y])
    pd = (n_pos - np.searchsorted(pos, tau, side="left")) / n_pos
    pf = (n_neg - np.searchsorted(neg, tau, side="left")) / n_neg
    # tau = +inf adds the origin so the (P_F, P_D) curve spans [0, 1]
    auc_df = float(np.trapezoid(np.r_[0.0, pd], np.r_[0.0, pf]))
    auc_dtau = float(np.trapezoid(pd[::-1], tau[::-1]))
    auc_ftau = float(np.trapezoid(pf[::-1], tau[::-1]))
    return RocTriplet(tau, pd, pf, auc_df, auc_dtau, auc_ftau)


def auc_bs(triplet) -> float:
    """Background-suppression score AUC_(D,F) - AUC_(F,tau); may be negative."""
    if isinstance(triplet, RocTriplet):
        return triplet.auc_df - triplet.auc_ftau
    auc_df, auc_ftau = triplet
    return auc_df - auc_ftau


def write_roc_csv(triplet: RocTriplet, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tau", "pd", "pf"])
        for t, d, f in zip(triplet.tau, triplet.pd, triplet.pf):
            writer.writerow([repr(float(t)), repr(float(d)), repr(float(f))])
    return path


# ---------------------------------------------------------------- continual metrics


@dataclass
class AucMatrix:
    """rows[j][i]: AUC_(D,F) of task i after training task j (0-based, i <= j).

    ``reference[i]`` is the independently trained AUC* of task i (may be None).
    """

    rows: list[list[float]]
    reference: list[float | None] | None = None

    def __post_init__(self):
        for j, row in enumerate(self.rows):
            if len(row) < j + 1:
                raise MetricError(f"row {j} needs {j + 1} entries, got {len(row)}")
            for v in row[: j + 1]:
                if not 0.0 <= v <= 1.0:
                    raise MetricError(f"AUC entry {v} outside [0, 1]")

    @property
    def n_tasks(self) -> int:
        return len(self.rows)

    def to_json(self) -> dict:
        return {"matrix": self.rows, "reference": self.reference}

    @classmethod
    def from_json(cls, obj) -> AucMatrix:
        if isinstance(obj, list):
            return cls(obj)
        return cls(obj["matrix"], obj.get("reference"))


@dataclass
class ContinualMetrics:
    acc: float
    bwt: float | None
    fwt: float | None


def continual_metrics(matrix: AucMatrix, bwt_variant: str = "previous") -> ContinualMetrics:
    """ACC over the final row; BWT against the previous checkpoint row
    (``bwt_variant="diagonal"`` compares with each task's own checkpoint);
    FWT against the reference AUCs when present."""
    T = matrix.n_tasks
    if T == 0:
        raise MetricError("empty AUC matrix")
    last = np.asarray(matrix.rows[T - 1][:T], dtype=np.float64)
    acc = float(last.mean())
    if T == 1:
        return ContinualMetrics(acc, None, None)
    if bwt_variant == "previous":
        prev = np.asarray(matrix.rows[T - 2][: T - 1], dtype=np.float64)
    elif bwt_variant == "diagonal":
        prev = np.array([matrix.rows[i][i] for i in range(T - 1)], dtype=np.float64)
    else:
        raise ValueError(f"unknown bwt_variant {bwt_variant!r}")
    bwt = float((last[: T - 1] - prev).mean())
    fwt = None
    ref = matrix.reference
    if ref is not None and len(ref) >= T and all(r is not None for r in ref[1:T]):
        fwt = float(np.mean([last[i] - ref[i] for i in range(1, T)]))
    return ContinualMetrics(acc, bwt, fwt)


def eval_report(triplets: dict[str, RocTriplet], matrix: AucMatrix | None = None,
                config_hash: str | None = None) -> dict:
    """Assemble the EvalReport document."""
    report = {"tasks": [{"name": name, **t.summary()} for name, t in triplets.items()]}
    if matrix is not None:
        m = continual_metrics(matrix)
        report.update(auc_matrix=matrix.to_json(), acc=m.acc, bwt=m.bwt, fwt=m.fwt)
    else:
        report.update(auc_matrix=None, acc=None, bwt=None, fwt=None)
    report["config_hash"] = config_hash
    return report


def write_report(report: dict, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, indent=2, sort_keys=True) + "\n")
    return path
