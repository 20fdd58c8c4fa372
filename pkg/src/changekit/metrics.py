"""Change-map scoring, natural-corruption generation, and robustness summaries.

Scores are micro-averaged: confusion counts accumulate over every evaluated
pixel. Empty-denominator conventions keep no-change frames well defined:
precision with tp+fp = 0 is 1 when fn = 0 and 0 otherwise, recall with
tp+fn = 0 is 1, and F1 of two all-negative masks is 1.

Seven corruption kinds are implemented (noise, blur, and digital families);
each has a five-level severity table that is strictly monotone in its
distortion parameter. The mean performance under corruption averages the
full kinds x severities grid, and its ratio to the clean score measures
relative degradation.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .rand import stream
from .tensor import ShapeError, bilinear_matrix

N_SEVERITIES = 5

CORRUPTION_KINDS = (
    "gaussian_noise",
    "shot_noise",
    "impulse_noise",
    "gaussian_blur",
    "brightness",
    "contrast",
    "pixelate",
)

# severity -> distortion parameter; see _apply_corruption for each meaning
DEFAULT_SEVERITY_TABLES: dict[str, tuple] = {
    "gaussian_noise": (0.04, 0.08, 0.12, 0.18, 0.26),     # additive sigma
    "shot_noise": (0.002, 0.004, 0.008, 0.017, 0.04),     # inverse event rate
    "impulse_noise": (0.02, 0.04, 0.07, 0.11, 0.17),      # salt/pepper fraction
    "gaussian_blur": (0.4, 0.6, 0.9, 1.4, 2.0),           # blur sigma
    "brightness": (0.05, 0.10, 0.15, 0.20, 0.30),         # additive delta
    "contrast": (0.75, 0.6, 0.45, 0.3, 0.2),              # remaining contrast factor
    "pixelate": (0.8, 0.65, 0.5, 0.4, 0.3),               # downscale factor
}

NEUTRAL_PARAMS: dict[str, float] = {
    "gaussian_noise": 0.0,
    "shot_noise": 0.0,
    "impulse_noise": 0.0,
    "gaussian_blur": 0.0,
    "brightness": 0.0,
    "contrast": 1.0,
    "pixelate": 1.0,
}


def neutral_severity_tables() -> dict[str, tuple]:
    """Tables whose every severity is the identity transform (for calibration tests)."""
    return {k: (NEUTRAL_PARAMS[k],) * N_SEVERITIES for k in CORRUPTION_KINDS}


@dataclass(frozen=True)
class CorruptionSpec:
    kind: str
    severity: int
    param: float

    @classmethod
    def from_table(cls, kind: str, severity: int, tables: dict | None = None) -> "CorruptionSpec":
        tables = tables or DEFAULT_SEVERITY_TABLES
        if kind not in CORRUPTION_KINDS:
            raise ValueError(f"unknown corruption kind {kind!r}")
        if not 1 <= severity <= N_SEVERITIES:
            raise ValueError(f"severity must be 1..{N_SEVERITIES}, got {severity}")
        return cls(kind=kind, severity=severity, param=float(tables[kind][severity - 1]))


def corrupt(image: np.ndarray, spec: CorruptionSpec, seed: int, image_id: str = "") -> np.ndarray:
    """Apply one corruption to a (3,h,w) image in [0,1].

    Stochastic kinds draw from a stream keyed by
    (seed, image id, kind, severity), so grid evaluation order is irrelevant.
    """
    if image.ndim != 3 or image.shape[0] != 3:
        raise ShapeError(f"corrupt: expected a (3,h,w) image, got {image.shape}")
    if image.min() < 0.0 or image.max() > 1.0:
        raise ValueError("corrupt: pixel values must lie in [0,1]")
    if spec.kind not in CORRUPTION_KINDS:
        raise ValueError(f"unknown corruption kind {spec.kind!r}")
    rng = stream(seed, image_id, spec.kind, spec.severity)
    out = _apply_corruption(np.asarray(image, dtype=np.float32), spec, rng)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def _apply_corruption(img: np.ndarray, spec: CorruptionSpec, rng) -> np.ndarray:
    p = spec.param
    if spec.kind == "gaussian_noise":
        if p == 0.0:
            return img
        return img + rng.normal(0.0, p, size=img.shape)
    if spec.kind == "shot_noise":
        if p == 0.0:
            return img
        rate = 1.0 / p
        return rng.poisson(img * rate) / rate
    if spec.kind == "impulse_noise":
        if p == 0.0:
            return img
        u = rng.random(img.shape[1:])
        salt = u < p / 2
        pepper = (u >= p / 2) & (u < p)
        out = img.copy()
        out[:, salt] = 1.0
        out[:, pepper] = 0.0
        return out
    if spec.kind == "gaussian_blur":
        if p == 0.0:
            return img
        return np.stack([ndimage.gaussian_filter(ch, sigma=p, mode="nearest") for ch in img])
    if spec.kind == "brightness":
        return img + p
    if spec.kind == "contrast":
        mean = img.mean()
        return mean + (img - mean) * p
    # pixelate: box-ish downscale then bilinear upscale back
    if p == 1.0:
        return img
    h, w = img.shape[1:]
    dh, dw = max(1, int(round(h * p))), max(1, int(round(w * p)))
    down_r, down_c = bilinear_matrix(dh, h), bilinear_matrix(dw, w)
    up_r, up_c = bilinear_matrix(h, dh), bilinear_matrix(w, dw)
    small = np.einsum("oh,chw,pw->cop", down_r, img.astype(np.float64), down_c)
    return np.einsum("oh,chw,pw->cop", up_r, small, up_c).astype(np.float32)


# -- scoring -------------------------------------------------------------------


@dataclass
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def add(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(
            self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn
        )

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn


def sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def binarize(values: np.ndarray, threshold: float = 0.5, logits: bool = False) -> np.ndarray:
    """Probabilities (or logits) to a {0,1} mask; strictly greater than the threshold."""
    probs = sigmoid(values) if logits else np.asarray(values)
    if not logits and (probs.min() < 0.0 or probs.max() > 1.0):
        raise ValueError("binarize: probabilities must lie in [0,1]; pass logits=True for logits")
    return (probs > threshold).astype(np.uint8)


def confusion(pred: np.ndarray, gt: np.ndarray) -> ConfusionCounts:
    if pred.shape != gt.shape:
        raise ShapeError(f"confusion: shapes {pred.shape} vs {gt.shape}")
    p = pred.astype(bool)
    g = gt.astype(bool)
    return ConfusionCounts(
        tp=int(np.sum(p & g)),
        fp=int(np.sum(p & ~g)),
        tn=int(np.sum(~p & ~g)),
        fn=int(np.sum(~p & g)),
    )


def precision_recall_f1(counts: ConfusionCounts) -> tuple[float, float, float]:
    if counts.tp + counts.fp == 0:
        precision = 1.0 if counts.fn == 0 else 0.0
    else:
        precision = counts.tp / (counts.tp + counts.fp)
    recall = 1.0 if counts.tp + counts.fn == 0 else counts.tp / (counts.tp + counts.fn)
    if precision + recall == 0:
        return precision, recall, 0.0
    return precision, recall, 2.0 * recall * precision / (recall + precision)


def score(pred: np.ndarray, gt: np.ndarray) -> tuple[ConfusionCounts, tuple[float, float, float]]:
    counts = confusion(pred, gt)
    return counts, precision_recall_f1(counts)


def pixel_diff_baseline(t0: np.ndarray, t1: np.ndarray, threshold: float = 0.5) -> np.ndarray:
    """Classical baseline: channel-mean absolute difference thresholded per pixel."""
    if t0.shape != t1.shape:
        raise ShapeError(f"pixel_diff_baseline: shapes {t0.shape} vs {t1.shape}")
    diff = np.abs(t0.astype(np.float64) - t1.astype(np.float64)).mean(axis=0)
    return (diff > threshold).astype(np.uint8)[None]


# -- robustness aggregation ------------------------------------------------------


def mpc(grid: dict[tuple[str, int], float], kinds=CORRUPTION_KINDS, n_severities=N_SEVERITIES) -> float:
    """Mean over the complete corruption x severity grid; missing cells are errors."""
    total = 0.0
    for kind in kinds:
        for s in range(1, n_severities + 1):
            if (kind, s) not in grid:
                raise KeyError(f"corruption grid is missing cell ({kind}, {s})")
            total += grid[(kind, s)]
    return total / (len(kinds) * n_severities)


def rpc(mpc_value: float, p_clean: float) -> float:
    if p_clean <= 0:
        raise ValueError(f"rpc undefined for clean score {p_clean}")
    return mpc_value / p_clean


@dataclass
class EvalReport:
    precision: float
    recall: float
    f1: float
    counts: ConfusionCounts
    metadata: dict = field(default_factory=dict)
    corruption_grid: dict = field(default_factory=dict)  # (kind, severity) -> f1
    mpc: float | None = None
    rpc: float | None = None

    @property
    def p_clean(self) -> float:
        return self.f1

    def to_dict(self) -> dict:
        doc = {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "f1_percent": round(100.0 * self.f1, 4),
            "counts": {
                "tp": self.counts.tp, "fp": self.counts.fp,
                "tn": self.counts.tn, "fn": self.counts.fn,
            },
            "metadata": self.metadata,
        }
        if self.corruption_grid:
            doc["corruption_grid"] = {
                f"{kind}:{sev}": value for (kind, sev), value in sorted(self.corruption_grid.items())
            }
            doc["mpc"] = self.mpc
            doc["rpc"] = self.rpc
        return doc

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=1) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        doc = json.loads(text)
        grid = {}
        for key, value in doc.get("corruption_grid", {}).items():
            kind, sev = key.rsplit(":", 1)
            grid[(kind, int(sev))] = value
        c = doc["counts"]
        return cls(
            precision=doc["precision"],
            recall=doc["recall"],
            f1=doc["f1"],
            counts=ConfusionCounts(tp=c["tp"], fp=c["fp"], tn=c["tn"], fn=c["fn"]),
            metadata=doc.get("metadata", {}),
            corruption_grid=grid,
            mpc=doc.get("mpc"),
            rpc=doc.get("rpc"),
        )

    def grid_csv(self) -> str:
        """One row per corruption x severity, for plotting."""
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["corruption", "severity", "f1"])
        for (kind, sev), value in sorted(self.corruption_grid.items()):
            writer.writerow([kind, sev, f"{value:.6f}"])
        if self.mpc is not None:
            writer.writerow(["mpc", "", f"{self.mpc:.6f}"])
            writer.writerow(["rpc", "", f"{self.rpc:.6f}"])
            writer.writerow(["clean", "", f"{self.f1:.6f}"])
        return buf.getvalue()
