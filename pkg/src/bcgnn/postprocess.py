"""Score fusion, Soft-NMS, tIoU and AR@AN / AUC evaluation."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

ANET_THRESHOLDS = tuple(np.round(np.arange(0.5, 0.951, 0.05), 2))
THUMOS_THRESHOLDS = tuple(np.round(np.arange(0.5, 1.001, 0.05), 2))


@dataclass(frozen=True)
class ScoredProposal:
    t_s: float
    t_e: float
    score: float


def fuse_scores(p) -> ScoredProposal:
    """Fused ranking score p_s * p_e * p_c."""
    return ScoredProposal(float(p.t_s), float(p.t_e), float(p.p_s) * float(p.p_e) * float(p.p_c))


def tiou(a: Sequence[float], b: Sequence[float]) -> float:
    inter = max(0.0, min(a[1], b[1]) - max(a[0], b[0]))
    union = max(a[1], b[1]) - min(a[0], b[0])
    return inter / union if union > 0 else 0.0


def tiou_matrix(segs: np.ndarray, refs: np.ndarray) -> np.ndarray:
    """Pairwise tIoU, ``[len(segs), len(refs)]``."""
    segs = np.asarray(segs, dtype=np.float64).reshape(-1, 2)
    refs = np.asarray(refs, dtype=np.float64).reshape(-1, 2)
    lo = np.maximum(segs[:, None, 0], refs[None, :, 0])
    hi = np.minimum(segs[:, None, 1], refs[None, :, 1])
    inter = np.clip(hi - lo, 0.0, None)
    union = np.maximum(segs[:, None, 1], refs[None, :, 1]) - np.minimum(segs[:, None, 0], refs[None, :, 0])
    return np.divide(inter, union, out=np.zeros_like(inter), where=union > 0)


def soft_nms(
    proposals: Sequence[ScoredProposal],
    sigma: float = 0.5,
    score_floor: float = 0.001,
    top_k: int = 100,
) -> list[ScoredProposal]:
    """Gaussian Soft-NMS: keep the best, decay the rest by exp(-tIoU^2 / sigma)."""
    if sigma <= 0:
        raise ValueError(f"sigma must be > 0, got {sigma}")
    if not proposals:
        return []
    segs = np.array([(p.t_s, p.t_e) for p in proposals], dtype=np.float64)
    scores = np.array([p.score for p in proposals], dtype=np.float64)
    alive = np.arange(len(proposals))
    kept: list[ScoredProposal] = []
    while alive.size and len(kept) < top_k:
        # stable: first index among equal scores
        best_pos = int(np.argmax(scores[alive]))
        best = alive[best_pos]
        kept.append(ScoredProposal(float(segs[best, 0]), float(segs[best, 1]), float(scores[best])))
        alive = np.delete(alive, best_pos)
        if not alive.size:
            break
        ov = tiou_matrix(segs[alive], segs[best : best + 1])[:, 0]
        scores[alive] *= np.exp(-(ov**2) / sigma)
        alive = alive[scores[alive] >= score_floor]
    return kept


def recall_at(proposals: Sequence[ScoredProposal], gts: np.ndarray, an: int, thresholds: Sequence[float]) -> np.ndarray:
    """Per-threshold recall of ``gts`` by the top-``an`` proposals."""
    gts = np.asarray(gts, dtype=np.float64).reshape(-1, 2)
    if not proposals or an <= 0:
        return np.zeros(len(thresholds))
    ranked = sorted(proposals, key=lambda p: -p.score)[:an]
    segs = np.array([(p.t_s, p.t_e) for p in ranked])
    best = tiou_matrix(gts, segs).max(axis=1)
    return np.array([np.mean(best >= th) for th in thresholds])


def ar_at_an(
    per_video: Mapping[str, tuple[Sequence[ScoredProposal], Sequence[tuple[float, float]]]],
    thresholds: Sequence[float] = ANET_THRESHOLDS,
    an_values: Sequence[int] = tuple(range(1, 101)),
) -> dict[int, float]:
    """AR for each AN: recall per video per threshold, mean over videos, then mean over thresholds.

    Videos without ground truth are skipped.
    """
    vids = [v for v, (_, gts) in per_video.items() if len(gts) > 0]
    out = {}
    for an in an_values:
        if not vids:
            out[int(an)] = 0.0
            continue
        rec = np.stack([recall_at(per_video[v][0], per_video[v][1], an, thresholds) for v in vids])
        out[int(an)] = float(rec.mean(axis=0).mean())
    return out


def auc(ar_curve: Mapping[int, float]) -> float:
    """Trapezoidal area under AR vs AN on a contiguous grid, /100, as a percentage."""
    ans = sorted(ar_curve)
    if any(b - a != 1 for a, b in zip(ans, ans[1:])):
        raise ValueError("auc: AN grid must be contiguous integers")
    ar = np.array([ar_curve[a] for a in ans])
    area = float(np.sum((ar[1:] + ar[:-1]) / 2.0))
    # normalized by the largest AN, reported in percent
    return 100.0 * area / ans[-1]


# ---------------------------------------------------------------- result files


def save_results(path: str | Path, results: Mapping[str, Sequence[ScoredProposal]], meta: dict | None = None) -> None:
    doc: dict = {
        vid: [{"start": p.t_s, "end": p.t_e, "score": p.score} for p in props] for vid, props in results.items()
    }
    if meta:
        doc["_meta"] = meta
    Path(path).write_text(json.dumps(doc, indent=1))


def load_results(path: str | Path) -> tuple[dict[str, list[ScoredProposal]], dict]:
    doc = json.loads(Path(path).read_text())
    meta = doc.pop("_meta", {})
    return {
        vid: [ScoredProposal(float(p["start"]), float(p["end"]), float(p["score"])) for p in props]
        for vid, props in doc.items()
    }, meta


def metrics_report(
    per_video: Mapping[str, tuple[Sequence[ScoredProposal], Sequence[tuple[float, float]]]],
    thresholds: Sequence[float] = ANET_THRESHOLDS,
    max_an: int = 100,
) -> dict:
    curve = ar_at_an(per_video, thresholds, range(1, max_an + 1))
    report = {f"AR@{k}": curve[k] for k in (1, 10, 50, 100) if k in curve}
    report["AUC"] = auc(curve)
    report["curve"] = {str(k): v for k, v in curve.items()}
    report["thresholds"] = [float(t) for t in thresholds]
    return report
