"""End-to-end glue: windows from videos, per-video inference, evaluation inputs."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Iterable, Sequence

import numpy as np

from .data import FeatureSequence, GroundTruthInstance, ObservationWindow, rescale_linear, slide_windows
from .model import BCGNN
from .postprocess import ScoredProposal, fuse_scores, soft_nms


def video_windows(
    seq: FeatureSequence,
    instances: list[GroundTruthInstance],
    l_w: int,
    stride: int | None = None,
    mode: str = "sliding",
) -> tuple[list[ObservationWindow], float]:
    """Windows for one video plus the factor mapping window coordinates back to the video.

    ``mode="sliding"`` cuts fixed windows; ``mode="rescale"`` resamples the whole
    video to ``l_w`` snippets and returns a single window.
    """
    if mode == "rescale":
        scaled, insts = rescale_linear(seq, l_w, instances)
        insts = [g for g in insts if g.t_end <= l_w]
        win = ObservationWindow(seq.video_id, 0, scaled.features, insts, False, l_w)
        return [win], seq.length / l_w
    if mode != "sliding":
        raise ValueError(f"unknown window mode {mode!r}")
    return slide_windows(seq, instances, l_w, stride), 1.0


def window_proposals(model: BCGNN, win: ObservationWindow, scale: float, video_length: float) -> list[ScoredProposal]:
    """Fused proposals of one window, mapped to video coordinates."""
    out = model(win.features)
    props = []
    for cand in out.proposals():
        if win.padded and cand.t_e >= win.valid_length:
            continue
        fused = fuse_scores(cand)
        t_s = (win.window_start + fused.t_s) * scale
        t_e = min((win.window_start + fused.t_e) * scale, video_length)
        if t_s < t_e:
            props.append(ScoredProposal(t_s, t_e, fused.score))
    return props


def merge_duplicates(props: Iterable[ScoredProposal], decimals: int = 3) -> list[ScoredProposal]:
    """Collapse proposals with the same rounded boundaries, keeping the max score."""
    best: dict[tuple[float, float], ScoredProposal] = {}
    for p in props:
        key = (round(p.t_s, decimals), round(p.t_e, decimals))
        cur = best.get(key)
        if cur is None or p.score > cur.score:
            best[key] = p
    return sorted(best.values(), key=lambda p: (p.t_s, p.t_e))


def infer_video(
    model: BCGNN,
    seq: FeatureSequence,
    stride: int | None = None,
    mode: str = "sliding",
    sigma: float = 0.5,
    score_floor: float = 0.001,
    top_k: int = 100,
) -> list[ScoredProposal]:
    windows, scale = video_windows(seq, [], model.cfg.l_w, stride, mode)
    raw = []
    for win in windows:
        raw.extend(window_proposals(model, win, scale, float(seq.length)))
    return soft_nms(merge_duplicates(raw), sigma=sigma, score_floor=score_floor, top_k=top_k)


def infer_many(
    model: BCGNN,
    videos: Sequence[FeatureSequence],
    jobs: int = 1,
    **kwargs,
) -> dict[str, list[ScoredProposal]]:
    """Per-video inference; output order follows ``videos`` regardless of ``jobs``."""
    if jobs <= 1:
        results = [infer_video(model, v, **kwargs) for v in videos]
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(lambda v: infer_video(model, v, **kwargs), videos))
    return {v.video_id: r for v, r in zip(videos, results)}


def eval_inputs(
    results: dict[str, list[ScoredProposal]],
    annotations: dict[str, tuple[int, list[GroundTruthInstance]]],
) -> dict[str, tuple[list[ScoredProposal], np.ndarray]]:
    return {
        vid: (results.get(vid, []), np.array([(g.t_start, g.t_end) for g in insts], dtype=np.float64).reshape(-1, 2))
        for vid, (_, insts) in annotations.items()
    }
