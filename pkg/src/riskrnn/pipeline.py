"""Test-time protocol: detected tracks only, per-frame max over tracks for
the video-level anticipation score, and region riskiness taken from whichever
track is most alarmed at each frame.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import RunConfig
from .evaluation import (VideoPrediction, average_precision,
                         oracle_region_average_precision,
                         region_average_precision, tta_atta,
                         video_level_scores)
from .model import RiskModel
from .training import detected_tracks, frames_for_track


@dataclass
class VideoEvalResult:
    video_id: str
    positive: bool
    t_accident: int | None
    frame_probs: np.ndarray            # per frame, max over candidate tracks
    frame_regions: list = field(default_factory=list)  # per frame (boxes, scores)
    n_tracks: int = 0


@dataclass
class EvalSummary:
    anticipation_map: float
    atta_frames: float
    atta_seconds: float
    region_map: float
    oracle_region_map: float
    curve_rows: list
    videos: list

    def report_fields(self) -> dict:
        return {
            "anticipation_map": self.anticipation_map,
            "atta_frames": self.atta_frames,
            "atta_seconds": self.atta_seconds,
            "region_map": self.region_map,
            "oracle_region_map": self.oracle_region_map,
            "n_videos": len(self.videos),
            "n_positive": sum(1 for v in self.videos if v.positive),
        }


def eval_video(model: RiskModel, sample, run_cfg: RunConfig) -> VideoEvalResult:
    """Run every candidate track through the model and reduce per frame."""
    tracks = detected_tracks(sample, run_cfg)
    n_frames = sample.n_frames
    probs = np.zeros((len(tracks), n_frames))
    region_scores = []
    for k, track in enumerate(tracks):
        preds = model.forward_video(frames_for_track(sample, track))
        scores = []
        for t, pred in enumerate(preds):
            if run_cfg.use_fused:
                probs[k, t] = pred.y_fused[1]
                scores.append(pred.s_fused.copy())
            else:
                probs[k, t] = pred.y[1]
                scores.append(pred.s)
        region_scores.append(scores)

    frame_probs = probs.max(axis=0)
    picks = probs.argmax(axis=0)
    frame_regions = [
        (sample.frames[t].region_boxes, region_scores[picks[t]][t])
        for t in range(n_frames)
    ]
    return VideoEvalResult(
        video_id=sample.video_id,
        positive=sample.positive,
        t_accident=sample.targets.t_accident,
        frame_probs=frame_probs,
        frame_regions=frame_regions,
        n_tracks=len(tracks),
    )


def evaluate_model(model: RiskModel, samples, run_cfg: RunConfig) -> EvalSummary:
    results = [eval_video(model, sample, run_cfg) for sample in samples]

    vpreds = [VideoPrediction(r.frame_probs, r.positive, r.t_accident)
              for r in results]
    anticipation_map = average_precision(video_level_scores(vpreds))
    curve_rows, atta_frames = tta_atta(vpreds)

    region_frames = []
    for sample, result in zip(samples, results):
        video = []
        for t in range(sample.n_frames):
            boxes, scores = result.frame_regions[t]
            detections = [(box, float(score)) for box, score in zip(boxes, scores)]
            gt = sample.targets.risky_boxes[t] if sample.positive else []
            video.append((detections, gt))
        region_frames.append(video)
    region_map = region_average_precision(region_frames,
                                          per_video=run_cfg.per_video_region_ap)
    oracle_map = oracle_region_average_precision(
        region_frames, per_video=run_cfg.per_video_region_ap)

    return EvalSummary(
        anticipation_map=float(anticipation_map),
        atta_frames=float(atta_frames),
        atta_seconds=float(atta_frames / run_cfg.fps),
        region_map=float(region_map),
        oracle_region_map=float(oracle_map),
        curve_rows=curve_rows,
        videos=results,
    )
