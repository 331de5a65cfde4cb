"""Seeded synthetic scenarios: a moving agent, one hazard, benign distractor
regions, collision-defined accidents, class-embedding features, and noisy
proposal sets for the tracker.

A positive video walks the agent into the hazard so that their IoU first
exceeds the collision threshold exactly at the last frame; a negative video
keeps the whole walk clear of the hazard. Every random draw comes from a
per-video generator derived from (seed, split, index), so datasets are a pure
function of their configuration.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .geometry import Box, iou
from .losses import VideoTargets
from .model import FrameInput, RegionSet

DATASET_HEADER = "RISKRNN-DATASET v1"
HAZARD_CLASS = 0

_EMBED_TAG = 101
_SPLIT_TAGS = {"train": 1, "val": 2, "test": 3}
_MAX_ATTEMPTS = 200


class GenerationError(RuntimeError):
    pass


@dataclass
class ScenarioConfig:
    frames_per_video: int = 12
    n_regions: int = 8
    feature_dim: int = 32
    n_classes: int = 6
    noise_sigma: float = 0.1
    collision_iou: float = 0.3
    proposal_jitter: float = 0.05
    n_distractor_proposals: int = 20
    seed: int = 0

    def validate(self) -> None:
        counts = (self.frames_per_video, self.n_regions, self.feature_dim, self.n_classes)
        if any(c < 1 for c in counts):
            raise ValueError(f"scenario counts must be >= 1, got {counts}")
        if self.noise_sigma < 0 or self.proposal_jitter < 0 or self.n_distractor_proposals < 0:
            raise ValueError("noise levels and proposal counts must be non-negative")
        if not (0.0 < self.collision_iou < 1.0):
            raise ValueError(f"collision_iou must lie in (0, 1), got {self.collision_iou}")


@dataclass
class Proposal:
    box: Box
    score: float
    feat: np.ndarray


@dataclass
class VideoSample:
    video_id: str
    frames: list
    targets: VideoTargets
    proposals: list = field(default_factory=list)  # per frame
    agent_class: int = -1
    region_classes: list = field(default_factory=list)

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    @property
    def positive(self) -> bool:
        return self.targets.positive


def class_embeddings(cfg: ScenarioConfig) -> np.ndarray:
    """Unit-norm feature prototypes: rows 0..n_classes-1 are region classes
    (row 0 the hazard), the final row is the agent."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, _EMBED_TAG]))
    emb = rng.normal(size=(cfg.n_classes + 1, cfg.feature_dim))
    return emb / np.linalg.norm(emb, axis=1, keepdims=True)


def agent_class_id(cfg: ScenarioConfig) -> int:
    return cfg.n_classes


def synthesize_features(cfg: ScenarioConfig, embeddings: np.ndarray,
                        class_ids, n_frames: int, rng) -> np.ndarray:
    """(n_frames, len(class_ids), feature_dim) noisy class-embedding draws."""
    base = embeddings[np.asarray(class_ids, dtype=int)]
    noise = rng.normal(0.0, cfg.noise_sigma, size=(n_frames,) + base.shape)
    return base[None, :, :] + noise


def _video_rng(cfg: ScenarioConfig, split_tag: int, index: int):
    return np.random.default_rng(np.random.SeedSequence([cfg.seed, split_tag, index]))


def _iou_at_distance(agent_w, agent_h, hazard: Box, direction, d) -> float:
    box = Box(hazard.cx + direction[0] * d, hazard.cy + direction[1] * d,
              agent_w, agent_h)
    return iou(box, hazard)


def _collision_distance(agent_w, agent_h, hazard: Box, direction, threshold) -> float:
    """Center distance along ``direction`` where the agent-hazard IoU hits the
    collision threshold (bisection; IoU decreases with distance)."""
    if _iou_at_distance(agent_w, agent_h, hazard, direction, 0.0) <= threshold:
        raise GenerationError("hazard too small for the collision threshold")
    lo, hi = 0.0, 2.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if _iou_at_distance(agent_w, agent_h, hazard, direction, mid) > threshold:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _random_box(rng, size_lo=0.06, size_hi=0.18) -> Box:
    return Box(rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9),
               rng.uniform(size_lo, size_hi), rng.uniform(size_lo, size_hi))


def _positive_walk(cfg: ScenarioConfig, rng):
    """Agent track plus hazard with first collision exactly at the last frame."""
    last = cfg.frames_per_video - 1
    for _ in range(_MAX_ATTEMPTS):
        agent_w = rng.uniform(0.08, 0.12)
        agent_h = rng.uniform(0.08, 0.12)
        hazard = Box(rng.uniform(0.35, 0.65), rng.uniform(0.35, 0.65),
                     agent_w * rng.uniform(0.9, 1.3), agent_h * rng.uniform(0.9, 1.3))
        theta = rng.uniform(0.0, 2.0 * np.pi)
        direction = np.array([np.cos(theta), np.sin(theta)])
        d_hit = _collision_distance(agent_w, agent_h, hazard, direction, cfg.collision_iou)
        d_final = d_hit * rng.uniform(0.55, 0.8)
        step = rng.uniform(0.025, 0.04) if last > 0 else 0.0
        distances = d_final + step * np.arange(last, -1.0, -1.0)
        centers = hazard.cx + direction[0] * distances, hazard.cy + direction[1] * distances
        xs, ys = centers
        # heading noise perpendicular to the walk, final frame kept exact
        perp = np.array([-direction[1], direction[0]])
        wobble = rng.normal(0.0, 0.006, size=cfg.frames_per_video)
        wobble[last] = 0.0
        xs = xs + perp[0] * wobble
        ys = ys + perp[1] * wobble
        if xs.min() < 0.03 or xs.max() > 0.97 or ys.min() < 0.03 or ys.max() > 0.97:
            continue
        track = [Box(float(x), float(y), agent_w, agent_h) for x, y in zip(xs, ys)]
        ious = [iou(b, hazard) for b in track]
        if ious[last] > cfg.collision_iou and all(v <= cfg.collision_iou for v in ious[:last]):
            return track, hazard
    raise GenerationError("could not construct a positive walk within the attempt budget")


def _negative_walk(cfg: ScenarioConfig, rng):
    """Agent track plus a hazard the walk never collides with."""
    for _ in range(_MAX_ATTEMPTS):
        agent_w = rng.uniform(0.08, 0.12)
        agent_h = rng.uniform(0.08, 0.12)
        theta = rng.uniform(0.0, 2.0 * np.pi)
        direction = np.array([np.cos(theta), np.sin(theta)])
        step = rng.uniform(0.025, 0.04)
        start = np.array([rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)])
        offsets = step * np.arange(cfg.frames_per_video)
        xs = start[0] + direction[0] * offsets + rng.normal(0.0, 0.006, cfg.frames_per_video)
        ys = start[1] + direction[1] * offsets + rng.normal(0.0, 0.006, cfg.frames_per_video)
        if xs.min() < 0.03 or xs.max() > 0.97 or ys.min() < 0.03 or ys.max() > 0.97:
            continue
        track = [Box(float(x), float(y), agent_w, agent_h) for x, y in zip(xs, ys)]
        hazard = Box(rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9),
                     agent_w * rng.uniform(0.9, 1.3), agent_h * rng.uniform(0.9, 1.3))
        if all(iou(b, hazard) == 0.0 for b in track):
            return track, hazard
    raise GenerationError("could not construct a negative walk within the attempt budget")


def generate_scenario(cfg: ScenarioConfig, positive: bool, *, index: int = 0,
                      split: str = "train", video_id: str | None = None) -> VideoSample:
    """Build one deterministic video with features, targets, and proposals."""
    cfg.validate()
    rng = _video_rng(cfg, _SPLIT_TAGS.get(split, 0), index)
    embeddings = class_embeddings(cfg)
    n_frames = cfg.frames_per_video

    if positive:
        track, hazard = _positive_walk(cfg, rng)
        t_accident = n_frames - 1
    else:
        track, hazard = _negative_walk(cfg, rng)
        t_accident = None

    distractors = [_random_box(rng) for _ in range(cfg.n_regions - 1)]
    region_boxes = distractors + [hazard]
    region_classes = [int(rng.integers(1, cfg.n_classes)) for _ in distractors] + [HAZARD_CLASS]
    order = rng.permutation(cfg.n_regions)
    region_boxes = [region_boxes[i] for i in order]
    region_classes = [region_classes[i] for i in order]

    agent_feats = synthesize_features(cfg, embeddings, [agent_class_id(cfg)], n_frames, rng)[:, 0]
    region_feats = synthesize_features(cfg, embeddings, region_classes, n_frames, rng)

    frames = [
        FrameInput(agent_feats[t], track[t], RegionSet(region_boxes, region_feats[t]))
        for t in range(n_frames)
    ]
    targets = VideoTargets(
        positive=positive,
        t_accident=t_accident,
        agent_track=list(track),
        risky_boxes=[[hazard] for _ in range(n_frames)] if positive else [[] for _ in range(n_frames)],
    )
    sample = VideoSample(
        video_id=video_id or f"{split}-{index:05d}",
        frames=frames,
        targets=targets,
        agent_class=agent_class_id(cfg),
        region_classes=region_classes,
    )
    sample.proposals = synthesize_proposals(cfg, sample, embeddings, rng)
    return sample


def synthesize_proposals(cfg: ScenarioConfig, sample: VideoSample,
                         embeddings: np.ndarray, rng) -> list:
    """Per frame: one jittered high-score copy of each true box plus random
    low-score distractor boxes, each carrying a feature of its source class."""
    out = []
    sigma = cfg.proposal_jitter
    for t, frame in enumerate(sample.frames):
        true_boxes = [frame.agent_box] + list(frame.region_boxes)
        true_classes = [sample.agent_class] + list(sample.region_classes)
        props = []
        for box, cls in zip(true_boxes, true_classes):
            jittered = Box(
                box.cx + rng.normal(0.0, sigma) * box.w,
                box.cy + rng.normal(0.0, sigma) * box.h,
                box.w * float(np.exp(rng.normal(0.0, sigma))),
                box.h * float(np.exp(rng.normal(0.0, sigma))),
            )
            score = float(np.clip(0.9 + rng.normal(0.0, 0.05), 0.0, 1.0))
            feat = embeddings[cls] + rng.normal(0.0, cfg.noise_sigma, cfg.feature_dim)
            props.append(Proposal(jittered, score, feat))
        for _ in range(cfg.n_distractor_proposals):
            cls = int(rng.integers(0, cfg.n_classes))
            feat = embeddings[cls] + rng.normal(0.0, cfg.noise_sigma, cfg.feature_dim)
            props.append(Proposal(_random_box(rng), float(rng.uniform(0.0, 0.5)), feat))
        out.append(props)
    return out


def generate_split(cfg: ScenarioConfig, n_videos: int, split: str) -> list[VideoSample]:
    """Alternating positive/negative videos; an even count is exactly balanced."""
    return [
        generate_scenario(cfg, positive=(i % 2 == 0), index=i, split=split)
        for i in range(n_videos)
    ]


def verify_collision_predicate(sample: VideoSample, collision_iou: float) -> bool:
    """Re-check the label against the stored boxes, independent of generation."""
    hazards = [box for box, cls in zip(sample.frames[0].region_boxes, sample.region_classes)
               if cls == HAZARD_CLASS]
    track = sample.targets.agent_track
    hit = [max(iou(b, hz) for hz in hazards) > collision_iou for b in track]
    if sample.positive:
        return hit[-1] and not any(hit[:-1])
    return not any(hit)


# ---------------------------------------------------------------------------
# dataset files: a header line, then one JSON record per video

def _floats(a) -> list:
    return [float(v) for v in np.asarray(a).reshape(-1)]


def write_dataset(path, samples) -> None:
    with open(path, "w") as fh:
        fh.write(DATASET_HEADER + "\n")
        for sample in samples:
            record = {
                "id": sample.video_id,
                "label": 1 if sample.positive else 0,
                "t_accident": sample.targets.t_accident,
                "agent_class": sample.agent_class,
                "region_classes": list(sample.region_classes),
                "frames": [
                    {
                        "agent_box": _floats(frame.agent_box.as_array()),
                        "agent_feat": _floats(frame.agent_feat),
                        "region_boxes": [_floats(b.as_array()) for b in frame.region_boxes],
                        "region_feats": [_floats(f) for f in frame.region_feats],
                        "risky_boxes": [_floats(b.as_array())
                                        for b in sample.targets.risky_boxes[t]],
                        "proposals": [
                            {"box": _floats(p.box.as_array()), "score": p.score,
                             "feat": _floats(p.feat)}
                            for p in sample.proposals[t]
                        ],
                    }
                    for t, frame in enumerate(sample.frames)
                ],
            }
            fh.write(json.dumps(record, separators=(",", ":")) + "\n")


def read_dataset(path) -> list[VideoSample]:
    with open(path) as fh:
        header = fh.readline().rstrip("\n")
        if header != DATASET_HEADER:
            raise ValueError(f"{path}: not a {DATASET_HEADER} file")
        samples = []
        for line in fh:
            if not line.strip():
                continue
            rec = json.loads(line)
            frames = []
            proposals = []
            risky = []
            for fr in rec["frames"]:
                frames.append(FrameInput(
                    np.asarray(fr["agent_feat"], dtype=np.float64),
                    Box.from_array(fr["agent_box"]),
                    RegionSet([Box.from_array(b) for b in fr["region_boxes"]],
                              np.asarray(fr["region_feats"], dtype=np.float64)),
                ))
                risky.append([Box.from_array(b) for b in fr["risky_boxes"]])
                proposals.append([
                    Proposal(Box.from_array(p["box"]), float(p["score"]),
                             np.asarray(p["feat"], dtype=np.float64))
                    for p in fr["proposals"]
                ])
            positive = rec["label"] == 1
            samples.append(VideoSample(
                video_id=rec["id"],
                frames=frames,
                targets=VideoTargets(
                    positive=positive,
                    t_accident=rec["t_accident"],
                    agent_track=[f.agent_box for f in frames],
                    risky_boxes=risky,
                ),
                proposals=proposals,
                agent_class=rec["agent_class"],
                region_classes=list(rec["region_classes"]),
            ))
    return samples
