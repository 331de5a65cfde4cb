"""Risk-assessment network: dynamic region scoring, twin recurrent memories,
and recursive future-location imagination.

Per frame the model sees the agent (appearance vector + box) and N candidate
regions (appearance vectors + boxes). A small hypernetwork turns the agent
state and each region's relative geometry into per-region classifier weights,
whose dot product with the region appearance gives a risk score. Risk-weighted
region pooling plus the agent state feed an anticipation head that outputs a
(non-accident, accident) distribution. With imagination enabled, the model
regresses its own box a fixed number of frames ahead, re-scores every region
from the imagined position without touching the committed recurrent state,
and fuses observed and imagined outputs as a convex combination.

Four ablation variants are supported: RA (single frame), RAI (adds
imagination), L-RA (adds the two LSTMs), and L-RAI (everything).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .autodiff import Node, Tape
from .geometry import (MAX_LOG_SCALE, RELATIVE_CONFIG_DIM, Box, BoxTransform,
                       boxes_to_array)
from .nn import (LstmState, ParameterStore, dense, init_params, load_params,
                 lstm_step, lstm_zero_state, save_params)

VARIANTS = ("RA", "RAI", "L-RA", "L-RAI")


@dataclass
class ModelConfig:
    d_agent: int = 32
    d_region: int = 32
    d_u: int = 16
    h_agent: int = 64
    h_aa: int = 64
    horizon: int = 5        # frames jumped per imagination step
    imagine_steps: int = 1
    lambdas: tuple = (0.6, 0.4)
    use_memory: bool = True
    use_imagination: bool = True

    def validate(self) -> None:
        dims = (self.d_agent, self.d_region, self.d_u, self.h_agent, self.h_aa)
        if any(d < 1 for d in dims):
            raise ValueError(f"model dims must be >= 1, got {dims}")
        if self.horizon < 1:
            raise ValueError(f"imagination horizon must be >= 1, got {self.horizon}")
        if self.use_imagination:
            if self.imagine_steps < 1:
                raise ValueError("imagination enabled but imagine_steps < 1")
        elif self.imagine_steps != 0:
            raise ValueError("imagine_steps must be 0 when imagination is off")
        lam = np.asarray(self.lambdas, dtype=np.float64)
        if lam.shape[0] != self.imagine_steps + 1:
            raise ValueError(
                f"need {self.imagine_steps + 1} fusion weights, got {lam.shape[0]}"
            )
        if np.any(lam < 0.0) or abs(lam.sum() - 1.0) > 1e-9:
            raise ValueError(f"fusion weights must be non-negative and sum to 1, got {self.lambdas}")

    @property
    def agent_code_dim(self) -> int:
        return self.h_agent if self.use_memory else self.d_agent

    @property
    def q_dim(self) -> int:
        return self.agent_code_dim + self.d_region

    @property
    def o_dim(self) -> int:
        return self.h_aa if self.use_memory else self.q_dim

    @property
    def variant(self) -> str:
        name = "RAI" if self.use_imagination else "RA"
        return ("L-" + name) if self.use_memory else name


def variant_config(base: ModelConfig, variant: str) -> ModelConfig:
    """Derive an ablation config (RA / RAI / L-RA / L-RAI) from a base config."""
    if variant not in VARIANTS:
        raise ValueError(f"unknown variant {variant!r}, expected one of {VARIANTS}")
    use_memory = variant.startswith("L-")
    use_imagination = variant.endswith("I")
    cfg = replace(base, use_memory=use_memory, use_imagination=use_imagination)
    if not use_imagination:
        cfg = replace(cfg, imagine_steps=0, lambdas=(1.0,))
    cfg.validate()
    return cfg


class RegionSet:
    """A frame's candidate regions with cached geometry/feature arrays."""

    def __init__(self, boxes, feats):
        self.boxes = list(boxes)
        self.feats = np.asarray(feats, dtype=np.float64)
        if len(self.boxes) < 1:
            raise ValueError("a frame needs at least one candidate region")
        if self.feats.shape[0] != len(self.boxes):
            raise ValueError(
                f"{len(self.boxes)} region boxes but {self.feats.shape[0]} feature rows"
            )
        arr = boxes_to_array(self.boxes)
        self.cx, self.cy, self.w, self.h = arr.T.copy()
        self.x1 = self.cx - 0.5 * self.w
        self.y1 = self.cy - 0.5 * self.h
        self.x2 = self.cx + 0.5 * self.w
        self.y2 = self.cy + 0.5 * self.h
        self.area = self.w * self.h
        self.feats_t = self.feats.T.copy()

    def __len__(self):
        return len(self.boxes)


def relative_config_array(agent_box: Box, regions: RegionSet) -> np.ndarray:
    """(9, N) relative configuration of every region, plain numpy.

    Used for observed frames, where the agent box is data and nothing needs
    a gradient; row semantics match :func:`relative_config_nodes` and
    geometry.relative_config.
    """
    cx, cy, w, h = agent_box.cx, agent_box.cy, agent_box.w, agent_box.h
    inv_w, inv_h = 1.0 / w, 1.0 / h
    ax1, ax2 = cx - 0.5 * w, cx + 0.5 * w
    ay1, ay2 = cy - 0.5 * h, cy + 0.5 * h
    iw = np.maximum(np.minimum(ax2, regions.x2) - np.maximum(ax1, regions.x1), 0.0)
    ih = np.maximum(np.minimum(ay2, regions.y2) - np.maximum(ay1, regions.y1), 0.0)
    inter = iw * ih
    iou = inter / (w * h + regions.area - inter)
    return np.stack([
        (regions.cx - cx) * inv_w,
        (regions.cy - cy) * inv_h,
        (regions.x1 - cx) * inv_w,
        (regions.y1 - cy) * inv_h,
        (regions.x2 - cx) * inv_w,
        (regions.y2 - cy) * inv_h,
        regions.w * inv_w,
        regions.h * inv_h,
        iou,
    ])


@dataclass
class FrameInput:
    """One frame of observations: the agent plus its candidate regions."""

    agent_feat: np.ndarray
    agent_box: Box
    regions: RegionSet

    @classmethod
    def make(cls, agent_feat, agent_box, region_feats, region_boxes) -> "FrameInput":
        return cls(np.asarray(agent_feat, dtype=np.float64), agent_box,
                   RegionSet(region_boxes, region_feats))

    @property
    def region_boxes(self):
        return self.regions.boxes

    @property
    def region_feats(self) -> np.ndarray:
        return self.regions.feats

    @property
    def observed_u(self) -> np.ndarray:
        """Cached agent-vs-regions geometry; frame inputs are immutable."""
        cached = getattr(self, "_observed_u", None)
        if cached is None:
            cached = relative_config_array(self.agent_box, self.regions)
            object.__setattr__(self, "_observed_u", cached)
        return cached


@dataclass
class ImaginedStep:
    """Outputs of one imagination hop: predicted box and re-scored risk."""

    box_node: Node
    y_node: Node
    s_node: Node

    @property
    def box(self) -> Box:
        return Box.from_array(self.box_node.value)

    @property
    def y(self) -> np.ndarray:
        return self.y_node.value.copy()

    @property
    def s(self) -> np.ndarray:
        return self.s_node.value.copy()


@dataclass
class FramePrediction:
    """Per-frame outputs, with tape nodes kept for loss construction."""

    y_node: Node
    s_node: Node
    imagined: list = field(default_factory=list)
    c_node: Node | None = None
    y_fused: np.ndarray | None = None
    s_fused: np.ndarray | None = None

    @property
    def y(self) -> np.ndarray:
        return self.y_node.value.copy()

    @property
    def s(self) -> np.ndarray:
        return self.s_node.value.copy()

    @property
    def c_raw(self) -> BoxTransform | None:
        return None if self.c_node is None else BoxTransform.from_array(self.c_node.value)


# ---------------------------------------------------------------------------
# parameter construction

def param_specs(cfg: ModelConfig):
    specs = [
        ("geom_fc_W", cfg.d_u, RELATIVE_CONFIG_DIM),
        ("geom_fc_b", cfg.d_u, 1),
        ("scorer_fc_W", cfg.d_region, cfg.agent_code_dim + cfg.d_u),
        ("scorer_fc_b", cfg.d_region, 1),
        ("accident_head_W", 2, cfg.o_dim),
    ]
    if cfg.use_imagination:
        specs.append(("imagine_head_W", 4, cfg.o_dim))
    if cfg.use_memory:
        specs.extend([
            ("agent_rnn_W", 4 * cfg.h_agent, cfg.d_agent + 4 + cfg.h_agent),
            ("agent_rnn_b", 4 * cfg.h_agent, 1),
            ("risk_rnn_W", 4 * cfg.h_aa, cfg.q_dim + cfg.h_aa),
            ("risk_rnn_b", 4 * cfg.h_aa, 1),
        ])
    return specs


# ---------------------------------------------------------------------------
# differentiable geometry (used for both observed and imagined agent boxes;
# with a constant box the tape records nothing)

def relative_config_nodes(tape: Tape, agent_vec: Node, regions: RegionSet) -> Node:
    """The (9, N) relative-configuration matrix for one agent box vs all regions."""
    cx, cy = ad.pick(agent_vec, 0), ad.pick(agent_vec, 1)
    w, h = ad.pick(agent_vec, 2), ad.pick(agent_vec, 3)
    inv_w, inv_h = 1.0 / w, 1.0 / h
    r_cx, r_cy = tape.const(regions.cx), tape.const(regions.cy)
    r_x1, r_y1 = tape.const(regions.x1), tape.const(regions.y1)
    r_x2, r_y2 = tape.const(regions.x2), tape.const(regions.y2)

    dxc = (r_cx - cx) * inv_w
    dyc = (r_cy - cy) * inv_h
    dxmin = (r_x1 - cx) * inv_w
    dymin = (r_y1 - cy) * inv_h
    dxmax = (r_x2 - cx) * inv_w
    dymax = (r_y2 - cy) * inv_h
    dw = tape.const(regions.w) * inv_w
    dh = tape.const(regions.h) * inv_h

    ax1, ax2 = cx - 0.5 * w, cx + 0.5 * w
    ay1, ay2 = cy - 0.5 * h, cy + 0.5 * h
    iw = ad.relu(ad.minimum(ax2, r_x2) - ad.maximum(ax1, r_x1))
    ih = ad.relu(ad.minimum(ay2, r_y2) - ad.maximum(ay1, r_y1))
    inter = iw * ih
    union = w * h + tape.const(regions.area) - inter
    iou = inter / union

    return ad.stack_rows([dxc, dyc, dxmin, dymin, dxmax, dymax, dw, dh, iou])


def apply_box_transform_nodes(box_vec: Node, c: Node) -> Node:
    """Differentiable counterpart of geometry.apply_box_transform on (cx,cy,w,h)."""
    if np.max(np.abs(c.value[2:4])) > MAX_LOG_SCALE:
        raise ValueError(f"log size ratios out of range: {c.value[2:4]}")
    xy_off = ad.vec_slice(c, 0, 2)
    wh_log = ad.vec_slice(c, 2, 4)
    p_xy = ad.vec_slice(box_vec, 0, 2)
    p_wh = ad.vec_slice(box_vec, 2, 4)
    return ad.concat([xy_off * p_wh + p_xy, ad.exp(wh_log) * p_wh])


# ---------------------------------------------------------------------------
# model stages

def score_regions(tape: Tape, store: ParameterStore, agent_code: Node,
                  u_mat: Node, regions: RegionSet):
    """Risk scores for every region, plus the predicted per-region weights.

    Each column of the (9, N) geometry matrix is embedded, joined with the
    agent code, and mapped to a weight vector whose dot product with that
    region's appearance is squashed to a probability.
    """
    embedded = ad.relu(dense(tape, store["geom_fc_W"], u_mat, store["geom_fc_b"]))
    joined = ad.vstack([ad.tile_cols(agent_code, len(regions)), embedded])
    weights = ad.relu(dense(tape, store["scorer_fc_W"], joined, store["scorer_fc_b"]))
    logits = ad.vsum(weights * tape.const(regions.feats_t), axis=0)
    return ad.sigmoid(logits), weights


def pool_regions(tape: Tape, scores: Node, regions: RegionSet) -> Node:
    """Risk-weighted sum of region appearances; output dim is fixed, any N."""
    return ad.matmul(tape.const(regions.feats_t), scores)


def agent_rnn_step(tape: Tape, store: ParameterStore, state: LstmState,
                   agent_feat: np.ndarray, agent_box: Box) -> LstmState:
    """Advance the agent memory on (appearance, normalized box) input."""
    x = tape.const(np.concatenate([agent_feat, agent_box.as_array()]))
    return lstm_step(tape, store["agent_rnn_W"], store["agent_rnn_b"], x, state)


def anticipate_step(tape: Tape, store: ParameterStore, cfg: ModelConfig,
                    state: LstmState | None, agent_code: Node, pooled: Node):
    """One anticipation step; returns (new state, holistic code, probabilities)."""
    q = ad.concat([agent_code, pooled])
    if cfg.use_memory:
        state = lstm_step(tape, store["risk_rnn_W"], store["risk_rnn_b"], q, state)
        o = state.hidden
    else:
        o = q
    y = ad.softmax(ad.matmul(tape.param(store["accident_head_W"]), o))
    return state, o, y


def imagine_location(tape: Tape, store: ParameterStore, o: Node, box_vec: Node):
    """Regress the transform taking the current box to the imagined one."""
    c = ad.matmul(tape.param(store["imagine_head_W"]), o)
    return c, apply_box_transform_nodes(box_vec, c)


def imagined_reassessment(tape: Tape, store: ParameterStore, cfg: ModelConfig,
                          agent_code: Node, state: LstmState | None,
                          o_prev: Node, box_vec: Node, regions: RegionSet):
    """One imagination hop: move the agent, re-score the unchanged regions.

    The recurrent state advances on a branched copy only; the caller's
    committed state is never mutated.
    """
    c, new_box = imagine_location(tape, store, o_prev, box_vec)
    u_hat = relative_config_nodes(tape, new_box, regions)
    s_hat, _ = score_regions(tape, store, agent_code, u_hat, regions)
    pooled = pool_regions(tape, s_hat, regions)
    new_state, new_o, y_hat = anticipate_step(tape, store, cfg, state, agent_code, pooled)
    return c, new_box, y_hat, s_hat, new_state, new_o


def fuse_predictions(y: np.ndarray, s: np.ndarray, imagined_ys, imagined_ss, lambdas):
    """Convex combination of observed and imagined outputs."""
    lam = np.asarray(lambdas, dtype=np.float64)
    if lam.shape[0] != 1 + len(imagined_ys):
        raise ValueError(
            f"need {1 + len(imagined_ys)} fusion weights, got {lam.shape[0]}"
        )
    y_fused = lam[0] * y
    s_fused = lam[0] * s
    for weight, y_hat, s_hat in zip(lam[1:], imagined_ys, imagined_ss):
        y_fused = y_fused + weight * y_hat
        s_fused = s_fused + weight * s_hat
    return y_fused, s_fused


def forward_video(store: ParameterStore, cfg: ModelConfig, frames,
                  tape: Tape) -> list[FramePrediction]:
    """Run the configured variant over a frame sequence.

    Both recurrent memories are threaded across frames; imagination runs on a
    branched state so observed outputs are identical with it on or off.
    """
    if len(frames) == 0:
        raise ValueError("cannot run forward on an empty video")
    agent_state = lstm_zero_state(tape, cfg.h_agent) if cfg.use_memory else None
    aa_state = lstm_zero_state(tape, cfg.h_aa) if cfg.use_memory else None
    preds = []
    for frame in frames:
        if frame.agent_feat.shape != (cfg.d_agent,):
            raise ValueError(
                f"agent feature shape {frame.agent_feat.shape} != ({cfg.d_agent},)"
            )
        if frame.regions.feats.shape[1] != cfg.d_region:
            raise ValueError(
                f"region feature dim {frame.regions.feats.shape[1]} != {cfg.d_region}"
            )
        if cfg.use_memory:
            agent_state = agent_rnn_step(tape, store, agent_state,
                                         frame.agent_feat, frame.agent_box)
            agent_code = agent_state.hidden
        else:
            agent_code = tape.const(frame.agent_feat)

        u = tape.const(frame.observed_u)
        s, _ = score_regions(tape, store, agent_code, u, frame.regions)
        pooled = pool_regions(tape, s, frame.regions)
        aa_state, o, y = anticipate_step(tape, store, cfg, aa_state, agent_code, pooled)

        imagined = []
        c_first = None
        if cfg.use_imagination:
            branch_state, branch_o, branch_box = aa_state, o, box_vec
            for n in range(cfg.imagine_steps):
                c, branch_box, y_hat, s_hat, branch_state, branch_o = imagined_reassessment(
                    tape, store, cfg, agent_code, branch_state, branch_o,
                    branch_box, frame.regions)
                if n == 0:
                    c_first = c
                imagined.append(ImaginedStep(branch_box, y_hat, s_hat))

        y_fused, s_fused = fuse_predictions(
            y.value, s.value,
            [step.y_node.value for step in imagined],
            [step.s_node.value for step in imagined],
            cfg.lambdas)
        preds.append(FramePrediction(y_node=y, s_node=s, imagined=imagined,
                                     c_node=c_first, y_fused=y_fused,
                                     s_fused=s_fused))
    return preds


# ---------------------------------------------------------------------------

class RiskModel:
    """A config plus its parameter store, with save/load."""

    def __init__(self, cfg: ModelConfig, store: ParameterStore):
        cfg.validate()
        self.cfg = cfg
        self.store = store

    @classmethod
    def create(cls, cfg: ModelConfig, seed: int) -> "RiskModel":
        cfg.validate()
        return cls(cfg, init_params(param_specs(cfg), seed))

    def forward_video(self, frames, tape: Tape | None = None) -> list[FramePrediction]:
        if tape is None:
            tape = Tape(train=False)
        return forward_video(self.store, self.cfg, frames, tape)

    def save(self, path) -> None:
        cfg = self.cfg
        header = {
            "variant": cfg.variant,
            "d_agent": cfg.d_agent,
            "d_region": cfg.d_region,
            "d_u": cfg.d_u,
            "h_agent": cfg.h_agent,
            "h_aa": cfg.h_aa,
            "horizon": cfg.horizon,
            "imagine_steps": cfg.imagine_steps,
            "lambdas": cfg.lambdas,
            "use_memory": cfg.use_memory,
            "use_imagination": cfg.use_imagination,
        }
        save_params(path, self.store, header)

    @classmethod
    def load(cls, path) -> "RiskModel":
        store, raw = load_params(path)
        cfg = ModelConfig(
            d_agent=int(raw["d_agent"]),
            d_region=int(raw["d_region"]),
            d_u=int(raw["d_u"]),
            h_agent=int(raw["h_agent"]),
            h_aa=int(raw["h_aa"]),
            horizon=int(raw["horizon"]),
            imagine_steps=int(raw["imagine_steps"]),
            lambdas=tuple(float(v) for v in raw["lambdas"].split(",")),
            use_memory=raw["use_memory"] == "true",
            use_imagination=raw["use_imagination"] == "true",
        )
        return cls(cfg, store)
