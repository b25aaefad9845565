"""Per-sample task losses, depth prediction and the online update rule."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .detector import BoundaryDetector
from .losses import LossWeights, combined_loss
from .models import DisparityNet, PoseNet
from .regularizer import ImportanceSnapshot, reg_loss, snapshot, total_loss
from .replay import ONLINE, REPLAY, ReplayBuffer, ReplaySample
from .warp import warp_sfm, warp_stereo

# SfM depth is only defined up to scale; depth = SFM_DEPTH_SCALE / disparity
SFM_DEPTH_SCALE = 32.0


@dataclass
class Nets:
    disp: DisparityNet
    pose: Optional[PoseNet] = None

    @property
    def params(self) -> "OrderedDict[str, Tensor]":
        out = OrderedDict(self.disp.params)
        if self.pose is not None:
            out.update(self.pose.params)
        return out


def _batch(frame: np.ndarray) -> Tensor:
    return Tensor(frame[None])


def stereo_loss(nets: Nets, left: np.ndarray, right: np.ndarray, w: LossWeights) -> Tensor:
    lt, rt = _batch(left), _batch(right)
    disp = nets.disp(lt)
    res = warp_stereo(lt, disp)
    return combined_loss(res.reconstructed, rt, disp, lt, res.valid_mask[0, 0] > 0, w)


def _sfm_direction(nets: Nets, target: Tensor, ref: Tensor, w: LossWeights) -> Tensor:
    disp = nets.disp(target)
    depth = SFM_DEPTH_SCALE / disp
    cam = nets.pose(target, ref)
    res = warp_sfm(ref, depth, cam)
    return combined_loss(res.reconstructed, target, disp, target, res.valid_mask[0, 0] > 0, w)


def sfm_loss(nets: Nets, target: np.ndarray, ref: np.ndarray, w: LossWeights) -> Tensor:
    """Both reconstruction directions, averaged."""
    if nets.pose is None:
        raise ValueError("sfm mode needs a pose network")
    t, r = _batch(target), _batch(ref)
    return (_sfm_direction(nets, t, r, w) + _sfm_direction(nets, r, t, w)) * 0.5


def task_loss(nets: Nets, sample: ReplaySample, w: LossWeights) -> Tensor:
    if sample.mode == "stereo":
        return stereo_loss(nets, sample.frames[0], sample.frames[1], w)
    if sample.mode == "sfm":
        return sfm_loss(nets, sample.frames[0], sample.frames[1], w)
    raise ValueError(f"unknown mode {sample.mode!r}")


def predict_depth(nets: Nets, frames: Sequence[np.ndarray], mode: str, fb: float) -> np.ndarray:
    """Depth on the evaluation grid, without recording a graph."""
    with ad.no_grad():
        disp = nets.disp(_batch(frames[0])).data[0, 0].astype(np.float64)
    if mode == "stereo":
        return fb / disp
    return SFM_DEPTH_SCALE / disp


@dataclass
class StepRecord:
    step: int
    source: str
    loss: float
    d: float
    reg: float
    admitted: bool


@dataclass
class OnlineLearner:
    """The synchronous online update: one sample in, one optimizer step out."""

    nets: Nets
    adam: ad.AdamState
    weights: LossWeights
    gamma: float
    detector: BoundaryDetector
    buffer: Optional[ReplayBuffer]
    coin: np.random.Generator
    replay_reg: str = "last_online"
    anchor: Optional[ImportanceSnapshot] = None
    step: int = 0
    history: List[StepRecord] = field(default_factory=list)

    def __post_init__(self):
        if self.replay_reg not in ("last_online", "off"):
            raise ValueError(f"replay_reg must be 'last_online' or 'off', got {self.replay_reg!r}")
        if self.anchor is None:
            self.anchor = snapshot(self.nets.params)

    def choose(self) -> str:
        if self.buffer is None:
            return ONLINE
        return self.buffer.choose_source(self.coin)

    def train_step(self, online: ReplaySample, source: Optional[str] = None) -> StepRecord:
        params = self.nets.params
        source = source or self.choose()
        x = online if source == ONLINE else self.buffer.draw()
        task = task_loss(self.nets, x, self.weights)
        loss = task.item()
        if source == ONLINE:
            d = self.detector.observe(loss, self.step)
        else:
            d = self.detector.last_d if self.replay_reg == "last_online" else 0.0
        if self.gamma > 0 and d > 0:
            reg = reg_loss(params, self.anchor)
            objective = total_loss(task, d, reg, self.gamma)
            reg_value = reg.item()
        else:
            objective, reg_value = task, 0.0
        ad.backward(objective)
        before = snapshot(params)
        ad.adam_step(params, self.adam)
        self.anchor = before
        admitted = False
        if source == ONLINE and self.buffer is not None:
            admitted = self.buffer.maybe_store(online, d, self.step)
        rec = StepRecord(self.step, source, loss, d, reg_value, admitted)
        self.history.append(rec)
        self.step += 1
        return rec


def pretrain_step(nets: Nets, adam: ad.AdamState, sample: ReplaySample, w: LossWeights) -> float:
    loss = task_loss(nets, sample, w)
    ad.backward(loss)
    ad.adam_step(nets.params, adam)
    return loss.item()
