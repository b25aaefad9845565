"""Disparity and pose networks built on the autodiff core."""

from __future__ import annotations

import json
import math
from collections import OrderedDict
from typing import Dict, List, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .warp import CameraParams

D_MIN = 0.1
POSE_SCALE = 0.01


def _conv_params(rng: np.random.Generator, prefix: str, cin: int, cout: int, k: int = 3, gain: float = 1.0):
    std = gain * math.sqrt(2.0 / (cin * k * k))
    w = (rng.standard_normal((cout, cin, k, k)) * std).astype(np.float32)
    return [
        (f"{prefix}.w", ad.parameter(w, f"{prefix}.w")),
        (f"{prefix}.b", ad.parameter(np.zeros(cout, np.float32), f"{prefix}.b")),
    ]


class _Net:
    params: "OrderedDict[str, Tensor]"
    layers: List[Tuple[str, Tuple[int, int, int, int]]]

    def _conv(self, name: str, x: Tensor, stride: int = 1, act: bool = True) -> Tensor:
        y = ad.conv2d(x, self.params[f"{name}.w"], self.params[f"{name}.b"], stride=stride, padding=1)
        return ad.elu(y) if act else y

    def manifest(self) -> List[dict]:
        return [{"layer": name, "kernel": list(shape)} for name, shape in self.layers]

    def load_arrays(self, arrays: Dict[str, np.ndarray]) -> None:
        for k, p in self.params.items():
            if k not in arrays:
                raise KeyError(f"checkpoint lacks parameter {k!r}")
            if arrays[k].shape != p.shape:
                raise ad.ShapeError(f"checkpoint parameter {k!r} has shape {arrays[k].shape}, expected {p.shape}")
            p.data = np.array(arrays[k], dtype=np.float32)

    def num_params(self) -> int:
        return sum(p.size for p in self.params.values())


class DisparityNet(_Net):
    """Three-level UNet; the decoder stops at half resolution and the raw map
    is bilinearly upsampled before the sigmoid range mapping."""

    def __init__(self, h: int, w: int, rng: np.random.Generator, channels=(16, 32, 64), prefix: str = "disp"):
        if h % 8 or w % 8:
            raise ValueError(f"image size {h}x{w} must be a multiple of 8")
        self.h, self.w = h, w
        self.d_min = D_MIN
        self.d_max = 0.3 * w
        c1, c2, c3 = channels
        spec = [
            ("enc1a", 3, c1),
            ("enc1b", c1, c1),
            ("enc2a", c1, c2),
            ("enc2b", c2, c2),
            ("enc3a", c2, c3),
            ("enc3b", c3, c3),
            ("dec2", c3 + c2, c2),
            ("dec1", c2 + c1, c1),
            ("out", c1, 1),
        ]
        self.prefix = prefix
        self.params = OrderedDict()
        self.layers = []
        for name, cin, cout in spec:
            gain = 0.1 if name == "out" else 1.0
            for k, p in _conv_params(rng, f"{prefix}.{name}", cin, cout, gain=gain):
                self.params[k] = p
            self.layers.append((f"{prefix}.{name}", (cout, cin, 3, 3)))

    def raw(self, image: Tensor) -> Tensor:
        p = self.prefix
        e1 = self._conv(f"{p}.enc1b", self._conv(f"{p}.enc1a", image, stride=2))
        e2 = self._conv(f"{p}.enc2b", self._conv(f"{p}.enc2a", e1, stride=2))
        e3 = self._conv(f"{p}.enc3b", self._conv(f"{p}.enc3a", e2, stride=2))
        h2, w2 = e2.shape[2:]
        d2 = self._conv(f"{p}.dec2", ad.concat([ad.resize_bilinear(e3, h2, w2), e2], axis=1))
        h1, w1 = e1.shape[2:]
        d1 = self._conv(f"{p}.dec1", ad.concat([ad.resize_bilinear(d2, h1, w1), e1], axis=1))
        out = self._conv(f"{p}.out", d1, act=False)
        return ad.resize_bilinear(out, self.h, self.w)

    def __call__(self, image: Tensor) -> Tensor:
        return predict_disparity(self, image)


def predict_disparity(net: DisparityNet, image: Tensor) -> Tensor:
    """``d_min + (d_max - d_min) * sigmoid(raw)`` at input resolution."""
    if image.data.ndim != 4 or image.shape[2:] != (net.h, net.w):
        raise ad.ShapeError(f"predict_disparity: expected 1×C×{net.h}×{net.w}, got {image.shape}")
    s = ad.sigmoid(net.raw(image))
    return s * (net.d_max - net.d_min) + net.d_min


class PoseNet(_Net):
    """Four stride-2 convs over the stacked (target, reference) pair, global
    average pooling, then a 1×1 head with 10 outputs:
    rotation (3), translation (3), fx, fy, cx, cy."""

    def __init__(self, h: int, w: int, rng: np.random.Generator, channels=(16, 32, 64, 64), prefix: str = "pose"):
        self.h, self.w = h, w
        self.prefix = prefix
        self.params = OrderedDict()
        self.layers = []
        cin = 6
        for i, cout in enumerate(channels):
            for k, p in _conv_params(rng, f"{prefix}.conv{i + 1}", cin, cout):
                self.params[k] = p
            self.layers.append((f"{prefix}.conv{i + 1}", (cout, cin, 3, 3)))
            cin = cout
        hw = (rng.standard_normal((10, cin, 1, 1)) * 0.01 * math.sqrt(1.0 / cin)).astype(np.float32)
        self.params[f"{prefix}.head.w"] = ad.parameter(hw, f"{prefix}.head.w")
        self.params[f"{prefix}.head.b"] = ad.parameter(np.zeros(10, np.float32), f"{prefix}.head.b")
        self.layers.append((f"{prefix}.head", (10, cin, 1, 1)))
        self.n_convs = len(channels)

    def raw(self, target: Tensor, reference: Tensor) -> Tensor:
        x = ad.concat([target, reference], axis=1)
        for i in range(self.n_convs):
            x = self._conv(f"{self.prefix}.conv{i + 1}", x, stride=2)
        x = ad.mean_axes(x, (2, 3))
        out = ad.conv2d(x, self.params[f"{self.prefix}.head.w"], self.params[f"{self.prefix}.head.b"])
        return ad.reshape(out, (10,))

    def __call__(self, target: Tensor, reference: Tensor) -> CameraParams:
        return predict_pose(self, target, reference)


_LN2 = math.log(2.0)


def camera_from_raw(raw: Tensor, h: int, w: int) -> CameraParams:
    """Map 10 raw outputs to camera parameters.

    Zero raw output gives identity motion, ``fx = fy = W``, principal point at
    the image centre.
    """
    rot = raw[0:3] * POSE_SCALE
    trans = raw[3:6] * POSE_SCALE
    fx = ad.softplus(raw[6]) * (w / _LN2)
    fy = ad.softplus(raw[7]) * (w / _LN2)
    cx = ad.sigmoid(raw[8]) * float(w)
    cy = ad.sigmoid(raw[9]) * float(h)
    return CameraParams(fx, fy, cx, cy, rot, trans)


def predict_pose(net: PoseNet, target: Tensor, reference: Tensor) -> CameraParams:
    if target.shape != reference.shape:
        raise ad.ShapeError(f"predict_pose: frame shapes {target.shape} and {reference.shape} differ")
    return camera_from_raw(net.raw(target, reference), net.h, net.w)


def build_default_nets(h: int, w: int, seed: int) -> Tuple[DisparityNet, PoseNet]:
    """Deterministic He-initialised disparity and pose networks."""
    ss = np.random.SeedSequence(seed)
    rd, rp = (np.random.default_rng(s) for s in ss.spawn(2))
    return DisparityNet(h, w, rd), PoseNet(h, w, rp)


def write_manifest(path, nets) -> None:
    data = {"layers": [entry for net in nets for entry in net.manifest()]}
    with open(path, "w") as fh:
        json.dump(data, fh, indent=2)
