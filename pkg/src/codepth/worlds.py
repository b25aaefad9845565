"""Procedural layered-plane worlds with exact ground truth.

A scene is a stack of textured fronto-parallel rectangles in front of a
textured background plane.  The reference view (left image, or frame t-1) is
rendered analytically on a grid padded by ``MARGIN`` pixels.  The counterpart
view (right image, or frame t) is produced layer by layer by bilinearly
resampling the padded reference layers at the coordinates the warps compute,
then compositing nearest-first.  Ground-truth warps therefore reproduce the
counterpart exactly wherever the 2×2 sampling footprint lies on the visible
layer; elsewhere the pixel is marked invalid (occlusion or out of view).

Everything is a pure function of (DomainSpec, frame index).
"""

from __future__ import annotations

import csv
import hashlib
import math
import os
from dataclasses import dataclass, field, replace
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .replay import ReplaySample
from .warp import CameraParams, pixel_grid, project_coords

MARGIN = 24
STEREO = "stereo"
SFM = "sfm"


@dataclass(frozen=True)
class DomainSpec:
    domain_id: str
    distribution: str
    seed: int
    width: int = 64
    height: int = 48
    focal: float = 64.0
    baseline: float = 0.5
    depth_near: float = 2.0
    depth_far: float = 8.0
    n_objects: int = 5
    texture_period: Tuple[float, float] = (0.2, 0.4)  # finest band, world units
    texture_slope: float = 0.5  # spectral slope over octaves
    contrast: float = 0.35
    brightness: float = 0.5
    haze_depth: float = 15.0
    haze_color: Tuple[float, float, float] = (0.7, 0.7, 0.75)
    drift: float = 0.6  # lateral object motion, pixels per frame
    wobble: float = 0.1  # relative depth oscillation of objects
    motion: Tuple[float, float, float, float] = (0.05, 0.0, 0.1, 0.0)  # tx, ty, tz per frame, roll
    n_frames: int = 600

    @property
    def fb(self) -> float:
        return self.focal * self.baseline


@dataclass
class LabeledSample:
    mode: str
    frames: Tuple[np.ndarray, ...]  # C×H×W float32; stereo (left, right), sfm (target, reference)
    gt: np.ndarray  # H×W disparity (stereo) or depth (sfm) on the target grid
    gt_mask: np.ndarray  # H×W bool, non-occluded and in view
    domain_id: str
    distribution: str
    idx: int
    gt_depth: Optional[np.ndarray] = None
    gt_cam: Optional[dict] = None

    def inputs(self) -> ReplaySample:
        return ReplaySample(self.mode, self.frames, self.domain_id, (self.domain_id, self.idx))


# --------------------------------------------------------------------------
# scene description


@dataclass
class _Layer:
    depth0: float
    x0: float
    y0: float
    size: Tuple[float, float]  # world units
    speed: float
    phase: float
    wobble_period: float
    freqs: np.ndarray  # K×2 world-space frequency vectors
    amps: np.ndarray
    phases: np.ndarray
    color: np.ndarray


def _texture_bank(rng: np.random.Generator, spec: DomainSpec, k: int = 6):
    """Octave-spaced sinusoids from the finest period upwards; amplitude grows
    with period as ``(period ratio) ** texture_slope``."""
    lo, hi = spec.texture_period
    base = rng.uniform(lo, hi)
    octave = 2.0 ** np.arange(k) * rng.uniform(0.85, 1.15, size=k)
    periods = base * octave
    angles = rng.uniform(0, np.pi, size=k)
    freqs = np.stack([np.cos(angles), np.sin(angles)], axis=1) / periods[:, None]
    amps = octave**spec.texture_slope * rng.uniform(0.7, 1.0, size=k)
    amps /= amps.sum()
    phases = rng.uniform(0, 2 * np.pi, size=k)
    return freqs, amps, phases


GROUND_STRIPS = 8


def _camera_height(spec: DomainSpec) -> float:
    # the nearest ground strip meets the lower edge of the padded view
    return (spec.height / 2.0 + MARGIN / 2.0) * spec.depth_near / spec.focal


def _ground_row(spec: DomainSpec, z: float) -> float:
    return spec.height / 2.0 + spec.focal * _camera_height(spec) / z


def _layers(spec: DomainSpec) -> Tuple[_Layer, _Layer, List[_Layer]]:
    rng = np.random.default_rng(np.random.SeedSequence([spec.seed, 7]))
    tint = rng.uniform(-0.15, 0.15, size=3)
    bg_freqs, bg_amps, bg_phases = _texture_bank(rng, spec)
    background = _Layer(
        spec.depth_far, 0.0, 0.0, (np.inf, np.inf), spec.drift * 0.25, 0.0, 1.0,
        bg_freqs, bg_amps, bg_phases, spec.brightness + tint,
    )
    g_freqs, g_amps, g_phases = _texture_bank(rng, spec)
    ground = _Layer(
        spec.depth_near, 0.0, 0.0, (np.inf, np.inf), 0.0, 0.0, 1.0,
        g_freqs, g_amps, g_phases, spec.brightness + tint - 0.15 + rng.uniform(-0.1, 0.1, size=3),
    )
    objects = []
    span_z = spec.depth_far - spec.depth_near
    for _ in range(spec.n_objects):
        z = spec.depth_near + span_z * rng.uniform(0.0, 0.85) ** 1.5
        freqs, amps, phases = _texture_bank(rng, spec)
        # object footprint: 18-45% of the image width at its depth
        wpx = rng.uniform(0.18, 0.45) * spec.width
        hpx = rng.uniform(0.3, 0.7) * spec.height
        objects.append(
            _Layer(
                depth0=z,
                x0=rng.uniform(0, spec.width + 2 * MARGIN),
                y0=0.0,  # objects stand on the ground
                size=(wpx * z / spec.focal, hpx * z / spec.focal),
                speed=spec.drift * rng.uniform(0.5, 1.5) * rng.choice([-1.0, 1.0]),
                phase=rng.uniform(0, 2 * np.pi),
                wobble_period=rng.uniform(80, 200),
                freqs=freqs,
                amps=amps,
                phases=phases,
                color=spec.brightness + tint + rng.uniform(-0.25, 0.25, size=3),
            )
        )
    return background, ground, objects


@dataclass
class _Placed:
    depth: float  # in the reference frame
    rect: Optional[Tuple[float, float, float, float]]  # x0, x1, y0, y1 in reference pixels; None = everywhere
    image: np.ndarray  # 3×(H+2M)×(W+2M) on the padded reference grid


def _render_layer(spec: DomainSpec, layer: _Layer, depth: float, cx_px: float, cy_px: float, rect) -> np.ndarray:
    h, w = spec.height + 2 * MARGIN, spec.width + 2 * MARGIN
    us, vs = pixel_grid(h, w)
    us = us - MARGIN
    vs = vs - MARGIN
    # world coordinates on the plane, anchored to the layer
    X = (us - cx_px) * depth / spec.focal
    Y = (vs - cy_px) * depth / spec.focal
    tex = np.zeros((h, w))
    for (fx, fy), a, ph in zip(layer.freqs, layer.amps, layer.phases):
        # attenuate components finer than ~2.5 px in the image to limit aliasing
        px_period = spec.focal / (depth * math.hypot(fx, fy))
        atten = float(np.clip((px_period - 2.0) / 2.0, 0.0, 1.0))
        tex += a * atten * np.sin(2 * np.pi * (fx * X + fy * Y) + ph)
    haze = math.exp(-depth / spec.haze_depth)
    img = np.empty((3, h, w))
    for c in range(3):
        base = layer.color[c] + spec.contrast * tex
        img[c] = base * haze + spec.haze_color[c] * (1 - haze)
    return np.clip(img, 0.0, 1.0).astype(np.float32)


def _scene(spec: DomainSpec, tau: float) -> List[_Placed]:
    background, ground, objects = _layers(spec)
    placed = []
    cx, cy = spec.width / 2.0, spec.height / 2.0
    # background pans slowly
    bg_shift = background.speed * tau
    placed.append(_Placed(background.depth0, None, _render_layer(spec, background, background.depth0, cx + bg_shift, cy, None)))
    # ground plane as full-width fronto-parallel strips, geometric in depth
    edges = np.geomspace(spec.depth_near, spec.depth_far, GROUND_STRIPS + 1)
    wide = 1e6
    for j in range(GROUND_STRIPS):
        z = float(np.sqrt(edges[j] * edges[j + 1]))
        top = _ground_row(spec, edges[j + 1])
        bottom = _ground_row(spec, edges[j]) if j else wide
        rect = (-wide, wide, top, bottom)
        placed.append(_Placed(z, rect, _render_layer(spec, ground, z, cx, cy, rect)))
    span = spec.width + 2 * MARGIN
    for layer in objects:
        z = layer.depth0 * (1.0 + spec.wobble * math.sin(2 * np.pi * tau / layer.wobble_period + layer.phase))
        z = float(np.clip(z, spec.depth_near, spec.depth_far * 0.95))
        wpx = layer.size[0] * spec.focal / z
        hpx = layer.size[1] * spec.focal / z
        xc = (layer.x0 + layer.speed * tau) % (span + wpx) - MARGIN - wpx / 2
        yb = _ground_row(spec, z)
        rect = (xc - wpx / 2, xc + wpx / 2, yb - hpx, yb)
        placed.append(_Placed(z, rect, _render_layer(spec, layer, z, xc, yb - hpx / 2, rect)))
    # nearest first
    placed.sort(key=lambda p: p.depth)
    return placed


def _inside(rect, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    if rect is None:
        return np.ones(np.shape(xs), dtype=bool)
    x0, x1, y0, y1 = rect
    return (xs >= x0) & (xs <= x1) & (ys >= y0) & (ys <= y1)


def _labels(placed: List[_Placed], h: int, w: int) -> np.ndarray:
    """Index (into ``placed``) of the visible layer at each padded reference pixel."""
    xs, ys = pixel_grid(h + 2 * MARGIN, w + 2 * MARGIN)
    xs, ys = xs - MARGIN, ys - MARGIN
    lab = np.full(xs.shape, -1, dtype=np.int64)
    for i in range(len(placed) - 1, -1, -1):  # far to near, nearer overwrite
        lab[_inside(placed[i].rect, xs, ys)] = i
    return lab


def _gather_padded(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    hp, wp = img.shape[1:]
    xe = np.clip(xs.astype(np.float64) + MARGIN, 0, wp - 1)
    ye = np.clip(ys.astype(np.float64) + MARGIN, 0, hp - 1)
    vals, _, _ = ad.gather_numpy(img, xe, ye)
    return vals


def _synthesize(
    spec: DomainSpec, placed: List[_Placed], coords
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Composite the counterpart view.

    ``coords(depth)`` returns float32 reference-frame coordinates (xs, ys) of
    every target pixel for a layer at reference depth ``depth``, plus that
    layer's depth in the target frame.
    Returns (image, visible layer depth in target frame, valid mask, reference image).
    """
    h, w = spec.height, spec.width
    lab = _labels(placed, h, w)
    ref_lab = lab[MARGIN : MARGIN + h, MARGIN : MARGIN + w]
    out = np.zeros((3, h, w), dtype=np.float32)
    tgt_depth = np.zeros((h, w), dtype=np.float64)
    valid = np.zeros((h, w), dtype=bool)
    done = np.zeros((h, w), dtype=bool)
    for i, layer in enumerate(placed):  # nearest first
        xs, ys, zt = coords(layer.depth)
        covers = _inside(layer.rect, xs.astype(np.float64), ys.astype(np.float64)) & ~done & (zt > 0)
        if not covers.any():
            continue
        vals = _gather_padded(layer.image, xs, ys)
        out[:, covers] = vals[:, covers].astype(np.float32)
        tgt_depth[covers] = zt[covers] if np.ndim(zt) else zt
        # exact when the 2×2 footprint lies inside the reference view and on this layer
        xf = xs.astype(np.float64)
        yf = ys.astype(np.float64)
        inb = (xf >= 0) & (xf <= w - 1) & (yf >= 0) & (yf <= h - 1)
        x0 = np.clip(np.floor(np.where(inb, xf, 0)).astype(np.int64), 0, max(w - 2, 0))
        y0 = np.clip(np.floor(np.where(inb, yf, 0)).astype(np.int64), 0, max(h - 2, 0))
        ok = inb.copy()
        for dy in (0, 1):
            for dx in (0, 1):
                ok &= ref_lab[np.minimum(y0 + dy, h - 1), np.minimum(x0 + dx, w - 1)] == i
        valid[covers] = ok[covers]
        done |= covers
    ref = np.zeros((3, h, w), dtype=np.float32)
    for i, layer in enumerate(placed):
        sel = ref_lab == i
        ref[:, sel] = layer.image[:, MARGIN : MARGIN + h, MARGIN : MARGIN + w][:, sel]
    return out, tgt_depth, valid, ref


def render_stereo(spec: DomainSpec, idx: int) -> LabeledSample:
    """Rectified pair (left, right) with right-grid disparity: right(x) = left(x + d)."""
    if idx < 0:
        raise ValueError("frame index must be non-negative")
    placed = _scene(spec, float(idx))
    h, w = spec.height, spec.width
    xs, ys = pixel_grid(h, w)
    xs32, ys32 = xs.astype(np.float32), ys.astype(np.float32)

    def coords(depth):
        d = np.float32(spec.fb / depth)
        return xs32 + d, ys32, np.full((h, w), depth)

    right, depth, valid, left = _synthesize(spec, placed, coords)
    disp = (spec.fb / depth).astype(np.float32)
    return LabeledSample(STEREO, (left, right), disp, valid, spec.domain_id, spec.distribution, idx,
                         gt_depth=depth.astype(np.float32))


def _motion(spec: DomainSpec, t: int) -> Tuple[np.ndarray, np.ndarray]:
    tx, ty, tz, roll = spec.motion
    # gentle speed modulation keeps consecutive pairs correlated but not identical
    s = 1.0 + 0.3 * math.sin(2 * np.pi * t / 150.0 + spec.seed % 7)
    return np.array([0.0, 0.0, roll * s]), np.array([tx * s, ty * s, tz * s])


def gt_camera(spec: DomainSpec, t: int) -> CameraParams:
    rot, trans = _motion(spec, t)
    return CameraParams(spec.focal, spec.focal, spec.width / 2.0, spec.height / 2.0, rot, trans)


def render_sequence(spec: DomainSpec, t: int) -> LabeledSample:
    """Frame pair (target t, reference t-1) with target depth and relative camera.

    The scene is static over the interval; the camera moves by the motion
    profile (translation plus roll about the optical axis), so the planes stay
    fronto-parallel in both frames.
    """
    if t < 1:
        raise ValueError("sequence frame index must be >= 1")
    placed = _scene(spec, float(t - 1))
    cam = gt_camera(spec, t)
    h, w = spec.height, spec.width
    tz = float(np.asarray(cam.translation)[2])

    def coords(depth):
        zt = depth - tz
        with ad.no_grad():
            xr, yr, _ = project_coords(Tensor(np.full((1, 1, h, w), zt, dtype=np.float32)), cam)
        return xr.data[0, 0], yr.data[0, 0], np.full((h, w), zt)

    target, depth, valid, ref = _synthesize(spec, placed, coords)
    gt_cam = cam.values()
    return LabeledSample(SFM, (target, ref), depth.astype(np.float32), valid, spec.domain_id, spec.distribution, t,
                         gt_depth=depth.astype(np.float32), gt_cam=gt_cam)


def render(spec: DomainSpec, idx: int, mode: str) -> LabeledSample:
    if mode == STEREO:
        return render_stereo(spec, idx)
    if mode == SFM:
        return render_sequence(spec, idx)
    raise ValueError(f"unknown mode {mode!r}")


# --------------------------------------------------------------------------
# distributions, domains and stream plans


@dataclass
class StreamPlan:
    """Ordered (domain, first frame, end frame) blocks."""

    phase: str
    blocks: List[Tuple[DomainSpec, int, int]] = field(default_factory=list)

    def __iter__(self) -> Iterator[Tuple[DomainSpec, int]]:
        for spec, start, stop in self.blocks:
            for i in range(start, stop):
                yield spec, i

    def __len__(self) -> int:
        return sum(stop - start for _, start, stop in self.blocks)

    def domains(self) -> List[str]:
        return [spec.domain_id for spec, _, _ in self.blocks]


@dataclass
class Benchmark:
    pretrain: StreamPlan
    online: StreamPlan
    eval_sets: Dict[str, List[Tuple[DomainSpec, int]]]  # domain id -> eval frames
    domains: Dict[str, DomainSpec]
    online_distribution: str

    def other_distribution(self) -> str:
        return "A" if self.online_distribution == "B" else "B"


# distribution-level ranges
_DISTRIBUTIONS = {
    "A": dict(  # near / indoor-like: high-frequency texture, strong haze cue
        depth=(2.0, 8.0),
        baseline=0.5,
        period=(0.08, 0.2),
        slope=(1.6, 2.0),
        haze=(10.0, 22.0),
        brightness=(0.35, 0.6),
        objects=(3, 6),
        drift=(0.3, 0.9),
        motion=(0.04, 0.02, 0.08, 0.01),
    ),
    "B": dict(  # far / outdoor-like: low-frequency texture, weak haze cue
        depth=(10.0, 80.0),
        baseline=2.0,  # wider rig for the far field
        period=(1.0, 3.0),
        slope=(0.8, 1.2),
        haze=(150.0, 400.0),
        brightness=(0.45, 0.75),
        objects=(3, 6),
        drift=(0.2, 0.6),
        motion=(0.4, 0.2, 0.9, 0.008),
    ),
}


def make_domain(distribution: str, index: int, world_seed: int, width: int = 64, height: int = 48,
                n_frames: int = 600) -> DomainSpec:
    cfg = _DISTRIBUTIONS[distribution]
    ss = np.random.SeedSequence([world_seed, ord(distribution), index])
    rng = np.random.default_rng(ss)
    near, far = cfg["depth"]
    # each domain covers a sub-band of the distribution's depth regime
    lo = near * (far / near) ** rng.uniform(0.0, 0.3)
    hi = far * (near / far) ** rng.uniform(0.0, 0.2)
    p0 = rng.uniform(*cfg["period"])
    haze_rgb = tuple(float(v) for v in np.clip(rng.uniform(0.4, 0.9) + rng.uniform(-0.1, 0.1, 3), 0, 1))
    mx, my, mz, mr = cfg["motion"]
    return DomainSpec(
        domain_id=f"{distribution}{index}",
        distribution=distribution,
        seed=int(ss.generate_state(1)[0]),
        width=width,
        height=height,
        focal=float(width),
        baseline=cfg["baseline"],
        depth_near=float(lo),
        depth_far=float(hi),
        n_objects=int(rng.integers(cfg["objects"][0], cfg["objects"][1] + 1)),
        texture_period=(p0, p0 * rng.uniform(1.3, 2.0)),
        texture_slope=float(rng.uniform(*cfg["slope"])),
        contrast=float(rng.uniform(0.3, 0.5)),
        brightness=float(rng.uniform(*cfg["brightness"])),
        haze_depth=float(rng.uniform(*cfg["haze"])),
        haze_color=haze_rgb,
        drift=float(rng.uniform(*cfg["drift"])),
        wobble=0.1,
        motion=(float(mx * rng.uniform(-1, 1)), float(my * rng.uniform(-1, 1)),
                float(mz * rng.uniform(0.3, 1.0)), float(mr * rng.uniform(-1, 1))),
        n_frames=n_frames,
    )


def make_benchmark(
    seed: int = 0,
    width: int = 64,
    height: int = 48,
    frames_per_domain: int = 600,
    domains_per_distribution: int = 6,
    online_distribution: str = "B",
    eval_frames_per_domain: Optional[int] = None,
    mode: str = STEREO,
) -> Benchmark:
    """Two distributions, half of each one's domains for pre-training and the
    other half of ``online_distribution`` streamed online.  The last 10% of
    every domain's frames are held out for evaluation."""
    if online_distribution not in _DISTRIBUTIONS:
        raise ValueError(f"unknown distribution {online_distribution!r}")
    first = 1 if mode == SFM else 0
    n_train = int(round(frames_per_domain * 0.9))
    domains: Dict[str, DomainSpec] = {}
    pre_blocks, online_blocks = [], []
    eval_sets: Dict[str, List[Tuple[DomainSpec, int]]] = {}
    half = domains_per_distribution // 2
    for dist in ("A", "B"):
        for i in range(domains_per_distribution):
            spec = make_domain(dist, i, seed, width, height, frames_per_domain)
            domains[spec.domain_id] = spec
            held = list(range(n_train, frames_per_domain))
            if eval_frames_per_domain is not None and eval_frames_per_domain < len(held):
                sel = np.linspace(0, len(held) - 1, eval_frames_per_domain).round().astype(int)
                held = [held[j] for j in sel]
            eval_sets[spec.domain_id] = [(spec, j) for j in held]
            if i < half:
                pre_blocks.append((spec, first, n_train))
            elif dist == online_distribution:
                online_blocks.append((spec, first, n_train))
    return Benchmark(
        StreamPlan("pretrain", pre_blocks),
        StreamPlan("online", online_blocks),
        eval_sets,
        domains,
        online_distribution,
    )


# --------------------------------------------------------------------------
# file export


def write_ppm(path, image: np.ndarray) -> None:
    """Binary P6 pixmap from a 3×H×W float image in [0, 1]."""
    arr = (np.clip(image, 0, 1) * 255.0 + 0.5).astype(np.uint8).transpose(1, 2, 0)
    h, w = arr.shape[:2]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(arr.tobytes())


def read_ppm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        data = fh.read()
    parts = data.split(maxsplit=4)
    if parts[0] != b"P6":
        raise ValueError(f"{path}: not a binary PPM")
    w, h, _ = int(parts[1]), int(parts[2]), int(parts[3])
    arr = np.frombuffer(parts[4][: w * h * 3], dtype=np.uint8).reshape(h, w, 3)
    return arr.transpose(2, 0, 1).astype(np.float32) / 255.0


def write_pfm(path, field_: np.ndarray) -> None:
    """Grayscale portable float map, little-endian (negative scale), rows bottom-up."""
    arr = np.asarray(field_, dtype="<f4")
    h, w = arr.shape
    with open(path, "wb") as fh:
        fh.write(f"Pf\n{w} {h}\n-1.0\n".encode("ascii"))
        fh.write(np.ascontiguousarray(arr[::-1]).tobytes())


def read_pfm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        header = fh.readline().strip()
        if header != b"Pf":
            raise ValueError(f"{path}: not a grayscale PFM")
        w, h = (int(v) for v in fh.readline().split())
        scale = float(fh.readline())
        dtype = "<f4" if scale < 0 else ">f4"
        arr = np.frombuffer(fh.read(w * h * 4), dtype=dtype).reshape(h, w)
    return arr[::-1].astype(np.float32)


def export_plan(plan: StreamPlan, mode: str, out_dir, limit: Optional[int] = None) -> str:
    """Write frames, ground truth and an ``index.csv`` for a plan."""
    os.makedirs(out_dir, exist_ok=True)
    index_path = os.path.join(out_dir, "index.csv")
    with open(index_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "domain_id", "distribution_id", "frame_0", "frame_1", "ground_truth"])
        for step, (spec, idx) in enumerate(plan):
            if limit is not None and step >= limit:
                break
            s = render(spec, idx, mode)
            stem = f"{step:06d}_{spec.domain_id}_{idx:05d}"
            names = [f"{stem}_0.ppm", f"{stem}_1.ppm", f"{stem}_gt.pfm"]
            write_ppm(os.path.join(out_dir, names[0]), s.frames[0])
            write_ppm(os.path.join(out_dir, names[1]), s.frames[1])
            write_pfm(os.path.join(out_dir, names[2]), s.gt)
            writer.writerow([step, spec.domain_id, spec.distribution] + names)
    return index_path


def sample_digest(sample: LabeledSample) -> str:
    h = hashlib.sha256()
    for f in sample.frames:
        h.update(f.tobytes())
    h.update(sample.gt.tobytes())
    return h.hexdigest()
