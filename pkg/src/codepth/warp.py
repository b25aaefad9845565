"""Differentiable view synthesis: stereo and rigid-motion (SfM) backward warps."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple, Union

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

Scalar = Union[Tensor, float]


@dataclass
class CameraParams:
    """Pinhole intrinsics plus the rigid motion taking target-frame points to
    the reference frame: ``P_ref = R(rotation) @ P_tgt + translation``.

    Fields may be plain floats or scalar tensors (network outputs).
    """

    fx: Scalar
    fy: Scalar
    cx: Scalar
    cy: Scalar
    rotation: Union[Tensor, np.ndarray]
    translation: Union[Tensor, np.ndarray]

    def values(self) -> dict:
        def f(v):
            return v.item() if isinstance(v, Tensor) else float(v)

        def vec(v):
            return (v.data if isinstance(v, Tensor) else np.asarray(v, dtype=np.float64)).astype(np.float64).ravel()

        return {
            "fx": f(self.fx),
            "fy": f(self.fy),
            "cx": f(self.cx),
            "cy": f(self.cy),
            "rotation": vec(self.rotation),
            "translation": vec(self.translation),
        }


@dataclass
class WarpResult:
    reconstructed: Tensor
    valid_mask: np.ndarray  # 1×1×H×W float32 of 0/1


def bilinear_sample(src: np.ndarray, x: float, y: float) -> Tuple[np.ndarray, bool]:
    """Sample a C×H×W array at one point; out of bounds gives (zeros, False)."""
    vals, valid, _ = ad.gather_numpy(np.asarray(src), np.array([x]), np.array([y]))
    return vals[:, 0], bool(valid[0])


def pixel_grid(h: int, w: int) -> Tuple[np.ndarray, np.ndarray]:
    ys, xs = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    return xs, ys


def _as_image(t: Tensor, what: str) -> None:
    if t.data.ndim != 4 or t.shape[0] != 1:
        raise ad.ShapeError(f"{what}: expected a 1×C×H×W tensor, got {t.shape}")


def warp_stereo(left: Tensor, disparity: Tensor) -> WarpResult:
    """Reconstruct the right view: ``right(x, y) = left(x + d(x, y), y)``."""
    _as_image(left, "warp_stereo")
    _as_image(disparity, "warp_stereo")
    if left.shape[2:] != disparity.shape[2:] or disparity.shape[1] != 1:
        raise ad.ShapeError(f"warp_stereo: image {left.shape} and disparity {disparity.shape} disagree")
    h, w = left.shape[2:]
    xs, ys = pixel_grid(h, w)
    gx = ad.add(disparity, Tensor(xs[None, None]))
    gy = Tensor(ys[None, None])
    out, valid = ad.bilinear_gather(left, gx, gy)
    return WarpResult(out, valid[None, None].astype(np.float32))


# --------------------------------------------------------------------------
# rotation


def _skew(v: np.ndarray) -> np.ndarray:
    return np.array([[0.0, -v[2], v[1]], [v[2], 0.0, -v[0]], [-v[1], v[0], 0.0]])


def _rodrigues_terms(r: np.ndarray):
    theta = float(np.sqrt(r @ r))
    t2 = theta * theta
    if theta < 1e-4:
        a = 1.0 - t2 / 6.0
        b = 0.5 - t2 / 24.0
        da = -1.0 / 3.0 + t2 / 30.0  # A'(theta) / theta
        db = -1.0 / 12.0 + t2 / 180.0  # B'(theta) / theta
    else:
        s, c = np.sin(theta), np.cos(theta)
        a = s / theta
        b = (1.0 - c) / t2
        da = (theta * c - s) / (t2 * theta)
        db = (theta * s - 2.0 * (1.0 - c)) / (t2 * t2)
    return a, b, da, db


def rotation_matrix(r: np.ndarray) -> np.ndarray:
    """Axis-angle to rotation matrix (Rodrigues), float64."""
    r = np.asarray(r, dtype=np.float64).ravel()
    a, b, _, _ = _rodrigues_terms(r)
    k = _skew(r)
    return np.eye(3) + a * k + b * (k @ k)


def rodrigues(r: Tensor) -> Tensor:
    """Differentiable axis-angle (3,) to rotation matrix (3, 3)."""
    rv = r.data.astype(np.float64).ravel()
    if rv.size != 3:
        raise ad.ShapeError(f"rodrigues: expected 3 components, got {r.shape}")
    a, b, da, db = _rodrigues_terms(rv)
    k = _skew(rv)
    k2 = k @ k
    out = np.eye(3) + a * k + b * k2

    def backward(g):
        g = g.astype(np.float64)
        grad = np.zeros(3)
        for i in range(3):
            e = _skew(np.eye(3)[i])
            d_r = da * rv[i] * k + a * e + db * rv[i] * k2 + b * (e @ k + k @ e)
            grad[i] = np.sum(g * d_r)
        return (grad.reshape(r.shape),)

    return ad.make_op(out, (r,), backward)


# --------------------------------------------------------------------------
# rigid warp


def _scalar(v: Scalar) -> Tensor:
    return v if isinstance(v, Tensor) else Tensor(np.float64(v))


def _vector(v) -> Tensor:
    return v if isinstance(v, Tensor) else Tensor(np.asarray(v, dtype=np.float64).reshape(3))


def project_coords(depth: Tensor, cam: CameraParams) -> Tuple[Tensor, Tensor, Tensor]:
    """Back-project every target pixel with ``depth``, move it into the
    reference frame and project.  Returns (x_ref, y_ref, z_ref) tensors."""
    h, w = depth.shape[2:]
    us, vs = pixel_grid(h, w)
    u = Tensor(us[None, None])
    v = Tensor(vs[None, None])
    fx, fy, cx, cy = (_scalar(c) for c in (cam.fx, cam.fy, cam.cx, cam.cy))
    rot = rodrigues(_vector(cam.rotation))
    tr = _vector(cam.translation)
    a = (u - cx) / fx
    b = (v - cy) / fy
    px = a * depth
    py = b * depth
    pz = depth
    q = []
    for i in range(3):
        qi = rot[i, 0] * px + rot[i, 1] * py + rot[i, 2] * pz + tr[i]
        q.append(qi)
    qz_safe = q[2]
    bad = q[2].data <= 1e-6
    if bad.any():
        # keep the division finite; these pixels are masked out below
        fix = np.where(bad, 1.0 - q[2].data, 0.0)
        qz_safe = q[2] + Tensor(fix)
    # pixel plus displacement: equals fx*qx/qz + cx, but an identity pose
    # yields a displacement of exactly zero, so border pixels stay in view
    x_ref = u + fx * (q[0] - a * qz_safe) / qz_safe
    y_ref = v + fy * (q[1] - b * qz_safe) / qz_safe
    return x_ref, y_ref, q[2]


def warp_sfm(ref: Tensor, depth: Tensor, cam: CameraParams) -> WarpResult:
    """Reconstruct the target frame from the reference frame, the target's
    depth and the relative camera ``cam``."""
    _as_image(ref, "warp_sfm")
    _as_image(depth, "warp_sfm")
    if ref.shape[2:] != depth.shape[2:] or depth.shape[1] != 1:
        raise ad.ShapeError(f"warp_sfm: image {ref.shape} and depth {depth.shape} disagree")
    if not np.all(depth.data > 0):
        raise ValueError("warp_sfm: depth must be strictly positive everywhere")
    x_ref, y_ref, z_ref = project_coords(depth, cam)
    out, valid = ad.bilinear_gather(ref, x_ref, y_ref)
    in_front = z_ref.data[0, 0] > 1e-6
    if not in_front.all():
        valid = valid & in_front
        out = ad.mul(out, Tensor(np.broadcast_to(valid, out.shape[1:])[None]))
    return WarpResult(out, valid[None, None].astype(np.float32))


def disparity_to_depth(disparity, focal: float, baseline: float):
    """``depth = focal * baseline / disparity``; accepts arrays or tensors."""
    data = disparity.data if isinstance(disparity, Tensor) else np.asarray(disparity)
    if np.any(data <= 0):
        raise ValueError("disparity_to_depth: disparity must be strictly positive")
    if isinstance(disparity, Tensor):
        return ad.div(float(focal * baseline), disparity)
    return focal * baseline / data


def depth_to_disparity(depth, focal: float, baseline: float):
    data = depth.data if isinstance(depth, Tensor) else np.asarray(depth)
    if np.any(data <= 0):
        raise ValueError("depth_to_disparity: depth must be strictly positive")
    if isinstance(depth, Tensor):
        return ad.div(float(focal * baseline), depth)
    return focal * baseline / data
