"""Magnitude-importance regularisation weighted by boundary evidence.

Importance of a parameter is the magnitude of its previous value.  The
penalty is the importance-weighted L1 distance to the previous values and
enters the objective scaled by ``gamma * D``.

The anchor is the parameter state one optimizer step back.  The training
loop keeps that lag: it snapshots the parameters *before* each update and
installs that snapshot as the anchor for the next step, so the penalty acts
on the displacement produced by the most recent update.
"""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass
from typing import Dict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


@dataclass
class ImportanceSnapshot:
    theta_prev: Dict[str, np.ndarray]
    omega: Dict[str, np.ndarray]


def snapshot(params: "OrderedDict[str, Tensor]") -> ImportanceSnapshot:
    theta = OrderedDict((k, p.data.copy()) for k, p in params.items())
    return ImportanceSnapshot(theta, OrderedDict((k, np.abs(v)) for k, v in theta.items()))


def reg_loss(params: "OrderedDict[str, Tensor]", snap: ImportanceSnapshot) -> Tensor:
    """``sum_i omega_i * |theta_i - theta_prev_i|`` over every parameter."""
    names = list(params)
    for k in names:
        if k not in snap.theta_prev:
            raise ad.ShapeError(f"reg_loss: parameter {k!r} missing from snapshot")
        if snap.theta_prev[k].shape != params[k].shape:
            raise ad.ShapeError(
                f"reg_loss: parameter {k!r} has shape {params[k].shape}, snapshot {snap.theta_prev[k].shape}"
            )
    diffs = [params[k].data.astype(np.float64) - snap.theta_prev[k] for k in names]
    total = sum(float(np.sum(snap.omega[k] * np.abs(d))) for k, d in zip(names, diffs))

    def backward(g):
        g = float(np.asarray(g).reshape(()))
        return [g * snap.omega[k] * np.sign(d) for k, d in zip(names, diffs)]

    return ad.make_op(np.asarray(total), [params[k] for k in names], backward)


def total_loss(task: Tensor, d: float, reg: Tensor, gamma: float) -> Tensor:
    """``task + gamma * D * reg``."""
    if d < 0 or gamma < 0:
        raise ValueError("total_loss: D and gamma must be non-negative")
    return task + (gamma * d) * reg
