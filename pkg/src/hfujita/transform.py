"""Change of variables taking the degenerate equation u_t = u^q Delta_H u + u^p
(0 <= q < 1) to the porous medium equation v_t = Delta_H v^m + v^sigma:

    v(t, eta) = a u(t, delta_b eta)^(1-q).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.interpolate import RegularGridInterpolator

from .analytic import CutoffSpec
from .hgeom import ScalarField, UniformGrid
from .solver import DEGENERATE, RunRecord, weak_residual_frames


class TransformDomainError(ValueError):
    pass


@dataclass(frozen=True)
class TransformParams:
    q: float
    p: float
    a: float
    b: float
    m: float
    sigma: float


def map_params(q: float, p: float) -> TransformParams:
    if q >= 1:
        raise ValueError("the transform needs q < 1")
    if not (q >= 0 and p > 1):
        raise ValueError(f"need 0 <= q < 1 and p > 1, got q={q}, p={p}")
    r = 1.0 - q
    a = r ** (r / (p - 1.0))
    b = r ** ((p - 1.0 - q) / (2.0 * (p - 1.0)))
    return TransformParams(q, p, a, b, 1.0 / r, (p - q) / r)


def critical_p(q: float, Q: int = 4) -> float:
    return q + 1.0 + 2.0 * (1.0 - q) / Q


def target_grid(source: UniformGrid, tp: TransformParams) -> UniformGrid:
    """Source grid scaled by 1/b: delta_b maps its nodes onto source nodes."""
    return source.scaled(1.0 / tp.b)


def _resample(values: np.ndarray, source: UniformGrid, target: UniformGrid, b: float) -> np.ndarray:
    d = 2 * source.n + 1
    axes = [source.axis(k) for k in range(d)]
    pts = np.stack(np.meshgrid(*[target.axis(k) for k in range(d)], indexing="ij"), axis=-1)
    scale = np.array([b] * (2 * source.n) + [b * b])
    img = pts * scale
    hi = np.array([ax[-1] for ax in axes])
    over = np.abs(img) - hi
    if np.any(over > 1e-9 * hi):
        raise TransformDomainError("delta_b image of the target box escapes the source box")
    img = np.clip(img, -hi, hi)
    interp = RegularGridInterpolator(axes, values, method="linear")
    return interp(img.reshape(-1, d)).reshape(target.shape)


def map_values(u: np.ndarray, source: UniformGrid, tp: TransformParams, target: UniformGrid | None = None):
    target = target_grid(source, tp) if target is None else target
    if np.any(u < 0):
        raise ValueError("map_field needs u >= 0")
    if tp.b == 1.0 and target == source:
        w = u
    else:
        w = _resample(u, source, target, tp.b)
    r = 1.0 - tp.q
    return tp.a * (w if r == 1.0 else np.power(np.clip(w, 0.0, None), r)), target


def map_field(u: ScalarField, tp: TransformParams, target: UniformGrid | None = None) -> ScalarField:
    v, tgt = map_values(u.values, u.grid, tp, target)
    return ScalarField(tgt, v)


def transform_residual(run_u: RunRecord, tp: TransformParams, cutoff: CutoffSpec,
                       time_scale: float | None = None) -> float:
    """Porous-medium weak-form defect of the mapped frames of a degenerate run."""
    p = run_u.params
    if p.equation != DEGENERATE or p.q != tp.q or p.p != tp.p:
        raise ValueError("record does not match the transform exponents")
    if not run_u.frames:
        raise ValueError("record has no stored frames")
    target = target_grid(run_u.grid, tp)
    frames = [(t, map_values(u, run_u.grid, tp, target)[0]) for t, u in run_u.frames]
    T = 2.0 * frames[-1][0] if time_scale is None else time_scale
    return weak_residual_frames(frames, target, tp.m, tp.sigma, cutoff, T, p.reaction)
