"""Pixel-based inverse lithography by gradient descent.

The mask is relaxed as ``M = sigmoid(theta * p)`` over unconstrained
parameters ``p`` and the printed image uses the sigmoid resist, so the
objective ``F = sum (Z - Z_t)^2`` is smooth in ``p``.
"""

from __future__ import annotations

import csv
import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, logit

from .layout import MaskGrid
from .litho import (
    LithoContext,
    PrintedImage,
    _fields,
    intensity_adjoint,
    intensity_from_fields,
    mse,
    resist_threshold,
)

INIT_CLAMP = (0.05, 0.95)


class IltDivergence(RuntimeError):
    def __init__(self, iteration: int, message: str = "objective became NaN"):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration


@dataclass(frozen=True)
class IltConfig:
    max_iters: int = 200
    step_size: float = 1.0
    mask_steepness: float = 4.0
    stop_tol: float = 1e-5
    line_search: bool = True
    max_halvings: int = 10
    binarization_weight: float = 0.05

    def __post_init__(self):
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")
        if self.step_size <= 0 or self.mask_steepness <= 0:
            raise ValueError("step_size and mask_steepness must be positive")
        if self.stop_tol < 0:
            raise ValueError("stop_tol must be >= 0")
        if self.binarization_weight < 0:
            raise ValueError("binarization_weight must be >= 0")


@dataclass(frozen=True, eq=False)
class MaskParams:
    params: np.ndarray
    steepness: float = 4.0

    @property
    def mask(self) -> np.ndarray:
        return expit(self.steepness * self.params)

    @classmethod
    def from_target(cls, target, steepness: float = 4.0) -> "MaskParams":
        t = np.clip(_values(target), *INIT_CLAMP)
        return cls(logit(t) / steepness, steepness)

    @classmethod
    def dark(cls, shape, steepness: float = 4.0, level: float = 1e-9) -> "MaskParams":
        return cls(np.full(shape, logit(level) / steepness), steepness)


@dataclass(eq=False)
class OpcResult:
    """One engine run on one design (a row of the benchmark table)."""

    mask: MaskGrid
    printed: PrintedImage
    mse: float
    runtime: float
    engine: str
    iterations: int
    objective: float = math.nan
    trace: list = field(default_factory=list)
    params: np.ndarray | None = None
    info: dict = field(default_factory=dict)


def _values(x) -> np.ndarray:
    return x.values if hasattr(x, "values") else np.asarray(x, dtype=float)


def _check_target(target, ctx: LithoContext) -> np.ndarray:
    tv = _values(target)
    if not np.all((tv == 0) | (tv == 1)):
        raise ValueError("ILT target must be binary")
    pitch = getattr(target, "pitch", ctx.pitch)
    if abs(float(pitch) - ctx.pitch) > 1e-9:
        raise ValueError(f"target pitch {pitch} != kernel pitch {ctx.pitch}")
    return tv


def _params(p, steepness: float) -> MaskParams:
    return p if isinstance(p, MaskParams) else MaskParams(np.asarray(p, dtype=float), steepness)


# ---------------------------------------------------------------- objective

def _resist_response(mask: np.ndarray, ctx: LithoContext):
    fields = _fields(mask, ctx.kernels)
    intensity = intensity_from_fields(fields, ctx.kernels)
    z = expit(ctx.resist.steepness * (intensity - ctx.resist.threshold))
    return z, fields


def _dz_to_dm(dz: np.ndarray, z: np.ndarray, fields, ctx: LithoContext) -> np.ndarray:
    grad_i = dz * ctx.resist.steepness * z * (1.0 - z)
    return intensity_adjoint(grad_i, fields, ctx.kernels)


def _penalty(m: np.ndarray) -> float:
    return float(np.sum(4.0 * m * (1.0 - m)))


def ilt_objective(p, target, ctx: LithoContext, steepness: float = 4.0,
                  binarization_weight: float = 0.0) -> float:
    """F = ||Z_t - Z||^2 with Z the relaxed print of the relaxed mask.

    A nonzero ``binarization_weight`` adds ``weight * sum 4 M (1 - M)``,
    which vanishes on binary masks.
    """
    mp = _params(p, steepness)
    m = mp.mask
    z, _ = _resist_response(m, ctx)
    f = float(np.sum((z - _values(target)) ** 2))
    if binarization_weight:
        f += binarization_weight * _penalty(m)
    return f


def _objective_and_gradient(p: np.ndarray, t: np.ndarray, ctx: LithoContext, theta: float,
                            gamma: float = 0.0):
    m = expit(theta * p)
    z, fields = _resist_response(m, ctx)
    diff = z - t
    f = float(np.sum(diff * diff))
    dm = _dz_to_dm(2.0 * diff, z, fields, ctx)
    if gamma:
        f += gamma * _penalty(m)
        dm = dm + gamma * 4.0 * (1.0 - 2.0 * m)
    return f, dm * theta * m * (1.0 - m)


def ilt_gradient(p, target, ctx: LithoContext, steepness: float = 4.0,
                 binarization_weight: float = 0.0) -> np.ndarray:
    """dF/dp by the chain rule through both sigmoids and the convolutions."""
    mp = _params(p, steepness)
    return _objective_and_gradient(mp.params, _values(target), ctx, mp.steepness, binarization_weight)[1]


# ------------------------------------------------------------------- driver

def _descend(f_only, f_and_g, x0, cfg: IltConfig, trace_path=None):
    """Gradient descent with optional backtracking; returns (x, F, trace, iters).

    Backtracking halves the step up to ``cfg.max_halvings`` times and only
    accepts a strict decrease. Each search starts from twice the previously
    accepted step, capped at ``cfg.step_size``.
    """
    start = time.perf_counter()
    x = x0
    fx, g = f_and_g(x)
    if not math.isfinite(fx):
        raise IltDivergence(0)
    trace = [(0, fx, 0.0, 0.0)]
    step = cfg.step_size
    iters = 0
    for it in range(1, cfg.max_iters + 1):
        if cfg.line_search:
            t = min(cfg.step_size, 2.0 * step)
            accepted = None
            for _ in range(cfg.max_halvings + 1):
                xn = x - t * g
                fn = f_only(xn)
                if math.isnan(fn):
                    raise IltDivergence(it)
                if fn < fx:
                    accepted = (xn, fn)
                    break
                t *= 0.5
            if accepted is None:
                break
            xn, fn = accepted
            step = t
        else:
            t = cfg.step_size
            xn = x - t * g
            fn = f_only(xn)
            if math.isnan(fn):
                raise IltDivergence(it)
        rel = (fx - fn) / max(abs(fx), 1e-300)
        x, fx = xn, fn
        iters = it
        trace.append((it, fx, t, time.perf_counter() - start))
        if rel < cfg.stop_tol or it == cfg.max_iters:
            break
        fx_check, g = f_and_g(x)
        if math.isnan(fx_check):
            raise IltDivergence(it)
    if trace_path is not None:
        write_trace(trace_path, trace)
    return x, fx, trace, iters


def write_trace(path, trace) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "objective", "step", "wall_time"])
        for it, f, step, wall in trace:
            w.writerow([it, repr(float(f)), repr(float(step)), f"{wall:.6f}"])


def _finish(engine, target, mask_values, printed, runtime, iters, fx, trace, params, pitch, origin, **info):
    return OpcResult(
        mask=MaskGrid(mask_values, pitch, origin),
        printed=printed,
        mse=mse(printed, target),
        runtime=runtime,
        engine=engine,
        iterations=iters,
        objective=fx,
        trace=trace,
        params=params,
        info=info,
    )


def run_ilt(target: MaskGrid, cfg: IltConfig, ctx: LithoContext, trace_path=None) -> OpcResult:
    """Single-mask ILT starting from the (clamped) target."""
    t0 = time.perf_counter()
    tv = _check_target(target, ctx)
    theta = cfg.mask_steepness
    gamma = cfg.binarization_weight
    p0 = MaskParams.from_target(tv, theta).params

    def f_only(p):
        m = expit(theta * p)
        z, _ = _resist_response(m, ctx)
        f = float(np.sum((z - tv) ** 2))
        return f + gamma * _penalty(m) if gamma else f

    p, fx, trace, iters = _descend(f_only, lambda p: _objective_and_gradient(p, tv, ctx, theta, gamma),
                                   p0, cfg, trace_path)
    binary = (expit(theta * p) >= 0.5).astype(float)
    printed = ctx.simulate(binary, "hard")
    return _finish("ILT", tv, binary, printed, time.perf_counter() - t0, iters, fx, trace, p,
                   target.pitch, target.origin)


# -------------------------------------------------------------- double mask

def dual_print(za: np.ndarray, zb: np.ndarray) -> np.ndarray:
    """Relaxed OR of two exposures: 1 - (1 - za)(1 - zb)."""
    return 1.0 - (1.0 - za) * (1.0 - zb)


def dual_objective(pa, pb, target, ctx: LithoContext, steepness: float = 4.0,
                   binarization_weight: float = 0.0) -> float:
    a = _params(pa, steepness)
    b = _params(pb, steepness)
    x = np.stack([a.params, b.params])
    return _dual_objective_and_gradient(x, _values(target), ctx, a.steepness, binarization_weight,
                                        need_grad=False)[0]


def _dual_objective_and_gradient(x: np.ndarray, t: np.ndarray, ctx: LithoContext, theta: float,
                                 gamma: float = 0.0, need_grad: bool = True):
    ma = expit(theta * x[0])
    mb = expit(theta * x[1])
    za, fa = _resist_response(ma, ctx)
    zb, fb = _resist_response(mb, ctx)
    diff = dual_print(za, zb) - t
    f = float(np.sum(diff * diff))
    if gamma:
        f += gamma * (_penalty(ma) + _penalty(mb))
    if not need_grad:
        return f, None
    dma = _dz_to_dm(2.0 * diff * (1.0 - zb), za, fa, ctx)
    dmb = _dz_to_dm(2.0 * diff * (1.0 - za), zb, fb, ctx)
    if gamma:
        dma = dma + gamma * 4.0 * (1.0 - 2.0 * ma)
        dmb = dmb + gamma * 4.0 * (1.0 - 2.0 * mb)
    return f, np.stack([dma * theta * ma * (1.0 - ma), dmb * theta * mb * (1.0 - mb)])


def dual_gradient(pa, pb, target, ctx: LithoContext, steepness: float = 4.0,
                  binarization_weight: float = 0.0) -> tuple[np.ndarray, np.ndarray]:
    a = _params(pa, steepness)
    b = _params(pb, steepness)
    _, g = _dual_objective_and_gradient(np.stack([a.params, b.params]), _values(target), ctx,
                                        a.steepness, binarization_weight)
    return g[0], g[1]


def decompose_target(target, min_space_px: float) -> tuple[np.ndarray, np.ndarray]:
    """Split a binary target into two masks by 2-colouring close components.

    Components closer than ``min_space_px`` (Chebyshev gap) get different
    colours where possible; greedy in raster order of first pixel.
    """
    from scipy import ndimage

    tv = _values(target) > 0.5
    labels, n = ndimage.label(tv)
    if n == 0:
        return tv.astype(float), np.zeros_like(tv, dtype=float)
    reach = int(math.ceil(min_space_px))
    grown = [ndimage.binary_dilation(labels == i, iterations=reach) if reach > 0 else labels == i
             for i in range(1, n + 1)]
    colour = [0] * n
    for i in range(n):
        used = {colour[j] for j in range(i) if np.any(grown[i] & (labels == j + 1))}
        colour[i] = 0 if 0 not in used else (1 if 1 not in used else 0)
    a = np.isin(labels, [i + 1 for i in range(n) if colour[i] == 0])
    b = np.isin(labels, [i + 1 for i in range(n) if colour[i] == 1])
    return a.astype(float), b.astype(float)


def run_dual_ilt(target: MaskGrid, cfg: IltConfig, ctx: LithoContext, init: str = "warm",
                 warm_start: OpcResult | None = None, trace_path=None):
    """Joint optimisation of two exposures printed as a relaxed OR.

    ``init="warm"`` embeds the single-mask optimum (run here unless
    ``warm_start`` supplies it) as the first exposure with a dark second
    exposure, so the joint search starts inside the single-mask solution
    set. ``init="decompose"`` starts from a 2-colouring of the target.

    Returns (combined result, first mask, second mask).
    """
    t0 = time.perf_counter()
    tv = _check_target(target, ctx)
    theta = cfg.mask_steepness
    if init == "warm":
        if warm_start is None:
            warm_start = run_ilt(target, cfg, ctx)
        pa = warm_start.params
        pb = MaskParams.dark(tv.shape, theta).params
    elif init == "decompose":
        spacing = ctx.kernels.radius / 2.0
        a, b = decompose_target(tv, spacing)
        pa = MaskParams.from_target(a, theta).params
        pb = MaskParams.from_target(b, theta).params
    else:
        raise ValueError(f"unknown init {init!r}")

    gamma = cfg.binarization_weight
    x, fx, trace, iters = _descend(
        lambda x: _dual_objective_and_gradient(x, tv, ctx, theta, gamma, need_grad=False)[0],
        lambda x: _dual_objective_and_gradient(x, tv, ctx, theta, gamma),
        np.stack([pa, pb]), cfg, trace_path)
    ma = (expit(theta * x[0]) >= 0.5).astype(float)
    mb = (expit(theta * x[1]) >= 0.5).astype(float)
    pa_hard = ctx.simulate(ma, "hard").values
    pb_hard = ctx.simulate(mb, "hard").values
    printed = PrintedImage(np.maximum(pa_hard, pb_hard), "hard")
    mask_a = MaskGrid(ma, target.pitch, target.origin)
    mask_b = MaskGrid(mb, target.pitch, target.origin)
    result = _finish("ILT-DUAL", tv, ma, printed, time.perf_counter() - t0, iters, fx, trace, x,
                     target.pitch, target.origin, init=init)
    return result, mask_a, mask_b
