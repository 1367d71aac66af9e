"""Forward lithography model: optical kernels, aerial image, resist, MSE.

Imaging follows the sum-of-coherent-systems form

    I = s * sum_k w_k |M (*) h_k|^2

with zero-padded (dark-field) linear convolution. ``s`` normalizes the
intensity so that an unbounded clear field images to 1; thresholds are
therefore expressed as a fraction of open-frame intensity.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.fft as sfft
from scipy.special import expit, j1, jn_zeros

from .layout import MaskGrid

DEFAULT_WEIGHTS = (0.6, 0.2, 0.12, 0.08)
BESSEL_J1_ZERO = float(jn_zeros(1, 1)[0])


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class OpticsConfig:
    wavelength: float = 193.0
    na: float = 0.85
    kernel_count: int = 4
    kernel_weights: tuple[float, ...] | None = None
    support_radius: int | None = None  # pixels; None -> twice the first dark ring
    pitch: float = 1.0

    def __post_init__(self):
        if not (0 < self.na <= 1):
            raise ConfigError(f"NA must be in (0, 1], got {self.na}")
        if self.wavelength <= 0:
            raise ConfigError("wavelength must be positive")
        if self.pitch <= 0:
            raise ConfigError("pitch must be positive")
        if int(self.kernel_count) != self.kernel_count or self.kernel_count < 1:
            raise ConfigError("kernel_count must be a positive integer")
        w = self.weights
        if len(w) != self.kernel_count:
            raise ConfigError(f"{self.kernel_count} kernels but {len(w)} weights")
        if any(v < 0 for v in w) or any(a < b for a, b in zip(w, w[1:])):
            raise ConfigError("kernel weights must be nonnegative and non-increasing")
        if sum(w) <= 0:
            raise ConfigError("kernel weights must not all be zero")

    @property
    def weights(self) -> tuple[float, ...]:
        if self.kernel_weights is not None:
            w = tuple(float(v) for v in self.kernel_weights)
        elif self.kernel_count == len(DEFAULT_WEIGHTS):
            w = DEFAULT_WEIGHTS
        else:
            w = tuple(0.5 ** k for k in range(self.kernel_count))
        total = sum(w)
        return tuple(v / total for v in w) if total > 0 else w

    @property
    def first_zero_nm(self) -> float:
        """Radius of the first dark ring of the coherent point-spread function."""
        return BESSEL_J1_ZERO * self.wavelength / (2 * np.pi * self.na)

    @property
    def radius_px(self) -> int:
        if self.support_radius is not None:
            return int(self.support_radius)
        return int(np.ceil(2.0 * self.first_zero_nm / self.pitch))


class KernelSet:
    """Immutable set of complex S x S kernels (centre at index S // 2)."""

    def __init__(self, kernels, weights, pitch: float = 1.0, scale: float = 1.0):
        k = np.array(kernels, dtype=complex)
        if k.ndim == 2:
            k = k[None]
        if k.ndim != 3 or k.shape[1] != k.shape[2] or k.shape[1] % 2 == 0:
            raise ConfigError(f"kernels must be K x S x S with odd S, got {k.shape}")
        w = np.array(weights, dtype=float).reshape(-1)
        if w.size != k.shape[0] or (w < 0).any():
            raise ConfigError("need one nonnegative weight per kernel")
        k.flags.writeable = False
        w.flags.writeable = False
        self.kernels = k
        self.weights = w
        self.pitch = float(pitch)
        self.scale = float(scale)
        self.is_real = bool(np.all(k.imag == 0))
        self._spectra: dict = {}
        self._lock = threading.Lock()

    @property
    def size(self) -> int:
        return self.kernels.shape[1]

    @property
    def radius(self) -> int:
        return self.size // 2

    def with_weights(self, weights) -> "KernelSet":
        return KernelSet(self.kernels, weights, self.pitch, self.scale)

    def spectra(self, shape: tuple[int, int]):
        """Padded FFT size and kernel spectra for an H x W mask (cached)."""
        key = tuple(shape)
        with self._lock:
            hit = self._spectra.get(key)
            if hit is not None:
                return hit
        h, w = key
        s = self.size
        pad = (sfft.next_fast_len(h + s - 1, real=self.is_real),
               sfft.next_fast_len(w + s - 1, real=self.is_real))
        if self.is_real:
            kr = self.kernels.real
            fwd = sfft.rfft2(kr, s=pad, axes=(-2, -1))
            adj = np.conj(fwd)
        else:
            fwd = sfft.fft2(self.kernels, s=pad, axes=(-2, -1))
            adj = np.conj(sfft.fft2(np.conj(self.kernels), s=pad, axes=(-2, -1)))
        entry = (pad, fwd, adj)
        with self._lock:
            self._spectra[key] = entry
        return entry


def synthesize_kernels(cfg: OpticsConfig) -> KernelSet:
    """Jinc point-spread function plus Gaussian-windowed variants.

    Kernel 1 is the coherent Airy amplitude ``2 J1(x) / x`` with
    ``x = 2 pi NA r / lambda``. Kernel k >= 2 is the same jinc under a
    Gaussian envelope of width ``(k / 2) * r0``, r0 being the first dark
    ring. Each kernel has unit L2 norm and is zero beyond the support.
    """
    r0_px = cfg.first_zero_nm / cfg.pitch
    R = cfg.radius_px
    if R < 3 or R < r0_px:
        raise ConfigError(
            f"support radius {R} px cannot hold the central Airy lobe ({r0_px:.2f} px)")
    ax = np.arange(-R, R + 1) * cfg.pitch
    xx, yy = np.meshgrid(ax, ax)
    r = np.hypot(xx, yy)
    x = 2 * np.pi * cfg.na * r / cfg.wavelength
    with np.errstate(invalid="ignore", divide="ignore"):
        jinc = np.where(x == 0, 1.0, 2 * j1(x) / np.where(x == 0, 1.0, x))
    inside = r <= R * cfg.pitch
    kernels = []
    for k in range(1, cfg.kernel_count + 1):
        h = jinc.copy()
        if k > 1:
            sigma = 0.5 * k * cfg.first_zero_nm
            h *= np.exp(-(r ** 2) / (2 * sigma ** 2))
        h[~inside] = 0.0
        h /= np.sqrt(np.sum(np.abs(h) ** 2))
        kernels.append(h)
    kernels = np.array(kernels, dtype=complex)
    w = np.array(cfg.weights)
    clear = float(np.sum(w * np.abs(kernels.sum(axis=(1, 2))) ** 2))
    return KernelSet(kernels, w, cfg.pitch, 1.0 / clear)


# ------------------------------------------------------------------ imaging

def _fields(mask: np.ndarray, ks: KernelSet) -> np.ndarray:
    """Coherent fields M (*) h_k cropped to the mask, shape K x H x W."""
    h, w = mask.shape
    pad, fwd, _ = ks.spectra((h, w))
    R = ks.radius
    if ks.is_real:
        spec = sfft.rfft2(mask, s=pad)
        full = sfft.irfft2(spec[None] * fwd, s=pad, axes=(-2, -1))
    else:
        spec = sfft.fft2(mask, s=pad)
        full = sfft.ifft2(spec[None] * fwd, axes=(-2, -1))
    return full[:, R:R + h, R:R + w]


def intensity_from_fields(fields: np.ndarray, ks: KernelSet) -> np.ndarray:
    if np.iscomplexobj(fields):
        mag = fields.real ** 2 + fields.imag ** 2
    else:
        mag = fields ** 2
    return ks.scale * np.tensordot(ks.weights, mag, axes=1)


def intensity_adjoint(grad_i: np.ndarray, fields: np.ndarray, ks: KernelSet) -> np.ndarray:
    """Gradient wrt a real mask given dF/dI and the forward fields."""
    h, w = grad_i.shape
    pad, _, adj = ks.spectra((h, w))
    R = ks.radius
    x = (2 * ks.scale) * ks.weights[:, None, None] * grad_i[None] * np.conj(fields)
    xp = np.zeros((x.shape[0],) + pad, dtype=x.dtype)
    xp[:, R:R + h, R:R + w] = x
    if ks.is_real:
        acc = np.sum(sfft.rfft2(xp.real, axes=(-2, -1)) * adj, axis=0)
        out = sfft.irfft2(acc, s=pad)
    else:
        acc = np.sum(sfft.fft2(xp, axes=(-2, -1)) * adj, axis=0)
        out = sfft.ifft2(acc).real
    return out[:h, :w]


def _as_array(m) -> np.ndarray:
    return m.values if hasattr(m, "values") else np.asarray(m, dtype=float)


@dataclass(frozen=True, eq=False)
class AerialImage:
    values: np.ndarray
    pitch: float = 1.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.size and v.min() < 0:
            raise ValueError("aerial intensity must be nonnegative")
        object.__setattr__(self, "values", v)


def aerial_image(mask, ks: KernelSet) -> AerialImage:
    m = _as_array(mask)
    pitch = getattr(mask, "pitch", ks.pitch)
    if abs(float(pitch) - ks.pitch) > 1e-9:
        raise ValueError(f"mask pitch {pitch} != kernel pitch {ks.pitch}")
    if m.ndim != 2:
        raise ValueError("mask must be 2-D")
    fields = _fields(m, ks)
    return AerialImage(np.maximum(intensity_from_fields(fields, ks), 0.0), ks.pitch)


def double_exposure_image(a, b, ks: KernelSet) -> AerialImage:
    """Sum of the two single-exposure intensities."""
    if _as_array(a).shape != _as_array(b).shape:
        raise ValueError("double exposure masks must have the same shape")
    return AerialImage(aerial_image(a, ks).values + aerial_image(b, ks).values, ks.pitch)


# ------------------------------------------------------------------- resist

@dataclass(frozen=True)
class ResistConfig:
    threshold: float = 0.225
    steepness: float = 50.0

    def __post_init__(self):
        if self.threshold <= 0:
            raise ConfigError("resist threshold must be positive")
        if self.steepness <= 0:
            raise ConfigError("resist steepness must be positive")


@dataclass(frozen=True, eq=False)
class PrintedImage:
    values: np.ndarray
    mode: str = "relaxed"


def resist_threshold(img, rc: ResistConfig, mode: str = "relaxed") -> PrintedImage:
    i = _as_array(img)
    if mode == "relaxed":
        return PrintedImage(expit(rc.steepness * (i - rc.threshold)), mode)
    if mode == "hard":
        return PrintedImage((i > rc.threshold).astype(float), mode)
    raise ValueError(f"unknown resist mode {mode!r}")


def mse(printed, target) -> float:
    """Unnormalized sum of squared pixel differences."""
    p = _as_array(printed)
    t = _as_array(target)
    if p.shape != t.shape:
        raise ValueError(f"shape mismatch {p.shape} vs {t.shape}")
    return float(np.sum((p - t) ** 2))


@dataclass(frozen=True)
class LithoContext:
    """Everything an engine needs to simulate a mask."""

    kernels: KernelSet
    resist: ResistConfig = field(default_factory=ResistConfig)

    @classmethod
    def build(cls, optics: OpticsConfig, resist: ResistConfig | None = None) -> "LithoContext":
        return cls(synthesize_kernels(optics), resist or ResistConfig())

    @property
    def pitch(self) -> float:
        return self.kernels.pitch

    def simulate(self, mask, mode: str = "hard") -> PrintedImage:
        return resist_threshold(aerial_image(mask, self.kernels), self.resist, mode)


def calibrate_threshold(ks: KernelSet, size_px: int | None = None) -> float:
    """Threshold at which a large isolated square prints at its drawn edge.

    Returns the intensity on the drawn edge at the middle of one side,
    interpolated between the two pixels that straddle it.
    """
    R = ks.radius
    n = size_px or 8 * R
    grid = 2 * n
    m = np.zeros((grid, grid))
    lo = (grid - n) // 2
    m[lo:lo + n, lo:lo + n] = 1.0
    i = aerial_image(MaskGrid(m, ks.pitch), ks).values
    mid = grid // 2
    edge = lo + n  # boundary between pixel edge-1 (inside) and edge (outside)
    return float(0.5 * (i[mid, edge - 1] + i[mid, edge]))


# ------------------------------------------------------------------- export

def write_pgm(path, values, kind: str = "mask") -> None:
    """Write an 8-bit binary PGM (P5), y axis pointing up.

    ``mask``/``printed`` values in [0, 1] are scaled by 255; ``intensity``
    values are scaled by 255 / max. The scale is recorded in the header.
    """
    v = np.asarray(_as_array(values), dtype=float)
    if kind == "intensity":
        vmax = float(v.max()) if v.size and v.max() > 0 else 1.0
        factor = 255.0 / vmax
        note = f"# hopc {kind}: pixel = round(value * 255 / {vmax!r})"
    else:
        factor = 255.0
        note = f"# hopc {kind}: pixel = round(value * 255)"
    data = np.clip(np.rint(v * factor), 0, 255).astype(np.uint8)[::-1]
    h, w = data.shape
    header = f"P5\n{note}\n{w} {h}\n255\n".encode("ascii")
    Path(path).write_bytes(header + data.tobytes())


def read_pgm(path) -> np.ndarray:
    """Read back a P5 file written by write_pgm (rows restored to y-up order)."""
    raw = Path(path).read_bytes()
    fields = []
    pos = 0
    while len(fields) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end:end + 1].isspace():
            end += 1
        fields.append(raw[pos:end])
        pos = end
    pos += 1
    w, h = int(fields[1]), int(fields[2])
    return np.frombuffer(raw[pos:pos + w * h], dtype=np.uint8).reshape(h, w)[::-1].copy()
