"""Color representations used as regression targets for the Color token.

Two representations are supported:

* pixel binning: a raw ``h x h x h`` count histogram over RGB values;
* RGB-uv projection: one ``h x h`` histogram per channel in log-chroma
  space, built with an inverse-quadratic kernel weighted by pixel intensity.

Images are ``(height, width, 3)`` float arrays with values in ``[0, 255]``.
The RGB-uv path rescales them to ``[0, 1]`` internally, so ``epsilon`` is
relative to unit intensity.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np


class HistMethod(str, Enum):
    PIXBIN = "pixbin"
    RGBUV = "rgbuv"


class ChannelCombine(str, Enum):
    CONCAT = "concat"
    MEAN = "mean"


class Normalization(str, Enum):
    L1 = "l1"
    L2 = "l2"
    MINMAX = "minmax"
    NONE = "none"


@dataclass(frozen=True)
class ColorHistConfig:
    method: HistMethod = HistMethod.RGBUV
    bins: int = 32
    tau: float = 0.02
    epsilon: float = 1e-6
    uv_range: tuple[float, float] = (-3.0, 3.0)
    combine: ChannelCombine = ChannelCombine.MEAN
    normalization: Normalization = Normalization.L2
    scale: float = 1.0

    def __post_init__(self):
        # accept plain strings from JSON configs
        object.__setattr__(self, "method", HistMethod(self.method))
        object.__setattr__(self, "combine", ChannelCombine(self.combine))
        object.__setattr__(self, "normalization", Normalization(self.normalization))
        object.__setattr__(self, "uv_range", tuple(float(x) for x in self.uv_range))
        if int(self.bins) != self.bins or self.bins < 2:
            raise ValueError(f"bins must be an integer >= 2, got {self.bins}")
        if not self.tau > 0:
            raise ValueError("tau must be positive")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        lo, hi = self.uv_range
        if not lo < hi:
            raise ValueError("uv_range must satisfy lo < hi")
        if not self.scale > 0:
            raise ValueError("scale must be positive")

    @property
    def output_dim(self) -> int:
        """Length of the vector produced by :func:`color_vector`."""
        h = self.bins
        if self.method is HistMethod.PIXBIN:
            return h**3
        return 3 * h * h if self.combine is ChannelCombine.CONCAT else h * h


@dataclass
class ColorHistogram:
    values: np.ndarray
    shape: tuple[int, ...]
    config: ColorHistConfig = field(default_factory=ColorHistConfig)

    def __post_init__(self):
        if self.values.size != int(np.prod(self.shape)):
            raise ValueError("values length does not match shape")

    def reshaped(self) -> np.ndarray:
        return self.values.reshape(self.shape)


def as_image(image) -> np.ndarray:
    """Validate and widen an image to a float64 ``(H, W, 3)`` array."""
    arr = np.asarray(image, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) image, got shape {arr.shape}")
    if arr.size == 0:
        raise ValueError("empty input")
    if not np.all(np.isfinite(arr)) or arr.min() < 0 or arr.max() > 255:
        raise ValueError("pixel values must be finite and within [0, 255]")
    return arr


def pixel_bin_indices(values: np.ndarray, h: int) -> np.ndarray:
    """Per-channel bin index ``floor(v * h / 256)`` with the top bin closed."""
    return np.minimum(np.floor(values * h / 256.0).astype(np.int64), h - 1)


def pixel_bin_histogram(image, h: int) -> ColorHistogram:
    """3-D count histogram of RGB values; flat index is ``r*h*h + g*h + b``."""
    if int(h) != h or h < 2:
        raise ValueError(f"bin size must be an integer >= 2, got {h}")
    img = as_image(image).reshape(-1, 3)
    idx = pixel_bin_indices(img, h)
    flat = idx[:, 0] * h * h + idx[:, 1] * h + idx[:, 2]
    counts = np.bincount(flat, minlength=h**3).astype(np.float64)
    cfg = ColorHistConfig(method=HistMethod.PIXBIN, bins=h)
    return ColorHistogram(counts, (h, h, h), cfg)


def uv_grid(cfg: ColorHistConfig) -> np.ndarray:
    lo, hi = cfg.uv_range
    return np.linspace(lo, hi, cfg.bins)


def inverse_quadratic(delta: np.ndarray, tau: float) -> np.ndarray:
    return 1.0 / (1.0 + (delta / tau) ** 2)


# (channel, first other channel, second other channel) for the u and v axes
_UV_PAIRS = ((0, 1, 2), (1, 0, 2), (2, 0, 1))


def _log_chroma(pixels: np.ndarray, eps: float) -> tuple[np.ndarray, np.ndarray]:
    """Return ``u, v`` of shape ``(3, N)`` for unit-range pixels ``(N, 3)``."""
    logs = np.log(pixels + eps)
    u = np.stack([logs[:, c] - logs[:, a] for c, a, _ in _UV_PAIRS])
    v = np.stack([logs[:, c] - logs[:, b] for c, _, b in _UV_PAIRS])
    return u, v


def _row_norm(x: np.ndarray) -> np.ndarray:
    # rescale per row so squares of tiny values do not underflow
    m = np.max(np.abs(x), axis=1)
    safe = np.where(m > 0, m, 1.0)
    return m * np.sqrt(np.sum((x / safe[:, None]) ** 2, axis=1))


def _rgbuv_forward(image, cfg: ColorHistConfig):
    pixels = as_image(image).reshape(-1, 3) / 255.0
    intensity = _row_norm(pixels)
    if not np.any(intensity > 0):
        raise ValueError("zero intensity image")
    u, v = _log_chroma(pixels, cfg.epsilon)
    grid = uv_grid(cfg)
    du = u[:, :, None] - grid  # (3, N, h)
    dv = v[:, :, None] - grid
    ku = inverse_quadratic(du, cfg.tau)
    kv = inverse_quadratic(dv, cfg.tau)
    raw = np.matmul((ku * intensity[None, :, None]).transpose(0, 2, 1), kv)
    total = raw.sum()
    return pixels, intensity, du, dv, ku, kv, raw, total


def rgbuv_histogram(image, cfg: ColorHistConfig) -> ColorHistogram:
    """Intensity-weighted log-chroma histogram, globally normalized to sum 1.

    The result has shape ``(3, h, h)`` indexed as ``[channel, u, v]`` and is
    returned before channel combination, normalization and scaling.
    """
    if cfg.method is not HistMethod.RGBUV:
        raise ValueError("rgbuv_histogram requires method=rgbuv")
    *_, raw, total = _rgbuv_forward(image, cfg)
    h = cfg.bins
    return ColorHistogram((raw / total).ravel(), (3, h, h), cfg)


def rgbuv_gradient(image, cfg: ColorHistConfig, upstream) -> np.ndarray:
    """Gradient of ``<upstream, rgbuv_histogram(image).values>`` w.r.t. pixels.

    Returns an array shaped like the image, in units of the ``[0, 255]``
    pixel scale.
    """
    if cfg.method is not HistMethod.RGBUV:
        raise ValueError("rgbuv_gradient requires method=rgbuv")
    img = as_image(image)
    pixels, intensity, du, dv, ku, kv, raw, total = _rgbuv_forward(img, cfg)
    h = cfg.bins
    g = np.asarray(upstream, dtype=np.float64).reshape(3, h, h)

    # quotient rule through the sum-to-one normalization
    hist = raw / total
    g_raw = (g - np.sum(g * hist)) / total

    # raw[c,i,j] = sum_n w[n] ku[c,n,i] kv[c,n,j]
    a = np.einsum("cij,cnj->cni", g_raw, kv)  # sum over v bins
    g_w = np.einsum("cni,cni->n", a, ku)
    tau2 = cfg.tau**2
    dku = -2.0 * du / tau2 * ku**2
    dkv = -2.0 * dv / tau2 * kv**2
    g_u = intensity * np.einsum("cni,cni->cn", a, dku)
    b = np.einsum("cij,cni->cnj", g_raw, ku)
    g_v = intensity * np.einsum("cnj,cnj->cn", b, dkv)

    # u_c = l_c - l_a, v_c = l_c - l_b with l = log(p + eps)
    g_log = np.zeros_like(pixels)
    for k, (c, a_ch, b_ch) in enumerate(_UV_PAIRS):
        g_log[:, c] += g_u[k] + g_v[k]
        g_log[:, a_ch] -= g_u[k]
        g_log[:, b_ch] -= g_v[k]
    g_p = g_log / (pixels + cfg.epsilon)

    safe = np.where(intensity > 0, intensity, 1.0)
    g_p += g_w[:, None] * np.where(intensity[:, None] > 0, pixels / safe[:, None], 0.0)
    return (g_p / 255.0).reshape(img.shape)


def _combine(hist: ColorHistogram, cfg: ColorHistConfig) -> np.ndarray:
    if cfg.method is HistMethod.PIXBIN:
        return hist.values.copy()
    planes = hist.values.reshape(3, -1)
    if cfg.combine is ChannelCombine.CONCAT:
        return planes.ravel().copy()
    return planes.mean(axis=0)


def _normalize(x: np.ndarray, how: Normalization) -> np.ndarray:
    if how is Normalization.NONE:
        return x.copy()
    if how is Normalization.MINMAX:
        span = x.max() - x.min()
        if span == 0:
            raise ValueError("degenerate range")
        return (x - x.min()) / span
    norm = np.abs(x).sum() if how is Normalization.L1 else np.linalg.norm(x)
    if norm == 0:
        raise ValueError("zero vector")
    return x / norm


def combine_and_normalize(hist: ColorHistogram, cfg: ColorHistConfig) -> np.ndarray:
    """Channel combine, then normalize, then scale."""
    if hist.config.method is not cfg.method:
        raise ValueError("histogram method does not match config")
    return _normalize(_combine(hist, cfg), cfg.normalization) * cfg.scale


def combine_and_normalize_vjp(hist: ColorHistogram, cfg: ColorHistConfig, upstream) -> np.ndarray:
    """Pull ``upstream`` (on the output vector) back to ``hist.values``.

    MinMax uses the subgradient that routes through the arg-min/arg-max
    entries (first occurrence on ties).
    """
    g = np.asarray(upstream, dtype=np.float64) * cfg.scale
    x = _combine(hist, cfg)
    how = cfg.normalization
    if how is Normalization.L1:
        n = np.abs(x).sum()
        y = x / n
        g = (g - np.sign(x) * np.dot(g, y)) / n
    elif how is Normalization.L2:
        n = np.linalg.norm(x)
        y = x / n
        g = (g - y * np.dot(g, y)) / n
    elif how is Normalization.MINMAX:
        lo, hi = x.min(), x.max()
        span = hi - lo
        y = (x - lo) / span
        gx = g / span
        i_lo, i_hi = int(np.argmin(x)), int(np.argmax(x))
        gx[i_lo] += np.sum(g * (y - 1.0)) / span
        gx[i_hi] -= np.sum(g * y) / span
        g = gx
    if cfg.method is HistMethod.PIXBIN or cfg.combine is ChannelCombine.CONCAT:
        return g
    return np.tile(g / 3.0, 3)


def color_histogram(image, cfg: ColorHistConfig) -> ColorHistogram:
    if cfg.method is HistMethod.PIXBIN:
        hist = pixel_bin_histogram(image, cfg.bins)
        # keep the caller's normalization settings on the snapshot
        hist.config = replace(cfg)
        return hist
    return rgbuv_histogram(image, cfg)


def color_vector(image, cfg: ColorHistConfig) -> np.ndarray:
    """Flat target vector fed to the color head."""
    return combine_and_normalize(color_histogram(image, cfg), cfg)


def color_vector_gradient(image, cfg: ColorHistConfig, upstream) -> np.ndarray:
    """Gradient of ``<upstream, color_vector(image)>`` w.r.t. pixel values."""
    hist = rgbuv_histogram(image, cfg)
    return rgbuv_gradient(image, cfg, combine_and_normalize_vjp(hist, cfg, upstream))
