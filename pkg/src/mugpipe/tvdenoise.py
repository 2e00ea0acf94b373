"""Total-variation image denoising.

The total variation of an image is the sum of absolute forward pixel
differences along both axes. Denoising minimizes a fidelity-plus-TV
energy E(y) = 0.5*||y - x||^2 + w * V_eps(y) by gradient descent, where
V_eps smooths |d| to sqrt(d^2 + eps^2) so the gradient exists everywhere.
Each accepted step must not increase E (step halving on increase).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, UsageError


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Grayscale raster with values in [0, 1], clamped on construction."""

    pixels: np.ndarray  # shape (height, width), float64

    def __post_init__(self) -> None:
        arr = np.asarray(self.pixels, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise UsageError(f"expected a 2-D image, got shape {arr.shape}")
        object.__setattr__(self, "pixels", np.clip(arr, 0.0, 1.0))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True, eq=False)
class RgbImage:
    """3-channel raster with values in [0, 1] per channel."""

    pixels: np.ndarray  # shape (height, width, 3), float64

    def __post_init__(self) -> None:
        arr = np.asarray(self.pixels, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[2] != 3 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise UsageError(f"expected an (h, w, 3) image, got shape {arr.shape}")
        object.__setattr__(self, "pixels", np.clip(arr, 0.0, 1.0))

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    def channel(self, index: int) -> GrayImage:
        return GrayImage(self.pixels[:, :, index])


@dataclass(frozen=True)
class DenoiseParams:
    """Gradient-descent settings; 200 iterations is the tuned default."""

    iterations: int = 200
    tv_weight: float = 0.1
    epsilon: float = 1e-3
    step: float = 0.05

    def __post_init__(self) -> None:
        if self.iterations < 1:
            raise ConfigError("iterations must be >= 1")
        if self.tv_weight <= 0 or self.epsilon <= 0 or self.step <= 0:
            raise ConfigError("tv_weight, epsilon, and step must be > 0")


def total_variation(img: GrayImage) -> float:
    """Sum of absolute forward differences; edges have no wraparound."""
    a = img.pixels
    return float(np.abs(np.diff(a, axis=0)).sum() + np.abs(np.diff(a, axis=1)).sum())


def _smoothed_tv_and_grad(y: np.ndarray, eps: float) -> tuple[float, np.ndarray]:
    dv = np.diff(y, axis=0)
    dh = np.diff(y, axis=1)
    mv = np.sqrt(dv * dv + eps * eps)
    mh = np.sqrt(dh * dh + eps * eps)
    grad = np.zeros_like(y)
    uv = dv / mv
    uh = dh / mh
    grad[:-1, :] -= uv
    grad[1:, :] += uv
    grad[:, :-1] -= uh
    grad[:, 1:] += uh
    return float(mv.sum() + mh.sum()), grad


def _energy(y: np.ndarray, x: np.ndarray, params: DenoiseParams) -> float:
    dv = np.diff(y, axis=0)
    dh = np.diff(y, axis=1)
    eps = params.epsilon
    tv = np.sqrt(dv * dv + eps * eps).sum() + np.sqrt(dh * dh + eps * eps).sum()
    return float(0.5 * np.sum((y - x) ** 2) + params.tv_weight * tv)


def denoise_with_trace(
    img: GrayImage, params: DenoiseParams | None = None
) -> tuple[GrayImage, list[float]]:
    """Denoise and return the per-iteration energy trace.

    The trace has ``iterations + 1`` entries, starting at the input's
    energy, and is non-increasing by construction: a step that would
    raise the energy is halved until it does not (worst case the iterate
    stays put).
    """
    if params is None:
        params = DenoiseParams()
    x = img.pixels
    y = x.copy()
    energy = _energy(y, x, params)
    trace = [energy]
    for _ in range(params.iterations):
        _, tv_grad = _smoothed_tv_and_grad(y, params.epsilon)
        grad = (y - x) + params.tv_weight * tv_grad
        step = params.step
        while True:
            candidate = np.clip(y - step * grad, 0.0, 1.0)
            candidate_energy = _energy(candidate, x, params)
            if candidate_energy <= energy:
                y, energy = candidate, candidate_energy
                break
            step *= 0.5
            if step < params.step * 1e-12:
                break  # no usable descent direction; keep current iterate
        trace.append(energy)
    return GrayImage(y), trace


def denoise(img: GrayImage, params: DenoiseParams | None = None) -> GrayImage:
    """Run the configured number of descent iterations on one channel."""
    out, _ = denoise_with_trace(img, params)
    return out


def denoise_rgb(img: RgbImage, params: DenoiseParams | None = None) -> RgbImage:
    """Denoise each channel independently."""
    channels = [denoise(img.channel(i), params).pixels for i in range(3)]
    return RgbImage(np.stack(channels, axis=2))
