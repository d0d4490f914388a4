"""Spectral and statistical diagnostics.

Holds the power-of-two radix-2 Fourier transform (written here so the
artifact carries no transform dependency), energy-normalized DC-centered
power spectra, the oriented band metric that quantifies periodic ghost
content, the depth-of-field calculator, and per-pixel run statistics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .imaging import ImagePlane

DOF_PREFACTOR = 2.0 / 0.61**2  # resolution-to-depth conversion, Rayleigh 0.61
KEV_NM = 1.23984  # photon energy [keV] times wavelength [nm]


# -- Fourier transform -----------------------------------------------------


def _bit_reversal(n):
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.intp)
    for b in range(bits):
        rev = (rev << 1) | ((idx >> b) & 1)
    return rev


def fft1d(a):
    """Radix-2 decimation-in-time transform along the last axis."""
    a = np.asarray(a, dtype=np.complex128)
    n = a.shape[-1]
    if n < 1 or (n & (n - 1)) != 0:
        raise ConfigurationError(f"transform length must be a power of two, got {n}")
    out = a[..., _bit_reversal(n)].copy()
    size = 2
    while size <= n:
        half = size // 2
        twiddle = np.exp(-2j * np.pi * np.arange(half) / size)
        v = out.reshape(out.shape[:-1] + (n // size, size))
        even = v[..., :half].copy()
        odd = v[..., half:] * twiddle
        v[..., :half] = even + odd
        v[..., half:] = even - odd
        size *= 2
    return out


def fft2d(a):
    """Row-column 2D transform; both axes must be powers of two."""
    a = np.asarray(a, dtype=np.complex128)
    if a.ndim != 2:
        raise ConfigurationError(f"fft2d expects a 2D array, got shape {a.shape}")
    step = fft1d(a)
    return fft1d(step.T).T


def next_pow2(n):
    return 1 << max(0, (int(n) - 1)).bit_length()


# -- power spectrum --------------------------------------------------------


@dataclass(frozen=True)
class PowerSpectrum:
    """Energy-normalized squared transform magnitude with DC at the center."""

    values: np.ndarray
    dc_centered: bool = True

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]


def power_spectrum(img):
    """Spectrum of an image, zero-padded to power-of-two dimensions.

    Values are the squared transform magnitudes divided by their sum, rolled
    so the zero-frequency bin sits at (H'//2, W'//2).
    """
    pixels = np.asarray(img.pixels, dtype=np.float64)
    h, w = pixels.shape
    hp, wp = next_pow2(h), next_pow2(w)
    padded = np.zeros((hp, wp))
    padded[:h, :w] = pixels
    power = np.abs(fft2d(padded)) ** 2
    total = power.sum()
    if total == 0.0:
        raise ConfigurationError("zero image has no spectral energy to normalize")
    centered = np.roll(power / total, (hp // 2, wp // 2), axis=(0, 1))
    return PowerSpectrum(values=centered)


def streak_energy(spec, direction_deg, half_width_bins, dc_radius_bins=None):
    """Energy fraction inside an oriented band through the spectrum center.

    The band collects bins whose perpendicular distance from the line at
    `direction_deg` (degrees from the horizontal frequency axis) is at most
    `half_width_bins`. A disk around DC is excluded from both the band and
    the reference total, so the metric ignores overall brightness and slow
    background structure.
    """
    if not 0.0 <= direction_deg < 180.0:
        raise ConfigurationError(
            f"band direction must lie in [0, 180), got {direction_deg}"
        )
    if half_width_bins < 0:
        raise ConfigurationError("band half-width must be non-negative")
    if dc_radius_bins is None:
        dc_radius_bins = 2 * half_width_bins + 1
    h, w = spec.values.shape
    du = np.arange(h)[:, None] - h // 2
    dv = np.arange(w)[None, :] - w // 2
    theta = math.radians(direction_deg)
    dist = np.abs(dv * math.sin(theta) - du * math.cos(theta))
    band = dist <= half_width_bins
    if np.all(band):
        raise ConfigurationError(
            f"half-width {half_width_bins} covers the whole {h}x{w} plane"
        )
    keep = du**2 + dv**2 > dc_radius_bins**2
    denom = spec.values[keep].sum()
    if denom == 0.0:
        return 0.0
    return float(spec.values[band & keep].sum() / denom)


# -- depth of field --------------------------------------------------------


@dataclass(frozen=True)
class DofParams:
    """Transverse resolution and wavelength for the focal-depth formula."""

    delta_t_nm: float
    wavelength_nm: float

    def __post_init__(self):
        if self.delta_t_nm <= 0 or self.wavelength_nm <= 0:
            raise ConfigurationError(
                "resolution and wavelength must both be positive"
            )

    @classmethod
    def from_energy(cls, delta_t_nm, energy_kev):
        if energy_kev <= 0:
            raise ConfigurationError("photon energy must be positive")
        return cls(delta_t_nm=delta_t_nm, wavelength_nm=KEV_NM / energy_kev)


def depth_of_field(params):
    """Axial depth of field in micrometers for the given resolution."""
    z_nm = DOF_PREFACTOR * params.delta_t_nm**2 / params.wavelength_nm
    return z_nm / 1000.0


# -- run statistics --------------------------------------------------------


def _stack_pixels(stack):
    if len(stack) < 2:
        raise ConfigurationError(f"need at least 2 images, got {len(stack)}")
    shapes = {img.pixels.shape for img in stack}
    if len(shapes) != 1:
        raise ConfigurationError(f"images differ in shape: {sorted(shapes)}")
    return np.stack([np.asarray(img.pixels, dtype=np.float64) for img in stack])


def std_map(stack):
    """Per-pixel sample standard deviation across a stack of repeat runs."""
    arr = _stack_pixels(stack)
    # shift by the first run: std is shift-invariant, and identical runs now
    # produce an exactly zero map instead of mean-subtraction dust
    arr = arr - arr[0]
    return ImagePlane(
        pixels=arr.std(axis=0, ddof=1),
        pixel_size_nm=stack[0].pixel_size_nm,
        label="std_map",
    )


def mean_std(stack):
    """Spatial mean of the per-pixel standard deviation map."""
    return float(std_map(stack).pixels.mean())
