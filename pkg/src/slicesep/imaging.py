"""Image planes, raw file round-tripping, and display export.

The on-disk format is a bare little-endian float32 array (`<name>.f32`)
next to a one-line text sidecar (`<name>.meta`) carrying the shape and the
optional pixel size. Display export writes binary 8-bit portable graymaps
with the dynamic range fixed to four standard deviations around the mean.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import ConfigurationError, RawFormatError

DISPLAY_SIGMAS = 4.0


@dataclass
class ImagePlane:
    """A single real-valued image with optional physical pixel size."""

    pixels: np.ndarray
    pixel_size_nm: float = None
    label: str = ""

    def __post_init__(self):
        self.pixels = np.asarray(self.pixels)
        if self.pixels.ndim != 2:
            raise ConfigurationError(
                f"image must be 2D, got shape {self.pixels.shape}"
            )
        if not np.all(np.isfinite(self.pixels)):
            raise ConfigurationError("image contains non-finite values")

    @property
    def height(self):
        return self.pixels.shape[0]

    @property
    def width(self):
        return self.pixels.shape[1]

    def with_pixels(self, pixels, label=None):
        return replace(
            self, pixels=pixels, label=self.label if label is None else label
        )


@dataclass(frozen=True)
class NormalizationRecord:
    """Mean/std pair that maps an image to zero mean, unit variance."""

    mean: float
    std: float


def standardize(img):
    """Zero-mean unit-variance copy plus the record needed to invert it."""
    mean = float(img.pixels.mean())
    std = float(img.pixels.std())
    if std == 0.0:
        raise ConfigurationError(
            f"cannot standardize a constant image (label={img.label!r})"
        )
    return (
        img.with_pixels((img.pixels - mean) / std),
        NormalizationRecord(mean=mean, std=std),
    )


def destandardize(img, rec):
    return img.with_pixels(img.pixels * rec.std + rec.mean)


def _sidecar_path(raw_path):
    return Path(raw_path).with_suffix(".meta")


def save_raw(img, path):
    """Write `<path>` as float32 plus the `.meta` sidecar."""
    path = Path(path)
    if path.suffix != ".f32":
        # append rather than substitute: dots inside stems must survive
        path = path.with_name(path.name + ".f32")
    path.parent.mkdir(parents=True, exist_ok=True)
    img.pixels.astype("<f4").tofile(path)
    fields = [f"height={img.height}", f"width={img.width}"]
    if img.pixel_size_nm is not None:
        fields.append(f"pixel_size_nm={img.pixel_size_nm!r}")
    _sidecar_path(path).write_text(" ".join(fields) + "\n")
    return path


def _parse_sidecar(meta_path):
    fields = {}
    for token in meta_path.read_text().split():
        if "=" not in token:
            raise RawFormatError(f"malformed sidecar entry {token!r} in {meta_path}")
        key, value = token.split("=", 1)
        fields[key] = value
    try:
        h = int(fields["height"])
        w = int(fields["width"])
    except KeyError as missing:
        raise RawFormatError(f"sidecar {meta_path} lacks key {missing}")
    px = float(fields["pixel_size_nm"]) if "pixel_size_nm" in fields else None
    return h, w, px


def load_raw(path, h=None, w=None):
    """Read a raw image; explicit h/w, when given, must agree with the sidecar."""
    path = Path(path)
    if not path.exists():
        raise RawFormatError(f"raw file not found: {path}")
    meta = _sidecar_path(path)
    if not meta.exists():
        raise RawFormatError(f"sidecar not found: {meta}")
    sh, sw, px = _parse_sidecar(meta)
    if (h is not None and h != sh) or (w is not None and w != sw):
        raise RawFormatError(
            f"requested {h}x{w} but sidecar {meta} records {sh}x{sw}"
        )
    expected = sh * sw * 4
    actual = path.stat().st_size
    if actual != expected:
        raise RawFormatError(
            f"{path}: expected {expected} bytes for {sh}x{sw} float32, found {actual}"
        )
    pixels = np.fromfile(path, dtype="<f4").reshape(sh, sw)
    return ImagePlane(pixels=pixels, pixel_size_nm=px, label=path.stem)


def display_bytes(pixels):
    """Map pixels into [0,255] over the mean +/- 4 sigma window, clamped."""
    mean = pixels.mean()
    std = pixels.std()
    if std == 0.0:
        return np.full(pixels.shape, 128, dtype=np.uint8)
    lo = mean - DISPLAY_SIGMAS * std
    hi = mean + DISPLAY_SIGMAS * std
    scaled = np.rint((pixels - lo) / (hi - lo) * 255.0)
    return np.clip(scaled, 0, 255).astype(np.uint8)


def export_display(img, path):
    """Write an 8-bit binary portable graymap of the 4-sigma display mapping."""
    path = Path(path)
    if path.suffix != ".pgm":
        path = path.with_suffix(".pgm")
    path.parent.mkdir(parents=True, exist_ok=True)
    body = display_bytes(np.asarray(img.pixels, dtype=np.float64))
    header = f"P5\n{img.width} {img.height}\n255\n".encode("ascii")
    path.write_bytes(header + body.tobytes())
    return path
