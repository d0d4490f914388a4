"""Crosstalk forward model, blending weights, and the training loss.

Two clean slice estimates are mixed into the observed pair through
slice-specific filters: the first observation blends slice one with a
filtered version of slice two, the second blends slice two with a filtered
version of slice one. The filters are either a pair of trainable 7x7 kernels
(uniform and 5-point Laplacian at init) or two shallow generator networks.
The loss couples a per-image mean-squared data term, a multi-scale penalty on
correlated gradients between the two slice estimates, and an early-epoch
anchor that holds the blending weights near one half.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ConfigurationError
from .networks import build_shallow_dip
from .tensor import Tensor

KERNEL_SIZE = 7
MAX_EXCLUSION_SCALES = 5
ANCHOR_EPOCHS = 100  # blending weights are anchored at 0.5 through this epoch


def make_single_kernels(dtype=np.float64):
    """Trainable 7x7 mixing kernels: an averaging filter and a Laplacian.

    The first has every tap at 1/49 (sums to one); the second is zero except
    for a central 5-point Laplacian cross (sums to zero).
    """
    k1 = np.full((KERNEL_SIZE, KERNEL_SIZE), 1.0 / KERNEL_SIZE**2, dtype=dtype)
    k2 = np.zeros((KERNEL_SIZE, KERNEL_SIZE), dtype=dtype)
    c = KERNEL_SIZE // 2
    k2[c - 1 : c + 2, c - 1 : c + 2] = np.array(
        [[0, 1, 0], [1, -4, 1], [0, 1, 0]], dtype=dtype
    )
    return Tensor(k1, requires_grad=True), Tensor(k2, requires_grad=True)


@dataclass
class FilterMode:
    """The pair of slice-mixing filters, in one of two trainable forms."""

    variant: str
    k1: Tensor = None
    k2: Tensor = None
    fdip1: object = None
    fdip2: object = None

    @classmethod
    def single_kernel(cls, dtype=np.float64):
        k1, k2 = make_single_kernels(dtype)
        return cls(variant="single_kernel", k1=k1, k2=k2)

    @classmethod
    def shallow_dip(cls, h, w, seed=0, dtype=np.float64):
        return cls(
            variant="shallow_dip",
            fdip1=build_shallow_dip(h, w, seed=seed, label="fdip1", dtype=dtype),
            fdip2=build_shallow_dip(h, w, seed=seed, label="fdip2", dtype=dtype),
        )

    def parameters(self):
        if self.variant == "single_kernel":
            return [self.k1, self.k2]
        return self.fdip1.parameters + self.fdip2.parameters

    def _apply_kernel(self, kernel, y):
        k4 = T.reshape(kernel, (1, 1, KERNEL_SIZE, KERNEL_SIZE))
        return T.conv2d(y, k4, stride=1, padding="reflect")

    def into_first(self, y2):
        """Filter slice two's estimate as it leaks into the first observation."""
        if self.variant == "single_kernel":
            return self._apply_kernel(self.k1, y2)
        return self.fdip1.forward(y2)

    def into_second(self, y1):
        """Filter slice one's estimate as it leaks into the second observation."""
        if self.variant == "single_kernel":
            return self._apply_kernel(self.k2, y1)
        return self.fdip2.forward(y1)


@dataclass
class MixingWeights:
    """Blending weights for the two observations, each in (0,1)."""

    alpha1: object
    alpha2: object

    def as_floats(self):
        a1 = self.alpha1.item() if isinstance(self.alpha1, Tensor) else float(self.alpha1)
        a2 = self.alpha2.item() if isinstance(self.alpha2, Tensor) else float(self.alpha2)
        return a1, a2


def alpha_from_dip3(dip3_output):
    """Blending weights from the central pixel of each of the two output channels."""
    if dip3_output.data.ndim != 3 or dip3_output.data.shape[0] != 2:
        raise ConfigurationError(
            f"weight network output must be [2,H,W], got {dip3_output.data.shape}"
        )
    _, h, w = dip3_output.data.shape
    center = (h // 2, w // 2)
    a1 = T.sigmoid(T.element(dip3_output, (0, *center)))
    a2 = T.sigmoid(T.element(dip3_output, (1, *center)))
    return MixingWeights(alpha1=a1, alpha2=a2)


def _as_scalar_tensor(a):
    if isinstance(a, Tensor):
        return a
    return Tensor(np.asarray(float(a)))


def synthesize(y1, y2, alphas, filt):
    """Mix the slice estimates into the two observations.

    The first filter acts on the second slice, the second filter on the
    first: the leakage direction is fixed and never swapped.
    """
    if y1.data.shape != y2.data.shape:
        raise ConfigurationError(
            f"slice estimates differ in shape: {y1.data.shape} vs {y2.data.shape}"
        )
    a1 = _as_scalar_tensor(alphas.alpha1)
    a2 = _as_scalar_tensor(alphas.alpha2)
    i1 = T.add(T.mul(a1, y1), T.mul(T.sub(1.0, a1), filt.into_first(y2)))
    i2 = T.add(T.mul(a2, filt.into_second(y1)), T.mul(T.sub(1.0, a2), y2))
    return i1, i2


def feasible_scales(h, w, requested=MAX_EXCLUSION_SCALES):
    """Largest scale count whose pooled gradient field keeps 2 pixels per axis."""
    return min(requested, int(math.floor(math.log2(min(h, w)))))


def exclusion_loss(y1, y2, scales=MAX_EXCLUSION_SCALES):
    """Multi-scale overlap between the two estimates' gradient magnitudes.

    At each scale the absolute forward-difference gradients of both inputs
    are mean-pool downsampled and multiplied elementwise; the mean of that
    product is accumulated over scales and both gradient axes. Non-negative
    by construction, zero whenever either input is flat.
    """
    if y1.data.shape != y2.data.shape:
        raise ConfigurationError(
            f"exclusion inputs differ in shape: {y1.data.shape} vs {y2.data.shape}"
        )
    h, w = y1.data.shape[-2:]
    usable = feasible_scales(h, w, scales)
    if usable < scales:
        warnings.warn(
            f"multi-scale gradient correlation truncated to {usable} scales "
            f"for {h}x{w} input",
            stacklevel=2,
        )
    if usable < 1:
        raise ConfigurationError(f"{h}x{w} input is too small for any gradient scale")
    total = None
    for axis in ("x", "y"):
        g1 = T.absolute(T.spatial_gradient(y1, axis))
        g2 = T.absolute(T.spatial_gradient(y2, axis))
        for j in range(1, usable + 1):
            if j > 1:
                g1 = T.downsample2(g1)
                g2 = T.downsample2(g2)
            term = T.tmean(T.mul(g1, g2))
            total = term if total is None else T.add(total, term)
    return total


@dataclass(frozen=True)
class LossBreakdown:
    """Scalar values of every loss component at one epoch."""

    data_term: float
    exclusion_term: float  # raw, before the gamma weighting
    alpha_anchor_term: float
    total: float


def total_loss(i1, i2, i1_obs, i2_obs, y1, y2, alphas, gamma_excl, epoch):
    """Full training objective; returns the graph node and a float breakdown.

    The anchor holding both weights at 0.5 is active for epochs 1..100 only.
    The exclusion term is always evaluated for reporting but joins the total
    only when its weight is nonzero.
    """
    if epoch < 1:
        raise ConfigurationError(f"epochs are 1-based, got {epoch}")
    for obs, syn in ((i1_obs, i1), (i2_obs, i2)):
        if obs.data.shape != syn.data.shape:
            raise ConfigurationError(
                f"observation shape {obs.data.shape} != synthesized {syn.data.shape}"
            )
    data = T.add(
        T.tmean(T.square(T.sub(i1, i1_obs))),
        T.tmean(T.square(T.sub(i2, i2_obs))),
    )
    excl = exclusion_loss(y1, y2)
    total = data
    if gamma_excl != 0.0:
        total = T.add(total, T.mul(excl, float(gamma_excl)))
    anchor_value = 0.0
    if epoch <= ANCHOR_EPOCHS:
        a1 = _as_scalar_tensor(alphas.alpha1)
        a2 = _as_scalar_tensor(alphas.alpha2)
        anchor = T.add(
            T.square(T.sub(a1, 0.5)),
            T.square(T.sub(a2, 0.5)),
        )
        total = T.add(total, anchor)
        anchor_value = anchor.item()
    return total, LossBreakdown(
        data_term=data.item(),
        exclusion_term=excl.item(),
        alpha_anchor_term=anchor_value,
        total=total.item(),
    )
