"""INT8 tensor containers and reference integer kernels.

Everything downstream (engine, oracles) builds on these three operations:
``quantize``, ``gemm_q8`` and ``requantize``. All quantization is symmetric
per-tensor (zero point 0 unless stated), rounding is round-to-nearest-even,
and GEMM accumulates exactly in 32-bit integers.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

INT8_MIN = -128
INT8_MAX = 127

# |acc| <= 4096 * 127 * 127 < 2^31, so int32 accumulators cannot overflow
# as long as the GEMM inner dimension stays at or below this bound.
MAX_INNER_DIM = 4096


class QuantError(ValueError):
    """Raised on invalid quantized-tensor construction or kernel misuse."""


@dataclass(frozen=True)
class QuantTensor:
    """Signed 8-bit payload with a per-tensor scale and zero point.

    ``data`` is row-major int8; the dequantized value of an element q is
    ``(q - zero_point) * scale``.
    """

    data: np.ndarray
    scale: float
    zero_point: int = 0

    def __post_init__(self) -> None:
        if self.data.dtype != np.int8:
            raise QuantError(f"QuantTensor data must be int8, got {self.data.dtype}")
        if not (self.scale > 0):
            raise QuantError(f"QuantTensor scale must be > 0, got {self.scale}")
        if not float(np.isfinite(self.scale)):
            raise QuantError("QuantTensor scale must be finite")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def dequantize(self) -> np.ndarray:
        return (self.data.astype(np.float64) - self.zero_point) * self.scale

    def transpose(self) -> "QuantTensor":
        return QuantTensor(np.ascontiguousarray(self.data.T), self.scale, self.zero_point)


@dataclass(frozen=True)
class AccTensor:
    """32-bit accumulator tensor produced by ``gemm_q8``.

    ``scale`` is the product of the input scales; values are exact integer
    dot products (no rounding has happened yet).
    """

    data: np.ndarray
    scale: float

    def __post_init__(self) -> None:
        if self.data.dtype != np.int32:
            raise QuantError(f"AccTensor data must be int32, got {self.data.dtype}")
        if not (self.scale > 0):
            raise QuantError(f"AccTensor scale must be > 0, got {self.scale}")

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def dequantize(self) -> np.ndarray:
        return self.data.astype(np.float64) * self.scale


def quantize(x: np.ndarray, scale: float, zero_point: int = 0) -> QuantTensor:
    """Quantize a real tensor to int8.

    Each element becomes round-to-nearest-even of ``x / scale`` plus the zero
    point, clamped to [-128, 127]. Non-finite inputs are rejected.
    """
    if not (scale > 0):
        raise QuantError(f"quantize scale must be > 0, got {scale}")
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise QuantError("quantize input contains non-finite values")
    q = np.rint(x / scale) + zero_point
    q = np.clip(q, INT8_MIN, INT8_MAX)
    return QuantTensor(q.astype(np.int8), float(scale), int(zero_point))


def gemm_q8(a: QuantTensor, b: QuantTensor) -> AccTensor:
    """Exact integer matrix multiply of two int8 tensors.

    ``a`` is [N x D], ``b`` is [D x M]; the result carries int32 dot products
    and scale ``a.scale * b.scale``. Zero points must be 0 and the inner
    dimension must not exceed ``MAX_INNER_DIM`` (int32 overflow guard).
    """
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise QuantError(f"gemm_q8 expects 2-D operands, got {a.shape} x {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise QuantError(f"gemm_q8 shape mismatch: {a.shape} x {b.shape}")
    if a.zero_point != 0 or b.zero_point != 0:
        raise QuantError("gemm_q8 requires zero_point == 0 on both operands")
    if a.shape[1] > MAX_INNER_DIM:
        raise QuantError(
            f"gemm_q8 inner dimension {a.shape[1]} exceeds int32-safe bound {MAX_INNER_DIM}"
        )
    acc = a.data.astype(np.int32) @ b.data.astype(np.int32)
    return AccTensor(acc, a.scale * b.scale)


def requantize(acc: AccTensor, out_scale: float) -> QuantTensor:
    """Rescale accumulators to int8 at ``out_scale``.

    Elementwise multiply by ``acc.scale / out_scale``, round to nearest even,
    clamp to [-128, 127].
    """
    if not (out_scale > 0):
        raise QuantError(f"requantize out_scale must be > 0, got {out_scale}")
    ratio = acc.scale / out_scale
    q = np.rint(acc.data.astype(np.float64) * ratio)
    q = np.clip(q, INT8_MIN, INT8_MAX)
    return QuantTensor(q.astype(np.int8), float(out_scale))
