"""Convolution and pooling geometry: output extents and padding amounts.

Two padding modes are supported:

* ``same``  -- output extent is ceil(input / stride); the input is
  zero-padded just enough to realize that, with the surplus pad element
  (odd totals) placed on the high-index side.
* ``valid`` -- no padding; output extent is floor((input - kernel) / stride) + 1
  and must come out >= 1.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import GeometryError

AXIS_NAMES = ("time", "height", "width")

PADDINGS = ("same", "valid")


def out_extent(n: int, k: int, s: int, padding: str, axis: str = "axis") -> int:
    """Output extent of one convolution axis."""
    if s < 1:
        raise GeometryError(f"stride must be >= 1 on {axis} axis, got {s}")
    if padding == "same":
        return -(-n // s)  # ceil(n / s)
    if padding == "valid":
        out = (n - k) // s + 1
        if out < 1:
            raise GeometryError(
                f"valid padding infeasible on {axis} axis: "
                f"input extent {n} < kernel extent {k}"
            )
        return out
    raise GeometryError(f"unknown padding mode {padding!r}")


def pad_amounts(n: int, k: int, s: int, padding: str) -> tuple[int, int]:
    """(low, high) zero-padding for one axis; (0, 0) under valid padding."""
    if padding == "valid":
        return (0, 0)
    out = -(-n // s)
    total = max((out - 1) * s + k - n, 0)
    return (total // 2, total - total // 2)


def pool_extent(n: int, p: int, axis: str = "axis") -> int:
    """Output extent of non-overlapping pooling (stride = pool size, remainder dropped)."""
    if p < 1:
        raise GeometryError(f"pool size must be >= 1 on {axis} axis, got {p}")
    if p > n:
        raise GeometryError(f"pool size {p} exceeds input extent {n} on {axis} axis")
    return n // p


@dataclass(frozen=True)
class ConvGeometry:
    """Kernel extents, strides, padding mode and output-channel count of a convolution.

    ``kernel`` and ``strides`` are per-axis tuples; length 3 for 3D
    (time, height, width) and length 2 for 2D (height, width).
    """

    kernel: tuple[int, ...]
    strides: tuple[int, ...] = field(default=())
    padding: str = "same"
    filters: int = 1

    def __post_init__(self):
        kernel = tuple(int(k) for k in self.kernel)
        strides = tuple(int(s) for s in self.strides) or (1,) * len(kernel)
        object.__setattr__(self, "kernel", kernel)
        object.__setattr__(self, "strides", strides)
        if len(kernel) not in (2, 3):
            raise GeometryError(f"kernel must have 2 or 3 axes, got {kernel}")
        if len(strides) != len(kernel):
            raise GeometryError(
                f"strides {strides} and kernel {kernel} have different ranks"
            )
        if any(k < 1 for k in kernel):
            raise GeometryError(f"kernel extents must be >= 1, got {kernel}")
        if any(s < 1 for s in strides):
            raise GeometryError(f"strides must be >= 1, got {strides}")
        if self.padding not in PADDINGS:
            raise GeometryError(f"unknown padding mode {self.padding!r}")
        if self.filters < 1:
            raise GeometryError(f"filters must be >= 1, got {self.filters}")

    @property
    def ndim(self) -> int:
        return len(self.kernel)

    def axis_names(self) -> tuple[str, ...]:
        return AXIS_NAMES[-self.ndim:]

    def out_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        """Spatial output extents (channels excluded) for spatial ``in_shape``."""
        if len(in_shape) != self.ndim:
            raise GeometryError(
                f"geometry has {self.ndim} axes but input shape {in_shape} "
                f"has {len(in_shape)}"
            )
        return tuple(
            out_extent(n, k, s, self.padding, axis)
            for n, k, s, axis in zip(in_shape, self.kernel, self.strides, self.axis_names())
        )

    def pads(self, in_shape: tuple[int, ...]) -> tuple[tuple[int, int], ...]:
        return tuple(
            pad_amounts(n, k, s, self.padding)
            for n, k, s in zip(in_shape, self.kernel, self.strides)
        )
