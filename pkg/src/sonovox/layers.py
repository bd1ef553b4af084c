"""Feedforward layers with hand-written backward passes.

Every layer follows the same stateful protocol: ``forward`` caches what its
matching ``backward`` needs, ``backward`` accumulates parameter gradients
into ``grads`` (matching ``params`` keys) and returns the input gradient.
A layer instance therefore serves one worker at a time; clone parameter
sets for parallel use. All forward/backward methods take a leading batch
axis.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, ShapeError
from .geometry import ConvGeometry, pool_extent
from .kernels import (
    activation,
    activation_deriv,
    conv3d_backward_batch,
    conv3d_forward_batch,
    maxpool3d_backward_batch,
    maxpool3d_batch,
)

__all__ = [
    "Layer",
    "DenseLayer",
    "DropoutLayer",
    "Conv3DLayer",
    "MaxPool3DLayer",
    "FlattenLayer",
    "ReshapeLayer",
    "dense_forward",
    "dropout",
    "glorot_uniform",
    "orthogonal",
]


# ---------------------------------------------------------------------------
# initializers
# ---------------------------------------------------------------------------

def glorot_uniform(rng: np.random.Generator, shape: tuple[int, ...],
                   fan_in: int, fan_out: int, dtype=np.float64) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(dtype)


def orthogonal(rng: np.random.Generator, rows: int, cols: int, dtype=np.float64) -> np.ndarray:
    """Semi-orthogonal matrix with a deterministic sign convention."""
    a = rng.standard_normal((max(rows, cols), min(rows, cols)))
    q, r = np.linalg.qr(a)
    q = q * np.sign(np.diag(r))
    if rows < cols:
        q = q.T
    return np.ascontiguousarray(q[:rows, :cols], dtype=dtype)


# ---------------------------------------------------------------------------
# functional ops
# ---------------------------------------------------------------------------

def dense_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray,
                  act: str = "linear") -> np.ndarray:
    """x @ w + b followed by an elementwise activation; x is (batch, d)."""
    if x.ndim != 2 or w.ndim != 2:
        raise ShapeError(f"dense expects 2-D operands, got x {x.shape}, w {w.shape}")
    if x.shape[1] != w.shape[0]:
        raise ShapeError(f"inner dimensions disagree: x {x.shape} vs w {w.shape}")
    return activation(x @ w + b, act)


def dropout(x: np.ndarray, rate: float, mode: str,
            rng: np.random.Generator | None = None) -> np.ndarray:
    """Inverted dropout: train mode zeroes with probability ``rate`` and
    rescales survivors by 1/(1-rate); eval mode is the identity."""
    if not 0.0 <= rate < 1.0:
        raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
    if mode == "eval" or rate == 0.0:
        return x
    if mode != "train":
        raise ConfigError(f"dropout mode must be 'train' or 'eval', got {mode!r}")
    if rng is None:
        raise ConfigError("train-mode dropout needs an rng")
    mask = rng.random(x.shape) >= rate
    return x * (mask.astype(x.dtype) / (1.0 - rate))


# ---------------------------------------------------------------------------
# layer protocol
# ---------------------------------------------------------------------------

class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def build(self, in_shape: tuple[int, ...], rng: np.random.Generator,
              dtype=np.float32) -> tuple[int, ...]:
        """Allocate parameters for ``in_shape`` (per-sample, no batch axis)
        and return the per-sample output shape."""
        return self.output_shape(in_shape)

    def output_shape(self, in_shape: tuple[int, ...]) -> tuple[int, ...]:
        raise NotImplementedError

    def param_count(self, in_shape: tuple[int, ...]) -> int:
        return 0

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g[...] = 0.0

    def forward(self, x: np.ndarray, train: bool = False,
                rng: np.random.Generator | None = None) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray, need_input_grad: bool = True
                 ) -> np.ndarray | None:
        raise NotImplementedError

    def _alloc_grads(self) -> None:
        self.grads = {k: np.zeros_like(v) for k, v in self.params.items()}


class DenseLayer(Layer):
    kind = "dense"

    def __init__(self, units: int, activation: str = "linear"):
        super().__init__()
        if units < 1:
            raise ConfigError(f"dense units must be >= 1, got {units}")
        self.units = units
        self.activation = activation

    def output_shape(self, in_shape):
        if len(in_shape) != 1:
            raise ShapeError(f"dense expects a flat input, got shape {in_shape}")
        return (self.units,)

    def param_count(self, in_shape):
        (d,) = in_shape
        return d * self.units + self.units

    def build(self, in_shape, rng, dtype=np.float32):
        (d,) = in_shape
        self.params = {
            "w": glorot_uniform(rng, (d, self.units), d, self.units, dtype),
            "b": np.zeros(self.units, dtype=dtype),
        }
        self._alloc_grads()
        return (self.units,)

    def forward(self, x, train=False, rng=None):
        z = x @ self.params["w"] + self.params["b"]
        out = activation(z, self.activation)
        self._cache = (x, out)
        return out

    def backward(self, grad_out, need_input_grad=True):
        x, out = self._cache
        self._cache = None
        dz = grad_out * activation_deriv(out, self.activation)
        self.grads["w"] += x.T @ dz
        self.grads["b"] += dz.sum(axis=0)
        return dz @ self.params["w"].T if need_input_grad else None


class DropoutLayer(Layer):
    kind = "dropout"

    def __init__(self, rate: float):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ConfigError(f"dropout rate must be in [0, 1), got {rate}")
        self.rate = rate

    def output_shape(self, in_shape):
        return tuple(in_shape)

    def forward(self, x, train=False, rng=None):
        if not train or self.rate == 0.0:
            self._cache = None
            return x
        if rng is None:
            raise ConfigError("train-mode dropout needs an rng")
        draw_dtype = np.float32 if x.dtype == np.float32 else np.float64
        scale = (rng.random(x.shape, dtype=draw_dtype) >= self.rate)
        scale = scale.astype(x.dtype) / (1.0 - self.rate)
        self._cache = scale
        return x * scale

    def backward(self, grad_out, need_input_grad=True):
        scale = self._cache
        self._cache = None
        if not need_input_grad:
            return None
        return grad_out if scale is None else grad_out * scale


class Conv3DLayer(Layer):
    kind = "conv3d"

    def __init__(self, filters: int, kernel: tuple[int, int, int],
                 strides: tuple[int, int, int] = (1, 1, 1), padding: str = "same",
                 activation: str = "linear", method: str = "auto"):
        super().__init__()
        self.geom = ConvGeometry(kernel=tuple(kernel), strides=tuple(strides),
                                 padding=padding, filters=filters)
        self.activation = activation
        self.method = method

    def output_shape(self, in_shape):
        if len(in_shape) != 4:
            raise ShapeError(f"conv3d expects (T,H,W,C) input, got shape {in_shape}")
        return (*self.geom.out_shape(tuple(in_shape[:3])), self.geom.filters)

    def param_count(self, in_shape):
        kt, kh, kw = self.geom.kernel
        cin = in_shape[3]
        return self.geom.filters * (kt * kh * kw * cin) + self.geom.filters

    def build(self, in_shape, rng, dtype=np.float32):
        out_shape = self.output_shape(in_shape)
        kt, kh, kw = self.geom.kernel
        cin, cout = in_shape[3], self.geom.filters
        k = kt * kh * kw
        self.params = {
            "w": glorot_uniform(rng, (kt, kh, kw, cin, cout), k * cin, k * cout, dtype),
            "b": np.zeros(cout, dtype=dtype),
        }
        self._alloc_grads()
        return out_shape

    def forward(self, x, train=False, rng=None):
        # the conv cache (padded input + input spectrum) is only worth
        # holding when a backward pass will follow; backward recomputes it
        # from x otherwise
        conv_cache: dict | None = {} if train else None
        z = conv3d_forward_batch(x, self.params["w"], self.params["b"], self.geom,
                                 method=self.method, cache=conv_cache)
        out = activation(z, self.activation)
        self._cache = (x, out, conv_cache)
        return out

    def backward(self, grad_out, need_input_grad=True):
        x, out, conv_cache = self._cache
        self._cache = None
        dz = grad_out * activation_deriv(out, self.activation)
        dx, dw, db = conv3d_backward_batch(dz, x, self.params["w"], self.geom,
                                           cache=conv_cache, need_dx=need_input_grad)
        self.grads["w"] += dw
        self.grads["b"] += db
        return dx


class MaxPool3DLayer(Layer):
    kind = "maxpool3d"

    def __init__(self, pool: tuple[int, int, int]):
        super().__init__()
        self.pool = tuple(int(p) for p in pool)

    def output_shape(self, in_shape):
        if len(in_shape) != 4:
            raise ShapeError(f"maxpool3d expects (T,H,W,C) input, got shape {in_shape}")
        t, h, w, c = in_shape
        pt, ph, pw = self.pool
        return (pool_extent(t, pt, "time"), pool_extent(h, ph, "height"),
                pool_extent(w, pw, "width"), c)

    def forward(self, x, train=False, rng=None):
        out, argmax = maxpool3d_batch(x, self.pool)
        self._cache = (argmax, x.shape)
        return out

    def backward(self, grad_out, need_input_grad=True):
        argmax, in_shape = self._cache
        self._cache = None
        if not need_input_grad:
            return None
        return maxpool3d_backward_batch(grad_out, argmax, in_shape, self.pool)


class FlattenLayer(Layer):
    kind = "flatten"

    def output_shape(self, in_shape):
        return (int(np.prod(in_shape)),)

    def forward(self, x, train=False, rng=None):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad_out, need_input_grad=True):
        in_shape = self._cache
        self._cache = None
        return grad_out.reshape(in_shape) if need_input_grad else None


class ReshapeLayer(Layer):
    kind = "reshape"

    def __init__(self, target: tuple[int, ...]):
        super().__init__()
        self.target = tuple(int(t) for t in target)

    def output_shape(self, in_shape):
        if int(np.prod(in_shape)) != int(np.prod(self.target)):
            raise ShapeError(
                f"cannot reshape {in_shape} ({int(np.prod(in_shape))} elements) "
                f"to {self.target} ({int(np.prod(self.target))} elements)"
            )
        return self.target

    def forward(self, x, train=False, rng=None):
        self._cache = x.shape
        if int(np.prod(x.shape[1:])) != int(np.prod(self.target)):
            raise ShapeError(
                f"cannot reshape {x.shape[1:]} to {self.target}: element counts differ"
            )
        return x.reshape(x.shape[0], *self.target)

    def backward(self, grad_out, need_input_grad=True):
        in_shape = self._cache
        self._cache = None
        return grad_out.reshape(in_shape) if need_input_grad else None
