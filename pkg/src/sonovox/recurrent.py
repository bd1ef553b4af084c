"""Recurrent layers: LSTM, bidirectional LSTM, and convolutional LSTM.

The cell recurrence, shared by all three (gating is always elementwise):

    i_t = sigma(Wx_i * x_t + Wh_i * h_{t-1} [+ w_ci . c_{t-1}] + b_i)
    f_t = sigma(Wx_f * x_t + Wh_f * h_{t-1} [+ w_cf . c_{t-1}] + b_f)
    c_t = f_t . c_{t-1} + i_t . tanh(Wx_c * x_t + Wh_c * h_{t-1} + b_c)
    o_t = sigma(Wx_o * x_t + Wh_o * h_{t-1} [+ w_co . c_t] + b_o)
    h_t = o_t . tanh(c_t)

For the plain LSTM ``*`` is a matrix product; for the convolutional LSTM it
is a 2D convolution (strided for the input transform, stride-1 same-padded
for the recurrent one, so the state keeps its spatial shape across steps).
The bracketed peephole terms are enabled by the optional per-unit peephole
weights; in the convolutional cell they are per-channel scalars broadcast
over space. Initial states are zero. Backpropagation through time is full
(no truncation).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError
from .geometry import ConvGeometry
from .kernels import conv2d_backward_batch, conv2d_forward_batch, sigmoid
from .layers import Layer, glorot_uniform, orthogonal

GATES = ("i", "f", "c", "o")


# ---------------------------------------------------------------------------
# parameter containers
# ---------------------------------------------------------------------------

@dataclass
class LstmParams:
    """Per-gate weights of a dense LSTM cell.

    ``w_x*`` are (input_dim, units), ``w_h*`` are (units, units), biases are
    (units,). The peephole trio ``w_ci/w_cf/w_co`` is all-or-none.
    """

    w_xi: np.ndarray
    w_xf: np.ndarray
    w_xc: np.ndarray
    w_xo: np.ndarray
    w_hi: np.ndarray
    w_hf: np.ndarray
    w_hc: np.ndarray
    w_ho: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_c: np.ndarray
    b_o: np.ndarray
    w_ci: np.ndarray | None = None
    w_cf: np.ndarray | None = None
    w_co: np.ndarray | None = None

    def __post_init__(self):
        peep = [self.w_ci, self.w_cf, self.w_co]
        if any(p is not None for p in peep) and any(p is None for p in peep):
            raise ConfigError("peephole weights must be given for all three gates or none")
        d, u = self.w_xi.shape
        for name in ("w_xf", "w_xc", "w_xo"):
            if getattr(self, name).shape != (d, u):
                raise ShapeError(f"{name} shape {getattr(self, name).shape} != ({d}, {u})")
        for name in ("w_hi", "w_hf", "w_hc", "w_ho"):
            if getattr(self, name).shape != (u, u):
                raise ShapeError(f"{name} shape {getattr(self, name).shape} != ({u}, {u})")

    @property
    def peephole(self) -> bool:
        return self.w_ci is not None

    @property
    def input_dim(self) -> int:
        return self.w_xi.shape[0]

    @property
    def units(self) -> int:
        return self.w_xi.shape[1]

    def param_count(self) -> int:
        u, d = self.units, self.input_dim
        count = 4 * (u * (d + u) + u)
        return count + (3 * u if self.peephole else 0)

    @classmethod
    def init(cls, input_dim: int, units: int, rng: np.random.Generator,
             peephole: bool = False, dtype=np.float32) -> "LstmParams":
        def wx():
            return glorot_uniform(rng, (input_dim, units), input_dim, units, dtype)

        def wh():
            return orthogonal(rng, units, units, dtype)

        kw = dict(
            w_xi=wx(), w_xf=wx(), w_xc=wx(), w_xo=wx(),
            w_hi=wh(), w_hf=wh(), w_hc=wh(), w_ho=wh(),
            b_i=np.zeros(units, dtype=dtype),
            b_f=np.ones(units, dtype=dtype),  # forget-gate bias starts open
            b_c=np.zeros(units, dtype=dtype),
            b_o=np.zeros(units, dtype=dtype),
        )
        if peephole:
            kw.update(w_ci=np.zeros(units, dtype=dtype),
                      w_cf=np.zeros(units, dtype=dtype),
                      w_co=np.zeros(units, dtype=dtype))
        return cls(**kw)

    def as_dict(self) -> dict[str, np.ndarray]:
        out = {}
        for gate in GATES:
            out[f"w_x{gate}"] = getattr(self, f"w_x{gate}")
        for gate in GATES:
            out[f"w_h{gate}"] = getattr(self, f"w_h{gate}")
        for gate in GATES:
            out[f"b_{gate}"] = getattr(self, f"b_{gate}")
        if self.peephole:
            out.update(w_ci=self.w_ci, w_cf=self.w_cf, w_co=self.w_co)
        return out

    def _cat(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        wx = np.concatenate([self.w_xi, self.w_xf, self.w_xc, self.w_xo], axis=1)
        wh = np.concatenate([self.w_hi, self.w_hf, self.w_hc, self.w_ho], axis=1)
        b = np.concatenate([self.b_i, self.b_f, self.b_c, self.b_o])
        return wx, wh, b


@dataclass
class ConvLstmParams:
    """Per-gate convolution kernels of a ConvLSTM cell.

    ``w_x*`` are (kh, kw, C_in, units), ``w_h*`` are (kh, kw, units, units),
    biases (units,), peepholes per-channel (units,). ``input_geom`` carries
    the stride/padding of the input-to-state convolution; the state-to-state
    convolution is always stride 1, same padding.
    """

    w_xi: np.ndarray
    w_xf: np.ndarray
    w_xc: np.ndarray
    w_xo: np.ndarray
    w_hi: np.ndarray
    w_hf: np.ndarray
    w_hc: np.ndarray
    w_ho: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_c: np.ndarray
    b_o: np.ndarray
    input_geom: ConvGeometry = None  # type: ignore[assignment]
    w_ci: np.ndarray | None = None
    w_cf: np.ndarray | None = None
    w_co: np.ndarray | None = None

    def __post_init__(self):
        peep = [self.w_ci, self.w_cf, self.w_co]
        if any(p is not None for p in peep) and any(p is None for p in peep):
            raise ConfigError("peephole weights must be given for all three gates or none")
        if self.input_geom is None:
            raise ConfigError("ConvLstmParams needs an input_geom")
        kh, kw, cin, u = self.w_xi.shape
        if self.input_geom.kernel != (kh, kw):
            raise ShapeError(
                f"input_geom kernel {self.input_geom.kernel} != weight kernel {(kh, kw)}"
            )
        if self.input_geom.filters != u:
            raise ShapeError(
                f"input_geom filters {self.input_geom.filters} != units {u}"
            )
        for name in ("w_hi", "w_hf", "w_hc", "w_ho"):
            if getattr(self, name).shape != (kh, kw, u, u):
                raise ShapeError(f"{name} shape {getattr(self, name).shape} != {(kh, kw, u, u)}")

    @property
    def peephole(self) -> bool:
        return self.w_ci is not None

    @property
    def units(self) -> int:
        return self.w_xi.shape[3]

    @property
    def in_channels(self) -> int:
        return self.w_xi.shape[2]

    def param_count(self) -> int:
        kh, kw, cin, u = self.w_xi.shape
        count = 4 * (u * kh * kw * (cin + u)) + 4 * u
        return count + (3 * u if self.peephole else 0)

    @classmethod
    def init(cls, in_channels: int, units: int, kernel: tuple[int, int],
             rng: np.random.Generator, strides: tuple[int, int] = (1, 1),
             padding: str = "same", peephole: bool = False,
             dtype=np.float32) -> "ConvLstmParams":
        kh, kw = kernel
        k = kh * kw

        def wx():
            return glorot_uniform(rng, (kh, kw, in_channels, units),
                                  k * in_channels, k * units, dtype)

        def wh():
            flat = orthogonal(rng, k * units, units, dtype)
            return flat.reshape(kh, kw, units, units)

        kwargs = dict(
            w_xi=wx(), w_xf=wx(), w_xc=wx(), w_xo=wx(),
            w_hi=wh(), w_hf=wh(), w_hc=wh(), w_ho=wh(),
            b_i=np.zeros(units, dtype=dtype),
            b_f=np.ones(units, dtype=dtype),
            b_c=np.zeros(units, dtype=dtype),
            b_o=np.zeros(units, dtype=dtype),
            input_geom=ConvGeometry(kernel=kernel, strides=strides,
                                    padding=padding, filters=units),
        )
        if peephole:
            kwargs.update(w_ci=np.zeros(units, dtype=dtype),
                          w_cf=np.zeros(units, dtype=dtype),
                          w_co=np.zeros(units, dtype=dtype))
        return cls(**kwargs)

    def as_dict(self) -> dict[str, np.ndarray]:
        out = {}
        for gate in GATES:
            out[f"w_x{gate}"] = getattr(self, f"w_x{gate}")
        for gate in GATES:
            out[f"w_h{gate}"] = getattr(self, f"w_h{gate}")
        for gate in GATES:
            out[f"b_{gate}"] = getattr(self, f"b_{gate}")
        if self.peephole:
            out.update(w_ci=self.w_ci, w_cf=self.w_cf, w_co=self.w_co)
        return out

    def _cat(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        wx = np.concatenate([self.w_xi, self.w_xf, self.w_xc, self.w_xo], axis=3)
        wh = np.concatenate([self.w_hi, self.w_hf, self.w_hc, self.w_ho], axis=3)
        b = np.concatenate([self.b_i, self.b_f, self.b_c, self.b_o])
        return wx, wh, b

    def gate_geom(self) -> ConvGeometry:
        g = self.input_geom
        return ConvGeometry(kernel=g.kernel, strides=g.strides, padding=g.padding,
                            filters=4 * self.units)

    def recur_geom(self) -> ConvGeometry:
        g = self.input_geom
        return ConvGeometry(kernel=g.kernel, strides=(1, 1), padding="same",
                            filters=4 * self.units)

    def state_shape(self, in_spatial: tuple[int, int]) -> tuple[int, int]:
        return self.input_geom.out_shape(in_spatial)


# ---------------------------------------------------------------------------
# dense LSTM
# ---------------------------------------------------------------------------

def _gate_split(a: np.ndarray, u: int):
    return a[..., :u], a[..., u:2 * u], a[..., 2 * u:3 * u], a[..., 3 * u:]


def _cell_update(a_i, a_f, a_c, a_o, c_prev, p):
    """Shared gate math; returns (h, c, i, f, g, o, tanh_c)."""
    if p.peephole:
        a_i = a_i + c_prev * p.w_ci
        a_f = a_f + c_prev * p.w_cf
    i = sigmoid(a_i)
    f = sigmoid(a_f)
    g = np.tanh(a_c)
    c = f * c_prev + i * g
    if p.peephole:
        a_o = a_o + c * p.w_co
    o = sigmoid(a_o)
    tc = np.tanh(c)
    h = o * tc
    return h, c, i, f, g, o, tc


def lstm_step(x_t: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray,
              params: LstmParams) -> tuple[np.ndarray, np.ndarray]:
    """One cell update; accepts (d,) vectors or (N, d) batches."""
    single = x_t.ndim == 1
    if single:
        x_t, h_prev, c_prev = x_t[None], h_prev[None], c_prev[None]
    if x_t.shape[-1] != params.input_dim:
        raise ShapeError(f"input dim {x_t.shape[-1]} != params input_dim {params.input_dim}")
    if h_prev.shape[-1] != params.units or c_prev.shape[-1] != params.units:
        raise ShapeError("state width does not match params units")
    wx, wh, b = params._cat()
    a = x_t @ wx + h_prev @ wh + b
    h, c, *_ = _cell_update(*_gate_split(a, params.units), c_prev, params)
    return (h[0], c[0]) if single else (h, c)


def _lstm_forward_cached(xs: np.ndarray, p: LstmParams):
    """xs is (N, T, d); returns the full hidden sequence plus BPTT cache."""
    # contiguous layout keeps the batched GEMM on one BLAS path, so a
    # reversed palindromic sequence reproduces the forward stream bit-exactly
    xs = np.ascontiguousarray(xs)
    n, t_len, _ = xs.shape
    u = p.units
    wx, wh, b = p._cat()
    shape = (n, t_len, u)
    hs = np.empty(shape, dtype=xs.dtype)
    cache = {k: np.empty(shape, dtype=xs.dtype)
             for k in ("i", "f", "g", "o", "c", "tc", "h_prev", "c_prev")}
    h = np.zeros((n, u), dtype=xs.dtype)
    c = np.zeros((n, u), dtype=xs.dtype)
    xw = xs.reshape(n * t_len, -1) @ wx  # input transform for all steps at once
    xw = xw.reshape(n, t_len, 4 * u)
    for t in range(t_len):
        cache["h_prev"][:, t] = h
        cache["c_prev"][:, t] = c
        a = xw[:, t] + h @ wh + b
        h, c, i, f, g, o, tc = _cell_update(*_gate_split(a, u), c, p)
        hs[:, t] = h
        for key, val in zip(("i", "f", "g", "o", "c", "tc"), (i, f, g, o, c, tc)):
            cache[key][:, t] = val
    cache["xs"] = xs
    cache["wx"], cache["wh"] = wx, wh
    return hs, cache


def _lstm_backward(grad_h: np.ndarray, cache: dict, p: LstmParams,
                   return_sequences: bool, need_input_grad: bool = True):
    """Full BPTT; returns (grad_xs, grads dict keyed like ``as_dict``)."""
    xs, wx, wh = cache["xs"], cache["wx"], cache["wh"]
    n, t_len, d = xs.shape
    u = p.units
    dwx = np.zeros_like(wx)
    dwh = np.zeros_like(wh)
    db = np.zeros(4 * u, dtype=xs.dtype)
    peep = p.peephole
    if peep:
        dw_ci = np.zeros(u, dtype=xs.dtype)
        dw_cf = np.zeros(u, dtype=xs.dtype)
        dw_co = np.zeros(u, dtype=xs.dtype)
    dxs = np.zeros_like(xs) if need_input_grad else None
    dh_next = np.zeros((n, u), dtype=xs.dtype)
    dc_next = np.zeros((n, u), dtype=xs.dtype)
    for t in reversed(range(t_len)):
        dh = dh_next.copy()
        if return_sequences:
            dh += grad_h[:, t]
        elif t == t_len - 1:
            dh += grad_h
        i, f, g, o = (cache[k][:, t] for k in ("i", "f", "g", "o"))
        c, tc = cache["c"][:, t], cache["tc"][:, t]
        c_prev, h_prev = cache["c_prev"][:, t], cache["h_prev"][:, t]
        da_o = dh * tc * o * (1.0 - o)
        dc = dc_next + dh * o * (1.0 - tc * tc)
        if peep:
            dc = dc + da_o * p.w_co
        da_i = dc * g * i * (1.0 - i)
        da_f = dc * c_prev * f * (1.0 - f)
        da_c = dc * i * (1.0 - g * g)
        da = np.concatenate([da_i, da_f, da_c, da_o], axis=1)
        if need_input_grad:
            dxs[:, t] = da @ wx.T
        dh_next = da @ wh.T
        dc_next = dc * f
        if peep:
            dc_next = dc_next + da_i * p.w_ci + da_f * p.w_cf
            dw_ci += (da_i * c_prev).sum(axis=0)
            dw_cf += (da_f * c_prev).sum(axis=0)
            dw_co += (da_o * c).sum(axis=0)
        dwx += xs[:, t].T @ da
        dwh += h_prev.T @ da
        db += da.sum(axis=0)
    grads = {}
    for k, gate in enumerate(GATES):
        grads[f"w_x{gate}"] = dwx[:, k * u:(k + 1) * u]
        grads[f"w_h{gate}"] = dwh[:, k * u:(k + 1) * u]
        grads[f"b_{gate}"] = db[k * u:(k + 1) * u]
    if peep:
        grads.update(w_ci=dw_ci, w_cf=dw_cf, w_co=dw_co)
    return dxs, grads


def lstm_forward(xs: np.ndarray, params: LstmParams,
                 return_sequences: bool = False) -> np.ndarray:
    """Run the cell over a sequence from zero initial state.

    xs is (T, d) or (N, T, d); returns the hidden sequence when
    ``return_sequences`` else the final hidden state.
    """
    single = xs.ndim == 2
    if single:
        xs = xs[None]
    if xs.ndim != 3:
        raise ShapeError(f"lstm input must be (T,d) or (N,T,d), got shape {xs.shape}")
    if xs.shape[1] == 0:
        raise ShapeError("empty sequence: lstm needs at least one time step")
    hs, _ = _lstm_forward_cached(xs, params)
    out = hs if return_sequences else hs[:, -1]
    return out[0] if single else out


def bidirectional_lstm(xs: np.ndarray, fwd: LstmParams, bwd: LstmParams,
                       return_sequences: bool = False) -> np.ndarray:
    """Forward and time-reversed passes with independent parameters,
    concatenated on the feature axis (width 2*units)."""
    if fwd.units != bwd.units:
        raise ConfigError(
            f"bidirectional halves must have equal units, got {fwd.units} and {bwd.units}"
        )
    single = xs.ndim == 2
    if single:
        xs = xs[None]
    if xs.shape[1] == 0:
        raise ShapeError("empty sequence: lstm needs at least one time step")
    h_f = lstm_forward(xs, fwd, return_sequences)
    h_b = lstm_forward(xs[:, ::-1], bwd, return_sequences)
    if return_sequences:
        h_b = h_b[:, ::-1]
    out = np.concatenate([h_f, h_b], axis=-1)
    return out[0] if single else out


# ---------------------------------------------------------------------------
# convolutional LSTM
# ---------------------------------------------------------------------------

def convlstm_step(x_t: np.ndarray, h_prev: np.ndarray, c_prev: np.ndarray,
                  params: ConvLstmParams) -> tuple[np.ndarray, np.ndarray]:
    """One ConvLSTM update; accepts (H, W, C) maps or (N, H, W, C) batches."""
    single = x_t.ndim == 3
    if single:
        x_t, h_prev, c_prev = x_t[None], h_prev[None], c_prev[None]
    expected = params.state_shape(tuple(x_t.shape[1:3]))
    if tuple(h_prev.shape[1:3]) != expected or tuple(c_prev.shape[1:3]) != expected:
        raise ShapeError(
            f"state spatial shape {h_prev.shape[1:3]} does not match the input "
            f"convolution output {expected}"
        )
    if h_prev.shape[-1] != params.units:
        raise ShapeError("state channel width does not match params units")
    wx, wh, b = params._cat()
    a = (conv2d_forward_batch(x_t, wx, None, params.gate_geom())
         + conv2d_forward_batch(h_prev, wh, None, params.recur_geom())
         + b)
    h, c, *_ = _cell_update(*_gate_split(a, params.units), c_prev, params)
    return (h[0], c[0]) if single else (h, c)


def _convlstm_forward_cached(xs: np.ndarray, p: ConvLstmParams):
    """xs is (N, T, H, W, C); returns hidden sequence plus BPTT cache."""
    n, t_len = xs.shape[:2]
    u = p.units
    hs_spatial = p.state_shape(tuple(xs.shape[2:4]))
    wx, wh, b = p._cat()
    gate_geom, recur_geom = p.gate_geom(), p.recur_geom()
    shape = (n, t_len, *hs_spatial, u)
    hs = np.empty(shape, dtype=xs.dtype)
    cache = {k: np.empty(shape, dtype=xs.dtype)
             for k in ("i", "f", "g", "o", "c", "tc", "h_prev", "c_prev")}
    h = np.zeros((n, *hs_spatial, u), dtype=xs.dtype)
    c = np.zeros_like(h)
    for t in range(t_len):
        cache["h_prev"][:, t] = h
        cache["c_prev"][:, t] = c
        a = (conv2d_forward_batch(xs[:, t], wx, None, gate_geom)
             + conv2d_forward_batch(h, wh, None, recur_geom)
             + b)
        h, c, i, f, g, o, tc = _cell_update(*_gate_split(a, u), c, p)
        hs[:, t] = h
        for key, val in zip(("i", "f", "g", "o", "c", "tc"), (i, f, g, o, c, tc)):
            cache[key][:, t] = val
    cache["xs"] = xs
    cache["wx"], cache["wh"] = wx, wh
    return hs, cache


def _convlstm_backward(grad_h: np.ndarray, cache: dict, p: ConvLstmParams,
                       return_sequences: bool, need_input_grad: bool = True):
    xs, wx, wh = cache["xs"], cache["wx"], cache["wh"]
    n, t_len = xs.shape[:2]
    u = p.units
    gate_geom, recur_geom = p.gate_geom(), p.recur_geom()
    dwx = np.zeros_like(wx)
    dwh = np.zeros_like(wh)
    db = np.zeros(4 * u, dtype=xs.dtype)
    peep = p.peephole
    if peep:
        dw_ci = np.zeros(u, dtype=xs.dtype)
        dw_cf = np.zeros(u, dtype=xs.dtype)
        dw_co = np.zeros(u, dtype=xs.dtype)
    dxs = np.zeros_like(xs) if need_input_grad else None
    dh_next = np.zeros(cache["c"][:, 0].shape, dtype=xs.dtype)
    dc_next = np.zeros_like(dh_next)
    sum_axes = (0, 1, 2)
    for t in reversed(range(t_len)):
        dh = dh_next.copy()
        if return_sequences:
            dh += grad_h[:, t]
        elif t == t_len - 1:
            dh += grad_h
        i, f, g, o = (cache[k][:, t] for k in ("i", "f", "g", "o"))
        c, tc = cache["c"][:, t], cache["tc"][:, t]
        c_prev, h_prev = cache["c_prev"][:, t], cache["h_prev"][:, t]
        da_o = dh * tc * o * (1.0 - o)
        dc = dc_next + dh * o * (1.0 - tc * tc)
        if peep:
            dc = dc + da_o * p.w_co
        da_i = dc * g * i * (1.0 - i)
        da_f = dc * c_prev * f * (1.0 - f)
        da_c = dc * i * (1.0 - g * g)
        da = np.concatenate([da_i, da_f, da_c, da_o], axis=-1)
        dx_t, dwx_t, _ = conv2d_backward_batch(
            da, xs[:, t], wx, gate_geom, need_dx=need_input_grad)
        dh_next, dwh_t, _ = conv2d_backward_batch(da, h_prev, wh, recur_geom)
        if need_input_grad:
            dxs[:, t] = dx_t
        dwx += dwx_t
        dwh += dwh_t
        db += da.sum(axis=sum_axes)
        dc_next = dc * f
        if peep:
            dc_next = dc_next + da_i * p.w_ci + da_f * p.w_cf
            dw_ci += (da_i * c_prev).sum(axis=sum_axes)
            dw_cf += (da_f * c_prev).sum(axis=sum_axes)
            dw_co += (da_o * c).sum(axis=sum_axes)
    grads = {}
    for k, gate in enumerate(GATES):
        grads[f"w_x{gate}"] = dwx[..., k * u:(k + 1) * u]
        grads[f"w_h{gate}"] = dwh[..., k * u:(k + 1) * u]
        grads[f"b_{gate}"] = db[k * u:(k + 1) * u]
    if peep:
        grads.update(w_ci=dw_ci, w_cf=dw_cf, w_co=dw_co)
    return dxs, grads


def convlstm_forward(xs: np.ndarray, params: ConvLstmParams,
                     return_sequences: bool = False) -> np.ndarray:
    """Run the ConvLSTM over (T, H, W, C) or (N, T, H, W, C) from zero state."""
    single = xs.ndim == 4
    if single:
        xs = xs[None]
    if xs.ndim != 5:
        raise ShapeError(f"convlstm input must be (T,H,W,C) or (N,T,H,W,C), got {xs.shape}")
    if xs.shape[1] == 0:
        raise ShapeError("empty sequence: convlstm needs at least one time step")
    hs, _ = _convlstm_forward_cached(xs, params)
    out = hs if return_sequences else hs[:, -1]
    return out[0] if single else out


# ---------------------------------------------------------------------------
# layer classes
# ---------------------------------------------------------------------------

class LstmLayer(Layer):
    kind = "lstm"

    def __init__(self, units: int, return_sequences: bool = False,
                 peephole: bool = False):
        super().__init__()
        self.units = units
        self.return_sequences = return_sequences
        self.peephole = peephole
        self.p: LstmParams | None = None

    def output_shape(self, in_shape):
        if len(in_shape) != 2:
            raise ShapeError(f"lstm expects (T, d) input, got shape {in_shape}")
        t, _ = in_shape
        return (t, self.units) if self.return_sequences else (self.units,)

    def param_count(self, in_shape):
        d = in_shape[1]
        u = self.units
        return 4 * (u * (d + u) + u) + (3 * u if self.peephole else 0)

    def build(self, in_shape, rng, dtype=np.float32):
        self.p = LstmParams.init(in_shape[1], self.units, rng,
                                 peephole=self.peephole, dtype=dtype)
        self.params = self.p.as_dict()
        self._alloc_grads()
        return self.output_shape(in_shape)

    def forward(self, x, train=False, rng=None):
        if x.shape[1] == 0:
            raise ShapeError("empty sequence: lstm needs at least one time step")
        hs, cache = _lstm_forward_cached(x, self.p)
        self._cache = cache
        return hs if self.return_sequences else hs[:, -1]

    def backward(self, grad_out, need_input_grad=True):
        cache = self._cache
        self._cache = None
        dxs, grads = _lstm_backward(grad_out, cache, self.p,
                                    self.return_sequences, need_input_grad)
        for k, g in grads.items():
            self.grads[k] += g
        return dxs


class BiLstmLayer(Layer):
    kind = "bilstm"

    def __init__(self, units: int, return_sequences: bool = False,
                 peephole: bool = False):
        super().__init__()
        self.units = units
        self.return_sequences = return_sequences
        self.peephole = peephole
        self.fwd: LstmParams | None = None
        self.bwd: LstmParams | None = None

    def output_shape(self, in_shape):
        if len(in_shape) != 2:
            raise ShapeError(f"bilstm expects (T, d) input, got shape {in_shape}")
        t, _ = in_shape
        width = 2 * self.units
        return (t, width) if self.return_sequences else (width,)

    def param_count(self, in_shape):
        d = in_shape[1]
        u = self.units
        one = 4 * (u * (d + u) + u) + (3 * u if self.peephole else 0)
        return 2 * one

    def build(self, in_shape, rng, dtype=np.float32):
        self.fwd = LstmParams.init(in_shape[1], self.units, rng,
                                   peephole=self.peephole, dtype=dtype)
        self.bwd = LstmParams.init(in_shape[1], self.units, rng,
                                   peephole=self.peephole, dtype=dtype)
        self.params = {f"fwd_{k}": v for k, v in self.fwd.as_dict().items()}
        self.params.update({f"bwd_{k}": v for k, v in self.bwd.as_dict().items()})
        self._alloc_grads()
        return self.output_shape(in_shape)

    def forward(self, x, train=False, rng=None):
        if x.shape[1] == 0:
            raise ShapeError("empty sequence: lstm needs at least one time step")
        hs_f, cache_f = _lstm_forward_cached(x, self.fwd)
        xs_rev = np.ascontiguousarray(x[:, ::-1])
        hs_b, cache_b = _lstm_forward_cached(xs_rev, self.bwd)
        self._cache = (cache_f, cache_b)
        if self.return_sequences:
            return np.concatenate([hs_f, hs_b[:, ::-1]], axis=-1)
        return np.concatenate([hs_f[:, -1], hs_b[:, -1]], axis=-1)

    def backward(self, grad_out, need_input_grad=True):
        cache_f, cache_b = self._cache
        self._cache = None
        u = self.units
        g_f = grad_out[..., :u]
        g_b = grad_out[..., u:]
        if self.return_sequences:
            g_b = np.ascontiguousarray(g_b[:, ::-1])
        dx_f, grads_f = _lstm_backward(g_f, cache_f, self.fwd,
                                       self.return_sequences, need_input_grad)
        dx_b, grads_b = _lstm_backward(g_b, cache_b, self.bwd,
                                       self.return_sequences, need_input_grad)
        for k, g in grads_f.items():
            self.grads[f"fwd_{k}"] += g
        for k, g in grads_b.items():
            self.grads[f"bwd_{k}"] += g
        if not need_input_grad:
            return None
        return dx_f + dx_b[:, ::-1]


class ConvLstmLayer(Layer):
    kind = "convlstm"

    def __init__(self, units: int, kernel: tuple[int, int],
                 strides: tuple[int, int] = (1, 1), padding: str = "same",
                 return_sequences: bool = False, peephole: bool = False):
        super().__init__()
        self.units = units
        self.kernel = tuple(int(k) for k in kernel)
        self.strides = tuple(int(s) for s in strides)
        self.padding = padding
        self.return_sequences = return_sequences
        self.peephole = peephole
        self.p: ConvLstmParams | None = None

    def _state_geom(self) -> ConvGeometry:
        return ConvGeometry(kernel=self.kernel, strides=self.strides,
                            padding=self.padding, filters=self.units)

    def output_shape(self, in_shape):
        if len(in_shape) != 4:
            raise ShapeError(f"convlstm expects (T,H,W,C) input, got shape {in_shape}")
        t = in_shape[0]
        hs = self._state_geom().out_shape(tuple(in_shape[1:3]))
        if self.return_sequences:
            return (t, *hs, self.units)
        return (*hs, self.units)

    def param_count(self, in_shape):
        cin = in_shape[3]
        u = self.units
        kh, kw = self.kernel
        return 4 * (u * kh * kw * (cin + u)) + 4 * u + (3 * u if self.peephole else 0)

    def build(self, in_shape, rng, dtype=np.float32):
        self.p = ConvLstmParams.init(in_shape[3], self.units, self.kernel, rng,
                                     strides=self.strides, padding=self.padding,
                                     peephole=self.peephole, dtype=dtype)
        self.params = self.p.as_dict()
        self._alloc_grads()
        return self.output_shape(in_shape)

    def forward(self, x, train=False, rng=None):
        if x.shape[1] == 0:
            raise ShapeError("empty sequence: convlstm needs at least one time step")
        hs, cache = _convlstm_forward_cached(x, self.p)
        self._cache = cache
        return hs if self.return_sequences else hs[:, -1]

    def backward(self, grad_out, need_input_grad=True):
        cache = self._cache
        self._cache = None
        dxs, grads = _convlstm_backward(grad_out, cache, self.p,
                                        self.return_sequences, need_input_grad)
        for k, g in grads.items():
            self.grads[k] += g
        return dxs
