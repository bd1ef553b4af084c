"""Numeric kernels: 3D/2D convolution with exact gradients, pooling, activations.

Convolution here means cross-correlation (no kernel flip), channels-last:
video blocks are (time, height, width, channels), weights are
(k_t, k_h, k_w, C_in, C_out). Public functions take one sample; the
``*_batch`` variants take a leading batch axis and are what the layer
classes call.

Two execution strategies produce identical results up to rounding: an
im2col+GEMM path (default; exact fixed summation order) and an FFT path
(see ``_fftconv``) that wins for large spatial kernels. ``method="auto"``
picks by a simple size heuristic. ``conv3d_oracle`` is an intentionally
naive nested-loop implementation kept as an independent reference.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import _fftconv
from .errors import GeometryError, ShapeError
from .geometry import ConvGeometry, pool_extent

# patch buffers larger than this are processed in batch chunks
_PATCH_BUFFER_BYTES = 256 * 1024 * 1024


# ---------------------------------------------------------------------------
# activations
# ---------------------------------------------------------------------------

ACTIVATIONS = ("sigmoid", "tanh", "linear")


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    x = np.asarray(x)
    out = np.empty_like(x, dtype=np.result_type(x.dtype, np.float32))
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def activation(x: np.ndarray, kind: str) -> np.ndarray:
    """Elementwise activation; ``linear`` is the identity."""
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return np.tanh(x)
    if kind == "linear":
        return np.asarray(x)
    raise ShapeError(f"unknown activation {kind!r} (expected one of {ACTIVATIONS})")


def activation_deriv(out: np.ndarray, kind: str) -> np.ndarray:
    """Derivative expressed through the activation output (sigma' = s(1-s), tanh' = 1-t^2)."""
    if kind == "sigmoid":
        return out * (1.0 - out)
    if kind == "tanh":
        return 1.0 - out * out
    if kind == "linear":
        return np.ones_like(out)
    raise ShapeError(f"unknown activation {kind!r} (expected one of {ACTIVATIONS})")


# ---------------------------------------------------------------------------
# shared conv plumbing
# ---------------------------------------------------------------------------

def _check_conv_args(x: np.ndarray, w: np.ndarray, b: np.ndarray | None,
                     geom: ConvGeometry) -> None:
    if x.ndim != 5:
        raise ShapeError(f"conv3d input must have 4 axes (T,H,W,C), got shape {x.shape[1:]}")
    if w.ndim != 5:
        raise ShapeError(f"conv3d weights must have 5 axes (kt,kh,kw,Cin,Cout), got {w.shape}")
    if geom.ndim != 3:
        raise GeometryError(f"conv3d needs a 3-axis geometry, got {geom.ndim} axes")
    if tuple(w.shape[:3]) != geom.kernel:
        raise ShapeError(
            f"weight kernel extents {w.shape[:3]} do not match geometry kernel {geom.kernel}"
        )
    if w.shape[3] != x.shape[4]:
        raise ShapeError(
            f"weights expect {w.shape[3]} input channels but input has {x.shape[4]}"
        )
    if w.shape[4] != geom.filters:
        raise ShapeError(
            f"weights have {w.shape[4]} output channels but geometry declares {geom.filters}"
        )
    if b is not None and b.shape != (geom.filters,):
        raise ShapeError(f"bias shape {b.shape} != ({geom.filters},)")


def _pad_input(x: np.ndarray, geom: ConvGeometry) -> np.ndarray:
    pads = geom.pads(tuple(x.shape[1:4]))
    if all(p == (0, 0) for p in pads):
        return x
    return np.pad(x, [(0, 0), *pads, (0, 0)])


def _use_fft(geom: ConvGeometry, out_spatial: tuple[int, int, int]) -> bool:
    _, kh, kw = geom.kernel
    _, ho, wo = out_spatial
    return kh * kw >= 41 and ho * wo >= 16


def _window_view(xp: np.ndarray, geom: ConvGeometry) -> np.ndarray:
    st, sh, sw = geom.strides
    v = sliding_window_view(xp, geom.kernel, axis=(1, 2, 3))
    return v[:, ::st, ::sh, ::sw]  # (N, To, Ho, Wo, Cin, kt, kh, kw)


def _batch_chunks(n: int, per_sample_bytes: int) -> int:
    chunk = max(1, _PATCH_BUFFER_BYTES // max(per_sample_bytes, 1))
    return min(n, chunk)


def _conv3d_gemm(xp: np.ndarray, w: np.ndarray, geom: ConvGeometry,
                 out_spatial: tuple[int, int, int]) -> np.ndarray:
    n = xp.shape[0]
    to, ho, wo = out_spatial
    kt, kh, kw, cin, cout = w.shape
    out = np.empty((n, to, ho, wo, cout), dtype=xp.dtype)
    v = _window_view(xp, geom)
    per_sample = to * ho * wo * kt * kh * kw * cin * xp.dtype.itemsize
    step = _batch_chunks(n, per_sample)
    for lo in range(0, n, step):
        hi = min(lo + step, n)
        out[lo:hi] = np.tensordot(v[lo:hi], w, axes=([4, 5, 6, 7], [3, 0, 1, 2]))
    return out


def _conv3d_gemm_grad_w(xp: np.ndarray, go: np.ndarray, geom: ConvGeometry,
                        w_shape: tuple[int, ...]) -> np.ndarray:
    v = _window_view(xp, geom)
    n = xp.shape[0]
    kt, kh, kw, cin, cout = w_shape
    to, ho, wo = go.shape[1:4]
    per_sample = to * ho * wo * kt * kh * kw * cin * xp.dtype.itemsize
    step = _batch_chunks(n, per_sample)
    dw = np.zeros(w_shape, dtype=xp.dtype)
    for lo in range(0, n, step):
        hi = min(lo + step, n)
        # (cin, kt, kh, kw, cout) -> (kt, kh, kw, cin, cout)
        part = np.tensordot(v[lo:hi], go[lo:hi], axes=([0, 1, 2, 3], [0, 1, 2, 3]))
        dw += part.transpose(1, 2, 3, 0, 4)
    return dw


def _conv3d_gemm_grad_x(go: np.ndarray, w: np.ndarray, geom: ConvGeometry,
                        padded_shape: tuple[int, ...]) -> np.ndarray:
    n, to, ho, wo, cout = go.shape
    kt, kh, kw, cin, _ = w.shape
    st, sh, sw = geom.strides
    gxp = np.zeros(padded_shape, dtype=go.dtype)
    per_sample = to * ho * wo * kt * kh * kw * cin * go.dtype.itemsize
    step = _batch_chunks(n, per_sample)
    wmat = w.reshape(kt * kh * kw * cin, cout).T  # (cout, K*cin)
    for lo in range(0, n, step):
        hi = min(lo + step, n)
        m = hi - lo
        patches = (go[lo:hi].reshape(-1, cout) @ wmat).reshape(
            m, to, ho, wo, kt, kh, kw, cin
        )
        for i in range(kt):
            for j in range(kh):
                for k in range(kw):
                    gxp[lo:hi,
                        i : i + (to - 1) * st + 1 : st,
                        j : j + (ho - 1) * sh + 1 : sh,
                        k : k + (wo - 1) * sw + 1 : sw] += patches[:, :, :, :, i, j, k]
    return gxp


def _unpad(gxp: np.ndarray, geom: ConvGeometry, in_spatial: tuple[int, int, int]) -> np.ndarray:
    pads = geom.pads(in_spatial)
    if all(p == (0, 0) for p in pads):
        return gxp
    sl = [slice(None)]
    for (lo, _), extent in zip(pads, in_spatial):
        sl.append(slice(lo, lo + extent))
    sl.append(slice(None))
    return np.ascontiguousarray(gxp[tuple(sl)])


# ---------------------------------------------------------------------------
# conv3d public API
# ---------------------------------------------------------------------------

def conv3d_forward_batch(
    x: np.ndarray,
    w: np.ndarray,
    b: np.ndarray | None,
    geom: ConvGeometry,
    method: str = "auto",
    cache: dict | None = None,
) -> np.ndarray:
    """Batched strided cross-correlation with per-channel bias.

    ``cache``, when given, is filled with intermediates reused by
    ``conv3d_backward_batch`` (the padded input, and the input spectrum
    on the FFT path).
    """
    _check_conv_args(x, w, b, geom)
    in_spatial = tuple(x.shape[1:4])
    out_spatial = geom.out_shape(in_spatial)
    xp = _pad_input(x, geom)
    if method == "auto":
        method = "fft" if _use_fft(geom, out_spatial) else "gemm"
    if method == "fft":
        out = _fftconv.forward(xp, w, geom.strides, out_spatial, cache=cache)
    elif method == "gemm":
        out = _conv3d_gemm(xp, w, geom, out_spatial)
    else:
        raise ShapeError(f"unknown conv method {method!r}")
    if cache is not None:
        cache.update(xp=xp, method=method, in_spatial=in_spatial)
    if b is not None:
        out += b
    return out


def conv3d_backward_batch(
    grad_out: np.ndarray,
    x: np.ndarray,
    w: np.ndarray,
    geom: ConvGeometry,
    method: str = "auto",
    cache: dict | None = None,
    need_dx: bool = True,
) -> tuple[np.ndarray | None, np.ndarray, np.ndarray]:
    """Exact adjoints of ``conv3d_forward_batch``: (grad_x, grad_w, grad_b)."""
    _check_conv_args(x, w, None, geom)
    in_spatial = tuple(x.shape[1:4])
    out_spatial = geom.out_shape(in_spatial)
    if tuple(grad_out.shape) != (x.shape[0], *out_spatial, geom.filters):
        raise ShapeError(
            f"grad_out shape {grad_out.shape} does not match forward output "
            f"{(x.shape[0], *out_spatial, geom.filters)}"
        )
    if cache is not None and "xp" in cache:
        xp, method = cache["xp"], cache["method"]
    else:
        xp = _pad_input(x, geom)
        if method == "auto":
            method = "fft" if _use_fft(geom, out_spatial) else "gemm"

    grad_b = grad_out.sum(axis=(0, 1, 2, 3))
    if method == "fft":
        gxp, grad_w = _fftconv.backward(
            grad_out, xp, w, geom.strides, need_dx=need_dx, need_dw=True,
            cache=cache,
        )
    else:
        grad_w = _conv3d_gemm_grad_w(xp, grad_out, geom, w.shape)
        gxp = _conv3d_gemm_grad_x(grad_out, w, geom, xp.shape) if need_dx else None
    grad_x = _unpad(gxp, geom, in_spatial) if need_dx else None
    return grad_x, grad_w, grad_b


def conv3d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray | None,
                   geom: ConvGeometry, method: str = "auto") -> np.ndarray:
    """Single-sample convolution of a (T, H, W, Cin) block."""
    if x.ndim != 4:
        raise ShapeError(f"conv3d input must be (T,H,W,C), got shape {x.shape}")
    return conv3d_forward_batch(x[None], w, b, geom, method=method)[0]


def conv3d_backward(grad_out: np.ndarray, x: np.ndarray, w: np.ndarray,
                    geom: ConvGeometry, method: str = "auto"
                    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    if x.ndim != 4:
        raise ShapeError(f"conv3d input must be (T,H,W,C), got shape {x.shape}")
    if grad_out.ndim != 4:
        raise ShapeError(f"grad_out must be (T,H,W,C), got shape {grad_out.shape}")
    dx, dw, db = conv3d_backward_batch(grad_out[None], x[None], w, geom, method=method)
    return dx[0], dw, db


# ---------------------------------------------------------------------------
# conv2d as the T=1 specialization
# ---------------------------------------------------------------------------

def _geom_2d_to_3d(geom: ConvGeometry) -> ConvGeometry:
    if geom.ndim != 2:
        raise GeometryError(f"conv2d needs a 2-axis geometry, got {geom.ndim} axes")
    return ConvGeometry(
        kernel=(1, *geom.kernel),
        strides=(1, *geom.strides),
        padding=geom.padding,
        filters=geom.filters,
    )


def conv2d_forward_batch(x: np.ndarray, w: np.ndarray, b: np.ndarray | None,
                         geom: ConvGeometry, method: str = "auto",
                         cache: dict | None = None) -> np.ndarray:
    """Batched 2D convolution of (N, H, W, Cin); bias is optional."""
    if x.ndim != 4:
        raise ShapeError(f"conv2d batch input must be (N,H,W,C), got shape {x.shape}")
    if w.ndim != 4:
        raise ShapeError(f"conv2d weights must be (kh,kw,Cin,Cout), got {w.shape}")
    out = conv3d_forward_batch(x[:, None], w[None], b, _geom_2d_to_3d(geom),
                               method=method, cache=cache)
    return out[:, 0]


def conv2d_backward_batch(grad_out: np.ndarray, x: np.ndarray, w: np.ndarray,
                          geom: ConvGeometry, method: str = "auto",
                          cache: dict | None = None, need_dx: bool = True
                          ) -> tuple[np.ndarray | None, np.ndarray, np.ndarray]:
    dx, dw, db = conv3d_backward_batch(
        grad_out[:, None], x[:, None], w[None], _geom_2d_to_3d(geom),
        method=method, cache=cache, need_dx=need_dx,
    )
    return (dx[:, 0] if need_dx else None), dw[0], db


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray | None,
                   geom: ConvGeometry, method: str = "auto") -> np.ndarray:
    """Single-sample 2D convolution of an (H, W, Cin) map."""
    if x.ndim != 3:
        raise ShapeError(f"conv2d input must be (H,W,C), got shape {x.shape}")
    return conv2d_forward_batch(x[None], w, b, geom, method=method)[0]


def conv2d_backward(grad_out: np.ndarray, x: np.ndarray, w: np.ndarray,
                    geom: ConvGeometry, method: str = "auto"
                    ) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    dx, dw, db = conv2d_backward_batch(grad_out[None], x[None], w, geom, method=method)
    return dx[0], dw, db


# ---------------------------------------------------------------------------
# brute-force oracle
# ---------------------------------------------------------------------------

def conv3d_oracle(x: np.ndarray, w: np.ndarray, b: np.ndarray | None,
                  geom: ConvGeometry) -> np.ndarray:
    """Reference convolution by direct nested-loop summation.

    Deliberately free of layout tricks; used to cross-check the fast paths.
    """
    if x.ndim != 4:
        raise ShapeError(f"conv3d input must be (T,H,W,C), got shape {x.shape}")
    _check_conv_args(x[None], w, b, geom)
    kt, kh, kw, cin, cout = w.shape
    st, sh, sw = geom.strides
    in_spatial = tuple(x.shape[:3])
    to, ho, wo = geom.out_shape(in_spatial)
    (pt, _), (ph, _), (pw, _) = geom.pads(in_spatial)
    t_ext, h_ext, w_ext = in_spatial
    xl = x.tolist()
    wl = w.tolist()
    bias = [0.0] * cout if b is None else [float(v) for v in b]
    out = np.empty((to, ho, wo, cout), dtype=np.float64)
    for ot in range(to):
        for oh in range(ho):
            for ow in range(wo):
                for oc in range(cout):
                    acc = bias[oc]
                    for dt in range(kt):
                        it = ot * st + dt - pt
                        if it < 0 or it >= t_ext:
                            continue
                        for dh in range(kh):
                            ih = oh * sh + dh - ph
                            if ih < 0 or ih >= h_ext:
                                continue
                            for dw_ in range(kw):
                                iw = ow * sw + dw_ - pw
                                if iw < 0 or iw >= w_ext:
                                    continue
                                for ic in range(cin):
                                    acc += xl[it][ih][iw][ic] * wl[dt][dh][dw_][ic][oc]
                    out[ot, oh, ow, oc] = acc
    return out.astype(x.dtype, copy=False)


# ---------------------------------------------------------------------------
# max pooling
# ---------------------------------------------------------------------------

def maxpool3d_batch(x: np.ndarray, pool: tuple[int, int, int]
                    ) -> tuple[np.ndarray, np.ndarray]:
    """Non-overlapping max pooling over (T, H, W), channels independent.

    Returns (pooled, argmax); argmax holds, per output element, the flat
    offset of the winning input inside its (pt, ph, pw) window in row-major
    window order, first occurrence winning ties. Trailing remainders that do
    not fill a window are dropped (valid semantics).
    """
    if x.ndim != 5:
        raise ShapeError(f"maxpool3d batch input must be (N,T,H,W,C), got {x.shape}")
    pt, ph, pw = pool
    n, t, h, w, c = x.shape
    to = pool_extent(t, pt, "time")
    ho = pool_extent(h, ph, "height")
    wo = pool_extent(w, pw, "width")
    trimmed = x[:, : to * pt, : ho * ph, : wo * pw]
    windows = trimmed.reshape(n, to, pt, ho, ph, wo, pw, c)
    windows = windows.transpose(0, 1, 3, 5, 2, 4, 6, 7).reshape(n, to, ho, wo, pt * ph * pw, c)
    argmax = windows.argmax(axis=4)
    out = np.take_along_axis(windows, argmax[:, :, :, :, None, :], axis=4)[:, :, :, :, 0, :]
    return out, argmax.astype(np.int32)


def maxpool3d_backward_batch(grad_out: np.ndarray, argmax: np.ndarray,
                             in_shape: tuple[int, ...], pool: tuple[int, int, int]
                             ) -> np.ndarray:
    """Routes each output gradient to the argmax input position."""
    pt, ph, pw = pool
    n, to, ho, wo, c = grad_out.shape
    scatter = np.zeros((n, to, ho, wo, pt * ph * pw, c), dtype=grad_out.dtype)
    np.put_along_axis(scatter, argmax[:, :, :, :, None, :].astype(np.intp),
                      grad_out[:, :, :, :, None, :], axis=4)
    scatter = scatter.reshape(n, to, ho, wo, pt, ph, pw, c).transpose(0, 1, 4, 2, 5, 3, 6, 7)
    dx = np.zeros(in_shape, dtype=grad_out.dtype)
    dx[:, : to * pt, : ho * ph, : wo * pw] = scatter.reshape(n, to * pt, ho * ph, wo * pw, c)
    return dx


def maxpool3d(x: np.ndarray, pool: tuple[int, int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Single-sample max pooling of a (T, H, W, C) block; see the batch variant."""
    if x.ndim != 4:
        raise ShapeError(f"maxpool3d input must be (T,H,W,C), got shape {x.shape}")
    out, argmax = maxpool3d_batch(x[None], pool)
    return out[0], argmax[0]
