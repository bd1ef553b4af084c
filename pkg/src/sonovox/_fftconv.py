"""FFT-based strided cross-correlation over the spatial axes.

Used as a drop-in strategy for the conv kernels when the spatial kernel is
large (13x13 in the reference stacks): the spatial axes go through rfft2
while the short time axis is correlated directly, so there is no circular
aliasing on the time axis at all. On the spatial axes the transform length
is only required to reach the padded input extent: the output positions we
read lie in [k-1, n_pad-1] of the full linear correlation, which circular
convolution reproduces exactly for transform lengths >= n_pad.

Three speed measures beyond the basic scheme, all bit-verified against the
direct path by the kernel test suite:

* spectra keep the transform axes last (contiguous for pocketfft) and the
  per-frequency channel contractions run as one batched matmul over the
  frequency grid (~3x faster than the equivalent einsum);
* strided outputs are produced by folding the spectrum (subsampling in
  space is aliasing in frequency), so the inverse transforms run at
  1/(sh*sw) of the full grid; transform lengths are chosen divisible by
  the strides to allow this;
* the spectrum of the stride-scattered gradient (transposed convolution
  input) is computed as a small dense transform and tiled periodically
  instead of transforming the zero-stuffed full grid.

All functions take the zero-padded input ``xp`` of shape (N, Tp, Hp, Wp, Cin)
and weights of shape (kt, kh, kw, Cin, Cout).
"""

from __future__ import annotations

import numpy as np
import scipy.fft as sfft

_WORKERS = -1  # scipy.fft uses all available cores


def _fft_lengths(hp: int, wp: int, strides: tuple[int, int, int]) -> tuple[int, int]:
    _, sh, sw = strides
    lh = sfft.next_fast_len(hp)
    while lh % sh:
        lh = sfft.next_fast_len(lh + 1)
    lw = sfft.next_fast_len(wp)
    while lw % sw:
        lw = sfft.next_fast_len(lw + 1)
    return lh, lw


def _gather_time(xf: np.ndarray, out_t: int, stride_t: int, kernel_t: int) -> np.ndarray:
    """(N, Tp, ...) -> (N, out_t, kernel_t, ...) selecting t'*stride + i."""
    n, tp = xf.shape[:2]
    if stride_t == kernel_t and tp == out_t * kernel_t:
        return xf.reshape(n, out_t, kernel_t, *xf.shape[2:])
    tidx = np.arange(out_t)[:, None] * stride_t + np.arange(kernel_t)[None, :]
    return xf[:, tidx]


def input_spectrum(xp: np.ndarray, strides: tuple[int, int, int]) -> np.ndarray:
    """(N, Tp, Hp, Wp, Cin) -> (N, Tp, Cin, Lh, Lw2) channel-first spectrum."""
    lh, lw = _fft_lengths(xp.shape[2], xp.shape[3], strides)
    xt = np.ascontiguousarray(xp.transpose(0, 1, 4, 2, 3))
    return sfft.rfft2(xt, s=(lh, lw), axes=(-2, -1), workers=_WORKERS)


def _bake_phases(kf: np.ndarray, lh: int, lw: int, sh: int, sw: int,
                 dh: int, dw: int) -> np.ndarray:
    """Apply the subsampling phase shifts to the (small) kernel spectrum.

    Folding reads y[d + m*s]; the shift-by-d phase is linear, so it can be
    baked into the kernel side of the frequency matmul instead of touching
    the much larger activation spectrum. Phases are only needed on axes
    that will actually be folded. The baked phases also pass correctly
    through the conjugated-bin gather (conj(phase(L - k)) == phase(k)).
    """
    grid = np.ones((lh, lw // 2 + 1), dtype=np.complex64)
    if sh > 1 and dh:
        grid = grid * np.exp(2j * np.pi * np.arange(lh) * dh / lh)[:, None]
    if sw > 1 and dw:
        grid = grid * np.exp(2j * np.pi * np.arange(lw // 2 + 1) * dw / lw)[None, :]
    return kf * grid.astype(kf.dtype)


def _fold_spectrum(yf: np.ndarray, lh: int, lw: int, sh: int, sw: int
                   ) -> tuple[np.ndarray, int, int]:
    """Fold an rfft2 spectrum (axes 0=H full, 1=W half; batch axes trailing)
    so its inverse transform yields the stride-subsampled signal. Offset
    phases must already be baked in (see ``_bake_phases``).

    The H axis folds first (a reshape+sum, no gathers); the W half axis
    then folds on the shrunken array using the real-signal symmetry
    Y[-kh, -kw] = conj(Y[kh, kw]), which survives the H fold because the
    H-subsampled signal is still real.
    """
    if sh > 1:
        lhs = lh // sh
        yf = yf.reshape(sh, lhs, *yf.shape[1:]).sum(axis=0) / sh
        lh = lhs
    if sw > 1:
        lws = lw // sw
        lws2 = lws // 2 + 1
        hflip = (-np.arange(lh)) % lh
        # alias group r=0 is the plain low-frequency block: a cheap view copy
        out = yf[:, :lws2].copy()
        for r in range(1, sw):
            ks = np.arange(lws2) + r * lws
            plain = np.flatnonzero(ks <= lw // 2)
            conj = np.flatnonzero(ks > lw // 2)
            if plain.size:
                out[:, plain] += yf[:, ks[plain]]
            if conj.size:
                out[:, conj] += yf[hflip[:, None], (lw - ks[conj])[None, :]].conj()
        out /= sw
        yf = out
        lw = lws
    return yf, lh, lw


def _grad_spectra(grad: np.ndarray, lh: int, lw: int, sh: int, sw: int,
                  need_plain: bool, need_conj: bool
                  ) -> tuple[np.ndarray | None, np.ndarray | None]:
    """Spectra of ``grad`` scattered on the (sh, sw) stride grid at offset 0
    inside an (lh, lw) frame. grad is (M, Ho, Wo); each result is
    (Lh, Lw2, M) -- the layout the frequency matmuls consume directly.

    The scattered signal's spectrum is the small dense spectrum tiled
    periodically, so only an (lh/sh, lw/sw) transform is ever run; the
    conjugated variant conjugates the small spectrum before tiling.
    """
    m = grad.shape[0]
    ho, wo = grad.shape[-2:]
    lw2 = lw // 2 + 1
    lhs, lws = lh // sh, lw // sw
    buf = np.zeros((m, lhs, lws), dtype=grad.dtype)
    buf[:, :ho, :wo] = grad
    gs = sfft.rfft2(buf, axes=(-2, -1), workers=_WORKERS)  # (M, Lhs, Lws2)
    gs_t = np.ascontiguousarray(gs.transpose(1, 2, 0))     # (Lhs, Lws2, M)
    if sh == 1 and sw == 1:
        out_plain = gs_t if need_plain else None
        out_conj = gs_t.conj() if need_conj else None
        return out_plain, out_conj
    gs_conj_t = gs_t.conj()
    kh = np.arange(lh) % lhs
    khflip = (-kh) % lhs
    kw = np.arange(lw2) % lws
    kw_idx = np.where(kw <= lws // 2, kw, lws - kw)
    plain_cols = np.flatnonzero(kw <= lws // 2)
    conj_cols = np.flatnonzero(kw > lws // 2)

    def tiled(src, src_conj):
        # plain bins come from src; mirrored bins from the conjugate source
        # with the H axis flipped (real-signal symmetry)
        out = np.empty((lh, lw2, m), dtype=gs.dtype)
        out[:, plain_cols] = src[kh[:, None], kw_idx[plain_cols][None, :]]
        if conj_cols.size:
            out[:, conj_cols] = src_conj[khflip[:, None], kw_idx[conj_cols][None, :]]
        return out

    out_plain = tiled(gs_t, gs_conj_t) if need_plain else None
    out_conj = tiled(gs_conj_t, gs_t) if need_conj else None
    return out_plain, out_conj


def forward(
    xp: np.ndarray,
    w: np.ndarray,
    strides: tuple[int, int, int],
    out_spatial: tuple[int, int, int],
    xf: np.ndarray | None = None,
    cache: dict | None = None,
) -> np.ndarray:
    """Strided correlation; ``xf`` may carry a precomputed input spectrum.

    When ``cache`` is given, the flattened frequency-matmul operand built
    from the input spectrum is stashed for reuse by ``backward`` (it is the
    expensive transpose of the whole input spectrum).
    """
    kt, kh, kw, cin, cout = w.shape
    st, sh, sw = strides
    to, ho, wo = out_spatial
    n = xp.shape[0]
    lh, lw = _fft_lengths(xp.shape[2], xp.shape[3], strides)
    lw2 = lw // 2 + 1
    if xf is None:
        xf = input_spectrum(xp, strides)
    kf = sfft.rfft2(np.ascontiguousarray(w[:, ::-1, ::-1].transpose(0, 3, 4, 1, 2)),
                    s=(lh, lw), axes=(-2, -1), workers=_WORKERS)  # (kt,Cin,F,Lh,Lw2)
    kf = _bake_phases(kf, lh, lw, sh, sw, kh - 1, kw - 1)
    gathered = _gather_time(xf, to, st, kt)  # (N,To,kt,Cin,Lh,Lw2)
    a = np.ascontiguousarray(gathered.transpose(4, 5, 0, 1, 2, 3)
                             ).reshape(lh, lw2, n * to, kt * cin)
    if cache is not None:
        cache["freq_a"] = a
    b = kf.transpose(3, 4, 0, 1, 2).reshape(lh, lw2, kt * cin, cout)
    yf = a @ b  # (Lh,Lw2,N*To,F)
    yf, lh_eff, lw_eff = _fold_spectrum(yf, lh, lw, sh, sw)
    dh = 0 if lh_eff != lh else kh - 1
    dw = 0 if lw_eff != lw else kw - 1
    sh_eff = 1 if lh_eff != lh else sh
    sw_eff = 1 if lw_eff != lw else sw
    yf = np.ascontiguousarray(yf.transpose(2, 3, 0, 1))  # (N*To,F,Lh',Lw2')
    y = sfft.irfft2(yf, s=(lh_eff, lw_eff), axes=(-2, -1), workers=_WORKERS)
    y = y.reshape(n, to, cout, lh_eff, lw_eff)
    y = y[:, :, :, dh : dh + (ho - 1) * sh_eff + 1 : sh_eff,
             dw : dw + (wo - 1) * sw_eff + 1 : sw_eff]
    return np.ascontiguousarray(y.transpose(0, 1, 3, 4, 2))


def backward(
    grad_out: np.ndarray,
    xp: np.ndarray,
    w: np.ndarray,
    strides: tuple[int, int, int],
    need_dx: bool = True,
    need_dw: bool = True,
    xf: np.ndarray | None = None,
    cache: dict | None = None,
) -> tuple[np.ndarray | None, np.ndarray | None]:
    """Gradients w.r.t. the padded input and the weights.

    grad_out has shape (N, To, Ho, Wo, Cout). Returns (grad_xp, grad_w);
    entries are None when not requested.
    """
    n, tp, hp, wp, cin = xp.shape
    kt, kh, kw, _, cout = w.shape
    to, ho, wo = grad_out.shape[1:4]
    st, sh, sw = strides
    lh, lw = _fft_lengths(hp, wp, strides)
    lw2 = lw // 2 + 1

    # spectra of the stride-scattered grad_out, already in matmul layout
    g_flat = np.ascontiguousarray(grad_out.transpose(0, 1, 4, 2, 3)
                                  ).reshape(n * to * cout, ho, wo)
    gf_plain, gf_conj = _grad_spectra(g_flat, lh, lw, sh, sw,
                                      need_plain=need_dx, need_conj=need_dw)

    grad_w = None
    if need_dw:
        if cache is not None and "freq_a" in cache:
            a = cache["freq_a"].transpose(0, 1, 3, 2)  # view: (Lh,Lw2,ktCin,NTo)
        else:
            if xf is None:
                xf = input_spectrum(xp, strides)
            gathered = _gather_time(xf, to, st, kt)
            a = gathered.transpose(4, 5, 2, 3, 0, 1).reshape(lh, lw2, kt * cin, n * to)
        b = gf_conj.reshape(lh, lw2, n * to, cout)
        dwf = a @ b  # (Lh,Lw2,kt*Cin,F)
        dwf = np.ascontiguousarray(dwf.transpose(2, 3, 0, 1))  # (kt*Cin,F,Lh,Lw2)
        dw_full = sfft.irfft2(dwf, s=(lh, lw), axes=(-2, -1), workers=_WORKERS)
        dw_full = dw_full.reshape(kt, cin, cout, lh, lw)[:, :, :, :kh, :kw]
        grad_w = np.ascontiguousarray(dw_full.transpose(0, 3, 4, 1, 2))

    grad_xp = None
    if need_dx:
        wf = sfft.rfft2(np.ascontiguousarray(w.transpose(0, 3, 4, 1, 2)),
                        s=(lh, lw), axes=(-2, -1), workers=_WORKERS)  # (kt,Cin,F,Lh,Lw2)
        a = gf_plain.reshape(lh, lw2, n * to, cout)
        # contract over cout per kernel-time-offset: kt is small, one big
        # matmul per offset
        ctype = np.result_type(a.dtype, np.complex64)
        acc = np.zeros((n, tp, cin, lh, lw2), dtype=ctype)
        for i in range(kt):
            bi = wf[i].transpose(2, 3, 1, 0).reshape(lh, lw2, cout, cin)
            fi = a @ bi  # (Lh,Lw2,N*To,Cin)
            fi = fi.transpose(2, 3, 0, 1).reshape(n, to, cin, lh, lw2)
            acc[:, i : (to - 1) * st + i + 1 : st] += fi
        gxp_full = sfft.irfft2(np.ascontiguousarray(acc), s=(lh, lw),
                               axes=(-2, -1), workers=_WORKERS)
        gxp_full = gxp_full[:, :, :, :hp, :wp]
        grad_xp = np.ascontiguousarray(gxp_full.transpose(0, 1, 3, 4, 2))

    return grad_xp, grad_w
