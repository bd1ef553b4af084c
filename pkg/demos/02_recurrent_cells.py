"""The LSTM cell, its peephole variant, and the convolutional LSTM.

Walks one cell update by hand, then shows the key structural fact about
the ConvLSTM: with 1x1 spatial maps and 1x1 kernels it IS the dense LSTM,
because the convolutions collapse to matrix products while the gating
stays elementwise.
"""

import numpy as np

from sonovox import ConvGeometry, convlstm_forward, lstm_forward, lstm_step
from sonovox.recurrent import ConvLstmParams, LstmParams

print("== one scalar cell update, all weights 1, zero state ==")
one = np.ones((1, 1))
p = LstmParams(
    w_xi=one, w_xf=one, w_xc=one, w_xo=one,
    w_hi=one.copy(), w_hf=one.copy(), w_hc=one.copy(), w_ho=one.copy(),
    b_i=np.zeros(1), b_f=np.zeros(1), b_c=np.zeros(1), b_o=np.zeros(1),
)
h, c = lstm_step(np.ones(1), np.zeros(1), np.zeros(1), p)
print("gates: i = f = o = sigmoid(1), candidate g = tanh(1)")
print(f"c = sigmoid(1)*tanh(1)      = {c[0]:.12f}")
print(f"h = sigmoid(1)*tanh(c)      = {h[0]:.12f}")

print("\n== peephole connections change the gate pre-activations ==")
rng = np.random.default_rng(3)
d, u = 3, 4


def arr(*shape):
    return rng.standard_normal(shape) * 0.5


base = dict(
    w_xi=arr(d, u), w_xf=arr(d, u), w_xc=arr(d, u), w_xo=arr(d, u),
    w_hi=arr(u, u), w_hf=arr(u, u), w_hc=arr(u, u), w_ho=arr(u, u),
    b_i=arr(u), b_f=arr(u), b_c=arr(u), b_o=arr(u),
)
plain = LstmParams(**base)
peep = LstmParams(**base, w_ci=arr(u), w_cf=arr(u), w_co=arr(u))
x_t, c_prev, h_prev = arr(d), arr(u), arr(u)
h0, _ = lstm_step(x_t, h_prev, c_prev, plain)
h1, _ = lstm_step(x_t, h_prev, c_prev, peep)
print(f"|h_plain - h_peephole| max = {np.abs(h0 - h1).max():.4f} (nonzero)")

print("\n== ConvLSTM at degenerate geometry reproduces the dense cell ==")
conv_p = ConvLstmParams(
    w_xi=plain.w_xi[None, None], w_xf=plain.w_xf[None, None],
    w_xc=plain.w_xc[None, None], w_xo=plain.w_xo[None, None],
    w_hi=plain.w_hi[None, None], w_hf=plain.w_hf[None, None],
    w_hc=plain.w_hc[None, None], w_ho=plain.w_ho[None, None],
    b_i=plain.b_i, b_f=plain.b_f, b_c=plain.b_c, b_o=plain.b_o,
    input_geom=ConvGeometry(kernel=(1, 1), strides=(1, 1), padding="same", filters=u),
)
xs = rng.standard_normal((6, d))
dense_h = lstm_forward(xs, plain, return_sequences=True)
conv_h = convlstm_forward(xs[:, None, None, :], conv_p, return_sequences=True)
print(f"|dense - conv| over 6 steps = {np.abs(conv_h[:, 0, 0] - dense_h).max():.3e}")

print("\n== return_sequences selects the full stream or the last state ==")
seq = lstm_forward(xs, plain, return_sequences=True)
last = lstm_forward(xs, plain, return_sequences=False)
print(f"sequence shape {seq.shape}; final-state shape {last.shape}; "
      f"last slice equal: {np.array_equal(seq[-1], last)}")
