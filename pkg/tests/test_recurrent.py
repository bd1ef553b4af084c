import numpy as np
import pytest

from sonovox.errors import ConfigError, ShapeError
from sonovox.geometry import ConvGeometry
from sonovox.gradcheck import check_layer
from sonovox.recurrent import (
    BiLstmLayer,
    ConvLstmLayer,
    ConvLstmParams,
    LstmLayer,
    LstmParams,
    bidirectional_lstm,
    convlstm_forward,
    convlstm_step,
    lstm_forward,
    lstm_step,
)
from sonovox.rng import seeded_rng


def make_lstm_params(rng, d, u, peephole=False, dtype=np.float64):
    def arr(*shape):
        return rng.standard_normal(shape).astype(dtype) * 0.5

    kw = dict(
        w_xi=arr(d, u), w_xf=arr(d, u), w_xc=arr(d, u), w_xo=arr(d, u),
        w_hi=arr(u, u), w_hf=arr(u, u), w_hc=arr(u, u), w_ho=arr(u, u),
        b_i=arr(u), b_f=arr(u), b_c=arr(u), b_o=arr(u),
    )
    if peephole:
        kw.update(w_ci=arr(u), w_cf=arr(u), w_co=arr(u))
    return LstmParams(**kw)


def make_convlstm_params(rng, cin, u, kernel=(1, 1), strides=(1, 1),
                         padding="same", peephole=False, dtype=np.float64):
    kh, kw_ = kernel

    def arr(*shape):
        return rng.standard_normal(shape).astype(dtype) * 0.5

    kw = dict(
        w_xi=arr(kh, kw_, cin, u), w_xf=arr(kh, kw_, cin, u),
        w_xc=arr(kh, kw_, cin, u), w_xo=arr(kh, kw_, cin, u),
        w_hi=arr(kh, kw_, u, u), w_hf=arr(kh, kw_, u, u),
        w_hc=arr(kh, kw_, u, u), w_ho=arr(kh, kw_, u, u),
        b_i=arr(u), b_f=arr(u), b_c=arr(u), b_o=arr(u),
        input_geom=ConvGeometry(kernel=kernel, strides=strides,
                                padding=padding, filters=u),
    )
    if peephole:
        kw.update(w_ci=arr(u), w_cf=arr(u), w_co=arr(u))
    return ConvLstmParams(**kw)


# ---------------------------------------------------------------------------
# LSTM step and sequence
# ---------------------------------------------------------------------------

def test_lstm_step_all_zero_params_gives_zero_state():
    z = np.zeros
    p = LstmParams(
        w_xi=z((3, 2)), w_xf=z((3, 2)), w_xc=z((3, 2)), w_xo=z((3, 2)),
        w_hi=z((2, 2)), w_hf=z((2, 2)), w_hc=z((2, 2)), w_ho=z((2, 2)),
        b_i=z(2), b_f=z(2), b_c=z(2), b_o=z(2),
    )
    h, c = lstm_step(np.ones(3), np.zeros(2), np.zeros(2), p)
    np.testing.assert_array_equal(h, 0.0)
    np.testing.assert_array_equal(c, 0.0)


def test_lstm_step_scalar_unit_weights():
    one = np.ones
    p = LstmParams(
        w_xi=one((1, 1)), w_xf=one((1, 1)), w_xc=one((1, 1)), w_xo=one((1, 1)),
        w_hi=one((1, 1)), w_hf=one((1, 1)), w_hc=one((1, 1)), w_ho=one((1, 1)),
        b_i=np.zeros(1), b_f=np.zeros(1), b_c=np.zeros(1), b_o=np.zeros(1),
    )
    h, c = lstm_step(np.ones(1), np.zeros(1), np.zeros(1), p)
    # frozen from exact evaluation of the gate recurrence:
    # c = sigma(1) * tanh(1), h = sigma(1) * tanh(c)
    assert c[0] == pytest.approx(0.5567699411459397, abs=1e-12)
    assert h[0] == pytest.approx(0.36960635293570576, abs=1e-12)
    # stated approximations agree loosely
    assert c[0] == pytest.approx(0.556828, abs=1e-3)
    assert h[0] == pytest.approx(0.369519, abs=1e-3)


def test_lstm_param_counts():
    assert LstmLayer(320).param_count((5, 340)) == 846_080
    assert BiLstmLayer(320).param_count((5, 340)) == 1_692_160
    p = LstmParams.init(340, 320, seeded_rng(0))
    assert p.param_count() == 846_080
    p = LstmParams.init(340, 320, seeded_rng(0), peephole=True)
    assert p.param_count() == 846_080 + 3 * 320


def test_lstm_peephole_changes_output(rng):
    p_plain = make_lstm_params(seeded_rng(1), 3, 4)
    p_peep = make_lstm_params(seeded_rng(1), 3, 4, peephole=True)
    x = rng.standard_normal(3)
    c_prev = rng.standard_normal(4)
    h_prev = rng.standard_normal(4)
    h0, _ = lstm_step(x, h_prev, c_prev, p_plain)
    h1, _ = lstm_step(x, h_prev, c_prev, p_peep)
    assert not np.allclose(h0, h1)


def test_lstm_partial_peephole_rejected():
    with pytest.raises(ConfigError, match="peephole"):
        make_lstm_params(seeded_rng(1), 3, 4).__class__(
            **{**make_lstm_params(seeded_rng(1), 3, 4).__dict__, "w_ci": np.zeros(4)}
        )


def test_lstm_forward_single_step_modes(rng):
    p = make_lstm_params(rng, 3, 4)
    xs = rng.standard_normal((1, 3))
    seq = lstm_forward(xs, p, return_sequences=True)
    last = lstm_forward(xs, p, return_sequences=False)
    assert seq.shape == (1, 4) and last.shape == (4,)
    np.testing.assert_array_equal(seq[0], last)
    h, _ = lstm_step(xs[0], np.zeros(4), np.zeros(4), p)
    np.testing.assert_allclose(last, h, rtol=1e-12)


def test_lstm_return_sequences_consistency(rng):
    p = make_lstm_params(rng, 3, 5)
    xs = rng.standard_normal((6, 3))
    seq = lstm_forward(xs, p, return_sequences=True)
    last = lstm_forward(xs, p, return_sequences=False)
    np.testing.assert_array_equal(seq[-1], last)


def test_lstm_empty_sequence(rng):
    p = make_lstm_params(rng, 3, 5)
    with pytest.raises(ShapeError, match="empty"):
        lstm_forward(np.zeros((0, 3)), p)


@pytest.mark.parametrize("peephole", [False, True])
@pytest.mark.parametrize("return_sequences", [False, True])
def test_lstm_bptt_gradients(peephole, return_sequences):
    layer = LstmLayer(4, return_sequences=return_sequences, peephole=peephole)
    result = check_layer(layer, (5, 3), seed=11)
    assert result.max_rel_err < 1e-6, str(result)


# ---------------------------------------------------------------------------
# bidirectional
# ---------------------------------------------------------------------------

def test_bilstm_width(rng):
    fwd = make_lstm_params(rng, 340, 320, dtype=np.float32)
    bwd = make_lstm_params(rng, 340, 320, dtype=np.float32)
    xs = rng.standard_normal((5, 340)).astype(np.float32)
    out = bidirectional_lstm(xs, fwd, bwd, return_sequences=False)
    assert out.shape == (640,)


def test_bilstm_palindrome_symmetry(rng):
    p = make_lstm_params(rng, 3, 4)
    half = rng.standard_normal((3, 3))
    xs = np.concatenate([half, half[::-1]], axis=0)  # palindromic sequence
    out = bidirectional_lstm(xs, p, p, return_sequences=False)
    np.testing.assert_array_equal(out[:4], out[4:])


def test_bilstm_unit_mismatch(rng):
    with pytest.raises(ConfigError, match="units"):
        bidirectional_lstm(rng.standard_normal((4, 3)),
                           make_lstm_params(rng, 3, 4),
                           make_lstm_params(rng, 3, 5))


def test_bilstm_return_sequences_reverses_backward_stream(rng):
    fwd = make_lstm_params(rng, 2, 3)
    bwd = make_lstm_params(rng, 2, 3)
    xs = rng.standard_normal((4, 2))
    seq = bidirectional_lstm(xs, fwd, bwd, return_sequences=True)
    assert seq.shape == (4, 6)
    # backward half at time t equals running the reversed sequence to step T-1-t
    rev = lstm_forward(xs[::-1], bwd, return_sequences=True)
    np.testing.assert_array_equal(seq[:, 3:], rev[::-1])


@pytest.mark.parametrize("return_sequences", [False, True])
def test_bilstm_gradients(return_sequences):
    layer = BiLstmLayer(3, return_sequences=return_sequences)
    result = check_layer(layer, (4, 2), seed=13)
    assert result.max_rel_err < 1e-6, str(result)


# ---------------------------------------------------------------------------
# ConvLSTM
# ---------------------------------------------------------------------------

@pytest.mark.parametrize("peephole", [False, True])
def test_convlstm_degenerate_matches_lstm(peephole):
    # 1x1 spatial maps with 1x1 kernels collapse to the dense cell
    rng = seeded_rng(42)
    d, u, t_len = 3, 4, 5
    lstm_p = make_lstm_params(rng, d, u, peephole=peephole)
    conv_p = ConvLstmParams(
        w_xi=lstm_p.w_xi[None, None], w_xf=lstm_p.w_xf[None, None],
        w_xc=lstm_p.w_xc[None, None], w_xo=lstm_p.w_xo[None, None],
        w_hi=lstm_p.w_hi[None, None], w_hf=lstm_p.w_hf[None, None],
        w_hc=lstm_p.w_hc[None, None], w_ho=lstm_p.w_ho[None, None],
        b_i=lstm_p.b_i, b_f=lstm_p.b_f, b_c=lstm_p.b_c, b_o=lstm_p.b_o,
        input_geom=ConvGeometry(kernel=(1, 1), strides=(1, 1),
                                padding="same", filters=u),
        w_ci=lstm_p.w_ci, w_cf=lstm_p.w_cf, w_co=lstm_p.w_co,
    )
    xs = rng.standard_normal((t_len, d))
    ref = lstm_forward(xs, lstm_p, return_sequences=True)
    got = convlstm_forward(xs[:, None, None, :], conv_p, return_sequences=True)
    assert np.max(np.abs(got[:, 0, 0, :] - ref)) < 1e-12


def test_convlstm_zero_weights_zero_output(rng):
    p = make_convlstm_params(seeded_rng(0), 2, 3, kernel=(3, 3))
    for arr in p.as_dict().values():
        arr[...] = 0.0
    xs = rng.standard_normal((4, 5, 5, 2))
    out = convlstm_forward(xs, p, return_sequences=True)
    np.testing.assert_array_equal(out, 0.0)


def test_convlstm_param_counts():
    layer = ConvLstmLayer(64, kernel=(3, 3))
    assert layer.param_count((5, 8, 8, 90)) == 355_072
    layer = ConvLstmLayer(64, kernel=(3, 3), peephole=True)
    assert layer.param_count((5, 8, 8, 90)) == 355_264


def test_convlstm_strided_output_shape():
    layer = ConvLstmLayer(64, kernel=(3, 3), strides=(2, 2))
    assert layer.output_shape((5, 8, 8, 90)) == (4, 4, 64)
    layer = ConvLstmLayer(64, kernel=(3, 3), strides=(2, 2), return_sequences=True)
    assert layer.output_shape((5, 8, 8, 90)) == (5, 4, 4, 64)


def test_convlstm_single_step_equals_forward(rng):
    p = make_convlstm_params(seeded_rng(3), 2, 3, kernel=(3, 3), strides=(2, 2))
    xs = rng.standard_normal((1, 6, 6, 2))
    seq = convlstm_forward(xs, p, return_sequences=False)
    h0 = np.zeros((3, 3, 3))
    h, _ = convlstm_step(xs[0], h0, h0.copy(), p)
    np.testing.assert_allclose(seq, h, rtol=1e-12)


def test_convlstm_state_shape_mismatch(rng):
    p = make_convlstm_params(seeded_rng(3), 2, 3, kernel=(3, 3), strides=(2, 2))
    x = rng.standard_normal((6, 6, 2))
    bad = np.zeros((6, 6, 3))
    with pytest.raises(ShapeError, match="spatial"):
        convlstm_step(x, bad, bad, p)


def test_convlstm_return_sequences_consistency(rng):
    p = make_convlstm_params(seeded_rng(5), 2, 3, kernel=(2, 2))
    xs = rng.standard_normal((4, 4, 4, 2))
    seq = convlstm_forward(xs, p, return_sequences=True)
    last = convlstm_forward(xs, p, return_sequences=False)
    np.testing.assert_array_equal(seq[-1], last)


def test_convlstm_empty_sequence(rng):
    p = make_convlstm_params(seeded_rng(5), 2, 3)
    with pytest.raises(ShapeError, match="empty"):
        convlstm_forward(np.zeros((0, 4, 4, 2)), p)


@pytest.mark.parametrize("peephole", [False, True])
@pytest.mark.parametrize("return_sequences", [False, True])
def test_convlstm_bptt_gradients(peephole, return_sequences):
    layer = ConvLstmLayer(2, kernel=(2, 2), strides=(2, 2),
                          return_sequences=return_sequences, peephole=peephole)
    result = check_layer(layer, (3, 4, 4, 2), seed=17)
    assert result.max_rel_err < 1e-4, str(result)
