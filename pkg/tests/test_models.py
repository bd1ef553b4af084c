import numpy as np
import pytest

from sonovox.errors import ConfigError, GeometryError
from sonovox.models import (
    GRID_COMBOS,
    LayerSpec,
    Model,
    ModelSpec,
    build_architecture,
    build_combo,
    count_params,
    format_model_config,
    infer_shapes,
    parity_reference,
    parse_model_config,
)


# ---------------------------------------------------------------------------
# shape inference
# ---------------------------------------------------------------------------

def test_cnn3d_shape_chain():
    spec = build_architecture("cnn3d")
    chain = infer_shapes(spec)
    expected = [
        (5, 64, 32, 30),   # conv1
        (5, 64, 32, 30),   # dropout
        (5, 32, 16, 60),   # conv2
        (5, 32, 16, 60),   # dropout
        (5, 16, 8, 60),    # pool
        (5, 8, 8, 90),     # conv3
        (5, 8, 8, 90),     # dropout
        (5, 4, 4, 85),     # conv4
        (5, 4, 4, 85),     # dropout
        (5, 2, 2, 85),     # pool
        (1700,),           # flatten
        (500,),            # dense
        (500,),            # dropout
        (80,),             # output
    ]
    assert chain == expected


def test_bilstm_shape_chain_contains_reshape_target():
    spec = build_architecture("cnn3d_bilstm")
    chain = infer_shapes(spec)
    assert (5, 340) in chain
    reshapes = [l for l in spec.layers if l.kind == "reshape"]
    assert reshapes[0].target == (5, 340)
    assert chain[-2] == (640,)  # BiLSTM(320) output width
    assert chain[-1] == (80,)


def test_convlstm_shape_chain():
    spec = build_architecture("cnn3d_convlstm")
    chain = infer_shapes(spec)
    expected = [
        (5, 64, 32, 30),
        (5, 64, 32, 30),
        (5, 32, 16, 60),
        (5, 32, 16, 60),
        (5, 16, 16, 60),   # pool (1,2,1)
        (5, 8, 8, 90),
        (5, 8, 8, 90),
        (4, 4, 64),        # convlstm, return_sequences=False
        (1024,),
        (80,),
    ]
    assert chain == expected


def test_infer_shapes_names_failing_layer():
    spec = ModelSpec("bad", [
        LayerSpec("conv3d", filters=4, kernel=(1, 13, 13), strides=(1, 1, 1),
                  padding="valid"),
    ], input_shape=(5, 11, 20, 1))
    with pytest.raises(GeometryError, match=r"layer 0 \(conv3d\).*height"):
        infer_shapes(spec)


# ---------------------------------------------------------------------------
# builders
# ---------------------------------------------------------------------------

def test_cnn3d_layer_makeup():
    spec = build_architecture("cnn3d")
    kinds = [l.kind for l in spec.layers]
    assert kinds.count("conv3d") == 4
    assert kinds.count("maxpool3d") == 2
    assert kinds.count("dense") == 2
    assert all(l.rate == 0.3 for l in spec.layers if l.kind == "dropout")
    dense_units = [l.units for l in spec.layers if l.kind == "dense"]
    assert dense_units == [500, 80]


def test_bilstm_replaces_dense_head():
    spec = build_architecture("cnn3d_bilstm")
    kinds = [l.kind for l in spec.layers]
    assert "bilstm" in kinds and "flatten" not in kinds
    bilstm = [l for l in spec.layers if l.kind == "bilstm"][0]
    assert bilstm.units == 320 and bilstm.return_sequences is False


def test_convlstm_architecture_has_four_hidden_weight_layers():
    spec = build_architecture("cnn3d_convlstm")
    weighted = [l.kind for l in spec.layers if l.kind in ("conv3d", "convlstm")]
    assert len(weighted) == 4
    assert weighted[-1] == "convlstm"
    assert all(l.rate == 0.35 for l in spec.layers if l.kind == "dropout")


def test_unknown_architecture():
    with pytest.raises(ConfigError, match="unknown architecture"):
        build_architecture("resnet")


def test_bold_combo_equals_hybrid_architecture():
    combo = build_combo(["C3D", "C3D", "C3D", "CLSTM"])
    named = build_architecture("cnn3d_convlstm")
    assert combo.same_structure(named)


def test_all_grid_combos_are_buildable_and_parity_held():
    ref = parity_reference()
    for tokens in GRID_COMBOS:
        spec = build_combo(tokens)
        chain = infer_shapes(spec)
        assert chain[-1] == (80,)
        total = count_params(spec)
        assert abs(total - ref) <= 0.20 * ref, (tokens, total, ref)


def test_combo_return_sequence_flags():
    spec = build_combo(["CLSTM", "CLSTM", "CLSTM"])
    flags = [l.return_sequences for l in spec.layers if l.kind == "convlstm"]
    assert flags == [True, True, False]


def test_combo_token_validation():
    with pytest.raises(ConfigError, match="token"):
        build_combo(["C3D", "GRU", "CLSTM"])
    with pytest.raises(ConfigError, match="positions"):
        build_combo(["C3D", "CLSTM"])


def test_combo_ending_in_conv_gets_dense_head():
    spec = build_combo(["C3D", "C3D", "C3D"])
    kinds = [l.kind for l in spec.layers]
    assert kinds[-4:] == ["dense", "dropout", "dense", "flatten"][::-1]
    dense_units = [l.units for l in spec.layers if l.kind == "dense"]
    assert dense_units == [500, 80]


# ---------------------------------------------------------------------------
# parameter counting
# ---------------------------------------------------------------------------

def test_spot_param_counts():
    conv1 = ModelSpec("c", [LayerSpec("conv3d", filters=30, kernel=(5, 13, 13),
                                      strides=(5, 2, 2))],
                      input_shape=(25, 128, 64, 1))
    assert count_params(conv1) == 25_380
    clstm = ModelSpec("c", [LayerSpec("convlstm", units=64, kernel=(3, 3))],
                      input_shape=(5, 8, 8, 90))
    assert count_params(clstm) == 355_072
    clstm_peep = ModelSpec("c", [LayerSpec("convlstm", units=64, kernel=(3, 3),
                                           peephole=True)],
                           input_shape=(5, 8, 8, 90))
    assert count_params(clstm_peep) == 355_264
    dense = ModelSpec("d", [LayerSpec("dense", units=80)], input_shape=(500,))
    assert count_params(dense) == 40_080


def test_reference_totals():
    assert count_params(build_architecture("cnn3d")) == 3_425_845
    assert count_params(build_architecture("cnn3d_bilstm")) == (
        3_425_845 - 850_500 - 40_080 + 1_692_160 + 640 * 80 + 80
    )
    assert count_params(build_architecture("cnn3d_convlstm")) == 1_679_402


@pytest.mark.parametrize("name", ["cnn3d", "cnn3d_bilstm", "cnn3d_convlstm"])
@pytest.mark.parametrize("width_scale", [1, 4])
def test_built_model_count_matches_closed_form(name, width_scale):
    spec = build_architecture(name, width_scale=width_scale)
    model = Model.build(spec, seed=0)
    assert model.param_count() == count_params(spec)


def test_width_scale_divides_by_at_most_factor():
    spec = build_architecture("cnn3d", width_scale=4)
    filters = [l.filters for l in spec.layers if l.kind == "conv3d"]
    assert filters == [8, 15, 23, 22]
    dense_units = [l.units for l in spec.layers if l.kind == "dense"]
    assert dense_units == [125, 80]  # output width untouched
    for full, reduced in zip([30, 60, 90, 85, 500], filters + [125]):
        assert full / reduced <= 4.0


# ---------------------------------------------------------------------------
# built model behavior
# ---------------------------------------------------------------------------

def test_model_forward_backward_roundtrip(rng):
    spec = build_architecture("cnn3d_convlstm", width_scale=4,
                              input_shape=(10, 16, 8, 1), outputs=7)
    model = Model.build(spec, seed=1, dtype=np.float64)
    x = rng.standard_normal((2, 10, 16, 8, 1))
    out = model.forward(x, train=False)
    assert out.shape == (2, 7)
    assert np.all(np.isfinite(out))
    model.zero_grads()
    model.backward(np.ones_like(out))
    assert any(g.any() for g in model.gradients().values())


def test_model_set_parameters_roundtrip(rng):
    spec = build_architecture("cnn3d", width_scale=4,
                              input_shape=(10, 64, 32, 1), outputs=5)
    m1 = Model.build(spec, seed=1)
    m2 = Model.build(spec, seed=2)
    x = rng.standard_normal((2, 10, 64, 32, 1)).astype(np.float32)
    assert not np.allclose(m1.forward(x), m2.forward(x))
    m2.set_parameters(m1.clone_parameters())
    np.testing.assert_array_equal(m1.forward(x), m2.forward(x))


def test_build_is_seed_deterministic():
    spec = build_architecture("cnn3d_bilstm", width_scale=4,
                              input_shape=(10, 64, 32, 1), outputs=5)
    p1 = Model.build(spec, seed=7).parameters()
    p2 = Model.build(spec, seed=7).parameters()
    for k in p1:
        np.testing.assert_array_equal(p1[k], p2[k])


# ---------------------------------------------------------------------------
# config file round trip
# ---------------------------------------------------------------------------

def test_config_round_trip():
    spec = build_architecture("cnn3d_convlstm")
    text = format_model_config(spec)
    back = parse_model_config(text)
    assert back.name == spec.name
    assert back.same_structure(spec)


def test_config_parse_errors():
    with pytest.raises(ConfigError, match="line 1"):
        parse_model_config("[transformer]")
    with pytest.raises(ConfigError, match="no layers"):
        parse_model_config("name = empty")
    with pytest.raises(ConfigError, match="key"):
        parse_model_config("[dense]\nunits 5")


def test_config_custom_stack():
    text = """
    name = tiny
    input_shape = 6,8,8,1

    [conv3d]
    filters = 4
    kernel = 2,3,3
    strides = 2,2,2

    [flatten]

    [dense]
    units = 10
    activation = tanh
    """
    spec = parse_model_config(text)
    assert infer_shapes(spec)[-1] == (10,)
