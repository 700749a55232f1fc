import json
import os
import subprocess
import sys

import numpy as np
import onnx
import pytest
from onnx import TensorProto, helper, numpy_helper

from stylestroke import tensor as T
from stylestroke.encoders import (
    PCG32,
    OnnxEncoder,
    ToyEncoder,
    execute,
    load_encoder,
    load_onnx,
    load_text_embedding,
    sample_features,
    save_text_embedding,
    toy_encoder,
)
from stylestroke.encoders.toy import toy_weights
from stylestroke.errors import (
    ConfigError,
    DegenerateInputError,
    InvalidShapeError,
    ParseError,
    UnsupportedOpError,
)
from stylestroke.tensor import Tensor, backward

from .helpers import check_gradients

FIXTURES = os.path.join(os.path.dirname(__file__), "fixtures")
FIXTURE_NAMES = ("conv_relu", "maxpool", "gemm_softmax", "layernorm")


def _image(seed=0, size=32):
    return np.random.default_rng(seed).uniform(0, 1, (3, size, size)).astype(np.float32)


def _save_model(path, nodes, inits, in_shape, outputs, opset=17):
    graph = helper.make_graph(
        nodes,
        "t",
        [helper.make_tensor_value_info("x", TensorProto.FLOAT, in_shape)],
        [helper.make_tensor_value_info(n, TensorProto.FLOAT, [f"d{i}" for i in range(r)]) for n, r in outputs],
        initializer=[numpy_helper.from_array(np.asarray(v, np.float32), k) for k, v in inits.items()],
    )
    model = helper.make_model(graph, opset_imports=[helper.make_opsetid("", opset)])
    model.ir_version = 8
    onnx.save(model, str(path))
    return path


# -- PCG32 and toy encoder ----------------------------------------------------

def test_pcg32_matches_reference_sequence():
    rng = PCG32(42, 54)
    got = [rng.next_u32() for _ in range(6)]
    assert got == [0xA15C02B7, 0x7B47F409, 0xBA1D3330, 0x83D2F293, 0xBFA4784B, 0xCBED606E]


def test_pcg32_uniform_in_unit_interval():
    u = PCG32(7).uniform(10000)
    assert u.min() >= 0.0 and u.max() < 1.0
    assert abs(u.mean() - 0.5) < 0.01


def test_toy_weights_bit_identical_across_constructions():
    a, b = toy_weights(3), toy_weights(3)
    for wa, wb in zip(a, b):
        assert wa.tobytes() == wb.tobytes()
    assert [w.shape for w in a] == [(8, 3, 3, 3), (16, 8, 3, 3), (32, 16, 3, 3), (64, 32, 3, 3)]


def test_toy_weights_kaiming_bound():
    for w in toy_weights(0):
        bound = np.sqrt(6.0 / (w.shape[1] * 9))
        assert np.abs(w).max() <= bound
        assert np.abs(w).max() > 0.9 * bound


def test_toy_weights_first_value_follows_draw_order():
    u = PCG32(5, 54).next_u32() / 2**32
    assert toy_weights(5)[0][0, 0, 0, 0] == np.float32((2 * u - 1) * np.sqrt(6.0 / 27))


def test_toy_embedding_unit_norm():
    enc = ToyEncoder(0, input_size=64)
    with T.no_grad():
        e = enc.embed(np.stack([_image(0), _image(1)])).numpy()
    assert e.shape == (2, 64)
    np.testing.assert_allclose(np.linalg.norm(e, axis=1), 1.0, atol=1e-5)


def test_toy_embedding_smooth_under_noise():
    enc = ToyEncoder(1, input_size=64)
    img = _image(2)
    noisy = np.clip(img + np.random.default_rng(3).normal(0, 1e-3, img.shape), 0, 1).astype(np.float32)
    with T.no_grad():
        a = enc.embed(img).numpy()[0]
        b = enc.embed(noisy).numpy()[0]
    assert float(a @ b) > 0.99


def test_toy_style_taps_shapes():
    enc, extractor = toy_encoder(0, input_size=64)
    assert enc is extractor
    with T.no_grad():
        maps = extractor.style_features(_image())
    assert [(n, m.shape) for n, m in maps] == [
        ("block1", (1, 8, 32, 32)),
        ("block2", (1, 16, 16, 16)),
        ("block3", (1, 32, 8, 8)),
    ]


def test_toy_embedding_identical_across_processes():
    code = (
        "import numpy as np, sys;"
        "from stylestroke.encoders import ToyEncoder;"
        "img = np.random.default_rng(0).uniform(0, 1, (3, 32, 32)).astype(np.float32);"
        "sys.stdout.write(ToyEncoder(11, 64).embed(img).numpy().tobytes().hex())"
    )
    outs = [subprocess.run([sys.executable, "-c", code], capture_output=True, text=True, check=True).stdout
            for _ in range(2)]
    assert outs[0] == outs[1] and len(outs[0]) == 64 * 4 * 2


def test_toy_embedding_gradient_matches_finite_differences():
    enc = ToyEncoder(0, input_size=16)
    w = np.random.default_rng(0).normal(size=64)
    img = _image(4, size=16).astype(np.float64)

    def build(x):
        return (enc.embed(x) * Tensor(w[None])).sum()

    assert check_gradients(build, [img], h=1e-5, samples=40) < 1e-3


def test_load_encoder_specs(tmp_path):
    assert load_encoder("toy").seed == 0
    assert load_encoder("toy:9", input_size=32).seed == 9
    path = _save_model(tmp_path / "m.onnx", [helper.make_node("GlobalAveragePool", ["x"], ["y"])], {},
                       [1, 3, 8, 8], [("y", 4)])
    assert isinstance(load_encoder(f"onnx:{path}"), OnnxEncoder)


# -- ONNX loading ----------------------------------------------------------------

def test_two_op_graph_loads(tmp_path):
    w = np.random.default_rng(0).normal(size=(2, 3, 3, 3))
    path = _save_model(tmp_path / "g.onnx",
                       [helper.make_node("Conv", ["x", "w"], ["c"], pads=[1, 1, 1, 1]),
                        helper.make_node("Relu", ["c"], ["y"])],
                       {"w": w}, [1, 3, 8, 8], [("y", 4)])
    g = load_onnx(path)
    assert [n.op_type for n in g.nodes] == ["Conv", "Relu"]
    np.testing.assert_array_equal(g.initializers["w"], w.astype(np.float32))
    assert g.inputs == [("x", [1, 3, 8, 8])]


def test_unsupported_op_named(tmp_path):
    path = _save_model(tmp_path / "u.onnx", [helper.make_node("Erf", ["x"], ["y"])], {}, [1, 3, 4, 4], [("y", 4)])
    with pytest.raises(UnsupportedOpError, match="Erf"):
        load_onnx(path)


def test_truncated_file_parse_error(tmp_path):
    src = os.path.join(FIXTURES, "conv_relu.onnx")
    data = open(src, "rb").read()
    bad = tmp_path / "t.onnx"
    bad.write_bytes(data[: len(data) // 2])
    with pytest.raises(ParseError):
        load_onnx(bad)


def test_garbage_file_parse_error(tmp_path):
    bad = tmp_path / "g.onnx"
    bad.write_bytes(b"\xff\x00 not a model")
    with pytest.raises(ParseError):
        load_onnx(bad)


# -- execution ------------------------------------------------------------------------

@pytest.mark.parametrize("name", FIXTURE_NAMES)
def test_fixture_forward_matches_reference(name):
    g = load_onnx(os.path.join(FIXTURES, f"{name}.onnx"))
    ref = np.load(os.path.join(FIXTURES, f"{name}.npz"))
    with T.no_grad():
        outs, _ = execute(g, {"x": ref["x"]})
    for out_name, value in outs.items():
        assert value.shape == ref[out_name].shape
        assert np.max(np.abs(value.numpy() - ref[out_name])) <= 1e-4


@pytest.mark.parametrize("name", FIXTURE_NAMES)
def test_fixture_input_gradient_matches_finite_differences(name):
    g = load_onnx(os.path.join(FIXTURES, f"{name}.onnx"))
    ref = np.load(os.path.join(FIXTURES, f"{name}.npz"))
    out_name = g.outputs[0]
    w = np.random.default_rng(1).normal(size=ref[out_name].shape)

    def build(x):
        outs, _ = execute(g, {"x": x})
        return (outs[out_name] * Tensor(w)).sum()

    assert check_gradients(build, [ref["x"]], h=1e-5, samples=60, floor=1e-6) < 1e-3


def test_tap_returns_documented_shape():
    g = load_onnx(os.path.join(FIXTURES, "conv_relu.onnx"))
    x = np.zeros((2, 3, 16, 16), np.float32)
    _, tapped = execute(g, {"x": x}, taps=["r1"])
    assert tapped["r1"].shape == (2, 4, 8, 8)
    with pytest.raises(KeyError):
        execute(g, {"x": x}, taps=["nope"])


def test_input_shape_mismatch():
    g = load_onnx(os.path.join(FIXTURES, "conv_relu.onnx"))
    with pytest.raises(InvalidShapeError):
        execute(g, {"x": np.zeros((2, 3, 15, 16), np.float32)})
    with pytest.raises(InvalidShapeError):
        execute(g, {"x": np.zeros((3, 16, 16), np.float32)})


def test_onnx_encoder_with_sidecar_and_per_sample_loop(tmp_path):
    rng = np.random.default_rng(0)
    w1, w2 = rng.normal(0, 0.3, (4, 3, 3, 3)), rng.normal(0, 0.3, (6, 4, 3, 3))
    nodes = [
        helper.make_node("Conv", ["x", "w1"], ["c1"], pads=[1, 1, 1, 1], strides=[2, 2]),
        helper.make_node("Relu", ["c1"], ["r1"]),
        helper.make_node("Conv", ["r1", "w2"], ["c2"], pads=[1, 1, 1, 1], strides=[2, 2]),
        helper.make_node("Relu", ["c2"], ["r2"]),
        helper.make_node("GlobalAveragePool", ["r2"], ["y"]),
    ]
    path = _save_model(tmp_path / "enc.onnx", nodes, {"w1": w1, "w2": w2}, [1, 3, 16, 16], [("y", 4)])
    (tmp_path / "enc.json").write_text(json.dumps({"mean": [0.5] * 3, "std": [0.25] * 3, "taps": ["r1"]}))
    enc = OnnxEncoder(path)
    assert (enc.input_size, enc.dim, enc.taps, enc.std) == (16, 6, ("r1",), (0.25, 0.25, 0.25))

    imgs = np.stack([_image(0, 20), _image(1, 20)])
    with T.no_grad():
        both = enc.embed(imgs).numpy()
        one = enc.embed(imgs[1]).numpy()
        maps = enc.style_features(imgs)
    np.testing.assert_allclose(both[1], one[0], atol=1e-6)
    np.testing.assert_allclose(np.linalg.norm(both, axis=1), 1.0, atol=1e-5)
    assert maps[0][1].shape == (2, 4, 8, 8)

    os.remove(tmp_path / "enc.json")
    auto = OnnxEncoder(path)
    assert auto.taps == ("r1", "r2")
    assert auto.mean == (0.0, 0.0, 0.0)


def test_onnx_encoder_gradient_reaches_image(tmp_path):
    path = _save_model(tmp_path / "e.onnx",
                       [helper.make_node("Conv", ["x", "w"], ["c"], pads=[1, 1, 1, 1]),
                        helper.make_node("GlobalAveragePool", ["c"], ["y"])],
                       {"w": np.random.default_rng(2).normal(size=(5, 3, 3, 3))}, [1, 3, 8, 8], [("y", 4)])
    enc = OnnxEncoder(path)
    x = Tensor(_image(0, 8), requires_grad=True)
    grads = backward(enc.embed(x)[0, 0], inputs=[x])
    assert np.abs(grads[x]).sum() > 0


# -- feature sampling ------------------------------------------------------------

def test_sample_features_all_locations_row_major():
    fmap = Tensor(np.arange(2 * 3 * 4, dtype=np.float32).reshape(1, 2, 3, 4))
    fs = sample_features([("a", fmap)], m=100, rng=np.random.default_rng(0))
    np.testing.assert_array_equal(fs.coords["a"], np.arange(12))
    np.testing.assert_array_equal(fs.layers[0][1].numpy(), fmap.data[0].reshape(2, -1).T)


def test_sample_features_seeded_and_matches_direct_indexing():
    data = np.random.default_rng(0).normal(size=(1, 5, 16, 16)).astype(np.float32)
    maps = [("a", Tensor(data))]
    f1 = sample_features(maps, m=20, rng=np.random.default_rng(4))
    f2 = sample_features(maps, m=20, rng=np.random.default_rng(4))
    idx = f1.coords["a"]
    np.testing.assert_array_equal(idx, f2.coords["a"])
    assert len(np.unique(idx)) == 20 and np.all(np.diff(idx) > 0)
    ys, xs = np.divmod(idx, 16)
    np.testing.assert_array_equal(f1.layers[0][1].numpy(), data[0][:, ys, xs].T)


def test_sample_features_reuses_coords_for_pair():
    rng = np.random.default_rng(0)
    a = [("l", Tensor(rng.normal(size=(1, 3, 10, 10))))]
    b = [("l", Tensor(rng.normal(size=(1, 3, 10, 10))))]
    fa = sample_features(a, m=7, rng=np.random.default_rng(1))
    fb = sample_features(b, m=7, coords=fa.coords)
    np.testing.assert_array_equal(fa.coords["l"], fb.coords["l"])


def test_sample_features_gradient_flows_to_map():
    x = Tensor(np.ones((1, 2, 4, 4)), requires_grad=True)
    fs = sample_features([("l", x)], m=3, rng=np.random.default_rng(0))
    g = backward(fs.layers[0][1].sum(), inputs=[x])[x]
    assert g.sum() == 6 and set(np.unique(g)) == {0.0, 1.0}


def test_sample_features_rejects_zero_m():
    with pytest.raises(ValueError):
        sample_features([], m=0)


# -- text embeddings --------------------------------------------------------------

def _write(tmp_path, doc, name="t.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc) if not isinstance(doc, str) else doc)
    return p


def test_text_embedding_examples(tmp_path):
    e = load_text_embedding(_write(tmp_path, {"model": "m", "dim": 4, "embedding": [1, 0, 0, 0]}))
    np.testing.assert_array_equal(e, [1, 0, 0, 0])
    e = load_text_embedding(_write(tmp_path, {"model": "m", "dim": 2, "embedding": [3, 4]}))
    np.testing.assert_allclose(e, [0.6, 0.8], atol=1e-7)
    assert e.dtype == np.float32


def test_text_embedding_dim_mismatch(tmp_path):
    p = _write(tmp_path, {"model": "m", "dim": 2, "embedding": [3, 4]})
    with pytest.raises(ConfigError):
        load_text_embedding(p, expected_dim=64)


def test_text_embedding_malformed(tmp_path):
    with pytest.raises(ParseError):
        load_text_embedding(_write(tmp_path, "{not json"))
    with pytest.raises(ParseError):
        load_text_embedding(_write(tmp_path, {"dim": 3, "embedding": [1, 2]}))
    with pytest.raises(ParseError):
        load_text_embedding(_write(tmp_path, {"dim": 2}))
    with pytest.raises(DegenerateInputError):
        load_text_embedding(_write(tmp_path, {"dim": 2, "embedding": [0, 0]}))


def test_text_embedding_round_trip(tmp_path):
    v = np.random.default_rng(0).normal(size=16)
    save_text_embedding(tmp_path / "e.json", v, model="toy:0")
    e = load_text_embedding(tmp_path / "e.json", expected_dim=16)
    np.testing.assert_allclose(e, v / np.linalg.norm(v), atol=1e-6)
    assert json.loads((tmp_path / "e.json").read_text())["model"] == "toy:0"
