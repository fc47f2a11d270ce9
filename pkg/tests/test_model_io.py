"""Self-describing binary model files: roundtrips and corruption handling."""

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from dregnet.dreg import attach_dreg
from dregnet.model_io import MAGIC, ModelFormatError, load_model, save_model
from dregnet.models import build_network
from dregnet.nn import Dense, Network, ReLU
from dregnet.tensor import Tensor


def nets_to_roundtrip():
    rng = np.random.default_rng(0)
    plain = Network([Dense(4, 6, bias=True, rng=rng), ReLU(),
                     Dense(6, 3, bias=True, rng=rng)])
    conv = build_network("conv", width=4, depth=2, residual=True,
                         in_shape=(1, 6, 6), num_classes=3, seed=5)
    mlp_res = build_network("mlp", width=8, depth=2, residual=True,
                            in_shape=(10,), num_classes=4, seed=2)
    dual = attach_dreg(build_network("mlp", 6, 2, False, (5,), 3, seed=7),
                       "Block-R1", 0.01, 1)
    return {"plain": plain, "conv-residual": conv,
            "mlp-residual": mlp_res, "dual": dual}


class TestRoundtrip:
    @pytest.mark.parametrize("name", list(nets_to_roundtrip()))
    def test_exact_parameter_roundtrip(self, name, tmp_path):
        net = nets_to_roundtrip()[name]
        path = str(tmp_path / "model.bin")
        save_model(net, path, meta={"tag": name})
        loaded, meta = load_model(path)
        assert meta == {"tag": name}
        saved = dict(net.param_items())
        got = dict(loaded.param_items())
        assert set(saved) == set(got)
        for key, p in saved.items():
            assert got[key].data.tobytes() == p.data.tobytes()

    @pytest.mark.parametrize("name", list(nets_to_roundtrip()))
    def test_loaded_network_computes_identically(self, name, tmp_path):
        net = nets_to_roundtrip()[name]
        path = str(tmp_path / "model.bin")
        save_model(net, path)
        loaded, _ = load_model(path)
        rng = np.random.default_rng(3)
        shape = {"conv-residual": (2, 1, 6, 6)}.get(name)
        if shape is None:
            in_dim = net.layers[0].params()["w"].shape[-1]
            shape = (2, in_dim)
        x = Tensor(rng.standard_normal(shape))
        a, b = net.forward(x), loaded.forward(x)
        if hasattr(a, "r"):
            assert_array_equal(a.r.data, b.r.data)
            assert_array_equal(a.l.data, b.l.data)
        else:
            assert_array_equal(a.data, b.data)

    def test_default_meta_is_empty_dict(self, tmp_path):
        path = str(tmp_path / "m.bin")
        save_model(nets_to_roundtrip()["plain"], path)
        _, meta = load_model(path)
        assert meta == {}

    def test_file_starts_with_magic(self, tmp_path):
        path = tmp_path / "m.bin"
        save_model(nets_to_roundtrip()["plain"], str(path))
        assert path.read_bytes()[:8] == MAGIC


class TestCorruption:
    def save_plain(self, tmp_path):
        path = tmp_path / "m.bin"
        save_model(nets_to_roundtrip()["plain"], str(path))
        return path

    def test_bad_magic(self, tmp_path):
        path = self.save_plain(tmp_path)
        blob = bytearray(path.read_bytes())
        blob[0] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(ModelFormatError, match="magic"):
            load_model(str(path))

    def test_unsupported_version(self, tmp_path):
        path = self.save_plain(tmp_path)
        blob = bytearray(path.read_bytes())
        blob[8] = 0xEE
        path.write_bytes(bytes(blob))
        with pytest.raises(ModelFormatError, match="version"):
            load_model(str(path))

    def test_truncated_payload(self, tmp_path):
        path = self.save_plain(tmp_path)
        blob = path.read_bytes()
        path.write_bytes(blob[:-5])
        with pytest.raises(ModelFormatError):
            load_model(str(path))

    def test_trailing_bytes(self, tmp_path):
        path = self.save_plain(tmp_path)
        path.write_bytes(path.read_bytes() + b"\x00\x00")
        with pytest.raises(ModelFormatError):
            load_model(str(path))

    def test_truncated_header(self, tmp_path):
        path = self.save_plain(tmp_path)
        path.write_bytes(path.read_bytes()[:10])
        with pytest.raises(ModelFormatError):
            load_model(str(path))

    def test_garbage_file(self, tmp_path):
        path = tmp_path / "m.bin"
        path.write_bytes(b"not a model at all")
        with pytest.raises(ModelFormatError):
            load_model(str(path))
