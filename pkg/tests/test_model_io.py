import numpy as np
import pytest

from bgru.bitkernel import pack_network
from bgru.errors import FormatError
from bgru.gru import build_mask_set, init_network
from bgru.model_io import (
    MODE_COMPRESSED,
    MODE_PACKED,
    MODE_REAL,
    ModelFile,
    float_payload_bytes,
    load_model,
    packed_payload_bytes,
    save_model,
)
from bgru.numerics import SeededRng
from bgru.quantizer import fit_lloyd_max


@pytest.fixture()
def codebook():
    rng = np.random.default_rng(0)
    cb, _ = fit_lloyd_max(rng.standard_normal(500), num_levels=16)
    return cb


@pytest.fixture()
def network():
    return init_network(SeededRng(3), input_dim=10, units=6, out_dim=4)


class TestFloatModes:
    @pytest.mark.parametrize("mode", [MODE_REAL, MODE_COMPRESSED])
    def test_roundtrip(self, tmp_path, codebook, network, mode):
        path = tmp_path / "m.bgru"
        save_model(path, ModelFile(mode=mode, codebook=codebook, net=network))
        loaded = load_model(path)
        assert loaded.mode == mode
        for name, W in network.matrices().items():
            assert np.array_equal(loaded.net.matrices()[name], W)
        assert np.array_equal(loaded.codebook.levels, codebook.levels)
        assert np.array_equal(loaded.codebook.thresholds, codebook.thresholds)

    def test_save_load_save_byte_identical(self, tmp_path, codebook, network):
        p1 = tmp_path / "a.bgru"
        p2 = tmp_path / "b.bgru"
        save_model(p1, ModelFile(mode=MODE_COMPRESSED, codebook=codebook, net=network))
        save_model(p2, ModelFile(mode=MODE_COMPRESSED, codebook=codebook,
                                 net=load_model(p1).net))
        assert p1.read_bytes() == p2.read_bytes()

    def test_file_size_matches_layout(self, tmp_path, codebook, network):
        path = tmp_path / "m.bgru"
        save_model(path, ModelFile(mode=MODE_COMPRESSED, codebook=codebook, net=network))
        dims = [(l.input_dim, l.units) for l in network.layers]
        header = 4 + 4 + 1 + 4 + 8 * len(dims) + 4 + 8 * (16 + 15)
        assert path.stat().st_size == header + float_payload_bytes(dims, network.out_dim)


class TestPackedMode:
    def test_roundtrip(self, tmp_path, codebook, network):
        masks = build_mask_set(network, 0.8, 1.0, SeededRng(4)).with_constant_c(1.0)
        packed = pack_network(network, masks)
        path = tmp_path / "p.bgru"
        save_model(path, ModelFile(mode=MODE_PACKED, codebook=codebook, packed=packed))
        loaded = load_model(path)
        assert loaded.mode == MODE_PACKED
        for lp, lg in zip(loaded.packed.layers, packed.layers):
            for name in ("Wr", "Ur", "Wz", "Uz", "Wh", "Uh"):
                a = getattr(lp, name)
                b = getattr(lg, name)
                assert a.mu == b.mu
                assert np.array_equal(a.sign_plane, b.sign_plane)
                assert np.array_equal(a.nonzero_plane, b.nonzero_plane)

    def test_save_load_save_byte_identical(self, tmp_path, codebook, network):
        masks = build_mask_set(network, 0.8, 1.0, SeededRng(4)).with_constant_c(1.0)
        packed = pack_network(network, masks)
        p1 = tmp_path / "a.bgru"
        p2 = tmp_path / "b.bgru"
        save_model(p1, ModelFile(mode=MODE_PACKED, codebook=codebook, packed=packed))
        save_model(p2, ModelFile(mode=MODE_PACKED, codebook=codebook,
                                 packed=load_model(p1).packed))
        assert p1.read_bytes() == p2.read_bytes()

    def test_file_size_matches_layout(self, tmp_path, codebook, network):
        masks = build_mask_set(network, 0.8, 1.0, SeededRng(4)).with_constant_c(1.0)
        packed = pack_network(network, masks)
        path = tmp_path / "p.bgru"
        save_model(path, ModelFile(mode=MODE_PACKED, codebook=codebook, packed=packed))
        dims = [(l.input_dim, l.units) for l in network.layers]
        header = 4 + 4 + 1 + 4 + 8 * len(dims) + 4 + 8 * (16 + 15)
        assert path.stat().st_size == header + packed_payload_bytes(dims, network.out_dim)

    def test_non_canonical_padding_rejected(self, tmp_path, codebook, network):
        masks = build_mask_set(network, 0.8, 1.0, SeededRng(4)).with_constant_c(1.0)
        packed = pack_network(network, masks)
        path = tmp_path / "p.bgru"
        save_model(path, ModelFile(mode=MODE_PACKED, codebook=codebook, packed=packed))
        data = bytearray(path.read_bytes())
        # set a padding bit inside the first plane word: input_dim=10 uses
        # bits 0..9 of the first u64 after the first matrix's mu
        header = 4 + 4 + 1 + 4 + 8 + 4 + 8 * 31
        word_off = header + 8
        data[word_off + 7] |= 0x80  # bit 63
        path.write_bytes(bytes(data))
        with pytest.raises(FormatError):
            load_model(path)


class TestModeEquivalence:
    def test_mode1_at_full_binarization_matches_mode2(self, tmp_path, codebook):
        # same weights, two files: a float round-1 snapshot driven through
        # the pi=1 path and the packed model must emit identical masks
        net = init_network(SeededRng(21), input_dim=12, units=9, out_dim=5)
        masks = build_mask_set(net, 0.8, 1.0, SeededRng(22)).with_constant_c(1.0)
        p_float = tmp_path / "f.bgru"
        p_packed = tmp_path / "p.bgru"
        save_model(p_float, ModelFile(mode=MODE_COMPRESSED, codebook=codebook, net=net))
        save_model(p_packed, ModelFile(mode=MODE_PACKED, codebook=codebook,
                                       packed=pack_network(net, masks)))

        from bgru.gru import build_mask_set as rebuild
        from bgru.pipeline import predict_ibm, predict_ibm_packed

        loaded_f = load_model(p_float)
        loaded_p = load_model(p_packed)
        # B is a pure function of the stored weights and rho
        masks2 = rebuild(loaded_f.net, 0.8, 1.0, SeededRng(0)).with_constant_c(1.0)
        rng = SeededRng(23)
        frames = np.where(rng.uniform((7, 12)) < 0.5, -1.0, 1.0)
        got_float = predict_ibm(loaded_f.net, frames, "bgru", masks=masks2,
                                act_rng=SeededRng(1),
                                h0s=[np.ones(l.units) for l in loaded_f.net.layers])
        got_packed = predict_ibm_packed(loaded_p.packed, frames)
        assert np.array_equal(got_float, got_packed)

    def test_packed_reload_inference_identical(self, tmp_path, codebook, network):
        from bgru.pipeline import predict_ibm_packed

        masks = build_mask_set(network, 0.8, 1.0, SeededRng(4)).with_constant_c(1.0)
        packed = pack_network(network, masks)
        path = tmp_path / "p.bgru"
        save_model(path, ModelFile(mode=MODE_PACKED, codebook=codebook, packed=packed))
        reloaded = load_model(path).packed
        rng = SeededRng(24)
        frames = np.where(rng.uniform((6, 10)) < 0.5, -1.0, 1.0)
        assert np.array_equal(predict_ibm_packed(packed, frames),
                              predict_ibm_packed(reloaded, frames))


class TestCorruption:
    def test_bad_magic(self, tmp_path, codebook, network):
        path = tmp_path / "m.bgru"
        save_model(path, ModelFile(mode=MODE_REAL, codebook=codebook, net=network))
        data = bytearray(path.read_bytes())
        data[:4] = b"NOPE"
        path.write_bytes(bytes(data))
        with pytest.raises(FormatError, match="magic"):
            load_model(path)

    def test_truncated_payload(self, tmp_path, codebook, network):
        path = tmp_path / "m.bgru"
        save_model(path, ModelFile(mode=MODE_REAL, codebook=codebook, net=network))
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(FormatError, match="truncated"):
            load_model(path)

    def test_trailing_bytes(self, tmp_path, codebook, network):
        path = tmp_path / "m.bgru"
        save_model(path, ModelFile(mode=MODE_REAL, codebook=codebook, net=network))
        path.write_bytes(path.read_bytes() + b"junk")
        with pytest.raises(FormatError, match="trailing"):
            load_model(path)

    def test_unknown_mode_byte(self, tmp_path, codebook, network):
        path = tmp_path / "m.bgru"
        save_model(path, ModelFile(mode=MODE_REAL, codebook=codebook, net=network))
        data = bytearray(path.read_bytes())
        data[8] = 9
        path.write_bytes(bytes(data))
        with pytest.raises(FormatError, match="mode"):
            load_model(path)
