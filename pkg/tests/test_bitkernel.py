import numpy as np
import pytest

from bgru.bitkernel import (
    PackedBipolarVector,
    PackedGateVector,
    PackedTernaryMatrix,
    bgru_infer_step,
    bit_mux,
    masked_ternary_counts,
    masked_xnor_dot,
    network_infer_step,
    pack_network,
    pack_ternary,
    run_sequence,
    ternary_counts,
    xnor_dot,
)
from bgru.errors import DomainError, ShapeError
from bgru.gru import build_mask_set, build_scaled_sparsity_mask, init_network, sign_unit
from bgru.numerics import SeededRng


def random_ternary(rng, rows, cols, density=0.7):
    W = rng.normal((rows, cols))
    B, _, mu = build_scaled_sparsity_mask(W, density)
    return W, B, mu


def random_bipolar(rng, n):
    return np.where(rng.uniform(n) < 0.5, -1.0, 1.0)


class TestPacking:
    def test_pack_unpack_roundtrip_exact(self):
        rng = SeededRng(0)
        for trial in range(30):
            r = rng.stream(f"t{trial}")
            rows = 1 + int(r.uniform(low=0, high=12))
            cols = 1 + int(r.uniform(low=0, high=130))
            W, B, mu = random_ternary(r.stream("w"), rows, cols)
            pm = pack_ternary(W, B)
            want = sign_unit(W) * B
            assert np.array_equal(pm.to_dense(), want)
            assert pm.mu == mu

    def test_all_zero_mask(self):
        W = np.ones((3, 5))
        pm = pack_ternary(W, np.zeros((3, 5)))
        assert np.all(pm.nonzero_plane == 0)
        x = PackedBipolarVector.from_floats(np.ones(5))
        assert np.all(ternary_counts(pm, x) == 0)
        assert xnor_dot(x, pm, 0) == 0.0

    def test_storage_formula(self):
        W = np.ones((1024, 1024))
        B, _, _ = build_scaled_sparsity_mask(W, 0.8)
        pm = pack_ternary(W, B)
        assert pm.storage_words() == 2 * 1024 * 16
        assert pm.storage_words() == 32768

    def test_popcount_of_nonzero_plane_matches_mask(self):
        rng = SeededRng(1)
        W, B, _ = random_ternary(rng, 7, 100, density=0.3)
        pm = pack_ternary(W, B)
        assert int(np.bitwise_count(pm.nonzero_plane).sum()) == np.count_nonzero(B)

    def test_nonuniform_mask_rejected(self):
        W = np.ones((2, 2))
        B = np.array([[0.5, 0.7], [0.0, 0.0]])
        with pytest.raises(DomainError):
            pack_ternary(W, B)

    def test_padding_bits_must_be_zero(self):
        words = np.array([[np.uint64(1) << np.uint64(63)]])
        with pytest.raises(DomainError):
            PackedTernaryMatrix(rows=1, cols=3, sign_plane=words,
                                nonzero_plane=words, mu=1.0)

    def test_sign_bits_off_support_rejected(self):
        sign = np.array([[np.uint64(0b11)]])
        nonzero = np.array([[np.uint64(0b01)]])
        with pytest.raises(DomainError):
            PackedTernaryMatrix(rows=1, cols=2, sign_plane=sign,
                                nonzero_plane=nonzero, mu=1.0)

    def test_bipolar_vector_roundtrip(self):
        rng = SeededRng(2)
        for n in (1, 63, 64, 65, 130):
            v = random_bipolar(rng.stream(f"n{n}"), n)
            assert np.array_equal(PackedBipolarVector.from_floats(v).to_floats(), v)

    def test_gate_vector_validates_entries(self):
        with pytest.raises(DomainError):
            PackedGateVector.from_floats(np.array([0.0, 2.0]))


class TestXnorDot:
    def test_worked_example(self):
        W = np.array([[1.0, 0.5, -1.0]])
        B = np.array([[1.0, 0.0, 1.0]])
        pm = pack_ternary(W, B)
        x = PackedBipolarVector.from_floats(np.array([1.0, -1.0, 1.0]))
        assert xnor_dot(x, pm, 0) == 0.0

    def test_zero_row(self):
        pm = pack_ternary(np.zeros((1, 4)), np.zeros((1, 4)))
        x = PackedBipolarVector.from_floats(np.ones(4))
        assert xnor_dot(x, pm, 0) == 0.0

    def test_perfect_agreement(self):
        W = np.array([[1.0, -1.0, 1.0]])
        B = np.full((1, 3), 0.5)
        pm = pack_ternary(W, B)
        x = PackedBipolarVector.from_floats(np.array([1.0, -1.0, 1.0]))
        assert xnor_dot(x, pm, 0) == 1.5

    def test_exact_vs_float_oracle(self):
        # the exact value of a ternary dot is mu * (integer agreement sum);
        # the oracle evaluates that integer sum with an exact {-1,0,1} matmul
        rng = SeededRng(3)
        checked = 0
        for trial in range(300):
            r = rng.stream(f"t{trial}")
            rows = 1 + int(r.uniform(low=0, high=12))
            cols = 1 + int(r.uniform(low=0, high=130))
            W, B, _ = random_ternary(r.stream("w"), rows, cols,
                                     density=float(r.uniform(low=0.1, high=1.0)))
            pm = pack_ternary(W, B)
            pattern = sign_unit(W) * (B != 0)
            for k in range(8):
                xv = random_bipolar(r.stream(f"x{k}"), cols)
                x = PackedBipolarVector.from_floats(xv)
                counts = ternary_counts(pm, x).astype(np.float64)
                assert np.array_equal(counts, pattern @ xv)
                got = pm.mu * counts
                assert np.array_equal(got, pm.mu * (pattern @ xv))
                # the naively accumulated dot agrees to rounding error
                assert np.allclose(got, (sign_unit(W) * B) @ xv,
                                   atol=1e-10, rtol=1e-12)
                checked += rows
        assert checked >= 10_000

    def test_identity_two_a_minus_n1(self):
        rng = SeededRng(4)
        for trial in range(50):
            r = rng.stream(f"t{trial}")
            cols = 1 + int(r.uniform(low=0, high=130))
            W, B, _ = random_ternary(r.stream("w"), 1, cols, density=0.5)
            pm = pack_ternary(W, B)
            xv = random_bipolar(r.stream("x"), cols)
            x = PackedBipolarVector.from_floats(xv)
            # brute force: agreements minus disagreements over nonzero positions
            signs = sign_unit(W[0])
            nz = B[0] != 0
            agree = int(np.sum((signs == xv) & nz))
            disagree = int(np.sum((signs != xv) & nz))
            assert ternary_counts(pm, x)[0] == agree - disagree

    def test_length_mismatch(self):
        pm = pack_ternary(np.ones((1, 4)), np.full((1, 4), 0.5))
        with pytest.raises(ShapeError):
            xnor_dot(PackedBipolarVector.from_floats(np.ones(5)), pm, 0)


class TestMaskedXnorDot:
    def test_gate_all_ones_equals_plain(self):
        rng = SeededRng(5)
        W, B, _ = random_ternary(rng, 3, 70)
        pm = pack_ternary(W, B)
        xv = random_bipolar(rng.stream("x"), 70)
        x = PackedBipolarVector.from_floats(xv)
        ones = PackedGateVector.from_floats(np.ones(70))
        for row in range(3):
            assert masked_xnor_dot(x, ones, pm, row) == xnor_dot(x, pm, row)

    def test_gate_all_zeros(self):
        rng = SeededRng(6)
        W, B, _ = random_ternary(rng, 2, 40)
        pm = pack_ternary(W, B)
        x = PackedBipolarVector.from_floats(random_bipolar(rng.stream("x"), 40))
        zeros = PackedGateVector.from_floats(np.zeros(40))
        assert masked_xnor_dot(x, zeros, pm, 0) == 0.0

    def test_random_gates_match_float_oracle(self):
        rng = SeededRng(7)
        W, B, _ = random_ternary(rng, 4, 64)
        pm = pack_ternary(W, B)
        pattern = sign_unit(W) * (B != 0)
        for k in range(1000):
            r = rng.stream(f"k{k}")
            xv = random_bipolar(r.stream("x"), 64)
            gv = (r.stream("g").uniform(64) < 0.5).astype(np.float64)
            got = pm.mu * masked_ternary_counts(
                pm,
                PackedBipolarVector.from_floats(xv),
                PackedGateVector.from_floats(gv),
            ).astype(np.float64)
            assert np.array_equal(got, pm.mu * (pattern @ (gv * xv)))


class TestBitMux:
    def test_select_all_a(self):
        rng = SeededRng(8)
        a = PackedBipolarVector.from_floats(random_bipolar(rng.stream("a"), 90))
        b = PackedBipolarVector.from_floats(random_bipolar(rng.stream("b"), 90))
        z = PackedGateVector.from_floats(np.ones(90))
        assert np.array_equal(bit_mux(z, a, b).to_floats(), a.to_floats())

    def test_select_all_b(self):
        rng = SeededRng(9)
        a = PackedBipolarVector.from_floats(random_bipolar(rng.stream("a"), 90))
        b = PackedBipolarVector.from_floats(random_bipolar(rng.stream("b"), 90))
        z = PackedGateVector.from_floats(np.zeros(90))
        assert np.array_equal(bit_mux(z, a, b).to_floats(), b.to_floats())

    def test_matches_arithmetic_combination(self):
        rng = SeededRng(10)
        for k in range(200):
            r = rng.stream(f"k{k}")
            av = random_bipolar(r.stream("a"), 128)
            bv = random_bipolar(r.stream("b"), 128)
            zv = (r.stream("z").uniform(128) < 0.5).astype(np.float64)
            got = bit_mux(
                PackedGateVector.from_floats(zv),
                PackedBipolarVector.from_floats(av),
                PackedBipolarVector.from_floats(bv),
            ).to_floats()
            assert np.array_equal(got, zv * av + (1.0 - zv) * bv)

    def test_padding_stays_canonical(self):
        rng = SeededRng(11)
        n = 70
        a = PackedBipolarVector.from_floats(random_bipolar(rng.stream("a"), n))
        b = PackedBipolarVector.from_floats(random_bipolar(rng.stream("b"), n))
        z = PackedGateVector.from_floats((rng.stream("z").uniform(n) < 0.5).astype(float))
        out = bit_mux(z, a, b)
        used = n % 64
        tail_mask = np.uint64((1 << used) - 1)
        assert out.bits[-1] & ~tail_mask == 0


class TestInferStep:
    def test_all_zero_weights_keep_state(self):
        k, d, f = 5, 4, 3
        from bgru.bitkernel import PackedGruLayer, PackedOutputLayer

        def zero(rows, cols):
            return pack_ternary(np.zeros((rows, cols)), np.zeros((rows, cols)))

        layer = PackedGruLayer(Wr=zero(k, d), Ur=zero(k, k), Wz=zero(k, d),
                               Uz=zero(k, k), Wh=zero(k, d), Uh=zero(k, k))
        out = PackedOutputLayer(Wo=zero(f, k))
        rng = SeededRng(12)
        h_prev = PackedBipolarVector.from_floats(random_bipolar(rng, k))
        x = PackedBipolarVector.from_floats(random_bipolar(rng.stream("x"), d))
        h, ibm = bgru_infer_step(layer, out, x, h_prev)
        assert np.array_equal(h.to_floats(), h_prev.to_floats())
        assert np.all(ibm.to_floats() == 1.0)

    def test_matches_float_path_bit_exact(self):
        from bgru.gru import forward_network, ibm_from_prediction

        rng = SeededRng(13)
        for trial in range(60):
            r = rng.stream(f"t{trial}")
            k = 1 + int(r.uniform(low=0, high=70))
            d = 1 + int(r.uniform(low=0, high=130))
            f = 1 + int(r.uniform(low=0, high=30))
            net = init_network(r.stream("init"), d, k, f)
            masks = build_mask_set(net, 0.8, 1.0, r.stream("m")).with_constant_c(1.0)
            pnet = pack_network(net, masks)
            h0 = random_bipolar(r.stream("h0"), k)
            T = 3
            x = np.stack([random_bipolar(r.stream(f"x{t}"), d) for t in range(T)])
            cache = forward_network(net, x, "bgru", masks=masks,
                                    act_rng=r.stream("act"), h0s=[h0])
            want_ibm = ibm_from_prediction(cache.preds)
            h = [PackedBipolarVector.from_floats(h0)]
            for t in range(T):
                h, ibm = network_infer_step(
                    pnet, PackedBipolarVector.from_floats(x[t]), h)
                assert np.array_equal(h[0].to_floats(), cache.layer_states[0][t].h)
                assert np.array_equal(ibm.to_floats(), want_ibm[t])

    def test_run_sequence_initial_state_all_plus_one(self):
        rng = SeededRng(14)
        net = init_network(rng, 8, 6, 4)
        masks = build_mask_set(net, 0.8, 1.0, rng.stream("m")).with_constant_c(1.0)
        pnet = pack_network(net, masks)
        frames = np.stack([random_bipolar(rng.stream(f"f{t}"), 8) for t in range(4)])
        got = run_sequence(pnet, frames)

        from bgru.gru import forward_network, ibm_from_prediction

        cache = forward_network(net, frames, "bgru", masks=masks,
                                act_rng=rng.stream("a"), h0s=[np.ones(6)])
        assert np.array_equal(got, ibm_from_prediction(cache.preds))
