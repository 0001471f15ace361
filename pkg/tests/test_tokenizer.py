import numpy as np
import pytest

from hsimae import hsidata, tokenizer
from hsimae import tensorcore as tc


def _cube(h, w, b, seed=0):
    rng = np.random.default_rng(seed)
    return hsidata.HsiCube(values=rng.normal(size=(h, w, b)),
                           wavelengths=np.linspace(0.4, 2.5, b))


class TestPartition:
    def test_27_cube(self):
        grid = tokenizer.partition(_cube(27, 27, 24))
        assert (grid.P, grid.Q, grid.K) == (3, 3, 3)
        assert grid.patches.shape == (27, 648)

    def test_indian_pines_dims(self):
        grid = tokenizer.partition(_cube(145, 145, 224, seed=1))
        assert (grid.P, grid.Q, grid.K) == (16, 16, 28)
        assert grid.n_tokens == 7168

    def test_single_token_with_crop(self):
        grid = tokenizer.partition(_cube(10, 10, 9))
        assert grid.n_tokens == 1
        assert grid.cropped == (1, 1, 1)
        assert grid.cropped_values.shape == (9, 9, 8)

    def test_too_small(self):
        with pytest.raises(ValueError):
            tokenizer.partition(_cube(9, 9, 7))

    def test_patch_contents_and_flatten_order(self):
        cube = _cube(18, 9, 16, seed=2)
        grid = tokenizer.partition(cube)
        t = grid.token_id(1, 0, 1)
        block = cube.values[9:18, 0:9, 8:16]
        # i-outer, j-middle, b-inner
        manual = np.array([block[i, j, b]
                           for i in range(9) for j in range(9) for b in range(8)])
        np.testing.assert_array_equal(grid.patches[t], manual)

    def test_every_voxel_in_exactly_one_patch(self):
        cube = _cube(20, 19, 17, seed=3)
        grid = tokenizer.partition(cube)
        counts = np.zeros((20, 19, 17), dtype=int)
        for t, (p, q, k) in enumerate(grid.order):
            for i in range(9 * p, 9 * (p + 1)):
                for j in range(9 * q, 9 * (q + 1)):
                    for b in range(8 * k, 8 * (k + 1)):
                        counts[i, j, b] += 1
        inside = counts[:9 * grid.P, :9 * grid.Q, :8 * grid.K]
        assert np.all(inside == 1)
        counts[:9 * grid.P, :9 * grid.Q, :8 * grid.K] = 0
        assert np.all(counts == 0)


class TestMeanWavelength:
    def test_constant(self):
        assert tokenizer.mean_wavelength(np.full(8, 1.0)) == 1.0

    def test_arithmetic(self):
        centers = 0.4 + 0.01 * np.arange(8)
        assert tokenizer.mean_wavelength(centers) == pytest.approx(0.435)

    def test_within_range(self):
        rng = np.random.default_rng(5)
        for _ in range(20):
            centers = np.sort(rng.uniform(0.4, 2.5, size=8))
            m = tokenizer.mean_wavelength(centers)
            assert centers.min() <= m <= centers.max()


class TestSpecEnc:
    def test_unit_omega(self):
        v = tokenizer.spec_enc(2.0 * np.pi, 8)
        assert v[0] == pytest.approx(np.sin(1.0), abs=1e-6)
        assert v[1] == pytest.approx(np.cos(1.0), abs=1e-6)
        assert v[0] == pytest.approx(0.841471, abs=1e-6)
        assert v[1] == pytest.approx(0.540302, abs=1e-6)

    def test_second_frequency_pair(self):
        v = tokenizer.spec_enc(2.0 * np.pi, 4)
        arg = 1.0 / 10000.0 ** 0.5
        assert v[2] == pytest.approx(np.sin(arg), abs=1e-9)
        assert v[3] == pytest.approx(np.cos(arg), abs=1e-9)
        assert v[2] == pytest.approx(0.0099998, abs=1e-6)
        assert v[3] == pytest.approx(0.99995, abs=1e-5)

    @pytest.mark.parametrize("d", [2, 8, 64])
    def test_norm_identity(self, d):
        rng = np.random.default_rng(d)
        for lam in rng.uniform(0.35, 2.6, size=10):
            v = tokenizer.spec_enc(lam, d)
            assert np.sum(v * v) == pytest.approx(d / 2, abs=1e-12)

    def test_injective_over_band_range(self):
        lams = np.arange(0.35, 2.6, 0.001)  # 1 nm spacing
        vecs = np.stack([tokenizer.spec_enc(l, 2) for l in lams])
        d = np.linalg.norm(np.diff(vecs, axis=0), axis=1)
        assert np.all(d > 1e-6)

    def test_invalid_args(self):
        with pytest.raises(ValueError):
            tokenizer.spec_enc(1.0, 3)
        with pytest.raises(ValueError):
            tokenizer.spec_enc(-1.0, 4)


class TestSinusoidalPe:
    def test_pos_zero(self):
        v = tokenizer.sinusoidal_pe(0, 6)
        np.testing.assert_array_equal(v, [0, 1, 0, 1, 0, 1])

    def test_pos_one_d2(self):
        v = tokenizer.sinusoidal_pe(1, 2)
        np.testing.assert_allclose(v, [np.sin(1.0), np.cos(1.0)], rtol=1e-12)

    def test_norm_identity(self):
        for pos in [0, 1, 7, 100]:
            v = tokenizer.sinusoidal_pe(pos, 16)
            assert np.sum(v * v) == pytest.approx(8.0, abs=1e-12)

    def test_odd_dim_rejected(self):
        with pytest.raises(ValueError):
            tokenizer.sinusoidal_pe(1, 5)


class TestEmbedTokens:
    def _setup(self, d=6, seed=0):
        cube = _cube(27, 27, 24, seed=seed)
        grid = tokenizer.partition(cube)
        meta = tokenizer.spectral_meta(cube.wavelengths, grid.K)
        rng = np.random.default_rng(seed + 1)
        w = tc.Tensor(rng.normal(size=(648, d)))
        b = tc.Tensor(rng.normal(size=d))
        pe = tc.Tensor(rng.normal(size=(grid.P * grid.Q, d)))
        return grid, meta, w, b, pe

    def test_output_shape(self):
        grid, meta, w, b, pe = self._setup()
        out = tokenizer.embed_tokens(grid, meta, w, b, pe)
        assert out.data.shape == (27, 6)

    def test_zero_patch_zero_table_gives_specenc(self):
        grid, meta, _, _, _ = self._setup(d=8)
        grid.patches[:] = 0.0
        out = tokenizer.embed_tokens(
            grid, meta, tc.Tensor(np.zeros((648, 8))), tc.Tensor(np.zeros(8)),
            tc.Tensor(np.zeros((grid.P * grid.Q, 8))))
        for t, (p, q, k) in enumerate(grid.order):
            np.testing.assert_allclose(out.data[t],
                                       tokenizer.spec_enc(meta.lambdas[k], 8))

    def test_same_patch_different_group_differ_by_specenc(self):
        grid, meta, w, b, pe = self._setup(d=8)
        t0 = grid.token_id(1, 2, 0)
        t1 = grid.token_id(1, 2, 2)
        grid.patches[t1] = grid.patches[t0]
        out = tokenizer.embed_tokens(grid, meta, w, b, pe).data
        delta = tokenizer.spec_enc(meta.lambdas[0], 8) - tokenizer.spec_enc(
            meta.lambdas[2], 8)
        np.testing.assert_allclose(out[t0] - out[t1], delta, atol=1e-12)

    def test_spectral_meta_omega(self):
        meta = tokenizer.spectral_meta(np.linspace(0.4, 2.5, 24), 3)
        np.testing.assert_array_equal(meta.omegas, 2.0 * np.pi / meta.lambdas)
