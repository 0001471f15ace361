import numpy as np
import pytest

from hsimae import hsidata, masking, model, tokenizer
from hsimae import tensorcore as tc


def _cube(h=27, w=27, b=24, seed=0):
    return hsidata.gen_synthetic(h, w, b, n_classes=3, seed=seed)


def _setup(config=None, seed=0, rho=0.5):
    config = config or model.micro_config()
    cube, _ = hsidata.normalize(_cube(seed=seed))
    grid = tokenizer.partition(cube)
    meta = tokenizer.spectral_meta(cube.wavelengths, grid.K)
    params = model.init_params(config, grid.P, grid.Q, grid.K, 3, seed=seed)
    plan = masking.sample_mask_plan(grid.P, grid.Q, grid.K, rho, rho, seed=seed)
    return cube, grid, meta, params, plan


class TestInitParams:
    def test_deterministic(self):
        a = model.init_params(model.micro_config(), 3, 3, 3, 4, seed=5)
        b = model.init_params(model.micro_config(), 3, 3, 3, 4, seed=5)
        for k in a.arrays:
            assert np.array_equal(a.arrays[k], b.arrays[k])

    def test_closed_form_count(self):
        cfg = model.desk_config()
        params = model.init_params(cfg, 3, 3, 3, 4, seed=0)
        d, f, n = cfg.d_model, cfg.d_ff, 4
        per_block = 2 * d + 4 * (d * d + d) + 2 * d + d * f + f + f * d + d
        expected = (648 * d + d) + 9 * d \
            + cfg.n_enc_layers * per_block + 2 * d \
            + cfg.n_dec_layers * per_block + 2 * d \
            + d + (d * 648 + 648) + (d * n + n)
        assert params.n_params == expected

    def test_finite_and_truncated(self):
        params = model.init_params(model.desk_config(), 2, 2, 2, 2, seed=1)
        for k, arr in params.arrays.items():
            assert np.all(np.isfinite(arr))
        assert np.abs(params.arrays["patch_proj_w"]).max() <= 0.04
        assert np.all(params.arrays["spatial_pe"] == 0.0)
        assert np.all(params.arrays["enc0_ln1_g"] == 1.0)

    def test_bad_config(self):
        with pytest.raises(ValueError):
            model.ModelConfig(d_model=10, n_heads=4)
        with pytest.raises(ValueError):
            model.ModelConfig(n_enc_layers=0)


class TestEncode:
    def test_single_token_shape(self):
        cfg = model.micro_config()
        params = model.init_params(cfg, 1, 1, 1, 2, seed=0)
        t = params.tensors()
        out = model.encode(tc.Tensor(np.random.default_rng(0).normal(size=(1, 16))),
                           t, cfg)
        assert out.data.shape == (1, 16)
        assert np.all(np.isfinite(out.data))

    def test_identical_rows_stay_identical(self):
        cfg = model.micro_config()
        params = model.init_params(cfg, 2, 2, 2, 2, seed=1)
        t = params.tensors()
        row = np.random.default_rng(1).normal(size=16)
        out = model.encode(tc.Tensor(np.tile(row, (5, 1))), t, cfg).data
        for r in out[1:]:
            np.testing.assert_allclose(r, out[0], atol=1e-12)

    def test_permutation_equivariance(self):
        cfg = model.micro_config()
        params = model.init_params(cfg, 2, 2, 2, 2, seed=2)
        t = params.tensors()
        x = np.random.default_rng(2).normal(size=(7, 16))
        perm = np.random.default_rng(3).permutation(7)
        out = model.encode(tc.Tensor(x), t, cfg).data
        out_p = model.encode(tc.Tensor(x[perm]), t, cfg).data
        inv = np.argsort(perm)
        np.testing.assert_allclose(out_p[inv], out, atol=1e-9)


class TestDecode:
    def test_output_extents(self):
        cube, grid, meta, params, plan = _setup()
        t = params.tensors()
        emb = model.embed_for(params, grid, meta, t)
        vis, _ = masking.apply_mask(emb, plan)
        latents = model.encode(vis, t, params.config)
        out = model.decode(latents, plan, t, params.config, meta)
        assert out.data.shape == (27, 27, 24)
        assert np.all(np.isfinite(out.data))

    def test_no_mask_tokens_at_rho_zero(self):
        cube, grid, meta, params, plan = _setup(rho=0.0)
        t = params.tensors()
        emb = model.embed_for(params, grid, meta, t)
        vis, _ = masking.apply_mask(emb, plan)
        latents = model.encode(vis, t, params.config)
        # perturbing the mask token must not change the output
        out1 = model.decode(latents, plan, t, params.config, meta).data.copy()
        t2 = dict(t)
        t2["mask_token"] = tc.Tensor(t["mask_token"].data + 10.0)
        out2 = model.decode(latents, plan, t2, params.config, meta).data
        np.testing.assert_array_equal(out1, out2)

    def test_mask_token_used_when_masked(self):
        cube, grid, meta, params, plan = _setup(rho=0.5)
        t = params.tensors()
        emb = model.embed_for(params, grid, meta, t)
        vis, _ = masking.apply_mask(emb, plan)
        latents = model.encode(vis, t, params.config)
        out1 = model.decode(latents, plan, t, params.config, meta).data.copy()
        t2 = dict(t)
        t2["mask_token"] = tc.Tensor(t["mask_token"].data + 1.0)
        out2 = model.decode(latents, plan, t2, params.config, meta).data
        assert not np.array_equal(out1, out2)

    def test_unflatten_matches_partition(self):
        # pushing patch vectors through the inverse index restores the cube
        cube, _ = hsidata.normalize(_cube(seed=4))
        grid = tokenizer.partition(cube)
        idx = model._unflatten_index(grid.P, grid.Q, grid.K)
        restored = grid.patches.reshape(-1)[idx].reshape(27, 27, 24)
        np.testing.assert_array_equal(restored, grid.cropped_values)

    def test_latent_row_mismatch(self):
        cube, grid, meta, params, plan = _setup()
        t = params.tensors()
        with pytest.raises(ValueError):
            model.decode(tc.Tensor(np.zeros((3, 16))), plan, t,
                         params.config, meta)


class TestClassify:
    def test_logit_shape_and_determinism(self):
        cube, _ = hsidata.normalize(_cube(seed=5))
        params = model.init_params(model.micro_config(), 3, 3, 3, 3, seed=5)
        a = model.classify(cube, params).data
        b = model.classify(cube, params).data
        assert a.shape == (3,)
        np.testing.assert_array_equal(a, b)

    def test_window_smaller_than_table(self):
        # a 9x9 window classifies against a table trained on a 3x3 grid
        cube, _ = hsidata.normalize(_cube(seed=6))
        window = hsidata.HsiCube(values=cube.values[:9, :9, :],
                                 wavelengths=cube.wavelengths)
        params = model.init_params(model.micro_config(), 3, 3, 3, 3, seed=6)
        out = model.classify(window, params).data
        assert out.shape == (3,) and np.all(np.isfinite(out))

    def test_too_small_cube(self):
        bad = hsidata.HsiCube(values=np.ones((4, 4, 8)),
                              wavelengths=np.linspace(0.4, 2.5, 8))
        params = model.init_params(model.micro_config(), 1, 1, 1, 2, seed=0)
        with pytest.raises(ValueError):
            model.classify(bad, params)


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path):
        params = model.init_params(model.micro_config(), 3, 3, 3, 4, seed=9)
        path = tmp_path / "m.ckpt"
        model.save_checkpoint(params, path)
        back = model.load_checkpoint(path)
        assert back.config == params.config
        assert (back.P, back.Q, back.K, back.n_classes) == (3, 3, 3, 4)
        for k in params.arrays:
            assert np.array_equal(params.arrays[k], back.arrays[k])

    def test_rewrite_byte_identical(self, tmp_path):
        params = model.init_params(model.micro_config(), 2, 2, 2, 2, seed=1)
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        model.save_checkpoint(params, p1)
        model.save_checkpoint(model.load_checkpoint(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_not_a_checkpoint(self, tmp_path):
        path = tmp_path / "junk"
        path.write_bytes(b"\x10\x00\x00\x00" + b'{"magic": "no"} ')
        with pytest.raises(ValueError):
            model.load_checkpoint(path)
