"""Config validation, container round-trips, synthetic generation."""

import numpy as np
import pytest

from vitaccel.model import (
    ConfigError,
    CorruptHeaderError,
    EncoderConfig,
    ShapeMismatchError,
    UnknownDtypeError,
    deit_small,
    load_model,
    preset,
    save_model,
    synth_input,
    synth_model,
)


def small_config(**kw):
    base = dict(num_layers=1, embed_dim=8, num_heads=2, head_dim=4,
                ffn_dim=16, num_tokens=5)
    base.update(kw)
    return EncoderConfig(**base)


class TestEncoderConfig:
    def test_deit_s_preset(self):
        cfg = deit_small()
        assert (cfg.num_layers, cfg.embed_dim, cfg.num_heads, cfg.head_dim) == (12, 384, 6, 64)
        assert (cfg.ffn_dim, cfg.num_tokens) == (1536, 197)
        assert cfg.prune_layers == (4, 7, 10)
        assert cfg.keep_ratio == 0.5
        assert cfg.ffn2_thresholds == (1.5, 1.5, 1.5, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 0.5, 0.5, 0.8)

    def test_param_count_deit_s(self):
        assert deit_small().param_count() == 21_233_664

    def test_head_dim_consistency(self):
        with pytest.raises(ConfigError):
            small_config(embed_dim=10)

    def test_prune_layers_must_increase(self):
        with pytest.raises(ConfigError):
            small_config(num_layers=4, prune_layers=(3, 2),
                         ffn2_thresholds=(0.0,) * 4)

    def test_prune_layer_range(self):
        with pytest.raises(ConfigError):
            small_config(prune_layers=(2,))  # only 1 layer

    def test_threshold_count(self):
        with pytest.raises(ConfigError):
            small_config(ffn2_thresholds=(1.0, 1.0))

    def test_ffn2_pruning_requires_relu(self):
        with pytest.raises(ConfigError):
            small_config(activation="gelu_tanh", ffn2_pruning=True,
                         ffn2_thresholds=(0.0,))

    def test_keep_ratio_bounds(self):
        with pytest.raises(ConfigError):
            small_config(keep_ratio=0.0)
        with pytest.raises(ConfigError):
            small_config(keep_ratio=1.5)

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            preset("deit-xxl")

    def test_dict_roundtrip(self):
        cfg = deit_small()
        assert EncoderConfig.from_dict(cfg.to_dict()) == cfg


class TestSynth:
    def test_same_seed_identical(self):
        cfg = small_config()
        a = synth_model(cfg, 7)
        b = synth_model(cfg, 7)
        for la, lb in zip(a, b):
            assert np.array_equal(la.wq.data, lb.wq.data)
            assert np.array_equal(la.wffn2.data, lb.wffn2.data)
            assert np.array_equal(la.ln1_gamma, lb.ln1_gamma)

    def test_different_seeds_differ(self):
        cfg = small_config()
        a = synth_model(cfg, 7)
        b = synth_model(cfg, 8)
        assert not np.array_equal(a[0].wq.data, b[0].wq.data)

    def test_deit_s_element_count(self):
        cfg = deit_small()
        layers = synth_model(cfg, 0)
        total = sum(
            lw.wq.data.size + lw.wk.data.size + lw.wv.data.size
            + lw.wproj.data.size + lw.wffn1.data.size + lw.wffn2.data.size
            for lw in layers
        )
        assert total == 21_233_664  # 12 x (4 d^2 + 2 d ffn)

    def test_weight_range_and_scale(self):
        layers = synth_model(small_config(), 3)
        for lw in layers:
            assert lw.wq.scale == 0.02
            assert lw.wq.data.min() >= -127

    def test_input_shape(self):
        cfg = small_config()
        tokens = synth_input(cfg, 5)
        assert tokens.shape == (5, 8)
        assert np.array_equal(tokens.data, synth_input(cfg, 5).data)


class TestContainer:
    def test_roundtrip_identity(self, tmp_path):
        cfg = small_config()
        layers = synth_model(cfg, 11)
        tokens = synth_input(cfg, 11)
        path = tmp_path / "m.vpsw"
        save_model(str(path), cfg, layers, {"input": tokens})
        loaded_cfg, loaded_layers, extras = load_model(str(path))
        assert loaded_cfg.num_layers == cfg.num_layers
        assert loaded_cfg.embed_dim == cfg.embed_dim
        for got, want in zip(loaded_layers, layers):
            assert np.array_equal(got.wq.data, want.wq.data)
            assert got.wq.scale == want.wq.scale
            assert np.array_equal(got.wffn2.data, want.wffn2.data)
            np.testing.assert_allclose(got.ln1_gamma, want.ln1_gamma, rtol=0)
        assert np.array_equal(extras["input"].data, tokens.data)

    def test_save_load_save_identical_bytes(self, tmp_path):
        cfg = small_config()
        layers = synth_model(cfg, 2)
        p1, p2 = tmp_path / "a.vpsw", tmp_path / "b.vpsw"
        save_model(str(p1), cfg, layers)
        loaded_cfg, loaded_layers, _ = load_model(str(p1))
        save_model(str(p2), loaded_cfg, loaded_layers)
        assert p1.read_bytes() == p2.read_bytes()

    def test_deit_s_container_shapes(self, tmp_path):
        cfg = deit_small()
        layers = synth_model(cfg, 0)
        path = tmp_path / "deit.vpsw"
        save_model(str(path), cfg, layers)
        loaded_cfg, loaded_layers, _ = load_model(str(path))
        assert len(loaded_layers) == 12
        assert loaded_layers[0].wffn1.shape == (384, 1536)
        assert loaded_layers[0].wffn2.shape == (1536, 384)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.vpsw"
        path.write_bytes(b"NOPE" + b"\x00" * 64)
        with pytest.raises(CorruptHeaderError) as exc:
            load_model(str(path))
        assert exc.value.code == "corrupt_header"

    def test_truncated_payload_is_shape_mismatch(self, tmp_path):
        cfg = small_config()
        layers = synth_model(cfg, 1)
        path = tmp_path / "t.vpsw"
        save_model(str(path), cfg, layers)
        blob = path.read_bytes()
        path.write_bytes(blob[:-50])
        with pytest.raises(ShapeMismatchError) as exc:
            load_model(str(path))
        assert exc.value.code == "shape_mismatch"

    def test_unknown_dtype_code(self, tmp_path):
        cfg = small_config()
        layers = synth_model(cfg, 1)
        path = tmp_path / "d.vpsw"
        save_model(str(path), cfg, layers)
        blob = bytearray(path.read_bytes())
        # first table entry: header is 35 bytes, then name_len u16 + name
        name_len = int.from_bytes(blob[35:37], "little")
        dtype_pos = 37 + name_len
        blob[dtype_pos] = 99
        path.write_bytes(bytes(blob))
        with pytest.raises(UnknownDtypeError) as exc:
            load_model(str(path))
        assert exc.value.code == "unknown_dtype"

    def test_error_codes_distinct(self):
        assert len({CorruptHeaderError.code, ShapeMismatchError.code, UnknownDtypeError.code}) == 3

    def test_missing_file_is_oserror(self, tmp_path):
        with pytest.raises(OSError):
            load_model(str(tmp_path / "absent.vpsw"))
