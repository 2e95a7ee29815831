import pytest
import torch

from hapnet.config import (
    AttentionKind,
    ConfigError,
    Modality,
    ModelConfig,
    Routing,
    seed_all,
    token_layout,
    validate_config,
)
from hapnet.model import HapNet

from conftest import tiny_config


class TestValidation:
    def test_defaults_pass(self):
        cfg = ModelConfig()
        assert validate_config(cfg) is cfg

    def test_height_not_multiple_of_32(self):
        with pytest.raises(ConfigError, match="H not divisible by 32"):
            validate_config(ModelConfig(height=48))

    def test_width_not_multiple_of_32(self):
        with pytest.raises(ConfigError, match="W not divisible by 32"):
            validate_config(ModelConfig(width=100))

    def test_embed_dim_heads_mismatch(self):
        with pytest.raises(ConfigError, match="embed_dim not divisible"):
            validate_config(ModelConfig(embed_dim=30, trunk_heads=4))

    def test_trunk_depth_wrong_arity(self):
        with pytest.raises(ConfigError, match="exactly 4"):
            validate_config(ModelConfig(trunk_depth=(2, 2, 2)))

    def test_trunk_depth_negative(self):
        with pytest.raises(ConfigError, match="trunk_depth"):
            validate_config(ModelConfig(trunk_depth=(1, -1, 1, 1)))

    def test_trunk_depth_zero_allowed(self):
        # Degenerate depth-0 stages are accepted so trunk identity can be
        # exercised in tests.
        validate_config(ModelConfig(trunk_depth=(0, 0, 0, 0)))

    def test_num_classes_floor(self):
        with pytest.raises(ConfigError, match="num_classes"):
            validate_config(ModelConfig(num_classes=1))

    def test_idempotent(self):
        cfg = ModelConfig()
        validate_config(validate_config(cfg))


class TestRoundTrip:
    def test_dict_round_trip(self):
        cfg = tiny_config(attention_kind="deformable", input_routing="G", kappa_init=0.5)
        again = ModelConfig.from_dict(cfg.to_dict())
        assert again == cfg
        assert isinstance(again.attention_kind, AttentionKind)
        assert isinstance(again.input_routing, Routing)

    def test_file_round_trip(self, tmp_path):
        cfg = tiny_config(num_queries=5)
        path = tmp_path / "cfg.json"
        cfg.save(path)
        assert ModelConfig.load(path) == cfg

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError, match="unknown config keys"):
            ModelConfig.from_dict({"heihgt": 64})

    def test_replace(self):
        cfg = ModelConfig().replace(seed=9)
        assert cfg.seed == 9 and ModelConfig().seed == 0


class TestTokenLayout:
    def test_64x64(self):
        layout = token_layout(ModelConfig(height=64, width=64))
        assert layout.vit_tokens == 16
        assert layout.vit_grid == (4, 4)
        assert layout.prior_tokens_per_scale == (64, 16, 4)
        assert layout.prior_total == 84
        assert layout.scale_offsets == (0, 64, 80)

    def test_32x32(self):
        layout = token_layout(ModelConfig(height=32, width=32))
        assert layout.vit_tokens == 4
        assert layout.prior_tokens_per_scale == (16, 4, 1)
        assert layout.prior_total == 21

    def test_480x640(self):
        layout = token_layout(ModelConfig(height=480, width=640))
        assert layout.vit_tokens == 1200
        assert layout.vit_grid == (30, 40)
        assert layout.prior_shapes == ((60, 80), (30, 40), (15, 20))

    def test_offsets_are_cumulative(self):
        layout = token_layout(ModelConfig(height=64, width=96))
        a, b, c = layout.prior_tokens_per_scale
        assert layout.scale_offsets == (0, a, a + b)
        assert layout.prior_total == a + b + c


class TestRouting:
    def test_table_covers_nine(self):
        pairs = {(r.vfm, r.cspd) for r in Routing}
        assert len(pairs) == 9

    def test_named_rows(self):
        assert Routing.D.vfm is Modality.RGB and Routing.D.cspd is Modality.RGBT
        assert Routing.E.vfm is Modality.RGB and Routing.E.cspd is Modality.RGB
        assert Routing.I.vfm is Modality.THERMAL and Routing.I.cspd is Modality.THERMAL


class TestSeeding:
    def test_same_seed_same_params(self):
        cfg = tiny_config()
        seed_all(5)
        a = HapNet(cfg)
        seed_all(5)
        b = HapNet(cfg)
        for pa, pb in zip(a.parameters(), b.parameters()):
            assert torch.equal(pa, pb)

    def test_different_seed_differs(self):
        cfg = tiny_config()
        seed_all(0)
        a = HapNet(cfg)
        seed_all(1)
        b = HapNet(cfg)
        assert any(not torch.equal(pa, pb) for pa, pb in zip(a.parameters(), b.parameters()))
