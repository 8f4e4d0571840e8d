import pytest

from m2oe.config import ModelConfig, dump_config, load_config, parse_config_text
from m2oe.errors import ConfigError


def test_defaults():
    cfg = ModelConfig()
    assert (cfg.d, cfg.layers, cfg.heads, cfg.experts, cfg.top_k) == (64, 2, 4, 4, 2)
    assert (cfg.omega_imp, cfg.load_weight, cfg.batch_size, cfg.epochs) == (0.1, 1.0, 16, 200)
    assert (cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps) == (1e-3, 0.9, 0.999, 1e-8)
    assert cfg.scale_dk == 64.0 and cfg.init_std == 0.02


def test_parse_comments_and_blank_lines():
    text = "# model\n d = 16 \n\nuse_moe = false  # ablation\n"
    assert parse_config_text(text) == [("d", "16"), ("use_moe", "false")]


def test_file_roundtrip(tmp_path):
    cfg = ModelConfig(task="regression", d=16, heads=2, use_cra=False, omega_imp=0.25, seed=9)
    path = tmp_path / "m.cfg"
    path.write_text(dump_config(cfg))
    assert load_config(path) == cfg


def test_overrides(tmp_path):
    path = tmp_path / "m.cfg"
    path.write_text("seed = 1\n")
    assert load_config(path, seed=5, use_moe=False).seed == 5


def test_unknown_key_named(tmp_path):
    path = tmp_path / "m.cfg"
    path.write_text("d = 16\nlearning_rat = 0.1\n")
    with pytest.raises(ConfigError, match="learning_rat"):
        load_config(path)


@pytest.mark.parametrize("text", ["d 16", "d = sixteen", "use_cra = maybe"])
def test_malformed(tmp_path, text):
    path = tmp_path / "m.cfg"
    path.write_text(text + "\n")
    with pytest.raises(ConfigError):
        load_config(path)


@pytest.mark.parametrize("changes", [dict(d=7), dict(d=12, heads=5), dict(top_k=5), dict(slope=1.0),
                                     dict(task="ranking"), dict(lr=0.0), dict(graph_encoder="gat"),
                                     dict(attn_scale="none"), dict(graph_layers=0)])
def test_invalid(changes):
    with pytest.raises(ConfigError):
        ModelConfig(**changes)
