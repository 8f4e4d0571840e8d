import numpy as np
import pytest

from m2oe.checkpoint import load_checkpoint, save_checkpoint
from m2oe.config import ModelConfig
from m2oe.data import CLASSIFICATION, REGRESSION, synth_dataset
from m2oe.errors import FormatError
from m2oe.model import M2oE, evaluate

SMALL = dict(d=8, heads=2, layers=1, graph_layers=1, max_len=10)


@pytest.fixture
def saved(tmp_path):
    model = M2oE(ModelConfig(task=REGRESSION, **SMALL, seed=6, init_std=0.4))
    path = tmp_path / "model.ckpt"
    save_checkpoint(model, path)
    return model, path


def test_roundtrip_bit_identical(saved):
    model, path = saved
    back = load_checkpoint(path)
    ds = synth_dataset(25, 3, REGRESSION)
    np.testing.assert_array_equal(back.predict(ds), model.predict(ds))
    assert evaluate(back, ds) == evaluate(model, ds)
    assert back.config == model.config


def test_layout(saved):
    model, path = saved
    lines = path.read_text().splitlines()
    assert lines[0] == "M2OE-CKPT v1"
    assert "task=regression" in lines[1].split() and "use_cra=true" in lines[1].split()
    names = [n for n, _ in model.named_parameters()]
    first = dict(model.named_parameters())[names[0]]
    assert lines[2] == names[0]
    assert lines[3].split() == [str(s) for s in first.shape]
    assert len(lines[4].split()) == first.values.size
    assert len(lines) == 2 + 3 * len(names)


def test_corrupt_header(saved):
    _, path = saved
    path.write_text("GARBAGE\n" + path.read_text().split("\n", 1)[1])
    with pytest.raises(FormatError, match="not an M2oE checkpoint"):
        load_checkpoint(path)


def test_wrong_version_names_both(saved):
    _, path = saved
    path.write_text(path.read_text().replace("M2OE-CKPT v1", "M2OE-CKPT v7", 1))
    with pytest.raises(FormatError, match="v7.*v1"):
        load_checkpoint(path)


@pytest.mark.parametrize("keep", [0.3, 0.6, 0.999])
def test_truncated(saved, keep):
    _, path = saved
    text = path.read_text()
    path.write_text(text[: int(len(text) * keep)])
    with pytest.raises(FormatError):
        load_checkpoint(path)


def test_truncated_at_block_boundary(saved):
    _, path = saved
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:-3]) + "\n")
    with pytest.raises(FormatError, match="missing"):
        load_checkpoint(path)


def test_bad_config_line(saved):
    _, path = saved
    lines = path.read_text().splitlines()
    lines[1] = lines[1].replace("d=8", "dd=8")
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(FormatError, match="dd"):
        load_checkpoint(path)


def test_classification_roundtrip(tmp_path):
    model = M2oE(ModelConfig(task=CLASSIFICATION, **SMALL, use_cra=False, graph_encoder="sage"))
    save_checkpoint(model, tmp_path / "c.ckpt")
    ds = synth_dataset(10, 0, CLASSIFICATION)
    np.testing.assert_array_equal(load_checkpoint(tmp_path / "c.ckpt").predict(ds), model.predict(ds))
