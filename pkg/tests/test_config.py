import pytest
from hypothesis import given
from hypothesis import strategies as st

from movid.config import TrainConfig, dumps_config, load_config, loads_config, save_config
from movid.errors import ConfigParseError


def test_round_trip_through_text_and_file(tmp_path):
    cfg = TrainConfig.desk(seed=9).with_model(hidden=48, dropout=0.25)
    assert loads_config(dumps_config(cfg)) == cfg
    save_config(cfg, tmp_path / "c.cfg")
    assert load_config(tmp_path / "c.cfg") == cfg
    assert cfg.digest() == load_config(tmp_path / "c.cfg").digest()
    assert cfg.digest() != TrainConfig().digest()


@given(lr=st.floats(1e-8, 1.0), batch=st.integers(1, 512), alpha=st.floats(0, 10), hidden=st.integers(1, 256))
def test_round_trip_preserves_values(lr, batch, alpha, hidden):
    cfg = TrainConfig(lr=lr, batch_size=batch, alpha=alpha).with_model(hidden=hidden)
    assert loads_config(dumps_config(cfg)) == cfg


def test_partial_file_overrides_defaults():
    cfg = loads_config("[train]\nlr = 0.5  # comment\n\n[model]\nwindow = 8\n")
    assert cfg.lr == 0.5 and cfg.model.window == 8 and cfg.epochs == 40


@pytest.mark.parametrize("text, key, line", [
    ("[train]\nlr = fast\n", "lr", 2),
    ("[train]\nlr = 1\nbogus = 2\n", "bogus", 3),
    ("[train]\nlr = 1\nlr = 2\n", "lr", 3),
    ("lr = 1\n", "lr", 1),
    ("[optim]\n", None, 1),
    ("[train]\njust words\n", None, 2),
    ("[model]\nhidden = 3.5\n", "hidden", 2),
])
def test_errors_name_key_and_line(text, key, line):
    with pytest.raises(ConfigParseError) as info:
        loads_config(text)
    assert info.value.key == key and info.value.line == line


def test_invalid_values_are_parse_errors():
    with pytest.raises(ConfigParseError):
        loads_config("[train]\nbatch_size = 0\n")
