import dataclasses

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ffsv.config import ConfigError, PipelineConfig, format_config, load_config, parse_config
from ffsv.nn.model import BlockSpec


def test_defaults_round_trip():
    cfg = PipelineConfig()
    assert parse_config(format_config(cfg)) == cfg


def test_comments_blank_lines_and_overrides():
    text = """
    # stage toggles
    stages.wpe = on
    stages.beamformer = true   # trailing comment
    seed = 11

    selection.theta = 0.65
    devset.t60 = 0.3, 0.5
    net.blocks = 8:4:1:1, 16:4:2:0
    """
    cfg = parse_config(text)
    assert cfg.stages.wpe and cfg.stages.beamformer and not cfg.stages.dat
    assert cfg.seed == 11
    assert cfg.selection.theta == 0.65
    assert cfg.devset.t60 == (0.3, 0.5)
    assert cfg.net.blocks == (BlockSpec(8, 4, 1, True), BlockSpec(16, 4, 2, False))


@pytest.mark.parametrize("text", [
    "stages.wpee = on",
    "stage.wpe = on",
    "stages = on",
    "seeds = 3",
    "no equals sign here",
])
def test_unknown_or_malformed_keys(text):
    with pytest.raises(ConfigError):
        parse_config(text)


@pytest.mark.parametrize("text", [
    "stages.wpe = maybe",
    "seed = 1.5",
    "wpe.taps = ten",
    "devset.t60 = 0.4",
    "net.blocks = 8:4:1",
    "wpe.taps = 0",
    "devset.train_speakers = 1",
    "dcf.p_target = 1.5",
    "room.length = 5, 2",
])
def test_invalid_values(text):
    with pytest.raises(ConfigError):
        parse_config(text)


def test_load_config_missing_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.cfg")
    path = tmp_path / "ok.cfg"
    path.write_text("stages.dat = yes\n", encoding="utf-8")
    assert load_config(path).stages.dat


def test_with_helpers_leave_original_untouched():
    cfg = PipelineConfig()
    on = cfg.with_stages(wpe=True, selection=True).with_seed(4)
    assert on.stages.wpe and on.stages.selection and on.seed == 4
    assert cfg.stages == type(cfg.stages)() and cfg.seed == 0


@settings(max_examples=60, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), toggles=st.lists(st.booleans(), min_size=4, max_size=4),
       theta=st.floats(-1.0, 1.5, allow_nan=False), taps=st.integers(1, 20),
       snr=st.tuples(st.floats(-5, 5), st.floats(5, 30)))
def test_round_trip_property(seed, toggles, theta, taps, snr):
    cfg = PipelineConfig().with_seed(seed).with_stages(**dict(zip(("wpe", "beamformer", "selection", "dat"), toggles)))
    cfg = dataclasses.replace(cfg, selection=dataclasses.replace(cfg.selection, theta=theta),
                              wpe=dataclasses.replace(cfg.wpe, taps=taps),
                              devset=dataclasses.replace(cfg.devset, snr_db=snr))
    assert parse_config(format_config(cfg)) == cfg
