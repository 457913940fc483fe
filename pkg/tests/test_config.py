import pytest

from wardsense.config import PipelineConfig, dump_config, load_config
from wardsense.errors import ConfigError


def test_defaults():
    cfg = load_config(environ={})
    assert cfg == PipelineConfig()
    assert cfg.anchor_hour == 7 and cfg.au_threshold == 1.0 and cfg.alpha == 0.05
    assert cfg.spl_mode == "energy" and cfg.minkowski_p == 2.0 and cfg.knn_k == 1 and cfg.impute_k == 3
    assert cfg.alias_map() == {}


def test_precedence_file_env_override(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text("[thresholds]\nalpha = 0.01\nau_threshold = 2\n[run]\nseed = 4\n")
    env = {"WARDSENSE_ALPHA": "0.02", "WARDSENSE_STRICT": "yes"}
    cfg = load_config(path, {"seed": 9}, environ=env)
    assert cfg.alpha == 0.02
    assert cfg.au_threshold == 2.0
    assert cfg.strict is True
    assert cfg.seed == 9


def test_paths_relative_to_file(tmp_path):
    sub = tmp_path / "cfg"
    sub.mkdir()
    path = sub / "c.ini"
    path.write_text("[inputs]\ndata_dir = ../data\nrules_path = /abs/rules.txt\n")
    cfg = load_config(path, environ={})
    assert cfg.data_dir == str((tmp_path / "data").resolve())
    assert cfg.rules_path == "/abs/rules.txt"


def test_all_problems_reported_together(tmp_path):
    path = tmp_path / "c.ini"
    path.write_text("[x]\nalpha = 2\nbogus = 1\nknn_k = zero\nspl_mode = loud\n")
    with pytest.raises(ConfigError) as exc:
        load_config(path, environ={"WARDSENSE_ANCHOR_HOUR": "25"})
    problems = exc.value.problems
    text = "\n".join(problems)
    for needle in ("alpha", "bogus", "knn_k", "spl_mode", "anchor_hour"):
        assert needle in text
    assert len(problems) >= 5


def test_missing_and_malformed_file(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "nope.ini", environ={})
    bad = tmp_path / "bad.ini"
    bad.write_text("no section header\n")
    with pytest.raises(ConfigError):
        load_config(bad, environ={})


def test_unknown_override_rejected():
    with pytest.raises(ConfigError):
        load_config(overrides={"colour": "red"}, environ={})


def test_dump_round_trip(tmp_path):
    cfg = load_config(overrides={"alpha": 0.01, "strict": True, "au_aliases": "AU43:AU45",
                                 "groups": "a,b", "out_dir": str(tmp_path / "out")}, environ={})
    path = tmp_path / "c.ini"
    path.write_text(dump_config(cfg))
    assert load_config(path, environ={}) == cfg
    assert cfg.alias_map() == {"AU43": "AU45"}
    assert cfg.group_pair() == ("a", "b")


def test_digest_ignores_out_dir_and_jobs():
    a = PipelineConfig()
    assert a.digest() == PipelineConfig(out_dir="elsewhere", jobs=3).digest()
    assert a.digest() != PipelineConfig(seed=1).digest()


def test_validation_of_cross_field_values():
    with pytest.raises(ConfigError):
        PipelineConfig(au_aliases="AU43").validate()
    with pytest.raises(ConfigError):
        PipelineConfig(groups="a,b,c").validate()
    with pytest.raises(ConfigError):
        PipelineConfig(nms_threshold="huge").validate()
    PipelineConfig(nms_threshold="onet").validate()
    PipelineConfig(nms_threshold="0.3").validate()


def test_workers():
    assert PipelineConfig(jobs=2).workers() == 2
    assert PipelineConfig().workers() >= 1
