import json

import pytest

from crossmodal.config import (
    RunConfig,
    config_hash,
    default_config_json,
    load_config,
    parse_config,
)
from crossmodal.errors import ParameterError


class TestParsing:
    def test_defaults_parse(self):
        cfg = parse_config("{}")
        assert cfg.seed == 0
        assert cfg.synth.mode == "easy"
        assert cfg.train.epochs == 50

    def test_unknown_top_level_key_rejected(self):
        with pytest.raises(ParameterError, match="extra_thing"):
            parse_config('{"extra_thing": 1}')

    def test_unknown_section_key_rejected(self):
        with pytest.raises(ParameterError, match="nope"):
            parse_config('{"train": {"nope": 1}}')

    def test_invalid_json_rejected(self):
        with pytest.raises(ParameterError, match="JSON"):
            parse_config("{not json")

    def test_field_name_in_validation_error(self):
        with pytest.raises(ParameterError, match="batch_size"):
            parse_config('{"train": {"batch_size": 1}}')

    def test_load_from_file(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text('{"seed": 5, "synth": {"n_real": 10}}')
        cfg = load_config(path)
        assert cfg.seed == 5 and cfg.synth.n_real == 10

    def test_default_config_json_parses_back(self):
        cfg = parse_config(default_config_json())
        assert cfg == RunConfig()


class TestSeedDerivation:
    def test_sections_derive_from_top_seed(self):
        a = parse_config('{"seed": 1}')
        b = parse_config('{"seed": 2}')
        assert a.synth_config().seed != b.synth_config().seed
        assert a.train_config().seed != b.train_config().seed
        assert a.synth_config().seed != a.train_config().seed

    def test_explicit_section_seed_wins(self):
        cfg = parse_config('{"seed": 1, "synth": {"seed": 77}}')
        assert cfg.synth_config().seed == 77

    def test_with_seed_rederives(self):
        cfg = parse_config('{"seed": 1, "synth": {"seed": 77}}')
        overridden = cfg.with_seed(9)
        assert overridden.seed == 9
        assert overridden.synth_config().seed != 77


class TestHash:
    def test_stable_for_equal_configs(self):
        assert config_hash(parse_config('{"seed": 3}')) == config_hash(parse_config('{"seed": 3}'))

    def test_sensitive_to_any_field(self):
        base = config_hash(parse_config("{}"))
        assert config_hash(parse_config('{"seed": 1}')) != base
        assert config_hash(parse_config('{"train": {"epochs": 49}}')) != base

    def test_is_crc64_hex(self):
        h = config_hash(RunConfig())
        assert len(h) == 16
        int(h, 16)

    def test_canonicalization_ignores_key_order(self):
        a = parse_config(json.dumps({"seed": 4, "train": {"epochs": 3, "lam": 0.25}}))
        b = parse_config(json.dumps({"train": {"lam": 0.25, "epochs": 3}, "seed": 4}))
        assert config_hash(a) == config_hash(b)
