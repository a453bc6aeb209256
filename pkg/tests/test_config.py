import json

import pytest

from turnwise.config import (
    DEFAULT_BASE_URL,
    ConfigError,
    ServiceConfig,
    load_config,
)


def write_config(tmp_path, data):
    path = tmp_path / "config.json"
    path.write_text(json.dumps(data))
    return str(path)


class TestDefaults:
    def test_all_defaults_without_file_or_env(self):
        cfg = load_config(env={})
        assert cfg.backend.base_url == DEFAULT_BASE_URL
        assert cfg.session.max_turns == 8
        assert cfg.capacity == 32
        assert cfg.replay_ttl_s == 3600.0

    def test_result_is_service_config(self):
        assert isinstance(load_config(env={}), ServiceConfig)


class TestFileLayer:
    def test_file_overrides_defaults(self, tmp_path):
        path = write_config(
            tmp_path,
            {
                "backend": {"base_url": "http://b:1", "model": "m"},
                "session": {"max_turns": 3},
                "service": {"capacity": 5},
            },
        )
        cfg = load_config(path, env={})
        assert cfg.backend.base_url == "http://b:1"
        assert cfg.session.max_turns == 3
        assert cfg.capacity == 5

    def test_unknown_section_rejected(self, tmp_path):
        path = write_config(tmp_path, {"bakend": {}})
        with pytest.raises(ConfigError, match="unknown config sections"):
            load_config(path, env={})

    def test_unknown_key_rejected(self, tmp_path):
        path = write_config(tmp_path, {"session": {"max_turn": 3}})
        with pytest.raises(ConfigError, match="unknown session config keys"):
            load_config(path, env={})

    def test_invalid_json_rejected(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{nope")
        with pytest.raises(ConfigError, match="not valid JSON"):
            load_config(str(path), env={})

    def test_missing_file_rejected(self, tmp_path):
        with pytest.raises(ConfigError, match="cannot read"):
            load_config(str(tmp_path / "absent.json"), env={})

    def test_non_object_section_rejected(self, tmp_path):
        path = write_config(tmp_path, {"session": [1, 2]})
        with pytest.raises(ConfigError, match="must be an object"):
            load_config(path, env={})


class TestEnvLayer:
    def test_env_overrides_file(self, tmp_path):
        path = write_config(tmp_path, {"session": {"max_turns": 3}})
        cfg = load_config(path, env={"TURNWISE_MAX_TURNS": "7"})
        assert cfg.session.max_turns == 7

    def test_env_overrides_defaults(self):
        cfg = load_config(env={"TURNWISE_BASE_URL": "http://env:9", "TURNWISE_PORT": "9001"})
        assert cfg.backend.base_url == "http://env:9"
        assert cfg.port == 9001

    def test_env_type_coercion(self):
        cfg = load_config(
            env={"TURNWISE_TEMPERATURE": "0.1", "TURNWISE_CAPACITY": "2"}
        )
        assert cfg.session.temperature == 0.1
        assert cfg.capacity == 2

    def test_unparsable_env_value_rejected(self):
        with pytest.raises(ConfigError, match="TURNWISE_MAX_TURNS"):
            load_config(env={"TURNWISE_MAX_TURNS": "many"})

    def test_unrelated_env_vars_ignored(self):
        cfg = load_config(env={"PATH": "/bin", "TURNWISE_UNKNOWN_THING": "x"})
        assert cfg.session.max_turns == 8


class TestValidationPropagates:
    def test_bad_session_value_becomes_config_error(self, tmp_path):
        path = write_config(tmp_path, {"session": {"max_turns": 0}})
        with pytest.raises(ConfigError):
            load_config(path, env={})

    def test_bad_backend_mode_becomes_config_error(self):
        with pytest.raises(ConfigError):
            load_config(env={"TURNWISE_MODE": "telepathy"})

    def test_capacity_floor(self, tmp_path):
        path = write_config(tmp_path, {"service": {"capacity": 0}})
        with pytest.raises(ConfigError):
            load_config(path, env={})

    def test_port_range(self):
        with pytest.raises(ConfigError):
            load_config(env={"TURNWISE_PORT": "70000"})
