from __future__ import annotations

import json

import pytest
from pydantic import ValidationError

from app.core.config import PRESETS, RunConfig, Settings, config_provenance, load_run_config
from app.core.exceptions import NotFoundException, ValidationException
from app.core.seeding import derive_seed, spawn_rng
from app.domain.models.base import CHOSEN, PAPER
from app.domain.models.masks import ScenarioSpec


class TestRunConfig:
    def test_defaults(self):
        config = RunConfig()
        assert config.simulation.grid_n == 64
        assert config.diffusion.T == 1000
        assert config.loss.lam == 0.05
        assert config.eval.k == 100

    def test_unknown_keys_rejected(self):
        with pytest.raises(ValidationError):
            RunConfig(foo=1)
        with pytest.raises(ValidationError):
            RunConfig.model_validate({"optimizer": {"learning_rate": 1e-3}})

    def test_overrides(self):
        config = RunConfig().with_overrides({"optimizer.steps": 10, "loss.lam": 0.1, "eval.k": None})
        assert config.optimizer.steps == 10
        assert config.loss.lam == 0.1
        assert config.eval.k == 100

    def test_bad_override_paths(self):
        with pytest.raises(ValidationException):
            RunConfig().with_overrides({"x.y": 1})
        with pytest.raises(ValidationException):
            RunConfig().with_overrides({"optimizer": 1})
        with pytest.raises(ValidationError):
            RunConfig().with_overrides({"optimizer.nope": 1})

    def test_frozen(self):
        with pytest.raises(ValidationError):
            RunConfig().loss.lam = 0.2

    def test_odd_block_count_refused(self):
        with pytest.raises(ValidationError):
            ScenarioSpec(pattern="block", n_blocks=3)

    def test_grid_must_be_power_of_two(self):
        with pytest.raises(ValidationError):
            RunConfig().with_overrides({"simulation.grid_n": 48})


class TestProvenance:
    def test_every_field_is_tagged(self):
        provenance = config_provenance()
        assert "optimizer.lr" in provenance
        assert {entry["source"] for entry in provenance.values()} == {PAPER, CHOSEN}

    def test_chosen_fields_carry_a_rationale(self):
        for path, entry in config_provenance().items():
            if entry["source"] == CHOSEN:
                assert entry["rationale"], path


class TestLoading:
    def test_presets(self):
        assert load_run_config("paper-ns") == RunConfig()
        toy = load_run_config("toy")
        assert toy.simulation.grid_n == 16
        assert toy.eval.k == 20
        assert set(PRESETS) == {"toy", "paper-ns"}

    def test_unknown_preset(self):
        with pytest.raises(ValidationException):
            load_run_config("huge")

    def test_precedence(self, tmp_path):
        path = tmp_path / "run.json"
        path.write_text(json.dumps({"simulation": {"n_traj": 5}, "eval": {"k": 7}}))
        config = load_run_config("toy", path, {"eval.k": 9})
        assert config.simulation.grid_n == 16  # preset
        assert config.simulation.n_traj == 5  # file beats preset
        assert config.eval.k == 9  # override beats file

    def test_config_file_errors(self, tmp_path):
        with pytest.raises(NotFoundException):
            load_run_config(config_path=tmp_path / "absent.json")
        (tmp_path / "bad.json").write_text("not json")
        with pytest.raises(ValidationException):
            load_run_config(config_path=tmp_path / "bad.json")
        (tmp_path / "list.json").write_text("[]")
        with pytest.raises(ValidationException):
            load_run_config(config_path=tmp_path / "list.json")


def test_settings_from_environment(monkeypatch):
    monkeypatch.setenv("SFD_WORKERS", "4")
    monkeypatch.setenv("SFD_LOG_LEVEL", "DEBUG")
    s = Settings(_env_file=None)
    assert s.WORKERS == 4
    assert s.LOG_LEVEL == "DEBUG"


class TestSeeding:
    def test_derive_seed_is_deterministic(self):
        assert derive_seed(3, 1, 2) == derive_seed(3, 1, 2)
        assert derive_seed(3, 1, 2) != derive_seed(3, 2, 1)
        assert 0 <= derive_seed(3) < 2**63

    def test_streams(self):
        a = spawn_rng(5, 0).random(4)
        assert (a == spawn_rng(5, 0).random(4)).all()
        assert not (a == spawn_rng(5, 1).random(4)).all()
