"""Command-line surface: exit codes, error records, artifacts and replay."""
from __future__ import annotations

import json

import pytest

from app.core.exceptions import EXIT_DATA, EXIT_OK, EXIT_USAGE
from app.infrastructure.repositories.container_repository import ContainerRepository
from app.main import main

SIM = ["--grid", "16", "--n-traj", "2", "--frames", "4", "--seed", "3"]

TINY = [
    "--set", "net.base_dim=4",
    "--set", "net.dim_mults=[1, 2]",
    "--set", "net.res_blocks_per_stage=1",
    "--set", "net.norm_groups=2",
    "--set", "diffusion.T=20",
    "--set", "diffusion.ddim_steps=5",
    "--set", "optimizer.batch_size=2",
    "--set", "optimizer.checkpoint_every=2",
]


def error_record(capsys) -> dict:
    lines = capsys.readouterr().err.strip().splitlines()
    return json.loads(lines[-1])


@pytest.fixture
def dataset(tmp_path):
    out = tmp_path / "sim"
    assert main(["simulate", *SIM, "--out", str(out)]) == EXIT_OK
    return out / "dataset.sfd"


class TestErrors:
    def test_missing_command(self, capsys):
        assert main([]) == EXIT_USAGE
        record = error_record(capsys)
        assert record["status"] == "error"
        assert record["error_code"] == "usage_error"
        assert record["exit_code"] == EXIT_USAGE

    def test_unknown_flag(self, capsys, tmp_path):
        assert main(["simulate", "--bogus", "--out", str(tmp_path)]) == EXIT_USAGE
        assert error_record(capsys)["error_code"] == "usage_error"

    def test_malformed_override(self, capsys, tmp_path):
        assert main(["simulate", "--set", "novalue", "--out", str(tmp_path)]) == EXIT_USAGE

    def test_unknown_config_key(self, capsys, tmp_path):
        assert main(["simulate", "--set", "nope.key=1", "--out", str(tmp_path)]) == EXIT_DATA
        assert error_record(capsys)["error_code"] == "validation_error"

    def test_missing_input(self, capsys, tmp_path):
        code = main(["evaluate", "--ensembles", str(tmp_path / "e.sfd"), "--targets", str(tmp_path / "t.sfd"), "--out", str(tmp_path)])
        assert code == EXIT_DATA
        assert error_record(capsys)["error_code"] == "not_found"

    def test_corrupt_dataset(self, capsys, dataset, tmp_path):
        assert main(["masks", "--data", str(dataset), "--out", str(tmp_path / "m")]) == EXIT_OK
        data = bytearray(dataset.read_bytes())
        data[-1] ^= 0xFF
        dataset.write_bytes(bytes(data))
        capsys.readouterr()
        code = main(["train", *TINY, "--steps", "1", "--data", str(dataset), "--masks", str(tmp_path / "m" / "masks.sfd"), "--out", str(tmp_path / "t")])
        assert code == EXIT_DATA
        assert error_record(capsys)["error_code"] == "checksum_mismatch"

    def test_sweep_needs_masks_and_integer_counts(self, capsys, dataset, tmp_path):
        assert main(["sweep", "--kind", "data", "--data", str(dataset), "--out", str(tmp_path / "s")]) == EXIT_USAGE
        assert error_record(capsys)["error_code"] == "usage_error"
        assert main(["masks", "--data", str(dataset), "--out", str(tmp_path / "m")]) == EXIT_OK
        masks = str(tmp_path / "m" / "masks.sfd")
        code = main(["sweep", "--kind", "model", "--base-dims", "4,x", "--data", str(dataset), "--masks", masks, "--out", str(tmp_path / "s")])
        assert code == EXIT_USAGE


class TestSimulate:
    def test_deterministic_with_sidecar(self, dataset, tmp_path, capsys):
        again = tmp_path / "again"
        capsys.readouterr()
        assert main(["simulate", *SIM, "--out", str(again)]) == EXIT_OK
        summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert summary["command"] == "simulate"
        assert dataset.read_bytes() == (again / "dataset.sfd").read_bytes()

        sidecar = json.loads((dataset.parent / "dataset.sfd.json").read_text())
        assert sidecar["kind"] == "dataset"
        assert sidecar["seed"] == 3
        assert sidecar["argv"][0] == "simulate"
        assert sidecar["run_config"]["simulation"]["grid_n"] == 16
        assert sidecar["checksums"]["dataset.sfd"] == summary["checksum"]
        assert sidecar["provenance"]["optimizer.lr"]["source"] == "paper"

        header = ContainerRepository().header(dataset)
        assert (header.n_traj, header.n_frames, header.height) == (2, 4, 16)

    def test_replay_reproduces(self, dataset, tmp_path):
        out = tmp_path / "replay"
        assert main(["replay", str(dataset) + ".json", "--out", str(out)]) == EXIT_OK
        assert (out / "dataset.sfd").read_bytes() == dataset.read_bytes()

    def test_masks_follow_dataset(self, dataset, tmp_path):
        out = tmp_path / "m"
        assert main(["masks", "--data", str(dataset), "--seed", "1", "--out", str(out)]) == EXIT_OK
        masks = ContainerRepository().load(out / "masks.sfd")
        assert masks.m_i.shape == (2, 16, 16)
        assert int(masks.m_i[0].sum()) == 13  # 10% of 256, half for conditioning
        sidecar = json.loads((out / "masks.sfd.json").read_text())
        assert str(dataset) in sidecar["inputs"]


@pytest.mark.slow
def test_full_pipeline(dataset, tmp_path):
    root = dataset.parent
    masks, ckpt = root / "masks.sfd", root / "checkpoint.sfdc"
    ensembles, targets = root / "ensembles.sfd", root / "targets.sfd"
    stages = [
        ["masks", "--data", str(dataset), "--out", str(root)],
        ["train", *TINY, "--steps", "3", "--data", str(dataset), "--masks", str(masks), "--out", str(root)],
        ["sample", "--checkpoint", str(ckpt), "--data", str(dataset), "--masks", str(masks), "--k", "2", "--n-instances", "2", "--out", str(root)],
        ["evaluate", "--ensembles", str(ensembles), "--targets", str(targets), "--maps", "1", "--out", str(tmp_path / "eval")],
        ["calibrate", "--ensembles", str(ensembles), "--targets", str(targets), "--bins", "3", "--out", str(tmp_path / "cal")],
        ["baseline", "--targets", str(targets), "--out", str(tmp_path / "base")],
        ["rollout", "--checkpoint", str(ckpt), "--data", str(dataset), "--masks", str(masks), "--k", "2", "--horizon", "2", "--n-instances", "2", "--out", str(tmp_path / "roll")],
    ]
    for argv in stages:
        assert main(argv) == EXIT_OK, argv[0]
    crps = json.loads((tmp_path / "eval" / "crps.json").read_text())
    assert crps["k"] == 2
    assert (tmp_path / "cal" / "calibration.json").is_file()
    assert (tmp_path / "base" / "baseline_untrained.json").is_file()
    assert (tmp_path / "roll" / "rollout_summary.json").is_file()

    # resuming past the last step adds steps on top of the saved optimizer state
    assert main(["train", "--steps", "4", "--data", str(dataset), "--masks", str(masks), "--out", str(root)]) == EXIT_OK
    sidecar = json.loads((root / "checkpoint.sfdc.json").read_text())
    assert sidecar["diagnostics"]["step"] == 4
