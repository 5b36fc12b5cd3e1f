from __future__ import annotations

import json
import os
import sys
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, List

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from app.main import main as sfd  # noqa: E402

PRESET = os.getenv("SMOKE_PRESET", "toy")
SEED = os.getenv("SMOKE_SEED", "7")
STEPS = os.getenv("SMOKE_STEPS", "")  # empty: the preset's step budget
OUT = os.getenv("SMOKE_OUT", "")

# Pass-rate threshold for the rollout spread trend; reported, not enforced.
ROLLOUT_GROWTH_TARGET = 0.8


@dataclass
class Failure:
    stage: str
    detail: str


def _run(stage: str, argv: List[str], failures: List[Failure]) -> bool:
    print(f"$ sfd {' '.join(argv)}")
    code = sfd(argv)
    if code != 0:
        failures.append(Failure(stage=stage, detail=f"exit code {code}"))
        return False
    return True


def _read(path: Path) -> Any:
    return json.loads(path.read_text(encoding="utf-8"))


def _check(stage: str, ok: bool, detail: str, failures: List[Failure]) -> None:
    print(f"[{'ok' if ok else 'FAIL'}] {stage}: {detail}")
    if not ok:
        failures.append(Failure(stage=stage, detail=detail))


def main() -> int:
    failures: List[Failure] = []
    root = Path(OUT) if OUT else Path(tempfile.mkdtemp(prefix="sfd-smoke-"))
    common = ["--preset", PRESET, "--seed", SEED]
    steps = ["--steps", STEPS] if STEPS else []
    data, masks, ckpt = root / "dataset.sfd", root / "masks.sfd", root / "checkpoint.sfdc"
    ensembles, targets = root / "ensembles.sfd", root / "targets.sfd"

    stages: List[tuple[str, List[str]]] = [
        ("simulate", ["simulate", *common, "--out", str(root)]),
        ("masks", ["masks", *common, "--data", str(data), "--out", str(root)]),
        ("train", ["train", *common, *steps, "--data", str(data), "--masks", str(masks), "--out", str(root)]),
        ("sample", ["sample", "--checkpoint", str(ckpt), "--data", str(data), "--masks", str(masks), "--out", str(root)]),
        ("evaluate", ["evaluate", "--ensembles", str(ensembles), "--targets", str(targets), "--out", str(root / "eval")]),
        ("calibrate", ["calibrate", "--ensembles", str(ensembles), "--targets", str(targets), "--out", str(root / "cal")]),
        ("baseline", ["baseline", "--targets", str(targets), "--out", str(root / "baselines")]),
        ("rollout", ["rollout", "--checkpoint", str(ckpt), "--data", str(data), "--masks", str(masks), "--out", str(root / "rollout")]),
        ("replay", ["replay", str(data), "--out", str(root / "replay")]),
    ]
    for stage, argv in stages:
        if not _run(stage, argv, failures):
            break

    if not failures:
        crps = _read(root / "eval" / "crps.json")["crps"]
        base = _read(root / "baselines" / "baseline_untrained.json")["crps"]
        persistence = _read(root / "baselines" / "baseline_persistence.json")["crps"]
        cal = _read(root / "cal" / "calibration.json")
        rollout = _read(root / "rollout" / "rollout_summary.json")
        replay_same = (root / "dataset.sfd").read_bytes() == (root / "replay" / "dataset.sfd").read_bytes()
        checks: List[tuple[str, Callable[[], bool], str]] = [
            ("beats untrained", lambda: crps < base, f"CRPS {crps:.5f} vs {base:.5f}"),
            ("beats persistence", lambda: crps < persistence, f"CRPS {crps:.5f} vs {persistence:.5f}"),
            (
                "spread tracks error",
                lambda: (cal["per_instance"]["spearman"] or 0.0) > 0.3,
                f"per-instance spearman {cal['per_instance']['spearman']}",
            ),
            (
                "spread grows with sensor distance",
                lambda: (cal["distance"]["trend_spearman"] or 0.0) > 0.0,
                f"trend spearman {cal['distance']['trend_spearman']}",
            ),
            ("replay reproduces dataset", lambda: replay_same, "byte-identical container"),
        ]
        for stage, predicate, detail in checks:
            _check(stage, predicate(), detail, failures)
        growth = rollout["growth_rate"]
        print(f"[info] rollout spread grows in {growth:.0%} of instances (target {ROLLOUT_GROWTH_TARGET:.0%})")

    print(f"Output: {root}")
    print(f"Failures: {len(failures)}")
    if failures:
        print("\n--- FAILURES ---")
        for f in failures:
            print(f"[{f.stage}] {f.detail}")

    return 0 if not failures else 1


if __name__ == "__main__":
    raise SystemExit(main())
