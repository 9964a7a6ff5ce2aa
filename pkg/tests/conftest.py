from __future__ import annotations

import pytest

from regionablate import cli, synthetic

STUDY = dict(n_uids=10, n_clips=24, frames_per_clip=2, seed=11)
QUOTAS = "5,3,2"
TRAIN_FLAGS = ["--epochs", "20", "--validate-every", "5", "--lr", "0.01", "--seed", "3"]


def run(*argv) -> int:
    return cli.main([str(a) for a in argv])


@pytest.fixture(scope="session")
def study():
    return synthetic.make_study(**STUDY)


@pytest.fixture(scope="session")
def study_dir(study, tmp_path_factory):
    """A small synthetic study on disk, split and preprocessed through the command line."""
    root = tmp_path_factory.mktemp("study")
    paths = synthetic.write_study(study, root)
    assert run("split", "--manifest", paths["manifest"], "--quotas", QUOTAS, "--out", root / "splits") == 0
    assert run("preprocess", "--splits", root / "splits", "--landmarks", paths["landmarks"],
               "--frames", paths["frames"], "--out", root / "images") == 0
    return root


@pytest.fixture(scope="session")
def cli_run(study_dir):
    """Train, predict and evaluate every condition through the command line."""
    root = study_dir
    common = ["--splits", root / "splits", "--images", root / "images"]
    for cond in ("face", "background", "entire_frame", "face_bg"):
        assert run("train", "--condition", cond, *common, "--labels", root / "labels.csv",
                   "--out", root / "models", *TRAIN_FLAGS) == 0
    for cond in ("face", "background", "entire_frame", "face_bg"):
        assert run("predict", "--condition", cond, *common, "--checkpoint",
                   root / "models" / f"{cond}.ckpt.json", "--out", root / "preds") == 0
    assert run("evaluate", "--predictions", root / "preds", "--labels", root / "labels.csv",
               *common, "--out", root / "report.json") == 0
    return root


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
