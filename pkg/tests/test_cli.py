import os

import numpy as np
import pytest

from molex import cli, forge


@pytest.fixture(scope="module")
def cli_workspace(tmp_path_factory, tiny_corpus):
    corpora, paths = tiny_corpus
    root = os.path.dirname(paths["train"])
    work = tmp_path_factory.mktemp("cli")
    run_dir = str(work / "run")
    rc = cli.main(["train", "--corpus", root, "--out", run_dir,
                   "--set", "preset=toy-16", "--set", "adapted_last=1",
                   "--set", "separate_ranks=2,3,4", "--set", "shared_rank=2",
                   "--set", "steps=3", "--set", "batch_size=8",
                   "--set", "augment_p=0"])
    assert rc == 0
    return root, run_dir, str(work)


def test_params_command(capsys):
    assert cli.main(["params", "--preset", "b32"]) == 0
    out = capsys.readouterr().out
    assert "last3" in out and "0.198%" in out


def test_forge_command(tmp_path, capsys):
    root = str(tmp_path / "corpus")
    rc = cli.main(["forge", "--out", root, "--image-size", "16",
                   "--train-size", "8", "--val-size", "4", "--test-size", "4",
                   "--train-generators", "grid4", "--test-generators", "checker2",
                   "--seed", "2"])
    assert rc == 0
    assert os.path.exists(os.path.join(root, "train", "manifest.tsv"))
    corpus = forge.load_split(os.path.join(root, "train"))
    assert len(corpus) == 8


def test_train_writes_checkpoint_and_log(cli_workspace):
    root, run_dir, _ = cli_workspace
    assert os.path.exists(os.path.join(run_dir, "weights.arc"))
    assert os.path.exists(os.path.join(run_dir, "optim.arc"))
    assert os.path.exists(os.path.join(run_dir, "config.cfg"))
    log = open(os.path.join(run_dir, "train_log.csv")).read().splitlines()
    assert log[0].startswith("step,")
    assert "f_block1_e0" in log[0]       # per-expert dispatch fractions logged
    assert len(log) == 4                 # header + 3 steps


def test_eval_command(cli_workspace, capsys):
    root, run_dir, work = cli_workspace
    out_file = os.path.join(work, "report.tsv")
    rc = cli.main(["eval", "--checkpoint", run_dir, "--corpus", root,
                   "--split", "test", "--out", out_file])
    assert rc == 0
    text = open(out_file).read()
    assert "checker2" in text and "mean" in text


def test_eval_sweep_emits_eleven_rows(cli_workspace, capsys):
    root, run_dir, _ = cli_workspace
    rc = cli.main(["eval", "--checkpoint", run_dir, "--corpus", root, "--sweep"])
    assert rc == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 12  # header + 11 perturbations


def test_spectra_command(cli_workspace, capsys):
    root, run_dir, work = cli_workspace
    out_dir = os.path.join(work, "maps")
    rc = cli.main(["spectra", "--manifest", os.path.join(root, "test", "manifest.tsv"),
                   "--group-by", "generator_id", "--out", out_dir])
    assert rc == 0
    written = sorted(os.listdir(out_dir))
    assert "real.pgm" in written and "real.csv" in written
    assert any(name.startswith("checker2") for name in written)


def test_export_features_command(cli_workspace):
    root, run_dir, work = cli_workspace
    out_csv = os.path.join(work, "features.csv")
    rc = cli.main(["export-features", "--checkpoint", run_dir, "--corpus", root,
                   "--split", "val", "--blocks", "1", "--out", out_csv])
    assert rc == 0
    header = open(out_csv).readline()
    assert header.startswith("path,label,block,expert,f0")


def test_ablate_dry_run(capsys):
    rc = cli.main(["ablate", "--axis", "blocks", "--dry-run", "--set", "preset=b32"])
    assert rc == 0
    out = capsys.readouterr().out
    assert out.splitlines()[0] == "variant\ttrainable\tpercentage"
    assert len(out.strip().splitlines()) == 8


def test_config_file_plus_overrides(cli_workspace, tmp_path, capsys):
    root, _, _ = cli_workspace
    cfg = tmp_path / "run.cfg"
    cfg.write_text("preset=toy-16\nadapted_last=1\nseparate_ranks=2,3,4\n"
                   "shared_rank=2\nsteps=1\nbatch_size=8\naugment_p=0\n"
                   f"corpus={root}\n")
    out_dir = str(tmp_path / "run2")
    rc = cli.main(["train", "--config", str(cfg), "--set", "steps=2",
                   "--out", out_dir])
    assert rc == 0
    saved = open(os.path.join(out_dir, "config.cfg")).read()
    assert "steps=2" in saved
