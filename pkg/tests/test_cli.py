import json

import numpy as np
import pytest

from resaware import cli


def run(argv):
    return cli.main(argv)


def test_params_prints_table(capsys):
    assert run(["params", "--num-datasets", "3"]) == 0
    out = capsys.readouterr().out
    assert "159,875" in out
    assert "encoder_conv1" in out and "320" in out


def test_flops_prints_total(capsys):
    assert run(["flops"]) == 0
    out = capsys.readouterr().out
    assert "total" in out and "MFLOP" in out


def test_usage_errors_exit_1():
    with pytest.raises(SystemExit) as exc:
        run(["definitely-not-a-command"])
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        run(["train", "--manifest", "m.csv"])  # --out missing
    assert exc.value.code == 1
    with pytest.raises(SystemExit) as exc:
        run(["eval", "--checkpoint", "c", "--manifest", "m", "--split",
             "validation", "--out", "o"])
    assert exc.value.code == 1


def test_data_errors_exit_2(tmp_path, capsys):
    missing = tmp_path / "nope.csv"
    assert run(["train", "--manifest", str(missing), "--out",
                str(tmp_path / "run")]) == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("wrong,header\n1,2\n")
    assert run(["train", "--manifest", str(bad), "--out",
                str(tmp_path / "run")]) == 2
    capsys.readouterr()


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    """Tiny short-clip corpus shared by the pipeline tests."""
    root = tmp_path_factory.mktemp("clicorpus")
    code = run(["synth", "--n", "9", "--seed", "0", "--speakers", "3",
                "--duration", "0.5", "--rerecord", "--out", str(root)])
    assert code == 0
    return root


def test_synth_outputs(corpus):
    assert (corpus / "manifest.csv").exists()
    assert (corpus / "manifest_rerecorded.csv").exists()
    assert (corpus / "config.json").exists()
    assert len(list((corpus / "wavs").glob("*.wav"))) == 18
    assert len(list((corpus / "rerec").glob("*.wav"))) == 18


def test_train_eval_gradcam_pipeline(tmp_path, corpus, capsys):
    run_dir = tmp_path / "run"
    code = run(["train", "--manifest", str(corpus / "manifest.csv"),
                "--out", str(run_dir), "--epochs", "1", "--duration", "0.5",
                "--seed", "0"])
    assert code == 0
    assert (run_dir / "checkpoint.bin").exists()
    history = (run_dir / "history.csv").read_text().splitlines()
    assert history[0] == "epoch,loss_total,loss_cls,loss_cons,val_eer"
    assert len(history) == 2
    snapshot = json.loads((run_dir / "config.json").read_text())
    assert snapshot["command"] == "train"
    assert snapshot["options"]["seed"] == 0

    eval_dir = tmp_path / "eval"
    code = run(["eval", "--checkpoint", str(run_dir / "checkpoint.bin"),
                "--manifest", str(corpus / "manifest.csv"), "--split", "test",
                "--duration", "0.5", "--out", str(eval_dir)])
    assert code == 0
    report = json.loads((eval_dir / "metrics.json").read_text())
    assert {"accuracy", "auc", "eer", "confusion"} <= set(report)
    scores = (eval_dir / "scores.csv").read_text().splitlines()
    assert scores[0] == "path,score,label"
    assert len(scores) == 7  # 3 bona + 3 spoof on the held-out speaker
    assert (eval_dir / "det.csv").exists() and (eval_dir / "roc.csv").exists()

    wav = next((corpus / "wavs").glob("spoof_*.wav"))
    cam_dir = tmp_path / "cam"
    code = run(["gradcam", "--checkpoint", str(run_dir / "checkpoint.bin"),
                "--wav", str(wav), "--resolution", "1", "--duration", "0.5",
                "--out", str(cam_dir)])
    assert code == 0
    pgm = (cam_dir / "gradcam_res1.pgm").read_bytes()
    assert pgm.startswith(b"P5\n")
    heat = np.loadtxt(cam_dir / "gradcam_res1.csv", delimiter=",")
    assert heat.min() >= 0.0 and heat.max() <= 1.0
    # PGM pixels are the CSV values after 8-bit quantization
    header_end = pgm.index(b"255\n") + 4
    pixels = np.frombuffer(pgm[header_end:], dtype=np.uint8).reshape(heat.shape)
    assert np.abs(heat * 255.0 - pixels).max() <= 0.5
    capsys.readouterr()


def test_train_determinism_across_runs(tmp_path, corpus, capsys):
    outs = []
    for name in ("r1", "r2"):
        code = run(["train", "--manifest", str(corpus / "manifest.csv"),
                    "--out", str(tmp_path / name), "--epochs", "1",
                    "--duration", "0.5", "--seed", "3"])
        assert code == 0
        outs.append(tmp_path / name)
    assert (outs[0] / "history.csv").read_bytes() == (outs[1] / "history.csv").read_bytes()
    assert (outs[0] / "checkpoint.bin").read_bytes() == \
        (outs[1] / "checkpoint.bin").read_bytes()
    capsys.readouterr()


def test_eval_rejects_corrupt_checkpoint(tmp_path, corpus, capsys):
    bad = tmp_path / "bad.bin"
    bad.write_bytes(b"nonsense")
    code = run(["eval", "--checkpoint", str(bad),
                "--manifest", str(corpus / "manifest.csv"),
                "--out", str(tmp_path / "out")])
    assert code == 2
    capsys.readouterr()
