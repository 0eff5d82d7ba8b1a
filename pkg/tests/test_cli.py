import csv
import wave

import numpy as np
import pytest

from stkws.audio import write_wav
from stkws.cli import main
from stkws.data import KEYWORDS
from stkws.synthetic import synth_word, write_fixture


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    # 20 word files: two per keyword
    return write_fixture(tmp_path_factory.mktemp("fixture"), per_word=2, words=list(KEYWORDS), seed=11)


@pytest.fixture(scope="module")
def untrained(dataset, tmp_path_factory):
    out = tmp_path_factory.mktemp("untrained")
    assert main(["train", "--dataset-root", str(dataset), "--epochs", "0", "--seed", "7",
                 "--output-dir", str(out)]) == 0
    return out


def test_footprint_prints_table_and_writes_csv(tmp_path, capsys):
    assert main(["footprint", "ST-AttNet4", "--output-dir", str(tmp_path)]) == 0
    text = capsys.readouterr().out
    assert "1,920" in text and "188,160" in text
    rows = list(csv.reader((tmp_path / "footprint_ST-AttNet4.csv").open()))
    conv = next(r for r in rows if r[0] == "conv")
    assert conv[4:6] == ["1920", "188160"]


def test_footprint_attnet7_groups_blocks(tmp_path, capsys):
    assert main(["footprint", "ST-AttNet7", "--output-dir", str(tmp_path)]) == 0
    text = capsys.readouterr().out
    assert "res x4" in text and "res x3" in text


def test_footprint_bad_variant_exit_2(capsys):
    with pytest.raises(SystemExit) as err:
        main(["footprint", "bogus"])
    assert err.value.code == 2
    assert "ST-AttNet4" in capsys.readouterr().err


def test_train_one_epoch_smoke_and_determinism(dataset, tmp_path):
    runs = []
    for name in ("a", "b"):
        out = tmp_path / name
        argv = ["train", "--dataset-root", str(dataset), "--variant", "ST-AttNet4", "--epochs", "1",
                "--seed", "7", "--output-dir", str(out)]
        assert main(argv) == 0
        assert (out / "model.ckpt").is_file() and (out / "run_manifest_train.json").is_file()
        runs.append((out / "history.csv").read_bytes())
    assert len(runs[0].decode().splitlines()) == 2
    assert runs[0] == runs[1]


def test_train_zero_epochs_writes_initial_checkpoint(untrained):
    assert (untrained / "model.ckpt").is_file()
    assert (untrained / "history.csv").read_text().splitlines() == [
        "epoch,train_loss,train_accuracy,dev_loss,dev_accuracy,lr"]


def test_train_invalid_dataset_exit_2(tmp_path, capsys):
    assert main(["train", "--dataset-root", str(tmp_path), "--epochs", "0", "--output-dir",
                 str(tmp_path / "o")]) == 2
    assert "validation_list.txt" in capsys.readouterr().err


def test_eval_untrained_is_near_chance_and_deterministic(dataset, untrained, tmp_path, capsys):
    reports = []
    for name in ("e1", "e2"):
        out = tmp_path / name
        assert main(["eval", str(untrained / "model.ckpt"), "--dataset-root", str(dataset),
                     "--output-dir", str(out)]) == 0
        summary = dict(csv.reader((out / "test_summary.csv").open()))
        assert 0.0 <= float(summary["accuracy"]) <= 0.35
        reports.append({p.name: p.read_bytes() for p in out.iterdir() if p.suffix in (".csv", ".svg")})
    assert reports[0] == reports[1]
    assert "test_confusion.csv" in reports[0]


def test_eval_missing_checkpoint_exit_2(dataset, tmp_path):
    assert main(["eval", str(tmp_path / "nope.ckpt"), "--dataset-root", str(dataset),
                 "--output-dir", str(tmp_path)]) == 2


def test_infer_prints_distribution_and_attention(untrained, tmp_path, capsys):
    wav = tmp_path / "yes_probe.wav"
    write_wav(wav, synth_word("yes", np.random.default_rng(0)))
    assert main(["infer", str(untrained / "model.ckpt"), str(wav), "--attention",
                 "--output-dir", str(tmp_path)]) == 0
    lines = capsys.readouterr().out.splitlines()
    probs = [float(line.split()[-1]) for line in lines[1:13]]
    assert len(probs) == 12 and abs(sum(probs) - 1) <= 1e-6
    rows = list(csv.reader((tmp_path / "attention_yes_probe.csv").open()))
    assert rows[0] == ["frame"] + [f"head{i}" for i in range(5)]
    weights = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    assert weights.shape == (98, 5)
    np.testing.assert_allclose(weights.sum(axis=0), 1.0, atol=1e-6)


def test_infer_rejects_stereo_and_wrong_rate(untrained, tmp_path, capsys):
    stereo = tmp_path / "stereo.wav"
    with wave.open(str(stereo), "wb") as wf:
        wf.setnchannels(2)
        wf.setsampwidth(2)
        wf.setframerate(16000)
        wf.writeframes(np.zeros(2 * 16000, dtype="<i2").tobytes())
    assert main(["infer", str(untrained / "model.ckpt"), str(stereo)]) == 2
    assert "mono" in capsys.readouterr().err
    slow = tmp_path / "slow.wav"
    write_wav(slow, np.zeros(8000), sample_rate=8000)
    assert main(["infer", str(untrained / "model.ckpt"), str(slow)]) == 2
    assert "8000" in capsys.readouterr().err


def test_features_and_fixture_commands(tmp_path):
    root = tmp_path / "ds"
    assert main(["fixture", str(root), "--per-word", "1", "--words", "yes,no,bed"]) == 0
    assert sorted(p.name for p in root.iterdir() if p.is_dir()) == ["_background_noise_", "bed", "no", "yes"]
    assert main(["features", "--dataset-root", str(root), "--output-dir", str(tmp_path / "out")]) == 0
    assert list((tmp_path / "out" / "features").rglob("*.feat"))
