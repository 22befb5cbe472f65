import numpy as np
import pytest

from bandgan import autodiff as ad
from bandgan import gradsuite
from bandgan.cli import main
from bandgan.corpus import read_pgm
from bandgan.features import read_features

TRAIN_FLAGS = ["--n-mels", "16", "--context", "1", "--n-blocks", "1", "--g-base-width", "2", "--d-base-width", "2",
               "--batch-size", "8", "--windows-per-epoch", "8"]


@pytest.fixture(scope="module")
def corpus_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("corpus")
    assert main(["synth", "--out", str(out), "--n-per-subset", "2", "--heldout", "1", "--duration", "0.3"]) == 0
    return out


@pytest.fixture(scope="module")
def trained(corpus_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    code = main(["train", "--manifest", str(corpus_dir / "train.tsv"), "--out", str(out), "--arch", "cyclegan-2g+4da",
                 "--epochs", "1"] + TRAIN_FLAGS)
    assert code == 0
    return out


class TestTrain:
    def test_outputs(self, trained):
        names = {p.name for p in trained.iterdir()}
        assert {"inst0_epoch0.ckpt", "inst1_epoch1.ckpt", "losses.csv", "config.txt", "summary.txt"} <= names
        assert "variant = A2" in (trained / "config.txt").read_text()
        assert "n_da = 2" in (trained / "config.txt").read_text()

    def test_missing_config_exits_2_naming_path(self, corpus_dir, tmp_path, capsys):
        missing = tmp_path / "nope.cfg"
        code = main(["train", "--config", str(missing), "--manifest", str(corpus_dir / "train.tsv"),
                     "--out", str(tmp_path / "o")])
        assert code == 2
        assert str(missing) in capsys.readouterr().err

    def test_bad_config_key_exits_2(self, corpus_dir, tmp_path, capsys):
        cfg = tmp_path / "c.cfg"
        cfg.write_text("epochs = 1\nwarp = 9\n")
        code = main(["train", "--config", str(cfg), "--manifest", str(corpus_dir / "train.tsv"),
                     "--out", str(tmp_path / "o")])
        assert code == 2
        assert "warp" in capsys.readouterr().err

    def test_epochs_zero(self, corpus_dir, tmp_path):
        out = tmp_path / "z"
        assert main(["train", "--manifest", str(corpus_dir / "train.tsv"), "--out", str(out), "--epochs", "0"]
                    + TRAIN_FLAGS) == 0
        assert sorted(p.name for p in out.glob("*.ckpt")) == ["inst0_epoch0.ckpt"]

    def test_arch_a3_uses_three_discriminators(self, corpus_dir, tmp_path, capsys):
        out = tmp_path / "a3"
        assert main(["train", "--manifest", str(corpus_dir / "train.tsv"), "--out", str(out),
                     "--arch", "cyclegan-8g+24da", "--epochs", "0"] + TRAIN_FLAGS) == 0
        assert "8 instance(s), 24 clean-side discriminators" in capsys.readouterr().out
        assert "n_da = 3" in (out / "config.txt").read_text()

    def test_unknown_flag(self, corpus_dir, tmp_path):
        with pytest.raises(SystemExit) as exc:
            main(["train", "--manifest", "m", "--out", str(tmp_path), "--warp-speed", "9"])
        assert exc.value.code == 2

    def test_resume(self, corpus_dir, trained, tmp_path):
        import shutil

        out = tmp_path / "resumed"
        shutil.copytree(trained, out)
        assert main(["train", "--manifest", str(corpus_dir / "train.tsv"), "--out", str(out), "--arch",
                     "cyclegan-2g+4da", "--epochs", "2", "--resume", "1"] + TRAIN_FLAGS) == 0
        assert (out / "inst1_epoch2.ckpt").is_file()


class TestEnhanceEval:
    def test_enhance_eval_render(self, corpus_dir, trained, tmp_path, capsys):
        enh = tmp_path / "enh"
        assert main(["enhance", "--checkpoints", str(trained), "--manifest", str(corpus_dir / "heldout.tsv"),
                     "--out", str(enh)]) == 0
        files = sorted(enh.glob("*.bgse"))
        assert len(files) == 8
        seq = read_features(files[0])
        assert seq.n_mels == 16 and seq.n_frames == 28
        assert main(["eval", "--manifest", str(corpus_dir / "heldout.tsv"), "--enhanced", str(enh),
                     "--out", str(tmp_path / "eval.csv")]) == 0
        lines = (tmp_path / "eval.csv").read_text().splitlines()
        assert lines[0] == "utt_id,lsd_noisy,lsd_enhanced,improvement" and len(lines) == 9
        assert main(["render", "--input", str(files[0]), "--start", "0", "--end", "150",
                     "--out", str(tmp_path / "s.pgm")]) == 0
        assert read_pgm(tmp_path / "s.pgm").shape == (16, 14)

    def test_arch_mismatch_exits_2(self, corpus_dir, trained, tmp_path, capsys):
        code = main(["enhance", "--checkpoints", str(trained), "--manifest", str(corpus_dir / "heldout.tsv"),
                     "--out", str(tmp_path / "e"), "--arch", "cyclegan-8g+24da"])
        assert code == 2
        assert "cyclegan-2g+4da" in capsys.readouterr().err

    def test_empty_domain_a_warns(self, corpus_dir, trained, tmp_path, caplog):
        empty = corpus_dir / "clean_only.tsv"
        empty.write_text("".join(line + "\n" for line in (corpus_dir / "train.tsv").read_text().splitlines()
                                 if line.split("\t")[2] == "B"))
        code = main(["enhance", "--checkpoints", str(trained), "--manifest", str(empty), "--out", str(tmp_path / "e")])
        assert code == 0
        assert not list((tmp_path / "e").glob("*.bgse"))
        assert "no domain-A records" in caplog.text

    def test_missing_checkpoints_exit_2(self, corpus_dir, tmp_path):
        assert main(["enhance", "--checkpoints", str(tmp_path), "--manifest", str(corpus_dir / "heldout.tsv"),
                     "--out", str(tmp_path / "e")]) == 2

    def test_missing_manifest_exit_1(self, tmp_path):
        assert main(["extract", "--manifest", str(tmp_path / "none.tsv"), "--out", str(tmp_path / "f")]) == 1


class TestExtractRender:
    def test_extract_round_trip(self, corpus_dir, tmp_path):
        out = tmp_path / "feats"
        assert main(["extract", "--manifest", str(corpus_dir / "heldout.tsv"), "--out", str(out),
                     "--n-mels", "16"]) == 0
        assert len(list(out.glob("*.bgse"))) == 8
        assert (out / "features.tsv").is_file()

    def test_render_wav_and_bad_range(self, corpus_dir, tmp_path):
        wav = next((corpus_dir / "wav").glob("*.wav"))
        assert main(["render", "--input", str(wav), "--start", "0", "--end", "100", "--out",
                     str(tmp_path / "w.pgm")]) == 0
        assert read_pgm(tmp_path / "w.pgm").shape == (40, 9)
        assert main(["render", "--input", str(wav), "--start", "900", "--end", "950", "--out",
                     str(tmp_path / "x.pgm")]) == 1
        assert main(["render", "--input", str(tmp_path / "nope.wav"), "--start", "0", "--end", "1",
                     "--out", str(tmp_path / "y.pgm")]) == 2

    def test_synth_rejects_heldout_too_large(self, tmp_path):
        assert main(["synth", "--out", str(tmp_path), "--n-per-subset", "2", "--heldout", "2"]) == 2


class TestGradcheck:
    def test_healthy_build(self, capsys):
        assert main(["gradcheck", "--trials", "2"]) == 0
        out = capsys.readouterr().out
        listed = [line.split()[0] for line in out.splitlines() if "max_rel_error" in line]
        assert listed == list(gradsuite.OPS) + ["objective"]

    def test_broken_conv_backward_is_named(self, monkeypatch, capsys):
        original = ad._conv2d_backward

        def broken(*args, **kwargs):
            dx, dk = original(*args, **kwargs)
            return dx, dk * 1.1

        monkeypatch.setattr(ad, "_conv2d_backward", broken)
        assert main(["gradcheck", "--trials", "2"]) == 1
        assert "conv2d" in capsys.readouterr().err.split("FAILED:")[1]


def test_module_entry_point():
    import subprocess
    import sys

    result = subprocess.run([sys.executable, "-m", "bandgan", "--help"], capture_output=True, text=True)
    assert result.returncode == 0 and "gradcheck" in result.stdout


def test_numpy_float32_outputs(corpus_dir, trained, tmp_path):
    main(["enhance", "--checkpoints", str(trained), "--manifest", str(corpus_dir / "heldout.tsv"),
          "--out", str(tmp_path / "e")])
    seq = read_features(next((tmp_path / "e").glob("*.bgse")))
    assert seq.frames.dtype == np.float32
