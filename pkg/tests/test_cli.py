"""Subcommand contracts: artifacts, exit codes, idempotence."""

import json

import numpy as np
import pytest

from hyperlm.cli import main
from hyperlm.model import micro_dense, micro_mice


@pytest.fixture
def workdir(tmp_path):
    cfg = tmp_path / "micro.json"
    cfg.write_text(json.dumps(micro_dense(seed=5).to_dict()))
    cfg_mice = tmp_path / "mice.json"
    cfg_mice.write_text(json.dumps(micro_mice(seed=5).to_dict()))
    corpus = tmp_path / "tiny.txt"
    corpus.write_text("the rain in spain stays mainly in the plain. " * 40)
    return tmp_path


def run(*argv):
    return main([str(a) for a in argv])


class TestTrain:
    def test_emits_requested_metric_rows(self, workdir, capsys):
        out = workdir / "run"
        code = run("train", "--config", workdir / "micro.json",
                   "--corpus", workdir / "tiny.txt", "--steps", 4,
                   "--batch-size", 2, "--seq-len", 16, "--out", out,
                   "--quiet")
        assert code == 0
        rows = (out / "metrics.csv").read_text().splitlines()
        assert len(rows) == 5  # header + 4 steps
        assert (out / "manifest.json").exists()
        assert (out / "ckpt-4.bin").exists()

    def test_bad_config_key_exit_2(self, workdir, capsys):
        bad = workdir / "bad.json"
        bad.write_text(json.dumps({"variant": "HELM-D", "bogus_key": 3}))
        code = run("train", "--config", bad, "--corpus", workdir / "tiny.txt",
                   "--out", workdir / "r")
        assert code == 2
        assert "bogus_key" in capsys.readouterr().err

    def test_missing_corpus_exit_2(self, workdir, capsys):
        code = run("train", "--config", workdir / "micro.json",
                   "--corpus", workdir / "nope.txt", "--out", workdir / "r")
        assert code == 2


class TestGenerate:
    def test_roundtrip_through_checkpoint(self, workdir, capsys):
        out = workdir / "run"
        run("train", "--config", workdir / "micro.json",
            "--corpus", workdir / "tiny.txt", "--steps", 2,
            "--batch-size", 2, "--seq-len", 16, "--out", out, "--quiet")
        code = run("generate", "--ckpt", out / "ckpt-2.bin",
                   "--prompt", "ab", "--n", 4)
        assert code == 0

    def test_cached_generation_for_latent_variant(self, workdir, capsys):
        out = workdir / "runm"
        run("train", "--config", workdir / "mice.json",
            "--corpus", workdir / "tiny.txt", "--steps", 2,
            "--batch-size", 2, "--seq-len", 16, "--out", out, "--quiet")
        capsys.readouterr()  # drop the train summary
        code = run("generate", "--ckpt", out / "ckpt-2.bin",
                   "--prompt", "ab", "--n", 4, "--cache")
        assert code == 0
        cached_text = capsys.readouterr().out
        uncached = run("generate", "--ckpt", out / "ckpt-2.bin",
                       "--prompt", "ab", "--n", 4, "--no-cache")
        assert uncached == 0
        assert capsys.readouterr().out == cached_text

    def test_not_a_checkpoint_exit_2(self, workdir):
        assert run("generate", "--ckpt", workdir / "tiny.txt") == 2


class TestVerify:
    def test_all_checks_exit_zero(self, capsys):
        assert run("verify", "--all") == 0
        out = capsys.readouterr().out
        assert out.count("[PASS]") == 5

    def test_single_check(self, capsys):
        assert run("verify", "--prop", 1) == 0
        assert "shift-invariance" in capsys.readouterr().out

    def test_prop3_distance_report(self, capsys):
        assert run("verify", "--prop", 3, "--r", 5) == 0
        assert "relative distance 5" in capsys.readouterr().out


class TestBenchCache:
    def test_reference_shape_table(self, workdir, capsys):
        cfg = workdir / "small.json"
        from hyperlm.model import small_mice
        cfg.write_text(json.dumps(small_mice().to_dict()))
        out = workdir / "cache.csv"
        assert run("bench-cache", "--config", cfg, "--out", out) == 0
        rows = out.read_text().splitlines()
        assert rows[0] == "layer,baseline_scalars,hmla_scalars,ratio"
        first = rows[1].split(",")
        assert first[1] == "768" and first[2] == "80"
        assert float(first[3]) == pytest.approx(9.6)
        assert len(rows) == 7


class TestRicciCommand:
    def test_text_input_report(self, workdir, capsys):
        emb = workdir / "emb.txt"
        rng = np.random.default_rng(0)
        lines = [" ".join(f"{v:.6f}" for v in row)
                 for row in rng.normal(size=(25, 3))]
        emb.write_text("\n".join(lines))
        out = workdir / "kappa.csv"
        assert run("ricci", "--input", emb, "--k", 4, "--bins", 6,
                   "--out", out) == 0
        assert out.exists()
        assert (workdir / "kappa_hist.csv").exists()
        assert (workdir / "kappa_summary.csv").exists()

    def test_parse_error_exit_2(self, workdir, capsys):
        bad = workdir / "bad.txt"
        bad.write_text("1.0 2.0\nnot numbers here\n")
        assert run("ricci", "--input", bad, "--k", 2, "--bins", 4,
                   "--out", workdir / "x.csv") == 2

    def test_checkpoint_embedding_input(self, workdir, capsys):
        out = workdir / "run"
        run("train", "--config", workdir / "micro.json",
            "--corpus", workdir / "tiny.txt", "--steps", 2,
            "--batch-size", 2, "--seq-len", 16, "--out", out, "--quiet")
        assert run("ricci", "--input", out / "ckpt-2.bin", "--k", 5,
                   "--bins", 6, "--out", workdir / "ck.csv",
                   "--tensor", "embedding.space") == 0

    def test_idempotent_outputs(self, workdir, capsys):
        emb = workdir / "e.txt"
        rng = np.random.default_rng(1)
        emb.write_text("\n".join(" ".join(map(str, r))
                                 for r in rng.normal(size=(15, 2))))
        a, b = workdir / "a.csv", workdir / "b.csv"
        run("ricci", "--input", emb, "--k", 3, "--bins", 5, "--out", a)
        run("ricci", "--input", emb, "--k", 3, "--bins", 5, "--out", b)
        assert a.read_bytes() == b.read_bytes()


class TestNormProbe:
    def test_csv_columns(self, workdir, capsys):
        out = workdir / "run"
        run("train", "--config", workdir / "micro.json",
            "--corpus", workdir / "tiny.txt", "--steps", 2,
            "--batch-size", 2, "--seq-len", 16, "--out", out, "--quiet")
        probe_out = workdir / "norms.csv"
        assert run("norm-probe", "--ckpt", out / "ckpt-2.bin",
                   "--words", "the,in;rain,spain", "--out", probe_out) == 0
        rows = probe_out.read_text().splitlines()
        assert rows[0] == "group,avg_norm,min,max"
        assert len(rows) == 3


class TestInspect:
    def test_lists_tensors(self, workdir, capsys):
        out = workdir / "run"
        run("train", "--config", workdir / "micro.json",
            "--corpus", workdir / "tiny.txt", "--steps", 2,
            "--batch-size", 2, "--seq-len", 16, "--out", out, "--quiet")
        assert run("inspect-checkpoint", "--ckpt", out / "ckpt-2.bin") == 0
        text = capsys.readouterr().out
        assert "embedding.space" in text
        assert "opt.m.embedding.space" in text
