"""End-to-end CLI flows: synth -> mask -> attend, analysis commands, CSVs."""

import csv
import io

import numpy as np
import pytest

from bsattn.cli import main
from bsattn.dense import AttentionInputs, dense_attention
from bsattn.tensorio import read_tensor, write_tensor


@pytest.fixture
def scene_files(tmp_path):
    prefix = tmp_path / "s"
    main(["synth", "--frames", "2", "--patches", "128", "--matches", "64",
          "--c", "8", "--seed", "1", "--dim", "32", "--out-prefix", str(prefix)])
    return prefix


def run_csv(capsys, argv):
    main(argv)
    return list(csv.reader(io.StringIO(capsys.readouterr().out)))


class TestSynthCommand:
    def test_writes_tensors_and_matches(self, scene_files):
        q = read_tensor(f"{scene_files}_q.bsat")
        assert q.shape == (1, 256, 32)
        with open(f"{scene_files}_matches.csv") as f:
            rows = list(csv.reader(f))
        assert rows[0] == ["frame_a", "token_i", "frame_b", "token_j"]
        assert len(rows) == 65

    def test_deterministic_across_runs(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for prefix in (a, b):
            main(["synth", "--frames", "2", "--patches", "64", "--matches", "16",
                  "--seed", "9", "--dim", "16", "--out-prefix", str(prefix)])
        assert (tmp_path / "a_q.bsat").read_bytes() == (tmp_path / "b_q.bsat").read_bytes()


class TestMaskAndAttend:
    def test_sparse_pipeline_matches_dense_on_full_mask(self, tmp_path, scene_files):
        mask_path = tmp_path / "m.bsm"
        out_sparse = tmp_path / "o_sparse.bsat"
        out_dense = tmp_path / "o_dense.bsat"
        common = ["--frames", "2", "--patches-per-frame", "128",
                  "--specials-per-frame", "0", "--block-q", "64", "--block-k", "32"]
        # tau=0, rho=0 keeps everything: kernel must reproduce dense
        main(["mask", "--q", f"{scene_files}_q.bsat", "--k", f"{scene_files}_k.bsat",
              "--tau", "0", "--rho", "0", "--out", str(mask_path)] + common)
        main(["attend", "--mode", "sparse", "--q", f"{scene_files}_q.bsat",
              "--k", f"{scene_files}_k.bsat", "--v", f"{scene_files}_v.bsat",
              "--mask", str(mask_path), "--out", str(out_sparse)] + common)
        main(["attend", "--mode", "dense", "--q", f"{scene_files}_q.bsat",
              "--k", f"{scene_files}_k.bsat", "--v", f"{scene_files}_v.bsat",
              "--out", str(out_dense)])
        np.testing.assert_allclose(
            read_tensor(out_sparse), read_tensor(out_dense), atol=1e-5
        )

    def test_mask_stats_csv(self, tmp_path, scene_files, capsys):
        mask_path = tmp_path / "m.bsm"
        rows = run_csv(capsys, [
            "mask", "--q", f"{scene_files}_q.bsat", "--k", f"{scene_files}_k.bsat",
            "--tau", "0", "--rho", "0.75", "--out", str(mask_path),
            "--frames", "2", "--patches-per-frame", "128",
            "--specials-per-frame", "0", "--block-q", "64", "--block-k", "32",
            "--stats",
        ])
        assert rows[0] == ["head", "achieved_sparsity"]
        assert float(rows[1][1]) == pytest.approx(0.75, abs=0.01)

    def test_attend_report_csv(self, tmp_path, scene_files, capsys):
        mask_path = tmp_path / "m.bsm"
        out = tmp_path / "o.bsat"
        common = ["--frames", "2", "--patches-per-frame", "128",
                  "--specials-per-frame", "0", "--block-q", "64", "--block-k", "32"]
        main(["mask", "--q", f"{scene_files}_q.bsat", "--k", f"{scene_files}_k.bsat",
              "--tau", "0", "--rho", "0.5", "--out", str(mask_path)] + common)
        rows = run_csv(capsys, [
            "attend", "--mode", "sparse", "--q", f"{scene_files}_q.bsat",
            "--k", f"{scene_files}_k.bsat", "--v", f"{scene_files}_v.bsat",
            "--mask", str(mask_path), "--out", str(out), "--report"] + common)
        assert rows[0] == ["head", "achieved_sparsity", "sparse_flops",
                           "theoretical_speedup", "wall_ms"]
        assert float(rows[1][1]) == pytest.approx(0.5, abs=0.01)
        assert out.exists()

    def test_determinism_across_cli_runs(self, tmp_path, scene_files):
        common = ["--frames", "2", "--patches-per-frame", "128",
                  "--specials-per-frame", "0", "--block-q", "64", "--block-k", "32"]
        outputs = []
        for tag in ("x", "y"):
            mask_path = tmp_path / f"{tag}.bsm"
            out = tmp_path / f"{tag}.bsat"
            main(["mask", "--q", f"{scene_files}_q.bsat",
                  "--k", f"{scene_files}_k.bsat",
                  "--tau", "0.6", "--rho", "0.5", "--out", str(mask_path)] + common)
            main(["attend", "--mode", "sparse", "--q", f"{scene_files}_q.bsat",
                  "--k", f"{scene_files}_k.bsat", "--v", f"{scene_files}_v.bsat",
                  "--mask", str(mask_path), "--out", str(out)] + common)
            outputs.append((mask_path.read_bytes(), out.read_bytes()))
        assert outputs[0] == outputs[1]

    def test_sparse_requires_mask(self, scene_files, tmp_path):
        with pytest.raises(SystemExit):
            main(["attend", "--mode", "sparse", "--q", f"{scene_files}_q.bsat",
                  "--k", f"{scene_files}_k.bsat", "--v", f"{scene_files}_v.bsat",
                  "--out", str(tmp_path / "o.bsat")])


class TestAnalysisCommands:
    def _write_map(self, tmp_path, n=16, heads=2, seed=0):
        rng = np.random.default_rng(seed)
        logits = rng.standard_normal((heads, n, n)).astype(np.float32)
        m = np.exp(logits)
        m /= m.sum(axis=2, keepdims=True)
        path = tmp_path / "map.bsat"
        write_tensor(path, m)
        return path

    def test_analyze_csv(self, tmp_path, capsys):
        path = self._write_map(tmp_path)
        rows = run_csv(capsys, [
            "analyze", "--map", str(path), "--frames", "2",
            "--patches-per-frame", "6", "--specials-per-frame", "2",
            "--layer", "15",
        ])
        assert rows[0] == ["layer", "head", "quadrant", "mean", "max"]
        quads = {r[2] for r in rows[1:]}
        assert quads == {"S2S", "S2P", "P2S", "P2P"}
        assert {r[1] for r in rows[1:]} == {"0", "1", "mean", "std"}
        assert all(r[0] == "15" for r in rows[1:])

    def test_analyze_to_file(self, tmp_path):
        path = self._write_map(tmp_path)
        out = tmp_path / "stats.csv"
        main(["analyze", "--map", str(path), "--frames", "2",
              "--patches-per-frame", "6", "--specials-per-frame", "2",
              "--csv", str(out)])
        assert out.read_text().startswith("layer,head,quadrant")

    def test_correspond_csv(self, tmp_path, capsys):
        path = self._write_map(tmp_path, n=12, heads=1, seed=4)
        rows = run_csv(capsys, [
            "correspond", "--map", str(path), "--frames", "2",
            "--patches-per-frame", "4", "--specials-per-frame", "2",
            "--k", "5", "--cross-view-only",
        ])
        assert rows[0] == ["q_frame", "q_row", "q_col",
                           "k_frame", "k_row", "k_col", "weight"]
        assert len(rows) == 6
        weights = [float(r[6]) for r in rows[1:]]
        assert weights == sorted(weights, reverse=True)
        assert all(r[1] != r[4] or r[0] != r[3] for r in rows[1:])

    def test_layerdrop(self, capsys):
        rows = run_csv(capsys, ["layerdrop", "--mode", "mid", "--n", "2",
                                "--layers", "24"])
        assert rows == [["skip_layer"], ["11"], ["12"]]

    def test_layerdrop_join(self, tmp_path, capsys):
        metrics = tmp_path / "metrics.csv"
        metrics.write_text("layer,auc\n0,0.9\n11,0.7\n23,0.88\n")
        rows = run_csv(capsys, ["layerdrop", "--mode", "mid", "--n", "2",
                                "--layers", "24", "--join", str(metrics)])
        assert rows[0] == ["layer", "auc", "skipped"]
        assert rows[1:] == [["0", "0.9", "0"], ["11", "0.7", "1"], ["23", "0.88", "0"]]


class TestBenchCommand:
    def test_bench_csv_file(self, tmp_path):
        out = tmp_path / "bench.csv"
        main(["bench", "--sizes", "128,256", "--tau", "0", "--rho", "0.5",
              "--repeats", "3", "--dim", "16", "--csv", str(out)])
        rows = list(csv.reader(io.StringIO(out.read_text())))
        assert rows[0] == ["N", "dense_ms", "sparse_ms", "achieved_sparsity", "speedup"]
        assert [r[0] for r in rows[1:]] == ["128", "256"]
