import json

import numpy as np
import pytest

from perclang.analysis import Curve
from perclang.cli import main
from perclang.corpus import build_vocabulary, read_examples
from perclang.evaluation import (
    GenerationRecord,
    MetricReport,
    read_metrics_csv,
    read_probes,
    write_metrics_csv,
    write_records,
    write_responses,
    ProbeResponse,
)
from perclang.percolation import curve_from_csv, threshold_analytic_complete
from perclang.typegraph import load_typegraph

SMALL = ["--entities", "30", "--properties", "300", "--classes", "5", "--verbs", "50"]


def run(args):
    return main([str(a) for a in args])


class TestGenGraph:
    def test_outputs_and_manifest(self, tmp_path):
        out = tmp_path / "run"
        assert run(["gen-graph", "--out", out, *SMALL, "--seed", "3"]) == 0
        graph = load_typegraph(out / "graph.npz")
        assert graph.n_entities == 30
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["subcommand"] == "gen-graph"
        assert manifest["config"]["seed"] == 3
        assert "config_hash" in manifest
        assert "entities: 30" in (out / "graph_summary.txt").read_text()

    def test_config_file_with_flag_override(self, tmp_path):
        cfg = tmp_path / "base.cfg"
        cfg.write_text("entities=30\nproperties=300\nclasses=5\nverbs=50\nseed=1\n")
        out = tmp_path / "run"
        assert run(["gen-graph", "--config", cfg, "--out", out, "--seed", "9"]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert manifest["config"]["seed"] == 9
        assert manifest["config"]["entities"] == 30

    def test_unknown_config_key_exits_2_naming_it(self, tmp_path, capsys):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("entitties=30\n")
        assert run(["gen-graph", "--config", cfg, "--out", tmp_path / "x"]) == 2
        assert "entitties" in capsys.readouterr().err

    def test_runtime_failure_exits_1(self, tmp_path, capsys):
        # indivisible entity count trips the graph validator at runtime
        assert run(["gen-graph", "--out", tmp_path / "x", "--entities", "31"]) == 1


class TestGenCorpus:
    def test_produces_all_artifacts(self, tmp_path):
        out = tmp_path / "run"
        assert run([
            "gen-corpus", "--out", out, *SMALL, "--batches", "2", "--batch-size", "16",
        ]) == 0
        for name in ("corpus.jsonl", "vocab.txt", "graph.npz", "stream.cfg", "manifest.json"):
            assert (out / name).exists(), name
        graph = load_typegraph(out / "graph.npz")
        vocab = build_vocabulary(graph)
        examples = read_examples(out / "corpus.jsonl", vocab)
        assert len(examples) == 32
        assert (out / "vocab.txt").read_text().count("\n") == len(vocab)

    def test_rerun_is_byte_identical(self, tmp_path):
        args = ["gen-corpus", *SMALL, "--batches", "2", "--batch-size", "8"]
        out_a, out_b = tmp_path / "a", tmp_path / "b"
        assert run(args + ["--out", out_a]) == 0
        assert run(args + ["--out", out_b]) == 0
        for name in ("corpus.jsonl", "vocab.txt", "stream.cfg"):
            assert (out_a / name).read_bytes() == (out_b / name).read_bytes()


class TestProbesAndEval:
    def test_probe_then_eval_pipeline(self, tmp_path):
        out = tmp_path / "run"
        assert run(["gen-graph", "--out", out, *SMALL]) == 0
        assert run([
            "probes", "--out", out, "--graph", out / "graph.npz",
            "--count", "8", "--family", "next_descriptor",
        ]) == 0
        probes = read_probes(out / "probes_next_descriptor.jsonl")
        assert len(probes) == 8

        graph = load_typegraph(out / "graph.npz")
        vocab = build_vocabulary(graph)
        records = [
            GenerationRecord(0, "free", ("<free>",), ("subj0", "is", "descriptor1"), None)
        ]
        write_records(out / "records.jsonl", records)
        write_responses(
            out / "responses.jsonl",
            [ProbeResponse(id=p.id, prob=0.5, rank=2) for p in probes],
        )
        assert run([
            "eval", "--out", out / "eval", "--graph", out / "graph.npz",
            "--records", out / "records.jsonl",
            "--probes", out / "probes_next_descriptor.jsonl",
            "--responses", out / "responses.jsonl",
        ]) == 0
        reports = read_metrics_csv(out / "eval" / "metrics.csv")
        values = reports[0].values
        assert values["free/grammaticality"] == 1.0
        assert values["probe/avg_probability"] == 0.5

    def test_eval_requires_graph(self, tmp_path, capsys):
        assert run(["eval", "--out", tmp_path / "x", "--records", "r.jsonl"]) == 2
        assert "graph" in capsys.readouterr().err


class TestPercolate:
    def test_complete_curve_rises_near_threshold(self, tmp_path):
        out = tmp_path / "perc"
        p_c = threshold_analytic_complete(300, 300)
        assert run([
            "percolate", "--out", out, "--complete", "300", "300",
            "--pgrid", f"{p_c/4}:{p_c*4}:12", "--trials", "6", "--seed", "2",
        ]) == 0
        curve = curve_from_csv(out / "curve.csv")
        assert curve.largest_mean[0] < 0.05
        assert curve.largest_mean[-1] > 0.4

    def test_worker_count_does_not_change_outputs(self, tmp_path):
        base = [
            "percolate", "--complete", "200", "200",
            "--pgrid", "1e-3:2e-2:9", "--trials", "4", "--seed", "5",
        ]
        out1, out4 = tmp_path / "w1", tmp_path / "w4"
        assert run(base + ["--out", out1, "--workers", "1"]) == 0
        assert run(base + ["--out", out4, "--workers", "4"]) == 0
        assert (out1 / "curve.csv").read_bytes() == (out4 / "curve.csv").read_bytes()

    def test_requires_exactly_one_base(self, tmp_path):
        assert run(["percolate", "--out", tmp_path / "x", "--pgrid", "1e-3:1e-2:4"]) == 2


class TestAnalyze:
    def _metrics_file(self, tmp_path, name, label, alpha=1.5):
        x = np.geomspace(10, 1e7, 200)
        y = 1.0 / (1.0 + np.exp(-2.0 * np.log10(x / label**alpha)))
        reports = [
            MetricReport(int(xi), {"free/typecheck_descriptive": float(yi)}, {})
            for xi, yi in zip(x, y)
        ]
        run_dir = tmp_path / name
        run_dir.mkdir()
        write_metrics_csv(run_dir / "metrics.csv", reports)
        (run_dir / "manifest.json").write_text(
            json.dumps({"config": {"properties": label}})
        )
        return run_dir / "metrics.csv"

    def test_collapse_recovers_exponent(self, tmp_path, capsys):
        files = [
            self._metrics_file(tmp_path, f"run{i}", label)
            for i, label in enumerate((50, 120, 300, 700))
        ]
        out = tmp_path / "collapse"
        assert run([
            "analyze", "collapse", *files, "--out", out,
            "--metric", "free/typecheck_descriptive", "--alpha", "0:2.5:0.25",
        ]) == 0
        header = (out / "collapse.csv").read_text().splitlines()[1]
        assert "alpha=1.5" in header

    def test_fit_writes_breakpoints(self, tmp_path):
        files = [self._metrics_file(tmp_path, "runf", 100.0)]
        out = tmp_path / "fit"
        assert run([
            "analyze", "fit", *files, "--out", out, "--metric", "free/typecheck_descriptive",
        ]) == 0
        text = (out / "fits.csv").read_text()
        assert "breakpoint" in text.splitlines()[1]
        assert len(text.splitlines()) == 3

    def test_powerlaw_over_points_file(self, tmp_path):
        pts = tmp_path / "points.csv"
        pts.write_text("".join(f"{x},{2.0 * x ** 1.4}\n" for x in (1e3, 2e3, 5e3, 1e4)))
        out = tmp_path / "pl"
        assert run(["analyze", "powerlaw", pts, "--out", out]) == 0
        line = (out / "powerlaw.csv").read_text().splitlines()[-1]
        exponent = float(line.split(",")[0])
        assert exponent == pytest.approx(1.4, abs=1e-9)


class TestBridgeCommand:
    def test_small_sweep(self, tmp_path):
        out = tmp_path / "bridge"
        assert run([
            "bridge", "--out", out, "--entities", "60", "--classes", "6", "--verbs", "30",
            "--properties-list", "600,1200", "--batch-size", "8",
            "--calibration-sentences", "1500", "--seed", "4",
        ]) == 0
        lines = (out / "predicted.csv").read_text().splitlines()
        assert lines[1] == "properties,predicted_iteration,threshold_p,observed_breakpoint"
        rows = [line.split(",") for line in lines[2:]]
        assert [row[0] for row in rows] == ["600", "1200"]
        assert all(float(row[1]) > 0 for row in rows)
