"""Sweep plumbing at a tiny scale: cases, CSVs, tables, curve files."""

import csv
from dataclasses import replace

import pytest

from mtsnn import experiments as ex
from mtsnn.errors import ChecksumError, ConfigError
from mtsnn.experiments import (
    DESK,
    FULL,
    ResultRow,
    build_arch,
    base_config,
    emit_table,
    ensure_corpus,
    read_results_csv,
    run_case,
    run_family,
    summarize,
    write_curve_svg,
    write_reference_csv,
    write_results_csv,
)
from mtsnn.train import ControlMode, RunMetrics

TINY = replace(
    DESK,
    name="tiny",
    train_per_class=4,
    test_per_class=2,
    duration_ms=30,
    t_steps=30,
    hidden=(16,),
    epochs=2,
    batch_size=8,
    seeds=(0,),
)


@pytest.fixture(scope="module")
def tiny_corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("tiny_corpus")
    ensure_corpus(root, TINY)
    return root


class TestProfiles:
    def test_desk_profile_shape(self):
        assert DESK.hidden == (128, 128)
        assert DESK.t_steps == 100 and DESK.epochs == 15
        assert DESK.seeds == (0, 1, 2)

    def test_full_profile_recorded_not_run(self):
        assert FULL.train_per_class * 10 == 60000
        assert FULL.t_steps == 300 and FULL.epochs == 100

    def test_build_arch_widths(self):
        spec = build_arch(DESK)
        assert [l.in_size for l in spec.feature_block] == [2312, 128]
        assert spec.label_block[0].out_size == 12
        assert spec.task_block[0].out_size == 2

    def test_build_arch_single_task(self):
        spec = build_arch(DESK, 10, 0, with_task_block=False)
        assert spec.label_block[0].out_size == 10
        assert spec.task_block == []

    def test_base_config_overrides(self):
        cfg = base_config(DESK, seed=5, phi2=3.0)
        assert cfg.seed == 5 and cfg.phi2 == 3.0
        assert cfg.lr == DESK.lr and cfg.surrogate_scale == DESK.surrogate_scale


class TestEnsureCorpus:
    def test_generates_once_then_reuses(self, tmp_path):
        ensure_corpus(tmp_path, TINY)
        stamp = (tmp_path / "manifest.json").stat().st_mtime_ns
        ensure_corpus(tmp_path, TINY)
        assert (tmp_path / "manifest.json").stat().st_mtime_ns == stamp

    def test_corrupt_corpus_raises_instead_of_clobbering(self, tmp_path):
        ensure_corpus(tmp_path, TINY)
        victim = next((tmp_path / "train" / "0").glob("*.bin"))
        victim.write_bytes(b"\x00" * 10)
        with pytest.raises(ChecksumError):
            ensure_corpus(tmp_path, TINY)


class TestCaseSetup:
    def test_family_values(self):
        assert ex.default_values("threshold") == (1.5, 2.0, 3.0, 5.0, 10.0)
        assert ex.default_values("gamma") == (0.1, 0.2, 0.3, 0.5)
        assert ex.default_values("ext_current") == (0.05, 0.1, 0.5, 1.0, 5.0)
        assert ex.default_values("base") == ("task1", "task2")

    def test_threshold_case_config(self):
        _, cfg, tasks = ex._case_setup(TINY, "threshold", 3.0, 1)
        assert cfg.phi2 == 3.0 and cfg.control_mode is ControlMode.THRESHOLD
        assert tasks == (1, 2)

    def test_ext_current_case_config(self):
        _, cfg, _ = ex._case_setup(TINY, "ext_current", 0.5, 0)
        assert cfg.control_mode is ControlMode.EXT_CURRENT and cfg.i_ext2 == 0.5

    def test_base_case_has_no_task_head(self):
        net, cfg, tasks = ex._case_setup(TINY, "base", "task1", 0)
        assert net.spec.task_block == [] and not cfg.use_task_block
        assert tasks == (1,)
        net2, _, tasks2 = ex._case_setup(TINY, "base", "task2", 0)
        assert net2.spec.num_labels_task1 == 0 and tasks2 == (2,)

    def test_bad_family_and_value(self):
        with pytest.raises(ConfigError):
            ex._case_setup(TINY, "nosuch", 1.0, 0)
        with pytest.raises(ConfigError):
            ex._case_setup(TINY, "base", "task3", 0)


class TestRunCase:
    def test_single_case_outputs(self, tiny_corpus, tmp_path):
        tr, te = ex.load_profile_data(tiny_corpus, TINY)
        row, metrics, net = run_case(TINY, "threshold", 5.0, 0, tr, te,
                                     out_dir=tmp_path)
        assert row.family == "threshold" and row.value == "5.0"
        assert 0.0 <= row.task1_acc <= 1.0 and 0.0 <= row.task2_acc <= 1.0
        assert row.i_ext2 is None and row.profile == "tiny"
        assert (tmp_path / "runs" / "threshold_5_0" / "metrics.csv").exists()
        assert (tmp_path / "runs" / "threshold_5_0" / "final.ckpt").exists()
        assert (tmp_path / "curves" / "threshold_5_0.svg").exists()
        assert len(net.feature) == 1
        assert any(m.split == "test" for m in metrics)

    def test_base_case_single_accuracy(self, tiny_corpus):
        tr, te = ex.load_profile_data(tiny_corpus, TINY)
        row, _, _ = run_case(TINY, "base", "task2", 0, tr, te)
        assert row.task1_acc is None and row.task2_acc is not None

    def test_run_family_order_and_rows(self, tiny_corpus):
        rows = run_family(tiny_corpus, TINY, "gamma", values=(0.1, 0.5),
                          seeds=(0,))
        assert [(r.value, r.seed) for r in rows] == [("0.1", 0), ("0.5", 0)]
        assert all(r.gamma in (0.1, 0.5) for r in rows)


class TestResultsCsv:
    def rows(self):
        return [
            ResultRow("threshold", "5", 0, 0.97, 0.99, 1.25, 5.0, 0.1, None,
                      2, 30, "tiny", 1.5),
            ResultRow("base", "task1", 1, 0.88, None, 1.25, 1.25, 0.1, None,
                      2, 30, "tiny", 0.9),
            ResultRow("ext_current", "0.1", 0, 0.91, 0.93, 1.25, 5.0, 0.1,
                      0.1, 2, 30, "tiny", 1.2),
        ]

    def test_round_trip(self, tmp_path):
        p = tmp_path / "results.csv"
        write_results_csv(p, self.rows())
        back = read_results_csv(p)
        assert back == self.rows()

    def test_summarize_means(self):
        rows = [
            ResultRow("threshold", "5", s, 0.9 + 0.02 * s, 0.99, 1.25, 5.0,
                      0.1, None, 2, 30, "tiny", 1.0)
            for s in range(3)
        ]
        a1, a2, n = summarize(rows)[("threshold", "5")]
        assert n == 3 and abs(a1 - 0.92) < 1e-12 and abs(a2 - 0.99) < 1e-12

    def test_emit_table_markdown_and_csv(self):
        md = emit_table(self.rows(), "markdown")
        assert "| threshold | 5 | 97.00 | 99.00 | 1 |" in md
        assert "| base | task1 | 88.00 | - | 1 |" in md
        cs = emit_table(self.rows(), "csv")
        assert "ext_current,0.1,91.00,93.00,1" in cs
        with pytest.raises(ConfigError):
            emit_table(self.rows(), "html")

    def test_reference_csv(self, tmp_path):
        p = tmp_path / "reference.csv"
        write_reference_csv(p)
        with open(p, newline="") as f:
            recs = list(csv.DictReader(f))
        byv = {(r["family"], r["value"]): r for r in recs}
        assert float(byv[("threshold", "5")]["task1_acc"]) == 0.9786
        assert byv[("base", "task2")]["task1_acc"] == ""
        assert all(r["profile"] == "full" for r in recs)
        # trend the desk runs are compared against: monotone up to 5.0
        accs = [float(byv[("threshold", v)]["task1_acc"])
                for v in ("1.5", "2", "3", "5")]
        assert accs == sorted(accs)
        best_ec = max(float(r["task1_acc"]) for r in recs
                      if r["family"] == "ext_current")
        assert best_ec <= float(byv[("threshold", "5")]["task1_acc"])


class TestCurveSvg:
    def test_curve_file_contents(self, tmp_path):
        rows = [
            RunMetrics(e, "test", t, 0.5, 0.1 * e + (0.2 if t == 2 else 0.0),
                       1.25, 5.0, 0.1, "threshold", 0)
            for e in (1, 2, 3) for t in (1, 2)
        ]
        p = tmp_path / "c.svg"
        write_curve_svg(p, rows, title="demo")
        text = p.read_text()
        assert text.count("<polyline") == 2
        assert "demo (test accuracy)" in text
        assert "task 1" in text and "task 2" in text

    def test_falls_back_to_train_rows(self, tmp_path):
        rows = [RunMetrics(1, "train", 1, 0.5, 0.4, 1.25, 5.0, 0.1, "threshold", 0)]
        p = tmp_path / "c.svg"
        write_curve_svg(p, rows)
        assert "(train accuracy)" in p.read_text()
