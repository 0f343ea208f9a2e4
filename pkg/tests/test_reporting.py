"""TSV rendering and figure files."""

import numpy as np

from reentry import corpus, evaluation, labeling, reporting
from reentry.corpus import Conversation, Turn


def make_instances():
    convs = []
    for i in range(8):
        authors = ["a", "b", "a"] if i % 2 else ["a", "b"]
        convs.append(Conversation(
            f"c{i}", tuple(Turn(x, ("w", x)) for x in authors)))
    return corpus.extract_instances(convs)


def test_stats_tsv_format():
    stats = labeling.pattern_stats(make_instances())
    tsv = reporting.stats_tsv(stats)
    lines = tsv.strip().splitlines()
    assert lines[0] == "pattern\tcount\treentry_rate"
    assert all(len(line.split("\t")) == 3 for line in lines[1:])
    assert lines[1].startswith("AB\t8\t")  # AB is the most frequent pattern


def test_metrics_tsv_format():
    report = evaluation.classify_metrics([0.9, 0.1], [1, 0])
    tsv = reporting.metrics_tsv(report)
    header, row = tsv.strip().splitlines()
    assert header.split("\t") == list(reporting.METRIC_COLUMNS)
    values = row.split("\t")
    assert values[0] == "1.0000"
    assert values[5] == "2"


def test_metrics_tsv_handles_nan_auc():
    report = evaluation.classify_metrics([0.9, 0.8], [1, 1])
    row = reporting.metrics_tsv(report).strip().splitlines()[1]
    assert row.split("\t")[0] == "nan"


def test_breakdown_tsv_format():
    instances = make_instances()
    rng = np.random.default_rng(0)
    breakdown = evaluation.pattern_breakdown(instances, rng.random(len(instances)),
                                             min_count=2)
    tsv = reporting.breakdown_tsv(breakdown)
    lines = tsv.strip().splitlines()
    assert lines[0].split("\t")[0] == "pattern"
    assert len(lines) == 1 + len(breakdown.reports)


def test_figures_render_to_files(tmp_path):
    instances = make_instances()
    stats = labeling.pattern_stats(instances)
    rng = np.random.default_rng(1)
    breakdown = evaluation.pattern_breakdown(instances, rng.random(len(instances)),
                                             min_count=2)
    log = [{"epoch": e, "valid": {"f1": 0.1 * e},
            "train_loss": {"total": 1.0 / e, "main": 0.8 / e}} for e in (1, 2, 3)]

    stats_path = tmp_path / "stats.png"
    f1_path = tmp_path / "f1.png"
    curves_path = tmp_path / "curves.png"
    reporting.pattern_stats_figure(stats, stats_path)
    reporting.pattern_f1_figure(breakdown, f1_path)
    reporting.training_curves_figure(log, curves_path)
    for path in (stats_path, f1_path, curves_path):
        assert path.stat().st_size > 1000
        assert path.read_bytes()[:8] == b"\x89PNG\r\n\x1a\n"
