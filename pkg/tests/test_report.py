import json

import pytest

from hypelab.errors import InputError, OutputError
from hypelab.report import (
    LayerPoint,
    MetricReport,
    TechniqueAggregate,
    dumps_json,
    emit_report,
    render_csv,
    suite_mean,
    to_dict,
    with_deltas,
)


@pytest.fixture
def aggregates():
    return (
        TechniqueAggregate("acceptability", "vanilla", "matthews", 40.0, 2.0, 5, 2e-5),
        TechniqueAggregate("acceptability", "hype-n", "matthews", 42.5, 1.5, 5, 2e-5),
        TechniqueAggregate("paraphrase", "vanilla", "f1", 80.0, 1.0, 5, 1e-5),
        TechniqueAggregate("paraphrase", "hype-n", "f1", None, None, 0, None, excluded=5),
    )


def test_deltas_against_baseline(aggregates):
    rows = with_deltas(aggregates, "vanilla")
    assert rows[0].delta == 0.0
    assert rows[1].delta == 2.5
    assert rows[3].delta is None


def test_no_baseline_no_delta(aggregates):
    report = MetricReport("compare", "x", with_deltas(aggregates, None))
    assert all("delta" not in row for row in to_dict(report)["aggregates"])
    assert "delta" not in render_csv(report)["summary.csv"].splitlines()[0]


def test_unknown_baseline(aggregates):
    with pytest.raises(InputError, match="baseline"):
        with_deltas(aggregates, "hype-u")


def test_suite_mean(aggregates):
    rows = suite_mean(aggregates, ["vanilla", "hype-n"])
    assert rows[0].mean == 60.0 and rows[0].std == 1.5
    assert rows[1].mean is None and rows[1].excluded == 5


def test_baseline_delta_formats_as_zero(aggregates):
    report = MetricReport("compare", "x", with_deltas(aggregates, "vanilla"), baseline="vanilla")
    lines = render_csv(report)["summary.csv"].splitlines()
    assert lines[0].endswith(",delta")
    assert lines[1] == "acceptability,vanilla,matthews,40.000000,2.000000,5,0.000020,0,0,0.000000"
    assert lines[4].endswith(",,0,,5,0,")


def test_empty_layers(tmp_path, aggregates):
    report = MetricReport("compare", "x", aggregates)
    written = emit_report(report, tmp_path, ["json", "csv"])
    assert json.loads((tmp_path / "report.json").read_text())["layers"] == []
    assert not (tmp_path / "layers.csv").exists()
    assert {p.name for p in written} == {"report.json", "summary.csv"}


def test_layers_csv(tmp_path):
    points = (LayerPoint("probe", "backbone.ckpt", "acceptability", 0, 0.5), LayerPoint("probe", "backbone.ckpt", "acceptability", 1, 0.625))
    emit_report(MetricReport("probe", "x", layers=points), tmp_path, ["csv"])
    assert (tmp_path / "layers.csv").read_text().splitlines() == [
        "series,source,task,layer,value,seed",
        "probe,backbone.ckpt,acceptability,0,0.500000,",
        "probe,backbone.ckpt,acceptability,1,0.625000,",
    ]


def test_same_report_same_bytes(tmp_path, aggregates):
    report = MetricReport("compare", "x", with_deltas(aggregates, "vanilla"), baseline="vanilla", extra={"note": 1 / 3})
    emit_report(report, tmp_path / "a")
    emit_report(report, tmp_path / "b")
    for name in ("report.json", "summary.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert json.loads((tmp_path / "a" / "report.json").read_text())["note"] == 0.333333


def test_non_finite_values_are_flagged():
    data = json.loads(dumps_json({"runs": [{"final_score": float("nan")}], "ok": 1.0}))
    assert data["runs"][0]["final_score"] is None
    assert data["non_finite"] == [".runs[0].final_score: nan"]


def test_unknown_format(tmp_path):
    with pytest.raises(InputError, match="format"):
        emit_report(MetricReport("compare", "x"), tmp_path, ["xml"])


def test_unwritable_directory(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("")
    with pytest.raises(OutputError):
        emit_report(MetricReport("compare", "x"), blocker / "out")
