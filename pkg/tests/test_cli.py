import csv
import io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from drmquant import MultiSample
from drmquant.cli import main, parse_levels
from drmquant.errors import EmptySample, MissingSample, ParseError
from drmquant.report import emit_samples, ingest_text


def _write(tmp_path, text, name="data.csv"):
    p = tmp_path / name
    p.write_text(text)
    return str(p)


@pytest.fixture
def gamma_file(tmp_path):
    rng = np.random.default_rng(9)
    data = MultiSample([rng.gamma(6, 1.5, 40), rng.gamma(7, 1.3, 40), rng.gamma(8, 1.0, 40)])
    buf = io.StringIO()
    emit_samples(data, buf)
    return _write(tmp_path, buf.getvalue())


def test_ingest_minimal():
    d = ingest_text(io.StringIO("sample_id,value\n0,1.0\n1,2.0\n"))
    assert d.m == 1 and d.n == 2


def test_ingest_order_irrelevant():
    d = ingest_text(io.StringIO("sample_id,value\n1,2.0\n0,1.0\n1,3.0\n"))
    np.testing.assert_array_equal(d.samples[1], [2.0, 3.0])


@pytest.mark.parametrize("text, err, line", [
    ("sample_id,value\n0,1.0\n2,2.0\n", MissingSample, None),
    ("sample_id,value\n0,1.0\n1,abc\n", ParseError, 3),
    ("sample_id,value\n0,1.0\n1,inf\n", ParseError, 3),
    ("sample_id,value\n0,1.0\nx,2\n", ParseError, 3),
    ("id,value\n0,1.0\n", ParseError, 1),
    ("sample_id,value\n0,1.0,3\n", ParseError, 2),
    ("sample_id,value\n", EmptySample, None),
    ("sample_id,value\n0,1.0\n0,2.0\n", MissingSample, None),
])
def test_ingest_errors(text, err, line):
    with pytest.raises(err) as info:
        ingest_text(io.StringIO(text))
    if line is not None:
        assert info.value.line == line
    if err is MissingSample:
        assert info.value.index == 1


@settings(max_examples=40, deadline=None)
@given(st.lists(st.lists(st.floats(allow_nan=False, allow_infinity=False), min_size=1,
                         max_size=8), min_size=2, max_size=4))
def test_round_trip(samples):
    data = MultiSample(samples)
    buf = io.StringIO()
    emit_samples(data, buf)
    back = ingest_text(io.StringIO(buf.getvalue()))
    for a, b in zip(data.samples, back.samples):
        np.testing.assert_array_equal(a, b)


def test_parse_levels():
    lv = parse_levels("0.05:0.95:0.05")
    assert len(lv) == 19 and lv[0] == 0.05 and lv[-1] == 0.95
    assert parse_levels("0.1, 0.5") == [0.1, 0.5]
    assert parse_levels("") == []


def _records(capsys):
    out = capsys.readouterr().out
    return list(csv.DictReader(io.StringIO(out)))


def test_quantile_records(gamma_file, capsys):
    assert main(["quantile", "-i", gamma_file, "--basis", "1,x,log", "--format", "csv"]) == 0
    rows = _records(capsys)
    assert len(rows) == 3 * 19
    for r in "012":
        assert sum(row["population"] == r for row in rows) == 19
    # six significant digits
    assert all(len(row["value"].replace(".", "").replace("-", "").lstrip("0")) <= 6
               for row in rows)


def test_empty_levels_give_header_only(gamma_file, capsys):
    assert main(["quantile", "-i", gamma_file, "--levels", "", "--format", "csv"]) == 0
    assert capsys.readouterr().out == "population,level,metric,value\n"


def test_fit_and_ci_text(gamma_file, capsys):
    assert main(["fit", "-i", gamma_file]) == 0
    assert "theta[x]" in capsys.readouterr().out
    assert main(["ci", "-i", gamma_file, "--levels", "0.5", "--diff", "0,1",
                 "--format", "csv"]) == 0
    rows = _records(capsys)
    assert {row["population"] for row in rows} == {"0", "1", "2", "0-1"}
    lo = float(next(r["value"] for r in rows if r["population"] == "0" and r["metric"] == "el_lo"))
    hi = float(next(r["value"] for r in rows if r["population"] == "0" and r["metric"] == "el_hi"))
    assert lo < hi


def test_config_file_and_override(gamma_file, tmp_path, capsys):
    cfg = _write(tmp_path, "levels = 0.25,0.75\nformat = csv\nbasis = 1,x\n", "run.cfg")
    assert main(["quantile", "-i", gamma_file, "--config", cfg]) == 0
    assert len(_records(capsys)) == 6
    assert main(["quantile", "-i", gamma_file, "--config", cfg, "--levels", "0.5"]) == 0
    assert len(_records(capsys)) == 3


def test_exit_codes(tmp_path, gamma_file):
    assert main(["nope"]) == 2
    assert main(["quantile"]) == 2
    assert main(["quantile", "-i", gamma_file, "--levels", "2"]) == 2
    assert main(["quantile", "-i", gamma_file, "--basis", "1,bogus"]) == 2
    assert main(["ci", "-i", gamma_file, "--diff", "0,0"]) == 2
    assert main(["quantile", "-i", str(tmp_path / "missing.csv")]) == 3
    bad = _write(tmp_path, "sample_id,value\n0,1\n1,zz\n", "bad.csv")
    assert main(["fit", "-i", bad]) == 3
    flat = _write(tmp_path, "sample_id,value\n0,2\n0,2\n1,2\n", "flat.csv")
    assert main(["fit", "-i", flat, "--basis", "1,x"]) == 4
    neg = _write(tmp_path, "sample_id,value\n0,-1\n0,2\n1,2\n1,3\n", "neg.csv")
    assert main(["fit", "-i", neg, "--basis", "1,x,log"]) == 3


def test_simulate_writes_table_grid(tmp_path, capsys):
    out = tmp_path / "sim"
    assert main(["simulate", "--design", "gamma50", "--reps", "3", "--seed", "1",
                 "--out", str(out), "--format", "csv"]) == 0
    capsys.readouterr()
    rows = list(csv.DictReader(open(out / "metrics.csv")))
    var_rows = [r for r in rows if r["metric"] == "var_ratio"]
    assert len({r["population"] for r in var_rows}) == 6
    assert len({r["level"] for r in var_rows}) == 5
    assert len(var_rows) == 30
    assert "EL and EM quantiles" in (out / "report.txt").read_text()
