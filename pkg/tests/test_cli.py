import json
import subprocess
import sys
import time
import xml.etree.ElementTree as ET

import numpy as np
import pytest

from rstopo.cli import EXIT_NUMERIC, EXIT_OK, EXIT_PARSE, EXIT_USAGE, main
from rstopo.diagram import PersistenceDiagram, read_diagram, write_diagram
from rstopo.field import sample_two_circles, write_cloud
from rstopo.inference import order_stat_test
from rstopo.svg import diagram_svg, emit_svg, report_svg

FAST = ["--burn-in", "20", "--schedule", "10,3,2", "--workers", "1"]


@pytest.fixture
def cloud_file(tmp_path):
    p = tmp_path / "cloud.csv"
    write_cloud(sample_two_circles(120, 80, seed=1, jitter=0.05), p)
    return p


def _diagram(tmp_path, seed, n=30, name="d.csv"):
    rng = np.random.default_rng(seed)
    b = rng.normal(size=n)
    pd = PersistenceDiagram.from_pairs(np.column_stack([b, b + rng.exponential(size=n)]))
    write_diagram(pd, tmp_path / name)
    return tmp_path / name


def test_pd_command(tmp_path, cloud_file, capsys):
    out = tmp_path / "pd"
    assert main(["pd", str(cloud_file), "--grid", "48,48", "--out", str(out)]) == EXIT_OK
    h0 = read_diagram(out / "diagram_h0.csv")
    assert h0.degree == 0 and h0.essential.sum() == 1
    assert read_diagram(out / "diagram_h1.csv").degree == 1
    ET.parse(out / "diagram.svg")
    run = json.loads((out / "run.json").read_text())
    assert run["command"] == "pd" and "workers" not in run["flags"]
    assert list(run["flags"]) == sorted(run["flags"])
    assert "degree 0:" in capsys.readouterr().out


def test_fit_replicate_test_chain(tmp_path):
    d = _diagram(tmp_path, 0)
    assert main(["fit", str(d), "--out", str(tmp_path / "m")]) == EXIT_OK
    model = json.loads((tmp_path / "m" / "model.json").read_text())
    assert model["trace"]["converged"]
    assert main(["replicate", str(d), str(tmp_path / "m" / "model.json"),
                 "--out", str(tmp_path / "e"), *FAST]) == EXIT_OK
    assert (tmp_path / "e" / "ensemble.json").is_file()
    assert main(["test", str(d), str(tmp_path / "e"), "--J", "3",
                 "--out", str(tmp_path / "t")]) == EXIT_OK
    rep = json.loads((tmp_path / "t" / "report.json").read_text())
    assert len(rep["rows"]) == 3
    assert all(1 / 7 <= r["p_value"] <= 1 for r in rep["rows"])
    ET.parse(tmp_path / "t" / "report.svg")


def test_compare_command(tmp_path):
    a, b = _diagram(tmp_path, 1, name="a.csv"), _diagram(tmp_path, 2, name="b.csv")
    assert main(["compare", str(a), str(b), "--out", str(tmp_path / "c"), *FAST]) == EXIT_OK
    rep = json.loads((tmp_path / "c" / "report.json").read_text())
    assert set(rep["significant"]) == {"bh", "bonferroni"}


def test_exit_codes(tmp_path, capsys):
    d = _diagram(tmp_path, 3)
    assert main(["fit", str(tmp_path / "missing.csv"), "--out", str(tmp_path)]) == EXIT_PARSE
    err = capsys.readouterr().err
    assert err.startswith("error code=3 kind=parse message=") and "missing.csv" in err
    bad = tmp_path / "bad.csv"
    bad.write_text("degree,birth,death,essential\n0,2,1,false\n")
    assert main(["fit", str(bad), "--out", str(tmp_path)]) == EXIT_PARSE
    assert main(["fit", str(d), "--K", "0", "--out", str(tmp_path)]) == EXIT_NUMERIC
    assert main(["replicate", str(d), str(d), "--out", str(tmp_path)]) == EXIT_PARSE
    assert main(["fit", str(d), "--bogus"]) == EXIT_USAGE
    assert main(["replicate", str(d), str(d), "--workers", "0", "--out", str(tmp_path)]) \
        == EXIT_USAGE
    one = tmp_path / "one.csv"
    one.write_text("degree,birth,death,essential\n0,0,1,false\n")
    assert main(["fit", str(one), "--out", str(tmp_path)]) == EXIT_USAGE
    capsys.readouterr()


def test_model_for_other_diagram_rejected(tmp_path, capsys):
    a, b = _diagram(tmp_path, 4, name="a.csv"), _diagram(tmp_path, 5, name="b.csv")
    assert main(["fit", str(a), "--out", str(tmp_path / "m")]) == EXIT_OK
    code = main(["replicate", str(b), str(tmp_path / "m" / "model.json"),
                 "--out", str(tmp_path / "e"), *FAST])
    assert code == EXIT_PARSE and "fingerprint" in capsys.readouterr().err


def test_console_entry_point_version():
    out = subprocess.run([sys.executable, "-m", "rstopo.cli", "--version"],
                         capture_output=True, text=True, check=True)
    assert out.stdout.startswith("rstopo ")


# --- svg --------------------------------------------------------------------------

def test_empty_diagram_svg_is_well_formed():
    root = ET.fromstring(diagram_svg(PersistenceDiagram.from_pairs([])))
    assert root.tag.endswith("svg")


def test_diagram_svg_marks_each_point():
    pd0 = PersistenceDiagram.from_pairs([(0, 1), (0.5, 2)])
    pd1 = PersistenceDiagram.from_pairs([(1, 3)], degree=1)
    root = ET.fromstring(diagram_svg([pd0, pd1], title="a & b"))
    groups = {g.get("data-degree"): [el.tag.split("}")[-1] for el in g]
              for g in root.iter() if g.get("data-degree") is not None}
    assert groups == {"0": ["circle", "circle"], "1": ["path"]}


def test_report_svg_and_emit(tmp_path):
    reps = [PersistenceDiagram.from_pairs([(0, 1 + i / 10), (0, 0.5)]) for i in range(20)]
    rep = order_stat_test(reps[0], reps, 2)
    ET.fromstring(report_svg(rep))
    emit_svg(rep, tmp_path / "r.svg")
    ET.parse(tmp_path / "r.svg")
    with pytest.raises(TypeError):
        emit_svg(42, tmp_path / "x.svg")


def test_large_diagram_svg_is_fast():
    rng = np.random.default_rng(0)
    b = rng.normal(size=27_000)
    pd = PersistenceDiagram.from_pairs(np.column_stack([b, b + rng.exponential(size=27_000)]))
    t0 = time.perf_counter()
    text = diagram_svg(pd)
    assert time.perf_counter() - t0 < 2.0
    ET.fromstring(text)
