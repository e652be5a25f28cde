"""End-to-end command tests: files in, files out, exact exit codes.

Each command runs through cli.main with argv lists, never a subprocess,
so coverage and error objects stay inspectable.  Byte-identity checks
re-run the same config and compare raw file contents.
"""

import json
from fractions import Fraction as F

import pytest

from laakso_tst.cli import generate_points, load_points, main
from laakso_tst.inverse_system import diamond_system, laakso_system
from laakso_tst.metric_graph import MetricGraph
from laakso_tst.monotone_beta import least_geodesic
from laakso_tst.tst_verify import Curve, curve_emit, curve_ingest


def run(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    return code, captured.out, captured.err


# -- build ---------------------------------------------------------------------


def test_build_dumps_levels(tmp_path, capsys):
    out = tmp_path / "dumps"
    code, stdout, _ = run(capsys, "build", "--system", "diamond",
                          "--max-level", "2", "--out-dir", str(out))
    assert code == 0
    summary = json.loads(stdout)
    assert summary["m"] == 4
    assert [lv["edges"] for lv in summary["levels"]] == [1, 6, 36]
    g1 = MetricGraph.load(out / "level_1.json")
    assert g1.num_edges == 6 and g1.level == 1
    assert (out / "summary.json").exists()


def test_build_laakso_counts(tmp_path, capsys):
    out = tmp_path / "dumps"
    code, stdout, _ = run(capsys, "build", "--system", "laakso",
                          "--max-level", "2", "--out-dir", str(out))
    assert code == 0
    summary = json.loads(stdout)
    assert [lv["edges"] for lv in summary["levels"]] == [1, 4, 16]


# -- validate --------------------------------------------------------------------


def test_validate_passes_diamond(tmp_path, capsys):
    out = tmp_path / "report.json"
    code, stdout, _ = run(capsys, "validate", "--system", "diamond",
                          "--max-level", "3", "--out", str(out))
    assert code == 0
    report = json.loads(out.read_text())
    assert report["passed"] is True
    assert json.loads(stdout) == report


def test_validate_custom_spec_file(tmp_path, capsys):
    spec = {"kind": "laakso"}
    path = tmp_path / "sys.json"
    path.write_text(json.dumps(spec))
    code, _, _ = run(capsys, "validate", "--system", str(path),
                     "--max-level", "2")
    assert code == 0


def test_validate_rejects_unknown_system(capsys):
    code, _, err = run(capsys, "validate", "--system", "nonexistent.json",
                       "--max-level", "2")
    assert code == 1
    obj = json.loads(err)
    assert obj["error"]["type"] == "ParseError"


def test_bad_usage_is_input_error(capsys):
    code, _, err = run(capsys, "validate", "--max-level", "2")
    assert code == 1
    assert json.loads(err)["error"]["type"] == "ParseError"


# -- beta ------------------------------------------------------------------------


def test_beta_empty_points_all_zero(tmp_path, capsys):
    pts = tmp_path / "points.json"
    pts.write_text("[]")
    out = tmp_path / "beta.csv"
    code, stdout, _ = run(capsys, "beta", "--system", "diamond",
                          "--points", str(pts), "--max-level", "1",
                          "--depth", "2", "--out", str(out))
    assert code == 0
    assert json.loads(stdout)["positive_beta"] == 0
    rows = out.read_text().strip().split("\n")
    assert rows[0] == "level,edge_id,beta_lo,beta_hi,diam,mode"
    assert len(rows) > 1
    for row in rows[1:]:
        cells = row.split(",")
        assert cells[2] == "0" and cells[3] == "0"


def test_beta_rows_and_thread_invariance(tmp_path, capsys):
    g2 = diamond_system().level(2)
    track = least_geodesic(g2)
    pts = [[int(track.columns[k]), "1/48"] for k in (3, 9)]
    f = tmp_path / "points.json"
    f.write_text(json.dumps(pts))
    out1 = tmp_path / "one.csv"
    out2 = tmp_path / "two.csv"
    code1, _, _ = run(capsys, "beta", "--system", "diamond",
                      "--points", str(f), "--max-level", "1",
                      "--depth", "2", "--out", str(out1))
    code2, _, _ = run(capsys, "beta", "--system", "diamond",
                      "--points", str(f), "--max-level", "1",
                      "--depth", "2", "--out", str(out2),
                      "--threads", "4")
    assert code1 == code2 == 0
    assert out1.read_bytes() == out2.read_bytes()


def test_beta_coordinate_sequence_points(tmp_path, capsys):
    sys_ = diamond_system()
    g2 = sys_.level(2)
    track = least_geodesic(g2)
    eid = int(track.columns[0])
    from laakso_tst.limit_space import LimitPoint
    from laakso_tst.metric_graph import GraphPoint
    lp = LimitPoint.from_point(sys_, 2, GraphPoint(eid, F(1, 48)), 2)
    seq = [[int(lp.at(k).edge), f"{lp.at(k).offset.numerator}/"
            f"{lp.at(k).offset.denominator}"] for k in range(3)]
    f = tmp_path / "points.json"
    f.write_text(json.dumps([seq]))
    out = tmp_path / "beta.csv"
    code, _, _ = run(capsys, "beta", "--system", "diamond",
                     "--points", str(f), "--max-level", "0",
                     "--depth", "2", "--out", str(out))
    assert code == 0

    # a corrupted level entry must be rejected
    seq_bad = [list(pair) for pair in seq]
    seq_bad[1][0] = seq_bad[1][0] + 1
    f.write_text(json.dumps([seq_bad]))
    code, _, err = run(capsys, "beta", "--system", "diamond",
                       "--points", str(f), "--max-level", "0",
                       "--depth", "2", "--out", str(out))
    assert code == 1
    assert json.loads(err)["error"]["type"] == "ParseError"


def test_generate_points_deterministic():
    sys_ = diamond_system()
    a = generate_points(sys_, 3, 8, 42)
    b = generate_points(sys_, 3, 8, 42)
    c = generate_points(sys_, 3, 8, 43)
    assert a == b
    assert a != c


# -- verify-sum --------------------------------------------------------------------


def test_verify_sum_roundtrip(tmp_path, capsys):
    sys_ = diamond_system()
    g2 = sys_.level(2)
    curve = Curve(sys_, 2, least_geodesic(g2).columns)
    cf = tmp_path / "curve.json"
    curve_emit(curve, cf)
    assert curve_ingest(sys_, cf).edges == curve.edges
    out = tmp_path / "jones.csv"
    code, stdout, _ = run(capsys, "verify-sum", "--system", "diamond",
                          "--curve", str(cf), "--p", "2",
                          "--max-level", "2", "--out", str(out))
    assert code == 0
    summary = json.loads(stdout)
    assert summary["curve_length"] == "1"
    header = out.read_text().split("\n")[0]
    assert header.startswith("family,level,count,sum_lo,sum_hi")


def test_verify_sum_idempotent_bytes(tmp_path, capsys):
    sys_ = laakso_system()
    curve = Curve(sys_, 2, least_geodesic(sys_.level(2)).columns)
    cf = tmp_path / "curve.json"
    curve_emit(curve, cf)
    outs = []
    for name in ("a.csv", "b.csv"):
        out = tmp_path / name
        code, _, _ = run(capsys, "verify-sum", "--system", "laakso",
                         "--curve", str(cf), "--p", "1",
                         "--max-level", "2", "--out", str(out),
                         "--threads", "3")
        assert code == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_verify_sum_missing_curve(capsys, tmp_path):
    code, _, err = run(capsys, "verify-sum", "--system", "diamond",
                       "--curve", str(tmp_path / "nope.json"), "--p", "1",
                       "--max-level", "1", "--out", str(tmp_path / "o.csv"))
    assert code == 1
    assert "error" in json.loads(err)


# -- counterexample -----------------------------------------------------------------


def test_counterexample_small_range(tmp_path, capsys):
    out = tmp_path / "ce.csv"
    code, stdout, _ = run(capsys, "counterexample", "--system", "diamond",
                          "--n-range", "2..4", "--p", "1",
                          "--out", str(out))
    assert code == 0
    summary = json.loads(stdout)
    assert summary["h1_all_two"] is True
    assert summary["increasing"] is True
    rows = out.read_text().strip().split("\n")
    assert rows[0].startswith("N,h1,")
    assert len(rows) == 4
    los = [F(r.split(",")[3]) for r in rows[1:]]
    assert los[0] < los[1] < los[2]


def test_counterexample_bad_range(capsys, tmp_path):
    code, _, err = run(capsys, "counterexample", "--system", "diamond",
                       "--n-range", "7..4", "--p", "1",
                       "--out", str(tmp_path / "x.csv"))
    assert code == 1
    assert json.loads(err)["error"]["type"] == "ParseError"


# -- construct ----------------------------------------------------------------------


def test_construct_end_to_end(tmp_path, capsys):
    sys_ = diamond_system()
    g3 = sys_.level(3)
    track = least_geodesic(g3)
    pts = [[int(track.columns[k]), "1/256"] for k in (5, 21, 40, 59)]
    f = tmp_path / "points.json"
    f.write_text(json.dumps(pts))
    oc = tmp_path / "curve.json"
    orep = tmp_path / "report.json"
    code, stdout, _ = run(capsys, "construct", "--system", "diamond",
                          "--points", str(f), "--epsilon", "1/1072",
                          "--depth", "3", "--out-curve", str(oc),
                          "--out-report", str(orep))
    assert code == 0
    assert json.loads(stdout)["containment"] is True
    report = json.loads(orep.read_text())
    assert report["epsilon"] == "1/1072"
    assert report["checks"]["stage_invariants"] is True
    assert report["checks"]["budgets"] is True
    assert report["runs"], "expected at least one stage-machine run"
    run0 = report["runs"][0]
    assert run0["stages"][0]["level"] == report["root_level"]
    assert all("edges" in st for st in run0["stages"])
    for cert in run0["certificates"]:
        assert cert["passed"] is True
    curve = curve_ingest(sys_, oc)
    assert curve.connected


def test_construct_idempotent_and_thread_invariant(tmp_path, capsys):
    pts = [[0, "1/256"], [40, "3/256"]]
    f = tmp_path / "points.json"
    f.write_text(json.dumps(pts))
    blobs = []
    for name, threads in (("a", "1"), ("b", "1"), ("c", "3")):
        oc = tmp_path / f"{name}.curve.json"
        orep = tmp_path / f"{name}.report.json"
        code, _, _ = run(capsys, "construct", "--system", "diamond",
                         "--points", str(f), "--epsilon", "1/300",
                         "--depth", "3", "--out-curve", str(oc),
                         "--out-report", str(orep), "--threads", threads)
        assert code == 0
        blobs.append(oc.read_bytes() + orep.read_bytes())
    assert blobs[0] == blobs[1] == blobs[2]


def test_construct_generated_cloud_laakso(tmp_path, capsys):
    oc = tmp_path / "curve.json"
    orep = tmp_path / "report.json"
    code, _, _ = run(capsys, "construct", "--system", "laakso",
                     "--gen", "5", "--seed", "7", "--depth", "3",
                     "--out-curve", str(oc), "--out-report", str(orep))
    assert code == 0
    report = json.loads(orep.read_text())
    assert report["seed"] == 7
    assert report["containment"]["passed"] is True


def test_construct_rejects_bad_epsilon(tmp_path, capsys):
    f = tmp_path / "points.json"
    f.write_text(json.dumps([[0, "1/256"]]))
    code, _, err = run(capsys, "construct", "--system", "diamond",
                       "--points", str(f), "--epsilon", "3/2",
                       "--depth", "3", "--out-curve", str(tmp_path / "c"),
                       "--out-report", str(tmp_path / "r"))
    assert code == 1
    assert json.loads(err)["error"]["type"] == "InputError"


def test_load_points_rejects_garbage(tmp_path):
    sys_ = diamond_system()
    f = tmp_path / "points.json"
    f.write_text("{\"not\": \"a list\"}")
    with pytest.raises(Exception) as exc:
        load_points(sys_, str(f), 2)
    assert "list" in str(exc.value)
