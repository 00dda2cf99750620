import json
import subprocess
import sys

import pytest

from ttsvd.cli import main, model_ranks, parse_shape
from ttsvd.report import FIELDS, Report, emit_report, parse_report, render
from ttsvd.train import load_tt


def run(capsys, *argv):
    code = main(list(argv))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_parse_shape():
    assert parse_shape("2^5") == (2,) * 5
    assert parse_shape("4x4x2") == (4, 4, 2)
    assert parse_shape("7") == (7,)


def test_model_ranks():
    assert model_ranks((2,) * 6, 5) == (1, 2, 4, 5, 4, 2, 1)


def test_decompose_tsqr_verify(capsys, tmp_path):
    code, out, _ = run(capsys, "decompose", "--shape", "2^12", "--rmax", "4", "--variant", "tsqr",
                       "--seed", "1", "--verify", "--format", "json", "--tt-out", str(tmp_path / "a.tt"))
    assert code == 0
    rep = json.loads(out)
    assert rep["meta"]["ranks"][-4:] == [4, 4, 2, 1]
    assert "error" in rep["meta"]
    assert load_tt(tmp_path / "a.tt").ranks == tuple(rep["meta"]["ranks"])
    phases = {r["phase"] for r in rep["rows"]}
    assert {"tsqr", "small-svd", "tsmm", "total"} <= phases


def test_decompose_reference_lossless(capsys):
    code, out, _ = run(capsys, "decompose", "--shape", "4x4x4", "--eps", "0", "--rmax", "64",
                       "--variant", "reference", "--verify", "--format", "json")
    assert code == 0 and json.loads(out)["meta"]["error"] <= 1e-12


def test_decompose_thick_modeled_volume(capsys):
    code, out, _ = run(capsys, "decompose", "--shape", "2^20", "--rmax", "1", "--variant", "thick",
                       "--f1min", "0.0625", "--format", "json")
    assert code == 0
    model = json.loads(out)["meta"]["model"]
    assert model["bound_volume_elements"] == pytest.approx(2.2)
    assert model["per_step_volume_elements"] == pytest.approx(2.2, rel=0.1)


def test_csv_rows_are_steps_times_phases(capsys):
    code, out, _ = run(capsys, "decompose", "--shape", "2^6", "--rmax", "2", "--variant", "tsqr")
    assert code == 0
    rep = parse_report(out, "csv")
    steps = [r for r in rep.rows if r["phase"] != "total"]
    assert len(steps) == 5 * 3
    assert out.splitlines()[len(rep.meta)] == ",".join(FIELDS)


@pytest.mark.parametrize("variant", ["two-sided", "distributed"])
def test_other_variants(capsys, variant):
    code, out, _ = run(capsys, "decompose", "--shape", "4x2x2x2x2", "--variant", variant,
                       "--partitions", "2", "--eps", "0.1", "--verify", "--format", "json")
    assert code == 0 and json.loads(out)["meta"]["error"] <= 0.1 + 1e-10


def test_exit_codes(capsys, tmp_path):
    with pytest.raises(SystemExit) as e:
        main(["decompose", "--shape", "2^4", "--variant", "nope"])
    assert e.value.code == 2
    assert run(capsys, "decompose", "--shape", "2^x")[0] == 2
    assert run(capsys, "decompose", "--shape", "5")[0] == 3
    assert run(capsys, "decompose", "--shape", "1024^4")[0] == 3
    assert run(capsys, "bench", "--shape", "2^4", "--repeats", "1")[0] == 2
    assert run(capsys, "model", "--shape", "2^4", "--profile", str(tmp_path / "missing"))[0] == 2
    assert run(capsys, "decompose", "--shape", "2^4", "--variant", "distributed",
               "--partitions", "3")[0] == 3


def test_memory_budget_exit(monkeypatch, capsys):
    from ttsvd import tensor

    monkeypatch.setattr(tensor, "memory_budget", 4096)
    assert run(capsys, "decompose", "--shape", "2^12")[0] == 3


def test_bench_protocol(capsys):
    code, out, _ = run(capsys, "bench", "--shape", "2^10", "--rmax", "2", "--variant", "tsqr,thick",
                       "--repeats", "3", "--no-checks", "--format", "json", "--threads", "1")
    assert code == 0
    rep = json.loads(out)
    v = rep["meta"]["variants"]
    assert len(v["tsqr"]["samples"]) == len(v["thick"]["samples"]) == 2
    assert v["tsqr"]["ranks"] == v["thick"]["ranks"]
    assert v["tsqr"]["min_seconds"] <= v["tsqr"]["median_seconds"]
    samples = [r for r in rep["rows"] if r["phase"] == "sample"]
    assert len(samples) == 4


def test_bench_volume_ratio(capsys):
    code, out, _ = run(capsys, "bench", "--shape", "2^20", "--rmax", "1", "--variant", "tsqr,thick",
                       "--repeats", "2", "--no-checks", "--format", "json", "--threads", "1")
    v = json.loads(out)["meta"]["variants"]
    ratio = v["thick"]["model"]["per_step_bytes"] / v["tsqr"]["model"]["per_step_bytes"]
    assert ratio == pytest.approx(19 / 43, rel=0.2)
    counted = v["thick"]["counter_bytes"] / v["tsqr"]["counter_bytes"]
    assert counted == pytest.approx(19 / 43, rel=0.2)


def test_bench_checks_record_warnings(capsys):
    code, out, _ = run(capsys, "bench", "--shape", "2^12", "--rmax", "1", "--repeats", "2",
                       "--format", "json", "--threads", "1")
    assert code == 0
    checks = json.loads(out)["meta"]["checks"]
    assert set(checks["tsqr"]) == {"1", "2", "4", "8", "16"}
    assert checks["copy_bandwidth"] > 0 and checks["thick_rmax1"]["ratio"] > 0


def test_bench_deterministic_fields(capsys):
    reps = []
    for _ in range(2):
        _, out, _ = run(capsys, "bench", "--shape", "2^9", "--rmax", "3", "--variant", "two-sided",
                        "--repeats", "2", "--no-checks", "--format", "json", "--threads", "2")
        rows = json.loads(out)["rows"]
        reps.append([{k: r[k] for k in FIELDS if k != "seconds"} for r in rows])
    assert reps[0] == reps[1]


def test_model_command(capsys, tmp_path):
    code, out, _ = run(capsys, "model", "--shape", "2^30", "--rmax", "1")
    assert code == 0
    total = [l for l in out.splitlines() if l.startswith("total")][0]
    assert "12.89 GFlop" in total and "42.95 GByte" in total
    (tmp_path / "inf.cfg").write_text("name = inf\np_max = inf\n")
    code, out, _ = run(capsys, "model", "--shape", "2^16", "--rmax", "4", "--profile",
                       str(tmp_path / "inf.cfg"), "--format", "json")
    assert code == 0
    assert {r["seconds"] > 0 for r in json.loads(out)["rows"]} == {True}
    assert "compute" not in out


def _model_bytes(capsys, *extra):
    _, out, _ = run(capsys, "model", "--shape", "2^24", "--format", "json", *extra)
    return json.loads(out)["meta"]["per_step_bytes"]


def test_model_volume_ordering(capsys):
    # with m_min = 1 the f1min sweep alone selects the merged width
    vols = [_model_bytes(capsys, "--rmax", "4", "--variant", "thick", "--mmin", "1", "--f1min", f)
            for f in ("1", "0.5", "0.0625")]
    assert vols[0] > vols[1] > vols[2]
    assert vols[0] == _model_bytes(capsys, "--rmax", "4", "--variant", "tsqr")


def test_model_volume_ordering_rank_one(capsys):
    # at r_max = 1 a factor of 1/2 is already met by the plain first step
    plain = _model_bytes(capsys, "--rmax", "1", "--variant", "tsqr")
    half = _model_bytes(capsys, "--rmax", "1", "--variant", "thick", "--mmin", "1", "--f1min", "0.5")
    sixteenth = _model_bytes(capsys, "--rmax", "1", "--variant", "thick", "--f1min", "0.0625")
    assert plain >= half > sixteenth


def test_report_round_trip(tmp_path):
    rows = [{"variant": "tsqr", "shape": "2^4", "rmax": "inf", "eps": 0.1, "phase": "tsqr",
             "step": 3, "seconds": 0.1 + 0.2, "flops": 12345678901, "bytes": 7, "rank": 2}]
    rep = Report(rows, {"ranks": [1, 2, 1]})
    j = render(rep, "json")
    c = render(parse_report(j, "json"), "csv")
    back = parse_report(render(parse_report(c, "csv"), "json"), "json")
    assert back.rows == rows and back.meta == rep.meta
    assert emit_report(Report(), "csv", tmp_path / "e.csv") == len(",".join(FIELDS)) + 1
    assert (tmp_path / "e.csv").read_text() == ",".join(FIELDS) + "\n"
    with pytest.raises(ValueError):
        render(rep, "xml")


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "ttsvd", "model", "--shape", "2^8", "--rmax", "2"],
                       capture_output=True, text=True)
    assert r.returncode == 0 and "total:" in r.stdout
