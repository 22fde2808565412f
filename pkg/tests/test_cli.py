import hashlib
import json

from modlim.cli import EXIT_CONFIG, EXIT_FAIL, EXIT_FAULT, EXIT_PASS, format_value, main


def run_cli(tmp_path, name, *args):
    out = tmp_path / name
    code = main([*args, "--out", str(out)])
    return code, out


def csv_bodies(out):
    return {p.relative_to(out).as_posix(): p.read_bytes() for p in sorted(out.rglob("*.csv"))}


def test_format_value_round_trips():
    for v in (0.1, 1 / 3, 1e-300, 2.0 ** -7):
        assert float(format_value(v)) == v
    assert format_value(True) == "true" and format_value(None) == "" and format_value(3) == "3"


def test_scattering_run_writes_manifest(tmp_path):
    code, out = run_cli(tmp_path, "a", "scattering", "--set", "params.n_particles=[1024, 4096]",
                        "--set", "params.hbar=[1.0, 0.5]")
    assert code == EXIT_PASS
    manifest = json.loads((out / "manifest.json").read_text())
    listed = {e["path"] for e in manifest["files"]}
    on_disk = {p.relative_to(out).as_posix() for p in out.rglob("*") if p.is_file()}
    assert listed == on_disk - {"manifest.json"}
    for e in manifest["files"]:
        assert hashlib.sha256((out / e["path"]).read_bytes()).hexdigest() == e["sha256"]
    summary = json.loads((out / "summary.json").read_text())
    assert summary["counts"] == {"excluded": 1, "pass": 3}
    rows = (out / "scattering.csv").read_text().splitlines()
    assert len(rows) == 5 and "outside the regime" in rows[2]


def test_rerun_is_byte_identical(tmp_path, monkeypatch):
    args = ("nbody", "--set", "params.kappa=[0.0, 1.0]", "--seed", "5")
    monkeypatch.setenv("MODLIM_WORKERS", "1")
    _, a = run_cli(tmp_path, "a", *args)
    monkeypatch.setenv("MODLIM_WORKERS", "2")
    _, b = run_cli(tmp_path, "b", *args)
    assert csv_bodies(a) == csv_bodies(b) and len(csv_bodies(a)) == 3


def test_lemma_suite_reports_and_reproducibility(tmp_path, capsys):
    args = ("verify-lemmas", "--set", "lemmas=[mollifier, gaussian-machinery]", "--set", "trials=20",
            "--seed", "11")
    code, a = run_cli(tmp_path, "a", *args)
    assert code == EXIT_PASS
    printed = capsys.readouterr().out
    assert printed.count("PASS mollifier-rate") == 2 and "PASS gaussian-machinery" in printed
    assert {p.name for p in (a / "reports").iterdir()} == {"mollifier.json", "gaussian-machinery.json"}
    _, b = run_cli(tmp_path, "b", *args)
    assert (a / "reports" / "mollifier.json").read_bytes() == (b / "reports" / "mollifier.json").read_bytes()


def test_rate_sweep_outputs(tmp_path):
    code, out = run_cli(tmp_path, "r", "rate-sweep", "--set", "grid.n=32",
                        "--set", "params.hbar=[0.25, 0.125]")
    assert code == EXIT_PASS
    records = (out / "series" / "point-000-records.csv").read_text().splitlines()
    assert records[0].startswith("hbar,") and len(records) == 3
    report = json.loads((out / "reports" / "point-000.json").read_text())
    assert report["mass_fit"]["slope"] > 1.8
    dat = (out / "plots" / "point-000-mass_error.dat").read_text().splitlines()
    assert dat[0].startswith("#") and len(dat[1].split()) == 2


def test_config_errors_exit_2(tmp_path, capsys):
    code, _ = run_cli(tmp_path, "c", "scattering", "--set", "params.beta=1.2")
    assert code == EXIT_CONFIG
    assert "(0,1)" in capsys.readouterr().err
    cfg = tmp_path / "bad.yaml"
    cfg.write_text("experiment: scattering\nsurprise: 1\n")
    code, _ = run_cli(tmp_path, "d", "scattering", "--config", str(cfg))
    assert code == EXIT_CONFIG


def test_suite_failure_exit_1(tmp_path):
    # a frequency tolerance far below the discretisation error forces FAIL
    code, out = run_cli(tmp_path, "f", "euler", "--set", "params.kappa=1.0",
                        "--set", "tolerances.frequency=1e-9")
    assert code == EXIT_FAIL
    assert json.loads((out / "summary.json").read_text())["failures"][0]["status"] == "fail"


def test_numerical_fault_exit_3(tmp_path):
    # a step far above the acoustic stability limit trips the solver guard
    code, out = run_cli(tmp_path, "g", "euler", "--set", "times.dt=0.85", "--set", "grid.n=8")
    assert code == EXIT_FAULT
    fail = json.loads((out / "summary.json").read_text())["failures"][0]
    assert fail["status"] == "fault" and fail["reason"]


def test_point_level_configuration_error_recorded(tmp_path):
    # an 8-point grid cannot resolve V_N, so the point fails with a recorded reason
    code, out = run_cli(tmp_path, "h", "nbody", "--set", "params.n_particles=2",
                        "--set", "params.beta=0.9", "--set", "grid.n=8")
    assert code == EXIT_CONFIG
    fail = json.loads((out / "summary.json").read_text())["failures"][0]
    assert fail["status"] == "config-error"


def test_rerun_replaces_previous_outputs(tmp_path):
    out = tmp_path / "same"
    main(["scattering", "--set", "params.n_particles=[1024, 4096]", "--out", str(out)])
    main(["scattering", "--out", str(out)])
    files = {p.name for p in (out / "series").iterdir()}
    assert files == {"point-000-profile.csv"}
