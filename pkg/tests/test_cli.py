import csv
import json

import pytest
from hypothesis import given, settings, strategies as st

from loopanomaly import cli
from loopanomaly.cli import CSV_COLUMNS, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_OK, RunConfig, field_id, main
from loopanomaly.errors import ConfigurationError, NumericalError

SMALL = {
    "estimate-b": ["--N", "2000", "--n", "64"],
    "anomaly": ["--N", "2000", "--delta", "0.04", "0.02"],
    "sweep": ["--N", "2000", "--delta", "0.04", "0.02"],
    "bruteforce": ["--N", "4000", "--delta", "0.05"],
    "spectral": ["--delta", "0.02"],
    "subdivision": [],
    "occupation": ["--N", "2000", "--n", "64"],
}


def _read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.mark.parametrize("experiment", sorted(SMALL))
def test_each_experiment_writes_reports(experiment, tmp_path):
    out = tmp_path / experiment
    assert main([experiment, "--out", str(out), "--seed", "3"] + SMALL[experiment]) == EXIT_OK
    for name in ("report.csv", "report.json", "summary.txt", "meta.json"):
        assert (out / name).is_file()
    rows = _read_csv(out / "report.csv")
    assert rows and list(rows[0]) == list(CSV_COLUMNS)
    assert all(r["seed"] == "3" for r in rows)
    rep = json.loads((out / "report.json").read_text())
    assert rep["config"]["experiment"] == experiment
    assert "workers" not in rep["config"]
    assert "wall_time_s" in json.loads((out / "meta.json").read_text())


def test_byte_identical_across_workers(tmp_path):
    for exp in ("anomaly", "bruteforce"):
        a, b = tmp_path / f"{exp}1", tmp_path / f"{exp}3"
        assert main([exp, "--out", str(a), "--workers", "1"] + SMALL[exp]) == EXIT_OK
        assert main([exp, "--out", str(b), "--workers", "3"] + SMALL[exp]) == EXIT_OK
        for name in ("report.csv", "report.json", "summary.txt"):
            assert (a / name).read_bytes() == (b / name).read_bytes()


def test_estimate_b_summary(tmp_path):
    out = tmp_path / "b"
    assert main(["estimate-b", "--out", str(out), "--N", "4000", "--n", "256"]) == EXIT_OK
    text = (out / "summary.txt").read_text()
    assert "b = " in text and "closed form b = 0.083333" in text
    rows = _read_csv(out / "report.csv")
    value, se = float(rows[0]["value"]), float(rows[0]["std_error"])
    assert abs(value - (1 - 1 / 256**2) / 12) < 5 * se


def test_anomaly_zero_field(tmp_path):
    cfg = RunConfig(experiment="anomaly", field={"kind": "zero", "box": [0, 1, 0, 1]}, deltas=[0.02],
                    N=1000, out=str(tmp_path / "z"))
    path = tmp_path / "zero.yaml"
    cfg.save(path)
    assert main(["anomaly", "--config", str(path)]) == EXIT_OK
    rows = _read_csv(tmp_path / "z" / "report.csv")
    assert {r["estimator"] for r in rows} == {"direct", "discrepancy"}
    assert all(float(r["value"]) == 0.0 and float(r["std_error"]) == 0.0 for r in rows)
    assert "every sample zero" in (tmp_path / "z" / "summary.txt").read_text()


def test_plots_written(tmp_path):
    out = tmp_path / "p"
    assert main(["sweep", "--out", str(out)] + SMALL["sweep"]) == EXIT_OK
    assert (out / "plots" / "sweep.png").stat().st_size > 0


def test_config_errors_exit_2(tmp_path, capsys):
    assert main(["anomaly", "--config", str(tmp_path / "missing.yaml")]) == EXIT_CONFIG
    bad = tmp_path / "bad.yaml"
    bad.write_text("deltas: [0.02]\nbogus_key: 1\n")
    assert main(["anomaly", "--config", str(bad)]) == EXIT_CONFIG
    assert "bogus_key" in capsys.readouterr().err
    assert main(["anomaly", "--N", "0", "--out", str(tmp_path / "x")]) == EXIT_CONFIG
    assert main(["anomaly", "--delta", "-0.1", "--out", str(tmp_path / "x")]) == EXIT_CONFIG
    grid = tmp_path / "grid.yaml"
    RunConfig(field={"kind": "grid", "path": str(tmp_path / "nope.grid")}).save(grid)
    assert main(["anomaly", "--config", str(grid)]) == EXIT_CONFIG
    assert "field.path" in capsys.readouterr().err
    unknown = tmp_path / "unknown.yaml"
    RunConfig(field={"kind": "spline"}, out=str(tmp_path / "x")).save(unknown)
    assert main(["anomaly", "--config", str(unknown)]) == EXIT_CONFIG
    mass = tmp_path / "mass.yaml"
    RunConfig(options={"loop_mass": True}, N=2000, out=str(tmp_path / "x")).save(mass)
    assert main(["spectral", "--config", str(mass), "--delta", "0.02"]) == EXIT_CONFIG


def test_numerical_errors_exit_3(tmp_path, monkeypatch, capsys):
    def boom(cfg, rep):
        raise NumericalError("did not converge")

    monkeypatch.setitem(cli.RUNNERS, "anomaly", boom)
    assert main(["anomaly", "--out", str(tmp_path / "e")]) == EXIT_NUMERICAL
    assert "did not converge" in capsys.readouterr().err


def test_field_id_stable():
    a = field_id({"kind": "zero", "box": [0, 1, 0, 1]})
    assert a == field_id({"box": [0, 1, 0, 1], "kind": "zero"})
    assert a.startswith("zero-") and len(a) == len("zero-") + 8
    assert a != field_id({"kind": "zero", "box": [0, 2, 0, 1]})


def test_seed_range():
    with pytest.raises(ConfigurationError):
        RunConfig(seed=2**64).validate()
    with pytest.raises(ConfigurationError):
        RunConfig(seed=-1).validate()
    RunConfig(seed=2**64 - 1).validate()


_fields = st.sampled_from([
    {"kind": "zero", "box": [0.0, 1.0, 0.0, 1.0]},
    {"kind": "analytic_bump", "amplitude": 0.5, "radius": 2.0, "box": [-2.5, 2.5, -2.5, 2.5]},
    {"kind": "tapered_sine", "j": 4},
])


@settings(max_examples=50, deadline=None)
@given(
    experiment=st.sampled_from(cli.EXPERIMENTS),
    field=_fields,
    deltas=st.lists(st.floats(1e-4, 1.0, allow_nan=False), min_size=1, max_size=4),
    N=st.integers(1000, 10**7),
    n=st.integers(2, 4096),
    seed=st.integers(0, 2**64 - 1),
    workers=st.integers(1, 8),
    options=st.dictionaries(st.sampled_from(["C", "L1", "estimator", "t"]),
                            st.one_of(st.floats(0.1, 10), st.text(max_size=8), st.lists(st.floats(0.1, 5), max_size=3)),
                            max_size=3),
)
def test_config_yaml_round_trip(experiment, field, deltas, N, n, seed, workers, options):
    cfg = RunConfig(experiment=experiment, field=field, deltas=deltas, N=N, n=n, seed=seed,
                    workers=workers, options=options)
    back = RunConfig.from_yaml(cfg.to_yaml())
    assert back == cfg
    assert back.to_yaml() == cfg.to_yaml()


def test_yaml_errors():
    with pytest.raises(ConfigurationError):
        RunConfig.from_yaml("[1, 2")
    with pytest.raises(ConfigurationError):
        RunConfig.from_yaml("- 1\n- 2\n")
    assert RunConfig.from_yaml("") == RunConfig()


def test_flag_overrides(tmp_path):
    path = tmp_path / "c.yaml"
    RunConfig(seed=1, N=5000).save(path)
    args = cli.build_parser().parse_args(["sweep", "--config", str(path), "--seed", "9", "--delta", "0.03"])
    cfg = cli.config_from_args(args)
    assert cfg.seed == 9 and cfg.N == 5000 and cfg.deltas == [0.03] and cfg.experiment == "sweep"
