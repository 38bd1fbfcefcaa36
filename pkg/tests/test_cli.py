import numpy as np
import pytest

from hdgbiot import cli, study
from hdgbiot.properties import run_property_suite
from hdgbiot.study import StudyConfig, StudyError, parse_dt_ladder, run_spatial_study, run_temporal_study

QUICK = ["--degree", "1", "--final-time", "0.002"]


def test_flags_override_config_file(tmp_path):
    cfg = tmp_path / "s.cfg"
    cfg.write_text("# comment\ndegree = 2\nlevels = 3\nmu_f = 0.5\nout = a\n")
    args = cli.build_parser().parse_args(["--config", str(cfg), "--degree", "3", "--mu-f", "0.25"])
    c = cli.config_from_args(args)
    assert (c.degree, c.levels, c.out) == (3, 3, "a")
    assert c.parameters().mu_f == 0.25


def test_every_config_field_has_a_flag():
    parser = cli.build_parser()
    dests = {a.dest for a in parser._actions}
    fields = {f for f in StudyConfig.__dataclass_fields__ if f != "params"}
    assert fields | set(study.PARAM_KEYS) <= dests


@pytest.mark.parametrize("text", ["degree 2", "color = red", "degree = x"])
def test_bad_config_file(tmp_path, text):
    cfg = tmp_path / "s.cfg"
    cfg.write_text(text + "\n")
    assert cli.main(["--config", str(cfg)]) == 2


def test_dt_ladder():
    assert parse_dt_ladder("T/8, T/16,T", 0.01) == pytest.approx([0.00125, 0.000625, 0.01])
    assert parse_dt_ladder("0.0025", 0.01) == pytest.approx([0.0025])
    for bad in ("T/3.5", "0", "-T", "0.003"):
        with pytest.raises(ValueError):
            parse_dt_ladder(bad, 0.01)


def test_config_validation():
    for kw in ({"study": "other"}, {"degree": 0}, {"final_time": 0.0}, {"params": {"nu": 1.0}}):
        with pytest.raises(ValueError):
            StudyConfig(**kw)


def test_single_spatial_level_rejected(tmp_path):
    with pytest.raises(ValueError):
        run_spatial_study(StudyConfig(levels=1, out=str(tmp_path)))
    assert cli.main(["--levels", "1", "--out", str(tmp_path)] + QUICK) == 2


def test_single_step_temporal_run(tmp_path):
    r = run_temporal_study(StudyConfig(study="temporal", dt_ladder="T", final_time=0.002, temporal_mesh=2,
                                       out=str(tmp_path)))
    assert len(r.records) == 1 and r.final_rates() == {}
    assert study.rate_summary(r) == "none (single level)"
    assert (tmp_path / "report.csv").exists()


def test_study_error_names_level(tmp_path, monkeypatch):
    real = study.run_transient
    calls = []

    def flaky(disc, grid, **kw):
        calls.append(1)
        if len(calls) == 2:
            raise FloatingPointError("overflow")
        return real(disc, grid, **kw)

    monkeypatch.setattr(study, "run_transient", flaky)
    with pytest.raises(StudyError, match="level 1"):
        run_spatial_study(StudyConfig(levels=2, final_time=0.002, out=str(tmp_path)), write=False)
    calls.clear()
    assert cli.main(["--levels", "2", "--out", str(tmp_path)] + QUICK) == 3


def test_spatial_cli_writes_reports(tmp_path, capsys):
    assert cli.main(["--levels", "2", "--dump-fields", "--out", str(tmp_path)] + QUICK) == 0
    assert "final rates" in capsys.readouterr().out
    for name in ("report.csv", "report.md", "diagnostics.csv", "fields_level0.txt", "fields_level1.txt"):
        assert (tmp_path / name).exists(), name


def test_reports_are_byte_identical(tmp_path):
    outs = []
    for i in range(2):
        d = tmp_path / str(i)
        assert cli.main(["--levels", "2", "--out", str(d)] + QUICK) == 0
        outs.append([(d / n).read_bytes() for n in ("report.csv", "report.md", "diagnostics.csv")])
    assert outs[0] == outs[1]


def test_property_suite_over_seeds():
    for seed in range(10):
        r = run_property_suite(StudyConfig(study="properties", seed=seed), write=False)
        assert r.passed, (seed, [c.name for c in r.failures()])


def test_property_suite_catches_sign_mutation(tmp_path, capsys):
    assert cli.main(["--study", "properties", "--ah-sign", "-1", "--out", str(tmp_path)]) == 1
    out = capsys.readouterr().out
    assert "FAIL oracle a_h^f" in out
    assert (tmp_path / "report.md").exists()


def test_property_cli_passes(tmp_path):
    assert cli.main(["--study", "properties", "--seed", "5", "--out", str(tmp_path)]) == 0
