import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from phononcorr.cli import data_path, run
from phononcorr.config import ConfigError, default_config, load_config, parse_config
from phononcorr.counting import CoincidenceHistogram
from phononcorr.fitting import DelayCurve

SMALL = """
[simulate]
trajectory = true
write_amplitudes = 0.01, 0.03
read_amplitudes = 0.1
read_center_ps = 1.9
write_amplitude = 0.01
read_amplitude = 0.1
delays_ps = -1, 0.5, 2

[counts]
n_reps = 2e8
"""


@pytest.fixture
def small_ini(tmp_path):
    p = tmp_path / "small.ini"
    p.write_text(SMALL)
    return p


def _header(path):
    return path.read_text().splitlines()[0]


def test_analytic_verb(tmp_path):
    out = tmp_path / "a"
    assert run(["analytic", "--out", str(out)]) == 0
    assert _header(out / "analytic_sweep.csv").startswith("read_setting,")
    for name in ("conditional_g2.csv", "mode_count.csv", "manifest.ini"):
        assert (out / name).exists()


def test_simulate_verb(tmp_path, small_ini):
    out = tmp_path / "s"
    assert run(["simulate", "--config", str(small_ini), "--out", str(out)]) == 0
    assert (out / "trajectory.csv").exists()
    rows = (out / "sweep.csv").read_text().splitlines()
    assert len(rows) == 3
    curve = DelayCurve.from_csv((out / "delay_curve.csv").read_text())
    assert len(curve) == 3 and curve.g2[1] > 10 * curve.g2[0]


def test_counts_verb(tmp_path, small_ini):
    out = tmp_path / "c"
    assert run(["counts", "--config", str(small_ini), "--out", str(out), "--seed", "3"]) == 0
    hist = CoincidenceHistogram.from_csv((out / "histogram.csv").read_text())
    assert hist.n_reps == 200_000_000 and hist.seed == 3
    assert _header(out / "g2.csv").startswith("g2,delta_g2")


def test_fit_verb_defaults(tmp_path):
    out = tmp_path / "f"
    assert run(["fit", "--out", str(out)]) == 0
    text = (out / "fit_results.csv").read_text().splitlines()
    assert text[0].startswith("curve,C,A,sigma,t0,tau")
    assert len(text) == 3
    for name in ("fit_delay_curve_a.txt", "residuals_delay_curve_b.csv", "normalized_overlay.csv"):
        assert (out / name).exists()


def test_fit_positional_curve(tmp_path):
    out = tmp_path / "f"
    assert run(["fit", str(data_path("delay_curve_b.csv")), "--out", str(out)]) == 0
    assert len((out / "fit_results.csv").read_text().splitlines()) == 2


def test_unknown_key_reports_line(tmp_path, capsys):
    bad = tmp_path / "bad.ini"
    bad.write_text("[run]\nseed = 1\n\n[simulate]\ntau_m_ns = 4\n")
    assert run(["simulate", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    err = capsys.readouterr().err
    assert "line 5" in err and "tau_m_ns" in err
    assert not (tmp_path / "o").exists()


def test_bad_value_and_section(tmp_path):
    for text in ("[run]\nseed = minus one\n", "[nope]\nx = 1\n", "[counts]\nside_error = mad\n"):
        p = tmp_path / "x.ini"
        p.write_text(text)
        assert run(["counts", "--config", str(p), "--out", str(tmp_path / "o")]) == 2


def test_malformed_curve_writes_nothing(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("delay_ps,g2,sigma_g2\n0,1,0\n1,oops,0\n")
    out = tmp_path / "o"
    assert run(["fit", str(bad), "--out", str(out)]) != 0
    assert not out.exists() or not any(out.iterdir())


def test_missing_config_file(tmp_path):
    assert run(["analytic", "--config", str(tmp_path / "none.ini")]) == 2


def test_numerical_failure_exit_code(tmp_path):
    p = tmp_path / "big.ini"
    p.write_text("[simulate]\ntrajectory = false\nwrite_amplitudes = 1.5\nread_amplitudes = 0.1\n")
    assert run(["simulate", "--config", str(p), "--out", str(tmp_path / "o")]) == 3


def test_negative_seed_rejected(tmp_path):
    assert run(["counts", "--seed", "-1", "--out", str(tmp_path / "o")]) == 2


def test_seed_determinism(tmp_path, small_ini):
    a, b, c = tmp_path / "a", tmp_path / "b", tmp_path / "c"
    for d, seed in ((a, "5"), (b, "5"), (c, "6")):
        assert run(["counts", "--config", str(small_ini), "--out", str(d), "--seed", seed]) == 0
    assert (a / "histogram.csv").read_bytes() == (b / "histogram.csv").read_bytes()
    assert (a / "histogram.csv").read_bytes() != (c / "histogram.csv").read_bytes()


def test_manifest_replay_is_bit_identical(tmp_path, small_ini):
    first, second = tmp_path / "first", tmp_path / "second"
    assert run(["counts", "--config", str(small_ini), "--out", str(first), "--seed", "8"]) == 0
    assert run(["counts", "--config", str(first / "manifest.ini"), "--out", str(second)]) == 0
    for name in ("histogram.csv", "g2.csv"):
        assert (first / name).read_bytes() == (second / name).read_bytes()


def test_fit_manifest_replay(tmp_path):
    first, second = tmp_path / "first", tmp_path / "second"
    assert run(["fit", "--out", str(first)]) == 0
    assert run(["fit", "--config", str(first / "manifest.ini"), "--out", str(second)]) == 0
    assert (first / "fit_results.csv").read_bytes() == (second / "fit_results.csv").read_bytes()


def test_config_round_trip():
    cfg = load_config(data_path("default.ini"))
    again = parse_config(cfg.to_text())
    for name in ("run", "analytic", "simulate", "counts", "fit"):
        assert again.section(name) == cfg.section(name)
    assert parse_config(default_config().to_text()).to_text() == default_config().to_text()


def test_config_errors_carry_line_numbers():
    with pytest.raises(ConfigError, match="line 3"):
        parse_config("[run]\nseed = 1\nbogus = 2\n")
    with pytest.raises(ConfigError):
        parse_config("[simulate]\ntau_m_ps = -4\n")


def test_outputs_stay_in_out_dir(tmp_path, small_ini):
    out = tmp_path / "nested" / "dir"
    before = set(tmp_path.rglob("*"))
    assert run(["counts", "--config", str(small_ini), "--out", str(out)]) == 0
    created = set(tmp_path.rglob("*")) - before
    assert all(out in p.parents or p == out or p in out.parents for p in created)
    assert not [p for p in out.iterdir() if p.name.startswith(".staging")]


def test_reproduce_fig3c(tmp_path):
    out = tmp_path / "r"
    assert run(["reproduce", "fig3c", "--out", str(out)]) == 0
    lines = (out / "report.csv").read_text().splitlines()
    assert lines[0] == "target,metric,value,threshold,result"
    assert all(line.endswith(",PASS") for line in lines[1:])


def test_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "phononcorr", "--version"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "0.1.0" in proc.stdout
    proc = subprocess.run([sys.executable, "-m", "phononcorr", "reproduce", "fig9"],
                          capture_output=True, text=True)
    assert proc.returncode == 2


def test_histogram_matches_library(tmp_path, small_ini):
    out = tmp_path / "c"
    assert run(["counts", "--config", str(small_ini), "--out", str(out), "--seed", "1"]) == 0
    hist = CoincidenceHistogram.from_csv((out / "histogram.csv").read_text())
    g2_line = (out / "g2.csv").read_text().splitlines()[1].split(",")
    from phononcorr.counting import extract_g2

    assert float(g2_line[0]) == pytest.approx(extract_g2(hist).g2, rel=1e-12)
    assert np.isfinite(float(g2_line[1]))


def test_data_files_packaged():
    for name in ("default.ini", "fig3c.ini", "fig5.ini", "decay.ini", "delay_curve_a.csv"):
        assert Path(data_path(name)).is_file()
