import json
import math
import subprocess
import sys

import numpy as np
import pytest

from cstr import cli
from cstr.channel import FreqResponse, load_cir_file, save_freq_response_file
from cstr.errors import ConfigError

SMALL_ENSEMBLE = """
[ensemble]
n_cirs = 6
n_taps = 48
decay = 6
onset = 8
rise = 3
seed = 4
"""


def _write(tmp_path, body, name="run.toml"):
    path = tmp_path / name
    path.write_text(body)
    return path


def _read_csv(path):
    lines = path.read_text().splitlines()
    assert lines[0].startswith("# cstr ")
    return lines[1].split(","), [line.split(",") for line in lines[2:]]


def test_peak_vs_shift_run(tmp_path):
    cfg = _write(tmp_path, 'experiment = "peak_vs_shift"\noutput_dir = "out"\n' + SMALL_ENSEMBLE
                 + '[peak_vs_shift]\ngrid = [["none", 0], ["right", 25], ["left", 25]]\n')
    assert cli.main([str(cfg), "--workers", "1"]) == 0
    out = tmp_path / "out"
    header, rows = _read_csv(out / "peak_vs_shift.csv")
    assert header == ["cir_id", "direction", "percent", "norm_signal_peak_power", "norm_image_peak_power"]
    assert len(rows) == 6 * 3 + 3
    manifest = json.loads((out / "manifest.json").read_text())
    names = {f["name"] for f in manifest["files"]}
    assert {"peak_vs_shift_stats.csv", "signal_image_example.csv", "result.json",
            "fig_signal_peak_vs_shift.png", "fig_image_peak_vs_shift.png", "fig_signal_image_example.png"} <= names
    for f in manifest["files"]:
        assert (out / f["name"]).stat().st_size == f["bytes"]


def test_multiuser_run_without_figures(tmp_path):
    cfg = _write(tmp_path, 'experiment = "multiuser_sir"\n' + SMALL_ENSEMBLE
                 + "[multiuser_sir]\nn_users = 3\nbudget = 10\nsweep_percents = [12, 30]\n")
    out = tmp_path / "o"
    assert cli.main([str(cfg), "--out", str(out), "--no-figures", "--workers", "1"]) == 0
    assert not list(out.glob("*.png"))
    names = sorted(p.name for p in out.iterdir())
    assert "sir_right_12.csv" in names and "sir_left_30.csv" in names and "sir_none_0.csv" in names
    header, rows = _read_csv(out / "sir_right_12.csv")
    assert header[-1] == "sir_db" and len(rows) == 30
    header, rows = _read_csv(out / "cdf_user3.csv")
    assert header == ["direction", "percent", "sir_db", "probability"]


def test_generate_then_file_source(tmp_path):
    gen = _write(tmp_path, 'experiment = "generate_ensemble"\noutput_dir = "g"\n' + SMALL_ENSEMBLE)
    assert cli.main([str(gen), "--no-figures"]) == 0
    ens = load_cir_file(tmp_path / "g" / "ensemble.cir")
    assert len(ens) == 6 and ens.n_taps == 48
    peak = _write(tmp_path, 'experiment = "peak_vs_shift"\noutput_dir = "p"\n[ensemble]\nsource = "file"\n'
                  'path = "g/ensemble.cir"\n[peak_vs_shift]\nmax_percent = 20\nstep = 10\n', "peak.toml")
    assert cli.main([str(peak), "--no-figures"]) == 0
    _, rows = _read_csv(tmp_path / "p" / "peak_vs_shift.csv")
    assert len(rows) == 6 * 5 + 5


def test_ingest_freq(tmp_path):
    g = np.random.default_rng(0)
    for k in range(3):
        save_freq_response_file(FreqResponse(g.standard_normal(32) + 1j * g.standard_normal(32), 0.7e9, 2.24e6),
                                tmp_path / f"pos{k}.fr")
    cfg = _write(tmp_path, 'experiment = "ingest_freq"\noutput_dir = "i"\n'
                 '[ingest_freq]\ninputs = ["pos0.fr", "pos1.fr", "pos2.fr"]\n')
    assert cli.main([str(cfg), "--no-figures"]) == 0
    ens = load_cir_file(tmp_path / "i" / "ensemble.cir")
    assert [c.id for c in ens] == ["pos0", "pos1", "pos2"]
    assert ens.tap_spacing == pytest.approx(1 / (32 * 2.24e6))


@pytest.mark.parametrize(
    "body, key",
    [
        ('experiment = "peak_vs_shift"\ncolour = 1\n', "colour"),
        ('experiment = "nope"\n', "experiment"),
        ("output_dir = 'x'\n", "experiment"),
        ('experiment = "peak_vs_shift"\n[ensemble]\nn_taps = 0\n', "ensemble.n_taps"),
        ('experiment = "peak_vs_shift"\n[ensemble]\ndecay = "fast"\n', "ensemble.decay"),
        ('experiment = "peak_vs_shift"\n[peak_vs_shift]\ngrid = [["up", 3]]\n', "peak_vs_shift.grid[0]"),
        ('experiment = "multiuser_sir"\n[multiuser_sir]\nn_users = 3\nschedule = [["none", 0]]\n',
         "multiuser_sir.schedule"),
        ('experiment = "multiuser_sir"\n[multiuser_sir]\nbudget = true\n', "multiuser_sir.budget"),
        ('experiment = "peak_vs_shift"\n[ensemble]\nsource = "file"\n', "ensemble.path"),
    ],
)
def test_config_errors_name_the_key(tmp_path, body, key):
    with pytest.raises(ConfigError) as exc:
        cli.load_config(str(_write(tmp_path, body)))
    assert exc.value.key == key


def test_config_error_exit_code(tmp_path, capsys):
    cfg = _write(tmp_path, 'experiment = "peak_vs_shift"\n[ensemble]\nn_taps = -3\n')
    assert cli.main([str(cfg)]) == cli.EXIT_CONFIG
    assert "ensemble.n_taps" in capsys.readouterr().err


def test_bad_toml_is_config_error(tmp_path):
    assert cli.main([str(_write(tmp_path, "experiment = \n"))]) == cli.EXIT_CONFIG


def test_missing_config_is_io_error(tmp_path):
    assert cli.main([str(tmp_path / "absent.toml")]) == cli.EXIT_IO


def test_malformed_cir_file_exit_code(tmp_path, capsys):
    (tmp_path / "bad.cir").write_text("CIRv1 n_taps=2 tap_spacing=1 count=1 seed=none\nid=a\n1 0\n")
    cfg = _write(tmp_path, 'experiment = "peak_vs_shift"\n[ensemble]\nsource = "file"\npath = "bad.cir"\n')
    assert cli.main([str(cfg), "--out", str(tmp_path / "o")]) == cli.EXIT_FORMAT
    assert "bad.cir" in capsys.readouterr().err
    assert not (tmp_path / "o").exists()


def test_degenerate_channel_exit_code(tmp_path):
    (tmp_path / "zero.cir").write_text("CIRv1 n_taps=2 tap_spacing=1 count=1 seed=none\nid=a\n0 0\n0 0\n")
    cfg = _write(tmp_path, 'experiment = "peak_vs_shift"\n[ensemble]\nsource = "file"\npath = "zero.cir"\n'
                 "[peak_vs_shift]\ngrid = [['none', 0]]\n")
    assert cli.main([str(cfg), "--out", str(tmp_path / "o"), "--no-figures"]) == cli.EXIT_COMPUTE


def test_usage_errors():
    with pytest.raises(SystemExit) as exc:
        cli.main([])
    assert exc.value.code == cli.EXIT_USAGE
    assert cli.main(["peak_vs_shift", "--workers", "0"]) == cli.EXIT_CONFIG
    assert cli.main(["peak_vs_shift", "--seed", "-1"]) == cli.EXIT_CONFIG


def test_bare_experiment_name_uses_defaults():
    cfg = cli.load_config("multiuser_sir")
    assert cfg.params["n_users"] == 5 and cfg.params["budget"] == 1085
    assert cfg.ensemble.n_taps == 580 and cfg.ensemble.n_cirs == 35
    assert len(cfg.params["sweep"]) == 15


def test_fmt():
    assert cli.fmt(0.1) == "0.1"
    assert cli.fmt(math.inf) == "inf"
    assert float(cli.fmt(1 / 3)) == 1 / 3


def test_seed_override_changes_output(tmp_path):
    cfg = _write(tmp_path, 'experiment = "generate_ensemble"\n' + SMALL_ENSEMBLE)
    cli.main([str(cfg), "--out", str(tmp_path / "a"), "--no-figures"])
    cli.main([str(cfg), "--out", str(tmp_path / "b"), "--no-figures", "--seed", "99"])
    a = (tmp_path / "a" / "ensemble.cir").read_text()
    b = (tmp_path / "b" / "ensemble.cir").read_text()
    assert a != b and "seed=99" in b.splitlines()[0]


def test_console_script_help():
    res = subprocess.run([sys.executable, "-m", "cstr.cli", "--help"], capture_output=True, text=True)
    assert res.returncode == 0
    assert "exit status" in res.stdout
