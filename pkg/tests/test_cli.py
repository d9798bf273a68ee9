import csv
import subprocess
import sys

import pytest

from colecole import cli
from colecole.quadopt import QuadratureError, read_quadrature


def _run(*argv):
    return cli.main([str(a) for a in argv])


def _manifest(path):
    out = {}
    for line in (path / "manifest.txt").read_text().splitlines():
        k, v = line.split(" = ", 1)
        out[k] = v
    return out


def test_config_file_and_overrides(tmp_path):
    conf = tmp_path / "run.cfg"
    conf.write_text("# dispersion setup\nalpha = 0.5, 1\nn_grid = 50  # short grid\n")
    out = tmp_path / "d"
    assert _run("dispersion", "--config", conf, "--out", out, "--set", "L=4") == 0
    m = _manifest(out)
    assert m["alpha"] == "0.5, 1" and m["n_grid"] == "50" and m["L"] == "4"
    assert sorted(p.name for p in out.glob("*.csv")) == [
        "dispersion_approx_alpha0.5.csv",
        "dispersion_exact_alpha0.5.csv",
        "dispersion_exact_alpha1.csv",
    ]


def test_unknown_key_and_bad_value_fail_with_one_line(tmp_path, capsys):
    assert _run("energy", "--out", tmp_path, "--set", "colour=red") == 2
    err = capsys.readouterr().err.strip()
    assert "\n" not in err and "colour" in err
    assert _run("timing", "--out", tmp_path, "--set", "rounds=many") == 2
    assert _run("convergence", "--out", tmp_path, "--set", "tau=h") == 2


def test_optimize_writes_quadrature_and_error_curve(tmp_path):
    out = tmp_path / "q"
    assert _run("optimize", "--out", out, "--alpha", "0.5") == 0
    q = read_quadrature(out / "quadrature_alpha0.5_L20_M40.txt")
    assert q.L == 20 and q.is_feasible()
    rows = list(csv.reader(open(out / "quadrature_alpha0.5_L20_M40_error.csv")))
    assert rows[0] == ["omega", "rel_error", "rel_error_init"] and len(rows) == 401
    assert float(rows[1][0]) == pytest.approx(0.25) and float(rows[-1][0]) == pytest.approx(10.0)
    assert _manifest(out)["feasible"] == "True"


@pytest.mark.parametrize("M", [10, 20, 30])
def test_optimize_square_and_overdetermined(tmp_path, M):
    assert _run("optimize", "--out", tmp_path, "--set", "L=10", "--set", f"M={M}") == 0
    assert (tmp_path / f"quadrature_alpha0.5_L10_M{M}_error.csv").exists()


def test_optimize_single_pole(tmp_path):
    assert _run("optimize", "--out", tmp_path, "--set", "L=1") == 0


def test_optimizer_failure_exits_nonzero_and_keeps_initializer(tmp_path, monkeypatch, capsys):
    from colecole.quadopt import FrequencyBand, gauss_jacobi_init

    def failing(alpha, L, band, **kw):
        raise QuadratureError("no progress", fallback=gauss_jacobi_init(L, alpha, band))

    monkeypatch.setattr(cli, "optimize_quadrature", failing)
    assert _run("optimize", "--out", tmp_path, "--set", "L=4") == 1
    assert (tmp_path / "quadrature_alpha0.5_L4_M8.txt").exists()
    assert "error" in _manifest(tmp_path)
    assert "optimizer failed" in capsys.readouterr().err


def test_energy_outputs_and_determinism(tmp_path):
    args = ["energy", "--alpha", "0.5", "--cells", "40", "--set", "T=0.5"]
    assert _run(*args, "--out", tmp_path / "a") == 0
    assert _run(*args, "--out", tmp_path / "b") == 0
    for name in ("energy_alpha0.5.csv", "energy_diff_alpha0.5.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    rows = list(csv.reader(open(tmp_path / "a" / "energy_alpha0.5.csv")))
    assert rows[0] == ["t", "e1", "e2_sharp", "total", "dissipation"]
    assert float(rows[1][2]) == 0.0  # no diffusive energy at t = 0
    diff = list(csv.reader(open(tmp_path / "a" / "energy_diff_alpha0.5.csv")))
    assert diff[0] == ["n", "t", "d_total", "d_e1"] and len(diff) == len(rows) - 1


def test_manifest_echoes_every_resolved_key(tmp_path):
    assert _run("energy", "--alpha", "0.3", "--cells", "20", "--set", "T=0.2", "--out", tmp_path) == 0
    m = _manifest(tmp_path)
    for key in list(cli.DEFAULTS["common"]) + list(cli.DEFAULTS["energy"]):
        assert key in m
    assert m["command"] == "energy" and "total_wall_time_s" in m


def test_desk_scale_shrinks_energy_mesh():
    args = cli.build_parser().parse_args(["energy", "--desk-scale"])
    assert cli.resolve("energy", args)["cells"] == "200"
    args = cli.build_parser().parse_args(["timing", "--desk-scale"])
    assert cli.resolve("timing", args)["nt"] == "8000,16000,32000,64000"


def test_convergence_command_small(tmp_path):
    out = tmp_path / "c"
    code = _run("convergence", "--alpha", "0.5", "--degree", "1", "--cells", "10,20",
                "--set", "L=20", "--set", "omega_min=1e-3", "--set", "omega_max=1e4", "--out", out)
    assert code == 0
    rows = list(csv.reader(open(out / "convergence_k1_alpha0.5.csv")))
    assert rows[0] == ["n_cells", "errE", "ordE", "errH", "ordH", "errP", "ordP"]
    assert 1.7 < float(rows[2][2]) < 2.3


def test_timing_command_small(tmp_path):
    assert _run("timing", "--set", "nt=200,400", "--out", tmp_path) == 0
    rows = list(csv.reader(open(tmp_path / "timing.csv")))
    assert rows[0] == ["Nt", "fast_seconds", "direct_seconds"]
    assert [r[0] for r in rows[1:]] == ["200", "400", "slope"]


def test_dispersion_grid_contains_band_edges(tmp_path):
    import math

    assert _run("dispersion", "--alpha", "0.7", "--out", tmp_path) == 0
    omegas = [float(r[0]) for r in list(csv.reader(open(tmp_path / "dispersion_exact_alpha0.7.csv")))[1:]]
    assert any(w == pytest.approx(20 * math.pi, rel=1e-15) for w in omegas)
    assert any(w == pytest.approx(200 * math.pi, rel=1e-15) for w in omegas)
    assert float(_manifest(tmp_path)["max_c_deviation_alpha0.7"]) < 1e-2


def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "colecole", "--help"], capture_output=True, text=True)
    assert res.returncode == 0 and "optimize" in res.stdout
