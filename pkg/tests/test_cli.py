import json
import re

import numpy as np
import pytest

from sphpoly import cli
from sphpoly.io import read_ppm, write_particles_csv
from sphpoly.lut import save_lut
from sphpoly.quantize import Particle


def _run(argv, capsys):
    code = cli.main(argv)
    out = capsys.readouterr()
    return code, out.out, out.err


def _cfg(argv):
    parser = cli.build_parser()
    return cli.resolve_config(parser.parse_args(argv), parser)


@pytest.fixture
def scene(tmp_path):
    rng = np.random.default_rng(3)
    ps = [Particle(rng.uniform(-0.5, 0.5, 3), 1.0, 1.0, rng.uniform(0.4, 0.6), 1.0) for _ in range(4)]
    path = tmp_path / "p.csv"
    write_particles_csv(ps, path)
    return path


@pytest.fixture
def table43(tmp_path, lut_cache):
    path = tmp_path / "t43.splt"
    save_lut(lut_cache(4, 3, 256), path)
    return path


def test_lut_build_reports_E_star_and_is_deterministic(tmp_path, capsys):
    a, b = tmp_path / "a.splt", tmp_path / "b.splt"
    code, out, _ = _run(["lut-build", "--K", "2", "--D", "1", "--N", "64", "--out", str(a)], capsys)
    assert code == 0
    E = float(re.search(r"E\*=(\S+)", out).group(1))
    assert E == pytest.approx(0.0579492894294634, rel=0.10)
    _run(["lut-build", "--K", "2", "--D", "1", "--N", "64", "--out", str(b)], capsys)
    assert a.read_bytes() == b.read_bytes()


@pytest.mark.parametrize(
    "argv",
    [
        ["lut-build", "--K", "0", "--out", "x"],
        ["lut-build", "--K", "9", "--out", "x"],
        ["lut-build", "--D", "7", "--out", "x"],
        ["lut-build", "--int-width", "48", "--out", "x"],
        ["render", "--threads", "0"],
        ["frobnicate"],
    ],
)
def test_usage_errors(argv, capsys):
    with pytest.raises(SystemExit) as info:
        cli.main(argv)
    assert info.value.code == 2
    assert "usage" in capsys.readouterr().err


def test_config_file_and_flag_override(tmp_path, monkeypatch):
    monkeypatch.delenv(cli.THREADS_ENV, raising=False)
    conf = tmp_path / "c.json"
    conf.write_text(json.dumps({"K": 3, "D": 2, "N": 128, "seed": 9, "threads": 2}))
    cfg = _cfg(["lut-build", "--config", str(conf), "--D", "4"])
    assert (cfg["K"], cfg["D"], cfg["N"], cfg["seed"], cfg["threads"]) == (3, 4, 128, 9, 2)


def test_config_rejects_unknown_and_out_of_range(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"K": 3, "colour": "red"}))
    with pytest.raises(SystemExit):
        _cfg(["lut-build", "--config", str(bad)])
    bad.write_text(json.dumps({"K": 12}))
    with pytest.raises(SystemExit):
        _cfg(["lut-build", "--config", str(bad)])


def test_thread_env_override(monkeypatch):
    monkeypatch.setenv(cli.THREADS_ENV, "3")
    assert _cfg(["lut-build", "--threads", "1"])["threads"] == 3
    monkeypatch.setenv(cli.THREADS_ENV, "many")
    with pytest.raises(SystemExit):
        _cfg(["lut-build"])


def test_order_follows_table(table43):
    cfg = _cfg(["render", "--lut", str(table43)])
    assert (cfg["K"], cfg["D"]) == (4, 3)
    assert (_cfg(["render"])["K"], _cfg(["render"])["D"]) == (cli.DEFAULT_K, cli.DEFAULT_D)


def test_error_report_json(capsys, lut_cache, monkeypatch):
    # Reuse the session tables instead of rebuilding at the default size.
    monkeypatch.setattr(cli, "build_lut", lambda kernel, cfg, **kw: lut_cache(cfg.K, cfg.D, 32))
    code, out, _ = _run(["error-report", "--K", "2", "--D-list", "1,2,3", "--widths", "32,64", "--format", "json"], capsys)
    assert code == 0
    data = json.loads(out)
    row = next(r for r in data["rows"] if r["D"] == 2 and r["int_width"] == 64)
    assert row["Q_D"] == pytest.approx(6.30864792448258e-6, rel=0.2)
    assert all(r["combined"] >= max(r["E_star"], r["Q_D"]) for r in data["rows"])
    assert data["trends"] == {"E_star_falls_in_D": True, "Q_D_rises_in_D": True}


def test_error_report_table_with_lut(capsys, table43):
    code, out, _ = _run(["error-report", "--lut", str(table43)], capsys)
    assert code == 0 and out.splitlines()[1].split()[:3] == ["4", "3", "64"]


def test_lut_mismatch_is_reported(capsys, table43, scene, tmp_path):
    with pytest.raises(SystemExit) as info:
        cli.main(["render", "--lut", str(table43), "--D", "2", "--particles", str(scene), "--out", str(tmp_path / "x.ppm")])
    assert "K=4, D=3" in str(info.value.code)


def test_render_writes_image_and_report(capsys, table43, scene, tmp_path):
    out = tmp_path / "img.ppm"
    code, _, _ = _run(["render", "--lut", str(table43), "--particles", str(scene), "--out", str(out), "--camera",
                       json.dumps({"width": 24, "height": 16, "extent": 3.0})], capsys)
    assert code == 0
    img = read_ppm(out)
    assert img.shape == (16, 24, 3) and img.max() > 0
    rep = json.loads(out.with_suffix(".json").read_text())
    for key in ("quanta", "stats", "E_star", "knots", "overflow_count", "camera"):
        assert key in rep
    assert rep["overflow_count"] == 0 and rep["quanta"]["int_width"] == 64


def test_render_empty_dataset(capsys, tmp_path):
    empty = tmp_path / "e.csv"
    empty.write_text("x,y,z,mass,density,h,value\n")
    code, _, _ = _run(["render", "--particles", str(empty), "--out", str(tmp_path / "e.ppm")], capsys)
    assert code == 0 and np.all(read_ppm(tmp_path / "e.ppm") == 0)


def test_render_overflow_exit_code(capsys, table43, tmp_path):
    ps = [Particle([0, 0, 0.1 * i], 1.0, 1.0, 0.5, 1.0) for i in range(4)]
    path = tmp_path / "stack.csv"
    write_particles_csv(ps, path)
    out = tmp_path / "o.ppm"
    code, _, err = _run(["render", "--lut", str(table43), "--particles", str(path), "--out", str(out),
                         "--int-width", "32", "--clustering", "0.3", "--camera", json.dumps({"width": 6, "height": 6, "extent": 1.5})], capsys)
    assert code == 3 and "overflow" in err
    assert json.loads(out.with_suffix(".json").read_text())["overflow_count"] > 0


def test_validate_command(capsys, table43, scene):
    code, out, _ = _run(["validate", "--lut", str(table43), "--particles", str(scene), "--resolution", "8"], capsys)
    lines = out.splitlines()
    assert [l.split()[1].rstrip(":") for l in lines] == ["telescoping", "superposition", "envelope"]
    assert lines[0].startswith("PASS") and lines[1].startswith("PASS")
    assert code == (0 if all(l.startswith("PASS") for l in lines) else 1)


def test_deterministic_render(capsys, table43, scene, tmp_path):
    outs = []
    for name in ("a.ppm", "b.ppm"):
        out = tmp_path / name
        _run(["render", "--lut", str(table43), "--particles", str(scene), "--out", str(out), "--camera",
              json.dumps({"width": 8, "height": 8, "extent": 3.0})], capsys)
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]
