import json

import numpy as np
import pytest

from fanoflow.cli import EXIT_BLOWUP, EXIT_CONFIG, EXIT_OK, main
from fanoflow.config import RunConfig, initial_field, parse_config
from fanoflow.errors import ConfigurationError


def test_parse_serialize_round_trip():
    cfg = RunConfig(preset="bl2", resolution=64, t_end=2.0,
                    snapshot_every=0.5, lambda1=True, weights="round")
    back = parse_config(cfg.serialize())
    assert back == cfg


def test_parse_comments_and_blank_lines():
    cfg = parse_config("""
        # a run
        preset = cp2     # inline comment
        t_end = 1.0
        snapshot_every = 0.5
    """)
    assert cfg.preset == "cp2"
    assert cfg.t_end == 1.0


@pytest.mark.parametrize("text,fragment", [
    ("preset = cp2\nwibble = 3\n", "unknown key"),
    ("preset = dp7\n", "unknown preset"),
    ("preset = cp2\nresolution = 31\n", "resolution"),
    ("preset = cp2\nresolution = twelve\n", "bad value"),
    ("preset = cp2\nhalf_width = 4\n", "half_width"),
    ("preset = cp2\nsigma = 0.9\n", "sigma"),
    ("preset = cp2\nt_end = -1\n", "t_end"),
    ("preset = cp2\nt_end = 1\nsnapshot_every = 2\n", "snapshot_every"),
    ("preset = cp2\ninitial_phi = maybe\n", "initial_phi"),
    ("preset = cp2\ninitial_phi = file\n", "initial_file"),
    ("preset = cp2\nweights = 1,-1,1\n", "positive"),
    ("t_end = 1\n", "preset"),
    ("preset cp2\n", "key = value"),
])
def test_parse_rejections(text, fragment):
    with pytest.raises(ConfigurationError, match=fragment):
        parse_config(text)


def test_initial_field_bump():
    cfg = RunConfig(preset="cp2", resolution=48, initial_phi="bump",
                    bump_amplitude=0.05, bump_width=2.0)
    f = initial_field(cfg)
    assert float(np.max(f.phi)) == pytest.approx(0.05)
    n = cfg.resolution // 2
    assert f.phi[n, n] == pytest.approx(0.05)


def test_initial_field_explicit_weights():
    cfg = RunConfig(preset="p1xp1", resolution=48,
                    weights=",".join(["1.0"] * 9))
    f = initial_field(cfg)
    assert np.allclose(f.reference.weights, 1.0)


def test_cli_presets(capsys):
    assert main(["presets"]) == EXIT_OK
    out = capsys.readouterr().out
    for name in ("cp2", "p1xp1", "bl1", "bl2", "bl3"):
        assert name in out


def test_cli_lattice_search(capsys):
    assert main(["lattice-search", "cp2", "100"]) == EXIT_OK
    assert "no class" in capsys.readouterr().out
    assert main(["lattice-search", "bl2", "100"]) == EXIT_OK
    assert "found" in capsys.readouterr().out
    assert main(["lattice-search", "nope", "10"]) == EXIT_CONFIG
    assert main(["lattice-search", "cp2", "0"]) == EXIT_CONFIG


def test_cli_eh_reference_json(capsys):
    assert main(["eh-reference", "--json"]) == EXIT_OK
    rep = json.loads(capsys.readouterr().out)
    assert rep["obstruction"]["verdict"] == "excluded"


def test_cli_run_bad_config(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("preset = nosuch\n")
    assert main(["run", str(bad)]) == EXIT_CONFIG
    assert main(["run", str(tmp_path / "missing.cfg")]) == EXIT_CONFIG


def test_cli_report_empty_dir(tmp_path, capsys):
    assert main(["report", str(tmp_path)]) == EXIT_CONFIG
    assert "no run found" in capsys.readouterr().err


def test_cli_run_and_report(tmp_path, capsys):
    cfgfile = tmp_path / "short.cfg"
    cfgfile.write_text(
        "preset = p1xp1\nweights = round\nresolution = 48\n"
        "t_end = 0.1\nsnapshot_every = 0.05\n")
    outdir = tmp_path / "out"
    assert main(["run", str(cfgfile), "--outdir", str(outdir),
                 "--quiet"]) == EXIT_OK
    for fname in ("diagnostics.csv", "certificate.json", "monitor.json",
                  "config.txt", "plot_sup_rm.dat"):
        assert (outdir / fname).exists(), fname
    cert = json.loads((outdir / "certificate.json").read_text())
    assert cert["verdict"] == "KE"  # started at the round fixed point
    capsys.readouterr()
    assert main(["report", str(outdir)]) == EXIT_OK
    out = capsys.readouterr().out
    assert "endpoint: KE" in out
    assert "volume" in out
