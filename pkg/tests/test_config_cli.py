import json
import os

import numpy as np
import pytest

from dispersivelab.cli import main, run_suite
from dispersivelab.config import LabConfig, parse_config_text
from dispersivelab.errors import ConfigInvalid

SMOKE = """
metric.family = flat
grid.dim = 1
grid.box_half_width = 96
grid.n_points = 2048
semiclassical.h_list = 0.2, 0.1
semiclassical.window_lo = 0.25
semiclassical.window_hi = 1.44
experiment.ids = certify, symbols
experiment.seed = 3
experiment.n_samples = 16
output.directory = {out}
"""


def test_parse_and_accessors(tmp_path):
    tree = parse_config_text("a.b = 1\na.c = 2.5, 3\nflag = true\nname = bump\n")
    assert tree["a"]["b"] == 1
    assert tree["a"]["c"] == [2.5, 3]
    assert tree["flag"] is True
    assert tree["name"] == "bump"
    with pytest.raises(ConfigInvalid):
        parse_config_text("not an assignment\n")


def test_config_validation_names_violation():
    text = SMOKE.format(out="/tmp/x") + "region.sigma2 = -0.5\nregion.sigma3 = -0.6\n"
    with pytest.raises(ConfigInvalid, match="sigma2 < sigma3"):
        LabConfig(parse_config_text(text))


def test_config_h_grid_coupling():
    text = SMOKE.format(out="/tmp/x").replace("grid.n_points = 2048",
                                              "grid.n_points = 256")
    with pytest.raises(ConfigInvalid, match="coupling"):
        LabConfig(parse_config_text(text))


def test_suite_runs_and_is_deterministic(tmp_path):
    cfg_path = tmp_path / "smoke.cfg"
    out1 = tmp_path / "run1"
    out2 = tmp_path / "run2"
    cfg_path.write_text(SMOKE.format(out=out1))
    code1 = main(["run", "--config", str(cfg_path)])
    cfg_path.write_text(SMOKE.format(out=out2))
    code2 = main(["run", "--config", str(cfg_path)])
    assert code1 == 0 and code2 == 0
    for name in ("report_certify.json", "report_symbols.json"):
        b1 = (out1 / name).read_bytes()
        b2 = (out2 / name).read_bytes()
        # byte-identical apart from the configured output path
        assert b1.replace(b"run1", b"") == b2.replace(b"run2", b"")
    assert (out1 / "timing_sidecar.json").exists()
    summary = json.loads((out1 / "suite_summary.json").read_text())
    assert summary["verdict"] == "pass"


def test_cli_exit_code_on_bad_config(tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text(SMOKE.format(out=tmp_path) +
                   "region.sigma1 = -0.5\nregion.sigma2 = -0.6\n")
    code = main(["run", "--config", str(bad)])
    assert code == 2


def test_cli_check_lemmas_fast():
    assert main(["check-lemmas", "--samples", "2000", "--seed", "1"]) == 0


def test_metric_plugin_through_config(tmp_path):
    import dispersivelab as dl
    src = dl.bump_metric(1, eps=0.1)
    ax = np.linspace(-10.0, 10.0, 201)
    ginv = src.inv_coeff_batch(ax[:, None])
    np.savez(tmp_path / "table.npz", axis0=ax, ginv=ginv)
    text = (SMOKE.format(out=tmp_path / "o")
            .replace("metric.family = flat",
                     "metric.family = table\nmetric.table_path = table.npz\nmetric.nu = 4.0"))
    cfg_path = tmp_path / "plug.cfg"
    cfg_path.write_text(text)
    cfg = LabConfig.from_path(str(cfg_path))
    m = cfg.metric()
    probe = np.array([[0.4]])
    assert abs(m.inv_coeff_batch(probe)[0, 0, 0]
               - src.inv_coeff_batch(probe)[0, 0, 0]) < 1e-8
