from __future__ import annotations

import json
import os
import subprocess
import sys

import pytest

from stochtransport.cli import (EXIT_ERROR, EXIT_FAIL, EXIT_OK, EXIT_USAGE, catalog_listing,
                                load_scenario, main)
from stochtransport.errors import ConfigError

SMALL = ["--paths", "500", "--steps", "32"]


def write_ini(path, body):
    path.write_text(body)
    return str(path)


class TestCatalog:
    def test_listing_is_stable(self, capsys):
        assert main(["list-catalog"]) == EXIT_OK
        first = capsys.readouterr().out
        main(["list-catalog"])
        assert capsys.readouterr().out == first
        assert first == catalog_listing() + "\n"

    def test_listing_contents(self):
        text = catalog_listing()
        for word in ("zero", "rotation", "cellular", "bump", "gaussian_truncated", "desk64",
                     "const:1:0", "mean_verify"):
            assert word in text


class TestScenarioFiles:
    def test_validate(self, tmp_path, capsys):
        ini = write_ini(tmp_path / "s.ini", "[scenario]\nname = demo\nexperiment = exponentials\n"
                                            "seed = 4\n[parameters]\npaths = 500\nh = const:1\n")
        assert main(["validate", ini]) == EXIT_OK
        assert "demo" in capsys.readouterr().out
        sc = load_scenario(ini)
        assert sc.seed == 4 and sc.parameters == {"paths": 500, "h": ["const:1"]}

    @pytest.mark.parametrize("body", [
        "[scenario]\nexperiment = exponentials\ncolour = red\n",
        "[scenario]\nexperiment = exponentials\n[parameters]\nwidgets = 3\n",
        "[scenario]\nexperiment = exponentials\n[extras]\na = 1\n",
        "[scenario]\nexperiment = exponentials\n[parameters]\npaths = many\n",
        "[scenario]\nexperiment = transport\n[parameters]\ndrifts = vortex\n",
        "[scenario]\nexperiment = exponentials\n[parameters]\npaths = 100000000\n",
        "[parameters]\npaths = 3\n",
    ])
    def test_invalid_files(self, tmp_path, body):
        ini = write_ini(tmp_path / "bad.ini", body)
        with pytest.raises(ConfigError):
            load_scenario(ini)
        assert main(["validate", ini]) == EXIT_ERROR

    def test_scenario_output_dir_and_override(self, tmp_path):
        out = tmp_path / "from_file"
        ini = write_ini(tmp_path / "s.ini", f"[scenario]\nname = s\nexperiment = exponentials\n"
                                            f"output_dir = {out}\n[parameters]\npaths = 4000\n"
                                            f"steps = 16\n")
        assert main(["run", ini, "--quiet"]) == EXIT_OK
        assert (out / "manifest.jsonl").exists()
        other = tmp_path / "override"
        assert main(["run", ini, "--quiet", "--out", str(other), "--seed", "3"]) == EXIT_OK
        rec = json.loads((other / "manifest.jsonl").read_text())
        assert rec["master_seed"] == 3 and rec["parameters"]["paths"] == 4000


class TestRun:
    def test_small_run_is_reproducible(self, tmp_path):
        outs = []
        for tag in ("a", "b"):
            out = tmp_path / tag
            assert main(["run", "exponentials", "--quiet", "--out", str(out), *SMALL]) == EXIT_OK
            outs.append(out)
        assert (outs[0] / "exponentials.csv").read_bytes() == (outs[1] / "exponentials.csv").read_bytes()
        rec = json.loads((outs[0] / "manifest.jsonl").read_text())
        assert rec["status"] == "PASS" and rec["experiment"] == "exponentials"
        assert set(rec["artifacts"]) == {"exponentials.csv"}
        assert {"python", "numpy", "scipy", "numba", "package"} <= set(rec["versions"])

    def test_seed_changes_results(self, tmp_path):
        main(["run", "exponentials", "--quiet", "--out", str(tmp_path / "a"), *SMALL])
        main(["run", "exponentials", "--quiet", "--out", str(tmp_path / "b"), "--seed", "9", *SMALL])
        assert (tmp_path / "a" / "exponentials.csv").read_bytes() != \
            (tmp_path / "b" / "exponentials.csv").read_bytes()

    def test_heavy_tailed_weight_fails(self, tmp_path):
        # exp(4 B - 8) has a huge variance; 200 paths under-sample its upper tail
        code = main(["run", "exponentials", "--quiet", "--out", str(tmp_path), "--h", "const:4",
                     "--paths", "200", "--steps", "64"])
        assert code == EXIT_FAIL
        assert json.loads((tmp_path / "manifest.jsonl").read_text())["status"] == "FAIL"

    def test_environment_output_root(self, tmp_path, monkeypatch):
        monkeypatch.setenv("STOCHTRANSPORT_OUT", str(tmp_path))
        assert main(["run", "exponentials", "--quiet", "--name", "envrun", *SMALL]) == EXIT_OK
        assert (tmp_path / "envrun" / "exponentials.csv").exists()

    @pytest.mark.parametrize("argv", [
        ["run", "nonsense"],
        ["run", "exponentials", "--no-such-flag", "1"],
        ["frobnicate"],
        ["run", "exponentials", "--threads", "zero"],
        [],
    ])
    def test_usage_errors(self, argv, capsys):
        try:
            code = main(argv)
        except SystemExit as exc:
            code = exc.code
        assert code == EXIT_USAGE

    @pytest.mark.parametrize("argv", [
        ["run", "exponentials", "--paths", "lots"],
        ["run", "exponentials", "--h", "wobble:1"],
        ["run", "transport", "--drifts", "vortex"],
        ["run", "exponentials", "--threads", "4096"],
    ])
    def test_bad_values(self, argv, tmp_path):
        assert main([*argv, "--out", str(tmp_path)]) == EXIT_ERROR

    def test_short_flag_is_not_help(self, tmp_path):
        # with abbreviations enabled "--h" would be taken for "--help"
        code = main(["run", "exponentials", "--quiet", "--out", str(tmp_path), "--h", "const:1",
                     *SMALL])
        assert code == EXIT_OK


def test_module_entry_point(tmp_path):
    env = dict(os.environ, STOCHTRANSPORT_OUT=str(tmp_path))
    res = subprocess.run([sys.executable, "-m", "stochtransport", "list-catalog"],
                         capture_output=True, text=True, env=env, timeout=300)
    assert res.returncode == 0 and "cellular" in res.stdout
