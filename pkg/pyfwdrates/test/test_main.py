import os

import pytest
import yaml

from pyfwdrates import __version__
from pyfwdrates.cli import main

from .test_run_pipeline import SMALL


@pytest.fixture
def config_file(tmp_path):
    filename = tmp_path / "small.yml"
    filename.write_text(yaml.dump(SMALL))
    return str(filename)


class Test_main:
    def test_all(self, config_file, tmp_path):
        out = str(tmp_path / "out")
        assert (main(["--config", config_file, "--out", out, "-q"]) == 0)
        assert (os.path.exists(os.path.join(out, "checks.json")))

    def test_single_stages(self, config_file, tmp_path):
        out = str(tmp_path / "out")
        assert (main(["simulate", "--config", config_file, "--out", out, "--dump-paths"]) == 0)
        assert (len(os.listdir(os.path.join(out, "paths"))) == 10)
        assert (main(["check", "--config", config_file, "--out", out]) == 1)
        assert (main(["estimate", "--config", config_file, "--out", out, "--strict-determinism"]) == 0)

    def test_bad_config(self, tmp_path, capsys):
        assert (main(["--config", str(tmp_path / "missing.yml")]) == 1)
        assert ("missing.yml" in capsys.readouterr().err)

    def test_version(self, capsys):
        with pytest.raises(SystemExit):
            main(["--version"])
        assert (__version__ in capsys.readouterr().out)

    def test_unknown_stage(self):
        with pytest.raises(SystemExit):
            main(["report"])
