import numpy as np
import pytest

from heatlab.cli import default_config_path
from heatlab.config import ConfigError, ExperimentConfig
from heatlab.potentials import TimePower

MINIMAL = """
[potential]
spec = time_power(c=0.5, beta=1.0)
[measure]
dim = 1
atoms = [(0.0, 1.0)]
"""


class TestParse:
    def test_shipped_default(self):
        cfg = ExperimentConfig.load(default_config_path())
        assert isinstance(cfg.potential(), TimePower)
        assert cfg.measure().total_mass() == 1.0
        assert cfg.R_list == [1.0, 2.0, 4.0]
        assert cfg.trace_sizes == (1.0, 0.5)

    def test_defaults(self):
        cfg = ExperimentConfig.parse(MINIMAL)
        assert cfg.T == 1.0 and cfg.h == 0.02 and cfg.half_width == 8.0
        assert cfg.rtol == 1e-3 and cfg.eta == 0.05
        assert cfg.grid().shape == (801,)

    def test_keys_are_case_insensitive(self):
        cfg = ExperimentConfig.parse(MINIMAL + "[grid]\nT = 2.0\n[sweeps]\nR_list = [1, 3]\n")
        assert cfg.T == 2.0
        assert cfg.R_list == [1.0, 3.0]

    def test_inline_comments(self):
        cfg = ExperimentConfig.parse(MINIMAL + "[grid]\nh = 0.05  # coarse\n")
        assert cfg.h == 0.05

    def test_signed_atoms(self):
        cfg = ExperimentConfig.parse(MINIMAL.replace("[(0.0, 1.0)]", "[(0.0, 1.0), (1.0, -0.5)]"))
        pos, neg = cfg.signed_measure()
        assert pos.total_mass() == 1.0 and neg.total_mass() == 0.5
        assert cfg.total_variation().total_mass() == 1.5
        with pytest.raises(ConfigError):
            cfg.measure()

    def test_density_file_relative_to_config(self, tmp_path):
        (tmp_path / "rho.csv").write_text("x,value\n-0.5,1.0\n0.0,2.0\n0.5,1.0\n")
        path = tmp_path / "e.cfg"
        path.write_text(MINIMAL.replace("atoms = [(0.0, 1.0)]", "density_file = rho.csv"))
        cfg = ExperimentConfig.load(path)
        assert cfg.measure().total_mass() == pytest.approx(2.0)

    def test_probe_array(self):
        cfg = ExperimentConfig.parse(MINIMAL + "[probes]\npoints = [(0.0,), (1.5,)]\n")
        assert np.array_equal(cfg.probe_array(), [[0.0], [1.5]])


class TestRejects:
    @pytest.mark.parametrize("text", [
        "[potential]\nspec = time_power(c=1, beta=0.5)\n[bogus]\nx = 1\n",
        MINIMAL + "[grid]\nwidth = 3\n",
        "[measure]\ndim = 1\n",
        MINIMAL.replace("dim = 1", "dim = 4"),
        MINIMAL + "[grid]\nh = -0.1\n",
        MINIMAL + "[tolerances]\nrtol = 0\n",
        MINIMAL.replace("[(0.0, 1.0)]", "[(0.0, 0.0, 1.0)]"),
        MINIMAL + "[probes]\npoints = [(0.0, 1.0)]\n",
        MINIMAL.replace("time_power(c=0.5, beta=1.0)", "no_such_potential()"),
        MINIMAL.replace("atoms = [(0.0, 1.0)]", "density_file = missing.csv"),
        MINIMAL + "[grid]\nT = abc\n",
        "not an ini file",
    ])
    def test_config_error(self, text):
        with pytest.raises(ConfigError):
            ExperimentConfig.parse(text)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            ExperimentConfig.load(tmp_path / "nope.cfg")
