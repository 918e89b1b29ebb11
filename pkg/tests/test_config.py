from pathlib import Path

import numpy as np
import pytest

from fourier_cbc.config import ConfigError, load_config, parse_config
from fourier_cbc.geometry import Ball, Box
from fourier_cbc.kernels import SampleSet, median_heuristic

ROOT = Path(__file__).resolve().parents[1]

MINIMAL = """\
[system]
kind = "barr3"
lower = [-3.0, -2.0]
upper = [2.5, 1.0]

[problem]
initial = { type = "ball", center = [1.5, 0.0], radius = 0.5 }
unsafe = { type = "box", lower = [-1.5, -1.5], upper = [-0.5, -0.5] }
"""


@pytest.mark.parametrize("name", ["barr3.toml", "barr3_m6.toml", "dubins.toml"])
def test_bundled_configs_load(name):
    cfg = load_config(ROOT / "configs" / name)
    initial, unsafe = cfg.regions()
    assert initial.n == unsafe.n == cfg.domain.n
    cfg.system_spec()
    cfg.settings()


def test_defaults_and_regions():
    cfg = parse_config(MINIMAL)
    assert cfg.seed == 0 and cfg.system.samples == 1000
    assert cfg.basis.m_per_axis == 4 and cfg.problem.horizon == 5
    initial, unsafe = cfg.regions()
    assert isinstance(initial, Ball) and isinstance(unsafe, Box)
    assert cfg.kernel.input_lengthscales == "auto"


def test_digest_tracks_text():
    assert parse_config(MINIMAL).digest == parse_config(MINIMAL).digest
    assert parse_config(MINIMAL + "\n").digest != parse_config(MINIMAL).digest


def _line_of(text, prefix):
    return next(i for i, ln in enumerate(text.splitlines(), 1) if ln.startswith(prefix))


@pytest.mark.parametrize("text, key, prefix", [
    ("colour = 3\n" + MINIMAL, "colour", "colour"),
    (MINIMAL + "\n[basis]\nm_per_axis = 3\nwavenumbers = 4\n", "basis.wavenumbers", "wavenumbers"),
    (MINIMAL + "\n[kernel.input]\nsigma_f = 1.0\nscale = 2.0\n", "kernel.input.scale", "scale"),
    (MINIMAL.replace("radius = 0.5", "radius = 0.5, shape = 1"), "problem.initial", "initial"),
])
def test_unknown_keys_report_line(text, key, prefix):
    with pytest.raises(ConfigError) as err:
        parse_config(text, "run.toml")
    msg = str(err.value)
    assert msg.startswith(f"run.toml:{_line_of(text, prefix)}: {key}"), msg


def test_missing_system_is_rejected():
    text = MINIMAL.split("[problem]")[1]
    with pytest.raises(ConfigError, match="system"):
        parse_config("[problem]" + text)


@pytest.mark.parametrize("old, new, where", [
    ('upper = [2.5, 1.0]', 'upper = [2.5, -3.0]', "system.upper"),
    ('kind = "barr3"', 'kind = "pendulum"', "system.kind"),
    ('radius = 0.5', 'radius = -0.5', "problem.initial"),
    ('center = [1.5, 0.0]', 'center = [1.5, 0.0, 2.0]', "problem.initial"),
])
def test_bad_values(old, new, where):
    with pytest.raises(ConfigError, match=where.replace(".", r"\.")):
        parse_config(MINIMAL.replace(old, new))


@pytest.mark.parametrize("section", [
    "[basis]\nm_per_axis = 0\n",
    "[basis]\nprojection = \"svd\"\n",
    "[montecarlo]\nconfidence = 1.5\n",
    "[solver]\nrow_generation = 1\n",
])
def test_bad_section_values(section):
    with pytest.raises(ConfigError):
        parse_config(MINIMAL + "\n" + section)


def test_bad_top_level_values():
    with pytest.raises(ConfigError, match="seed"):
        parse_config("seed = -1\n" + MINIMAL)
    with pytest.raises(ConfigError, match="samples"):
        parse_config(MINIMAL.replace("upper = [2.5, 1.0]", "upper = [2.5, 1.0]\nsamples = 0"))
    with pytest.raises(ConfigError, match="invalid TOML"):
        parse_config("[system\n")


def test_auto_lengthscales_use_median_heuristic():
    cfg = parse_config(MINIMAL)
    r = np.random.default_rng(0)
    data = SampleSet(r.normal(size=(100, 2)), r.normal(size=(100, 2)) * 3)
    kin, kout = cfg.kernels(data)
    assert np.allclose(kin.lengthscales, median_heuristic(data.states))
    assert np.allclose(kout.lengthscales, median_heuristic(data.successors))


def test_controller_path_is_relative_to_config(tmp_path):
    text = (ROOT / "configs" / "dubins.toml").read_text()
    (tmp_path / "run.toml").write_text(text)
    with pytest.raises(ConfigError, match="controller"):
        load_config(tmp_path / "run.toml").system_spec()
    (tmp_path / "dubins_controller.json").write_bytes((ROOT / "configs" / "dubins_controller.json").read_bytes())
    assert load_config(tmp_path / "run.toml").system_spec().controller is not None


def test_missing_file():
    with pytest.raises(ConfigError, match="cannot read"):
        load_config("/nonexistent/run.toml")
