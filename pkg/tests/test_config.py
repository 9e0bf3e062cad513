import copy

import numpy as np
import pytest
import yaml

from evprom.behavior import ElasLaw, EvpLaw
from evprom.config import OUTPUT_ENV, ConfigError, Tolerances, load_config, parse_config, temperature_field
from evprom.fem import MeshError
from evprom.hf import RPM_TO_RAD_S

BASE = {
    "mesh": {"box": {"lengths": [4.0, 1.0, 1.0], "divisions": [4, 1, 1], "region_splits": [2.0]},
             "dirichlet": [{"label": "xmin", "components": [0, 1, 2]}]},
    "material": {"law": "elas", "isotropic": {"E": 200000.0, "nu": 0.3},
                 "parameters": {"alpha_th": 1e-5}},
    "temperature_fields": {"cold": {"uniform": 20.0}},
    "loadings": [{"label": "a", "times": {"start": 1.0, "stop": 3.0, "step": 1.0},
                  "rotation": {"times": [0, 3], "rpm": [0, 600]},
                  "temperature": [[0, "cold"]]}],
    "offline": ["a"],
    "online": "a",
}


@pytest.fixture
def data():
    return copy.deepcopy(BASE)


@pytest.fixture(autouse=True)
def no_output_override(monkeypatch):
    monkeypatch.delenv(OUTPUT_ENV, raising=False)


class TestParse:
    def test_minimal(self, data, tmp_path):
        cfg = parse_config(data, tmp_path / "c.yaml")
        assert cfg.mesh.regions == (1, 2)
        assert isinstance(cfg.problem().law, ElasLaw)
        np.testing.assert_allclose(cfg.loadings["a"].times, [1.0, 2.0, 3.0])
        assert cfg.output == tmp_path / "evprom_output"
        assert cfg.calibration_regions == (None,)

    def test_rpm_converted_to_rad_s(self, data):
        cfg = parse_config(data)
        assert cfg.loadings["a"].rotation_speed(3.0) == pytest.approx(600 * RPM_TO_RAD_S)
        assert 600 * RPM_TO_RAD_S == pytest.approx(20 * np.pi)

    def test_evp_material(self, data):
        data["material"] = {"law": "evp", "substeps": 4, "isotropic": {"E": 2e5, "nu": 0.3},
                            "parameters": {"alpha_th": 1e-5, "C": 1e4, "D": 50.0, "K_norton": 500.0, "m": 5.0,
                                           "R0": {"breakpoints": [20, 400], "values": [200, 80]}}}
        law = parse_config(data).problem().law
        assert isinstance(law, EvpLaw) and law.substeps == 4

    def test_fixture_file(self, fixture_config):
        assert fixture_config.offline == ["computation 1", "computation 2"]
        assert fixture_config.online == "new"
        assert fixture_config.mesh.n_nodes == 13 * 4 * 4
        assert fixture_config.enrichment.quantities == ("p", "s11")

    def test_output_env_override(self, data, tmp_path, monkeypatch):
        monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "elsewhere"))
        assert parse_config(data).output == tmp_path / "elsewhere"

    def test_load_from_file(self, data, tmp_path):
        (tmp_path / "c.yaml").write_text(yaml.safe_dump(data))
        assert load_config(tmp_path / "c.yaml").loadings["a"].label == "a"


class TestRejections:
    @pytest.mark.parametrize("path,key", [((), "solver"), (("mesh",), "refine"),
                                          (("enrichment",), "tau"), (("tolerances",), "pod_eps")])
    def test_unknown_keys(self, data, path, key):
        block = data
        for p in path:
            block = block.setdefault(p, {})
        block[key] = 1
        with pytest.raises(ConfigError, match="unknown keys"):
            parse_config(data)

    def test_missing_loading(self, data):
        data["online"] = "b"
        with pytest.raises(ConfigError, match="unknown loading"):
            parse_config(data)

    def test_bad_monitored_region(self, data):
        data["enrichment"] = {"regions": ["3"]}
        with pytest.raises(ConfigError, match="region"):
            parse_config(data)

    def test_unknown_temperature_field(self, data):
        data["loadings"][0]["temperature"] = [[0, "hot"]]
        with pytest.raises(ConfigError, match="temperature field"):
            parse_config(data)

    def test_rotation_needs_one_unit(self, data):
        data["loadings"][0]["rotation"]["rad_s"] = [0, 1]
        with pytest.raises(ConfigError):
            parse_config(data)

    def test_pressure_on_clamped_face(self, data):
        data["loadings"][0]["pressure"] = {"times": [0, 3], "values": [0, 1], "shape": {"xmin": 1.0}}
        with pytest.raises((ConfigError, MeshError)):
            parse_config(data)

    @pytest.mark.parametrize("tol", [{"pod": 0.0}, {"pod": 1.0}, {"rom_newton": -1e-3}])
    def test_bad_tolerances(self, tol):
        with pytest.raises(ConfigError):
            Tolerances(**tol)

    def test_unknown_law(self, data):
        data["material"]["law"] = "plastic"
        with pytest.raises(ConfigError):
            parse_config(data)

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "none.yaml")


class TestTemperatureTerms:
    nodes = np.array([[0.0, 0.0, 0.0], [2.0, 1.0, 0.0], [4.0, 0.0, 3.0]])

    def test_sum_of_terms(self):
        spec = [{"uniform": 20.0}, {"linear": {"gradient": [1.0, 0.0, 2.0]}}]
        np.testing.assert_allclose(temperature_field(spec, self.nodes), [20.0, 22.0, 30.0])

    def test_power_law(self):
        spec = {"power": {"axis": "x", "length": 4.0, "amplitude": 100.0, "exponent": 2}}
        np.testing.assert_allclose(temperature_field(spec, self.nodes), [0.0, 25.0, 100.0])

    def test_gaussian_in_plane(self):
        spec = {"gaussian": {"center": [2.0, 1.0, 9.0], "radius": 2.0, "amplitude": 10.0, "axes": "xy"}}
        got = temperature_field(spec, self.nodes)
        np.testing.assert_allclose(got, 10.0 * np.exp(-np.array([5.0, 0.0, 5.0]) / 4.0))

    def test_file(self, tmp_path):
        np.savetxt(tmp_path / "t.txt", [1.0, 2.0, 3.0])
        np.testing.assert_allclose(temperature_field({"file": "t.txt"}, self.nodes, tmp_path), [1, 2, 3])

    def test_unknown_term(self):
        with pytest.raises(ConfigError):
            temperature_field({"sine": 1.0}, self.nodes)
