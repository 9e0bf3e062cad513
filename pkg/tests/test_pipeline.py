import csv
import json

import numpy as np
import pytest

from evprom.config import EnrichmentSettings, Tolerances
from evprom.fem import build_integration_table, read_mesh
from evprom.hf import LoadingProgram, PiecewiseLinear, SnapshotArchive, generate_archive
from evprom.pipeline import (
    PipelineError,
    export_results,
    load_offline,
    offline_pipeline,
    online_pipeline,
    save_offline,
    write_csv,
)
from evprom.rom import run_rom_transient

from conftest import bending, elastic_problem

QUANTITIES = ("p", "s11")
TOL = Tolerances(pod=1e-6, op_comp=1e-6, gappy_pod=1e-6)


@pytest.fixture(scope="module")
def loadings():
    return [bending(), bending("bend low", 24.0)]


@pytest.fixture(scope="module")
def artifacts(small_problem, small_archive, loadings):
    return offline_pipeline(small_problem, loadings, TOL, QUANTITIES, archive=small_archive)


@pytest.fixture(scope="module")
def online_loading():
    return bending("bend mid", 27.0)


@pytest.fixture(scope="module")
def reference(small_problem, online_loading):
    return generate_archive(small_problem, [online_loading], tol=1e-10)["bend mid"]


class TestOffline:
    def test_stages_and_artifacts(self, artifacts):
        assert set(artifacts.timings) == {"reduction", "calibration"}
        assert set(artifacts.calibration.models) == {("p", "all"), ("s11", "all")}
        assert artifacts.model.n >= 1 and artifacts.model.d >= 1

    def test_save_and_load(self, small_problem, artifacts, tmp_path):
        save_offline(tmp_path, small_problem, artifacts, TOL)
        names = {p.name for p in (tmp_path / "offline").iterdir()}
        assert {"model.npz", "mesh.txt", "calibration.json", "pod_spectrum.csv", "quadrature.csv",
                "calibration_pairs.csv", "manifest.json", "archive"} <= names
        back = load_offline(tmp_path, small_problem)
        np.testing.assert_array_equal(back.model.Phi, artifacts.model.Phi)
        np.testing.assert_array_equal(back.model.quadrature.indices, artifacts.model.quadrature.indices)
        np.testing.assert_array_equal(back.model.quadrature.weights, artifacts.model.quadrature.weights)
        assert back.archive.labels == artifacts.archive.labels
        for x in (0.0, 0.05, 0.3):
            assert back.calibration.indicator("p", None, x) == artifacts.calibration.indicator("p", None, x)

    def test_hf_failure_is_staged(self, small_problem):
        bad = LoadingProgram("crush", [1.0], pressure_coefficient=PiecewiseLinear([0, 1], [0, -1e9]),
                             pressure_shape={"ymax": 1.0})
        with pytest.raises(PipelineError) as info:
            offline_pipeline(small_problem, [bad], Tolerances(hf_newton=1e-14))
        assert info.value.stage == "hf"

    def test_single_elastic_loading_one_mode(self, elastic_bar):
        problem = elastic_problem(elastic_bar)
        loading = LoadingProgram("pull", [1.0, 2.0, 3.0],
                                 pressure_coefficient=PiecewiseLinear([0, 3], [0.0, 30.0]),
                                 pressure_shape={"xmax": 1.0})
        art = offline_pipeline(problem, [loading], Tolerances(pod=0.999), ("s11",))
        assert art.model.n == 1


class TestOnline:
    def test_infinite_threshold_matches_plain_rom(self, small_problem, artifacts, online_loading, reference):
        settings = EnrichmentSettings(threshold=np.inf, quantities=QUANTITIES)
        result = online_pipeline(small_problem, artifacts, online_loading, TOL, settings, reference)
        assert result.log.n_enrichments == 0
        plain = run_rom_transient(artifacts.model, small_problem, online_loading, TOL.rom_newton)
        for k, res in enumerate(plain.steps):
            np.testing.assert_array_equal(result.u[k], artifacts.model.displacement(res.u_hat))
        assert np.all(np.isfinite(result.log.max_error()))

    def test_zero_threshold_enriches_and_zeroes(self, small_problem, artifacts, online_loading, reference):
        settings = EnrichmentSettings(threshold=0.0, quantities=QUANTITIES)
        result = online_pipeline(small_problem, artifacts, online_loading, TOL, settings, reference)
        assert result.log.n_enrichments >= 1
        first = next(e for e in result.log.entries if e.enriched)
        np.testing.assert_array_equal(result.u[first.step], reference.u[first.step])
        assert all(v == 0.0 for v in first.indicators.values())
        assert all(v == 0.0 for v in first.errors.values())
        assert result.model.n >= artifacts.model.n

    def test_enrichment_needs_reference(self, small_problem, artifacts, online_loading):
        with pytest.raises(PipelineError) as info:
            online_pipeline(small_problem, artifacts, online_loading, TOL,
                            EnrichmentSettings(quantities=QUANTITIES))
        assert info.value.stage == "config"

    def test_reference_length_mismatch(self, small_problem, artifacts, reference):
        short = bending("short", 27.0, times=(1.0, 2.0))
        with pytest.raises(PipelineError) as info:
            online_pipeline(small_problem, artifacts, short, TOL, EnrichmentSettings(quantities=QUANTITIES),
                            reference)
        assert info.value.stage == "config"

    def test_uncalibrated_region(self, small_problem, artifacts, online_loading, reference):
        settings = EnrichmentSettings(quantities=("s11",), regions=("1",))
        with pytest.raises(PipelineError) as info:
            online_pipeline(small_problem, artifacts, online_loading, TOL, settings, reference)
        assert info.value.stage == "calibration"

    def test_save_and_export(self, small_problem, artifacts, online_loading, reference, tmp_path):
        settings = EnrichmentSettings(quantities=QUANTITIES)
        result = online_pipeline(small_problem, artifacts, online_loading, TOL, settings, reference)
        save_offline(tmp_path, small_problem, artifacts, TOL)
        result.save(tmp_path)
        header = (tmp_path / "online" / "enrichment_log.csv").read_text().splitlines()[0].split(",")
        assert header[:4] == ["step", "time", "iterations", "enriched"]
        assert "indicator_p_all" in header and "error_s11_all" in header
        summary = json.loads((tmp_path / "online" / "summary.json").read_text())
        assert summary["enrichments"] == result.log.n_enrichments

        written = export_results(tmp_path)
        assert len(written) == 1 + online_loading.n_steps
        with open(tmp_path / "export" / "regions.csv") as fh:
            rows = list(csv.DictReader(fh))
        mesh = read_mesh(tmp_path / "offline" / "mesh.txt")
        table = build_integration_table(mesh)
        for k in range(online_loading.n_steps):
            step = [r for r in rows if int(r["step"]) == k]
            total = next(r for r in step if r["region"] == "all")
            parts = [r for r in step if r["region"] != "all"]
            for col in ("volume", "norm2_p", "norm2_s11"):
                np.testing.assert_allclose(sum(float(r[col]) for r in parts), float(total[col]), rtol=1e-12)
            np.testing.assert_allclose(float(total["volume"]), table.volume())


class TestExport:
    def test_empty_solution_writes_header_only(self, small_problem, artifacts, tmp_path):
        save_offline(tmp_path, small_problem, artifacts, TOL)
        written = export_results(tmp_path)
        assert len(written) == 1
        assert written[0].read_text() == "step,region,volume\n"

    def test_missing_offline_directory(self, tmp_path):
        with pytest.raises(OSError):
            export_results(tmp_path)


def test_write_csv_formatting(tmp_path):
    write_csv(tmp_path / "a.csv", ["a", "b", "c"], [[0.1, True, "x"], [1e-300, False, 3]])
    assert (tmp_path / "a.csv").read_text() == "a,b,c\n0.10000000000000001,1,x\n1e-300,0,3\n"


def test_archive_roundtrip_through_offline(small_problem, artifacts, tmp_path):
    save_offline(tmp_path, small_problem, artifacts, TOL)
    back = SnapshotArchive.load(tmp_path / "offline" / "archive")
    np.testing.assert_array_equal(back.stacked("u"), artifacts.archive.stacked("u"))
