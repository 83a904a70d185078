"""
Tests para redes sintéticas, simulación de Poisson, tasas y archivos de diseño
"""
import json
from pathlib import Path

import numpy as np
import pytest

from app.core.errors import InvalidInputError, ResourceLimitError
from app.services.network import SubNetwork, build_network
from app.services.simulation import (
    confusion,
    load_design_entries,
    load_designs,
    rates_table,
    resolve_design,
    rpoislpp,
    run_design,
    simulate_arrays,
    simulate_design,
    superpose,
)
from app.services.synthetic import (
    city_grid,
    generate,
    grid_with_loops,
    random_tree,
    two_road_grid,
)

DESIGNS_DIR = Path(__file__).resolve().parent.parent / "designs"


def line_design(reps=3, policies=("5",), seed=11):
    """Diseño chico sobre una poligonal: clutter en toda la red y feature en 20 segmentos"""
    return {
        "name": "line-d1",
        "reps": reps,
        "k_policies": list(policies),
        "seed": seed,
        "network": {"generator": "long_line", "params": {"total_length": 2000.0, "n_segments": 200}},
        "layers": [
            {"role": "clutter", "rate": 0.05, "region": "full"},
            {"role": "feature", "rate": 0.5, "region": list(range(20))},
        ],
    }


def write_design(tmp_path, *entries):
    path = tmp_path / "designs.json"
    path.write_text(json.dumps({"design": list(entries)}))
    return str(path)


class TestSyntheticNetworks:
    """Tests para los generadores de redes sintéticas"""

    def test_grid_with_loops(self):
        """Debe tener la longitud pedida y `nested` debe contener a `feature`"""
        synthetic = grid_with_loops()
        net = synthetic.network
        assert net.total_length == pytest.approx(31150.0)
        feature = synthetic.region("feature")
        nested = synthetic.region("nested")
        assert 2991.0 <= feature.total_length < 2991.0 + net.seg_length.max()
        assert 11731.0 <= nested.total_length < 11731.0 + net.seg_length.max()
        assert np.all(np.isin(feature.segment_ids, nested.segment_ids))

    def test_random_tree_has_no_cycles(self):
        net = random_tree().network
        assert net.total_length == pytest.approx(1934.0)
        assert net.n_components == 1
        assert net.n_vertices == net.n_segments + 1

    def test_two_road_grid(self):
        """Los dos caminos deben ser disjuntos y tener al menos la longitud pedida"""
        synthetic = two_road_grid()
        road1, road2 = synthetic.region("road1"), synthetic.region("road2")
        assert synthetic.network.total_length == pytest.approx(128690.0)
        assert np.intersect1d(road1.segment_ids, road2.segment_ids).size == 0
        assert road1.total_length >= 8320.0
        assert road2.total_length >= 3680.0

    def test_city_grid_zones_partition(self):
        """Las zonas deben cubrir la red sin superponerse"""
        synthetic = city_grid(cells=6, spacing=10.0, zones=3)
        ids = np.concatenate([synthetic.regions[f"zone{z}"] for z in range(3)])
        assert np.array_equal(np.sort(ids), synthetic.network.segment_ids)

    def test_unknown_generator_and_region(self):
        with pytest.raises(InvalidInputError):
            generate("chicago")
        with pytest.raises(InvalidInputError):
            generate("y_network").region("feature")


class TestPoissonSimulation:
    """Tests para rpoislpp y simulate_arrays"""

    def test_count_and_locations(self):
        """El número de puntos debe ser cercano a λ·|L| y los offsets válidos"""
        net = build_network([((0.0, 0.0), (60.0, 0.0)), ((60.0, 0.0), (60.0, 40.0))])
        segment_ids, offsets = simulate_arrays(net, 50.0, np.random.default_rng(1))
        assert abs(segment_ids.size - 5000) < 5 * np.sqrt(5000)
        assert np.all(offsets >= 0)
        assert np.all(offsets <= net.seg_length[segment_ids])
        share = np.mean(segment_ids == 0)
        assert share == pytest.approx(0.6, abs=0.05)

    def test_restricted_to_region(self):
        net = build_network([((0.0, 0.0), (10.0, 0.0)), ((10.0, 0.0), (20.0, 0.0))])
        points = rpoislpp(SubNetwork(net, [1]), 5.0, np.random.default_rng(2))
        assert points
        assert {p.segment_id for p in points} == {1}

    def test_reproducible(self, unit_line):
        first = rpoislpp(unit_line, 30.0, np.random.default_rng(9))
        second = rpoislpp(unit_line, 30.0, np.random.default_rng(9))
        assert first == second

    def test_resource_limit(self, unit_line):
        """Debe rechazar simulaciones con demasiados puntos esperados"""
        with pytest.raises(ResourceLimitError):
            simulate_arrays(unit_line, 1e12, np.random.default_rng(0))

    def test_invalid_rate(self, unit_line):
        with pytest.raises(InvalidInputError):
            simulate_arrays(unit_line, 0.0, np.random.default_rng(0))


class TestRates:
    """Tests para superpose y confusion"""

    def test_superpose(self):
        clutter = (np.array([0, 1]), np.array([0.5, 0.5]))
        feature = (np.array([2]), np.array([0.25]))
        pattern = superpose([(clutter, "clutter"), (feature, "feature")])
        assert pattern.truth == ["clutter", "clutter", "feature"]
        assert pattern.layer == [0, 0, 1]
        assert pattern.points[2].segment_id == 2

    def test_confusion(self):
        rates = confusion(["feature", "feature", "clutter", "clutter"],
                          ["feature", "clutter", "feature", "clutter"])
        assert (rates.tp, rates.fn, rates.fp, rates.tn) == (1, 1, 1, 1)
        assert rates.tpr == 0.5
        assert rates.fpr == 0.5
        assert rates.acc == 0.5

    def test_confusion_without_features(self):
        """Sin features verdaderos TPR no está definido"""
        rates = confusion(["clutter", "clutter"], ["clutter", "feature"])
        assert rates.tpr is None
        assert rates.fpr == 0.5

    def test_confusion_length_mismatch(self):
        with pytest.raises(InvalidInputError):
            confusion(["feature"], ["feature", "clutter"])


class TestDesignFiles:
    """Tests para la lectura de archivos de diseño"""

    def test_bundled_tables(self):
        """Los archivos incluidos deben declarar los diseños de las tablas"""
        counts = {"table1.toml": 6, "table2.toml": 6, "table3.toml": 10, "table4.toml": 10}
        for name, expected in counts.items():
            entries = load_design_entries(str(DESIGNS_DIR / name))
            assert len(entries) == expected
        first = load_design_entries(str(DESIGNS_DIR / "table1.toml"))[0]
        assert first.name == "table1-d1"
        assert [layer.rate for layer in first.layers] == [0.032, 0.1]
        assert first.network.generator == "grid_with_loops"

    def test_resolve_bundled_design(self):
        spec = load_designs(str(DESIGNS_DIR / "table1_d1.toml"))[0]
        region, rate, role = spec.layers[1]
        assert role == "feature"
        assert rate * region.total_length == pytest.approx(300, rel=0.1)
        assert [p.label for p in spec.k_policies] == ["5", "10", "K_hat"]

    def test_json_design(self, tmp_path):
        path = write_design(tmp_path, line_design())
        spec = load_designs(path)[0]
        assert spec.name == "line-d1"
        assert spec.layers[0][0] is None
        assert spec.layers[1][0].segment_ids.tolist() == list(range(20))

    def test_invalid_design(self, tmp_path):
        """Un diseño sin capa de feature debe rechazarse"""
        entry = line_design()
        entry["layers"] = entry["layers"][:1]
        with pytest.raises(InvalidInputError):
            load_design_entries(write_design(tmp_path, entry))

    def test_unknown_extension(self, tmp_path):
        path = tmp_path / "designs.yaml"
        path.write_text("design: []")
        with pytest.raises(InvalidInputError):
            load_design_entries(str(path))


class TestRunDesign:
    """Tests para run_design y simulate_design"""

    def test_small_design(self, tmp_path):
        """Cada réplica debe contarse como éxito o fallo y las tasas estar en [0, 1]"""
        spec = load_designs(write_design(tmp_path, line_design(reps=3)))[0]
        report = run_design(spec, threads=1)
        entry = report.policy("5")
        assert entry.successes + entry.failures == 3
        assert entry.successes > 0
        assert 0.0 <= entry.acc <= 1.0
        assert report.expected_counts[0] == pytest.approx(100.0)
        assert len(report.per_rep) == 3

    def test_simulate_design_matches_replicate(self, tmp_path):
        """simulate_design debe reproducir el patrón de la réplica correspondiente"""
        spec = load_designs(write_design(tmp_path, line_design(reps=2)))[0]
        report = run_design(spec, threads=1)
        pattern = simulate_design(spec, rep=1)
        counts = [pattern.layer.count(0), pattern.layer.count(1)]
        assert counts == report.per_rep[1].layer_counts

    def test_auto_policy_reports_k(self, tmp_path):
        spec = load_designs(write_design(tmp_path, line_design(reps=2, policies=("auto:8",))))[0]
        report = run_design(spec, threads=1)
        entry = report.policy("K_hat")
        if entry.successes:
            assert 1 <= entry.k_mean <= 8
            assert entry.k_sd >= 0

    def test_insufficient_points_only_fail_their_policy(self, tmp_path):
        """Una política con k_max inalcanzable no debe invalidar las réplicas de K fijo"""
        entry = line_design(reps=2, policies=("5", "auto:1000"))
        spec = load_designs(write_design(tmp_path, entry))[0]
        report = run_design(spec, threads=1)
        assert report.policy("5").successes == 2
        assert report.policy("K_hat").successes == 0
        assert report.policy("K_hat").failures == 2
        for rep in report.per_rep:
            assert rep.rates["5"] is not None
            assert rep.rates["K_hat"] is None

    def test_rates_table_columns(self, tmp_path):
        spec = load_designs(write_design(tmp_path, line_design(reps=2)))[0]
        table = rates_table([run_design(spec, threads=1)])
        for column in ("design", "lambda_clutter1", "lambda_feature1", "expected_n_feature1",
                       "mean_n_clutter1", "TPR_5", "FPR_5", "ACC_5", "failures_5"):
            assert column in table.columns
        assert table.loc[0, "design"] == "line-d1"

    @pytest.mark.slow
    def test_threads_do_not_change_results(self, tmp_path):
        """El resultado no debe depender del número de procesos"""
        spec = load_designs(write_design(tmp_path, line_design(reps=4)))[0]
        single = run_design(spec, threads=1)
        multi = run_design(spec, threads=2)
        assert single.policy("5") == multi.policy("5")

    @pytest.mark.slow
    def test_table1_d1_rates(self):
        """La clasificación del primer diseño debe separar bien feature de clutter"""
        spec = load_designs(str(DESIGNS_DIR / "table1_d1.toml"))[0]
        spec = spec.model_copy(update={"reps": 10})
        report = run_design(spec, threads=1)
        fixed = report.policy("10")
        assert fixed.successes >= 8
        assert fixed.acc > 0.7
        assert fixed.tpr > 0.6
        auto = report.policy("K_hat")
        assert auto.k_mean is not None and 1 <= auto.k_mean <= 35
