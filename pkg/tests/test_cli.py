"""
Tests para la interfaz de línea de comandos
"""
import argparse
import json
import os

import pandas as pd
import pytest

from app.cli import main, parse_ks, parse_param
from app.core.errors import EXIT_INPUT_ERROR, EXIT_OK


def write_line_design(tmp_path):
    design = {
        "design": [{
            "name": "line-d1",
            "reps": 2,
            "k_policies": ["5"],
            "seed": 5,
            "network": {"generator": "long_line", "params": {"total_length": 2000.0, "n_segments": 200}},
            "layers": [
                {"role": "clutter", "rate": 0.05, "region": "full"},
                {"role": "feature", "rate": 0.5, "region": list(range(20))},
            ],
        }]
    }
    path = tmp_path / "line.json"
    path.write_text(json.dumps(design))
    return str(path)


class TestArgumentParsing:
    """Tests para parse_ks y parse_param"""

    def test_parse_ks(self):
        assert parse_ks("27-32") == [27, 28, 29, 30, 31, 32]
        assert parse_ks("10,5,10") == [5, 10]
        assert parse_ks("3,7-8") == [3, 7, 8]

    def test_parse_ks_invalid(self):
        with pytest.raises(argparse.ArgumentTypeError):
            parse_ks("0")
        with pytest.raises(argparse.ArgumentTypeError):
            parse_ks("")

    def test_parse_param(self):
        """Los valores se interpretan como JSON cuando es posible"""
        assert parse_param("cells=12") == ("cells", 12)
        assert parse_param("name=norte") == ("name", "norte")
        with pytest.raises(argparse.ArgumentTypeError):
            parse_param("cells")


class TestCommands:
    """Tests de los subcomandos de punta a punta"""

    def test_simulate_generator(self, tmp_path):
        out = str(tmp_path / "sim")
        code = main(["simulate", "--generator", "y_network", "--param", "arm=10", "--lambda", "2",
                     "--output-dir", out, "--seed", "3"])
        assert code == EXIT_OK
        with open(os.path.join(out, "simulation.json")) as f:
            summary = json.load(f)
        assert summary["expected_count"] == pytest.approx(60.0)
        assert summary["seed"] == 3
        pattern = pd.read_csv(os.path.join(out, "pattern.csv"))
        assert len(pattern) == summary["n_points"]

    def test_simulate_then_classify(self, tmp_path):
        """Un patrón simulado desde un diseño se clasifica con la CLI"""
        sim = str(tmp_path / "sim")
        assert main(["simulate", "--design", write_line_design(tmp_path), "--output-dir", sim]) == EXIT_OK
        network = os.path.join(sim, "line-d1_network.csv")
        points = os.path.join(sim, "line-d1_pattern_0.csv")
        assert os.path.exists(network) and os.path.exists(points)

        out = str(tmp_path / "clasif")
        code = main(["classify", "--network", network, "--points", points, "--k", "5",
                     "--output-dir", out, "--no-plots"])
        assert code == EXIT_OK
        with open(os.path.join(out, "fit.json")) as f:
            assert json.load(f)["K"] == 5
        labelled = pd.read_csv(os.path.join(out, "labelled.csv"))
        assert len(labelled) == len(pd.read_csv(points))

    def test_volumes_and_hist(self, tmp_path, clustered_files):
        network, points = clustered_files
        out = str(tmp_path / "vol")
        assert main(["volumes", "--network", network, "--points", points, "--k", "3",
                     "--output-dir", out]) == EXIT_OK
        volumes = pd.read_csv(os.path.join(out, "volumes_K3.csv"))
        assert (volumes["s_K"] > 0).all()

        assert main(["hist", "--network", network, "--points", points, "--ks", "4-5",
                     "--output-dir", out, "--no-plots", "--format", "json"]) == EXIT_OK
        assert os.path.exists(os.path.join(out, "hist_K4.json"))
        assert os.path.exists(os.path.join(out, "hist_K5.json"))

    def test_rates(self, tmp_path):
        out = str(tmp_path / "rates")
        code = main(["rates", "--design", write_line_design(tmp_path), "--reps", "2",
                     "--output-dir", out])
        assert code == EXIT_OK
        table = pd.read_csv(os.path.join(out, "rates_line.csv"))
        assert table.loc[0, "design"] == "line-d1"
        assert "ACC_5" in table.columns
        with open(os.path.join(out, "line-d1_report.json")) as f:
            report = json.load(f)
        assert "config_hash" in report
        assert "per_rep" not in report


class TestExitCodes:
    """Tests de los códigos de salida y error.json"""

    def test_missing_network_file(self, tmp_path, clustered_files):
        _, points = clustered_files
        out = str(tmp_path / "err")
        code = main(["classify", "--network", str(tmp_path / "no_existe.csv"), "--points", points,
                     "--output-dir", out])
        assert code == EXIT_INPUT_ERROR
        assert os.path.exists(os.path.join(out, "error.json"))

    def test_insufficient_points(self, tmp_path, clustered_files):
        """Un K mayor que el patrón es un error de entrada con mensaje estable"""
        network, points = clustered_files
        out = str(tmp_path / "err")
        code = main(["classify", "--network", network, "--points", points, "--k", "5000",
                     "--output-dir", out, "--no-plots"])
        assert code == EXIT_INPUT_ERROR
        with open(os.path.join(out, "error.json")) as f:
            error = json.load(f)
        assert error["message"].startswith("insufficient points")
        assert error["exit_code"] == EXIT_INPUT_ERROR

    def test_unknown_design_name(self, tmp_path):
        out = str(tmp_path / "err")
        code = main(["simulate", "--design", write_line_design(tmp_path), "--name", "otro",
                     "--output-dir", out])
        assert code == EXIT_INPUT_ERROR

    def test_malformed_geojson(self, tmp_path, clustered_files):
        """Un GeoJSON mal formado termina con código 2 y no con una traza"""
        _, points = clustered_files
        network = tmp_path / "red.geojson"
        network.write_text(json.dumps([{"type": "LineString"}]))
        out = str(tmp_path / "err")
        code = main(["classify", "--network", str(network), "--points", points, "--output-dir", out])
        assert code == EXIT_INPUT_ERROR
        assert os.path.exists(os.path.join(out, "error.json"))
