import csv
import json
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from dfmap.cli import main
from dfmap.panel_io import read_panel_csv, write_panel_csv


def write_config(path: Path, payload: dict) -> Path:
    path.write_text(json.dumps(payload, indent=2))
    return path


def simulate_config(out_dir, n=8, T=40, seed=5, fraction=0.2, **missing):
    return {
        "command": "simulate",
        "dgp": {"n": n, "T": T, "r": 1, "p": 0, "seed": seed},
        "missing": {"fraction": fraction, "seed": seed, **missing},
        "output_dir": str(out_dir),
    }


def estimate_config(data_path, out_dir, **fit):
    return {
        "command": "estimate",
        "data_path": str(data_path),
        "model": {"r": 1, "p": 0, "q": 1},
        "fit": fit,
        "output_dir": str(out_dir),
    }


def read_bytes_map(out_dir: Path, names) -> dict:
    return {name: (out_dir / name).read_bytes() for name in names}


class TestThetaJsonRoundTrip:
    def test_round_trip_preserves_values(self, rng, tmp_path):
        from dfmap.model import ModelOrder, Theta
        from dfmap.panel_io import theta_from_dict, theta_to_dict, write_json, read_json

        order = ModelOrder(n=3, r=2, p=1, q=2)
        theta = Theta(
            Lambda=rng.standard_normal((3, order.loading_dim)),
            Phi=rng.standard_normal((2, order.var_dim)),
            psi=rng.uniform(0.5, 2.0, 3),
            omega=rng.uniform(0.5, 2.0, 2),
        )
        path = tmp_path / "theta.json"
        write_json(path, theta_to_dict(theta, order))
        loaded, loaded_order = theta_from_dict(read_json(path))
        assert loaded_order == order
        np.testing.assert_array_equal(loaded.Lambda, theta.Lambda)
        np.testing.assert_array_equal(loaded.Phi, theta.Phi)
        np.testing.assert_array_equal(loaded.psi, theta.psi)
        np.testing.assert_array_equal(loaded.omega, theta.omega)


class TestPanelCsvRoundTrip:
    def test_missing_cells_round_trip(self, tmp_path, rng):
        values = rng.standard_normal((3, 7))
        mask = rng.random((3, 7)) > 0.3
        path = tmp_path / "panel.csv"
        write_panel_csv(path, values, mask=mask, names=["a", "b", "c"])
        loaded, names, labels = read_panel_csv(path)
        assert names == ["a", "b", "c"]
        np.testing.assert_array_equal(np.isfinite(loaded), mask)
        np.testing.assert_array_equal(loaded[mask], values[mask])

    def test_malformed_cell_diagnoses_row_and_column(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("time,x1,x2\n1,0.5,oops\n")
        with pytest.raises(ValueError, match=r"row 2.*x2"):
            read_panel_csv(path)

    def test_ragged_row_rejected(self, tmp_path):
        path = tmp_path / "bad.csv"
        path.write_text("time,x1,x2\n1,0.5\n")
        with pytest.raises(ValueError, match="row 2"):
            read_panel_csv(path)


class TestSimulateCommand:
    def test_artifacts_and_determinism(self, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        cfg1 = write_config(tmp_path / "c1.json", simulate_config(out1, seed=11))
        cfg2 = write_config(tmp_path / "c2.json", simulate_config(out2, seed=11))
        assert main(["--config", str(cfg1)]) == 0
        assert main(["--config", str(cfg2)]) == 0
        for name in ("panel.csv", "truth_common.csv", "truth_params.json"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_na_share_tracks_fraction(self, tmp_path):
        out = tmp_path / "out"
        cfg = write_config(tmp_path / "c.json",
                           simulate_config(out, n=100, T=100, fraction=0.4))
        assert main(["--config", str(cfg)]) == 0
        values, _, _ = read_panel_csv(out / "panel.csv")
        assert abs((~np.isfinite(values)).mean() - 0.4) < 0.02

    def test_ragged_edge_pattern_passes_through(self, tmp_path):
        out = tmp_path / "out"
        cfg = write_config(
            tmp_path / "c.json",
            simulate_config(out, n=12, T=20, fraction=0.0,
                            pattern="ragged_edge", max_delay=3))
        assert main(["--config", str(cfg)]) == 0
        values, _, _ = read_panel_csv(out / "panel.csv")
        for i in range(12):
            missing = np.flatnonzero(~np.isfinite(values[i]))
            assert missing.size <= 3
            if missing.size:
                np.testing.assert_array_equal(
                    missing, np.arange(20 - missing.size, 20))

    def test_correlated_noise_covariance_recorded(self, tmp_path):
        out = tmp_path / "out"
        payload = simulate_config(out, n=5, T=30, fraction=0.0)
        payload["dgp"]["delta"] = 0.5
        cfg = write_config(tmp_path / "c.json", payload)
        assert main(["--config", str(cfg)]) == 0
        params = json.loads((out / "truth_params.json").read_text())
        Sigma = np.array(params["Sigma"])
        assert Sigma.shape == (5, 5)
        assert np.all(np.abs(np.diag(Sigma, 1)) > 0)
        np.testing.assert_allclose(
            Sigma[0, 1], 0.5 * np.sqrt(Sigma[0, 0] * Sigma[1, 1]), rtol=1e-12)


class TestEstimateCommand:
    def test_end_to_end_convergence(self, tmp_path):
        sim_out = tmp_path / "sim"
        write_config(tmp_path / "sim.json", simulate_config(sim_out, seed=3))
        assert main(["--config", str(tmp_path / "sim.json")]) == 0
        est_out = tmp_path / "est"
        cfg = write_config(tmp_path / "est.json",
                           estimate_config(sim_out / "panel.csv", est_out))
        assert main(["--config", str(cfg)]) == 0
        for name in ("theta.json", "factors.csv", "common_component.csv",
                     "convergence.csv", "resolved_config.json"):
            assert (est_out / name).exists()
        with (est_out / "convergence.csv").open() as fh:
            rows = list(csv.DictReader(fh))
        assert rows[0]["rel_change"] == "NA"
        assert float(rows[-1]["rel_change"]) < 1e-4
        payload = json.loads((est_out / "theta.json").read_text())
        assert payload["converged"] is True
        values, names, labels = read_panel_csv(est_out / "common_component.csv")
        assert values.shape == (8, 40)

    def test_missing_data_path_is_usage_error(self, tmp_path, capsys):
        cfg = write_config(tmp_path / "c.json", {
            "command": "estimate",
            "model": {"r": 1, "p": 0, "q": 1},
            "output_dir": str(tmp_path / "out"),
        })
        assert main(["--config", str(cfg)]) == 1
        err = capsys.readouterr().err
        assert "usage" in err and "data_path" in err

    def test_forced_nonconvergence_exits_two_with_artifacts(self, tmp_path):
        sim_out = tmp_path / "sim"
        write_config(tmp_path / "sim.json", simulate_config(sim_out, seed=4))
        main(["--config", str(tmp_path / "sim.json")])
        est_out = tmp_path / "est"
        cfg = write_config(
            tmp_path / "est.json",
            estimate_config(sim_out / "panel.csv", est_out, tol=1e-12, max_iter=1))
        assert main(["--config", str(cfg)]) == 2
        assert (est_out / "theta.json").exists()
        assert json.loads((est_out / "theta.json").read_text())["converged"] is False

    def test_unknown_config_key_rejected(self, tmp_path, capsys):
        sim_out = tmp_path / "sim"
        write_config(tmp_path / "sim.json", simulate_config(sim_out))
        main(["--config", str(tmp_path / "sim.json")])
        payload = estimate_config(sim_out / "panel.csv", tmp_path / "est")
        payload["shrinkage"] = 2.0
        cfg = write_config(tmp_path / "est.json", payload)
        assert main(["--config", str(cfg)]) == 1
        assert "shrinkage" in capsys.readouterr().err

    def test_resolved_config_reproduces_run(self, tmp_path):
        sim_out = tmp_path / "sim"
        write_config(tmp_path / "sim.json", simulate_config(sim_out, seed=6))
        main(["--config", str(tmp_path / "sim.json")])
        est1 = tmp_path / "est1"
        cfg = write_config(tmp_path / "est.json",
                           estimate_config(sim_out / "panel.csv", est1))
        assert main(["--config", str(cfg)]) == 0
        resolved = json.loads((est1 / "resolved_config.json").read_text())
        est2 = tmp_path / "est2"
        resolved["output_dir"] = str(est2)
        cfg2 = write_config(tmp_path / "resolved.json", resolved)
        assert main(["--config", str(cfg2)]) == 0
        for name in ("theta.json", "factors.csv", "common_component.csv",
                     "convergence.csv"):
            assert (est1 / name).read_bytes() == (est2 / name).read_bytes()

    def test_bad_csv_exits_one(self, tmp_path, capsys):
        bad = tmp_path / "bad.csv"
        bad.write_text("time,x1\n1,zzz\n")
        cfg = write_config(tmp_path / "c.json",
                           estimate_config(bad, tmp_path / "out"))
        assert main(["--config", str(cfg)]) == 1
        assert "zzz" in capsys.readouterr().err


class TestStudyCommand:
    def study_payload(self, out_dir, replications=3, workers=1):
        return {
            "command": "study",
            "grid": [{"n": 6, "T": 30, "r": 1, "p": 0, "seed": 900}],
            "missing_fractions": [0.0, 0.3],
            "r_hat": 1, "p_hat": 0, "q_hat": 1,
            "estimators": ["map", "ml"],
            "replications": replications,
            "workers": workers,
            "fit": {"max_iter": 200, "tol": 0.0001, "init": "pca"},
            "output_dir": str(out_dir),
        }

    def test_empty_grid_exits_zero(self, tmp_path):
        payload = self.study_payload(tmp_path / "out")
        payload["grid"] = []
        cfg = write_config(tmp_path / "c.json", payload)
        assert main(["--config", str(cfg)]) == 0
        text = (tmp_path / "out" / "study_results.csv").read_text()
        assert len(text.splitlines()) == 1  # header only

    def test_artifacts_written(self, tmp_path):
        out = tmp_path / "out"
        cfg = write_config(tmp_path / "c.json", self.study_payload(out))
        assert main(["--config", str(cfg)]) == 0
        with (out / "study_results.csv").open() as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 2 * 2  # fractions x estimators
        map_rows = [r for r in rows if r["estimator"] == "map"]
        assert all(r["ratio_to_ml"] != "NA" for r in map_rows)
        assert (out / "study_table.txt").read_text().strip()

    def test_resume_matches_uninterrupted_run(self, tmp_path):
        full_out = tmp_path / "full"
        cfg_full = write_config(tmp_path / "full.json",
                                self.study_payload(full_out))
        assert main(["--config", str(cfg_full)]) == 0

        resumed_out = tmp_path / "resumed"
        cfg_resumed = write_config(tmp_path / "resumed.json",
                                   self.study_payload(resumed_out))
        assert main(["--config", str(cfg_resumed)]) == 0
        with (resumed_out / "study_partial.csv").open() as fh:
            rows = list(csv.reader(fh))
        # simulate an interrupt: first replication complete, second half done
        kept = [rows[0]]
        kept += [row for row in rows[1:] if row[3] == "0"]
        kept += [row for row in rows[1:] if row[3] == "1" and row[2] == "map"]
        with (resumed_out / "study_partial.csv").open("w", newline="") as fh:
            csv.writer(fh).writerows(kept)
        (resumed_out / "study_results.csv").unlink()
        assert main(["--config", str(cfg_resumed)]) == 0
        assert ((full_out / "study_results.csv").read_bytes()
                == (resumed_out / "study_results.csv").read_bytes())
        assert ((full_out / "study_partial.csv").read_bytes()
                == (resumed_out / "study_partial.csv").read_bytes())

    def test_seed_override_applies_to_grid(self, tmp_path):
        out1, out2 = tmp_path / "s1", tmp_path / "s2"
        cfg1 = write_config(tmp_path / "c1.json",
                            self.study_payload(out1, replications=2))
        cfg2 = write_config(tmp_path / "c2.json",
                            self.study_payload(out2, replications=2))
        assert main(["--config", str(cfg1), "--seed", "1234"]) == 0
        assert main(["--config", str(cfg2)]) == 0
        assert ((out1 / "study_results.csv").read_bytes()
                != (out2 / "study_results.csv").read_bytes())
        resolved = json.loads((out1 / "resolved_config.json").read_text())
        assert resolved["grid"][0]["seed"] == 1234


class TestEntryPoint:
    def test_module_invocation(self, tmp_path):
        out = tmp_path / "out"
        cfg = write_config(tmp_path / "c.json", simulate_config(out, seed=2))
        proc = subprocess.run(
            [sys.executable, "-m", "dfmap.cli", "--config", str(cfg)],
            capture_output=True, text=True,
            cwd=Path(__file__).resolve().parents[1],
            env={"PYTHONPATH": "src", "PATH": "/usr/bin:/bin"},
        )
        assert proc.returncode == 0, proc.stderr
        assert (out / "panel.csv").exists()

    def test_missing_config_flag_is_usage_error(self):
        proc = subprocess.run(
            [sys.executable, "-m", "dfmap.cli"],
            capture_output=True, text=True,
            cwd=Path(__file__).resolve().parents[1],
            env={"PYTHONPATH": "src", "PATH": "/usr/bin:/bin"},
        )
        assert proc.returncode == 1
        assert "usage" in proc.stderr
