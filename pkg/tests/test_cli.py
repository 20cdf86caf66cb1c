import json
from pathlib import Path

import numpy as np
import pytest

from gradsteer.cli import (ConfigError, CsvError, EXIT_CONFIG, EXIT_DIVERGED,
                           EXIT_GRADCHECK, EXIT_OK, ingest_csv, main,
                           parse_config, run_fit, run_gradcheck, run_simulate,
                           write_csv)

from conftest import REPO, TABLE_V, TABLE_W

DATA_CSV = REPO / "data" / "michaelis_menten.csv"
GOLDEN_CFG = REPO / "configs" / "michaelis_menten.cfg"


def write_config(path: Path, **overrides) -> Path:
    """Small, fast Michaelis-Menten configuration for CLI tests."""
    base = {
        "model": "michaelis_menten",
        "data": str(DATA_CSV),
        "train_indices": "1,3,5,7",
        "validation_indices": "2,4,6",
        "loss_scale": "half",
        "alpha": "0.01", "beta": "0.1",
        "gamma1": "0.01", "gamma2": "1.0",
        "eps_tol": "1e-5", "inner_tol": "1e-5",
        "z": "0.005", "mu": "100.0",
        "terminal_mode": "penalty",
        "T": "0.75", "N_t": "400",
        "u_max": "10.0",
        "theta0": "3.9, 0.0178",
        "leader_mask": "1,0",
        "control": "grid",
        "max_outer": "3", "max_inner": "60",
        "out_dir": "out",
        "seed": "0",
    }
    base.update(overrides)
    lines = [f"{k} = {v}" for k, v in base.items() if v is not None]
    cfg = path / "run.cfg"
    cfg.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return cfg


class TestIngestCsv:
    def test_table_file(self):
        data = ingest_csv(DATA_CSV)
        assert len(data) == 7
        assert data.inputs[0, 0] == 0.3330
        assert data.outputs[0] == 3.6360

    def test_missing_file(self, tmp_path):
        with pytest.raises(CsvError, match="no such file"):
            ingest_csv(tmp_path / "nope.csv")

    def test_no_samples(self, tmp_path):
        f = tmp_path / "empty.csv"
        f.write_text("w,v\n")
        with pytest.raises(CsvError, match="no samples"):
            ingest_csv(f)

    def test_bad_header(self, tmp_path):
        f = tmp_path / "h.csv"
        f.write_text("a,b\n1,2\n")
        with pytest.raises(CsvError, match="h.csv:1"):
            ingest_csv(f)

    def test_non_numeric_row_names_line(self, tmp_path):
        f = tmp_path / "bad.csv"
        f.write_text("w,v\n0.1,abc\n")
        with pytest.raises(CsvError, match="bad.csv:2"):
            ingest_csv(f)

    def test_wrong_column_count(self, tmp_path):
        f = tmp_path / "cols.csv"
        f.write_text("w,v\n0.1,0.2,0.3\n")
        with pytest.raises(CsvError, match="2 columns"):
            ingest_csv(f)

    def test_roundtrip_exact(self, tmp_path, table_data):
        out = tmp_path / "rt.csv"
        write_csv(table_data, out)
        back = ingest_csv(out)
        assert np.array_equal(back.inputs, table_data.inputs)
        assert np.array_equal(back.outputs, table_data.outputs)


class TestParseConfig:
    def test_golden_config(self):
        cfg = parse_config(GOLDEN_CFG)
        assert cfg.grid.steps == 2000
        assert cfg.solver.mu == 1e5
        assert cfg.loss_scale.value == "one"
        assert cfg.split.train_indices == (0, 2, 4, 6)
        assert np.array_equal(cfg.partition.leader_mask, [1.0, 0.0])

    def test_missing_required_key(self, tmp_path):
        cfg = write_config(tmp_path, model=None)
        with pytest.raises(ConfigError, match="model"):
            parse_config(cfg)

    def test_unknown_key_has_line(self, tmp_path):
        cfg = write_config(tmp_path)
        with open(cfg, "a") as fh:
            fh.write("bogus_key = 1\n")
        n_lines = len(cfg.read_text().splitlines())
        with pytest.raises(ConfigError, match=f":{n_lines}:"):
            parse_config(cfg)

    @pytest.mark.parametrize("key,value", [
        ("alpha", "-0.5"), ("beta", "0"), ("gamma1", "1.5"), ("gamma2", "-1"),
        ("eps_tol", "0"), ("z", "-0.1"), ("mu", "-3"), ("N_t", "1"),
        ("T", "-2"), ("u_max", "0"), ("theta0", "1,not_a_number"),
        ("leader_mask", "1,2"), ("control", "fourier"),
        ("loss_scale", "double"), ("terminal_mode", "soft"),
        ("train_indices", "0,1"), ("u1_init", "99"),
    ])
    def test_invariant_violations_rejected(self, tmp_path, key, value):
        cfg = write_config(tmp_path, **{key: value})
        with pytest.raises(ConfigError):
            parse_config(cfg)

    def test_line_precise_message(self, tmp_path):
        cfg = write_config(tmp_path)
        lines = cfg.read_text().splitlines()
        idx = next(i for i, ln in enumerate(lines) if ln.startswith("alpha"))
        lines[idx] = "alpha = -1"
        cfg.write_text("\n".join(lines) + "\n")
        with pytest.raises(ConfigError, match=f":{idx + 1}: alpha"):
            parse_config(cfg)

    def test_overlapping_split_rejected(self, tmp_path):
        cfg = write_config(tmp_path, train_indices="1,2", validation_indices="2,3")
        with pytest.raises(ConfigError):
            parse_config(cfg)

    def test_comments_and_blanks_ok(self, tmp_path):
        cfg = write_config(tmp_path)
        text = "# leading comment\n\n" + cfg.read_text() + "\n# trailing\n"
        cfg.write_text(text)
        parse_config(cfg)


class TestRunFit:
    def test_outputs_and_exit(self, tmp_path):
        cfg = write_config(tmp_path)
        out = tmp_path / "o1"
        assert run_fit(cfg, out) == EXIT_OK
        for name in ("report.json", "trajectory.csv", "controls.csv",
                     "fit_plot.svg", "residuals_plot.svg"):
            assert (out / name).exists()
        report = json.loads((out / "report.json").read_text())
        assert len(report["theta"]) == 2
        assert report["outer_iterations"] == len(report["history"])
        assert len(report["residuals"]["values"]) == 7

    def test_deterministic_modulo_timestamp(self, tmp_path):
        cfg = write_config(tmp_path)
        out1, out2 = tmp_path / "a", tmp_path / "b"
        run_fit(cfg, out1)
        run_fit(cfg, out2)

        def strip_ts(p: Path):
            return [ln for ln in (p / "report.json").read_text().splitlines()
                    if '"timestamp"' not in ln]

        assert strip_ts(out1) == strip_ts(out2)
        for name in ("trajectory.csv", "controls.csv", "fit_plot.svg",
                     "residuals_plot.svg"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_gamma_zero_not_converged(self, tmp_path):
        cfg = write_config(tmp_path, gamma1="0.0", gamma2="0.0")
        out = tmp_path / "oz"
        assert run_fit(cfg, out) == EXIT_OK
        report = json.loads((out / "report.json").read_text())
        assert report["converged"] is False

    def test_divergent_config_exit_3(self, tmp_path, capsys):
        # an extreme target makes the exponential model's flow overflow within
        # the first integration step
        csv = tmp_path / "exp.csv"
        csv.write_text("w,v\n10.0,1e30\n10.0,1e30\n")
        cfg = write_config(tmp_path, model="exponential", data=str(csv),
                           train_indices="1", validation_indices="2",
                           theta0="1.0, 0.1", leader_mask="1,0", T="1.0",
                           N_t="50")
        code = main(["--out", str(tmp_path / "dv"), "fit", str(cfg)])
        assert code == EXIT_DIVERGED


class TestRunSimulate:
    def test_linear_decay(self, tmp_path):
        csv = tmp_path / "lin.csv"
        csv.write_text("w,v\n1.0,0.0\n")
        cfg = write_config(tmp_path, model="linear", data=str(csv),
                           train_indices="1", validation_indices=None,
                           theta0="2.0", leader_mask="0", T="1.0", N_t="50")
        # validation_indices removed; re-add a legal split on one sample? not
        # possible with a single row, so build a 2-row file instead
        csv.write_text("w,v\n1.0,0.0\n1.0,0.0\n")
        cfg = write_config(tmp_path, model="linear", data=str(csv),
                           train_indices="1", validation_indices="2",
                           theta0="2.0", leader_mask="0", T="1.0", N_t="50")
        out = tmp_path / "sim"
        assert run_simulate(cfg, out) == EXIT_OK
        rows = (out / "trajectory.csv").read_text().splitlines()
        assert rows[0] == "t,theta_1"
        last = float(rows[-1].split(",")[1])
        assert abs(last) < 2.0  # decays toward zero

    def test_repeatable(self, tmp_path):
        cfg = write_config(tmp_path)
        out1, out2 = tmp_path / "s1", tmp_path / "s2"
        run_simulate(cfg, out1)
        run_simulate(cfg, out2)
        assert (out1 / "trajectory.csv").read_bytes() == \
            (out2 / "trajectory.csv").read_bytes()

    def test_matches_degenerate_fit_bitwise(self, tmp_path):
        cfg = write_config(tmp_path, gamma1="0.0", gamma2="0.0")
        sim_out, fit_out = tmp_path / "sd", tmp_path / "fd"
        run_simulate(cfg, sim_out)
        run_fit(cfg, fit_out)
        assert (sim_out / "trajectory.csv").read_bytes() == \
            (fit_out / "trajectory.csv").read_bytes()


class TestRunGradcheck:
    def test_passes_and_writes_table(self, tmp_path):
        cfg = write_config(tmp_path, N_t="300", mu="100.0")
        out = tmp_path / "gc"
        assert run_gradcheck(cfg, out) == EXIT_OK
        lines = (out / "gradcheck.csv").read_text().splitlines()
        assert lines[0] == "functional,direction,fd,adjoint,rel_error"
        assert len(lines) == 41  # 20 directions x 2 functionals

    def test_corruption_fails(self, tmp_path):
        cfg = write_config(tmp_path, N_t="300", mu="100.0")
        out = tmp_path / "gcf"
        assert run_gradcheck(cfg, out, corruption=1e-2) == EXIT_GRADCHECK


class TestMain:
    def test_version(self, capsys):
        assert main(["version"]) == EXIT_OK
        from gradsteer import __version__
        assert capsys.readouterr().out.strip() == __version__

    def test_config_error_exit(self, tmp_path, capsys):
        bad = tmp_path / "bad.cfg"
        bad.write_text("model = michaelis_menten\n")
        assert main(["fit", str(bad)]) == EXIT_CONFIG
        assert "error" in capsys.readouterr().err

    def test_missing_config_exit(self, tmp_path):
        assert main(["fit", str(tmp_path / "absent.cfg")]) == EXIT_CONFIG

    def test_out_override(self, tmp_path):
        cfg = write_config(tmp_path, N_t="200", T="0.5", max_outer="1")
        target = tmp_path / "elsewhere"
        assert main(["--out", str(target), "simulate", str(cfg)]) == EXIT_OK
        assert (target / "trajectory.csv").exists()
