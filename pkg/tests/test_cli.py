import os

import numpy as np
import pytest

from polygrade.cli import main
from polygrade.study import (
    StudyConfig,
    cmd_convergence,
    cmd_hardy,
    cmd_norms,
    fit_rate,
    load_config,
)


def write_config(tmp_path, **kv):
    lines = ["[study]"] + [f"{k} = {v}" for k, v in kv.items()]
    path = tmp_path / "study.ini"
    path.write_text("\n".join(lines) + "\n")
    return str(path)


class TestConfig:
    def test_load_and_override(self, tmp_path):
        path = write_config(tmp_path, builtin="lshape2d", degree=1,
                            levels=3, kappa=0.25, out=str(tmp_path / "o"))
        cfg = load_config(path, {"levels": 5, "kappa": None})
        assert cfg.levels == 5
        assert cfg.kappa == 0.25
        assert cfg.builtin == "lshape2d"

    def test_levels_minimum(self):
        with pytest.raises(Exception):
            StudyConfig(builtin="lshape2d", levels=1)


class TestCmdRefine:
    def test_lshape_writes_levels(self, tmp_path):
        path = write_config(tmp_path, builtin="lshape2d", levels=3,
                            kappa=0.25, out=str(tmp_path / "o"))
        rc = main(["refine", "--config", path])
        assert rc == 0
        names = sorted(os.listdir(tmp_path / "o"))
        assert "T_0.txt" in names and "T_3.vtk" in names
        assert "conformity.txt" in names

    def test_wedge_writes_decompositions(self, tmp_path):
        path = write_config(tmp_path, builtin="prismwedge3d", levels=2,
                            kappa=0.25, out=str(tmp_path / "o"))
        rc = main(["refine", "--config", path])
        assert rc == 0
        names = sorted(os.listdir(tmp_path / "o"))
        assert "Tprime_0.txt" in names and "Tprime_2.vtk" in names


class TestCmdConvergence:
    def test_smooth_square_baseline(self, tmp_path):
        # kappa = 1/2 with a smooth solution reproduces rate m/n = 1/2
        path = write_config(tmp_path, builtin="square2d", levels=4,
                            kappa=0.5, problem="smooth",
                            out=str(tmp_path / "o"))
        rc = main(["convergence", "--config", path])
        assert rc == 0
        csv = (tmp_path / "o" / "convergence.csv").read_text()
        header = csv.splitlines()[0]
        assert header == "level,dofs,h_min,L2_error,H1_error,rate_dofs,rate_level,seconds"
        fit = [l for l in csv.splitlines() if "fit_rate_H1_dofs" in l][0]
        rate = float(fit.split("=")[1])
        assert abs(rate - 0.5) <= 0.05

    def test_deterministic_output(self, tmp_path):
        cfg = StudyConfig(builtin="square2d", levels=3, kappa=0.5,
                          problem="smooth")
        a = cmd_convergence(cfg).to_csv()
        b = cmd_convergence(cfg).to_csv()
        # identical apart from wall-clock columns
        strip = lambda t: [",".join(r.split(",")[:5]) for r in t.splitlines()]
        assert strip(a) == strip(b)


class TestCmdHardy:
    def test_opposite_neumann_verdict(self, tmp_path):
        path = write_config(tmp_path, builtin="square2d", levels=4,
                            kappa=0.25, neumann="0,2", out=str(tmp_path / "o"))
        rc = main(["hardy", "--config", path])
        assert rc == 0
        text = (tmp_path / "o" / "hardy.csv").read_text()
        assert text.splitlines()[0] == "level,dofs,lambda_min"
        assert "STABLE-POSITIVE" in text

    def test_adjacent_neumann_verdict(self, tmp_path):
        path = write_config(tmp_path, builtin="square2d", levels=5,
                            kappa=0.25, neumann="0,1", out=str(tmp_path / "o"))
        rc = main(["hardy", "--config", path])
        assert rc == 0
        text = (tmp_path / "o" / "hardy.csv").read_text()
        assert "DECAYING" in text


class TestCmdNorms:
    def test_sweep_csv(self, tmp_path):
        path = write_config(tmp_path, builtin="lshape2d", levels=2,
                            norm_m=2, norm_a=1.5, depths="2,3,4",
                            out=str(tmp_path / "o"))
        rc = main(["norms", "--config", path])
        assert rc == 0
        text = (tmp_path / "o" / "norms.csv").read_text()
        assert text.splitlines()[0] == "depth,norm_value,rel_change"
        assert len(text.splitlines()) == 4


class TestCmdExport:
    def test_round_trip_byte_identical(self, tmp_path):
        cfgpath = write_config(tmp_path, builtin="lshape2d", levels=2,
                               kappa=0.25, out=str(tmp_path / "o"))
        main(["refine", "--config", cfgpath])
        src = tmp_path / "o" / "T_1.txt"
        out1 = tmp_path / "re.txt"
        rc = main(["export", "--mesh", str(src), "--out", str(out1),
                   "--format", "plain"])
        assert rc == 0
        assert out1.read_text() == src.read_text()

    def test_vtk_export(self, tmp_path):
        cfgpath = write_config(tmp_path, builtin="lshape2d", levels=2,
                               kappa=0.25, out=str(tmp_path / "o"))
        main(["refine", "--config", cfgpath])
        out = tmp_path / "m.vtk"
        rc = main(["export", "--mesh", str(tmp_path / "o" / "T_1.txt"),
                   "--out", str(out), "--format", "vtk"])
        assert rc == 0
        assert out.read_text().startswith("# vtk DataFile")

    def test_unknown_format_exit_code(self, tmp_path):
        with pytest.raises(SystemExit):
            main(["export", "--mesh", "x", "--out", "y", "--format", "nope"])


class TestExitCodes:
    def test_validation_error_is_2(self, tmp_path):
        path = write_config(tmp_path, builtin="nonexistent", levels=3,
                            out=str(tmp_path / "o"))
        assert main(["refine", "--config", path]) == 2


class TestFitRate:
    def test_exact_power_law(self):
        dofs = [100, 400, 1600, 6400]
        errs = [d ** -0.5 for d in dofs]
        assert fit_rate(dofs, errs) == pytest.approx(0.5, abs=1e-12)
