import json

import numpy as np
import pytest

from heatlab.cli import (ConfigError, Scenario, build_space, builtin_names, list_scenarios,
                         load_scenario, main, parse_space_arg, run_scenario)
from heatlab.semigroup import HeatEngine
from heatlab.solutions import heat_grid, kernel_solution, save_solution
from heatlab.space import build_cycle, save_space

SMALL = {
    "schema": 1,
    "name": "tiny",
    "description": "kernel on cycle(4)",
    "seed": 0,
    "space": {"builder": "cycle", "n": 4},
    "solution": {"recipe": "semigroup-from-measure", "atoms": [[0, 1.0]]},
    "times": {"kind": "linspace", "start": 0.01, "stop": 1.0, "num": 200},
    "checks": [{"op": "kernel-slice", "times": [1.0], "source": 0,
                "values": [[1.0, 0, 0, 0.0, 1e-6]]}],
}


def write(tmp_path, data, name="sc.json"):
    p = tmp_path / name
    p.write_text(json.dumps(data))
    return str(p)


def slice_value():
    return HeatEngine(build_cycle(4)).heat_kernel(1.0, 0, 0)


class TestCatalog:
    def test_at_least_eight(self):
        assert len(list_scenarios()) >= 8
        assert {"compact-conservative", "half-line", "boundary-influx-omega"} <= set(builtin_names())

    def test_list_json(self, capsys):
        assert main(["list", "--json"]) == 0
        data = json.loads(capsys.readouterr().out)
        assert all({"name", "description"} <= set(e) for e in data)

    def test_list_text(self, capsys):
        assert main(["list"]) == 0
        assert "half-line" in capsys.readouterr().out

    def test_every_builtin_parses(self):
        for name in builtin_names():
            assert load_scenario(name).name == name


class TestExitCodes:
    def test_pass(self, tmp_path):
        data = json.loads(json.dumps(SMALL))
        data["checks"][0]["values"][0][3] = slice_value()
        assert main(["run", write(tmp_path, data), "--out", str(tmp_path / "o")]) == 0
        report = json.loads((tmp_path / "o" / "report.json").read_text())
        assert report["checks"][0]["status"] == "pass"

    def test_failing_check(self, tmp_path, capsys):
        assert main(["run", write(tmp_path, SMALL), "--out", str(tmp_path / "o")]) == 1
        assert "fail" in capsys.readouterr().out

    def test_unknown_op(self, tmp_path):
        data = dict(SMALL, checks=[{"op": "no-such-op"}])
        assert main(["run", write(tmp_path, data), "--out", str(tmp_path / "o")]) == 2

    def test_bad_schema(self, tmp_path):
        data = dict(SMALL, schema=99)
        assert main(["run", write(tmp_path, data), "--out", str(tmp_path / "o")]) == 2

    def test_nonpositive_tolerance(self, tmp_path):
        data = json.loads(json.dumps(SMALL))
        data["checks"][0]["values"][0][4] = -1.0
        assert main(["run", write(tmp_path, data), "--out", str(tmp_path / "o")]) == 2

    def test_missing_file(self, tmp_path):
        assert main(["run", str(tmp_path / "none.json")]) == 2

    def test_bad_geometry(self, tmp_path):
        data = dict(SMALL, space={"builder": "cycle", "n": 2})
        assert main(["run", write(tmp_path, data), "--out", str(tmp_path / "o")]) == 2

    def test_scenario_object_validation(self):
        with pytest.raises(ConfigError):
            Scenario.from_dict(dict(SMALL, checks="nope"))


class TestDeterminism:
    def test_reports_identical(self, tmp_path):
        sc = load_scenario("quotient-cycle")
        run_scenario(sc, tmp_path / "a")
        run_scenario(sc, tmp_path / "b")
        a = (tmp_path / "a" / "report.json").read_bytes()
        b = (tmp_path / "b" / "report.json").read_bytes()
        assert a == b

    def test_seed_override_recorded(self, tmp_path):
        _, report = run_scenario(load_scenario("energy-identities"), None, seed=7)
        assert report["seed"] == 7


class TestSubcommands:
    def test_space_arg(self):
        sp = parse_space_arg("cycle:n=6")
        assert sp.n == 6
        assert build_space({"builder": "path", "n": 5, "spacing": 0.5}).n == 5

    def test_space_file(self, tmp_path):
        save_space(build_cycle(5), tmp_path / "s.json")
        assert parse_space_arg(str(tmp_path / "s.json")).n == 5

    def test_kernel(self, capsys, tmp_path):
        assert main(["kernel", "cycle:n=3", "--t", "1.0", "--pairs", "0,0", "0,1"]) == 0
        rows = [r.split(",") for r in capsys.readouterr().out.split()[1:]]
        assert float(rows[0][3]) == pytest.approx(0.366525, abs=5e-7)
        assert float(rows[1][3]) == pytest.approx(0.316738, abs=5e-7)
        dump = tmp_path / "k.csv"
        assert main(["kernel", "cycle:n=3", "--t", "1.0", "--dump", str(dump)]) == 0
        assert dump.read_text().startswith("t,x,y,p")

    def test_kernel_bad_time(self):
        assert main(["kernel", "cycle:n=3", "--t", "-1"]) == 1

    def test_decompose(self, tmp_path, capsys):
        sp = build_cycle(6)
        save_space(sp, tmp_path / "s.json")
        eps = [1e-4, 2e-4, 4e-4, 8e-4]
        u = kernel_solution(HeatEngine(sp), heat_grid(0.5, n_log=400, step=1e-3, extra=eps), 1)
        save_solution(u, tmp_path / "u.csv")
        out = tmp_path / "dec.json"
        code = main(["decompose", str(tmp_path / "s.json"), str(tmp_path / "u.csv"),
                     "--eps", *map(str, eps), "--out", str(out)])
        assert code == 0
        d = json.loads(out.read_text())
        assert d["nu"]["support"] == [1]
        assert abs(d["nu"]["mass"][0] - 1.0) <= 1e-3

    def test_harnack(self, capsys):
        assert main(["harnack", "cycle:n=6", "--window", "0.25", "0.5", "0.75", "1.0",
                     "--K", "0", "1", "2"]) == 0
        d = json.loads(capsys.readouterr().out)
        assert d["constant"] == max(d["per_source"].values())
        assert len(d["per_source"]) == 6

    def test_quotient(self, tmp_path):
        out = tmp_path / "q.json"
        assert main(["quotient", "cycle:n=6", "--shift", "3", "--out", str(out)]) == 0
        d = json.loads(out.read_text())
        assert d["group_order"] == 2

    def test_quotient_not_free(self):
        assert main(["quotient", "path:n=5", "--reflect"]) == 1

    def test_energy_check(self, capsys):
        assert main(["energy-check", "cycle:n=7", "--trials", "50", "--distance", "0", "3"]) == 0
        d = json.loads(capsys.readouterr().out)
        lo, hi = d["intrinsic_distance"]
        assert 0 < lo <= hi <= lo + 1e-6
        assert d["failures"] == []


@pytest.mark.parametrize("name", sorted(builtin_names()))
def test_builtin_scenarios_pass(name, tmp_path):
    status, report = run_scenario(load_scenario(name), tmp_path)
    bad = [c for c in report["checks"] if c["status"] in ("fail", "error")]
    assert status == 0, bad
    assert np.isfinite(report["space"]["n"])
