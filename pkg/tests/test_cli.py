import io
import json
import os

import numpy as np
import pytest

from convexhyp.cli import EXIT_INFEASIBLE, EXIT_INVALID, EXIT_OK, load_solution, run
from convexhyp.pairtest import accepts_x
from convexhyp.io import scheme_from_dict
from convexhyp.schemes import write_observations

HERE = os.path.dirname(__file__)
CONFIGS = os.path.join(HERE, "..", "configs")


def cfg(name):
    return os.path.join(CONFIGS, name)


def call(*argv):
    out, err = io.StringIO(), io.StringIO()
    code = run(list(argv), stdout=out, stderr=err)
    return code, out.getvalue(), err.getvalue()


def test_solve_pair_gaussian_boxes():
    code, out, _ = call("solve-pair", cfg("gauss_boxes.json"))
    assert code == EXIT_OK
    assert "eps_star=0.606531" in out


def test_spec_flag_equivalent():
    a = call("solve-pair", cfg("gauss_boxes.json"))
    b = call("solve-pair", "--spec", cfg("gauss_boxes.json"))
    assert a == b


def test_markov_plan_queue():
    code, out, _ = call("markov-plan", cfg("queue_50.json"))
    assert code == EXIT_OK
    assert "K_min=6" in out


def test_malformed_exits_2_without_artifacts(tmp_path):
    dest = tmp_path / "res"
    code, out, err = call("solve-pair", cfg("malformed.json"), "--out", str(dest))
    assert code == EXIT_INVALID
    assert err.startswith("error")
    assert not dest.exists() or not any(dest.iterdir())


def test_missing_spec_is_invalid():
    assert call("solve-pair")[0] == EXIT_INVALID


def test_wrong_task_is_invalid():
    assert call("markov-plan", cfg("gauss_boxes.json"))[0] == EXIT_INVALID


def test_infeasible_exits_3(tmp_path):
    spec = {
        "spec_version": 1,
        "task": "pair",
        "scheme": {"factors": [{"kind": "gaussian", "dim": 1}]},
        "sets": {
            "X": {"dim": 1, "ineq": [{"a": [1.0], "b": -1.0}, {"a": [-1.0], "b": -1.0}]},
            "Y": {"dim": 1, "lower": [-1], "upper": [1]},
        },
    }
    p = tmp_path / "empty.json"
    p.write_text(json.dumps(spec))
    code, _, err = call("solve-pair", str(p))
    assert code == EXIT_INFEASIBLE
    assert "infeasible" in err


def test_round_trip_decisions(tmp_path):
    with open(cfg("gauss_boxes.json")) as fh:
        scheme = scheme_from_dict(json.load(fh)["scheme"])
    rng = np.random.default_rng(0)
    batch = [rng.normal(0.0, 2.0, size=(25, 1, 2))]
    obs = tmp_path / "obs.txt"
    write_observations(str(obs), scheme, batch)

    code, out, _ = call("solve-pair", cfg("gauss_boxes.json"), "--out", str(tmp_path), "--obs", str(obs))
    assert code == EXIT_OK
    line = [l for l in out.splitlines() if l.startswith("decisions=")][0]
    via_cli = list(line.split("=", 1)[1])

    sol = load_solution(str(tmp_path / "solve_pair.json"))
    again = np.where(accepts_x(sol, batch), "X", "Y").tolist()
    assert again == via_cli
    assert set(via_cli) == {"X", "Y"}


def test_json_format_parses():
    code, out, _ = call("solve-pair", cfg("gauss_boxes.json"), "--format", "json")
    assert code == EXIT_OK
    d = json.loads(out)
    assert d["command"] == "solve-pair"
    assert d["solution"]["eps_star"] == pytest.approx(0.606531, abs=1e-6)


def test_simulate_seed_determinism():
    a = call("simulate", cfg("gauss_simulate.json"), "--seed", "11", "--reps", "2000", "--format", "json")
    b = call("simulate", cfg("gauss_simulate.json"), "--seed", "11", "--reps", "2000", "--format", "json")
    c = call("simulate", cfg("gauss_simulate.json"), "--seed", "12", "--reps", "2000", "--format", "json")
    assert a[0] == EXIT_OK
    assert a[1] == b[1]
    assert json.loads(a[1])["report"] != json.loads(c[1])["report"]


def test_negative_seed_invalid():
    assert call("simulate", cfg("gauss_simulate.json"), "--seed", "-1")[0] == EXIT_INVALID


def test_matrix_csv_export(tmp_path):
    code, _, _ = call("aggregate", cfg("discrete_union.json"), "--out", str(tmp_path))
    assert code == EXIT_OK
    E = np.loadtxt(tmp_path / "aggregate_E.csv", delimiter=",", ndmin=2)
    with open(tmp_path / "aggregate.json") as fh:
        assert np.allclose(E, np.asarray(json.load(fh)["E"]))
