import json
import subprocess
import sys

import numpy as np
import pytest

from klbp.cli import main, stable_dumps


def run_cli(capsys, *argv):
    code = main(list(argv))
    captured = capsys.readouterr()
    report = json.loads(captured.out) if captured.out.strip() else None
    return code, report


@pytest.fixture(scope="module")
def files(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")

    def save(name, obj):
        path = root / name
        path.write_text(json.dumps(obj))
        return str(path)

    circ = save(
        "e1.json",
        {
            "schema": "v1",
            "nodes": [
                {"id": "lx0", "kind": "leaf", "var": "X", "state": 0},
                {"id": "lx1", "kind": "leaf", "var": "X", "state": 1},
                {"id": "ly0", "kind": "leaf", "var": "Y", "state": 0},
                {"id": "ly1", "kind": "leaf", "var": "Y", "state": 1},
                {
                    "id": "P1",
                    "kind": "product",
                    "children": [{"id": "lx0"}, {"id": "ly0"}],
                },
                {
                    "id": "P2",
                    "kind": "product",
                    "children": [{"id": "lx1"}, {"id": "ly1"}],
                },
                {
                    "id": "r",
                    "kind": "sum",
                    "children": [
                        {"id": "P1", "weight": 0.6},
                        {"id": "P2", "weight": 0.4},
                    ],
                },
            ],
            "root": "r",
        },
    )
    lam = save(
        "e1_lambda.json",
        {"schema": "v1", "lambda": {"X": [1.0, 0.5], "Y": [1.0, 0.8]}},
    )
    bad = save(
        "bad.json",
        {
            "schema": "v1",
            "nodes": [
                {"id": "a", "kind": "leaf", "var": "X", "state": 0},
                {"id": "b", "kind": "leaf", "var": "X", "state": 1},
                {"id": "p", "kind": "product", "children": [{"id": "a"}, {"id": "b"}]},
            ],
            "root": "p",
        },
    )
    logistic = save(
        "logistic.json",
        {
            "schema": "v1",
            "nodes": [
                {"id": "w", "op": "input", "inputs": []},
                {"id": "x", "op": "input", "inputs": []},
                {"id": "m", "op": "mul", "inputs": ["w", "x"]},
                {"id": "y", "op": "sigmoid", "inputs": ["m"]},
            ],
            "output": "y",
        },
    )
    joint = save(
        "joint.json",
        {
            "schema": "v1",
            "probs": [0.30, 0.10, 0.15, 0.45],
            "outcomes": [[0, 0], [0, 1], [1, 0], [1, 1]],
        },
    )
    copies = save(
        "copies.json",
        {
            "dists": [
                {"schema": "v1", "probs": [0.2, 0.8], "outcomes": [0, 1]},
                {"schema": "v1", "probs": [0.5, 0.5], "outcomes": [0, 1]},
            ]
        },
    )
    coin_graph = {
        "schema": "v1",
        "nodes": [
            {"id": "x", "op": "input", "inputs": []},
            {"id": "a", "op": "input", "inputs": []},
            {"id": "z", "op": "mul", "inputs": ["x", "a"]},
        ],
        "output": "z",
    }
    coin = save(
        "coin.json",
        {
            "schema": "v1",
            "variables": [{"name": "x1", "grid": [0.0, 1.0], "prior": [0.5, 0.5]}],
            "theta": ["a"],
            "graphs": {"x1": coin_graph},
            "likelihood": {"kind": "exp_scale", "alpha": 1.0},
        },
    )
    return {
        "root": root,
        "circuit": circ,
        "lambda": lam,
        "bad": bad,
        "logistic": logistic,
        "joint": joint,
        "copies": copies,
        "coin": coin,
    }


class TestStableJson:
    def test_seventeen_significant_digits(self):
        assert stable_dumps(1.0 / 3.0) == "0.33333333333333331"
        assert stable_dumps(0.76) == "0.76000000000000001"

    def test_keys_sorted_and_types_normalized(self):
        out = stable_dumps({"b": np.float64(1.5), "a": np.int64(2), "c": [True, None]})
        assert out == '{"a":2,"b":1.5,"c":[true,null]}'

    def test_ndarray_becomes_list(self):
        assert stable_dumps(np.array([0.5, 0.25])) == "[0.5,0.25]"

    def test_rejects_unknown_types(self):
        with pytest.raises(TypeError):
            stable_dumps(object())


class TestSpnCommands:
    def test_marginals_example(self, capsys, files):
        code, rep = run_cli(
            capsys, "spn", "marginals",
            "--circuit", files["circuit"], "--evidence", files["lambda"],
        )
        assert code == 0 and rep["pass"]
        assert rep["outputs"]["marginals"]["X"][0] == pytest.approx(
            0.6 / 0.76, abs=1e-12
        )
        assert rep["checks"]["oracle_marginals"]["max_abs_error"] <= 1e-10
        assert rep["outputs"]["value"] == pytest.approx(0.76, abs=1e-15)

    def test_validate_good(self, capsys, files):
        code, rep = run_cli(capsys, "spn", "validate", "--circuit", files["circuit"])
        assert code == 0
        assert rep["outputs"]["valid"] is True

    def test_validate_bad_exits_3_with_violations(self, capsys, files):
        code, rep = run_cli(capsys, "spn", "validate", "--circuit", files["bad"])
        assert code == 3
        assert rep["outputs"]["decomposability"] == [["p", "a", "b", "X"]]
        assert not rep["pass"]

    def test_missing_file_exits_1(self, capsys, files):
        code, rep = run_cli(
            capsys, "spn", "validate", "--circuit", str(files["root"] / "nope.json")
        )
        assert code == 1 and rep is None

    def test_garbage_json_exits_2(self, capsys, files):
        path = files["root"] / "garbage.json"
        path.write_text("{not json")
        code, rep = run_cli(capsys, "spn", "validate", "--circuit", str(path))
        assert code == 2 and rep is None

    def test_schema_violation_exits_2(self, capsys, files):
        path = files["root"] / "schema.json"
        path.write_text(json.dumps({"schema": "v1", "nodes": "oops"}))
        code, _ = run_cli(capsys, "spn", "validate", "--circuit", str(path))
        assert code == 2

    def test_eval_reports_both_domains(self, capsys, files):
        code, rep = run_cli(
            capsys, "spn", "eval",
            "--circuit", files["circuit"], "--evidence", files["lambda"],
        )
        assert code == 0
        assert rep["outputs"]["value"] == pytest.approx(0.76)
        assert rep["outputs"]["log_value"] == pytest.approx(np.log(0.76))
        assert rep["checks"]["log_linear_agreement"]["pass"]

    def test_gates_and_kkt(self, capsys, files):
        code, rep = run_cli(
            capsys, "spn", "gates",
            "--circuit", files["circuit"], "--evidence", files["lambda"],
        )
        assert code == 0
        gate = rep["outputs"]["gates"]["r"]
        assert gate["pi"] == pytest.approx(1.0)
        assert gate["b"] == pytest.approx([0.6 / 0.76, 0.16 / 0.76])
        code, rep = run_cli(
            capsys, "spn", "kkt",
            "--circuit", files["circuit"], "--evidence", files["lambda"],
        )
        assert code == 0
        assert rep["outputs"]["pi"]["r"] == pytest.approx(1.0)

    def test_region_matches_engine(self, capsys, files):
        code, rep = run_cli(
            capsys, "spn", "region",
            "--circuit", files["circuit"], "--evidence", files["lambda"],
        )
        assert code == 0 and rep["checks"]["beliefs_agree"]["pass"]
        assert rep["outputs"]["regions"]["X,Y"]["members"] == ["P1", "P2", "r"]

    def test_lipschitz_probe(self, capsys, files):
        code, rep = run_cli(
            capsys, "spn", "lipschitz",
            "--circuit", files["circuit"], "--samples", "40",
        )
        assert code == 0
        assert rep["outputs"]["all_pairs_ok"] is True
        assert rep["outputs"]["n_pairs"] == 40 * 39 // 2


class TestFgCommands:
    def test_bp_tree_oracle(self, capsys, files):
        from klbp import factorgraph, generators

        path = files["root"] / "tree.json"
        path.write_text(json.dumps(factorgraph.fg_to_json(generators.gen_fg(3))))
        code, rep = run_cli(capsys, "fg", "bp", "--graph", str(path))
        assert code == 0
        assert rep["outputs"]["schedule"] == "two-pass"
        assert rep["checks"]["oracle_marginals"]["pass"]

    def test_bp_cycle_converges(self, capsys, files):
        from klbp import factorgraph, generators

        path = files["root"] / "cycle.json"
        path.write_text(
            json.dumps(factorgraph.fg_to_json(generators.gen_fg(5, kind="cycle")))
        )
        code, rep = run_cli(capsys, "fg", "bp", "--graph", str(path))
        assert code == 0
        assert rep["outputs"]["schedule"] == "damped-sync"
        assert rep["checks"]["converged"]["pass"]

    def test_wr_tree_matches_oracle(self, capsys, files):
        from klbp import factorgraph, generators

        path = files["root"] / "tree2.json"
        path.write_text(json.dumps(factorgraph.fg_to_json(generators.gen_fg(7))))
        code, rep = run_cli(capsys, "fg", "wr", "--graph", str(path))
        assert code == 0
        assert rep["checks"]["oracle_marginals"]["pass"]
        assert rep["checks"]["converged"]["pass"]

    def test_project_diagonal(self, capsys, files):
        code, rep = run_cli(
            capsys, "fg", "project",
            "--input", files["joint"], "--family", "diagonal", "--shape", "2,2",
        )
        assert code == 0
        assert rep["outputs"]["projection"] == pytest.approx([0.4, 0.6])

    def test_project_product_and_copies(self, capsys, files):
        code, rep = run_cli(
            capsys, "fg", "project",
            "--input", files["joint"], "--family", "product", "--shape", "2,2",
        )
        assert code == 0 and rep["pass"]
        code, rep = run_cli(
            capsys, "fg", "project", "--input", files["copies"], "--family", "copies"
        )
        assert code == 0
        geo = np.sqrt(np.array([0.2, 0.8]) * np.array([0.5, 0.5]))
        assert rep["outputs"]["projection"] == pytest.approx(geo / geo.sum())


class TestDagCommands:
    def test_adjoints_logistic_point(self, capsys, files):
        code, rep = run_cli(
            capsys, "dag", "adjoints",
            "--graph", files["logistic"], "--factor", "exp:2", "--at", "w=0,x=1",
        )
        assert code == 0
        assert rep["outputs"]["adjoints"]["w"] == pytest.approx(0.5, abs=1e-12)
        assert rep["outputs"]["adjoints"]["x"] == pytest.approx(0.0, abs=1e-12)
        assert rep["checks"]["independent_accumulator"]["pass"]
        assert rep["checks"]["finite_differences"]["pass"]

    def test_eval(self, capsys, files):
        code, rep = run_cli(
            capsys, "dag", "eval", "--graph", files["logistic"], "--at", "w=0,x=1"
        )
        assert code == 0
        assert rep["outputs"]["output"] == pytest.approx(0.5)

    def test_gauge_slope_invariant(self, capsys, files):
        code, rep = run_cli(
            capsys, "dag", "gauge",
            "--graph", files["logistic"], "--factor", "logistic:1:2",
            "--at", "w=0.3,x=1.2", "--var", "m",
        )
        assert code == 0
        assert rep["checks"]["gauge_invariance"]["max_abs_error"] <= 1e-12

    def test_bad_factor_spec_exits_2(self, capsys, files):
        code, _ = run_cli(
            capsys, "dag", "adjoints",
            "--graph", files["logistic"], "--factor", "banana:1", "--at", "w=0,x=1",
        )
        assert code == 2


class TestPosteriorCommands:
    def test_grad_coin_closed_form(self, capsys, files):
        code, rep = run_cli(
            capsys, "posterior", "grad",
            "--model", files["coin"], "--theta", str(np.log(2.0)),
        )
        assert code == 0
        assert rep["outputs"]["marginal_likelihood"] == pytest.approx(1.5, abs=1e-12)
        assert rep["outputs"]["gradient"] == pytest.approx([2.0 / 3.0], abs=1e-12)
        assert rep["checks"]["marginal_route"]["pass"]

    def test_dirac(self, capsys, files):
        code, rep = run_cli(
            capsys, "posterior", "dirac",
            "--model", files["coin"], "--theta", "0.7", "--at", "1",
        )
        assert code == 0
        assert rep["outputs"]["point_gradient"] == pytest.approx([1.0], abs=1e-12)
        assert rep["checks"]["dirac_limit"]["pass"]


class TestOracleCompare:
    def test_each_kind_small(self, capsys):
        for kind in ("spn", "fg", "dag"):
            code, rep = run_cli(
                capsys, "oracle", "compare", "--kind", kind, "--count", "3"
            )
            assert code == 0, kind
            assert rep["pass"], kind

    def test_posterior_kind(self, capsys):
        code, rep = run_cli(
            capsys, "oracle", "compare", "--kind", "posterior", "--count", "2"
        )
        assert code == 0 and rep["pass"]


class TestGen:
    def test_spn_gen_deterministic_and_valid(self, capsys, files, monkeypatch):
        monkeypatch.chdir(files["root"])
        code, _ = run_cli(
            capsys, "gen", "spn", "--vars", "3", "--states", "2",
            "--seed", "1", "--out", "g1",
        )
        assert code == 0
        first = (files["root"] / "g1.circuit.json").read_bytes()
        code, _ = run_cli(
            capsys, "gen", "spn", "--vars", "3", "--states", "2",
            "--seed", "1", "--out", "g1",
        )
        assert code == 0
        assert (files["root"] / "g1.circuit.json").read_bytes() == first
        code, rep = run_cli(capsys, "spn", "validate", "--circuit", "g1.circuit.json")
        assert code == 0 and rep["outputs"]["valid"]

    def test_infeasible_size_exits_3(self, capsys, files, monkeypatch):
        monkeypatch.chdir(files["root"])
        code, _ = run_cli(
            capsys, "gen", "spn", "--vars", "9", "--states", "5",
            "--seed", "1", "--out", "big",
        )
        assert code == 3

    def test_other_kinds(self, capsys, files, monkeypatch):
        monkeypatch.chdir(files["root"])
        for kind in ("fg", "dag", "posterior"):
            code, _ = run_cli(capsys, "gen", kind, "--seed", "4", "--out", f"g_{kind}")
            assert code == 0, kind
        code, rep = run_cli(capsys, "fg", "bp", "--graph", "g_fg.fg.json")
        assert code == 0


class TestReportPlumbing:
    def test_byte_stable_reports(self, files):
        cmd = [
            sys.executable, "-m", "klbp.cli", "spn", "marginals",
            "--circuit", files["circuit"], "--evidence", files["lambda"],
        ]
        a = subprocess.run(cmd, capture_output=True, check=True).stdout
        b = subprocess.run(cmd, capture_output=True, check=True).stdout
        assert a == b
        assert b"wall_time" not in a  # timing stays on stderr

    def test_out_redirects_report(self, capsys, files):
        dest = files["root"] / "report.json"
        code, rep = run_cli(
            capsys, "spn", "eval", "--circuit", files["circuit"], "--out", str(dest)
        )
        assert code == 0 and rep is None
        saved = json.loads(dest.read_text())
        assert saved["outputs"]["value"] == pytest.approx(1.0)  # all-ones evidence

    def test_input_digests_are_sha256(self, capsys, files):
        import hashlib

        code, rep = run_cli(capsys, "spn", "validate", "--circuit", files["circuit"])
        want = hashlib.sha256(open(files["circuit"], "rb").read()).hexdigest()
        assert rep["inputs"][files["circuit"]] == want
