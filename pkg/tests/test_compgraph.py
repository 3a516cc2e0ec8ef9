import math

import numpy as np
import pytest

from klbp.compgraph import (
    CompGraph,
    CompNode,
    ExpScale,
    NegLossTemp,
    backward_adjoints,
    centered_grid,
    delta_chain_check,
    downward_log_belief,
    forward_eval,
    graph_from_json,
    graph_to_json,
    phi_log,
    seed_score,
    slope_from_grid,
    validate_dag,
)
from klbp.errors import SchemaError, ValidationError
from klbp.generators import gen_dag
from klbp.oracle import finite_diff_grad, reference_gradient


def sigmoid_product_graph():
    # z = sigmoid(w * x)
    return CompGraph(
        [
            CompNode("w", "input"),
            CompNode("x", "input"),
            CompNode("u", "mul", ("w", "x")),
            CompNode("z", "sigmoid", ("u",)),
        ],
        "z",
    )


# ------------------------------------------------------------ validation


def test_validate_identity_graph():
    g = CompGraph([CompNode("x", "input")], "x")
    assert validate_dag(g)["valid"]


def test_validate_cycle():
    g = CompGraph(
        [CompNode("a", "sigmoid", ("b",)), CompNode("b", "sigmoid", ("a",))], "a"
    )
    report = validate_dag(g)
    assert not report["valid"]
    assert not report["acyclic"]


def test_validate_rejects_non_smooth_op():
    g = CompGraph([CompNode("x", "input"), CompNode("r", "relu", ("x",))], "r")
    report = validate_dag(g)
    assert not report["valid"]
    assert any("relu" in issue for issue in report["issues"])


def test_validate_arity_and_missing_value():
    g = CompGraph([CompNode("x", "input"), CompNode("s", "add", ("x",))], "s")
    assert not validate_dag(g)["valid"]
    g2 = CompGraph([CompNode("x", "input"), CompNode("p", "pow", ("x",))], "p")
    assert not validate_dag(g2)["valid"]


def test_construction_rejects_dangling_reference():
    with pytest.raises(ValidationError):
        CompGraph([CompNode("a", "sigmoid", ("ghost",))], "a")


# --------------------------------------------------------------- forward


def test_forward_product():
    g = CompGraph(
        [CompNode("w", "input"), CompNode("x", "input"), CompNode("u", "mul", ("w", "x"))],
        "u",
    )
    trace = forward_eval(g, {"w": 3.0, "x": 2.0})
    assert trace.values["u"] == 6.0


def test_forward_sigmoid_at_zero():
    g = CompGraph([CompNode("u", "input"), CompNode("z", "sigmoid", ("u",))], "z")
    assert forward_eval(g, {"u": 0.0}).values["z"] == 0.5


def test_forward_composed_example():
    trace = forward_eval(sigmoid_product_graph(), {"w": 0.0, "x": 1.0})
    assert trace.values["u"] == 0.0
    assert trace.values["z"] == 0.5


def test_forward_domain_errors():
    g = CompGraph([CompNode("x", "input"), CompNode("l", "log", ("x",))], "l")
    with pytest.raises(ValidationError):
        forward_eval(g, {"x": -1.0})
    g2 = CompGraph(
        [CompNode("a", "input"), CompNode("b", "input"), CompNode("d", "div", ("a", "b"))],
        "d",
    )
    with pytest.raises(ValidationError):
        forward_eval(g2, {"a": 1.0, "b": 0.0})
    with pytest.raises(ValidationError):
        forward_eval(g, {})


# ---------------------------------------------------------- output factor


def test_seed_score_exponential():
    assert seed_score(ExpScale(2.0), 17.3) == 2.0


def test_seed_score_squared_error():
    factor = NegLossTemp("squared_error", 1.0, 2.0)
    assert seed_score(factor, 0.5) == pytest.approx(0.25, abs=1e-15)
    assert seed_score(NegLossTemp("squared_error", 0.7, 1.0), 0.7) == 0.0


def test_seed_score_logistic():
    assert seed_score(NegLossTemp("logistic", 1.0, 1.0), 0.0) == pytest.approx(
        0.5, abs=1e-15
    )
    assert seed_score(NegLossTemp("logistic", 0.0, 1.0), 0.0) == pytest.approx(
        -0.5, abs=1e-15
    )


def test_output_factor_validation():
    with pytest.raises(ValidationError):
        NegLossTemp("hinge", 1.0, 1.0)
    with pytest.raises(ValidationError):
        NegLossTemp("squared_error", 1.0, 0.0)
    with pytest.raises(ValidationError):
        NegLossTemp("logistic", 0.5, 1.0)


# -------------------------------------------------------------- backward


def test_adjoints_sigmoid_product():
    g = sigmoid_product_graph()
    trace = forward_eval(g, {"w": 0.0, "x": 1.0})
    adj = backward_adjoints(g, trace, ExpScale(2.0))
    assert adj["w"] == 0.5
    assert adj["x"] == 0.0
    assert adj["z"] == 2.0


def test_adjoint_identity_graph():
    g = CompGraph([CompNode("x", "input")], "x")
    trace = forward_eval(g, {"x": 4.2})
    assert backward_adjoints(g, trace, ExpScale(1.0))["x"] == 1.0


def test_zero_seed_zeroes_everything():
    for seed in range(5):
        graph, inputs = gen_dag(seed)
        trace = forward_eval(graph, inputs)
        adj = backward_adjoints(graph, trace, ExpScale(0.0))
        assert all(v == 0.0 for v in adj.values())


def test_seed_linearity():
    for seed in range(8):
        graph, inputs = gen_dag(seed)
        trace = forward_eval(graph, inputs)
        one = backward_adjoints(graph, trace, ExpScale(1.0))
        three = backward_adjoints(graph, trace, ExpScale(3.0))
        for nid in one:
            assert three[nid] == pytest.approx(3.0 * one[nid], rel=1e-12, abs=1e-12)


def test_adjoints_match_independent_accumulator():
    for seed in range(30):
        graph, inputs = gen_dag(seed)
        trace = forward_eval(graph, inputs)
        alpha = 1.7
        adj = backward_adjoints(graph, trace, ExpScale(alpha))
        ref = reference_gradient(graph, inputs, alpha)
        for nid in adj:
            assert adj[nid] == pytest.approx(ref[nid], rel=1e-12, abs=1e-12)


def test_adjoints_match_finite_differences():
    for seed in range(15):
        graph, inputs = gen_dag(seed)
        trace = forward_eval(graph, inputs)
        alpha = 2.0
        adj = backward_adjoints(graph, trace, ExpScale(alpha))
        names = sorted(inputs)

        def f(vec):
            point = dict(zip(names, vec))
            return alpha * forward_eval(graph, point).values[graph.output]

        fd = finite_diff_grad(f, np.array([inputs[n] for n in names]))
        for name, g in zip(names, fd):
            assert adj[name] == pytest.approx(g, rel=1e-6, abs=1e-6)


def test_loss_factor_adjoints_scale_the_gradient():
    for seed in range(6):
        graph, inputs = gen_dag(seed)
        trace = forward_eval(graph, inputs)
        z_star = trace.values[graph.output]
        factor = NegLossTemp("squared_error", z_star + 0.8, 2.5)
        adj = backward_adjoints(graph, trace, factor)
        plain = backward_adjoints(graph, trace, ExpScale(1.0))
        s = seed_score(factor, z_star)
        assert s == pytest.approx(0.8 / 2.5, rel=1e-12)
        for nid in adj:
            assert adj[nid] == pytest.approx(s * plain[nid], rel=1e-12, abs=1e-12)


# -------------------------------------------------- message-level checks


def test_chain_check_identity():
    left, right = delta_chain_check("identity", 3.0, 0.0)
    assert left == pytest.approx(3.0, rel=1e-9)
    assert right == 3.0


def test_chain_check_sigmoid_frozen():
    left, right = delta_chain_check("sigmoid", 1.0, 0.0)
    assert right == pytest.approx(0.25, abs=1e-15)
    assert left == pytest.approx(right, abs=1e-6)


def test_chain_check_zero_message():
    left, right = delta_chain_check("tanh", 0.0, 1.3)
    assert left == 0.0 and right == 0.0


def test_chain_check_all_primitives():
    rng = np.random.default_rng(77)
    for psi in ("identity", "exp", "log", "sigmoid", "tanh", "softplus"):
        for _ in range(20):
            x = float(rng.uniform(0.2, 2.0))
            s = float(rng.uniform(-2.0, 2.0))
            left, right = delta_chain_check(psi, s, x)
            assert left == pytest.approx(right, rel=1e-6, abs=1e-6)


def test_downward_slope_equals_adjoint():
    for seed in range(10):
        graph, inputs = gen_dag(seed)
        trace = forward_eval(graph, inputs)
        factor = ExpScale(1.3)
        adj = backward_adjoints(graph, trace, factor)
        for var in list(trace.values)[:4]:
            center = trace.values[var]
            grid = centered_grid(center, 1e-5 * max(1.0, abs(center)))
            try:
                logs = downward_log_belief(graph, trace, factor, var, grid)
            except ValidationError:
                continue  # perturbation left an op's domain; skip this node
            slope = slope_from_grid(grid, logs)
            assert slope == pytest.approx(adj[var], rel=1e-5, abs=1e-5)


def test_downward_belief_of_detached_node_is_flat():
    g = CompGraph(
        [
            CompNode("x", "input"),
            CompNode("orphan", "tanh", ("x",)),
            CompNode("z", "sigmoid", ("x",)),
        ],
        "z",
    )
    trace = forward_eval(g, {"x": 0.3})
    grid = centered_grid(trace.values["orphan"], 0.5)
    logs = downward_log_belief(g, trace, ExpScale(1.0), "orphan", grid)
    assert float(np.ptp(logs)) == 0.0
    assert slope_from_grid(grid, logs) == 0.0


def test_gauge_scaling_shifts_but_never_tilts():
    graph, inputs = gen_dag(3)
    trace = forward_eval(graph, inputs)
    factor = ExpScale(0.9)
    var = graph.input_ids()[0]
    grid = centered_grid(trace.values[var], 0.2)
    plain = downward_log_belief(graph, trace, factor, var, grid)
    scaled = downward_log_belief(
        graph, trace, factor, var, grid, edge_scales={"e1": 7.0, "e2": 0.2}
    )
    shift = math.log(7.0) + math.log(0.2)
    np.testing.assert_allclose(scaled - plain, shift, atol=1e-12)
    assert slope_from_grid(grid, scaled) == pytest.approx(
        slope_from_grid(grid, plain), abs=1e-12
    )


def test_edge_scales_must_be_positive():
    graph, inputs = gen_dag(4)
    trace = forward_eval(graph, inputs)
    grid = centered_grid(trace.values[graph.output], 0.1)
    with pytest.raises(ValidationError):
        downward_log_belief(
            graph, trace, ExpScale(1.0), graph.output, grid, edge_scales={"e": 0.0}
        )


def test_phi_log_matches_seed_score_slope():
    rng = np.random.default_rng(91)
    for factor in (
        ExpScale(1.7),
        NegLossTemp("squared_error", 0.3, 1.5),
        NegLossTemp("logistic", 1.0, 0.7),
    ):
        for _ in range(5):
            z = float(rng.uniform(-1.0, 1.0))
            h = 1e-6
            fd = (phi_log(factor, z + h) - phi_log(factor, z - h)) / (2 * h)
            assert fd == pytest.approx(seed_score(factor, z), rel=1e-6, abs=1e-8)


# ----------------------------------------------------------------- JSON


def test_json_roundtrip():
    graph, inputs = gen_dag(11)
    back = graph_from_json(graph_to_json(graph))
    assert back.output == graph.output
    t_old = forward_eval(graph, inputs)
    t_new = forward_eval(back, inputs)
    for nid in t_old.values:
        assert t_new.values[nid] == t_old.values[nid]


def test_json_schema_errors():
    with pytest.raises(SchemaError):
        graph_from_json({"nodes": []})
    with pytest.raises(SchemaError):
        graph_from_json({"nodes": [{"op": "input"}], "output": "x"})
    with pytest.raises(SchemaError):
        graph_from_json({"nodes": [{"id": "x", "op": "input"}], "output": "ghost"})
