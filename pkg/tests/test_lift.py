import numpy as np
import pytest

from klbp.errors import BudgetError, ValidationError
from klbp.factorgraph import Factor, FactorGraph, Variable, bp_beliefs, bp_run, bp_run_tree
from klbp.lift import (
    WrState,
    consensus_project,
    extract_joint,
    log_subspace_distance,
    replicate_lift,
    t_proj,
    wr_beliefs,
    wr_init,
    wr_run,
    wr_step,
)
from klbp.oracle import enumerate_fg_marginals
from klbp.simplex import DistVec, Mahalanobis, NegativeEntropy

ENTROPY = NegativeEntropy()


def chain_graph(rng, n_vars=3, card=2):
    variables = [Variable(f"x{i}", card) for i in range(n_vars)]
    factors = [Factor("u0", ("x0",), rng.uniform(0.2, 1.0, size=card))]
    for i in range(n_vars - 1):
        factors.append(
            Factor(
                f"p{i}",
                (f"x{i}", f"x{i+1}"),
                rng.uniform(0.2, 1.0, size=(card, card)),
            )
        )
    return FactorGraph(variables, factors)


def random_tree(rng, n_vars):
    """Random tree via random parent links, pairwise factors, one unary."""
    cards = rng.integers(2, 4, size=n_vars)
    variables = [Variable(f"v{i}", int(cards[i])) for i in range(n_vars)]
    factors = [Factor("root", ("v0",), rng.uniform(0.3, 1.0, size=int(cards[0])))]
    for i in range(1, n_vars):
        parent = int(rng.integers(0, i))
        factors.append(
            Factor(
                f"e{i}",
                (f"v{parent}", f"v{i}"),
                rng.uniform(0.3, 1.0, size=(int(cards[parent]), int(cards[i]))),
            )
        )
    return FactorGraph(variables, factors)


def cycle_graph(rng, card=2):
    variables = [Variable(f"c{i}", card) for i in range(3)]
    factors = [
        Factor(
            f"e{i}",
            (f"c{i}", f"c{(i + 1) % 3}"),
            rng.uniform(0.5, 1.5, size=(card, card)),
        )
        for i in range(3)
    ]
    return FactorGraph(variables, factors)


def gibbs_joint(fg):
    sizes = tuple(v.cardinality for v in fg.variables)
    pos = {v.id: i for i, v in enumerate(fg.variables)}
    joint = np.ones(sizes)
    for fac in fg.factors:
        axes = tuple(pos[v] for v in fac.vars)
        order = np.argsort(axes)
        expand = [1] * len(sizes)
        for a in axes:
            expand[a] = sizes[a]
        joint = joint * np.transpose(fac.table, order).reshape(expand)
    return joint.reshape(-1) / joint.sum()


# ------------------------------------------------------------ lift shape


def test_lift_structure_chain():
    fg = chain_graph(np.random.default_rng(0))
    space = replicate_lift(fg)
    assert space.axes == (
        ("u0", "x0"),
        ("p0", "x0"),
        ("p0", "x1"),
        ("p1", "x1"),
        ("p1", "x2"),
    )
    assert space.factor_blocks == ((0,), (1, 2), (3, 4))
    assert space.var_groups == ((0, 1), (2, 3), (4,))
    assert space.ident_vars == ("x0", "x1", "x2")


def test_lift_reference_is_tensor_product():
    fg = chain_graph(np.random.default_rng(1))
    space = replicate_lift(fg)
    manual = np.ones(())
    for fac in fg.factors:
        manual = np.multiply.outer(manual, fac.table / fac.table.sum())
    np.testing.assert_allclose(space.q_init.probs, manual.reshape(-1), atol=1e-12)


def test_lift_rejects_zero_tables():
    fg = FactorGraph(
        [Variable("a", 2)], [Factor("f", ("a",), np.array([1.0, 0.0]))]
    )
    with pytest.raises(ValidationError):
        replicate_lift(fg)


def test_lift_budget():
    variables = [Variable(f"z{i}", 4) for i in range(13)]
    factors = [
        Factor(f"e{i}", (f"z{i}", f"z{i+1}"), np.full((4, 4), 0.5))
        for i in range(12)
    ]
    with pytest.raises(BudgetError):
        replicate_lift(FactorGraph(variables, factors))


# ----------------------------------------------------- consensus + t_proj


def test_consensus_recovers_joint_distribution():
    for seed in range(4):
        fg = chain_graph(np.random.default_rng(10 + seed))
        space = replicate_lift(fg)
        ident = consensus_project(space, space.q_init)
        np.testing.assert_allclose(ident.probs, gibbs_joint(fg), atol=1e-12)


def test_t_proj_two_replica_example():
    fg = FactorGraph(
        [Variable("x", 2)],
        [
            Factor("f1", ("x",), np.array([0.5, 0.5])),
            Factor("f2", ("x",), np.array([0.5, 0.5])),
        ],
    )
    space = replicate_lift(fg)
    q = DistVec(np.array([0.1, 0.2, 0.3, 0.4]))
    out = t_proj(space, q)
    np.testing.assert_allclose(out.probs, [0.2, 0.8], atol=1e-15)


def test_t_proj_fixed_on_product_tables():
    rng = np.random.default_rng(21)
    fg = chain_graph(rng)
    space = replicate_lift(fg)
    a, b, c = rng.uniform(0.2, 1.0, 2), rng.uniform(0.2, 1.0, 2), rng.uniform(0.2, 1.0, 2)
    prod = np.multiply.outer(np.multiply.outer(a / a.sum(), b / b.sum()), c / c.sum())
    q = DistVec(prod.reshape(-1))
    out = t_proj(space, q)
    np.testing.assert_allclose(out.probs, q.probs, atol=1e-13)


def test_t_proj_uniform_is_uniform():
    fg = chain_graph(np.random.default_rng(22))
    space = replicate_lift(fg)
    q = DistVec(np.full(space.ident_size, 1.0 / space.ident_size))
    np.testing.assert_allclose(
        t_proj(space, q).probs, q.probs, atol=1e-15
    )


def test_t_proj_length_mismatch():
    fg = chain_graph(np.random.default_rng(23))
    space = replicate_lift(fg)
    with pytest.raises(ValidationError):
        t_proj(space, DistVec(np.full(3, 1.0 / 3.0)))


# -------------------------------------------------------- entropy scheme


def test_first_step_right_projection_is_reference():
    # with zero corrections the first right projection returns the
    # reference table itself, which already factorizes across blocks
    fg = chain_graph(np.random.default_rng(31))
    space = replicate_lift(fg)
    state = wr_step(space, ENTROPY, wr_init(space, ENTROPY))
    np.testing.assert_allclose(state.k, space.q_init.probs, atol=1e-13)
    np.testing.assert_allclose(state.sigma, 0.0, atol=1e-12)


def test_one_iteration_matches_tree_bp_and_enumeration():
    for seed in range(12):
        rng = np.random.default_rng(40 + seed)
        fg = random_tree(rng, int(rng.integers(2, 7)))
        space = replicate_lift(fg)
        state = wr_step(space, ENTROPY, wr_init(space, ENTROPY))
        scheme = wr_beliefs(space, state)
        tree = bp_beliefs(fg, bp_run_tree(fg))
        exact = enumerate_fg_marginals(fg)
        for vid in exact:
            np.testing.assert_allclose(scheme[vid], tree[vid], atol=1e-10)
            np.testing.assert_allclose(scheme[vid], exact[vid], atol=1e-10)


def test_extra_iterations_freeze_beliefs():
    rng = np.random.default_rng(60)
    fg = random_tree(rng, 5)
    space = replicate_lift(fg)
    state = wr_step(space, ENTROPY, wr_init(space, ENTROPY))
    first = wr_beliefs(space, state)
    for _ in range(3):
        state = wr_step(space, ENTROPY, state)
        later = wr_beliefs(space, state)
        for vid in first:
            np.testing.assert_allclose(later[vid], first[vid], atol=1e-12)


def test_identified_iterates_are_scheme_fixed_points():
    fg = chain_graph(np.random.default_rng(61))
    space = replicate_lift(fg)
    state = wr_step(space, ENTROPY, wr_init(space, ENTROPY))
    state = wr_step(space, ENTROPY, state)
    again = wr_step(space, ENTROPY, state)
    np.testing.assert_allclose(again.q, state.q, atol=1e-12)
    np.testing.assert_allclose(again.tau, state.tau, atol=1e-10)


def test_one_step_iterate_passes_two_step_residual():
    fg = random_tree(np.random.default_rng(62), 5)
    space = replicate_lift(fg)
    state = wr_step(space, ENTROPY, wr_init(space, ENTROPY))
    q = DistVec(state.q)
    residual = float(np.max(np.abs(t_proj(space, q).probs - q.probs)))
    assert residual <= 1e-10


def test_beliefs_need_an_iteration():
    fg = chain_graph(np.random.default_rng(63))
    space = replicate_lift(fg)
    with pytest.raises(ValidationError):
        wr_beliefs(space, wr_init(space, ENTROPY))


def test_nonfinite_state_rejected():
    with pytest.raises(ValidationError):
        WrState("identified", 0, np.array([0.5, 0.5]), np.array([np.nan, 0.0]), np.zeros(2))


# ------------------------------------------------------- loopy diagnostics


def test_loopy_fixed_point_two_step_residual():
    rng = np.random.default_rng(70)
    fg = cycle_graph(rng)
    space = replicate_lift(fg)
    result = bp_run(fg, tol=1e-12)
    assert result.converged
    joint = extract_joint(space, bp_beliefs(fg, result.state))
    residual = float(np.max(np.abs(t_proj(space, joint).probs - joint.probs)))
    assert residual <= 1e-8


def test_log_subspace_distance_zero_for_fresh_lift():
    fg = cycle_graph(np.random.default_rng(71))
    space = replicate_lift(fg)
    assert log_subspace_distance(space) <= 1e-10


def test_log_subspace_distance_positive_for_perturbation():
    fg = chain_graph(np.random.default_rng(72))
    space = replicate_lift(fg)
    rng = np.random.default_rng(73)
    zeta = np.log(space.q_init.probs) + rng.standard_normal(len(space.q_init))
    assert log_subspace_distance(space, zeta) > 1e-3


# ------------------------------------------------------ quadratic scheme


def test_quadratic_scheme_is_cauchy_on_cycle():
    rng = np.random.default_rng(80)
    fg = cycle_graph(rng)
    space = replicate_lift(fg)
    run = wr_run(space, Mahalanobis(np.eye(space.ident_size)), tol=1e-8, max_iters=5000)
    assert run.converged
    assert run.steps[-1] < 1e-8
    beliefs = wr_beliefs(space, run.state)
    for vid, b in beliefs.items():
        assert b.sum() == pytest.approx(1.0, abs=1e-9)
        assert np.all(b > 0.0)


def test_quadratic_scheme_random_metric():
    rng = np.random.default_rng(81)
    fg = cycle_graph(rng)
    space = replicate_lift(fg)
    base = rng.standard_normal((space.ident_size, space.ident_size))
    metric = Mahalanobis(base @ base.T + space.ident_size * np.eye(space.ident_size))
    run = wr_run(space, metric, tol=1e-8, max_iters=5000)
    assert run.converged


def test_quadratic_metric_dimension_checked():
    fg = cycle_graph(np.random.default_rng(82))
    space = replicate_lift(fg)
    with pytest.raises(ValidationError):
        wr_init(space, Mahalanobis(np.eye(3)))
