"""Replica lifts of factor graphs and alternating divergence projections.

A lift creates one replica of each variable per adjacent factor, so the
reference table -- the normalized product of the factor tables, each placed
on its own replica axes -- factorizes across factors by construction.  Two
constraint sets live on the lifted simplex: the consensus face (all
replicas of a variable agree), and the family of product distributions.

The two-step operator projects onto consensus (left/I-projection, which
zeroes off-diagonal mass) and then onto products (right/M-projection, the
product of marginals).  After the consensus step every iterate is supported
on the diagonal, which we identify with the much smaller per-variable joint
grid; dual vectors migrate to the identified grid by diagonal restriction,
matching the relative-gradient convention for faces.

The alternating scheme with dual corrections (a Dykstra-style hybrid of a
right projection and a left projection, with correction vectors sigma and
tau in log coordinates) is parametrized by the Bregman generator: under
negative entropy the updates are closed-form softmax/marginal operations;
under a Mahalanobis metric the right projection onto products has no closed
form and is solved by warm-started gradient descent in per-axis logits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import budgets
from .errors import ValidationError
from .factorgraph import FactorGraph, require_positive_tables
from .simplex import (
    DistVec,
    Generator,
    JointShape,
    Mahalanobis,
    NegativeEntropy,
    joint_outcomes,
    m_project_blocks,
    m_project_product,
    softmax,
)

Array = np.ndarray

_LETTERS = "abcdefghijklmnopqrstuvwxyz"
_OUTCOME_LIMIT = 10_000  # attach explicit labels only to small joints


@dataclass(frozen=True, eq=False)
class ReplicatedSpace:
    """Geometry of a lifted factor graph.

    ``axes`` lists the replica axes as (factor id, variable id) pairs in
    factor order; ``factor_blocks`` partitions them by factor;
    ``var_groups`` ties together all replicas of one variable.  The
    identified grid has one axis per variable, ordered as ``ident_vars``.
    """

    fg: FactorGraph
    axes: tuple[tuple[str, str], ...]
    sizes: tuple[int, ...]
    factor_blocks: tuple[tuple[int, ...], ...]
    var_groups: tuple[tuple[int, ...], ...]
    ident_vars: tuple[str, ...]
    ident_sizes: tuple[int, ...]
    q_init: DistVec

    @property
    def shape(self) -> JointShape:
        return JointShape(self.sizes, self.var_groups)

    @property
    def ident_shape(self) -> JointShape:
        return JointShape(self.ident_sizes)

    @property
    def ident_size(self) -> int:
        return math.prod(self.ident_sizes)


def replicate_lift(fg: FactorGraph) -> ReplicatedSpace:
    """Build the replica lift and its reference table.

    Requires strictly positive factors (interior reference point) and a
    lifted joint within the desk-scale entry budget.
    """
    require_positive_tables(fg)
    axes: list[tuple[str, str]] = []
    sizes: list[int] = []
    factor_blocks: list[tuple[int, ...]] = []
    for fac in fg.factors:
        block = []
        for v in fac.vars:
            block.append(len(axes))
            axes.append((fac.id, v))
            sizes.append(fg.cardinality(v))
        factor_blocks.append(tuple(block))
    if not axes:
        raise ValidationError("cannot lift a factor graph with no factors")
    n_entries = math.prod(sizes)
    budgets.check_joint_entries(n_entries, what="replica lift")
    ident_vars = tuple(
        v.id for v in fg.variables if any(a[1] == v.id for a in axes)
    )
    if len(ident_vars) > len(_LETTERS):
        raise ValidationError("lift limited to 26 distinct variables")
    var_groups = tuple(
        tuple(i for i, a in enumerate(axes) if a[1] == vid) for vid in ident_vars
    )
    ident_sizes = tuple(fg.cardinality(vid) for vid in ident_vars)

    table = np.ones(())
    for fac in fg.factors:
        table = np.multiply.outer(table, fac.table / fac.table.sum())
    flat = table.reshape(-1)
    outcomes = joint_outcomes(tuple(sizes)) if n_entries <= _OUTCOME_LIMIT else None
    q_init = DistVec(flat, outcomes)
    return ReplicatedSpace(
        fg,
        tuple(axes),
        tuple(sizes),
        tuple(factor_blocks),
        var_groups,
        ident_vars,
        ident_sizes,
        q_init,
    )


# ------------------------------------------------------------ restriction


def _axis_letters(space: ReplicatedSpace) -> tuple[str, str]:
    """Einsum subscripts mapping replica axes onto identified axes."""
    letter_of = {}
    for i, vid in enumerate(space.ident_vars):
        letter_of[vid] = _LETTERS[i]
    inp = "".join(letter_of[vid] for _, vid in space.axes)
    out = "".join(_LETTERS[: len(space.ident_vars)])
    return inp, out


def diagonal_restrict(space: ReplicatedSpace, values: Array) -> Array:
    """Gather a lifted array at the consensus diagonal (any values, raw)."""
    arr = np.asarray(values, dtype=float).reshape(space.sizes)
    inp, out = _axis_letters(space)
    return np.einsum(inp + "->" + out, arr).reshape(-1)


def consensus_project(space: ReplicatedSpace, q: DistVec) -> DistVec:
    """Left KL projection onto the consensus face, on the identified grid.

    Keeps the diagonal entries (all replicas of each variable equal) and
    renormalizes; the result is indexed by the per-variable joint grid.
    """
    if len(q) != math.prod(space.sizes):
        raise ValidationError(
            f"consensus_project: table length {len(q)} does not match lift"
        )
    diag = diagonal_restrict(space, q.probs)
    if diag.sum() <= 0.0:
        raise ValidationError("consensus diagonal carries zero mass")
    outcomes = (
        joint_outcomes(space.ident_sizes)
        if space.ident_size <= _OUTCOME_LIMIT
        else None
    )
    return DistVec(diag / diag.sum(), outcomes)


def t_proj(space: ReplicatedSpace, q: DistVec) -> DistVec:
    """Two-step operator: consensus first, then product of marginals.

    Accepts either a lifted table (full consensus restriction applies) or a
    table already on the identified grid (consensus is then the identity).
    """
    if len(q) == math.prod(space.sizes):
        q = consensus_project(space, q)
    elif len(q) != space.ident_size:
        raise ValidationError(
            f"t_proj: table length {len(q)} matches neither the lift nor "
            f"the identified grid"
        )
    return m_project_product(q, space.ident_shape)


def extract_joint(space: ReplicatedSpace, beliefs: dict) -> DistVec:
    """Product-form joint on the identified grid from per-variable beliefs."""
    full = np.ones(())
    for vid in space.ident_vars:
        b = np.asarray(beliefs[vid], dtype=float)
        full = np.multiply.outer(full, b / b.sum())
    outcomes = (
        joint_outcomes(space.ident_sizes)
        if space.ident_size <= _OUTCOME_LIMIT
        else None
    )
    return DistVec(full.reshape(-1), outcomes)


def log_subspace_distance(space: ReplicatedSpace, zeta: Array | None = None) -> float:
    """Euclidean distance of log-coordinates to the block-additive subspace.

    The subspace consists of lifted log tables that decompose as a sum of
    per-factor-block terms; the reference table lies in it by construction,
    so this is zero for fresh lifts and positive only for perturbed tables.
    Diagnostic only -- nothing downstream branches on it.
    """
    if zeta is None:
        zeta = np.log(space.q_init.probs)
    arr = np.asarray(zeta, dtype=float).reshape(space.sizes)
    m = len(space.factor_blocks)
    grand = arr.mean()
    proj = np.full_like(arr, grand * (1.0 - m))
    for block in space.factor_blocks:
        other = tuple(a for a in range(len(space.sizes)) if a not in block)
        proj = proj + arr.mean(axis=other, keepdims=True)
    return float(np.linalg.norm((arr - proj).reshape(-1)))


# -------------------------------------------------------- hybrid scheme


@dataclass(frozen=True, eq=False)
class WrState:
    """One outer iterate of the alternating scheme.

    ``phase`` is "replicated" before the first consensus step and
    "identified" afterwards; q/sigma/tau live on the matching grid.  k and
    r are the intermediate right/left projections of the last step; warm
    caches logits for the Mahalanobis inner solver.
    """

    phase: str
    n: int
    q: Array
    sigma: Array
    tau: Array
    k: Array | None = None
    r: Array | None = None
    warm: tuple[Array, Array] | None = None

    def __post_init__(self):
        for name in ("q", "sigma", "tau"):
            arr = getattr(self, name)
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"non-finite entries in iterate field {name}")


def wr_init(space: ReplicatedSpace, gen: Generator) -> WrState:
    """Fresh state with zero dual corrections.

    The entropy scheme starts on the lifted grid; the symmetric quadratic
    variant starts from the consensus restriction of the reference table,
    since its metric is defined on the identified grid.
    """
    if isinstance(gen, NegativeEntropy):
        q = space.q_init.probs.copy()
        zeros = np.zeros(q.size)
        return WrState("replicated", 0, q, zeros, zeros.copy())
    if isinstance(gen, Mahalanobis):
        if gen.matrix.shape[0] != space.ident_size:
            raise ValidationError(
                f"metric is {gen.matrix.shape[0]}-dimensional but the "
                f"identified grid has {space.ident_size} cells"
            )
        q = consensus_project(space, space.q_init).probs.copy()
        zeros = np.zeros(q.size)
        return WrState("identified", 0, q, zeros, zeros.copy())
    raise ValidationError(f"unknown generator {gen!r}")


def _product_marginal_factors(probs: Array, sizes: tuple[int, ...]) -> Array:
    out = m_project_product(DistVec(probs), JointShape(sizes))
    return out.probs


def _fit_product(
    mat: Array, target: Array, sizes: tuple[int, ...], warm: Array | None
) -> tuple[Array, Array]:
    """Best product-form table under the quadratic metric, by descent.

    Minimizes 1/2 (r(u) - v)^T A (r(u) - v) over per-axis logits u with
    r(u) the outer product of softmaxes.  Returns (solution, logits).
    """
    n_axes = len(sizes)
    dim = sum(sizes)
    if warm is not None:
        u = warm.copy()
    else:
        clipped = np.maximum(target, 1e-12).reshape(sizes)
        pieces = []
        for axis in range(n_axes):
            other = tuple(a for a in range(n_axes) if a != axis)
            marg = clipped.sum(axis=other) if other else clipped
            pieces.append(np.log(marg / marg.sum()))
        u = np.concatenate(pieces)

    def value_grad(u_vec: Array) -> tuple[float, Array, Array]:
        parts = []
        at = 0
        for s in sizes:
            parts.append(softmax(u_vec[at: at + s]))
            at += s
        full = parts[0]
        for p in parts[1:]:
            full = np.multiply.outer(full, p)
        r = full.reshape(-1)
        diff = r - target
        val = float(0.5 * diff @ mat @ diff)
        djdr = (mat @ diff).reshape(sizes)
        grad = np.empty(dim)
        at = 0
        for axis in range(n_axes):
            operands = [djdr]
            subs = ["".join(_LETTERS[:n_axes])]
            for b in range(n_axes):
                if b != axis:
                    operands.append(parts[b])
                    subs.append(_LETTERS[b])
            h = np.einsum(",".join(subs) + "->" + _LETTERS[axis], *operands)
            p = parts[axis]
            grad[at: at + sizes[axis]] = p * (h - float(p @ h))
            at += sizes[axis]
        return val, grad, r

    val, grad, r = value_grad(u)
    step = 1.0
    for _ in range(2000):
        gnorm = float(np.max(np.abs(grad)))
        if gnorm <= 1e-14:
            break
        moved = False
        while step >= 1e-18:
            trial = u - step * grad
            tval, tgrad, tr = value_grad(trial)
            if tval <= val - 1e-4 * step * float(grad @ grad):
                u, val, grad, r = trial, tval, tgrad, tr
                moved = True
                break
            step *= 0.5
        if not moved:
            break
        step = min(step * 1.5, 1e3)
    return r, u


def wr_step(space: ReplicatedSpace, gen: Generator, state: WrState) -> WrState:
    """One outer iteration: right projection, consensus, right projection,
    with both dual corrections updated.

    Order follows the printed scheme: the corrected point is right-projected
    onto products (k), sigma absorbs the discrepancy, the tau-corrected k is
    left-projected onto consensus (r), r is right-projected onto products
    (the new q), and tau absorbs the remaining discrepancy.  The first
    entropy step flips the state onto the identified grid; dual vectors
    follow by diagonal restriction.
    """
    if isinstance(gen, NegativeEntropy):
        return _wr_step_entropy(space, state)
    if isinstance(gen, Mahalanobis):
        return _wr_step_quadratic(space, gen, state)
    raise ValidationError(f"unknown generator {gen!r}")


def _wr_step_entropy(space: ReplicatedSpace, state: WrState) -> WrState:
    log_q = np.log(state.q)
    corrected = softmax(log_q + state.sigma)
    if state.phase == "replicated":
        k = m_project_blocks(corrected, space.sizes, space.factor_blocks)
    else:
        k = _product_marginal_factors(corrected, space.ident_sizes)
    log_k = np.log(k)
    sigma_new = log_q + state.sigma - log_k

    pre_consensus = softmax(log_k + state.tau)
    if state.phase == "replicated":
        diag = diagonal_restrict(space, pre_consensus)
        total = diag.sum()
        if total <= 0.0:
            raise ValidationError("consensus diagonal carries zero mass")
        r = diag / total
        log_k_small = diagonal_restrict(space, log_k)
        tau_small = diagonal_restrict(space, state.tau)
        sigma_small = diagonal_restrict(space, sigma_new)
    else:
        r = pre_consensus
        log_k_small = log_k
        tau_small = state.tau
        sigma_small = sigma_new

    q_new = _product_marginal_factors(r, space.ident_sizes)
    tau_new = log_k_small + tau_small - np.log(q_new)
    return WrState("identified", state.n + 1, q_new, sigma_small, tau_new, k, r)


def _wr_step_quadratic(
    space: ReplicatedSpace, gen: Mahalanobis, state: WrState
) -> WrState:
    mat = gen.matrix
    warm_k = state.warm[0] if state.warm is not None else None
    warm_q = state.warm[1] if state.warm is not None else None

    theta_q = mat @ state.q
    v = np.linalg.solve(mat, theta_q + state.sigma)
    k, logits_k = _fit_product(mat, v, space.ident_sizes, warm_k)
    sigma_new = theta_q + state.sigma - mat @ k

    w = np.linalg.solve(mat, mat @ k + state.tau)
    # consensus on the identified grid is the simplex itself; the metric
    # projection onto its affine hull is a rank-one correction
    inv_one = np.linalg.solve(mat, np.ones_like(w))
    r = w + inv_one * (1.0 - w.sum()) / float(inv_one.sum())
    if np.any(r <= 0.0):
        raise ValidationError(
            "quadratic-scheme iterate left the interior; the symmetric "
            "variant assumes iterates stay strictly positive"
        )
    q_new, logits_q = _fit_product(mat, r, space.ident_sizes, warm_q)
    tau_new = mat @ k + state.tau - mat @ q_new
    return WrState(
        "identified",
        state.n + 1,
        q_new,
        sigma_new,
        tau_new,
        k,
        r,
        (logits_k, logits_q),
    )


def wr_beliefs(space: ReplicatedSpace, state: WrState) -> dict:
    """Per-variable marginals of the current product iterate."""
    if state.phase != "identified":
        raise ValidationError("beliefs are defined after the first outer iteration")
    arr = state.q.reshape(space.ident_sizes)
    out = {}
    for i, vid in enumerate(space.ident_vars):
        other = tuple(a for a in range(len(space.ident_sizes)) if a != i)
        marg = arr.sum(axis=other) if other else arr
        out[vid] = marg / marg.sum()
    return out


@dataclass(frozen=True, eq=False)
class WrRun:
    state: WrState
    steps: tuple[float, ...]  # log-coordinate step norms between iterates
    converged: bool


def wr_run(
    space: ReplicatedSpace,
    gen: Generator,
    *,
    tol: float = 1e-8,
    max_iters: int = 5000,
) -> WrRun:
    """Iterate the scheme until the log-coordinate step norm falls below tol.

    The step norm compares successive q iterates in log coordinates (the
    natural coordinates for both generators' convergence statements).  The
    first step is excluded from the criterion when it changes grids.
    """
    state = wr_init(space, gen)
    steps: list[float] = []
    prev_log: Array | None = (
        None if state.phase == "replicated" else np.log(state.q)
    )
    for _ in range(max_iters):
        state = wr_step(space, gen, state)
        cur_log = np.log(state.q)
        if prev_log is not None and prev_log.size == cur_log.size:
            delta = float(np.linalg.norm(cur_log - prev_log))
            steps.append(delta)
            if delta <= tol:
                return WrRun(state, tuple(steps), True)
        prev_log = cur_log
    return WrRun(state, tuple(steps), False)
