import math

import numpy as np
import pytest
from scipy.special import erf

from ruin2d.closed_form import drifted_bm_survival
from ruin2d.errors import ConfigError, DomainError
from ruin2d.generator import Field
from ruin2d.kernel import eval_F, eval_G, kernel_constants
from ruin2d.model import ClaimDist, ModelParams
from ruin2d.solver import (
    SolverGrid,
    _Operator,
    assemble_F,
    claim_hat_weights,
    default_probes,
    picard_solve,
    query,
    transition_weights,
)


@pytest.fixture(scope="module")
def params():
    return ModelParams(2.0, 2.0, 1.0, 1.0, 0.3, 0.3, 0.2)


@pytest.fixture(scope="module")
def solved(params):
    grid = SolverGrid.auto(params, 0.0, 1.0, 3.0, 17, 33)
    fld, report = picard_solve(grid, params)
    return grid, fld, report


def test_grid_validation():
    assert SolverGrid(0, 1, 5, (4.0, 4.0), (9, 9)).problems() == []
    bad = SolverGrid(1, 1, 1, (0.0, 4.0), (2, 9), stretch=-1.0).problems()
    assert len(bad) == 5
    assert SolverGrid(0, 1, 5, (4.0, 4.0), (9, 9), xi_max=(5.0, 1.0)).problems() == ["xi_max must not exceed x_max"]


def test_auto_truncation(params):
    g = SolverGrid.auto(params, 0.0, 1.0, 3.0, 33, 65)
    expected = 3.0 + 2.0 + 8.0 + 1.0 * 0.8
    assert g.x_max == (pytest.approx(expected), pytest.approx(expected))
    assert g.n_x == (65, 65) and g.xi_max == (3.0, 3.0)


@pytest.mark.parametrize("stretch", [0.0, 3.0])
def test_nodes_and_refinement(stretch):
    g = SolverGrid(0.0, 2.0, 5, (6.0, 4.0), (9, 17), stretch=stretch)
    for axis in (0, 1):
        x = g.x_nodes(axis)
        assert x[0] == 0 and x[-1] == g.x_max[axis] and np.all(np.diff(x) > 0)
        if stretch:
            assert np.all(np.diff(np.diff(x)) > 0)
    r = g.refined()
    assert r.n_t == 9 and r.n_x == (17, 33)
    assert np.allclose(r.t_nodes[::2], g.t_nodes)
    assert np.allclose(r.x_nodes(0)[::2], g.x_nodes(0), rtol=0, atol=1e-12)


def test_grid_round_trip(params):
    g = SolverGrid.auto(params, 0.25, 1.0, (2.0, 3.0), 9, (17, 33), quad_nodes=32)
    assert SolverGrid.from_dict(g.to_dict()) == g
    derived = SolverGrid.from_dict({"tau": 0.25, "T": 1.0, "n_t": 9, "n_x": [17, 33], "xi_max": [2.0, 3.0],
                                    "quad_nodes": 32}, params)
    assert derived == g
    with pytest.raises(ConfigError):
        SolverGrid.from_dict({"T": 1.0, "n_t": 9, "n_x": 9, "xi_max": 2.0})


def test_assemble_F_values(params, solved):
    grid, _, _ = solved
    F = assemble_F(grid, params)
    v = F.values
    assert np.all(v[:, 0, :] == 0) and np.all(v[:, :, 0] == 0)
    assert v.min() >= 0 and v.max() <= 1
    assert np.all(v[-1, 1:, 1:] == 1)
    k = kernel_constants(params)
    assert v[3, 5, 7] == eval_F(grid.t_nodes[3], (grid.x_nodes(0)[5], grid.x_nodes(1)[7]), 1.0, k, params)


def test_assemble_F_heat_case():
    p = ModelParams(0, 0, 1, 1, 0, 0, 0)
    grid = SolverGrid(0.0, 1.0, 5, (12.0, 12.0), (25, 25), xi_max=(4.0, 4.0))
    F = assemble_F(grid, p)
    t = grid.t_nodes[:-1, None, None]
    a = grid.x_nodes(0)[None, :, None]
    b = grid.x_nodes(1)[None, None, :]
    ref = erf(a / np.sqrt(2 * (1 - t))) * erf(b / np.sqrt(2 * (1 - t)))
    assert np.allclose(F.values[:-1], ref, atol=1e-14)


def test_assemble_F_rejects_short_truncation(params):
    with pytest.raises(ConfigError):
        assemble_F(SolverGrid(0.0, 1.0, 5, (4.0, 4.0), (9, 9), xi_max=(3.0, 3.0)), params)


def test_transition_weights_sum_to_survival():
    x = SolverGrid(0, 1, 2, (15.0, 15.0), (121, 121), stretch=2.0).x_nodes(0)
    assert np.array_equal(transition_weights(x, 1.0, 1.0, 0.0), np.eye(len(x)))
    W = transition_weights(x, 1.5, 0.8, 0.4)
    ref = drifted_bm_survival(x, 1.5, 0.8, 0.4)
    assert np.allclose(W[x < 8].sum(axis=1), ref[x < 8], atol=1e-13)
    assert np.all(np.abs(W[0]) < 1e-15)


def test_transition_weights_reproduce_linear_functions():
    x = np.linspace(0, 20, 201)
    W = transition_weights(x, 0.0, 1.0, 0.5)
    # for driftless killed motion E[X_t; t < ruin] = x
    assert np.allclose((W @ x)[x < 10], x[x < 10], atol=1e-12)


@pytest.mark.parametrize("dist", [ClaimDist.exponential(1.3), ClaimDist.uniform(0.7)], ids=str)
def test_claim_weights(dist):
    x = SolverGrid(0, 1, 2, (6.0, 6.0), (61, 61), stretch=1.5).x_nodes(0)
    Q = claim_hat_weights(x, dist)
    assert np.all(Q[0] == 0)
    assert np.allclose(Q.sum(axis=1), dist.cdf(x), atol=1e-14)
    # E[(y - Z); Z < y] from the hat expansion of the identity
    assert np.allclose(Q @ x, x * dist.cdf(x) - dist.partial_moment(0.0, x), atol=1e-12)
    assert np.all(np.triu(Q, 1) == 0)


def test_no_claims_returns_F(diffusion_params):
    grid = SolverGrid.auto(diffusion_params, 0.0, 1.0, 3.0, 9, 17)
    fld, rep = picard_solve(grid, diffusion_params)
    assert rep.iterations == 1 and rep.converged and rep.increments == [0.0]
    assert np.array_equal(fld.values, assemble_F(grid, diffusion_params).values)


def test_report_and_bounds(params, solved):
    grid, fld, rep = solved
    assert rep.converged and rep.iterations < 50
    assert 0 < rep.contraction_ratio < 0.9
    inc = np.array(rep.increments)
    assert np.all(inc > 0) and np.all(np.diff(inc) < 0)
    assert inc[-1] < 1e-6 <= inc[-2]
    tol = 1e-6
    assert fld.values.min() >= -tol and fld.values.max() <= 1 + tol
    assert fld.problems(tol=tol, terminal=True) == []
    assert fld.metadata["params_hash"] == params.params_hash()
    assert fld.metadata["grid"] == grid.to_dict()


def test_claims_raise_survival_above_F(params, solved):
    grid, fld, _ = solved
    F = assemble_F(grid, params).values
    assert np.all(fld.values >= F - 1e-12)


def test_iterates_increase_monotonically(params):
    grid = SolverGrid.auto(params, 0.0, 1.0, 3.0, 9, 17)
    prev = assemble_F(grid, params).values
    for k in range(1, 5):
        cur, rep = picard_solve(grid, params, tol=0.0, k_max=k)
        assert not rep.converged
        assert np.all(cur.values >= prev - 1e-15)
        prev = cur.values


def test_fixed_point(params, solved):
    grid, fld, _ = solved
    op = _Operator(grid, params)
    F = assemble_F(grid, params).values
    again = F + op.apply(fld.values)
    again[-1] = F[-1]
    assert np.max(np.abs(again - fld.values)) < 1e-6


def test_operator_matches_direct_claim_kernel_quadrature(params):
    grid = SolverGrid.auto(params, 0.0, 0.5, 2.0, 3, 129, stretch=0.0)
    op = _Operator(grid, params)
    x1, x2 = grid.x_nodes(0), grid.x_nodes(1)

    def phi(a, b):
        return (1 - np.exp(-a)) * (1 - np.exp(-1.5 * b))

    vals = np.broadcast_to(phi(*np.meshgrid(x1, x2, indexing="ij")), (3, len(x1), len(x2))).copy()
    moved = op.decay[1] * (op.P1[1] @ op.claim_term(vals)[1] @ op.P2[1].T)
    i = j = int(np.argmin(np.abs(x1 - 1.0)))
    xi = (x1[i], x2[j])
    k = kernel_constants(params)
    z, w = np.polynomial.legendre.leggauss(12)
    edges = np.linspace(0, xi[0] + 1 + 8 * math.sqrt(0.25), 7)
    nodes = (0.5 * (edges[1:] + edges[:-1])[:, None] + 0.5 * np.diff(edges)[:, None] * z).ravel()
    weights = (0.5 * np.diff(edges)[:, None] * w).ravel()
    G = np.array([[eval_G(0.25, (a, b), 0.0, xi, k, params) for b in nodes] for a in nodes])
    direct = weights @ (G * phi(*np.meshgrid(nodes, nodes, indexing="ij"))) @ weights
    assert moved[i, j] == pytest.approx(direct, rel=2e-3)


def test_non_convergence_is_reported(params):
    grid = SolverGrid.auto(params, 0.0, 1.0, 3.0, 9, 17)
    fld, rep = picard_solve(grid, params, tol=1e-300, k_max=3)
    assert not rep.converged and rep.iterations == 3
    assert fld.metadata["convergence"]["converged"] is False


def test_refinement_changes_shrink(params):
    values = []
    for n_t, n_x in [(9, 17), (17, 33), (33, 65)]:
        grid = SolverGrid.auto(params, 0.0, 1.0, 3.0, n_t, n_x)
        fld, _ = picard_solve(grid, params)
        values.append([query(fld, t, (a, b)) for t, a, b in default_probes(grid)])
    d = np.abs(np.diff(np.array(values), axis=0))
    assert np.all(d[1] < 0.5 * d[0])


def test_query_semantics(solved):
    grid, fld, _ = solved
    x1, x2 = fld.x1_nodes, fld.x2_nodes
    assert query(fld, fld.t_nodes[4], (x1[6], x2[3])) == fld.values[4, 6, 3]
    assert query(fld, 0.3, (0.0, 1.7)) == 0.0
    with pytest.raises(DomainError):
        query(fld, 1.5, (1.0, 1.0))
    with pytest.raises(DomainError):
        query(fld, 0.5, (-0.1, 1.0))
    with pytest.raises(DomainError):
        query(fld, 0.5, (1.0, x2[-1] + 1))
    cell = Field(np.array([0.0, 1.0]), np.array([0.0, 1.0]), np.array([0.0, 1.0]),
                 np.array([[[0.0, 0.0], [1.0, 1.0]], [[0.0, 0.0], [1.0, 1.0]]]))
    assert query(cell, 0.5, (0.5, 0.5)) == 0.5


def test_default_probes_lie_in_trusted_region(solved):
    grid, _, _ = solved
    probes = default_probes(grid)
    assert len(probes) == 9
    for t, a, b in probes:
        assert grid.tau <= t < grid.T and 0 < a <= grid.xi_max[0] and 0 < b <= grid.xi_max[1]
