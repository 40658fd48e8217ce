import json

import numpy as np
import pytest

from builders import desk, nonlinear, random_affine, random_graph, random_point, two_nodes
from gne_mesh.augment import AugmentedPoint
from gne_mesh.engine import StopRule, run, stacked_step
from gne_mesh.game import affine_game, make_cournot
from gne_mesh.scenarios import FIG1_TEMPLATE
from gne_mesh.tuning import auto_tuning, bundle_phi, fixed_bundle
from gne_mesh.verify import (
    OracleError,
    inclusion_residual,
    kkt_residual,
    operator_B,
    operator_skew,
    phi_apply,
    phi_descent_check,
    sample_cocoercivity,
    sample_restricted_monotonicity,
    solve_vi_oracle,
    verify_state,
    zero_point,
)
from gne_mesh.tuning import assemble_phi


def test_kkt_residual_desk_examples():
    g = desk()
    assert kkt_residual(g, [0.5, 0.5], [1.5]).max == pytest.approx(0.0, abs=1e-14)
    rep = kkt_residual(g, [0.8, 0.8], [0.0])
    assert rep.stationarity == pytest.approx(0.0, abs=1e-14)
    assert rep.primal_violation == pytest.approx(0.6)
    rep = kkt_residual(g, [0.5, 0.5], [0.0])
    assert rep.stationarity > 0 and rep.complementarity == 0.0
    rep = kkt_residual(g, [0.1, 0.1], [1.0])
    assert rep.complementarity == pytest.approx(0.8)
    rep = kkt_residual(g, [0.5, 0.5], [-1.0])
    assert rep.dual_feas == pytest.approx(1.0)
    with pytest.raises(ValueError):
        kkt_residual(g, [0.5], [1.5])


@pytest.mark.parametrize("r, x, lam", [(2.0, 0.8, 0.0), (1.0, 0.5, 1.5)])
def test_oracle_desk(r, x, lam):
    sol = solve_vi_oracle(desk(r))
    np.testing.assert_allclose(sol.x_star, [x, x], atol=1e-12)
    np.testing.assert_allclose(sol.lambda_star, [lam], atol=1e-12)


def test_oracle_box_active():
    sol = solve_vi_oracle(desk(2.0, upper=0.4))
    np.testing.assert_allclose(sol.x_star, [0.4, 0.4], atol=1e-12)
    assert sol.at_upper == (0, 1)
    np.testing.assert_allclose(sol.lambda_star, [0.0])


def test_oracle_matches_kkt_on_random_games():
    rng = np.random.default_rng(0)
    for _ in range(20):
        g = random_affine(rng)
        sol = solve_vi_oracle(g)
        assert kkt_residual(g, sol.x_star, sol.lambda_star).max < 1e-9


def test_oracle_refusals():
    g, _ = make_cournot(FIG1_TEMPLATE, 7)
    with pytest.raises(OracleError, match="too large"):
        solve_vi_oracle(g)
    with pytest.raises(OracleError, match="affine"):
        solve_vi_oracle(nonlinear(np.random.default_rng(0)))


def _setup(seed):
    rng = np.random.default_rng(seed)
    g = random_affine(rng, N=int(rng.integers(2, 5)), m=2)
    graph = random_graph(rng, g.N)
    params = fixed_bundle(g.N, rng.uniform(0.1, 3), rng.uniform(0.01, 0.1, g.N),
                          rng.uniform(0.01, 0.1, g.N), rng.uniform(0.01, 0.1, g.N))
    return rng, g, graph, params


def test_inclusion_holds_for_every_step():
    worst = 0.0
    for seed in range(50):
        rng, g, graph, params = _setup(seed)
        p = random_point(rng, g)
        q = stacked_step(p, g, graph, params)
        worst = max(worst, inclusion_residual(p, q, g, graph, params))
    assert worst <= 1e-10


def test_inclusion_detects_perturbation():
    rng, g, graph, params = _setup(99)
    p = random_point(rng, g)
    q = stacked_step(p, g, graph, params)
    for field in ("bold_x", "z", "lam"):
        bad = q.copy()
        getattr(bad, field)[0, 0] += 1e-3
        assert inclusion_residual(p, bad, g, graph, params) > 1e-6


def test_zero_point_satisfies_inclusion():
    for seed in range(10):
        rng, g, graph, params = _setup(seed)
        sol = solve_vi_oracle(g)
        p = zero_point(g, graph, sol.x_star, sol.lambda_star)
        assert inclusion_residual(p, p, g, graph, params) <= 1e-10


def test_operator_skew_is_skew():
    rng, g, graph, _ = _setup(3)
    for _ in range(10):
        d1, d2 = random_point(rng, g), random_point(rng, g)
        a = d1.vector() @ operator_skew(g, graph, d2).vector()
        b = d2.vector() @ operator_skew(g, graph, d1).vector()
        assert a == pytest.approx(-b, abs=1e-10)


def test_phi_apply_matches_dense():
    rng, g, graph, params = _setup(4)
    phi = assemble_phi(params.tau, params.nu, params.sigma, g, graph)
    d = random_point(rng, g)
    np.testing.assert_allclose(phi_apply(g, graph, params.tau, params.nu, params.sigma, d).vector(),
                               phi @ d.vector(), atol=1e-12)


def test_operator_B_vanishes_direction():
    # consensus part of B ignores z entirely
    rng, g, graph, params = _setup(5)
    p = random_point(rng, g)
    q = p.copy()
    q.z += 5.0
    np.testing.assert_array_equal(operator_B(g, graph, 1.0, p).vector(),
                                  operator_B(g, graph, 1.0, q).vector())


def test_sampled_constants_desk():
    g, graph = desk(), two_nodes()
    b = auto_tuning(g, graph)
    mono = sample_restricted_monotonicity(g, graph, b.c, trials=2000, seed=1)
    assert mono >= b.mu_bar - 1e-9
    coco = sample_cocoercivity(g, graph, b.c, trials=2000, seed=2)
    assert coco >= b.beta - 1e-12


def test_zero_gain_loses_restricted_monotonicity():
    g, graph = desk(), two_nodes()
    assert sample_restricted_monotonicity(g, graph, 0.0, trials=200, seed=0) < 0


def test_descent_check_constant_and_growing():
    g, graph = desk(), two_nodes()
    p = zero_point(g, graph, [0.5, 0.5], [1.5])
    phi = np.eye(p.vector().size)
    rep = phi_descent_check([p, p, p], p, phi, 0.5)
    assert rep.passed and rep.monotone and rep.worst_margin == 0.0 and rep.pairs == 2
    far = p.copy()
    far.bold_x += 1.0
    rep = phi_descent_check([p, far], p, phi, 0.5)
    assert not rep.passed and not rep.monotone


def test_descent_along_certified_run():
    g, graph = desk(), two_nodes()
    b = auto_tuning(g, graph)
    p_star = zero_point(g, graph, [0.5, 0.5], [1.5])
    traj = run(g, graph, b, stop=StopRule(0.0, 300), stride=1, compiled=False)
    rep = phi_descent_check([p for _, p in traj.snapshots], p_star, bundle_phi(b, g, graph), b.xi)
    assert rep.passed and rep.monotone


def test_verify_state_and_tamper():
    g, graph = desk(), two_nodes()
    good = zero_point(g, graph, [0.5, 0.5], [1.5])
    rep = verify_state(g, good, seeds={"seed": 0})
    assert rep.passed
    doc = json.loads(rep.dumps())
    assert doc["oracle"]["x_star"] == pytest.approx([0.5, 0.5])
    bad = good.copy()
    bad.bold_x[:, 1] = 0.6
    rep = verify_state(g, bad)
    assert not rep.passed
    failed = {c.name for c in rep.checks if not c.passed}
    assert "oracle_x" in failed and "consensus_residual" not in failed
    skipped = verify_state(make_cournot(FIG1_TEMPLATE, 7)[0],
                           AugmentedPoint(np.zeros((20, 32)), np.zeros((20, 7)), np.zeros((20, 7))))
    assert "skipped" in skipped.oracle
