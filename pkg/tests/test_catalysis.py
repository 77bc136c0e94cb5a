import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from catalytic.catalysis import (
    BLOCK,
    TRADEOFF,
    TRADEOFF_ALT,
    CatalysisError,
    build_block_catalyst,
    catalyst_plan,
    convert_to_catalytic,
    correlation_check,
    run_protocol,
    simulate_reuse,
    tradeoff_convert,
    verify,
)
from catalytic.protocols import (
    five_qubit_t_protocol,
    identity_protocol,
    product_protocol,
    recurrence_protocol,
    synthetic_protocol,
)
from catalytic.states import FlaggedEnsemble, basis_state, maximally_mixed
from catalytic.tensor import SystemLayout
from conftest import random_state

TOL = 1e-9


@pytest.fixture(scope="module")
def rec2():
    return product_protocol(recurrence_protocol(0.85), 2)


# plan ---------------------------------------------------------------------


def test_plan_fifteen_to_five():
    plan = catalyst_plan(15, 5)
    assert (plan.k, plan.g, len(plan.branches)) == (3, 5, 5)
    assert [(b.zeta, b.eta, b.theta) for b in plan.branches] == [(0, 4, 0), (1, 3, 0), (2, 2, 0), (3, 1, 0), (4, 0, 0)]
    assert all(b.slots == plan.g - 1 for b in plan.branches)


def test_plan_single_output_is_empty():
    plan = catalyst_plan(7, 1)
    assert (plan.k, plan.g) == (7, 1)
    assert plan.branches[0].slots == 0


def test_plan_tradeoff_shape():
    plan = catalyst_plan(5, 2, 1, TRADEOFF)
    assert plan.g == 5
    assert [(b.zeta, b.eta, b.theta) for b in plan.branches] == [
        (0, 2, 2), (1, 2, 1), (2, 2, 0), (3, 1, 0), (4, 0, 0)]
    alt = catalyst_plan(5, 2, 1, TRADEOFF_ALT)
    assert [(b.zeta, b.eta, b.theta) for b in alt.branches][:3] == [(0, 1, 3), (1, 1, 2), (2, 1, 1)]


@pytest.mark.parametrize("args", [(0, 1), (2, 3), (4, 2, 3, TRADEOFF), (4, 2, 0, TRADEOFF), (4, 2, 3, BLOCK),
                                  (4, 2, None, "nope")])
def test_plan_errors(args):
    with pytest.raises(CatalysisError):
        catalyst_plan(*args)


# block catalyst -------------------------------------------------------------


def test_block_catalyst_materialization(rec2):
    base = recurrence_protocol(0.85)
    rho = base.source.matrix
    eta = rec2.measure().output
    eta1 = eta.marginal(eta.layout.labels[:2]).matrix
    pi = np.eye(4) / 4
    omega = build_block_catalyst(rec2)
    assert omega.labels == [1, 2]
    assert [b.weight for b in omega.branches] == [0.5, 0.5]
    b1, b2 = (omega.branch(i).body for i in (1, 2))
    assert b1.dim == b2.dim == 16
    assert np.abs(b1.matrix - np.kron(eta1, pi)).max() < 1e-12
    assert np.abs(b2.matrix - np.kron(rho, rho)).max() < 1e-12
    full = omega.materialize()
    assert full.shape == (32, 32)
    assert np.trace(full).real == pytest.approx(1.0)


def test_block_catalyst_single_output():
    omega = build_block_catalyst(recurrence_protocol(0.85))
    assert len(omega.branches) == 1
    assert omega.branches[0].body.dim == 1


# block conversion -----------------------------------------------------------


def test_recurrence_block_conversion(rec2):
    cp = convert_to_catalytic(rec2)
    assert cp.block_size == 2 <= rec2.n_in
    rep = verify(cp)
    meas = rec2.measure()
    assert rep.catalyst_restoration_error < 1e-10
    assert rep.output_error == pytest.approx(meas.eps, abs=TOL)
    assert rep.success_probability == pytest.approx(meas.p, abs=TOL)
    assert rep.success_probability == pytest.approx(recurrence_protocol(0.85).measure().p ** 2, abs=TOL)
    assert rep.output_average_deviation < TOL
    assert rep.weight_after_control == pytest.approx(1.0, abs=TOL)
    assert rep.correlation_bound_lhs <= rep.correlation_bound_rhs
    assert rep.catalyst_loss_probability <= 1 - rep.protocol_p + TOL
    assert rep.passed


def test_identity_conversion_is_trivial():
    rep = verify(convert_to_catalytic(identity_protocol()))
    assert rep.output_error == 0 and rep.catalyst_restoration_error == 0
    assert rep.success_probability == 1 and rep.failure_weight == 0
    assert rep.passed


def test_run_protocol_returns_output_and_catalyst(rec2):
    cp = convert_to_catalytic(rec2)
    final, info = run_protocol(cp)
    lay = final.branches[0].body.layout
    assert set(cp.output_labels) <= set(lay.labels)
    assert info["physical_scale"] == pytest.approx(rec2.measure().p)


def test_failure_branch_uses_junk_when_no_complement():
    base = synthetic_protocol(2, 2, seed=3)
    p = type(base)(base.map, base.n_in, base.m_out, base.source, base.target,
                   base.declared_eps, base.declared_p)
    cp = convert_to_catalytic(p, junk=maximally_mixed(p.output_layout()))
    assert cp.failure_op is None and cp.failure_junk is not None
    rep = verify(cp)
    assert rep.failure_weight > 0
    assert rep.catalyst_loss_probability <= 1 - rep.protocol_p + TOL


# trade-off --------------------------------------------------------------------


def test_five_qubit_tradeoff():
    p = five_qubit_t_protocol(0.05)
    meas = p.measure()
    rep = verify(tradeoff_convert(p, 1))
    assert rep.success_probability == pytest.approx(meas.p / 5, abs=TOL)
    assert rep.output_error == pytest.approx(meas.eps, abs=TOL)
    assert rep.rejected_weight_leak < TOL
    assert rep.passed
    cp = tradeoff_convert(p, 1)
    assert cp.block_size == 1 and cp.slots.D == 2


def test_alternative_catalyst_identical_outputs():
    p = five_qubit_t_protocol(0.05)
    a, b = tradeoff_convert(p, 1), tradeoff_convert(p, 1, alt_catalyst=True)
    ra, rb = verify(a), verify(b)
    for field in ("success_probability", "output_error", "catalyst_restoration_error"):
        assert getattr(ra, field) == pytest.approx(getattr(rb, field), abs=TOL)
    fa, _ = run_protocol(a)
    fb, _ = run_protocol(b)
    oa = sum(x.weight * x.body.marginal(a.output_labels).matrix for x in fa.branches)
    ob = sum(x.weight * x.body.marginal(b.output_labels).matrix for x in fb.branches)
    assert np.abs(oa - ob).max() < TOL


def test_five_to_two_synthetic():
    p = synthetic_protocol(5, 2, seed=0)
    meas = p.measure()
    for alt in (False, True):
        cp = tradeoff_convert(p, 1, alt_catalyst=alt)
        assert cp.g == 5
        rep = verify(cp)
        assert rep.success_probability == pytest.approx(2 * meas.p / 5, abs=TOL)
        assert rep.passed


def test_tradeoff_boundary_reduces_to_plain_success():
    p = synthetic_protocol(2, 1, seed=4)
    cp = tradeoff_convert(p, 2)
    assert cp.g == 1
    rep = verify(cp)
    assert rep.success_probability == pytest.approx(p.measure().p, abs=TOL)


def test_tradeoff_k_range(rec2):
    with pytest.raises(CatalysisError):
        tradeoff_convert(rec2, 3)


# reuse -----------------------------------------------------------------------------


def test_reuse_three_rounds():
    p = product_protocol(recurrence_protocol(0.85).deterministic(), 2)
    rep = simulate_reuse(convert_to_catalytic(p), 3)
    assert len(rep.per_round) == 3
    for r in rep.per_round:
        assert r["catalyst_error"] < 1e-10
        assert r["target_spread"] < 1e-10
        assert max(r["target_errors"]) <= p.measure().eps + TOL
    assert rep.passed


def test_reuse_single_round_matches_verify():
    p = product_protocol(recurrence_protocol(0.85).deterministic(), 2)
    cp = convert_to_catalytic(p)
    rep = simulate_reuse(cp, 1)
    assert rep.per_round[0]["target_errors"][0] == pytest.approx(verify(cp).output_error, abs=1e-12)


def test_reuse_rejects_probabilistic(rec2):
    with pytest.raises(CatalysisError):
        simulate_reuse(convert_to_catalytic(rec2), 2)


# correlation -------------------------------------------------------------------------


def test_correlation_product_state(rng):
    phi = basis_state(2, 1, "S")
    omega = random_state(SystemLayout.of(("A", 3)), rng)
    lhs, rhs, ok = correlation_check(phi.tensor(omega), phi)
    assert lhs == pytest.approx(0, abs=1e-12) and rhs == pytest.approx(0, abs=1e-12) and ok


def test_correlation_zero_error_forces_product(rng):
    phi = basis_state(2, 0, "S")
    e = FlaggedEnsemble.of([(0.3, phi.tensor(random_state(SystemLayout.of(("A", 2)), rng)), 1),
                            (0.7, phi.tensor(random_state(SystemLayout.of(("A", 2)), rng)), 2)])
    lhs, rhs, ok = correlation_check(e, phi, ["S"])
    assert lhs == pytest.approx(0, abs=1e-12) and ok


def test_correlation_bound_random(rng):
    phi = basis_state(2, 0, "S")
    for _ in range(20):
        nu = random_state(SystemLayout.of(("S", 2), ("A", 2)), rng)
        lhs, rhs, ok = correlation_check(nu, phi)
        assert ok and lhs <= rhs + TOL


def test_correlation_needs_pure_reference(rng):
    nu = random_state(SystemLayout.of(("S", 2), ("A", 2)), rng)
    with pytest.raises(CatalysisError):
        correlation_check(nu, maximally_mixed(SystemLayout.of(("S", 2))))


# randomized protocols ------------------------------------------------------------------

protocol_cases = st.tuples(
    st.integers(1, 3),  # n
    st.integers(1, 3),  # m (clipped to n)
    st.integers(0, 10_000),  # seed
    st.integers(1, 3),  # k (clipped to n/m)
    st.booleans(),
)


@settings(max_examples=100, deadline=None, derandomize=True)
@given(protocol_cases)
def test_random_protocols_restore_catalyst(case):
    n, m, seed, k, alt = case
    m = min(m, n)
    k = min(k, n // m)
    p = synthetic_protocol(n, m, seed=seed)
    meas = p.measure()
    for cp in (convert_to_catalytic(p), tradeoff_convert(p, k, alt_catalyst=alt)):
        rep = verify(cp)
        assert rep.catalyst_restoration_error <= TOL
        assert rep.output_error <= meas.eps + TOL
        assert rep.success_probability == pytest.approx(cp.expected_p, abs=TOL)
        assert rep.weight_after_control == pytest.approx(1.0, abs=TOL)
        assert rep.rejected_weight_leak <= TOL
        assert rep.catalyst_loss_probability <= 1 - meas.p + TOL
        assert cp.plan.k <= n
        assert rep.passed

