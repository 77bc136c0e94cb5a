import itertools

import numpy as np
import pytest

from catalytic.channels import apply
from catalytic.multishot import MultiShotProtocol, ProtocolError
from catalytic.protocols import (
    ENTANGLEMENT_PPT,
    MAGIC_STABILIZER,
    REGISTRY,
    FreeSetOracle,
    UnknownProtocolError,
    five_qubit_t_protocol,
    free_membership,
    get_protocol,
    identity_protocol,
    isotropic_state,
    max_stabilizer_fidelity,
    noisy_t_state,
    partial_transpose,
    product_protocol,
    recurrence_protocol,
    stabilizer_states,
    synthetic_protocol,
    t_state,
)
from catalytic.states import State, maximally_mixed, tensor_power, trace_distance
from catalytic.tensor import DimensionCapError, SystemLayout

BELL = np.zeros((4, 4))
BELL[np.ix_([0, 3], [0, 3])] = 0.5
PAULI = {
    "I": np.eye(2),
    "X": np.array([[0, 1], [1, 0]]),
    "Y": np.array([[0, -1j], [1j, 0]]),
    "Z": np.diag([1.0, -1.0]),
}


def werner_recurrence(f):
    """Textbook two-pair recurrence on Werner pairs: (output fidelity, success probability)."""
    b = (1 - f) / 3
    num = f**2 + b**2
    den = f**2 + 2 * f * b + 5 * b**2
    return num / den, den


def word(w):
    out = np.ones((1, 1))
    for c in w:
        out = np.kron(out, PAULI[c])
    return out


# isotropic states -------------------------------------------------------


def test_isotropic_extremes():
    assert np.allclose(isotropic_state(1.0).matrix, BELL)
    assert np.allclose(isotropic_state(0.25).matrix, np.eye(4) / 4)
    with pytest.raises(ValueError):
        isotropic_state(1.2)


@pytest.mark.parametrize("f", [0.3, 0.5, 0.9])
def test_isotropic_fidelity(f):
    assert np.trace(BELL @ isotropic_state(f).matrix).real == pytest.approx(f, abs=1e-12)


def test_ppt_boundary_at_one_half():
    pt = partial_transpose(isotropic_state(0.5), ["B"])
    assert np.linalg.eigvalsh(pt).min() == pytest.approx(0.0, abs=1e-9)
    ppt = FreeSetOracle(ENTANGLEMENT_PPT)
    assert free_membership(ppt, isotropic_state(0.5))
    assert not free_membership(ppt, isotropic_state(0.9))
    assert free_membership(ppt, isotropic_state(0.4))


# recurrence -------------------------------------------------------------


def test_recurrence_perfect_input():
    m = recurrence_protocol(1.0).measure()
    assert m.p == pytest.approx(1.0, abs=1e-12)
    assert m.eps == pytest.approx(0.0, abs=1e-12)


@pytest.mark.parametrize("f", [0.6, 0.75, 0.85, 0.95])
def test_recurrence_matches_closed_form(f):
    p = recurrence_protocol(f)
    meas = p.measure()
    f_out, p_succ = werner_recurrence(f)
    assert meas.p == pytest.approx(p_succ, abs=1e-12)
    # Bell-diagonal output: distance to the Bell state is 1 - F'
    assert meas.eps == pytest.approx(1 - f_out, abs=1e-12)
    assert f_out > f
    assert p.declared_p == meas.p and p.declared_eps == meas.eps


def test_recurrence_fidelity_range():
    with pytest.raises(ValueError):
        recurrence_protocol(0.5)


def test_product_protocol():
    base = recurrence_protocol(0.85)
    assert product_protocol(base, 1) is base
    two = product_protocol(base, 2)
    assert (two.n_in, two.m_out) == (4, 2)
    meas = two.measure()
    assert meas.p == pytest.approx(base.measure().p ** 2, abs=1e-12)
    for e in meas.marginal_errors:
        assert e == pytest.approx(base.measure().eps, abs=1e-12)
    with pytest.raises(ValueError):
        product_protocol(base, 0)


def test_deterministic_recurrence_is_trace_preserving():
    det = recurrence_protocol(0.85).deterministic()
    assert det.measure().p == pytest.approx(1.0, abs=1e-12)
    assert det.complement is None
    with pytest.raises(ProtocolError):
        det.deterministic()


# five-qubit T distillation ----------------------------------------------


def code_projector():
    gens = ["XZZXI", "IXZZX", "XIXZZ", "ZXIXZ"]
    P = np.eye(32, dtype=complex)
    for g in gens:
        P = P @ (np.eye(32) + word(g)) / 2
    return P


def test_five_qubit_success_matches_code_projector():
    lam = 0.05
    proto = five_qubit_t_protocol(lam)
    rho = noisy_t_state(lam).matrix
    rho5 = rho
    for _ in range(4):
        rho5 = np.kron(rho5, rho)
    assert proto.measure().p == pytest.approx(np.trace(code_projector() @ rho5).real, abs=1e-12)


@pytest.mark.parametrize("lam", [0.0, 0.05, 0.2, 0.4])
def test_five_qubit_matches_closed_form(lam):
    """Standard 5-to-1 T distillation: input error e = lam/2 in the T / T-perp basis."""
    e = lam / 2
    ps = (e**5 + 5 * e**2 * (1 - e) ** 3 + 5 * e**3 * (1 - e) ** 2 + (1 - e) ** 5) / 6
    e_out = (e**5 + 5 * e**2 * (1 - e) ** 3) / (6 * ps)
    m = five_qubit_t_protocol(lam).measure()
    assert m.p == pytest.approx(ps, abs=1e-12)
    assert m.eps == pytest.approx(e_out, abs=1e-12)


def test_five_qubit_suppresses_error():
    lam = 0.05
    proto = five_qubit_t_protocol(lam)
    eps_in = trace_distance(noisy_t_state(lam), State(t_state(), SystemLayout.of(("S", 2))))
    assert eps_in == pytest.approx(lam / 2, abs=1e-12)
    assert proto.measure().eps < eps_in


def test_five_qubit_clean_input():
    m = five_qubit_t_protocol(0.0).measure()
    assert m.eps == pytest.approx(0.0, abs=1e-10)
    assert 0 < m.p <= 1


def test_five_qubit_failure_map_completes_the_measurement():
    proto = five_qubit_t_protocol(0.05)
    E = sum(K.conj().T @ K for K in proto.map.kraus) + sum(K.conj().T @ K for K in proto.complement.kraus)
    assert np.allclose(E, np.eye(32), atol=1e-10)


# free sets --------------------------------------------------------------


def test_stabilizer_counts():
    assert len(stabilizer_states(1)) == 6
    assert len(stabilizer_states(2)) == 60
    with pytest.raises(ValueError):
        stabilizer_states(3)


def test_magic_membership():
    magic = FreeSetOracle(MAGIC_STABILIZER)
    assert free_membership(magic, maximally_mixed(SystemLayout.of(("S", 2))))
    assert free_membership(magic, maximally_mixed(SystemLayout.of(("S", 4))))
    assert not free_membership(magic, State(t_state(), SystemLayout.of(("S", 2))))
    assert max_stabilizer_fidelity(t_state()) < 1 - 1e-3
    for v in stabilizer_states(2):
        assert free_membership(magic, State(v, SystemLayout.of(("S", 4))))
    with pytest.raises(ValueError):
        free_membership(magic, maximally_mixed(SystemLayout.of(("S", 8))))


def test_free_states_in_both_theories():
    mm = maximally_mixed(SystemLayout.of(("A", 2), ("B", 2)))
    assert free_membership(FreeSetOracle(ENTANGLEMENT_PPT), mm)
    assert free_membership(FreeSetOracle(MAGIC_STABILIZER), mm)


def test_recurrence_preserves_ppt():
    proto = recurrence_protocol(0.85)
    ppt = FreeSetOracle(ENTANGLEMENT_PPT)
    for f in (0.25, 0.4, 0.5):
        src = tensor_power(isotropic_state(f), 2).with_layout(proto.map.in_layout)
        for op in (proto.map, proto.complement):
            out = apply(op, src)
            out = State(out.matrix / out.trace, out.layout)
            assert free_membership(ppt, out)


def test_five_qubit_preserves_stabilizer_states():
    proto = five_qubit_t_protocol(0.05)
    magic = FreeSetOracle(MAGIC_STABILIZER)
    singles = stabilizer_states(1)
    for idx in itertools.product(range(6), repeat=5):
        if sum(idx) % 7:  # a spread-out subset of product inputs
            continue
        x = singles[idx[0]]
        for i in idx[1:]:
            x = np.kron(x, singles[i])
        src = State(x, proto.map.in_layout)
        for op in (proto.map, proto.complement):
            out = apply(op, src)
            if out.trace > 1e-12:
                assert free_membership(magic, State(out.matrix / out.trace, out.layout))


# synthetic and registry -------------------------------------------------


def test_synthetic_measured_not_declared():
    p = synthetic_protocol(5, 2, seed=7)
    meas = p.validate()
    assert 0 < meas.p < 1
    assert p.declared_eps == meas.eps
    assert p.complement is not None


def test_synthetic_cap():
    with pytest.raises(DimensionCapError):
        synthetic_protocol(5, 1, d=8)


def test_identity_protocol():
    meas = identity_protocol().measure()
    assert (meas.eps, meas.p) == (0.0, 1.0)


def test_protocol_validation():
    p = identity_protocol()
    with pytest.raises(ProtocolError):
        MultiShotProtocol(p.map, 2, 1, p.source, p.target, 0, 1)
    with pytest.raises(ProtocolError):
        MultiShotProtocol(p.map, 1, 1, p.source, p.target, 0, 0.5).validate()


def test_registry():
    assert set(REGISTRY) >= {"recurrence", "five_qubit_t", "synthetic", "identity", "recurrence_deterministic"}
    assert get_protocol("recurrence", f=0.9, copies=2).n_in == 4
    with pytest.raises(UnknownProtocolError):
        get_protocol("nope")
