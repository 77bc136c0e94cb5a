import json

import numpy as np
import pytest

from catalytic.channels import (
    NONINCREASING,
    ChannelError,
    ControlledOp,
    QuantumOp,
    append_state,
    apply,
    apply_controlled,
    compose,
    depolarizing,
    dephasing,
    discard,
    identity_channel,
    is_non_signaling,
    permutation,
    random_channel,
    reduced_channel,
    replacer,
    scaled,
    sequence,
    swap_channel,
    tensor,
    unitary_channel,
)
from catalytic.states import FlaggedEnsemble, basis_state, ensemble_trace_distance, maximally_mixed, pure_state
from catalytic.tensor import LayoutError, SystemLayout
from conftest import random_state

Q = SystemLayout.of(("A", 2))


def _kraus_apply(kraus, rho):
    return sum(K @ rho @ K.conj().T for K in kraus)


def test_identity_and_depolarizing(rng):
    s = random_state(Q, rng)
    assert np.allclose(apply(identity_channel(Q), s).matrix, s.matrix)
    assert np.allclose(apply(depolarizing(1.0, layout=Q), s).matrix, np.eye(2) / 2)


def test_random_channel_preserves_trace(rng):
    ch = random_channel(3, 2, rank=3, rng=rng, in_layout=[("S", 3)])
    out = apply(ch, random_state(SystemLayout.of(("S", 3)), rng))
    assert abs(out.trace - 1) < 1e-12
    assert np.linalg.eigvalsh(out.matrix).min() > -1e-12


def test_validation_rejects_bad_maps():
    with pytest.raises(ChannelError):
        QuantumOp(Q, Q, kraus=[np.eye(2) * 1.1])
    with pytest.raises(ChannelError):
        QuantumOp(Q, Q, kraus=[np.diag([1.0, 0.0])])  # not trace preserving
    QuantumOp(Q, Q, kraus=[np.diag([1.0, 0.0])], trace_class=NONINCREASING)
    with pytest.raises(ChannelError):
        QuantumOp(Q, Q, choi=-np.eye(4))
    with pytest.raises(LayoutError):
        QuantumOp(Q, Q, kraus=[np.eye(3)])


def test_choi_kraus_round_trip(rng):
    ch = random_channel(2, 3, rank=2, rng=rng)
    back = QuantumOp(ch.in_layout, ch.out_layout, choi=ch.choi)
    rebuilt = QuantumOp(ch.in_layout, ch.out_layout, kraus=back.kraus)
    assert np.abs(rebuilt.choi - ch.choi).max() < 1e-9
    QuantumOp(ch.in_layout, ch.out_layout, kraus=ch.kraus, choi=ch.choi)
    with pytest.raises(ChannelError):
        QuantumOp(ch.in_layout, ch.out_layout, kraus=ch.kraus, choi=random_channel(2, 3, rng=rng).choi)


def test_compose_semantics(rng):
    a = random_channel(2, rng=rng, in_layout=[("B", 2)], out_layout=[("C", 2)])
    b = random_channel(2, rng=rng)
    s = random_state(Q, rng)
    ab = compose(a, b)
    direct = apply(a, apply(b, s).relabel(["B"]))
    assert np.abs(apply(ab, s).matrix - direct.matrix).max() < 1e-12
    assert np.abs(ab.choi - QuantumOp(ab.in_layout, ab.out_layout, kraus=ab.kraus).choi).max() < 1e-12
    idb = compose(identity_channel(b.out_layout), b)
    assert np.allclose(idb.choi, b.choi)
    with pytest.raises(LayoutError):
        compose(a, random_channel(2, 3, rng=rng))


def test_tensor_is_cptp(rng):
    a = random_channel(2, rng=rng)
    b = random_channel(3, rng=rng, in_layout=[("C", 3)], out_layout=[("D", 3)])
    t = tensor(a, b)
    QuantumOp(t.in_layout, t.out_layout, choi=t.choi)
    s = random_state(t.in_layout, rng)
    ref = _kraus_apply([np.kron(x, y) for x in a.kraus for y in b.kraus], s.matrix)
    assert np.abs(apply(t, s).matrix - ref).max() < 1e-12


def test_structured_act_matches_kraus(rng):
    lay = SystemLayout.of(("A", 2), ("B", 3), ("C", 2))
    s = random_state(lay, rng)
    ops = [
        discard(lay, ["A", "C"]),
        permutation(lay, [2, 0, 1]),
        append_state(lay, random_state(SystemLayout.of(("E", 2)), rng)),
        sequence(permutation(lay, [1, 0, 2]), discard(lay.permuted([1, 0, 2]), ["B"])),
    ]
    for op in ops:
        assert np.abs(op.act(s.matrix) - _kraus_apply(op.kraus, s.matrix)).max() < 1e-12


def test_apply_on_subsystems(rng):
    lay = SystemLayout.of(("A", 2), ("B", 3), ("C", 2))
    a, b, c = (random_state(SystemLayout.of((x, d)), rng) for x, d in (("A", 2), ("B", 3), ("C", 2)))
    s = a.tensor(b).tensor(c)
    ch = random_channel(2, rng=rng, in_layout=[("C", 2)], out_layout=[("C'", 2)])
    out = apply(ch, s, on=["C"])
    assert out.layout.labels == ("A", "B", "C'")
    assert np.allclose(out.matrix, np.kron(np.kron(a.matrix, b.matrix), apply(ch, c).matrix))
    two = tensor(identity_channel(SystemLayout.of(("x", 2))), ch)
    out2 = apply(two, s, on=["C", "A"], out_labels=["P", "Q"])
    assert out2.layout.labels == ("P", "Q", "B")
    assert np.allclose(out2.matrix, np.kron(np.kron(c.matrix, apply(ch, a.relabel(["C"])).matrix), b.matrix))
    with pytest.raises(LayoutError):
        apply(ch, s, on=["B"])


def test_controlled_identity_leaves_ensemble(rng):
    e = FlaggedEnsemble.of([(0.4, random_state(Q, rng), 1), (0.6, random_state(Q, rng), 2)])
    c = ControlledOp({1: identity_channel(Q), 2: identity_channel(Q)})
    assert ensemble_trace_distance(apply_controlled(c, e), e) < 1e-14
    with pytest.raises(ChannelError):
        apply_controlled(ControlledOp({1: identity_channel(Q)}), e)


def test_controlled_single_scaled_branch(rng):
    proj = QuantumOp(Q, Q, kraus=[np.diag([1.0, 0.0])], trace_class=NONINCREASING)
    s = random_state(Q, rng)
    p = s.matrix[0, 0].real
    c = ControlledOp({1: proj}, {1: 1 / p})
    out = apply_controlled(c, FlaggedEnsemble.of([(1.0, s, 1)]))
    assert out.total_weight == pytest.approx(1.0)
    assert np.allclose(out.branches[0].body.matrix * out.branches[0].weight,
                       apply(scaled(proj, 1 / p), s).matrix)
    assert c.physical_scale == pytest.approx(p)


def test_reduced_channel_examples(rng):
    a = random_channel(2, rng=rng)
    b = random_channel(2, rng=rng, in_layout=[("C", 2)], out_layout=[("D", 2)])
    t = tensor(a, b)
    for pi in (None, basis_state(2, 1, "C"), random_state(SystemLayout.of(("C", 2)), rng)):
        assert np.abs(reduced_channel(t, ["A"], ["B"], pi).choi - a.choi).max() < 1e-12
    ident = identity_channel(SystemLayout.of(("A", 2), ("C", 2)))
    assert np.allclose(reduced_channel(ident, ["A"], ["A"]).choi, identity_channel(Q).choi)


def test_reduced_swap_depends_on_reference():
    sw = swap_channel()
    r0 = reduced_channel(sw, ["A1"], ["B1"], pure_state(np.array([1, 0]), label="A2"))
    r1 = reduced_channel(sw, ["A1"], ["B1"], pure_state(np.array([0, 1]), label="A2"))
    # constant channels onto |0><0| and |1><1|: Choi = I (x) |j><j|
    assert np.allclose(r0.choi, np.kron(np.eye(2), np.diag([1, 0])))
    assert np.allclose(r1.choi, np.kron(np.eye(2), np.diag([0, 1])))


def test_non_signaling(rng):
    a = random_channel(2, rng=rng)
    b = random_channel(2, rng=rng, in_layout=[("C", 2)], out_layout=[("D", 2)])
    t = tensor(a, b)
    assert is_non_signaling(t, (["A"], ["B"]))
    assert not is_non_signaling(swap_channel(), (["A1"], ["B1"]))
    # non-signaling channels: reduced channel independent of the reference state
    for ch in (t, tensor(dephasing(1.0, layout=Q), replacer(SystemLayout.of(("C", 2)), basis_state(2, 0, "D")))):
        r0 = reduced_channel(ch, ["A"], [ch.out_layout.labels[0]], basis_state(2, 0, "C"))
        r1 = reduced_channel(ch, ["A"], [ch.out_layout.labels[0]], maximally_mixed(SystemLayout.of(("C", 2))))
        assert np.abs(r0.choi - r1.choi).max() < 1e-9


def test_channel_json_round_trip(rng):
    ch = random_channel(2, rng=rng)
    back = QuantumOp.from_json(json.loads(json.dumps(ch.to_json())))
    assert np.array_equal(back.choi, ch.choi)
    assert back.in_layout == ch.in_layout and back.trace_class == ch.trace_class


def test_unitary_and_dephasing():
    x = unitary_channel(np.array([[0, 1], [1, 0]]), Q)
    assert np.allclose(apply(x, basis_state(2, 0, "A")).matrix, np.diag([0, 1]))
    plus = pure_state(np.array([1, 1]) / np.sqrt(2), label="A")
    assert np.allclose(apply(dephasing(1.0, layout=Q), plus).matrix, np.eye(2) / 2)
