"""Desk-scale distillation protocols and free-set membership oracles."""

from __future__ import annotations

import itertools
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.optimize import linprog

from .channels import NONINCREASING, QuantumOp, random_kraus, relabeled, tensor
from .multishot import MultiShotProtocol, ProtocolError
from .states import State, basis_state, tensor_power
from .tensor import SystemLayout, check_dim, permute_subsystems

PAIR = SystemLayout.of(("A", 2), ("B", 2))

I2 = np.eye(2, dtype=complex)
PX = np.array([[0, 1], [1, 0]], dtype=complex)
PY = np.array([[0, -1j], [1j, 0]], dtype=complex)
PZ = np.array([[1, 0], [0, -1]], dtype=complex)
PAULIS = {"I": I2, "X": PX, "Y": PY, "Z": PZ}


def pauli(word: str) -> np.ndarray:
    out = np.ones((1, 1), dtype=complex)
    for ch in word:
        out = np.kron(out, PAULIS[ch])
    return out


# --------------------------------------------------------------------------
# entanglement


def maximally_entangled(d: int) -> np.ndarray:
    v = np.eye(d).reshape(-1) / np.sqrt(d)
    return np.outer(v, v).astype(complex)


def isotropic_state(f: float, d: int = 2) -> State:
    """``f Phi_d + (1 - f)(I - Phi_d)/(d^2 - 1)``; fidelity with ``Phi_d`` is ``f``."""
    if not 0 <= f <= 1:
        raise ValueError(f"fidelity must lie in [0, 1], got {f}")
    phi = maximally_entangled(d)
    rho = f * phi + (1 - f) * (np.eye(d * d) - phi) / (d * d - 1)
    return State(rho, SystemLayout.of(("A", d), ("B", d)))


def _bilateral_cnot() -> np.ndarray:
    """CNOT A1->A2 and B1->B2 on qubits ordered (A1, B1, A2, B2)."""
    cnot = np.eye(4)[[0, 1, 3, 2]]  # control first, target second
    u = np.kron(cnot, cnot)  # acts on (A1, A2, B1, B2)
    lay = SystemLayout.uniform("q", 4, 2)
    # conjugate by the reordering (A1, B1, A2, B2) <-> (A1, A2, B1, B2)
    return permute_subsystems(u, lay, [0, 2, 1, 3]).astype(complex)


def _recurrence_kraus(outcomes) -> list[np.ndarray]:
    U = _bilateral_cnot()
    out = []
    for a, b in outcomes:
        bra = np.zeros((1, 4))
        bra[0, 2 * a + b] = 1.0
        out.append(np.kron(np.eye(4), bra) @ U)
    return out


def recurrence_protocol(f: float = 0.85) -> MultiShotProtocol:
    """Two isotropic pairs in, one out: bilateral CNOT, Z-measure the second pair, keep on agreement."""
    if not 0.5 < f <= 1:
        raise ValueError(f"recurrence needs fidelity in (1/2, 1], got {f}")
    src = isotropic_state(f)
    target = State(maximally_entangled(2), PAIR)
    inl = tensor_power(src, 2).layout
    outl = tensor_power(target, 1).layout
    succ = QuantumOp(inl, outl, kraus=_recurrence_kraus([(0, 0), (1, 1)]), trace_class=NONINCREASING)
    fail = QuantumOp(inl, outl, kraus=_recurrence_kraus([(0, 1), (1, 0)]), trace_class=NONINCREASING)
    proto = MultiShotProtocol(succ, 2, 1, src, target, 0.0, 0.0, complement=fail,
                              name="recurrence", params={"f": f})
    return proto.with_measured()


def recurrence_closed_form(f: float) -> tuple[float, float]:
    """Output fidelity and success probability for isotropic qubit pairs."""
    b = (1 - f) / 3
    p = f * f + 2 * f * b + 5 * b * b
    return (f * f + b * b) / p, p


def product_protocol(p: MultiShotProtocol, copies: int) -> MultiShotProtocol:
    """Independent runs side by side: ``(n c) -> (m c)`` with success ``p^c``."""
    if copies < 1:
        raise ValueError("copies must be at least 1")
    if copies == 1:
        return p
    check_dim(p.map.in_dim**copies, "product protocol input")
    inl = p.input_layout(p.n_in * copies)
    outl = tensor_power(p.target, p.m_out * copies).layout

    def run(maps):
        ops = [
            QuantumOp(p.input_layout(), p.output_layout(), kraus=op.kraus, trace_class=op.trace_class, check=False)
            for op in maps
        ]
        t = tensor(*[_relabel_copy(op, j) for j, op in enumerate(ops)])
        return QuantumOp(inl, outl, kraus=t.kraus, trace_class=NONINCREASING, check=False)

    succ = run([p.map] * copies)
    fail = None
    if p.complement is not None:
        kraus = []
        for pattern in itertools.product((False, True), repeat=copies):
            if any(pattern):
                kraus += run([p.complement if bad else p.map for bad in pattern]).kraus
        fail = QuantumOp(inl, outl, kraus=kraus, trace_class=NONINCREASING, check=False)
    out = MultiShotProtocol(succ, p.n_in * copies, p.m_out * copies, p.source, p.target,
                            p.declared_eps, p.declared_p**copies, complement=fail,
                            name=f"{p.name}x{copies}", params={**p.params, "copies": copies},
                            free_state=p.free_state)
    return out.with_measured()


def _relabel_copy(op: QuantumOp, j: int) -> QuantumOp:
    return relabeled(
        op,
        op.in_layout.relabel([f"{lab}#{j}" for lab in op.in_layout.labels]),
        op.out_layout.relabel([f"{lab}#{j}" for lab in op.out_layout.labels]),
    )


# --------------------------------------------------------------------------
# magic


def t_state() -> np.ndarray:
    """``|T><T| = (I + (X + Y + Z)/sqrt 3)/2``."""
    return (I2 + (PX + PY + PZ) / np.sqrt(3)) / 2


def noisy_t_state(lam: float) -> State:
    """``(1 - lam)|T><T| + lam I/2``; trace distance to ``|T>`` is ``lam/2``."""
    if not 0 <= lam <= 1:
        raise ValueError("depolarizing parameter must lie in [0, 1]")
    return State((1 - lam) * t_state() + lam * I2 / 2, SystemLayout.of(("S", 2)))


FIVE_QUBIT_STABILIZERS = ("XZZXI", "IXZZX", "XIXZZ", "ZXIXZ")


@lru_cache(maxsize=None)
def five_qubit_code() -> np.ndarray:
    """Encoding isometry ``V`` (32 x 2) with columns ``|0_L>``, ``|1_L> = XXXXX |0_L>``."""
    proj = np.eye(32, dtype=complex)
    for g in FIVE_QUBIT_STABILIZERS:
        proj = proj @ (np.eye(32) + pauli(g)) / 2
    zero = proj[:, 0] / np.linalg.norm(proj[:, 0])
    one = pauli("XXXXX") @ zero
    return np.stack([zero, one], axis=1)


def five_qubit_t_protocol(lam: float = 0.05) -> MultiShotProtocol:
    """Five noisy T states projected onto the five-qubit code and decoded.

    The target is the normalized output on noiseless inputs.
    """
    V = five_qubit_code()
    src = noisy_t_state(lam)
    inl = tensor_power(src, 5).layout
    op = QuantumOp(inl, SystemLayout.of(("S_1", 2)), kraus=[V.conj().T], trace_class=NONINCREASING)
    clean = np.ones((1, 1), dtype=complex)
    for _ in range(5):
        clean = np.kron(clean, t_state())
    out = V.conj().T @ clean @ V
    sigma = State(out / np.trace(out).real, SystemLayout.of(("S", 2)))
    if not sigma.is_pure(1e-9):
        raise ProtocolError("noiseless output is not pure")
    sigma = State((sigma.matrix + sigma.matrix.conj().T) / 2, sigma.layout)
    fail = _orthogonal_complement_op(V, inl)
    proto = MultiShotProtocol(op, 5, 1, src, sigma, 0.0, 0.0, complement=fail,
                              name="five_qubit_t", params={"lam": lam},
                              free_state=basis_state(2, 0, "S"))
    return proto.with_measured()


def _orthogonal_complement_op(V: np.ndarray, inl: SystemLayout) -> QuantumOp:
    """Non-trivial syndromes: project each onto its 2-dim syndrome space and decode."""
    stabs = [pauli(g) for g in FIVE_QUBIT_STABILIZERS]
    kraus = []
    for signs in itertools.product((1, -1), repeat=4):
        if all(s == 1 for s in signs):
            continue
        # a Pauli error E with the given syndrome maps the code space onto this syndrome space
        for word in _error_words():
            E = pauli(word)
            if all(np.allclose(E @ g @ E.conj().T, s * g) for g, s in zip(stabs, signs)):
                kraus.append((E @ V).conj().T)
                break
    return QuantumOp(inl, SystemLayout.of(("S_1", 2)), kraus=kraus, trace_class=NONINCREASING)


def _error_words():
    for pos in range(5):
        for p in "XYZ":
            yield "I" * pos + p + "I" * (4 - pos)


# --------------------------------------------------------------------------
# synthetic


def synthetic_protocol(n: int = 5, m: int = 2, d: int = 2, rank: int = 2, seed: int = 0,
                       target_index: int = 0) -> MultiShotProtocol:
    """Random protocol: a random channel into ``S^m (x)`` flag, success on flag 0.

    ``rank`` is raised if needed so the Stinespring dilation is an isometry.

    The source is a random state, the target a pure basis state; (eps, p) are measured.
    """
    rng = np.random.default_rng(seed)
    din, dout = d**n, d**m
    check_dim(din, "synthetic protocol input")
    rank = max(rank, -(-din // (2 * dout)))
    ks = random_kraus(din, 2 * dout, rank, rng)
    succ = [K[0::2, :] for K in ks]
    fail = [K[1::2, :] for K in ks]
    g = rng.normal(size=(d, d)) + 1j * rng.normal(size=(d, d))
    src = State(g @ g.conj().T / np.trace(g @ g.conj().T).real, SystemLayout.of(("S", d)))
    target = basis_state(d, target_index, "S")
    inl = tensor_power(src, n).layout
    outl = tensor_power(target, m).layout
    proto = MultiShotProtocol(
        QuantumOp(inl, outl, kraus=succ, trace_class=NONINCREASING),
        n, m, src, target, 0.0, 0.0,
        complement=QuantumOp(inl, outl, kraus=fail, trace_class=NONINCREASING),
        name="synthetic", params={"n": n, "m": m, "d": d, "rank": rank, "seed": seed},
    )
    return proto.with_measured()


def identity_protocol(d: int = 2) -> MultiShotProtocol:
    """``n = m = 1``, ``L = id``, ``sigma = rho = |0><0|``."""
    src = basis_state(d, 0, "S")
    lay = tensor_power(src, 1).layout
    op = QuantumOp(lay, lay, kraus=[np.eye(d)])
    return MultiShotProtocol(op, 1, 1, src, src, 0.0, 1.0, name="identity", params={"d": d}).with_measured()


# --------------------------------------------------------------------------
# free sets


ENTANGLEMENT_PPT = "entanglement_ppt"
MAGIC_STABILIZER = "magic_stabilizer"
PPT_TOL = 1e-10
LP_TOL = 1e-9


@dataclass(frozen=True)
class FreeSetOracle:
    theory: str
    tol: float | None = None
    transpose_prefix: str = "B"

    def __post_init__(self):
        if self.theory not in (ENTANGLEMENT_PPT, MAGIC_STABILIZER):
            raise ValueError(f"unknown theory {self.theory!r}")


def partial_transpose(s: State, labels) -> np.ndarray:
    lay = s.layout
    n = len(lay)
    t = s.matrix.reshape(lay.dims + lay.dims)
    axes = list(range(2 * n))
    for lab in labels:
        i = lay.index(lab)
        axes[i], axes[i + n] = axes[i + n], axes[i]
    return t.transpose(axes).reshape(s.matrix.shape)


def is_ppt(s: State, labels=None, tol: float = PPT_TOL) -> bool:
    if labels is None:
        labels = [lab for lab in s.layout.labels if lab.startswith("B")]
    pt = partial_transpose(s, labels)
    return bool(np.linalg.eigvalsh((pt + pt.conj().T) / 2).min() >= -tol)


@lru_cache(maxsize=None)
def stabilizer_states(n_qubits: int) -> tuple[np.ndarray, ...]:
    """All pure stabilizer states on 1 or 2 qubits, as density matrices."""
    if n_qubits not in (1, 2):
        raise ValueError("stabilizer enumeration is limited to 1 or 2 qubits")
    words = ["".join(w) for w in itertools.product("IXYZ", repeat=n_qubits)][1:]
    dim = 2**n_qubits
    found: dict[bytes, np.ndarray] = {}
    for gens in itertools.combinations(words, n_qubits):
        mats = [pauli(g) for g in gens]
        if any(not np.allclose(a @ b, b @ a) for a, b in itertools.combinations(mats, 2)):
            continue
        for signs in itertools.product((1, -1), repeat=n_qubits):
            proj = np.eye(dim, dtype=complex)
            for s, g in zip(signs, mats):
                proj = proj @ (np.eye(dim) + s * g) / 2
            if abs(np.trace(proj).real - 1) > 1e-9:
                continue  # dependent generators
            key = np.round(proj, 9).tobytes()
            found.setdefault(key, proj)
    return tuple(found[k] for k in sorted(found))


def _pauli_coords(rho: np.ndarray, n_qubits: int) -> np.ndarray:
    words = ["".join(w) for w in itertools.product("IXYZ", repeat=n_qubits)]
    return np.array([np.trace(pauli(w) @ rho).real for w in words])


def in_stabilizer_polytope(rho: np.ndarray, tol: float = LP_TOL) -> bool:
    """LP: is ``rho`` a convex mixture of pure stabilizer states (max violation <= tol)?"""
    nq = int(round(np.log2(rho.shape[0])))
    if 2**nq != rho.shape[0] or nq not in (1, 2):
        raise ValueError("magic oracle supports one or two qubits only")
    verts = stabilizer_states(nq)
    A = np.stack([_pauli_coords(v, nq) for v in verts], axis=1)  # coords x vertices
    b = _pauli_coords(rho, nq)
    k, nv = A.shape
    # minimize t subject to |A w - b| <= t, w >= 0, sum w = 1
    c = np.zeros(nv + 1)
    c[-1] = 1.0
    A_ub = np.block([[A, -np.ones((k, 1))], [-A, -np.ones((k, 1))]])
    b_ub = np.concatenate([b, -b])
    A_eq = np.concatenate([np.ones(nv), [0.0]])[None, :]
    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=[1.0], bounds=[(0, None)] * (nv + 1),
                  method="highs")
    if not res.success:
        raise RuntimeError(f"stabilizer LP failed: {res.message}")
    return bool(res.fun <= tol)


def max_stabilizer_fidelity(rho: np.ndarray) -> float:
    nq = int(round(np.log2(rho.shape[0])))
    return max(float(np.trace(v @ rho).real) for v in stabilizer_states(nq))


def free_membership(o: FreeSetOracle, s: State) -> bool:
    if o.theory == ENTANGLEMENT_PPT:
        return is_ppt(s, [lab for lab in s.layout.labels if lab.startswith(o.transpose_prefix)],
                      o.tol if o.tol is not None else PPT_TOL)
    return in_stabilizer_polytope(s.matrix, o.tol if o.tol is not None else LP_TOL)


# --------------------------------------------------------------------------
# registry


def _recurrence(f=0.85, copies=1):
    return product_protocol(recurrence_protocol(float(f)), int(copies))


def _recurrence_det(f=0.85, copies=2):
    return product_protocol(recurrence_protocol(float(f)).deterministic(), int(copies))


def _five(lam=0.05):
    return five_qubit_t_protocol(float(lam))


def _synthetic(n=5, m=2, d=2, rank=2, seed=0):
    return synthetic_protocol(int(n), int(m), int(d), int(rank), int(seed))


def _identity(d=2):
    return identity_protocol(int(d))


REGISTRY = {
    "identity": (_identity, "n=m=1 identity map on |0>; eps=0, p=1", None),
    "recurrence": (_recurrence, "two-pair recurrence distillation of isotropic pairs (f, copies)", ENTANGLEMENT_PPT),
    "recurrence_deterministic": (_recurrence_det, "recurrence with failures kept, trace preserving (f, copies)", ENTANGLEMENT_PPT),
    "five_qubit_t": (_five, "five-qubit-code T-state distillation (lam)", MAGIC_STABILIZER),
    "synthetic": (_synthetic, "random flagged channel S^n -> S^m (n, m, d, rank, seed)", None),
}


class UnknownProtocolError(KeyError):
    pass


def get_protocol(key: str, **params) -> MultiShotProtocol:
    try:
        factory = REGISTRY[key][0]
    except KeyError:
        raise UnknownProtocolError(f"unknown protocol {key!r}") from None
    return factory(**params)


__all__ = [
    "FreeSetOracle",
    "MultiShotProtocol",
    "REGISTRY",
    "free_membership",
    "five_qubit_t_protocol",
    "get_protocol",
    "identity_protocol",
    "isotropic_state",
    "product_protocol",
    "recurrence_protocol",
    "synthetic_protocol",
]
