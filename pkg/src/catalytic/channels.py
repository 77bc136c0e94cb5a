"""Completely positive maps in Kraus / Choi form and their combinators.

A :class:`QuantumOp` is either *primitive* (Kraus operators and/or a Choi
matrix) or *structured*: a composition, tensor product, ancilla append,
partial trace or subsystem permutation of other ops.  Structured ops are
applied piece by piece, so maps whose Kraus lists or Choi matrices would
blow past the dimension cap can still be applied to states.  ``kraus`` and
``choi`` are materialized lazily for any op small enough.

Choi convention: ``J(N) = sum_ij |i><j| (x) N(|i><j|)`` with the input factor
first and no normalization, so ``tr J = d_in`` for channels.
"""

from __future__ import annotations

from functools import cached_property
from math import prod
from typing import Iterable, Sequence

import numpy as np

from .states import NORMALIZED, SUBNORMALIZED, Branch, FlaggedEnsemble, State, maximally_mixed
from .tensor import (
    LayoutError,
    SystemLayout,
    check_dim,
    dagger,
    herm_eig,
    kron_all,
    partial_trace,
    permute_subsystems,
    trace_norm,
)

PRESERVING = "preserving"
NONINCREASING = "nonincreasing"

CHOI_PSD_TOL = 1e-10
TP_TOL = 1e-9
KRAUS_CUTOFF = 1e-12


class ChannelError(ValueError):
    pass


def _layout(x) -> SystemLayout:
    if isinstance(x, SystemLayout):
        return x
    if isinstance(x, int):
        return SystemLayout.of(("q", x))
    return SystemLayout(tuple(x))


def _act_kraus(kraus: Sequence[np.ndarray], x: np.ndarray, left: int, right: int) -> np.ndarray:
    """``sum_K (I_l (x) K (x) I_r) x (...)^dagger`` without forming the big Kraus."""
    dout, din = kraus[0].shape
    if left == 1 and right == 1:
        out = np.zeros((dout, dout), dtype=np.complex128)
        for K in kraus:
            out += K @ x @ dagger(K)
        return out
    X = x.reshape(left, din, right, left, din, right)
    out = np.zeros((left, dout, right, left, dout, right), dtype=np.complex128)
    for K in kraus:
        T = np.tensordot(K, X, axes=([1], [1]))  # a, l, r, l', c, r'
        T = np.tensordot(T, K.conj(), axes=([4], [1]))  # a, l, r, l', r', d
        out += T.transpose(1, 0, 2, 3, 5, 4)
    n = left * dout * right
    return out.reshape(n, n)


class QuantumOp:
    """A completely positive, trace-preserving or trace-nonincreasing map."""

    def __init__(
        self,
        in_layout,
        out_layout,
        *,
        kraus: Iterable | None = None,
        choi=None,
        trace_class: str = PRESERVING,
        check: bool = True,
        _kind: str | None = None,
        _parts: tuple = (),
    ):
        self.in_layout = _layout(in_layout)
        self.out_layout = _layout(out_layout)
        if trace_class not in (PRESERVING, NONINCREASING):
            raise ChannelError(f"unknown trace class {trace_class!r}")
        self.trace_class = trace_class
        self._parts = _parts
        self._kraus = None
        self._choi = None
        if _kind is not None:
            self._kind = _kind
            return
        if kraus is None and choi is None:
            raise ChannelError("a primitive QuantumOp needs Kraus operators or a Choi matrix")
        self._kind = "primitive"
        din, dout = self.in_dim, self.out_dim
        if kraus is not None:
            ks = [np.asarray(K, dtype=np.complex128) for K in kraus]
            for K in ks:
                if K.shape != (dout, din):
                    raise LayoutError(f"Kraus operator shape {K.shape} != ({dout}, {din})")
            if not ks:
                ks = [np.zeros((dout, din), dtype=np.complex128)]
            self._kraus = ks
        if choi is not None:
            J = np.asarray(choi, dtype=np.complex128)
            if J.shape != (din * dout,) * 2:
                raise LayoutError(f"Choi shape {J.shape} != {(din * dout,) * 2}")
            self._choi = J
        if check:
            self.validate()

    # -- basic properties ---------------------------------------------------

    @property
    def in_dim(self) -> int:
        return self.in_layout.total_dim

    @property
    def out_dim(self) -> int:
        return self.out_layout.total_dim

    @property
    def is_structured(self) -> bool:
        return self._kind != "primitive"

    def __repr__(self) -> str:
        return (
            f"QuantumOp({self._kind}, {self.in_layout.dims}->{self.out_layout.dims}, "
            f"{self.trace_class})"
        )

    @property
    def kraus(self) -> list[np.ndarray]:
        if self._kraus is None:
            self._kraus = self._build_kraus()
        return self._kraus

    @property
    def choi(self) -> np.ndarray:
        if self._choi is None:
            check_dim(self.in_dim * self.out_dim, "Choi matrix")
            J = np.zeros((self.in_dim * self.out_dim,) * 2, dtype=np.complex128)
            for K in self.kraus:
                v = K.T.reshape(-1)
                J += np.outer(v, v.conj())
            self._choi = J
        return self._choi

    @cached_property
    def choi_layout(self) -> SystemLayout:
        return self.in_layout.relabel([f"in:{x}" for x in self.in_layout.labels]) + (
            self.out_layout.relabel([f"out:{x}" for x in self.out_layout.labels])
        )

    def _build_kraus(self) -> list[np.ndarray]:
        kind, parts = self._kind, self._parts
        if kind == "primitive":
            w, v = herm_eig(self._choi, tol=1e-9)
            out = []
            for lam, vec in zip(w[::-1], v.T[::-1]):
                if lam <= KRAUS_CUTOFF:
                    break
                out.append(np.sqrt(lam) * vec.reshape(self.in_dim, self.out_dim).T)
            return out or [np.zeros((self.out_dim, self.in_dim), dtype=np.complex128)]
        check_dim(max(self.in_dim, self.out_dim), "Kraus operator")
        if kind == "compose":
            ks = [np.eye(self.in_dim, dtype=np.complex128)]
            for op in parts:
                ks = [B @ A for A in ks for B in op.kraus]
            return ks
        if kind == "tensor":
            ks = [np.ones((1, 1), dtype=np.complex128)]
            for op in parts:
                ks = [np.kron(A, B) for A in ks for B in op.kraus]
            return ks
        if kind == "append":
            (state,) = parts
            w, v = herm_eig(state.matrix)
            eye = np.eye(self.in_dim)
            return [
                np.kron(eye, np.sqrt(lam) * vec.reshape(-1, 1))
                for lam, vec in zip(w, v.T)
                if lam > KRAUS_CUTOFF
            ]
        if kind == "discard":
            (keep,) = parts
            dims = self.in_layout.dims
            tr_idx = [i for i in range(len(dims)) if i not in keep]
            order = list(keep) + tr_idx
            P = _permutation_matrix(dims, order)
            dk = prod(dims[i] for i in keep)
            dt = prod(dims[i] for i in tr_idx)
            eye = np.eye(dk)
            return [np.kron(eye, np.eye(dt)[j : j + 1, :]) @ P for j in range(dt)]
        if kind == "permute":
            (order,) = parts
            return [_permutation_matrix(self.in_layout.dims, order)]
        if kind == "scale":
            factor, op = parts
            return [np.sqrt(factor) * K for K in op.kraus]
        raise ChannelError(f"unknown op kind {kind}")

    def validate(self) -> None:
        if self._kraus is not None:
            E = sum(dagger(K) @ K for K in self._kraus)
            self._check_effect(E)
        if self._choi is not None:
            J = self._choi
            if float(np.max(np.abs(J - dagger(J)))) > 1e-9:
                raise ChannelError("Choi matrix is not Hermitian")
            w = np.linalg.eigvalsh((J + dagger(J)) / 2)
            if w.min() < -CHOI_PSD_TOL * max(1.0, w.max()):
                raise ChannelError(f"Choi matrix is not PSD (min eigenvalue {w.min():.2e})")
            E = partial_trace(J, self.choi_layout, [f"in:{x}" for x in self.in_layout.labels])
            # tr_out J is the transpose of sum K^dagger K
            self._check_effect(E.T)
        if self._kraus is not None and self._choi is not None:
            J2 = np.zeros_like(self._choi)
            for K in self._kraus:
                v = K.T.reshape(-1)
                J2 += np.outer(v, v.conj())
            if float(np.max(np.abs(J2 - self._choi))) > TP_TOL:
                raise ChannelError("Kraus and Choi forms disagree")

    def _check_effect(self, E: np.ndarray) -> None:
        eye = np.eye(self.in_dim)
        if self.trace_class == PRESERVING:
            dev = float(np.max(np.abs(E - eye), initial=0.0))
            if dev > TP_TOL:
                raise ChannelError(f"map is not trace preserving (deviation {dev:.2e})")
        else:
            w = np.linalg.eigvalsh((E + dagger(E)) / 2)
            if w.size and w.max() > 1 + TP_TOL:
                raise ChannelError(f"map is trace increasing (max effect eigenvalue {w.max():.6f})")

    # -- application ----------------------------------------------------------

    def act(self, x: np.ndarray, left: int = 1, right: int = 1) -> np.ndarray:
        """Apply to the middle factor of a ``left (x) in (x) right`` matrix."""
        kind, parts = self._kind, self._parts
        if kind == "primitive":
            return _act_kraus(self.kraus, x, left, right)
        if kind == "compose":
            for op in parts:
                x = op.act(x, left, right)
            return x
        if kind == "tensor":
            rest = self.in_dim
            done = 1
            for op in parts:
                rest //= op.in_dim
                x = op.act(x, left * done, rest * right)
                done *= op.out_dim
            return x
        if kind == "append":
            (state,) = parts
            d, s = self.in_dim, state.dim
            X = x.reshape(left * d, right, left * d, right)
            out = np.einsum("arbs,ij->airbjs", X, state.matrix)
            n = left * d * s * right
            return out.reshape(n, n)
        if kind == "discard":
            (keep,) = parts
            layout = SystemLayout.of(("_l", left)) + self.in_layout + SystemLayout.of(("_r", right))
            labels = ["_l"] + [self.in_layout.labels[i] for i in keep] + ["_r"]
            return partial_trace(x, layout, labels)
        if kind == "permute":
            (order,) = parts
            if list(order) == list(range(len(order))):
                return x
            layout = SystemLayout.of(("_l", left)) + self.in_layout + SystemLayout.of(("_r", right))
            full = [0] + [i + 1 for i in order] + [len(self.in_layout) + 1]
            return permute_subsystems(x, layout, full)
        if kind == "scale":
            factor, op = parts
            return factor * op.act(x, left, right)
        raise ChannelError(f"unknown op kind {kind}")

    def adjoint(self, y: np.ndarray) -> np.ndarray:
        """Heisenberg picture ``sum_K K^dagger y K``."""
        return sum(dagger(K) @ y @ K for K in self.kraus)

    def __call__(self, s: State) -> State:
        return apply(self, s)

    # -- serialization ------------------------------------------------------

    def to_json(self) -> dict:
        flat = self.choi.reshape(-1)
        return {
            "in_layout": self.in_layout.to_json(),
            "out_layout": self.out_layout.to_json(),
            "trace_class": self.trace_class,
            "choi": [[float(z.real), float(z.imag)] for z in flat],
        }

    @classmethod
    def from_json(cls, data: dict) -> "QuantumOp":
        inl = SystemLayout.from_json(data["in_layout"])
        outl = SystemLayout.from_json(data["out_layout"])
        ent = np.asarray(data["choi"], dtype=np.float64)
        n = inl.total_dim * outl.total_dim
        J = (ent[:, 0] + 1j * ent[:, 1]).reshape(n, n)
        return cls(inl, outl, choi=J, trace_class=data["trace_class"])


def _permutation_matrix(dims: Sequence[int], order: Sequence[int]) -> np.ndarray:
    d = prod(dims)
    idx = np.arange(d).reshape(tuple(dims) or (1,)).transpose(list(order)).reshape(-1)
    P = np.zeros((d, d), dtype=np.complex128)
    P[np.arange(d), idx] = 1.0
    return P


# ---------------------------------------------------------------------------
# constructors


def from_kraus(kraus, in_layout=None, out_layout=None, trace_class=None) -> QuantumOp:
    ks = [np.asarray(K, dtype=np.complex128) for K in kraus]
    dout, din = ks[0].shape
    in_layout = _layout(in_layout if in_layout is not None else SystemLayout.of(("A", din)))
    out_layout = _layout(out_layout if out_layout is not None else SystemLayout.of(("B", dout)))
    if trace_class is None:
        E = sum(dagger(K) @ K for K in ks)
        trace_class = PRESERVING if np.allclose(E, np.eye(din), atol=TP_TOL) else NONINCREASING
    return QuantumOp(in_layout, out_layout, kraus=ks, trace_class=trace_class)


def from_choi(choi, in_layout, out_layout, trace_class=PRESERVING) -> QuantumOp:
    return QuantumOp(in_layout, out_layout, choi=choi, trace_class=trace_class)


def identity_channel(layout) -> QuantumOp:
    layout = _layout(layout)
    return permutation(layout, range(len(layout)))


def unitary_channel(U, layout=None) -> QuantumOp:
    U = np.asarray(U, dtype=np.complex128)
    layout = _layout(layout if layout is not None else U.shape[0])
    return QuantumOp(layout, layout, kraus=[U])


def depolarizing(lam: float, dim: int = 2, layout=None) -> QuantumOp:
    """``(1 - lam) rho + lam tr(rho) I/d``."""
    if not 0 <= lam <= 1 + 1e-12:
        raise ChannelError("depolarizing parameter must lie in [0, 1]")
    layout = _layout(layout if layout is not None else dim)
    d = layout.total_dim
    eye = np.eye(d)
    choi = (1 - lam) * np.outer(eye.reshape(-1), eye.reshape(-1)) + lam * np.eye(d * d) / d
    return QuantumOp(layout, layout, choi=choi)


def dephasing(p: float = 1.0, dim: int = 2, layout=None) -> QuantumOp:
    """Keep coherences with weight ``1 - p`` (``p = 1``: full computational-basis dephasing)."""
    layout = _layout(layout if layout is not None else dim)
    d = layout.total_dim
    kraus = [np.sqrt(1 - p) * np.eye(d)] if p < 1 else []
    for i in range(d):
        P = np.zeros((d, d))
        P[i, i] = 1.0
        kraus.append(np.sqrt(p) * P)
    return QuantumOp(layout, layout, kraus=kraus)


def replacer(in_layout, state: State) -> QuantumOp:
    """Trace-and-replace ``rho -> tr(rho) state``."""
    in_layout = _layout(in_layout)
    din = in_layout.total_dim
    w, v = herm_eig(state.matrix)
    kraus = []
    for lam, vec in zip(w, v.T):
        if lam > KRAUS_CUTOFF:
            for j in range(din):
                K = np.zeros((state.dim, din), dtype=np.complex128)
                K[:, j] = np.sqrt(lam) * vec
                kraus.append(K)
    return QuantumOp(in_layout, state.layout, kraus=kraus)


def swap_channel(dim: int = 2) -> QuantumOp:
    layout = SystemLayout.of(("A1", dim), ("A2", dim))
    out = SystemLayout.of(("B1", dim), ("B2", dim))
    return QuantumOp(layout, out, kraus=[_permutation_matrix((dim, dim), (1, 0))])


def random_kraus(din: int, dout: int, rank: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Kraus operators of a random CPTP map from a random Stinespring isometry."""
    if dout * rank < din:
        raise ChannelError(f"rank {rank} too small for an isometry {din} -> {dout} x {rank}")
    G = rng.normal(size=(dout * rank, din)) + 1j * rng.normal(size=(dout * rank, din))
    Q, _ = np.linalg.qr(G)
    return [Q[j * dout : (j + 1) * dout, :] for j in range(rank)]


def random_channel(din: int = 2, dout: int | None = None, rank: int = 2, rng=None,
                   in_layout=None, out_layout=None) -> QuantumOp:
    rng = np.random.default_rng(rng)
    dout = din if dout is None else dout
    ks = random_kraus(din, dout, rank, rng)
    return QuantumOp(
        _layout(in_layout if in_layout is not None else SystemLayout.of(("A", din))),
        _layout(out_layout if out_layout is not None else SystemLayout.of(("B", dout))),
        kraus=ks,
    )


# ---------------------------------------------------------------------------
# structured combinators


def compose(a: QuantumOp, b: QuantumOp) -> QuantumOp:
    """``a o b``: apply ``b`` first."""
    if b.out_layout.dims != a.in_layout.dims:
        raise LayoutError(f"cannot compose: {b.out_layout.dims} feeds {a.in_layout.dims}")
    tc = PRESERVING if a.trace_class == b.trace_class == PRESERVING else NONINCREASING
    seq = []
    for op in (b, a):
        seq.extend(op._parts if op._kind == "compose" else (op,))
    return QuantumOp(b.in_layout, a.out_layout, trace_class=tc, _kind="compose", _parts=tuple(seq))


def sequence(*ops: QuantumOp) -> QuantumOp:
    """Apply ``ops`` left to right."""
    out = ops[0]
    for op in ops[1:]:
        out = compose(op, out)
    return out


def tensor(*ops: QuantumOp) -> QuantumOp:
    inl = SystemLayout()
    outl = SystemLayout()
    for op in ops:
        inl = inl + op.in_layout
        outl = outl + op.out_layout
    tc = PRESERVING if all(op.trace_class == PRESERVING for op in ops) else NONINCREASING
    return QuantumOp(inl, outl, trace_class=tc, _kind="tensor", _parts=tuple(ops))


def append_state(in_layout, state: State) -> QuantumOp:
    """``rho -> rho (x) state`` (state appended after the input)."""
    in_layout = _layout(in_layout)
    if state.norm_class != NORMALIZED:
        raise ChannelError("appended state must be normalized")
    return QuantumOp(in_layout, in_layout + state.layout, _kind="append", _parts=(state,))


def discard(in_layout, keep: Iterable[str]) -> QuantumOp:
    """Partial trace keeping the labels in ``keep`` (in layout order)."""
    in_layout = _layout(in_layout)
    keep = set(keep)
    idx = tuple(i for i, lab in enumerate(in_layout.labels) if lab in keep)
    return QuantumOp(in_layout, in_layout.select(keep), _kind="discard", _parts=(idx,))


def permutation(in_layout, order: Sequence[int]) -> QuantumOp:
    """Subsystem reordering: output subsystem ``j`` is input subsystem ``order[j]``."""
    in_layout = _layout(in_layout)
    order = list(order)
    if sorted(order) != list(range(len(in_layout))):
        raise ChannelError(f"{order} is not a permutation")
    return QuantumOp(
        in_layout, in_layout.permuted(order), _kind="permute", _parts=(tuple(order),)
    )


def relabeled(op: QuantumOp, in_layout=None, out_layout=None) -> QuantumOp:
    """Same map viewed on layouts with equal dims but different labels."""
    inl = _layout(in_layout) if in_layout is not None else op.in_layout
    outl = _layout(out_layout) if out_layout is not None else op.out_layout
    if inl.dims != op.in_layout.dims or outl.dims != op.out_layout.dims:
        raise LayoutError("relabeling must keep subsystem dimensions")
    new = QuantumOp(inl, outl, trace_class=op.trace_class, _kind=op._kind, _parts=op._parts)
    new._kraus, new._choi = op._kraus, op._choi
    return new


def scaled(op: QuantumOp, factor: float) -> QuantumOp:
    """``factor * op``; the result may be trace increasing and is never validated."""
    return QuantumOp(
        op.in_layout, op.out_layout, trace_class=NONINCREASING, _kind="scale", _parts=(factor, op)
    )


# ---------------------------------------------------------------------------
# application


def apply(op: QuantumOp, s: State, on: Sequence[str] | None = None,
          out_labels: Sequence[str] | None = None) -> State:
    """Apply ``op`` to ``s`` (or to the subsystems ``on`` of ``s``).

    With ``on``, those subsystems are first brought together in the given
    order; the output subsystems take their place.
    """
    if on is None:
        if s.layout.dims != op.in_layout.dims:
            raise LayoutError(f"state dims {s.layout.dims} != op input dims {op.in_layout.dims}")
        out = op.act(s.matrix)
        layout = op.out_layout if out_labels is None else op.out_layout.relabel(out_labels)
        return State(out, layout, _out_class(op, s), check=False)
    on = list(on)
    idx = [s.layout.index(lab) for lab in on]
    if [s.layout.dims[i] for i in idx] != list(op.in_layout.dims):
        raise LayoutError(f"subsystems {on} do not match op input dims {op.in_layout.dims}")
    first = min(idx)
    rest = [i for i in range(len(s.layout)) if i not in idx]
    before = [i for i in rest if i < first]
    after = [i for i in rest if i > first]
    order = before + idx + after
    if order != list(range(len(s.layout))):
        s = s.permute(order)
    left = prod(s.layout.dims[: len(before)])
    right = prod(s.layout.dims[len(before) + len(idx) :])
    out = op.act(s.matrix, left, right)
    outl = op.out_layout if out_labels is None else op.out_layout.relabel(out_labels)
    layout = (
        SystemLayout(s.layout.subsystems[: len(before)])
        + outl
        + SystemLayout(s.layout.subsystems[len(before) + len(idx) :])
    )
    check_dim(layout.total_dim, "output state")
    return State(out, layout, _out_class(op, s), check=False)


def _out_class(op: QuantumOp, s: State) -> str:
    if op.trace_class == PRESERVING and s.norm_class == NORMALIZED:
        return NORMALIZED
    return SUBNORMALIZED


class ControlledOp:
    """Classically controlled map ``sum_i scaling_i op_i (x) |i><i|``.

    ``physical_scale`` is the largest factor by which the whole map can be
    multiplied and stay trace-nonincreasing; the physical success weight of an
    application is ``physical_scale`` times the total output weight.
    """

    def __init__(self, cases: dict[int, QuantumOp], scaling: dict[int, float] | None = None):
        self.cases = dict(cases)
        self.scaling = {lab: 1.0 for lab in self.cases}
        if scaling:
            self.scaling.update(scaling)
        dims = {(op.in_dim, op.out_dim) for op in self.cases.values()}
        if len(dims) > 1:
            raise LayoutError(f"controlled cases have inconsistent dimensions {dims}")

    @property
    def physical_scale(self) -> float:
        return min(1.0, 1.0 / max(self.scaling.values()))


def apply_controlled(c: ControlledOp, e: FlaggedEnsemble,
                     on: Sequence[str] | None = None) -> FlaggedEnsemble:
    """Apply case ``i`` (times its scaling) to the branch labelled ``i``.

    Output bodies are renormalized and the branch weight absorbs the trace.
    """
    out = []
    for b in e.branches:
        if b.label not in c.cases:
            raise ChannelError(f"no case for branch label {b.label}")
        body = apply(c.cases[b.label], b.body, on=on)
        tr = body.trace * c.scaling[b.label]
        if tr > 0:
            body = State(body.matrix / body.trace, body.layout, NORMALIZED, check=False)
        out.append(Branch(b.weight * max(tr, 0.0), body, b.label))
    return FlaggedEnsemble(tuple(out))


# ---------------------------------------------------------------------------
# reduced channels and signaling


def reduced_channel(n: QuantumOp, keep_in: Sequence[str], keep_out: Sequence[str],
                    pi: State | None = None) -> QuantumOp:
    """``N^pi(x) = tr_{discarded out} N(x (x) pi)`` with ``pi`` on the discarded inputs."""
    keep_in, keep_out = set(keep_in), set(keep_out)
    il, ol = n.in_layout, n.out_layout
    for lab in keep_in:
        il.index(lab)
    for lab in keep_out:
        ol.index(lab)
    ki = [i for i, lab in enumerate(il.labels) if lab in keep_in]
    di = [i for i, lab in enumerate(il.labels) if lab not in keep_in]
    ko = [i for i, lab in enumerate(ol.labels) if lab in keep_out]
    do = [i for i, lab in enumerate(ol.labels) if lab not in keep_out]
    drop_in = SystemLayout(tuple(il.subsystems[i] for i in di))
    if pi is None:
        pi = maximally_mixed(drop_in)
    if pi.layout.dims != drop_in.dims:
        raise LayoutError(f"reference state dims {pi.layout.dims} != discarded inputs {drop_in.dims}")
    if abs(pi.trace - 1) > 1e-10:
        raise ChannelError("reference state must be normalized")
    nin = len(il)
    J = permute_subsystems(n.choi, n.choi_layout, ki + di + [nin + i for i in ko + do])
    d_ki = prod(il.dims[i] for i in ki)
    d_di = prod(il.dims[i] for i in di)
    d_ko = prod(ol.dims[i] for i in ko)
    d_do = prod(ol.dims[i] for i in do)
    T = J.reshape(d_ki, d_di, d_ko, d_do, d_ki, d_di, d_ko, d_do)
    Jr = np.einsum("afcdebgd,fb->aceg", T, pi.matrix).reshape(d_ki * d_ko, d_ki * d_ko)
    return QuantumOp(
        il.select(keep_in), ol.select(keep_out), choi=Jr, trace_class=n.trace_class, check=False
    )


def trace_then(op: QuantumOp, in_layout: SystemLayout, keep: Sequence[str]) -> np.ndarray:
    """Choi of ``x -> op(tr_{not keep} x)`` on ``in_layout``."""
    keep = set(keep)
    ki = [i for i, lab in enumerate(in_layout.labels) if lab in keep]
    di = [i for i, lab in enumerate(in_layout.labels) if lab not in keep]
    d_di = prod(in_layout.dims[i] for i in di)
    # the trace map has Choi matrix I; layout here is [kept_in, out, dropped_in]
    J = np.kron(op.choi, np.eye(d_di))
    lay = (
        SystemLayout.of(("ki", op.in_dim), ("o", op.out_dim), ("di", d_di))
    )
    J = permute_subsystems(J, lay, [0, 2, 1])
    # now [kept_in, dropped_in, out]; restore the original input order
    sub = SystemLayout(tuple(in_layout.subsystems[i] for i in ki + di)) + SystemLayout.of(
        ("o", op.out_dim)
    )
    pos = ki + di
    order = [pos.index(i) for i in range(len(in_layout))] + [len(in_layout)]
    return permute_subsystems(J, sub, order)


def is_non_signaling(n: QuantumOp, partition: tuple[Sequence[str], Sequence[str]],
                     tol: float = 1e-9, pi: State | None = None) -> bool:
    """Whether the discarded inputs cannot signal to the kept outputs.

    ``partition = (keep_in, keep_out)``.  Compares ``tr_{B2} o N`` with
    ``tr_{B2} o N o R^pi_{A2}`` via half the trace norm of the Choi difference,
    which upper-bounds their diamond distance.
    """
    keep_in, keep_out = partition
    ol = n.out_layout
    J = n.choi
    keep_choi = [f"in:{x}" for x in n.in_layout.labels] + [f"out:{x}" for x in ol.labels if x in set(keep_out)]
    lhs = partial_trace(J, n.choi_layout, keep_choi)
    red = reduced_channel(n, keep_in, keep_out, pi)
    rhs = trace_then(red, n.in_layout, keep_in)
    return 0.5 * trace_norm(lhs - rhs) <= tol
