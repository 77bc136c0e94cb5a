"""Density operators, classically flagged ensembles and the embedding maps."""

from __future__ import annotations

from dataclasses import dataclass, field
from math import prod
from typing import Iterable, Sequence

import numpy as np

from .tensor import (
    HERMITIAN_TOL,
    LayoutError,
    SystemLayout,
    as_matrix,
    check_dim,
    kron,
    partial_trace,
    permute_subsystems,
    trace_norm,
)

PSD_TOL = 1e-10
TRACE_TOL = 1e-10

NORMALIZED = "normalized"
SUBNORMALIZED = "subnormalized"


class StateError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class State:
    """A (possibly subnormalized) density operator on a labelled layout.

    Construction validates PSD-ness and the trace.  Pass ``check=False`` for
    matrices produced internally by trusted maps; large bodies would otherwise
    pay for a full eigendecomposition on every step.
    """

    matrix: np.ndarray
    layout: SystemLayout
    norm_class: str = NORMALIZED
    check: bool = field(default=True, repr=False)

    def __post_init__(self):
        m = as_matrix(self.matrix)
        object.__setattr__(self, "matrix", m)
        if not isinstance(self.layout, SystemLayout):
            object.__setattr__(self, "layout", SystemLayout(tuple(self.layout)))
        check_dim(self.layout.total_dim, "state")
        if m.shape != (self.layout.total_dim,) * 2:
            raise LayoutError(f"matrix shape {m.shape} does not match layout {self.layout}")
        if self.norm_class not in (NORMALIZED, SUBNORMALIZED):
            raise StateError(f"unknown norm class {self.norm_class!r}")
        if self.check:
            self.validate()

    def validate(self) -> None:
        m = self.matrix
        off = float(np.max(np.abs(m - m.conj().T), initial=0.0))
        if off > HERMITIAN_TOL:
            raise StateError(f"state is not Hermitian (asymmetry {off:.2e})")
        w = np.linalg.eigvalsh((m + m.conj().T) / 2)
        if w.size and w.min() < -PSD_TOL:
            raise StateError(f"state is not PSD (min eigenvalue {w.min():.2e})")
        tr = self.trace
        if self.norm_class == NORMALIZED and abs(tr - 1) > TRACE_TOL:
            raise StateError(f"normalized state has trace {tr!r}")
        if self.norm_class == SUBNORMALIZED and not (-TRACE_TOL <= tr <= 1 + TRACE_TOL):
            raise StateError(f"subnormalized state has trace {tr!r}")

    @property
    def dim(self) -> int:
        return self.layout.total_dim

    @property
    def trace(self) -> float:
        return float(np.trace(self.matrix).real)

    def normalized(self) -> "State":
        tr = self.trace
        if tr <= 0:
            raise StateError("cannot normalize a zero-trace state")
        return State(self.matrix / tr, self.layout, NORMALIZED, check=False)

    def tensor(self, other: "State") -> "State":
        cls = NORMALIZED if (self.norm_class == other.norm_class == NORMALIZED) else SUBNORMALIZED
        return State(kron(self.matrix, other.matrix), self.layout + other.layout, cls, check=False)

    def marginal(self, keep: Iterable[str]) -> "State":
        keep = list(keep)
        return State(
            partial_trace(self.matrix, self.layout, keep),
            self.layout.select(keep),
            self.norm_class,
            check=False,
        )

    def permute(self, order: Sequence[int]) -> "State":
        return State(
            permute_subsystems(self.matrix, self.layout, order),
            self.layout.permuted(order),
            self.norm_class,
            check=False,
        )

    def relabel(self, labels: Sequence[str]) -> "State":
        return State(self.matrix, self.layout.relabel(labels), self.norm_class, check=False)

    def with_layout(self, layout: SystemLayout) -> "State":
        """Reinterpret the same matrix under a layout of equal total dimension."""
        if layout.total_dim != self.dim:
            raise LayoutError("new layout must have the same total dimension")
        return State(self.matrix, layout, self.norm_class, check=False)

    def is_pure(self, tol: float = 1e-10) -> bool:
        w = np.linalg.eigvalsh((self.matrix + self.matrix.conj().T) / 2)
        return abs(self.trace - 1) <= tol and abs(w[-1] - 1) <= tol

    def to_json(self) -> dict:
        flat = self.matrix.reshape(-1)
        return {
            "layout": self.layout.to_json(),
            "norm_class": self.norm_class,
            "entries": [[float(z.real), float(z.imag)] for z in flat],
        }

    @classmethod
    def from_json(cls, data: dict, check: bool = True) -> "State":
        layout = SystemLayout.from_json(data["layout"])
        ent = np.asarray(data["entries"], dtype=np.float64)
        mat = (ent[:, 0] + 1j * ent[:, 1]).reshape(layout.total_dim, layout.total_dim)
        return cls(mat, layout, data.get("norm_class", NORMALIZED), check=check)


def pure_state(vec, layout: SystemLayout | None = None, label: str = "S") -> State:
    v = np.asarray(vec, dtype=np.complex128).reshape(-1)
    v = v / np.linalg.norm(v)
    if layout is None:
        layout = SystemLayout.of((label, v.size))
    return State(np.outer(v, v.conj()), layout)


def maximally_mixed(layout: SystemLayout) -> State:
    d = layout.total_dim
    return State(np.eye(d, dtype=np.complex128) / d, layout)


def basis_state(dim: int, index: int = 0, label: str = "S") -> State:
    m = np.zeros((dim, dim), dtype=np.complex128)
    m[index, index] = 1.0
    return State(m, SystemLayout.of((label, dim)))


def tensor_power(s: State, copies: int, suffix: str = "_") -> State:
    """``s`` tensored ``copies`` times; copy ``j`` gets labels ``<label><suffix><j>``."""
    if copies < 0:
        raise ValueError("copies must be non-negative")
    out = State(np.ones((1, 1)), SystemLayout(), s.norm_class, check=False)
    for j in range(copies):
        out = out.tensor(s.relabel([f"{lab}{suffix}{j + 1}" for lab in s.layout.labels]))
    return out


def trace_distance(a: State | np.ndarray, b: State | np.ndarray) -> float:
    """Half the trace norm of ``a - b``."""
    ma = a.matrix if isinstance(a, State) else as_matrix(a)
    mb = b.matrix if isinstance(b, State) else as_matrix(b)
    if ma.shape != mb.shape:
        raise LayoutError(f"dimension mismatch {ma.shape} vs {mb.shape}")
    return 0.5 * trace_norm(ma - mb)


# --------------------------------------------------------------------------
# embeddings


APPEND_FREE = "append_free"
ORTHOGONAL_DIRECT_SUM = "orthogonal_direct_sum"


@dataclass(frozen=True, eq=False)
class EmbeddingSpec:
    kind: str
    free_state: State | None = None
    extra_dim: int = 1

    def __post_init__(self):
        if self.kind == APPEND_FREE:
            if self.free_state is None or self.free_state.norm_class != NORMALIZED:
                raise StateError("append_free embedding needs a normalized free state")
        elif self.kind == ORTHOGONAL_DIRECT_SUM:
            if self.extra_dim < 1:
                raise StateError("orthogonal_direct_sum needs extra_dim >= 1")
        else:
            raise StateError(f"unknown embedding kind {self.kind!r}")


def embed_append(s: State, spec: EmbeddingSpec, copies: int) -> State:
    """``s`` followed by ``copies`` copies of the free state."""
    if spec.kind != APPEND_FREE:
        raise StateError("embed_append needs an append_free spec")
    if copies == 0:
        return s
    pad = tensor_power(spec.free_state, copies, suffix="~e")
    return s.tensor(pad)


def embed_orthogonal(s: State, spec: EmbeddingSpec, label: str = "T") -> State:
    """Place ``s`` in the leading block of a space enlarged by ``extra_dim``."""
    if spec.kind != ORTHOGONAL_DIRECT_SUM:
        raise StateError("embed_orthogonal needs an orthogonal_direct_sum spec")
    d = s.dim
    out = np.zeros((d + spec.extra_dim,) * 2, dtype=np.complex128)
    out[:d, :d] = s.matrix
    return State(out, SystemLayout.of((label, d + spec.extra_dim)), s.norm_class, check=False)


def orthogonal_free_state(block_dim: int, spec: EmbeddingSpec, label: str = "T") -> State:
    """Free state supported entirely on the added block W (maximally mixed there)."""
    D = block_dim + spec.extra_dim
    out = np.zeros((D, D), dtype=np.complex128)
    out[block_dim:, block_dim:] = np.eye(spec.extra_dim) / spec.extra_dim
    return State(out, SystemLayout.of((label, D)))


def block_projector(block_dim: int, spec: EmbeddingSpec) -> np.ndarray:
    """Projector onto the original (non-W) block."""
    D = block_dim + spec.extra_dim
    p = np.zeros((D, D), dtype=np.complex128)
    p[:block_dim, :block_dim] = np.eye(block_dim)
    return p


def reverse_embed(s: State, keep: Iterable[str]) -> State:
    """Remove ancillary registers by tracing out everything outside ``keep``."""
    return s.marginal(keep)


# --------------------------------------------------------------------------
# flagged ensembles


@dataclass(frozen=True, eq=False)
class Branch:
    weight: float
    body: State
    label: int


@dataclass(frozen=True, eq=False)
class FlaggedEnsemble:
    """``sum_i w_i rho_i (x) |i><i|`` stored branch by branch."""

    branches: tuple[Branch, ...]

    def __post_init__(self):
        br = tuple(self.branches)
        object.__setattr__(self, "branches", br)
        labels = [b.label for b in br]
        if len(set(labels)) != len(labels):
            raise StateError(f"duplicate branch labels {labels}")
        if br:
            dims = {b.body.dim for b in br}
            if len(dims) != 1:
                raise StateError(f"branch bodies have different dimensions {sorted(dims)}")
        for b in br:
            if b.weight < -TRACE_TOL or b.weight > 1 + TRACE_TOL:
                raise StateError(f"branch weight {b.weight} outside [0, 1]")
        if self.total_weight > 1 + TRACE_TOL:
            raise StateError(f"weights sum to {self.total_weight} > 1")

    @classmethod
    def of(cls, items: Iterable[tuple[float, State, int]]) -> "FlaggedEnsemble":
        return cls(tuple(Branch(float(w), s, int(lab)) for w, s, lab in items))

    @property
    def total_weight(self) -> float:
        return float(sum(b.weight for b in self.branches))

    @property
    def labels(self) -> list[int]:
        return [b.label for b in self.branches]

    @property
    def body_dim(self) -> int:
        return self.branches[0].body.dim if self.branches else 1

    def branch(self, label: int) -> Branch:
        for b in self.branches:
            if b.label == label:
                return b
        raise KeyError(label)

    def sorted(self) -> "FlaggedEnsemble":
        return FlaggedEnsemble(tuple(sorted(self.branches, key=lambda b: b.label)))

    def map_bodies(self, fn) -> "FlaggedEnsemble":
        return FlaggedEnsemble(tuple(Branch(b.weight, fn(b.body), b.label) for b in self.branches))

    def average_body(self) -> np.ndarray:
        """``sum_i w_i rho_i`` with the classical register traced out."""
        acc = np.zeros((self.body_dim,) * 2, dtype=np.complex128)
        for b in self.branches:
            acc = acc + b.weight * b.body.matrix
        return acc

    def register_order(self) -> list[int]:
        return sorted(self.labels)

    def materialize(self, register_labels: Sequence[int] | None = None) -> np.ndarray:
        """Block-diagonal matrix ``sum_i w_i rho_i (x) |i><i|``; a test-time oracle.

        The register basis is ordered by ``register_labels`` (default: sorted labels).
        """
        order = list(register_labels) if register_labels is not None else self.register_order()
        r = len(order)
        D = self.body_dim
        check_dim(D * r, "materialized ensemble")
        out = np.zeros((D * r, D * r), dtype=np.complex128)
        for b in self.branches:
            idx = order.index(b.label)
            flag = np.zeros((r, r))
            flag[idx, idx] = 1.0
            out += b.weight * np.kron(b.body.matrix, flag)
        return out


def blocks_from_materialized(m: np.ndarray, body_dim: int, labels: Sequence[int]) -> dict[int, np.ndarray]:
    """Inverse of :meth:`FlaggedEnsemble.materialize`: weighted body per label."""
    r = len(labels)
    t = np.asarray(m).reshape(body_dim, r, body_dim, r)
    return {lab: t[:, i, :, i].copy() for i, lab in enumerate(labels)}


def ensemble_trace_distance(a: FlaggedEnsemble, b: FlaggedEnsemble) -> float:
    """Trace distance of the (never materialized) block-diagonal states."""
    la, lb = {x.label: x for x in a.branches}, {x.label: x for x in b.branches}
    total = 0.0
    for lab in sorted(set(la) | set(lb)):
        if lab in la and lab in lb:
            diff = la[lab].weight * la[lab].body.matrix - lb[lab].weight * lb[lab].body.matrix
            total += trace_norm(diff)
        else:
            x = la.get(lab) or lb.get(lab)
            total += x.weight * abs(x.body.trace)
    return 0.5 * total


def cyclic_shift_labels(e: FlaggedEnsemble) -> FlaggedEnsemble:
    """Relabel ``i -> i+1`` and ``m -> 1``; bodies and weights are untouched."""
    m = len(e.branches)
    if sorted(e.labels) != list(range(1, m + 1)):
        raise StateError(f"labels must be 1..{m}, got {sorted(e.labels)}")
    return FlaggedEnsemble(
        tuple(Branch(b.weight, b.body, b.label % m + 1) for b in e.branches)
    ).sorted()


def slot_groups(layout: SystemLayout, slots: int) -> list[list[int]]:
    """Partition subsystem indices into ``slots`` consecutive groups of equal dimension."""
    if slots < 1:
        raise StateError("slots must be positive")
    D = layout.total_dim
    slot_dim = max(1, round(D ** (1.0 / slots)))
    for cand in (slot_dim - 1, slot_dim, slot_dim + 1):
        if cand >= 1 and cand**slots == D:
            slot_dim = cand
            break
    else:
        raise StateError(f"dimension {D} is not a {slots}-th power")
    groups: list[list[int]] = []
    cur: list[int] = []
    acc = 1
    for i, d in enumerate(layout.dims):
        cur.append(i)
        acc *= d
        if acc > slot_dim:
            raise StateError(f"layout {layout.subsystems} does not split into {slots} slots")
        if acc == slot_dim and len(groups) < slots - 1:
            groups.append(cur)
            cur, acc = [], 1
    groups.append(cur)
    if len(groups) != slots or acc != slot_dim:
        raise StateError(f"layout {layout.subsystems} does not split into {slots} slots")
    return groups


def shift_slots(body: State, slots: int) -> State:
    """Move slot ``i`` to ``i+1`` and the last slot to the front.

    When every slot has the same internal structure, the output keeps the
    input's positional labels; otherwise labels travel with the data.
    """
    if slots == 1:
        return body
    groups = slot_groups(body.layout, slots)
    new_groups = [groups[-1]] + groups[:-1]
    order = [i for g in new_groups for i in g]
    out = body.permute(order)
    if out.layout.dims == body.layout.dims:
        out = out.relabel(body.layout.labels)
    return out


def cyclic_shift_quantum(e: FlaggedEnsemble, slots: int) -> FlaggedEnsemble:
    """Cyclically permute the quantum slots of every branch body."""
    return e.map_bodies(lambda s: shift_slots(s, slots))
