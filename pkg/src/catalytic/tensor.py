"""Dense matrix algebra over labelled tensor-product layouts.

Every matrix in the package is a dense ``complex128`` numpy array whose row
and column index runs over the product space described by a
:class:`SystemLayout`.  Subsystem order follows the usual Kronecker
convention: the first subsystem is the most significant digit.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import prod
from typing import Iterable, Sequence

import numpy as np

MAX_DIM = 4096
HERMITIAN_TOL = 1e-10
PSD_CLIP = 1e-10


class DimensionCapError(ValueError):
    """A matrix would exceed the desk-scale dimension cap."""


class LayoutError(ValueError):
    """Labels or dimensions do not match the layout they refer to."""


def check_dim(dim: int, what: str = "matrix") -> int:
    if dim > MAX_DIM:
        raise DimensionCapError(f"{what} dimension {dim} exceeds the cap of {MAX_DIM}")
    return dim


@dataclass(frozen=True)
class SystemLayout:
    """Ordered ``(label, dim)`` pairs describing a tensor-product space."""

    subsystems: tuple[tuple[str, int], ...] = ()

    def __post_init__(self):
        subs = tuple((str(lab), int(dim)) for lab, dim in self.subsystems)
        object.__setattr__(self, "subsystems", subs)
        labels = [lab for lab, _ in subs]
        if len(set(labels)) != len(labels):
            raise LayoutError(f"duplicate labels in layout: {labels}")
        for lab, dim in subs:
            if dim < 1:
                raise LayoutError(f"subsystem {lab!r} has non-positive dimension {dim}")

    @classmethod
    def of(cls, *pairs: tuple[str, int]) -> "SystemLayout":
        return cls(tuple(pairs))

    @classmethod
    def uniform(cls, prefix: str, count: int, dim: int) -> "SystemLayout":
        """``count`` subsystems labelled ``prefix1 .. prefixN``, all of dimension ``dim``."""
        return cls(tuple((f"{prefix}{i + 1}", dim) for i in range(count)))

    @property
    def labels(self) -> tuple[str, ...]:
        return tuple(lab for lab, _ in self.subsystems)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(dim for _, dim in self.subsystems)

    @property
    def total_dim(self) -> int:
        return prod(self.dims)

    def __len__(self) -> int:
        return len(self.subsystems)

    def index(self, label: str) -> int:
        try:
            return self.labels.index(label)
        except ValueError:
            raise LayoutError(f"unknown label {label!r}; layout has {self.labels}") from None

    def dim_of(self, label: str) -> int:
        return self.subsystems[self.index(label)][1]

    def select(self, labels: Iterable[str]) -> "SystemLayout":
        """Sub-layout with the given labels, kept in layout order."""
        wanted = set(labels)
        for lab in wanted:
            self.index(lab)
        return SystemLayout(tuple(s for s in self.subsystems if s[0] in wanted))

    def permuted(self, order: Sequence[int]) -> "SystemLayout":
        return SystemLayout(tuple(self.subsystems[i] for i in order))

    def relabel(self, labels: Sequence[str]) -> "SystemLayout":
        if len(labels) != len(self.subsystems):
            raise LayoutError("relabel needs one label per subsystem")
        return SystemLayout(tuple(zip(labels, self.dims)))

    def __add__(self, other: "SystemLayout") -> "SystemLayout":
        return SystemLayout(self.subsystems + other.subsystems)

    def split(self, label: str, parts: Sequence[tuple[str, int]]) -> "SystemLayout":
        """Replace one subsystem by a finer factorisation of the same dimension."""
        i = self.index(label)
        if prod(d for _, d in parts) != self.subsystems[i][1]:
            raise LayoutError(f"parts {parts} do not factor dimension of {label!r}")
        return SystemLayout(self.subsystems[:i] + tuple(parts) + self.subsystems[i + 1 :])

    def merge(self, labels: Sequence[str], new_label: str) -> "SystemLayout":
        """Fuse adjacent subsystems into one."""
        idx = [self.index(lab) for lab in labels]
        if idx != list(range(idx[0], idx[0] + len(idx))):
            raise LayoutError(f"labels {labels} are not adjacent and in order")
        fused = (new_label, prod(self.subsystems[i][1] for i in idx))
        return SystemLayout(self.subsystems[: idx[0]] + (fused,) + self.subsystems[idx[-1] + 1 :])

    def to_json(self) -> list:
        return [[lab, dim] for lab, dim in self.subsystems]

    @classmethod
    def from_json(cls, data) -> "SystemLayout":
        return cls(tuple((lab, int(dim)) for lab, dim in data))


def as_matrix(m) -> np.ndarray:
    arr = np.asarray(m, dtype=np.complex128)
    if arr.ndim != 2:
        raise ValueError(f"expected a 2-d matrix, got shape {arr.shape}")
    return arr


def dagger(m: np.ndarray) -> np.ndarray:
    return m.conj().T


def kron(a, b) -> np.ndarray:
    """Kronecker product; row index ``i*rows(b) + k``, column ``j*cols(b) + l``."""
    a, b = as_matrix(a), as_matrix(b)
    check_dim(max(a.shape[0] * b.shape[0], a.shape[1] * b.shape[1]))
    return np.kron(a, b)


def kron_all(mats: Iterable) -> np.ndarray:
    out = np.ones((1, 1), dtype=np.complex128)
    for m in mats:
        out = kron(out, m)
    return out


def _check_square(m: np.ndarray, layout: SystemLayout) -> None:
    if m.shape != (layout.total_dim, layout.total_dim):
        raise LayoutError(
            f"matrix shape {m.shape} does not match layout dimension {layout.total_dim}"
        )


def partial_trace(m, layout: SystemLayout, keep: Iterable[str]) -> np.ndarray:
    """Trace out every subsystem not in ``keep``; kept ones stay in layout order."""
    m = as_matrix(m)
    _check_square(m, layout)
    keep = set(keep)
    for lab in keep:
        layout.index(lab)
    n = len(layout)
    dims = layout.dims
    t = m.reshape(dims + dims)
    row = list(range(n))
    col = [i + n if layout.labels[i] in keep else i for i in range(n)]
    kept = [i for i in range(n) if layout.labels[i] in keep]
    out_idx = kept + [i + n for i in kept]
    d_keep = prod(dims[i] for i in kept)
    return np.einsum(t, row + col, out_idx).reshape(d_keep, d_keep)


def permute_subsystems(m, layout: SystemLayout, order: Sequence[int]) -> np.ndarray:
    """Reorder subsystems: output subsystem ``j`` is input subsystem ``order[j]``.

    This is conjugation by the permutation unitary, so the spectrum is unchanged.
    """
    m = as_matrix(m)
    _check_square(m, layout)
    n = len(layout)
    order = list(order)
    if sorted(order) != list(range(n)):
        raise ValueError(f"{order} is not a permutation of {n} subsystems")
    t = m.reshape(layout.dims + layout.dims)
    t = t.transpose(order + [i + n for i in order])
    return t.reshape(m.shape)


def inverse_permutation(order: Sequence[int]) -> list[int]:
    inv = [0] * len(order)
    for j, i in enumerate(order):
        inv[i] = j
    return inv


def is_hermitian(m: np.ndarray, tol: float = HERMITIAN_TOL) -> bool:
    return m.shape[0] == m.shape[1] and float(np.max(np.abs(m - dagger(m)), initial=0.0)) <= tol


def hermitian_part(m, tol: float = HERMITIAN_TOL) -> np.ndarray:
    """Return ``(m + m^dagger)/2``, refusing inputs that are clearly not Hermitian."""
    m = as_matrix(m)
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"non-square matrix {m.shape}")
    off = float(np.max(np.abs(m - dagger(m)), initial=0.0))
    if off > tol:
        raise ValueError(f"matrix is not Hermitian (max asymmetry {off:.3e})")
    return (m + dagger(m)) / 2


def herm_eig(m, tol: float = HERMITIAN_TOL) -> tuple[np.ndarray, np.ndarray]:
    return np.linalg.eigh(hermitian_part(m, tol))


def psd_sqrt(m) -> np.ndarray:
    w, v = herm_eig(m)
    if w.size and w.min() < -PSD_CLIP * max(1.0, abs(w).max()):
        raise ValueError(f"matrix is not positive semidefinite (min eigenvalue {w.min():.3e})")
    w = np.sqrt(np.clip(w, 0.0, None))
    return (v * w) @ dagger(v)


def trace_norm(m) -> float:
    """Sum of singular values (sum of |eigenvalues| for Hermitian input)."""
    m = as_matrix(m)
    if m.shape[0] != m.shape[1]:
        raise ValueError(f"trace norm needs a square matrix, got {m.shape}")
    if is_hermitian(m):
        return float(np.sum(np.abs(np.linalg.eigvalsh((m + dagger(m)) / 2))))
    return float(np.sum(np.linalg.svd(m, compute_uv=False)))


def fidelity(rho, sigma) -> float:
    """Squared (Uhlmann) fidelity ``(tr sqrt(sqrt(rho) sigma sqrt(rho)))**2``."""
    rho, sigma = as_matrix(rho), as_matrix(sigma)
    if rho.shape != sigma.shape:
        raise ValueError(f"shape mismatch {rho.shape} vs {sigma.shape}")
    sr = psd_sqrt(rho)
    psd_sqrt(sigma)  # PSD check only
    w = np.linalg.eigvalsh(hermitian_part(sr @ sigma @ sr, tol=1e-8))
    return float(np.sum(np.sqrt(np.clip(w, 0.0, None))) ** 2)


def basis_projector(dim: int, index: int) -> np.ndarray:
    p = np.zeros((dim, dim), dtype=np.complex128)
    p[index, index] = 1.0
    return p


def ket(dim: int, index: int) -> np.ndarray:
    v = np.zeros(dim, dtype=np.complex128)
    v[index] = 1.0
    return v
