"""Channel mutual information and its continuity bound, in bits.

``I(N) = max_rho  S(rho) + S(N(rho)) - S(N^c(rho))`` where ``N^c`` is the
complementary channel built from the Kraus operators.  The objective is
concave in ``rho``, so projected gradient ascent on the set of density
matrices reaches the global maximum.  The Frank-Wolfe gap
``lambda_max(G) - <G, rho>`` bounds the remaining suboptimality and is used
as the stopping rule.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..channels import PRESERVING, QuantumOp
from ..states import State

LOG_FLOOR = 1e-300


class MutualInfoError(RuntimeError):
    pass


@dataclass
class MutualInfoResult:
    value: float
    optimizer_state: State
    iterations: int
    gap_estimate: float


def entropy(rho: np.ndarray) -> float:
    """von Neumann entropy in bits."""
    w = np.linalg.eigvalsh((rho + rho.conj().T) / 2)
    w = w[w > 0]
    return float(-np.sum(w * np.log2(w)))


def _log2m(rho: np.ndarray) -> np.ndarray:
    w, v = np.linalg.eigh((rho + rho.conj().T) / 2)
    return (v * np.log2(np.maximum(w, LOG_FLOOR))) @ v.conj().T


def binary_entropy(p: float) -> float:
    if p <= 0 or p >= 1:
        return 0.0
    return float(-p * np.log2(p) - (1 - p) * np.log2(1 - p))


def continuity_bound(eps: float, d_ab: int) -> float:
    """``3 eps log2(d_ab) + 3 h2(eps)`` for ``eps`` in [0, 1]."""
    if not 0 <= eps <= 1:
        raise ValueError(f"eps must lie in [0, 1], got {eps}")
    return 3 * eps * np.log2(d_ab) + 3 * binary_entropy(eps)


def project_to_density(h: np.ndarray) -> np.ndarray:
    """Frobenius-nearest density matrix: eigenvalues projected onto the simplex."""
    w, v = np.linalg.eigh((h + h.conj().T) / 2)
    u = np.sort(w)[::-1]
    css = np.cumsum(u) - 1
    idx = np.arange(1, u.size + 1)
    rho_k = idx[u - css / idx > 0][-1]
    lam = np.maximum(w - css[rho_k - 1] / rho_k, 0)
    return (v * lam) @ v.conj().T


class _Objective:
    def __init__(self, op: QuantumOp):
        self.K = np.stack(op.kraus)

    def channel(self, rho):
        return np.einsum("iab,bc,idc->ad", self.K, rho, self.K.conj())

    def complement(self, rho):
        T = self.K @ rho
        return np.einsum("iab,jab->ij", T, self.K.conj())

    def value(self, rho) -> float:
        return entropy(rho) + entropy(self.channel(rho)) - entropy(self.complement(rho))

    def gradient(self, rho) -> np.ndarray:
        K = self.K
        out_log = _log2m(self.channel(rho))
        env_log = _log2m(self.complement(rho))
        g = -_log2m(rho)
        g -= np.einsum("iab,ac,icd->bd", K.conj(), out_log, K)
        g += np.einsum("ji,jab,iac->bc", env_log, K.conj(), K)
        return (g + g.conj().T) / 2


def channel_mutual_information(op: QuantumOp, tol: float = 1e-8, max_iter: int = 5000,
                               rho0: np.ndarray | None = None) -> MutualInfoResult:
    """Maximize the input-output mutual information of ``op`` (a CPTP map)."""
    if op.trace_class != PRESERVING:
        raise MutualInfoError("mutual information is defined for trace-preserving maps")
    f = _Objective(op)
    d = op.in_dim
    rho = np.eye(d, dtype=complex) / d if rho0 is None else np.asarray(rho0, dtype=complex)
    val = f.value(rho)
    step = 1.0
    gap = np.inf
    for it in range(max_iter + 1):
        g = f.gradient(rho)
        gap = float(np.linalg.eigvalsh(g)[-1] - np.vdot(rho, g).real)
        if gap <= tol:
            break
        if it == max_iter:
            raise MutualInfoError(f"no convergence in {max_iter} iterations (gap {gap:.2e})")
        while True:
            cand = project_to_density(rho + step * g)
            cval = f.value(cand)
            lin = np.vdot(cand - rho, g).real
            if cval >= val + 1e-4 * lin:
                break
            # value differences drown in rounding near the optimum; concavity
            # still guarantees ascent while the slope at the candidate is positive
            if abs(cval - val) < 1e-12 and np.vdot(cand - rho, f.gradient(cand)).real > 0:
                break
            if step < 1e-14:
                break
            step /= 2
        if np.abs(cand - rho).max() < 1e-15:
            break
        rho, val = cand, cval
        step = min(step * 2, 1e3)
    state = State((rho + rho.conj().T) / 2, op.in_layout, check=False)
    return MutualInfoResult(float(val), state, it, max(gap, 0.0))
