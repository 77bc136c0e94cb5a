"""Half diamond norm of a difference of channels via semidefinite programming.

For ``J`` the Choi matrix of ``N - M`` the value ``1/2 ||N - M||_diamond`` is

    min t   s.t.   Z >= 0,   Z >= J,   t I >= tr_out Z

(``Z`` Hermitian on input (x) output).  The program is passed to the in-repo
interior-point solver in its dual form, with ``Z`` expanded in a Hermitian
basis and every complex block replaced by its real embedding
``[[Re, -Im], [Im, Re]]``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from ..channels import QuantumOp
from ..tensor import LayoutError
from .sdp import SdpProblem, SdpResult, solve_sdp

DEFAULT_TOL = 1e-9


@dataclass
class DiamondResult:
    value: float
    lower_bound: float
    upper_bound: float
    sdp: SdpResult


def _hermitian_basis(N: int):
    """Entries ``(k, row, col, value)`` of a real-coefficient basis of N x N Hermitian matrices."""
    ks, rs, cs, vs = [], [], [], []
    k = 0
    for a in range(N):
        ks.append(k), rs.append(a), cs.append(a), vs.append(1.0)
        k += 1
    for a in range(N):
        for b in range(a + 1, N):
            ks += [k, k]
            rs += [a, b]
            cs += [b, a]
            vs += [1.0, 1.0]
            ks += [k + 1, k + 1]
            rs += [a, b]
            cs += [b, a]
            vs += [1j, -1j]
            k += 2
    return np.array(ks), np.array(rs), np.array(cs), np.array(vs, dtype=complex), k


def _embed_entries(ks, rs, cs, vs, N):
    """Real-embedding entries of complex Hermitian entries on an N x N block."""
    re, im = vs.real, vs.imag
    out_k = [ks, ks, ks, ks]
    out_r = [rs, rs + N, rs, rs + N]
    out_c = [cs, cs + N, cs + N, cs]
    out_v = [re, re, -im, im]
    k = np.concatenate(out_k)
    r = np.concatenate(out_r)
    c = np.concatenate(out_c)
    v = np.concatenate(out_v)
    keep = v != 0
    return k[keep], r[keep], c[keep], v[keep]


def embed(h: np.ndarray) -> np.ndarray:
    return np.block([[h.real, -h.imag], [h.imag, h.real]])


def _block(m: int, n: int, k, r, c, v) -> sp.csr_matrix:
    return sp.csr_matrix((v, (k, r * n + c)), shape=(m, n * n))


def diamond_sdp(J: np.ndarray, d_in: int, d_out: int, tol: float = DEFAULT_TOL) -> SdpProblem:
    """SDP data for ``1/2 ||Phi||_diamond`` given the Choi matrix ``J`` of ``Phi = N - M``."""
    N = d_in * d_out
    if J.shape != (N, N):
        raise LayoutError(f"Choi matrix shape {J.shape} does not match {d_in} x {d_out}")
    ks, rs, cs, vs, nz = _hermitian_basis(N)
    m = nz + 1  # y = (t, z_1 .. z_nz)
    # blocks 1 and 2 hold  Z  and  Z - J ; both constraint operators are -emb(B_k)
    ek, er, ec, ev = _embed_entries(ks + 1, rs, cs, vs, N)
    A12 = _block(m, 2 * N, ek, er, ec, -ev)
    # block 3 holds  t I - tr_out Z :  A_t = -emb(I),  A_k = emb(tr_out B_k)
    same = (rs % d_out) == (cs % d_out)
    tk, tr_, tc, tv = _embed_entries(ks[same] + 1, rs[same] // d_out, cs[same] // d_out, vs[same], d_in)
    diag = np.arange(2 * d_in)
    A3 = _block(
        m,
        2 * d_in,
        np.concatenate([np.zeros(2 * d_in, dtype=int), tk]),
        np.concatenate([diag, tr_]),
        np.concatenate([diag, tc]),
        np.concatenate([-np.ones(2 * d_in), tv]),
    )
    C = [np.zeros((2 * N, 2 * N)), -embed(J), np.zeros((2 * d_in, 2 * d_in))]
    b = np.zeros(m)
    b[0] = -1.0
    return SdpProblem([2 * N, 2 * N, 2 * d_in], C, [A12, A12, A3], b, tol=tol)


def diamond_distance_details(n: QuantumOp, m: QuantumOp, tol: float = DEFAULT_TOL,
                             log=None) -> DiamondResult:
    if n.in_layout.dims != m.in_layout.dims or n.out_layout.dims != m.out_layout.dims:
        raise LayoutError(
            f"channels act on different spaces: {n.in_layout.dims}->{n.out_layout.dims} "
            f"vs {m.in_layout.dims}->{m.out_layout.dims}"
        )
    J = n.choi - m.choi
    J = (J + J.conj().T) / 2
    if np.abs(J).max() < 1e-15:
        return DiamondResult(0.0, 0.0, 0.0, None)
    problem = diamond_sdp(J, n.in_dim, n.out_dim, tol)
    res = solve_sdp(problem, log=log)
    # dual objective is -t; primal objective is -<J, W> for a feasible witness
    upper = -res.dual_objective
    lower = -res.primal_objective
    value = (upper + lower) / 2
    return DiamondResult(value, lower, upper, res)


def diamond_distance(n: QuantumOp, m: QuantumOp, tol: float = DEFAULT_TOL) -> float:
    """``1/2 ||n - m||_diamond``, certified to ``tol`` by the SDP duality gap."""
    return diamond_distance_details(n, m, tol).value
