"""Dense primal-dual interior-point solver for block-diagonal real SDPs.

Primal:  minimize <C, X>  s.t.  <A_i, X> = b_i,  X >= 0
Dual:    maximize b.y     s.t.  S = C - sum_i y_i A_i >= 0

``X``, ``S`` and every ``A_i`` are real symmetric and block diagonal.  The
search direction is HKM (the ``X dS S^-1`` linearization) with a Mehrotra
predictor-corrector step; the start point is infeasible, so both residuals
are driven to zero along with the gap.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp


class SdpError(RuntimeError):
    """The interior-point method did not converge; ``record`` holds the last residuals."""

    def __init__(self, message: str, record: dict):
        super().__init__(message)
        self.record = record


@dataclass
class SdpProblem:
    """Standard-form SDP data.

    ``constraints[b]`` is a sparse ``(m, n_b**2)`` matrix whose row ``i`` is
    the row-major vectorization of the ``b``-th diagonal block of ``A_i``.
    """

    block_sizes: list[int]
    C: list[np.ndarray]
    constraints: list[sp.csr_matrix]
    b: np.ndarray
    tol: float = 1e-9

    def __post_init__(self):
        self.b = np.asarray(self.b, dtype=float)
        self.C = [np.asarray(c, dtype=float) for c in self.C]
        self.constraints = [sp.csr_matrix(a) for a in self.constraints]
        self.validate()

    @property
    def m(self) -> int:
        return self.b.size

    def validate(self) -> None:
        if not (len(self.block_sizes) == len(self.C) == len(self.constraints)):
            raise ValueError("one objective block and one constraint block per block size")
        for n, c, a in zip(self.block_sizes, self.C, self.constraints):
            if c.shape != (n, n):
                raise ValueError(f"objective block has shape {c.shape}, expected {(n, n)}")
            if not np.allclose(c, c.T, atol=1e-12):
                raise ValueError("objective block is not symmetric")
            if a.shape != (self.m, n * n):
                raise ValueError(f"constraint block has shape {a.shape}, expected {(self.m, n * n)}")
            perm = np.arange(n * n).reshape(n, n).T.reshape(-1)
            diff = abs(a - a[:, perm])
            if diff.nnz and diff.max() > 1e-12:
                raise ValueError("constraint operator is not symmetric")

    def op(self, X: list[np.ndarray]) -> np.ndarray:
        """``[<A_i, X>]_i``."""
        out = np.zeros(self.m)
        for a, x in zip(self.constraints, X):
            out += a @ x.reshape(-1)
        return out

    def adj(self, y: np.ndarray) -> list[np.ndarray]:
        """``sum_i y_i A_i``, blockwise."""
        return [(a.T @ y).reshape(n, n) for a, n in zip(self.constraints, self.block_sizes)]


@dataclass
class SdpResult:
    X: list[np.ndarray]
    y: np.ndarray
    S: list[np.ndarray]
    primal_objective: float
    dual_objective: float
    gap: float
    primal_residual: float
    dual_residual: float
    iterations: int
    log: list[dict] = field(default_factory=list)


def _inner(A: list[np.ndarray], B: list[np.ndarray]) -> float:
    return float(sum(np.vdot(a, b).real for a, b in zip(A, B)))


def _fro(A: list[np.ndarray]) -> float:
    return float(np.sqrt(sum(np.sum(a * a) for a in A)))


def _sym(a: np.ndarray) -> np.ndarray:
    return (a + a.T) / 2


def _max_step(X: np.ndarray, dX: np.ndarray) -> float:
    """Largest ``alpha`` with ``X + alpha dX >= 0`` (``X`` positive definite)."""
    L = np.linalg.cholesky(X)
    Li = sla.solve_triangular(L, np.eye(X.shape[0]), lower=True)
    lam = np.linalg.eigvalsh(_sym(Li @ dX @ Li.T)).min()
    return np.inf if lam >= 0 else -1.0 / lam


class _Block:
    """Nonzeros of one constraint block, grouped by constraint.

    ``R``, ``Cc`` and ``V`` hold row, column and value of each constraint's
    entries padded to a common count ``K`` (padding has value zero), so that
    ``X A_j S^-1 = sum_f v_f X[:, r_f] S^-1[c_f, :]`` is a batched rank-K product.
    """

    def __init__(self, a: sp.csr_matrix, n: int):
        a = a.tocsr()
        a.sort_indices()
        self.n = n
        self.flat = a.indices
        self.weights = a.data
        counts = np.diff(a.indptr)
        self.rows = np.flatnonzero(counts)
        self.starts = a.indptr[self.rows]
        K = int(counts.max(initial=0))
        m = a.shape[0]
        self.R = np.zeros((m, max(K, 1)), dtype=int)
        self.Cc = np.zeros((m, max(K, 1)), dtype=int)
        self.V = np.zeros((m, max(K, 1)))
        slot = np.arange(a.nnz) - np.repeat(a.indptr[:-1], counts)
        row = np.repeat(np.arange(m), counts)
        self.R[row, slot] = a.indices // n
        self.Cc[row, slot] = a.indices % n
        self.V[row, slot] = a.data


def _schur(problem: SdpProblem, blocks: list[_Block], X, Sinv) -> np.ndarray:
    """``M_ij = tr(A_i X A_j S^-1)`` summed over blocks."""
    m = problem.m
    M = np.zeros((m, m))
    for blk, x, si in zip(blocks, X, Sinv):
        n = blk.n
        if blk.weights.size == 0:
            continue
        batch = max(1, min(m, 2_000_000 // (n * n)))
        for lo in range(0, m, batch):
            hi = min(m, lo + batch)
            U = x[:, blk.R[lo:hi]].transpose(1, 0, 2) * blk.V[lo:hi, None, :]
            W = si[blk.Cc[lo:hi]]
            G = np.matmul(U, W).reshape(hi - lo, n * n)
            # row j of the product is column j of M: <A_i, X A_j S^-1> for all i
            vals = np.take(G, blk.flat, axis=1)
            vals *= blk.weights
            M[lo:hi, blk.rows] += np.add.reduceat(vals, blk.starts, axis=1)
    return (M + M.T) / 2


def solve_sdp(problem: SdpProblem, max_iter: int = 100, log=None) -> SdpResult:
    """Run the predictor-corrector iteration until gap and residuals drop below ``problem.tol``.

    ``log``, if given, is called with one dict per iteration.
    """
    tol = problem.tol
    sizes = problem.block_sizes
    ntot = sum(sizes)
    b, C = problem.b, problem.C
    blocks = [_Block(a, n) for a, n in zip(problem.constraints, sizes)]
    norm_b = float(np.linalg.norm(b))
    norm_C = _fro(C)
    anorms = np.sqrt(sum(np.asarray(a.multiply(a).sum(axis=1)).ravel() for a in problem.constraints))
    alpha0 = max(10.0, np.sqrt(ntot), ntot * float(np.max((1 + np.abs(b)) / (1 + anorms), initial=1.0)))
    beta0 = max(10.0, np.sqrt(ntot), norm_C, float(anorms.max(initial=0.0)))
    X = [alpha0 * np.eye(n) for n in sizes]
    S = [beta0 * np.eye(n) for n in sizes]
    y = np.zeros(problem.m)
    records: list[dict] = []
    rec: dict = {}
    for it in range(max_iter + 1):
        Aty = problem.adj(y)
        rp = b - problem.op(X)
        Rd = [c - s - at for c, s, at in zip(C, S, Aty)]
        pobj = _inner(C, X)
        dobj = float(b @ y)
        mu = _inner(X, S) / ntot
        pinf = float(np.linalg.norm(rp)) / (1 + norm_b)
        dinf = _fro(Rd) / (1 + norm_C)
        gap = abs(pobj - dobj) / (1 + abs(pobj) + abs(dobj))
        rec = dict(iteration=it, primal=pobj, dual=dobj, gap=gap, pinf=pinf, dinf=dinf, mu=mu)
        records.append(rec)
        if log is not None:
            log(rec)
        if gap < tol and pinf < tol and dinf < tol:
            return SdpResult(X, y, S, pobj, dobj, gap, pinf, dinf, it, records)
        if it == max_iter:
            break

        Sinv = [np.linalg.inv(s) for s in S]
        Sinv = [_sym(s) for s in Sinv]
        M = _schur(problem, blocks, X, Sinv)
        try:
            factor = sla.cho_factor(M)
            solve = lambda r: sla.cho_solve(factor, r)  # noqa: E731
        except np.linalg.LinAlgError:
            solve = lambda r: np.linalg.lstsq(M, r, rcond=None)[0]  # noqa: E731

        def direction(sigma_mu, corr):
            # dX = sigma mu S^-1 - X - corr S^-1 - X dS S^-1 with dS = Rd - A^T dy
            base = [sigma_mu * si - x - (k @ si if k is not None else 0) - x @ rd @ si
                    for si, x, rd, k in zip(Sinv, X, Rd, corr)]
            dy = solve(rp - problem.op([_sym(t) for t in base]))
            Atdy = problem.adj(dy)
            dS = [rd - at for rd, at in zip(Rd, Atdy)]
            dX = [_sym(sigma_mu * si - x - (k @ si if k is not None else 0) - x @ ds @ si)
                  for si, x, ds, k in zip(Sinv, X, dS, corr)]
            return dX, dy, dS

        def steps(dX, dS):
            ap = min(_max_step(x, d) for x, d in zip(X, dX))
            ad = min(_max_step(s, d) for s, d in zip(S, dS))
            return ap, ad

        none = [None] * len(sizes)
        dXp, dyp, dSp = direction(0.0, none)
        ap, ad = steps(dXp, dSp)
        ap, ad = min(1.0, ap), min(1.0, ad)
        mu_aff = _inner([x + ap * d for x, d in zip(X, dXp)], [s + ad * d for s, d in zip(S, dSp)]) / ntot
        sigma = min(1.0, max(0.0, (mu_aff / mu) ** 3)) if mu > 0 else 0.0
        corr = [dx @ ds for dx, ds in zip(dXp, dSp)]
        dX, dy, dS = direction(sigma * mu, corr)
        ap, ad = steps(dX, dS)
        gamma = 0.9 + 0.09 * min(1.0, ap, ad)
        ap, ad = min(1.0, gamma * ap), min(1.0, gamma * ad)
        X = [x + ap * d for x, d in zip(X, dX)]
        y = y + ad * dy
        S = [s + ad * d for s, d in zip(S, dS)]
    raise SdpError(
        f"SDP did not converge in {max_iter} iterations "
        f"(gap {rec['gap']:.2e}, primal residual {rec['pinf']:.2e}, dual residual {rec['dinf']:.2e})",
        rec,
    )
