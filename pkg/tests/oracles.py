"""Independent reference computations used only by the tests."""

import numpy as np
from scipy.optimize import minimize


def _apply_kraus_on_second(kraus, psi_mat, d_anc):
    """(id (x) N)(|psi><psi|) with psi given as a d_anc x d_in coefficient matrix."""
    out = 0
    for K in kraus:
        phi = psi_mat @ K.T  # coefficients on ancilla (x) output
        v = phi.reshape(-1)
        out = out + np.outer(v, v.conj())
    return out


def _adjoint_on_second(kraus, P, d_anc, d_out):
    d_in = kraus[0].shape[1]
    acc = np.zeros((d_anc * d_in,) * 2, dtype=complex)
    for K in kraus:
        big = np.kron(np.eye(d_anc), K)
        acc += big.conj().T @ P @ big
    return acc


def diamond_seesaw(kraus_n, kraus_m, starts=40, iters=300, rng=None):
    """Lower bound on 1/2||N - M||_diamond by alternating maximization over pure inputs.

    For fixed input the best measurement is the positive-part projector of the
    output difference; for a fixed projector the best input is the top
    eigenvector of the adjoint applied to it.
    """
    rng = np.random.default_rng(rng)
    d_out, d_in = kraus_n[0].shape
    best = 0.0
    for _ in range(starts):
        psi = rng.normal(size=(d_in, d_in)) + 1j * rng.normal(size=(d_in, d_in))
        psi /= np.linalg.norm(psi)
        prev = -1.0
        for _ in range(iters):
            Y = _apply_kraus_on_second(kraus_n, psi, d_in) - _apply_kraus_on_second(kraus_m, psi, d_in)
            w, v = np.linalg.eigh(Y)
            pos = v[:, w > 0]
            val = float(w[w > 0].sum())
            P = pos @ pos.conj().T
            T = _adjoint_on_second(kraus_n, P, d_in, d_out) - _adjoint_on_second(kraus_m, P, d_in, d_out)
            ww, vv = np.linalg.eigh(T)
            psi = vv[:, -1].reshape(d_in, d_in)
            if val - prev < 1e-14:
                break
            prev = val
        best = max(best, val)
    return best


def _entropy(r):
    w = np.linalg.eigvalsh(r)
    w = w[w > 1e-15]
    return float(-np.sum(w * np.log2(w)))


def mutual_info_purified(kraus, rho):
    """I(R:B) of (id (x) N) applied to the canonical purification of rho."""
    w, v = np.linalg.eigh(rho)
    w = np.clip(w, 0, None)
    d = rho.shape[0]
    psi = np.zeros((d, d), dtype=complex)  # ancilla index i, input index
    for i in range(d):
        psi[i] = np.sqrt(w[i]) * v[:, i]
    rb = _apply_kraus_on_second(kraus, psi, d)
    d_out = kraus[0].shape[0]
    t = rb.reshape(d, d_out, d, d_out)
    r = np.einsum("abcb->ac", t)
    b = np.einsum("abad->bd", t)
    return _entropy(r) + _entropy(b) - _entropy(rb)


def _bloch(x):
    x = np.asarray(x, dtype=float)
    n = np.linalg.norm(x)
    if n > 1:
        x = x / n
    return 0.5 * np.array([[1 + x[2], x[0] - 1j * x[1]], [x[0] + 1j * x[1], 1 - x[2]]])


def qubit_mutual_info_bruteforce(kraus, grid=9):
    """Grid search over the Bloch ball followed by Nelder-Mead refinement."""
    pts = np.linspace(-1, 1, grid)
    best, arg = -np.inf, None
    for x in pts:
        for y in pts:
            for z in pts:
                if x * x + y * y + z * z <= 1:
                    v = mutual_info_purified(kraus, _bloch((x, y, z)))
                    if v > best:
                        best, arg = v, (x, y, z)
    res = minimize(lambda q: -mutual_info_purified(kraus, _bloch(q)), arg, method="Nelder-Mead",
                   options=dict(xatol=1e-10, fatol=1e-12, maxiter=4000))
    return max(best, -res.fun)
