"""Catalyst channels: turning a code for ``N^{(x) n}`` into a one-use catalytic simulation.

Given a code with ``code(N^{(x) n}) = P^n`` close to ``M^{(x) n}``, the catalyst
channel is the flagged mixture

    C_n = 1/n sum_k  N^{(x) k-1} (x) P^n_{1:n-k} (x) |k><k|

where ``P^n_{1:i}`` keeps the first ``i`` slots of ``P^n`` (maximally mixed
state fed to the rest, their outputs discarded).  One fresh use of ``N``
plus ``C_n`` is processed by a controlled code, a relabelling of the flag
and a cyclic slot permutation.  Flagged channels are never materialized for
diamond distances; those are evaluated per branch and reported both as the
worst branch and as the branch average.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .channels import (
    PRESERVING,
    QuantumOp,
    dephasing,
    depolarizing,
    identity_channel,
    permutation,
    reduced_channel,
    relabeled,
    sequence,
    tensor,
)
from .optim.diamond import DEFAULT_TOL, diamond_distance
from .optim.mutual_info import channel_mutual_information, continuity_bound
from .tensor import LayoutError, SystemLayout

CHOI_TOL = 1e-9
MARGINAL_TOL = 1e-8
MI_TOL = 1e-6
MAX_SLOTS = 3


class ChannelCatalysisError(ValueError):
    pass


def _empty() -> QuantumOp:
    return tensor()


def _at(op: QuantumOp, pos: int) -> QuantumOp:
    """``op`` with its subsystems tagged by slot position."""
    return relabeled(
        op,
        op.in_layout.relabel([f"{lab}@{pos}" for lab in op.in_layout.labels]),
        op.out_layout.relabel([f"{lab}@{pos}" for lab in op.out_layout.labels]),
    )


def n_fold(op: QuantumOp, n: int, first: int = 1) -> QuantumOp:
    """``op^{(x) n}`` on slots ``first .. first+n-1``."""
    if n == 0:
        return _empty()
    return tensor(*(_at(op, j) for j in range(first, first + n)))


def _place(op: QuantumOp, template: QuantumOp, first: int, count: int) -> QuantumOp:
    """Relabel a ``count``-slot map onto slots ``first ..`` using ``template``'s slot labels."""
    if count == 0:
        return _empty()
    ref = n_fold(template, count, first)
    return relabeled(op, ref.in_layout, ref.out_layout)


def prefix_channel(p_n: QuantumOp, slot: QuantumOp, n: int, i: int) -> QuantumOp:
    """``P^n_{1:i}``: maximally mixed input on slots ``i+1..n``, their outputs traced."""
    if i == n:
        return p_n
    if i == 0:
        return _empty()
    ref = n_fold(slot, n)
    p = relabeled(p_n, ref.in_layout, ref.out_layout)
    per_in, per_out = len(slot.in_layout), len(slot.out_layout)
    keep_in = p.in_layout.labels[: i * per_in]
    keep_out = p.out_layout.labels[: i * per_out]
    return reduced_channel(p, keep_in, keep_out)


# --------------------------------------------------------------------------
# flagged channels and codes


@dataclass(frozen=True, eq=False)
class FlaggedChannel:
    """``sum_k w_k op_k (x) |k><k|`` kept branch by branch."""

    branches: tuple[tuple[float, QuantumOp, int], ...]

    def __post_init__(self):
        br = tuple(self.branches)
        object.__setattr__(self, "branches", br)
        labels = [lab for _, _, lab in br]
        if len(set(labels)) != len(labels):
            raise ChannelCatalysisError(f"duplicate labels {labels}")
        dims = {(op.in_dim, op.out_dim) for _, op, _ in br}
        if len(dims) > 1:
            raise ChannelCatalysisError(f"branches act on different spaces {sorted(dims)}")
        total = sum(w for w, _, _ in br)
        if abs(total - 1) > 1e-10:
            raise ChannelCatalysisError(f"weights sum to {total}, expected 1")

    @property
    def labels(self) -> list[int]:
        return [lab for _, _, lab in self.branches]

    def branch(self, label: int) -> QuantumOp:
        for _, op, lab in self.branches:
            if lab == label:
                return op
        raise KeyError(label)

    def weight(self, label: int) -> float:
        for w, _, lab in self.branches:
            if lab == label:
                return w
        raise KeyError(label)

    def relabel(self, mapping) -> "FlaggedChannel":
        return FlaggedChannel(tuple((w, op, mapping(lab)) for w, op, lab in self.branches))

    def map(self, fn) -> "FlaggedChannel":
        return FlaggedChannel(tuple((w, fn(op, lab), lab) for w, op, lab in self.branches))

    def materialize(self) -> QuantumOp:
        """Single map whose output carries the label as a classical register ``F``."""
        order = sorted(self.labels)
        r = len(order)
        first = self.branches[0][1]
        kraus = []
        for w, op, lab in self.branches:
            flag = np.zeros((r, 1))
            flag[order.index(lab), 0] = 1.0
            kraus += [np.sqrt(w) * np.kron(K, flag) for K in op.kraus]
        out = first.out_layout + SystemLayout.of(("F", r))
        return QuantumOp(first.in_layout, out, kraus=kraus, check=False)


def flagged_distances(a: FlaggedChannel, b: FlaggedChannel, tol: float = DEFAULT_TOL) -> dict:
    """Per-branch ``1/2 ||a_k - b_k||_diamond`` with their maximum and weighted sum."""
    if sorted(a.labels) != sorted(b.labels):
        raise LayoutError("flagged channels carry different labels")
    per = {}
    for w, op, lab in a.branches:
        other = b.branch(lab)
        per[lab] = diamond_distance(op, relabeled(other, op.in_layout, op.out_layout), tol)
    return {
        "per_branch": [per[lab] for lab in sorted(per)],
        "max": max(per.values()),
        "weighted": sum(a.weight(lab) * per[lab] for lab in per),
    }


@dataclass(frozen=True, eq=False)
class ChannelCode:
    """Pre-processing into ``n`` slots plus memory, post-processing back out."""

    pre: QuantumOp
    post: QuantumOp
    memory_dim: int = 1
    name: str = "code"

    def __post_init__(self):
        for op in (self.pre, self.post):
            if op.trace_class != PRESERVING:
                raise ChannelCatalysisError("code maps must be trace preserving")

    def apply(self, channel: QuantumOp) -> QuantumOp:
        """``post o (channel (x) id_memory) o pre``."""
        mid = channel if self.memory_dim == 1 else tensor(
            channel, identity_channel(SystemLayout.of(("R", self.memory_dim))))
        if self.pre.out_dim != mid.in_dim or mid.out_dim != self.post.in_dim:
            raise LayoutError("code does not fit the channel")
        return sequence(self.pre, mid, self.post)

    @classmethod
    def trivial(cls, slot: QuantumOp, n: int) -> "ChannelCode":
        ref = n_fold(slot, n)
        return cls(identity_channel(ref.in_layout), identity_channel(ref.out_layout), 1, "trivial")

    @classmethod
    def measure_prepare(cls, slot: QuantumOp, n: int) -> "ChannelCode":
        """Identity encoding; every output is measured in the computational basis and re-prepared."""
        ref = n_fold(slot, n)
        mp = tensor(*(_at(dephasing(1.0, layout=slot.out_layout), j) for j in range(1, n + 1)))
        return cls(identity_channel(ref.in_layout), mp, 1, "measure_prepare")


# --------------------------------------------------------------------------
# construction


def build_channel_catalyst(n_ch: QuantumOp, p_n: QuantumOp, n: int) -> FlaggedChannel:
    """``C_n`` on slots ``2..n`` (branch ``k``: ``N^{k-1} (x) P^n_{1:n-k}``)."""
    if n < 1:
        raise ChannelCatalysisError("n must be positive")
    if n > MAX_SLOTS:
        raise ChannelCatalysisError(f"n is capped at {MAX_SLOTS}")
    if p_n.in_dim != n_ch.in_dim**n or p_n.out_dim != n_ch.out_dim**n:
        raise LayoutError("P^n does not act on n slots of N")
    branches = []
    for k in range(1, n + 1):
        pre = n_fold(n_ch, k - 1, first=2)
        red = _place(prefix_channel(p_n, n_ch, n, n - k), n_ch, k + 1, n - k)
        branches.append((1.0 / n, tensor(pre, red), k))
    return FlaggedChannel(tuple(branches))


def _cyclic(layout: SystemLayout, per: int, n: int, to_front: bool) -> list[int]:
    groups = [list(range(j * per, (j + 1) * per)) for j in range(n)]
    new = [groups[-1]] + groups[:-1] if to_front else groups[1:] + [groups[0]]
    return [i for grp in new for i in grp]


@dataclass
class ChannelReport:
    n: int
    code: str
    eps: float  # 1/2 ||P^n - M^{(x) n}||_diamond
    eps_norm: float  # ||P^n - M^{(x) n}||_diamond
    marginal_per_branch: list
    marginal_max: float
    g3_per_branch: list
    g3_max: float
    g3_weighted: float
    chain_terms: list
    telescoping_max: float
    implied_marginal: float
    mutual_information: dict = field(default_factory=dict)

    def checks(self, tol: float = CHOI_TOL) -> dict[str, bool]:
        out = {
            "catalyst_marginal_restored": self.marginal_max <= MARGINAL_TOL,
            "g3_worst_branch_within_eps": self.g3_max <= self.eps_norm + tol,
            "g3_average_within_eps": self.g3_weighted <= self.eps_norm + tol,
            "telescoping": self.telescoping_max <= tol,
            "implied_marginal_bound": self.implied_marginal <= self.g3_weighted + tol
            and self.implied_marginal <= self.eps_norm + tol,
            "chain_term_by_term": all(
                t["branch"] <= t["first"] + t["second"] + tol
                and max(t["first"], t["second"]) <= self.eps + tol
                for t in self.chain_terms
            ),
        }
        mi = self.mutual_information
        if mi:
            out["mi_slack"] = mi["i_m_c"] <= mi["i_g3"] + mi["f_2eps"] + MI_TOL
            out["mi_processing"] = mi["i_g3"] <= mi["i_n_c"] + MI_TOL
        return out

    @property
    def passed(self) -> bool:
        return all(self.checks().values())


def catalytic_channel_convert(n_ch: QuantumOp, code: ChannelCode, m_ch: QuantumOp, n: int,
                              tol: float = DEFAULT_TOL, with_mutual_info: bool = False) -> ChannelReport:
    """Build ``G_1, G_2, G_3`` and certify the catalytic simulation of ``M`` by ``N``.

    ``eps`` is the measured ``1/2 ||P^n - M^{(x) n}||_diamond``; the bound
    checked on ``G_3`` is ``1/2 ||G_3 - M (x) C_n||_diamond <= 2 eps``, i.e.
    the unhalved norm is at most twice the unhalved code error.
    """
    if (n_ch.in_dim, n_ch.out_dim) != (m_ch.in_dim, m_ch.out_dim):
        raise LayoutError("N and M must act on the same spaces")
    ref = n_fold(n_ch, n)
    p_n = relabeled(code.apply(ref), ref.in_layout, ref.out_layout)
    m_n = n_fold(m_ch, n)
    eps = diamond_distance(p_n, relabeled(m_n, ref.in_layout, ref.out_layout), tol)
    cat = build_channel_catalyst(n_ch, p_n, n)
    per_in, per_out = len(n_ch.in_layout), len(n_ch.out_layout)

    # one fresh use of N in slot 1, then the controlled code on branch n
    g1 = cat.map(lambda op, k: p_n if k == n else tensor(_at(n_ch, 1), op))
    g2 = g1.relabel(lambda k: k % n + 1)
    # cyclic slot shift: slot n of G_2 becomes slot 1
    def shift(op: QuantumOp, _k: int) -> QuantumOp:
        pin = permutation(ref.in_layout, _cyclic(ref.in_layout, per_in, n, to_front=False))
        pout = permutation(op.out_layout, _cyclic(op.out_layout, per_out, n, to_front=True))
        return relabeled(sequence(pin, relabeled(op, pin.out_layout, op.out_layout), pout),
                         ref.in_layout, ref.out_layout)

    g3 = g2.map(shift)
    m1 = _at(m_ch, 1)
    target = cat.map(lambda op, k: tensor(m1, op))

    # catalyst marginal of G_3: slots 2..n with slot 1 fed the maximally mixed state
    marg = []
    for k in sorted(g3.labels):
        if n == 1:
            marg.append(0.0)
            continue
        op = g3.branch(k)
        red = reduced_channel(op, op.in_layout.labels[per_in:], op.out_layout.labels[per_out:])
        want = cat.branch(k)
        marg.append(diamond_distance(red, relabeled(want, red.in_layout, red.out_layout), tol))

    dist = flagged_distances(g3, target, tol)

    # slot-1 marginal channel, label discarded: average of the reduced branches
    red_choi = 0
    for w, op, _ in g3.branches:
        r = reduced_channel(op, op.in_layout.labels[:per_in], op.out_layout.labels[:per_out])
        red_choi = red_choi + w * r.choi
    avg = QuantumOp(m1.in_layout, m1.out_layout, choi=red_choi, check=False)
    implied = 2 * diamond_distance(avg, m1, tol)

    # telescoping of prefix channels
    tele = 0.0
    for i in range(1, n):
        big = prefix_channel(p_n, n_ch, n, i + 1)
        small = prefix_channel(p_n, n_ch, n, i)
        via = reduced_channel(big, big.in_layout.labels[: i * per_in], big.out_layout.labels[: i * per_out])
        tele = max(tele, float(np.abs(via.choi - small.choi).max()))

    # term-by-term chain: ||G2_k - C_k (x) M|| <= ||P_{1:j} - M^j|| + ||P_{1:j-1} - M^{j-1}||
    prefix_err = {0: 0.0}
    for j in range(1, n + 1):
        pj = prefix_channel(p_n, n_ch, n, j)
        mj = n_fold(m_ch, j)
        prefix_err[j] = 2 * diamond_distance(pj, relabeled(mj, pj.in_layout, pj.out_layout), tol)
    chain = []
    for k, d in zip(sorted(g3.labels), dist["per_branch"]):
        j = n - k + 1
        chain.append({"k": k, "branch": 2 * d, "first": prefix_err[j], "second": prefix_err[j - 1]})

    report = ChannelReport(
        n=n, code=code.name, eps=2 * eps, eps_norm=4 * eps,
        marginal_per_branch=marg, marginal_max=max(marg),
        g3_per_branch=[2 * d for d in dist["per_branch"]], g3_max=2 * dist["max"],
        g3_weighted=2 * dist["weighted"], chain_terms=chain, telescoping_max=tele,
        implied_marginal=implied,
    )
    if with_mutual_info:
        report.mutual_information = mutual_info_slack(n_ch, m_ch, cat, g3, dist["weighted"])
    return report


def mutual_info_criterion(n_ch: QuantumOp, m_ch: QuantumOp, tol: float = 1e-8) -> tuple[float, float, bool]:
    """``(I(N), I(M), I(N) >= I(M) - 1e-6)``: the necessary condition for catalytic simulation."""
    i_n = channel_mutual_information(n_ch, tol).value
    i_m = channel_mutual_information(m_ch, tol).value
    return i_n, i_m, bool(i_n >= i_m - MI_TOL)


def mutual_info_slack(n_ch: QuantumOp, m_ch: QuantumOp, cat: FlaggedChannel, g3: FlaggedChannel,
                      delta: float) -> dict:
    """Compare ``I(M (x) C_n)``, ``I(G_3)`` and ``I(N (x) C_n)`` with slack ``f(2 delta)``.

    ``delta`` bounds ``1/2 ||G_3 - M (x) C_n||_diamond``; the label register
    counts as part of the output when forming ``d_AB``.
    """
    n1 = _at(n_ch, 1)
    m1 = _at(m_ch, 1)
    nc = cat.map(lambda op, k: tensor(n1, op)).materialize()
    mc = cat.map(lambda op, k: tensor(m1, op)).materialize()
    gm = g3.map(lambda op, k: relabeled(op, nc.in_layout, nc.out_layout.select(nc.out_layout.labels[:-1]))).materialize()
    i_nc = channel_mutual_information(nc).value
    i_mc = channel_mutual_information(mc).value
    i_g = channel_mutual_information(gm).value
    d_ab = nc.in_dim * nc.out_dim
    f = continuity_bound(min(2 * delta, 1.0), d_ab)
    return {"i_n_c": i_nc, "i_m_c": i_mc, "i_g3": i_g, "f_2eps": float(f), "delta": float(delta), "d_ab": d_ab}


# --------------------------------------------------------------------------
# demo instances


def channel_demo(code_key: str, n: int = 2) -> tuple[QuantumOp, ChannelCode, QuantumOp]:
    """``(N, code, M)`` for the registered codes on qubit slots."""
    lay_in = SystemLayout.of(("A", 2))
    lay_out = SystemLayout.of(("B", 2))
    if code_key == "trivial":
        n_ch = relabeled(depolarizing(0.2), lay_in, lay_out)
        return n_ch, ChannelCode.trivial(n_ch, n), n_ch
    if code_key == "measure_prepare":
        n_ch = relabeled(depolarizing(0.1), lay_in, lay_out)
        m_ch = relabeled(dephasing(1.0), lay_in, lay_out)
        return n_ch, ChannelCode.measure_prepare(n_ch, n), m_ch
    raise KeyError(code_key)


CHANNEL_CODES = ("trivial", "measure_prepare")
