"""One-shot catalytic versions of multi-shot distillation protocols.

A protocol taking ``n`` copies of ``rho`` to ``m`` approximate copies of
``sigma`` is compiled into a procedure that consumes one block of ``k``
source copies plus a flagged catalyst and returns one target copy plus the
catalyst.  Two constructions are provided:

* the block catalyst (``k = ceil(n/m)``, success weight ``p``), and
* the trade-off catalyst for any ``1 <= k <= n/m``: every slot is enlarged
  by an orthogonal one-dimensional space ``W`` holding a free filler state,
  and a final measurement ``{P_block, P_W}`` post-selects the target with
  success weight ``p m / g`` where ``g = ceil(n/k)``.

Catalyst bodies are ordered lists of *slots*, all with the same internal
layout.  Slot labels are positional (``"<sub>@<pos>"``); the incoming source
block sits at position 1 and the catalyst occupies positions ``2..g``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from math import ceil, prod

import numpy as np

from .channels import (
    NONINCREASING,
    ControlledOp,
    QuantumOp,
    append_state,
    apply,
    apply_controlled,
    discard,
    identity_channel,
    permutation,
    relabeled,
    sequence,
    tensor,
)
from .multishot import EQ_TOL, MultiShotProtocol, ProtocolError
from .states import (
    NORMALIZED,
    Branch,
    EmbeddingSpec,
    FlaggedEnsemble,
    ORTHOGONAL_DIRECT_SUM,
    State,
    cyclic_shift_labels,
    ensemble_trace_distance,
    maximally_mixed,
    orthogonal_free_state,
    tensor_power,
    trace_distance,
)
from .tensor import SystemLayout, check_dim, kron_all, permute_subsystems

__all__ = [
    "BLOCK",
    "TRADEOFF",
    "TRADEOFF_ALT",
    "RESTORE_TOL",
    "CatalysisError",
    "BranchPlan",
    "CatalystPlan",
    "catalyst_plan",
    "Step",
    "CatalyticProtocol",
    "VerificationReport",
    "build_block_catalyst",
    "convert_to_catalytic",
    "tradeoff_convert",
    "run_protocol",
    "verify",
    "simulate_reuse",
    "correlation_check",
    "MultiShotProtocol",
]

BLOCK = "block"
TRADEOFF = "tradeoff"
TRADEOFF_ALT = "tradeoff_alt"
VARIANTS = (BLOCK, TRADEOFF, TRADEOFF_ALT)

RESTORE_TOL = 1e-9
PURE_TOL = 1e-10

CONTROLLED = "controlled-op"
CLASSICAL_SHIFT = "classical-shift"
QUANTUM_SHIFT = "quantum-shift"
PROJECT = "project"
REVERSE_EMBED = "reverse-embed"


class CatalysisError(ValueError):
    pass


# --------------------------------------------------------------------------
# symbolic plan


@dataclass(frozen=True)
class BranchPlan:
    """Branch ``label`` holds ``zeta`` source blocks, the first ``eta`` target
    slots of the embedded multi-shot output, then ``theta`` free fillers."""

    label: int
    zeta: int
    eta: int
    theta: int

    @property
    def slots(self) -> int:
        return self.zeta + self.eta + self.theta


@dataclass(frozen=True)
class CatalystPlan:
    n: int
    m: int
    k: int
    g: int
    variant: str
    branches: tuple[BranchPlan, ...]

    @property
    def quantum_slots(self) -> int:
        return self.g - 1


def catalyst_plan(n: int, m: int, k: int | None = None, variant: str = BLOCK) -> CatalystPlan:
    """Branch structure of the catalyst, without any numerics."""
    if variant not in VARIANTS:
        raise CatalysisError(f"unknown variant {variant!r}")
    if n < 1 or m < 1 or m > n:
        raise CatalysisError(f"need 1 <= m <= n, got n={n}, m={m}")
    if variant == BLOCK:
        if k is not None and k != ceil(n / m):
            raise CatalysisError(f"block construction fixes k = ceil(n/m) = {ceil(n / m)}")
        k = ceil(n / m)
        g = m
    else:
        if k is None or k < 1 or k * m > n:
            raise CatalysisError(f"k must satisfy 1 <= k <= n/m = {n / m:g}, got {k}")
        g = ceil(n / k)
    branches = []
    for i in range(1, g + 1):
        if i <= g - m:
            if variant == TRADEOFF_ALT:
                branches.append(BranchPlan(i, i - 1, m - 1, g - m - i + 1))
            else:
                branches.append(BranchPlan(i, i - 1, m, g - m - i))
        else:
            branches.append(BranchPlan(i, i - 1, g - i, 0))
    return CatalystPlan(n, m, k, g, variant, tuple(branches))


# --------------------------------------------------------------------------
# slot spaces


class _Slots:
    """Slot content for one protocol: the source block, embedded targets, filler."""

    def __init__(self, p: MultiShotProtocol, k: int, free: State, orthogonal: bool):
        self.k = k
        self.orthogonal = orthogonal
        self.per_src = len(p.source.layout)
        self.d = p.source.dim
        self.free = free
        zeta = tensor_power(p.source, k)
        self.block_layout = zeta.layout  # S^k
        self.D = zeta.dim
        if orthogonal:
            self.spec = EmbeddingSpec(ORTHOGONAL_DIRECT_SUM)
            self.template = SystemLayout.of(("T", self.D + self.spec.extra_dim))
            self.zeta = self._pad(zeta.matrix, 1)
            self.theta = orthogonal_free_state(self.D, self.spec).matrix
        else:
            self.template = zeta.layout
            self.zeta = zeta.matrix
            self.theta = None
        self.dim = self.template.total_dim

    def labels(self, pos: int) -> list[str]:
        return [f"{lab}@{pos}" for lab in self.template.labels]

    def layout(self, positions) -> SystemLayout:
        out = SystemLayout()
        for pos in positions:
            out = out + self.template.relabel(self.labels(pos))
        return out

    def block_layout_at(self, pos: int) -> SystemLayout:
        return self.block_layout.relabel([f"{lab}@{pos}" for lab in self.block_layout.labels])

    def _pad(self, x: np.ndarray, j: int) -> np.ndarray:
        """``V^{(x) j} x V^dagger{(x) j}`` with ``V`` the inclusion of ``S^k`` into ``T``."""
        if j == 0:
            return x
        D, e = self.D, self.spec.extra_dim
        t = x.reshape([D] * (2 * j))
        t = np.pad(t, [(0, e)] * (2 * j))
        n = (D + e) ** j
        return t.reshape(n, n)

    def lift(self, x: np.ndarray, j: int) -> np.ndarray:
        """Embed a state on ``j`` target slots into ``j`` catalyst slots."""
        if self.k > 1 and j > 0:
            pads = [self.free.matrix] * ((self.k - 1) * j)
            big = kron_all([x] + pads)
            lay = SystemLayout.uniform("c", j * self.k, self.d)
            order = []
            for s in range(j):
                order.append(s)
                order += [j + s * (self.k - 1) + t for t in range(self.k - 1)]
            x = permute_subsystems(big, lay, order)
        return self._pad(x, j) if self.orthogonal else x


def _eta_marginal(eta: State, per: int, j: int) -> np.ndarray:
    if j == 0:
        return np.ones((1, 1), dtype=np.complex128)
    return eta.marginal(eta.layout.labels[: j * per]).matrix


def _branch_body(plan_branch: BranchPlan, slots: _Slots, eta: State, per: int, first_pos: int) -> State:
    pieces = [slots.zeta] * plan_branch.zeta
    if plan_branch.eta:
        pieces.append(slots.lift(_eta_marginal(eta, per, plan_branch.eta), plan_branch.eta))
    pieces += [slots.theta] * plan_branch.theta
    n_slots = plan_branch.slots
    check_dim(slots.dim**n_slots, "catalyst branch")
    mat = kron_all(pieces) if pieces else np.ones((1, 1), dtype=np.complex128)
    layout = slots.layout(range(first_pos, first_pos + n_slots))
    return State(mat, layout, NORMALIZED, check=False)


def _catalyst(plan: CatalystPlan, slots: _Slots, eta: State, per: int) -> FlaggedEnsemble:
    w = 1.0 / plan.g
    return FlaggedEnsemble.of((w, _branch_body(b, slots, eta, per, 2), b.label) for b in plan.branches)


def build_block_catalyst(p: MultiShotProtocol, free_pi: State | None = None) -> FlaggedEnsemble:
    """Block catalyst for ``p``: ``m`` branches of ``m - 1`` slots of ``S^k``."""
    plan = catalyst_plan(p.n_in, p.m_out, variant=BLOCK)
    free = free_pi if free_pi is not None else p.default_free_state()
    slots = _Slots(p, plan.k, free, orthogonal=False)
    return _catalyst(plan, slots, p.measure().output, len(p.target.layout))


# --------------------------------------------------------------------------
# lifted protocol map


def _lifted(p: MultiShotProtocol, op: QuantumOp, plan: CatalystPlan, slots: _Slots) -> QuantumOp:
    """``op`` acting on ``g`` slots: strip slot embeddings, drop spare copies,
    run ``op``, embed the ``m`` outputs and fill the remaining slots."""
    g, m, n, k = plan.g, plan.m, plan.n, plan.k
    ops = []
    if slots.orthogonal:
        V = np.eye(slots.dim, slots.D, dtype=np.complex128)
        restrict = [
            QuantumOp(slots.layout([j]), slots.block_layout_at(j), kraus=[V.conj().T],
                      trace_class=NONINCREASING, check=False)
            for j in range(1, g + 1)
        ]
        ops.append(tensor(*restrict))
    cur = SystemLayout()
    for j in range(1, g + 1):
        cur = cur + slots.block_layout_at(j)
    keep = cur.labels[: n * slots.per_src]
    if g * k > n:
        ops.append(discard(cur, keep))
        cur = cur.select(keep)
    outl = p.output_layout()
    ops.append(relabeled(op, cur, outl))
    cur = outl
    if k > 1:
        pad = tensor_power(slots.free, (k - 1) * m, suffix="~p")
        ops.append(append_state(cur, pad))
        cur = cur + pad.layout
        per = slots.per_src
        order = []
        for s in range(m):
            order += list(range(s * per, (s + 1) * per))
            for t in range(k - 1):
                c = m + s * (k - 1) + t
                order += list(range(c * per, (c + 1) * per))
        ops.append(permutation(cur, order))
        cur = cur.permuted(order)
    if slots.orthogonal:
        V = np.eye(slots.dim, slots.D, dtype=np.complex128)
        embeds = [
            QuantumOp(slots.block_layout_at(j), slots.layout([j]), kraus=[V], check=False)
            for j in range(1, m + 1)
        ]
        ops.append(tensor(*embeds))
        cur = slots.layout(range(1, m + 1))
        if g > m:
            filler = State(kron_all([slots.theta] * (g - m)), slots.layout(range(m + 1, g + 1)), check=False)
            ops.append(append_state(cur, filler))
    full = slots.layout(range(1, g + 1))
    return relabeled(sequence(*ops), full, full)


def _junk_lifted(p: MultiShotProtocol, plan: CatalystPlan, slots: _Slots, junk: State) -> State:
    """Embedded failure output when the protocol has no failure map."""
    x = slots.lift(junk.matrix, plan.m)
    if plan.g > plan.m:
        x = kron_all([x] + [slots.theta] * (plan.g - plan.m))
    return State(x, slots.layout(range(1, plan.g + 1)), NORMALIZED, check=False)


# --------------------------------------------------------------------------
# compiled protocol


@dataclass(frozen=True, eq=False)
class Step:
    """One stage of the compiled procedure.

    ``op`` is a :class:`ControlledOp` for the controlled stage and a
    :class:`QuantumOp` acting on slot 1 for projection and reverse embedding.
    ``front`` maps a branch label to the slot moved to position 1 by the
    quantum shift (default: the last slot).
    """

    kind: str
    op: object = None
    front: dict = field(default_factory=dict)
    note: str = ""


@dataclass(frozen=True, eq=False)
class CatalyticProtocol:
    variant: str
    protocol: MultiShotProtocol
    plan: CatalystPlan
    catalyst: FlaggedEnsemble
    source_block: State
    steps: tuple[Step, ...]
    block_size: int
    expected_eps: float
    expected_p: float
    eta: State
    failure_op: QuantumOp | None
    failure_junk: State | None
    slots: _Slots = field(repr=False)

    @property
    def g(self) -> int:
        return self.plan.g

    @property
    def output_labels(self) -> list[str]:
        return [f"{lab}@1" for lab in self.protocol.target.layout.labels]

    @property
    def catalyst_labels(self) -> list[str]:
        return list(self.slots.layout(range(2, self.g + 1)).labels)

    @property
    def quantum_dim(self) -> int:
        return self.slots.dim ** (self.g - 1)

    @property
    def classical_dim(self) -> int:
        return self.g


def _compile(p: MultiShotProtocol, plan: CatalystPlan, free: State,
             junk: State | None) -> CatalyticProtocol:
    orthogonal = plan.variant != BLOCK
    slots = _Slots(p, plan.k, free, orthogonal)
    meas = p.measure()
    per = len(p.target.layout)
    omega = _catalyst(plan, slots, meas.output, per)
    source_block = State(slots.zeta, slots.layout([1]), NORMALIZED, check=False)
    g = plan.g
    L2 = _lifted(p, p.map, plan, slots)
    ident = identity_channel(slots.layout(range(1, g + 1)))
    cases = {i: ident for i in range(1, g)}
    cases[g] = L2
    control = ControlledOp(cases, {g: 1.0 / meas.p})
    front = {1: plan.m} if plan.variant == TRADEOFF_ALT else {}
    steps = [
        Step(CONTROLLED, control, note="protocol map on the last branch, scaled by 1/p"),
        Step(CLASSICAL_SHIFT, note="register i -> i+1, g -> 1"),
        Step(QUANTUM_SHIFT, front=front, note="slot i -> i+1, g -> 1"),
    ]
    out_layout = p.target.layout.relabel([f"{lab}@1" for lab in p.target.layout.labels])
    if orthogonal:
        P = np.zeros((slots.dim, slots.dim), dtype=np.complex128)
        P[: slots.D, : slots.D] = np.eye(slots.D)
        proj = QuantumOp(slots.layout([1]), slots.layout([1]), kraus=[P], trace_class=NONINCREASING, check=False)
        steps.append(Step(PROJECT, proj, note="accept the outcome P_block of {P_block, P_W}"))
        V = np.eye(slots.dim, slots.D, dtype=np.complex128)
        restrict = QuantumOp(slots.layout([1]), slots.block_layout_at(1), kraus=[V.conj().T],
                             trace_class=NONINCREASING, check=False)
        blk = slots.block_layout_at(1)
        rev = sequence(restrict, discard(blk, blk.labels[:per]))
    else:
        blk = slots.layout([1])
        rev = discard(blk, blk.labels[:per])
    steps.append(Step(REVERSE_EMBED, relabeled(rev, out_layout=out_layout), note="drop padding of slot 1"))
    failure_op = _lifted(p, p.complement, plan, slots) if p.complement is not None else None
    if failure_op is None and junk is None:
        junk = maximally_mixed(p.output_layout())
    expected_p = meas.p * plan.m / g
    return CatalyticProtocol(plan.variant, p, plan, omega, source_block, tuple(steps), plan.k,
                             meas.eps, expected_p, meas.output, failure_op,
                             junk if failure_op is None else None, slots)


def convert_to_catalytic(p: MultiShotProtocol, free_pi: State | None = None,
                         junk: State | None = None) -> CatalyticProtocol:
    """Block-catalyst conversion: one block of ``ceil(n/m)`` copies per target."""
    plan = catalyst_plan(p.n_in, p.m_out, variant=BLOCK)
    return _compile(p, plan, free_pi if free_pi is not None else p.default_free_state(), junk)


def tradeoff_convert(p: MultiShotProtocol, k: int, alt_catalyst: bool = False,
                     free_pi: State | None = None, junk: State | None = None) -> CatalyticProtocol:
    """Conversion consuming ``k`` copies per target at success weight ``p m / ceil(n/k)``.

    ``alt_catalyst`` selects the catalyst whose first ``g - m`` branches hold
    only ``m - 1`` embedded target slots (target independent when ``m = 1``).
    """
    plan = catalyst_plan(p.n_in, p.m_out, k, TRADEOFF_ALT if alt_catalyst else TRADEOFF)
    return _compile(p, plan, free_pi if free_pi is not None else p.default_free_state(), junk)


# --------------------------------------------------------------------------
# execution


def _with_source(cp: CatalyticProtocol, e: FlaggedEnsemble) -> FlaggedEnsemble:
    return e.map_bodies(cp.source_block.tensor)


def _shift_body(cp: CatalyticProtocol, body: State, front: int) -> State:
    g, slots = cp.g, cp.slots
    if g == 1:
        return body
    lab = body.layout.labels
    per_slot = len(slots.template)
    n_slot = g * per_slot
    groups = [list(range((j - 1) * per_slot, j * per_slot)) for j in range(1, g + 1)]
    new = [groups[front - 1]] + [grp for j, grp in enumerate(groups, 1) if j != front]
    order = [i for grp in new for i in grp] + list(range(n_slot, len(lab)))
    out = body.permute(order)
    return out.relabel(list(slots.layout(range(1, g + 1)).labels) + list(lab[n_slot:]))


def _run_steps(cp: CatalyticProtocol, e: FlaggedEnsemble, control: ControlledOp | None = None,
               stop_before: str | None = None) -> tuple[FlaggedEnsemble, dict]:
    """Run the compiled steps on ``e`` (bodies: slots ``1..g`` then spectators)."""
    info: dict = {}
    slot_labels = list(cp.slots.layout(range(1, cp.g + 1)).labels)
    for step in cp.steps:
        if step.kind == stop_before:
            break
        if step.kind == CONTROLLED:
            c = control if control is not None else step.op
            e = apply_controlled(c, e, on=slot_labels)
            info["weight_after_control"] = e.total_weight
            info["physical_scale"] = c.physical_scale
        elif step.kind == CLASSICAL_SHIFT:
            e = cyclic_shift_labels(e)
        elif step.kind == QUANTUM_SHIFT:
            e = FlaggedEnsemble(tuple(
                Branch(b.weight, _shift_body(cp, b.body, step.front.get(b.label, cp.g)), b.label)
                for b in e.branches
            ))
            info["before_output"] = e
        elif step.kind == PROJECT:
            on = cp.slots.labels(1)
            c = ControlledOp({b.label: step.op for b in e.branches})
            rejected = sum(
                b.weight * (b.body.trace - apply(step.op, b.body, on=on).trace) for b in e.branches
            )
            e = apply_controlled(c, e, on=on)
            info["accepted_weight"] = e.total_weight
            info["rejected_weight"] = float(rejected)
            info["after_project"] = e
        elif step.kind == REVERSE_EMBED:
            on = cp.slots.labels(1)
            e = e.map_bodies(lambda b: apply(step.op, b, on=on))
        else:
            raise CatalysisError(f"unknown step {step.kind!r}")
    return e, info


def run_protocol(cp: CatalyticProtocol, catalyst: FlaggedEnsemble | None = None) -> tuple[FlaggedEnsemble, dict]:
    """Run the procedure on ``source_block (x) catalyst`` and return the output ensemble.

    Output bodies hold the target (labels ``output_labels``) followed by the
    catalyst slots; weights sum to the accepted fraction (before the ``p`` factor).
    """
    omega = cp.catalyst if catalyst is None else catalyst
    return _run_steps(cp, _with_source(cp, omega))


# --------------------------------------------------------------------------
# verification


def _normalized_ensemble(e: FlaggedEnsemble) -> FlaggedEnsemble:
    t = e.total_weight
    return FlaggedEnsemble(tuple(Branch(b.weight / t, b.body, b.label) for b in e.branches))


def _marginal_ensemble(e: FlaggedEnsemble, keep) -> FlaggedEnsemble:
    return e.map_bodies(lambda b: b.marginal(keep))


def _averaged(e: FlaggedEnsemble, keep) -> State:
    first = e.branches[0].body.marginal(keep)
    acc = np.zeros_like(first.matrix)
    for b in e.branches:
        acc = acc + b.weight * b.body.marginal(keep).matrix
    acc = acc / e.total_weight
    return State(acc, first.layout, NORMALIZED, check=False)


def correlation_check(nu_sa, phi: State, s_labels=None) -> tuple[float, float, bool]:
    """``Delta(nu_SA, phi (x) nu_A)`` against ``eps + 3 sqrt(eps)``, ``eps = Delta(nu_S, phi)``.

    ``nu_sa`` is a :class:`State` or a (normalized) :class:`FlaggedEnsemble`
    whose register belongs to ``A``; ``s_labels`` names the ``S`` part
    (default: the leading subsystems matching ``phi``).
    """
    if not phi.is_pure(PURE_TOL):
        raise CatalysisError("reference state must be pure")
    e = nu_sa if isinstance(nu_sa, FlaggedEnsemble) else FlaggedEnsemble.of([(1.0, nu_sa, 0)])
    e = _normalized_ensemble(e)
    lay = e.branches[0].body.layout
    if s_labels is None:
        s_labels = lay.labels[: len(phi.layout)]
    s_labels = list(s_labels)
    if lay.select(s_labels).dims != phi.layout.dims:
        raise CatalysisError("reference state does not match the S part")
    a_labels = [lab for lab in lay.labels if lab not in s_labels]

    def product(body: State) -> State:
        rest = body.marginal(a_labels)
        order = [lay.index(x) for x in s_labels] + [lay.index(x) for x in a_labels]
        prod_state = State(np.kron(phi.matrix, rest.matrix), lay.permuted(order), check=False)
        return prod_state.permute([order.index(i) for i in range(len(order))])

    nu_s = _averaged(e, s_labels)
    eps = trace_distance(nu_s.matrix, phi.matrix)
    lhs = ensemble_trace_distance(e, e.map_bodies(product))
    rhs = eps + 3 * np.sqrt(eps)
    return float(lhs), float(rhs), bool(lhs <= rhs + EQ_TOL)


@dataclass
class VerificationReport:
    variant: str
    n: int
    m: int
    k: int
    g: int
    expected_eps: float
    expected_p: float
    protocol_p: float
    success_probability: float
    output_error: float
    output_average_deviation: float
    catalyst_restoration_error: float
    conditional_catalyst_error: float
    weight_after_control: float
    rejected_weight_leak: float
    correlation_bound_lhs: float
    correlation_bound_rhs: float
    failure_weight: float
    failure_catalyst_distance: float
    catalyst_loss_probability: float
    quantum_dim: int
    classical_dim: int
    per_round: list = field(default_factory=list)

    def checks(self, tol: float = RESTORE_TOL) -> dict[str, bool]:
        """Named invariants, each ``True`` when it holds."""
        out = {
            "catalyst_restored": self.catalyst_restoration_error <= tol,
            "output_error_within_eps": self.output_error <= self.expected_eps + tol,
            "output_is_average_marginal": self.output_average_deviation <= tol,
            "success_probability": abs(self.success_probability - self.expected_p) <= tol,
            "control_weight_is_one": abs(self.weight_after_control - 1) <= tol,
            "filler_never_accepted": self.rejected_weight_leak <= tol,
            "correlation_bound": np.isnan(self.correlation_bound_lhs)  # mixed target: not applicable
            or self.correlation_bound_lhs <= self.correlation_bound_rhs + tol,
            "catalyst_loss_at_most_failure": self.catalyst_loss_probability <= 1 - self.protocol_p + tol,
        }
        for r in self.per_round:
            out[f"round{r['round']}_catalyst_restored"] = r["catalyst_error"] <= tol
            out[f"round{r['round']}_targets_equal"] = r["target_spread"] <= tol
            out[f"round{r['round']}_targets_within_eps"] = max(r["target_errors"]) <= self.expected_eps + tol
        return out

    @property
    def passed(self) -> bool:
        return all(self.checks().values())


def _failure(cp: CatalyticProtocol, start: FlaggedEnsemble) -> tuple[float, float]:
    """Failure weight and distance of the post-failure catalyst marginal to ``omega``."""
    q = 1.0 - cp.protocol.measure().p
    if q <= EQ_TOL:
        return 0.0, 0.0
    g = cp.g
    slot_layout = cp.slots.layout(range(1, g + 1))
    branches = []
    for b in start.branches:
        if b.label < g:
            branches.append(Branch(b.weight * q, b.body, b.label))
        elif cp.failure_op is not None:
            out = apply(cp.failure_op, b.body, on=slot_layout.labels)
            tr = out.trace
            branches.append(Branch(b.weight * tr, State(out.matrix / tr, out.layout, NORMALIZED, check=False),
                                   b.label))
        else:
            branches.append(Branch(b.weight * q, _junk_lifted(cp.protocol, cp.plan, cp.slots, cp.failure_junk),
                                   b.label))
    e = FlaggedEnsemble(tuple(branches))
    weight = e.total_weight
    e = cyclic_shift_labels(e)
    e = e.map_bodies(lambda body: _shift_body(cp, body, cp.g))
    cat = _normalized_ensemble(_marginal_ensemble(e, cp.catalyst_labels))
    return float(weight), float(ensemble_trace_distance(cat, cp.catalyst))


def verify(cp: CatalyticProtocol) -> VerificationReport:
    """Run ``cp`` once and measure every claimed property."""
    start = _with_source(cp, cp.catalyst)
    final, info = _run_steps(cp, start)
    scale = info["physical_scale"]
    cat_labels = cp.catalyst_labels
    # the catalyst marginal is read off before any post-selection on slot 1
    pre = info["before_output"]
    restored = _normalized_ensemble(_marginal_ensemble(pre, cat_labels))
    restoration = ensemble_trace_distance(restored, cp.catalyst)
    cond = _normalized_ensemble(_marginal_ensemble(final, cat_labels))
    cond_err = ensemble_trace_distance(cond, cp.catalyst)
    nu_s = _averaged(final, cp.output_labels)
    sigma = cp.protocol.target
    out_err = trace_distance(nu_s.matrix, sigma.matrix)
    per = len(sigma.layout)
    eta = cp.eta
    avg = sum(_eta_marginal_single(eta, per, i) for i in range(cp.plan.m)) / cp.plan.m
    avg_dev = trace_distance(nu_s.matrix, avg)
    if sigma.is_pure(PURE_TOL):
        lhs, rhs, _ = correlation_check(final, sigma, cp.output_labels)
    else:
        lhs, rhs = float("nan"), float("nan")
    fw, fd = _failure(cp, start)
    loss = fw if fd > RESTORE_TOL else 0.0
    return VerificationReport(
        variant=cp.variant, n=cp.plan.n, m=cp.plan.m, k=cp.plan.k, g=cp.g,
        expected_eps=cp.expected_eps, expected_p=cp.expected_p, protocol_p=float(scale),
        success_probability=float(scale * final.total_weight),
        output_error=float(out_err), output_average_deviation=float(avg_dev),
        catalyst_restoration_error=float(restoration), conditional_catalyst_error=float(cond_err),
        weight_after_control=float(info["weight_after_control"]),
        rejected_weight_leak=_filler_leak(cp, info.get("after_project")),
        correlation_bound_lhs=lhs, correlation_bound_rhs=rhs,
        failure_weight=fw, failure_catalyst_distance=fd, catalyst_loss_probability=loss,
        quantum_dim=cp.quantum_dim, classical_dim=cp.classical_dim,
    )


def _filler_leak(cp: CatalyticProtocol, e: FlaggedEnsemble | None) -> float:
    """Weight left on ``W`` in slot 1 after accepting the block outcome."""
    if e is None:
        return 0.0
    D = cp.slots.D
    leak = 0.0
    for b in e.branches:
        x = b.body.marginal(cp.slots.labels(1)).matrix
        leak += b.weight * float(np.trace(x[D:, D:]).real)
    return abs(leak)


def _eta_marginal_single(eta: State, per: int, i: int) -> np.ndarray:
    return eta.marginal(eta.layout.labels[i * per : (i + 1) * per]).matrix


# --------------------------------------------------------------------------
# reuse


def simulate_reuse(cp: CatalyticProtocol, rounds: int) -> VerificationReport:
    """Feed the catalyst through ``rounds`` fresh source blocks, keeping all outputs.

    Requires a deterministic procedure.  Outputs of earlier rounds ride along
    as spectators at the end of every branch body.
    """
    if rounds < 1:
        raise CatalysisError("rounds must be positive")
    if abs(cp.expected_p - 1) > EQ_TOL:
        raise CatalysisError(f"reuse needs a deterministic procedure, success weight is {cp.expected_p}")
    report = verify(cp)
    sigma = cp.protocol.target
    e = cp.catalyst
    out_names: list[list[str]] = []
    first = None
    for r in range(1, rounds + 1):
        e, _ = _run_steps(cp, _with_source(cp, e))
        names = [f"{lab}#{r}" for lab in sigma.layout.labels]
        lay = e.branches[0].body.layout
        outs = [lay.index(x) for x in cp.output_labels]
        rest = [i for i in range(len(lay)) if i not in outs]
        order = rest + outs
        new_labels = [lay.labels[i] for i in rest] + names
        e = e.map_bodies(lambda b: b.permute(order).relabel(new_labels))
        out_names.append(names)
        cat = _marginal_ensemble(e, cp.catalyst_labels)
        cat_err = ensemble_trace_distance(_normalized_ensemble(cat), cp.catalyst)
        targets = [_averaged(e, nm) for nm in out_names]
        if first is None:
            first = targets[0].matrix
        spread = max(float(np.abs(t.matrix - first).max()) for t in targets)
        errs = [float(trace_distance(t.matrix, sigma.matrix)) for t in targets]
        report.per_round.append(dict(round=r, catalyst_error=float(cat_err), target_errors=errs,
                                     target_spread=spread))
    return report
