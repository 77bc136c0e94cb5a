"""Multi-shot distillation protocols ``rho^{(x)n} -> sigma^{(x)m}`` with measured (eps, p)."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from math import ceil

import numpy as np

from .channels import NONINCREASING, QuantumOp, apply
from .states import NORMALIZED, State, maximally_mixed, tensor_power, trace_distance
from .tensor import SystemLayout

EQ_TOL = 1e-9


class ProtocolError(ValueError):
    pass


@dataclass(frozen=True)
class Measured:
    eps: float
    p: float
    marginal_errors: tuple[float, ...]
    output: State  # normalized L(rho^n) / p


@dataclass(frozen=True, eq=False)
class MultiShotProtocol:
    """A trace-nonincreasing map from ``n`` copies of ``source`` to ``m`` target slots.

    ``complement`` is the completely positive map realized when the protocol
    reports failure, if the protocol defines one (its outputs live on the same
    ``m`` slots).  ``free_state`` is the free state used to pad embeddings;
    it defaults to the maximally mixed state on the source system.
    """

    map: QuantumOp
    n_in: int
    m_out: int
    source: State
    target: State
    declared_eps: float
    declared_p: float
    complement: QuantumOp | None = None
    name: str = "protocol"
    params: dict = field(default_factory=dict)
    free_state: State | None = None

    def __post_init__(self):
        if self.n_in < 1 or self.m_out < 1:
            raise ProtocolError("n and m must be positive")
        if self.source.dim != self.target.dim:
            raise ProtocolError("source and target must live on the same system")
        if self.map.in_dim != self.source.dim**self.n_in:
            raise ProtocolError(f"map input dim {self.map.in_dim} != d^n = {self.source.dim ** self.n_in}")
        if self.map.out_dim != self.target.dim**self.m_out:
            raise ProtocolError(f"map output dim {self.map.out_dim} != d^m = {self.target.dim ** self.m_out}")
        if self.free_state is not None and self.free_state.layout.dims != self.source.layout.dims:
            raise ProtocolError("free state must live on the source system")
        if self.complement is not None and (
            self.complement.in_dim != self.map.in_dim or self.complement.out_dim != self.map.out_dim
        ):
            raise ProtocolError("failure map must have the same shape as the protocol map")

    @property
    def d(self) -> int:
        return self.source.dim

    @property
    def block_size(self) -> int:
        """``k = ceil(n/m)``, the per-output consumption of the one-shot conversion."""
        return ceil(self.n_in / self.m_out)

    def default_free_state(self) -> State:
        return self.free_state if self.free_state is not None else maximally_mixed(self.source.layout)

    def input_layout(self, copies: int | None = None) -> SystemLayout:
        return tensor_power(self.source, self.n_in if copies is None else copies).layout

    def output_layout(self) -> SystemLayout:
        return tensor_power(self.target, self.m_out).layout

    def measure(self) -> Measured:
        """Apply the map to ``rho^{(x)n}``; report success weight and worst marginal error."""
        rho_n = tensor_power(self.source, self.n_in)
        out = apply(self.map, rho_n.with_layout(self.map.in_layout))
        p = out.trace
        if p <= 0:
            raise ProtocolError("protocol never succeeds on its source state")
        eta = State(out.matrix / p, self.output_layout(), NORMALIZED, check=False)
        errs = []
        labels = eta.layout.labels
        per = len(self.target.layout)
        for i in range(self.m_out):
            marg = eta.marginal(labels[i * per : (i + 1) * per])
            errs.append(trace_distance(marg.matrix, self.target.matrix))
        return Measured(max(errs), p, tuple(errs), eta)

    def validate(self, tol: float = EQ_TOL) -> Measured:
        meas = self.measure()
        if abs(meas.p - self.declared_p) >= tol:
            raise ProtocolError(f"success probability {meas.p} differs from declared {self.declared_p}")
        if meas.eps > self.declared_eps + tol:
            raise ProtocolError(f"marginal error {meas.eps} exceeds declared {self.declared_eps}")
        return meas

    def with_measured(self) -> "MultiShotProtocol":
        """Copy whose declared (eps, p) are the measured values."""
        meas = self.measure()
        return replace(self, declared_eps=meas.eps, declared_p=meas.p)

    def deterministic(self) -> "MultiShotProtocol":
        """Success and failure branches merged into one trace-preserving map."""
        if self.complement is None:
            raise ProtocolError("protocol has no failure map to mix in")
        if self.map.trace_class != NONINCREASING and self.declared_p == 1:
            return self
        op = QuantumOp(self.map.in_layout, self.map.out_layout,
                       kraus=list(self.map.kraus) + list(self.complement.kraus))
        det = replace(self, map=op, complement=None, name=f"{self.name}_deterministic")
        return det.with_measured()
