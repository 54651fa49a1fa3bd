"""Scheduled marginal computation for coding.

Given an ordered vtree and the inorder variable order, each coding step i
only needs the units conforming to a path of vtree nodes: from the leaf
of the current variable up to the lowest node whose scope contains the
whole prefix.  Values of all other units are either unchanged from
earlier steps (cached) or still 1 (never touched).  The step's marginal
is then a mixture of the top units' values weighted by their top-down
probabilities, so the units above the path are never evaluated at all.

The schedule is purely structural: it is computed once per model and
reused for every sample on both the encoder and the decoder side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .circuit import KIND_INPUT, KIND_SUM, Circuit, flatten
from .errors import ContractError
from .kernels import active as _kern
from .vtree import Vtree


@dataclass
class TopDownProbs:
    """Per-unit sum over root paths of the traversed edge weights.

    Stored in log space: deep circuits push these far below the smallest
    positive double.
    """

    log: np.ndarray

    @property
    def linear(self) -> np.ndarray:
        return np.exp(self.log)


def top_down_probabilities(circuit: Circuit) -> TopDownProbs:
    """Single preorder pass: sums hand their children weighted mass,
    products pass their own mass through."""
    circuit.require_validated()
    n = len(circuit.units)
    log_down = np.full(n, -math.inf, dtype=np.float64)
    log_down[circuit.root] = 0.0
    with np.errstate(divide="ignore"):
        for u in reversed(circuit.units):
            d = log_down[u.uid]
            if d == -math.inf or u.kind == KIND_INPUT:
                continue
            if u.kind == KIND_SUM:
                lw = np.log(u.params)
                for c, w in zip(u.children, lw):
                    log_down[c] = np.logaddexp(log_down[c], d + w)
            else:
                for c in u.children:
                    log_down[c] = np.logaddexp(log_down[c], d)
    return TopDownProbs(log=log_down)


@dataclass
class EvalSchedule:
    """Flattened per-step evaluation plan.

    Step i evaluates units ev_unit[ev_off[i]:ev_off[i+1]] in order; entry
    children reference either an earlier slot of the same step (ec_slot
    >= 0) or the persistent cache (ec_slot == -1, read ec_unit).  Heads
    are the step's units with no parent inside the step; mixing their
    values with the top-down probabilities yields the prefix marginal.
    """

    order: np.ndarray            # int64[D], variable index per step
    ev_off: np.ndarray           # int64[D+1]
    ev_unit: np.ndarray          # int32[total entries]
    ec_off: np.ndarray           # int64[total entries + 1]
    ec_slot: np.ndarray          # int32[total children]
    ec_unit: np.ndarray          # int32[total children]
    ec_logw: np.ndarray          # float64[total children]
    hd_off: np.ndarray           # int64[D+1]
    hd_unit: np.ndarray          # int32[total heads]
    hd_slot: np.ndarray          # int32[total heads]
    groups_per_step: np.ndarray  # int64[D], vtree nodes touched per step
    max_width: int
    max_card: int

    @property
    def n_steps(self) -> int:
        return self.order.shape[0]

    def eval_units(self, i: int) -> np.ndarray:
        return self.ev_unit[self.ev_off[i]:self.ev_off[i + 1]]

    def head_units(self, i: int) -> np.ndarray:
        return self.hd_unit[self.hd_off[i]:self.hd_off[i + 1]]


def build_schedule(circuit: Circuit, vtree: Vtree, conf: np.ndarray,
                   order: np.ndarray) -> EvalSchedule:
    """Precompute the per-step eval/head sets for a variable order.

    Any permutation is accepted (suboptimal orders just evaluate more);
    the inorder order of the ordered vtree gives the logarithmic bound.
    """
    circuit.require_validated()
    d = circuit.num_vars
    order = np.asarray(order, dtype=np.int64)
    if sorted(order.tolist()) != list(range(d)):
        raise ContractError("order is not a permutation of the variables")

    flat = flatten(circuit)
    n = len(circuit.units)

    groups: dict[int, list[int]] = {}
    for u in range(n):
        groups.setdefault(int(conf[u]), []).append(u)

    parent_v = vtree.parent_array()
    leaf_of = vtree.leaf_of_var()
    depth = np.zeros(len(vtree.nodes), dtype=np.int64)
    for nid in range(len(vtree.nodes) - 1, -1, -1):
        p = parent_v[nid]
        depth[nid] = 0 if p < 0 else depth[p] + 1

    unit_parents: list[list[int]] = [[] for _ in range(n)]
    for u in circuit.units:
        for c in u.children:
            unit_parents[c].append(u.uid)

    stamp = np.full(n, -1, dtype=np.int64)
    slot_of = np.zeros(n, dtype=np.int64)

    ev_off = [0]
    hd_off = [0]
    ev_unit: list[int] = []
    ec_off = [0]
    ec_slot: list[int] = []
    ec_unit: list[int] = []
    ec_logw: list[float] = []
    hd_unit: list[int] = []
    hd_slot: list[int] = []
    groups_per_step = np.zeros(d, dtype=np.int64)
    max_width = 0

    v_star = -1
    for i in range(d):
        leaf = leaf_of[int(order[i])]
        # Lowest vtree node containing the whole prefix: LCA of the
        # previous prefix node and the new leaf.
        if v_star < 0:
            v_star = leaf
        else:
            a, b = v_star, leaf
            while a != b:
                if depth[a] < depth[b]:
                    b = parent_v[b]
                else:
                    a = parent_v[a]
            v_star = a
        path = []
        nid = leaf
        while True:
            path.append(nid)
            if nid == v_star:
                break
            nid = parent_v[nid]
        groups_per_step[i] = len(path)

        step_units: list[int] = []
        for nid in path:
            step_units.extend(groups.get(nid, ()))
        for s, u in enumerate(step_units):
            stamp[u] = i
            slot_of[u] = s
        width = len(step_units)
        max_width = max(max_width, width)

        for u in step_units:
            ev_unit.append(u)
            lo, hi = int(flat.ch_off[u]), int(flat.ch_off[u + 1])
            for e in range(lo, hi):
                c = int(flat.ch[e])
                ec_slot.append(int(slot_of[c]) if stamp[c] == i else -1)
                ec_unit.append(c)
                ec_logw.append(float(flat.logw[e]))
            ec_off.append(len(ec_slot))
            if all(stamp[p] != i for p in unit_parents[u]):
                hd_unit.append(u)
                hd_slot.append(int(slot_of[u]))
        ev_off.append(len(ev_unit))
        hd_off.append(len(hd_unit))

    kmax = int(np.max(flat.card[order])) if d else 0
    return EvalSchedule(
        order=order,
        ev_off=np.asarray(ev_off, dtype=np.int64),
        ev_unit=np.asarray(ev_unit, dtype=np.int32),
        ec_off=np.asarray(ec_off, dtype=np.int64),
        ec_slot=np.asarray(ec_slot, dtype=np.int32),
        ec_unit=np.asarray(ec_unit, dtype=np.int32),
        ec_logw=np.asarray(ec_logw, dtype=np.float64),
        hd_off=np.asarray(hd_off, dtype=np.int64),
        hd_unit=np.asarray(hd_unit, dtype=np.int32),
        hd_slot=np.asarray(hd_slot, dtype=np.int32),
        groups_per_step=groups_per_step,
        max_width=max_width,
        max_card=kmax,
    )


@dataclass
class PrefixMarginals:
    """log_f[i] = log p(x_pi(1), ..., x_pi(i+1)); log_f[-1] = log p(x)."""

    log_f: np.ndarray


@dataclass
class ConditionalTable:
    """One coding step: normalized conditionals and their exclusive
    cumulative sums (the left/right interval endpoints come from cum and
    cum + probs)."""

    probs: np.ndarray
    cum: np.ndarray


def prefix_marginals(circuit: Circuit, schedule: EvalSchedule,
                     p_down: TopDownProbs, x) -> PrefixMarginals:
    flat = flatten(circuit)
    return PrefixMarginals(
        log_f=_kern.prefix_sweep(flat, schedule, p_down.log, x))


def conditional_tables(circuit: Circuit, schedule: EvalSchedule,
                       p_down: TopDownProbs, x) -> list[ConditionalTable]:
    """Per-step conditional distributions along x's prefix chain.

    Step i's table is a function of x_pi(1..i) only, so the decoder can
    reproduce it from already-decoded symbols.
    """
    flat = flatten(circuit)
    out = []
    for probs, _ in _kern.table_stream(flat, schedule, p_down.log, x):
        cum = np.concatenate(([0.0], np.cumsum(probs[:-1])))
        out.append(ConditionalTable(probs=probs, cum=cum))
    return out


@dataclass
class ScheduleCountReport:
    per_step_units: np.ndarray
    total_units: int
    per_step_groups: np.ndarray
    total_groups: int
    group_bound: float  # 3 * D * log2(D)

    @property
    def within_bound(self) -> bool:
        return self.total_groups <= self.group_bound


def count_evaluated_units(schedule: EvalSchedule) -> ScheduleCountReport:
    d = schedule.n_steps
    per_units = np.diff(schedule.ev_off)
    bound = 3.0 * d * math.log2(d) if d > 1 else 1.0
    return ScheduleCountReport(
        per_step_units=per_units,
        total_units=int(per_units.sum()),
        per_step_groups=schedule.groups_per_step.copy(),
        total_groups=int(schedule.groups_per_step.sum()),
        group_bound=bound,
    )
