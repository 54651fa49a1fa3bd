"""Probabilistic circuit data structure and naive marginal evaluation.

A circuit is a DAG of input/sum/product units stored as a flat list in
topological order (children strictly before parents, the root last).  Sum
units mix same-scope children with normalized weights, product units
multiply disjoint-scope children.  Evaluation runs in natural-log space,
bottom-up, with log-sum-exp at sum units; this is the slow, obviously
correct path that every scheduled/compiled evaluator in this package is
tested against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, StructuralError

NORM_TOL = 1e-9  # sum-unit / input-unit normalization tolerance

KIND_INPUT = 0
KIND_SUM = 1
KIND_PRODUCT = 2


@dataclass(frozen=True)
class Variable:
    """A categorical variable: dense index in [0, D) and cardinality >= 2."""

    index: int
    cardinality: int


@dataclass
class InputUnit:
    uid: int
    var: int
    probs: np.ndarray  # linear-space category probabilities, sums to 1

    kind = KIND_INPUT
    children: tuple = ()


@dataclass
class SumUnit:
    uid: int
    children: list
    params: np.ndarray  # linear-space weights aligned to children, sums to 1

    kind = KIND_SUM


@dataclass
class ProductUnit:
    uid: int
    children: list

    kind = KIND_PRODUCT


# Evidence codes per variable.
EV_FREE = 0
EV_EXACT = 1
EV_BELOW = 2


class Evidence:
    """Per-variable evidence: Free, Exact(v), or Below(v).

    Below(v) selects the cumulative mass of categories strictly less
    than v, which is what the left-side cumulative of an autoregressive
    coding step needs.
    """

    __slots__ = ("codes", "values")

    def __init__(self, codes: np.ndarray, values: np.ndarray):
        self.codes = np.asarray(codes, dtype=np.int8)
        self.values = np.asarray(values, dtype=np.int64)

    @classmethod
    def free(cls, d: int) -> "Evidence":
        return cls(np.zeros(d, dtype=np.int8), np.zeros(d, dtype=np.int64))

    @classmethod
    def exact(cls, x) -> "Evidence":
        x = np.asarray(x, dtype=np.int64)
        return cls(np.full(x.shape[0], EV_EXACT, dtype=np.int8), x.copy())

    def with_exact(self, var: int, value: int) -> "Evidence":
        ev = Evidence(self.codes.copy(), self.values.copy())
        ev.codes[var] = EV_EXACT
        ev.values[var] = value
        return ev

    def with_below(self, var: int, value: int) -> "Evidence":
        ev = Evidence(self.codes.copy(), self.values.copy())
        ev.codes[var] = EV_BELOW
        ev.values[var] = value
        return ev

    def with_free(self, var: int) -> "Evidence":
        ev = Evidence(self.codes.copy(), self.values.copy())
        ev.codes[var] = EV_FREE
        ev.values[var] = 0
        return ev


@dataclass
class ValidationReport:
    smooth: bool
    decomposable: bool
    structured: bool
    alternating: bool
    offenders: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.smooth and self.decomposable


class Circuit:
    """Units in topological order plus per-unit scopes and variable table."""

    def __init__(self, units: list, variables: list[Variable],
                 scopes: list[frozenset]):
        self.units = units
        self.variables = variables
        self.scopes = scopes
        self.flags: ValidationReport | None = None

    @property
    def root(self) -> int:
        return len(self.units) - 1

    @property
    def num_vars(self) -> int:
        return len(self.variables)

    @property
    def cardinalities(self) -> np.ndarray:
        return np.array([v.cardinality for v in self.variables], dtype=np.int64)

    @property
    def num_edges(self) -> int:
        return sum(len(u.children) for u in self.units)

    @property
    def num_params(self) -> int:
        """Free parameters: sum-edge weights plus input category tables."""
        n = 0
        for u in self.units:
            if u.kind == KIND_SUM:
                n += len(u.params)
            elif u.kind == KIND_INPUT:
                n += len(u.probs)
        return n

    def require_validated(self) -> None:
        if self.flags is None or not self.flags.ok:
            raise ContractError(
                "circuit must be validated (smooth + decomposable) first")

    def clone_with_params(self, sum_params: dict, input_probs: dict) -> "Circuit":
        """Copy of this circuit with some unit parameters replaced.

        Structure is untouched, so scopes and validation flags carry over.
        """
        units = []
        for u in self.units:
            if u.kind == KIND_SUM:
                p = sum_params.get(u.uid, u.params)
                units.append(SumUnit(u.uid, list(u.children), np.asarray(p, dtype=np.float64)))
            elif u.kind == KIND_INPUT:
                p = input_probs.get(u.uid, u.probs)
                units.append(InputUnit(u.uid, u.var, np.asarray(p, dtype=np.float64)))
            else:
                units.append(ProductUnit(u.uid, list(u.children)))
        c = Circuit(units, self.variables, self.scopes)
        c.flags = self.flags
        return c


def build_circuit(units: list) -> Circuit:
    """Assemble a circuit from raw units, computing scopes bottom-up.

    Units must already be in topological order with dense ids and every
    child id strictly below its parent.  Variable indices must be dense
    in [0, D) and each variable's cardinality is taken from its input
    units, which must agree.
    """
    n = len(units)
    if n == 0:
        raise StructuralError("empty unit list")

    cards: dict[int, int] = {}
    for i, u in enumerate(units):
        if u.uid != i:
            raise StructuralError(f"unit ids not dense: expected {i}, got {u.uid}")
        if u.kind == KIND_INPUT:
            probs = np.asarray(u.probs, dtype=np.float64)
            if probs.ndim != 1 or probs.shape[0] < 2:
                raise StructuralError(f"unit {i}: input needs >= 2 categories")
            if np.any(probs < 0) or abs(probs.sum() - 1.0) > NORM_TOL:
                raise StructuralError(f"unit {i}: input probs not normalized")
            u.probs = probs
            k = cards.setdefault(u.var, probs.shape[0])
            if k != probs.shape[0]:
                raise StructuralError(
                    f"variable {u.var}: conflicting cardinalities {k} vs {probs.shape[0]}")
        else:
            if len(u.children) == 0:
                raise StructuralError(f"unit {i}: empty children")
            for c in u.children:
                if not (0 <= c < i):
                    raise StructuralError(
                        f"unit {i}: child {c} not strictly before parent")
            if u.kind == KIND_SUM:
                params = np.asarray(u.params, dtype=np.float64)
                if params.shape[0] != len(u.children):
                    raise StructuralError(f"unit {i}: params/children mismatch")
                if np.any(params < 0) or abs(params.sum() - 1.0) > NORM_TOL:
                    raise StructuralError(f"unit {i}: sum params not normalized")
                u.params = params

    d = max(cards) + 1
    missing = [v for v in range(d) if v not in cards]
    if missing:
        raise StructuralError(f"variable indices not dense, missing {missing}")
    variables = [Variable(v, cards[v]) for v in range(d)]

    scopes: list[frozenset] = []
    for u in units:
        if u.kind == KIND_INPUT:
            scopes.append(frozenset((u.var,)))
        else:
            s: frozenset = frozenset()
            for c in u.children:
                s |= scopes[c]
            scopes.append(s)

    circ = Circuit(units, variables, scopes)
    if scopes[circ.root] != frozenset(range(d)):
        raise StructuralError("root scope does not cover all variables")
    return circ


def validate(circuit: Circuit) -> ValidationReport:
    """Check smoothness, decomposability, structured decomposability and
    sum/product alternation; record the flags on the circuit.

    Returns the report rather than raising: offending unit ids are listed
    per property so callers can inspect failures.
    """
    scopes = circuit.scopes
    off_smooth, off_dec, off_sd, off_alt = [], [], [], []

    split_by_scope: dict[frozenset, tuple] = {}
    for u in circuit.units:
        if u.kind == KIND_SUM:
            if any(scopes[c] != scopes[u.uid] for c in u.children):
                off_smooth.append(u.uid)
            if any(circuit.units[c].kind == KIND_SUM for c in u.children):
                off_alt.append(u.uid)
        elif u.kind == KIND_PRODUCT:
            total = 0
            for c in u.children:
                total += len(scopes[c])
            if total != len(scopes[u.uid]):
                off_dec.append(u.uid)
            else:
                split = tuple(scopes[c] for c in u.children)
                seen = split_by_scope.setdefault(scopes[u.uid], split)
                if seen != split:
                    off_sd.append(u.uid)
            if any(circuit.units[c].kind == KIND_PRODUCT for c in u.children):
                off_alt.append(u.uid)

    report = ValidationReport(
        smooth=not off_smooth,
        decomposable=not off_dec,
        structured=not off_dec and not off_sd,
        alternating=not off_alt,
        offenders={
            "smooth": off_smooth,
            "decomposable": off_dec,
            "structured": off_sd,
            "alternating": off_alt,
        },
    )
    circuit.flags = report
    return report


def _input_log_value(unit: InputUnit, code: int, value: int) -> float:
    if code == EV_FREE:
        return 0.0
    if code == EV_EXACT:
        p = unit.probs[value]
    else:  # EV_BELOW: mass strictly below value
        p = float(np.sum(unit.probs[:value]))
    return math.log(p) if p > 0.0 else -math.inf


def evaluate_marginal(circuit: Circuit, evidence: Evidence) -> float:
    """Naive full bottom-up marginal evaluation; returns log probability.

    Free variables contribute 1 at their input units, so any subset of
    variables may be marginalized out in a single O(|p|) pass.
    """
    circuit.require_validated()
    vals = np.empty(len(circuit.units), dtype=np.float64)
    for u in circuit.units:
        if u.kind == KIND_INPUT:
            vals[u.uid] = _input_log_value(u, evidence.codes[u.var],
                                           int(evidence.values[u.var]))
        elif u.kind == KIND_PRODUCT:
            vals[u.uid] = sum(vals[c] for c in u.children)
        else:
            with np.errstate(divide="ignore"):
                logw = np.log(u.params)
            terms = logw + vals[np.asarray(u.children, dtype=np.int64)]
            m = np.max(terms)
            if m == -math.inf:
                vals[u.uid] = -math.inf
            else:
                vals[u.uid] = m + math.log(np.sum(np.exp(terms - m)))
        if math.isnan(vals[u.uid]):
            raise ContractError(f"unit {u.uid}: NaN during evaluation")
    return float(vals[circuit.root])


@dataclass
class BalancednessReport:
    max_group_size: int
    max_group_scope: tuple
    edges_per_var: float
    ratio: float  # max group size / (|p| / D)
    group_sizes: dict  # sorted-scope tuple -> unit count
    sum_group_sizes: dict  # sorted-scope tuple -> sum-unit count


def balancedness_report(circuit: Circuit) -> BalancednessReport:
    """Group units by scope and compare the largest group to |p|/D.

    A circuit where one scope owns much more than |p|/D units loses the
    sub-linear scheduling guarantee; the ratio makes that visible.
    """
    circuit.require_validated()
    groups: dict[tuple, int] = {}
    sum_groups: dict[tuple, int] = {}
    for u in circuit.units:
        key = tuple(sorted(circuit.scopes[u.uid]))
        groups[key] = groups.get(key, 0) + 1
        if u.kind == KIND_SUM:
            sum_groups[key] = sum_groups.get(key, 0) + 1
    max_scope, max_size = max(groups.items(), key=lambda kv: (kv[1], kv[0]))
    per_var = circuit.num_edges / circuit.num_vars
    return BalancednessReport(
        max_group_size=max_size,
        max_group_scope=max_scope,
        edges_per_var=per_var,
        ratio=max_size / per_var,
        group_sizes=groups,
        sum_group_sizes=sum_groups,
    )


def binarize_products(circuit: Circuit) -> Circuit:
    """Rewrite every product with more than two children into a left-nested
    chain of binary products; the distribution is unchanged.

    Products with one or two children pass through untouched, so the
    transform is a fixpoint on already-binary circuits.  Each k-ary
    product contributes k-2 fresh intermediate units, which keeps the
    total edge count at most doubled.
    """
    circuit.require_validated()
    if all(len(u.children) <= 2 for u in circuit.units
           if u.kind == KIND_PRODUCT):
        return circuit

    new_units: list = []
    remap: dict[int, int] = {}

    def emit(u) -> int:
        u.uid = len(new_units)
        new_units.append(u)
        return u.uid

    for u in circuit.units:
        if u.kind == KIND_INPUT:
            remap[u.uid] = emit(InputUnit(-1, u.var, u.probs.copy()))
        elif u.kind == KIND_SUM:
            ch = [remap[c] for c in u.children]
            remap[u.uid] = emit(SumUnit(-1, ch, u.params.copy()))
        else:
            ch = [remap[c] for c in u.children]
            while len(ch) > 2:
                left = emit(ProductUnit(-1, ch[:2]))
                ch = [left] + ch[2:]
            remap[u.uid] = emit(ProductUnit(-1, ch))

    out = build_circuit(new_units)
    validate(out)
    return out


@dataclass
class FlatCircuit:
    """Plain-array mirror of a circuit for the evaluation kernels.

    Sum-edge weights are stored in log space (filled once here, the
    evaluation buffers never re-take logs); input tables are likewise
    log-space, concatenated per input unit.
    """

    num_vars: int
    card: np.ndarray      # int32[D]
    kind: np.ndarray      # uint8[n]
    ch_off: np.ndarray    # int64[n+1]
    ch: np.ndarray        # int32[E]
    logw: np.ndarray      # float64[E], 0.0 on product edges
    var: np.ndarray       # int32[n], -1 for non-inputs
    ip_off: np.ndarray    # int64[n+1]
    ip_logp: np.ndarray   # float64[sum of input cardinalities]

    @property
    def n_units(self) -> int:
        return self.kind.shape[0]

    @property
    def root(self) -> int:
        return self.n_units - 1


def flatten(circuit: Circuit) -> FlatCircuit:
    n = len(circuit.units)
    kind = np.empty(n, dtype=np.uint8)
    var = np.full(n, -1, dtype=np.int32)
    ch_off = np.zeros(n + 1, dtype=np.int64)
    ip_off = np.zeros(n + 1, dtype=np.int64)
    ch_list, logw_list, ip_list = [], [], []
    with np.errstate(divide="ignore"):
        for u in circuit.units:
            kind[u.uid] = u.kind
            if u.kind == KIND_INPUT:
                var[u.uid] = u.var
                ip_list.append(np.log(u.probs))
            else:
                ch_list.append(np.asarray(u.children, dtype=np.int32))
                if u.kind == KIND_SUM:
                    logw_list.append(np.log(u.params))
                else:
                    logw_list.append(np.zeros(len(u.children)))
            ch_off[u.uid + 1] = ch_off[u.uid] + len(u.children)
            klen = len(u.probs) if u.kind == KIND_INPUT else 0
            ip_off[u.uid + 1] = ip_off[u.uid] + klen
    return FlatCircuit(
        num_vars=circuit.num_vars,
        card=circuit.cardinalities.astype(np.int32),
        kind=kind,
        ch_off=ch_off,
        ch=np.concatenate(ch_list) if ch_list else np.zeros(0, dtype=np.int32),
        logw=np.concatenate(logw_list) if logw_list else np.zeros(0),
        var=var,
        ip_off=ip_off,
        ip_logp=np.concatenate(ip_list) if ip_list else np.zeros(0),
    )
