"""Shared fixtures: hand-built example circuits, a random SD circuit
generator, and the brute-force oracles the fast paths are tested against."""

from __future__ import annotations

import itertools
import math

import numpy as np
import pytest

from pczip.circuit import (
    Circuit,
    Evidence,
    InputUnit,
    ProductUnit,
    SumUnit,
    build_circuit,
    evaluate_marginal,
    validate,
)


def arr(*xs) -> np.ndarray:
    return np.asarray(xs, dtype=np.float64)


def four_var_boolean_circuit() -> Circuit:
    """4-variable boolean SD circuit with literal-indicator inputs.

    Under evidence (X0=1, X1=0, X3=1, X2 free) the root marginal is
    exactly 0.056.  Layer structure: literal products over {X0,X1} and
    {X2,X3}, two mixtures per block, two top products, one root mixture.
    """
    units = [
        InputUnit(0, 0, arr(0.0, 1.0)),   # X0 indicator
        InputUnit(1, 1, arr(0.0, 1.0)),   # X1
        InputUnit(2, 1, arr(1.0, 0.0)),   # not X1
        InputUnit(3, 2, arr(0.0, 1.0)),   # X2
        InputUnit(4, 2, arr(1.0, 0.0)),   # not X2
        InputUnit(5, 3, arr(0.0, 1.0)),   # X3
        InputUnit(6, 3, arr(1.0, 0.0)),   # not X3
        ProductUnit(7, [0, 1]),
        ProductUnit(8, [0, 2]),
        SumUnit(9, [7, 8], arr(0.8, 0.2)),
        SumUnit(10, [7, 8], arr(0.9, 0.1)),
        ProductUnit(11, [3, 5]),
        ProductUnit(12, [4, 6]),
        SumUnit(13, [11, 12], arr(0.4, 0.6)),
        SumUnit(14, [11, 12], arr(0.2, 0.8)),
        ProductUnit(15, [9, 13]),
        ProductUnit(16, [10, 14]),
        SumUnit(17, [15, 16], arr(0.6, 0.4)),
    ]
    c = build_circuit(units)
    validate(c)
    return c


def three_var_two_block_circuit() -> Circuit:
    """13-unit, 13-edge SD circuit over 3 binary variables.

    Products over {X1,X2} list the X2 side first, so the ordered vtree's
    inorder traversal is (X2, X1, X0).  Scheduled evaluation touches
    2+9+9 = 20 units under the identity order and 2+6+5 = 13 units under
    the inorder order.
    """
    units = [
        InputUnit(0, 0, arr(0.3, 0.7)),
        InputUnit(1, 0, arr(0.6, 0.4)),
        InputUnit(2, 1, arr(0.2, 0.8)),
        InputUnit(3, 1, arr(0.5, 0.5)),
        InputUnit(4, 2, arr(0.9, 0.1)),
        InputUnit(5, 2, arr(0.4, 0.6)),
        ProductUnit(6, [4, 2]),
        ProductUnit(7, [5, 3]),
        SumUnit(8, [6, 7], arr(0.7, 0.3)),
        SumUnit(9, [7], arr(1.0)),
        ProductUnit(10, [0, 8]),
        ProductUnit(11, [1, 9]),
        SumUnit(12, [10, 11], arr(0.55, 0.45)),
    ]
    c = build_circuit(units)
    validate(c)
    return c


@pytest.fixture
def sd4_circuit() -> Circuit:
    return four_var_boolean_circuit()


@pytest.fixture
def sd3_circuit() -> Circuit:
    return three_var_two_block_circuit()


# ---------------------------------------------------------------------------
# random structured-decomposable circuits
# ---------------------------------------------------------------------------

def _random_vtree_splits(rng, variables):
    """Random binary partition tree over the variables; yields nested
    tuples of variable sets, leaves are single-variable frozensets."""
    if len(variables) == 1:
        return frozenset(variables)
    k = rng.integers(1, len(variables))
    left = list(variables[:k])
    right = list(variables[k:])
    return (_random_vtree_splits(rng, left), _random_vtree_splits(rng, right))


def random_sd_circuit(rng: np.random.Generator, d: int, kmax: int = 4) -> Circuit:
    """Layered smooth SD circuit over a random vtree.

    Every vtree node owns a few product units over the child nodes'
    exported units and a few sum units mixing them; exports of a node
    are its sums, so parentage stays homogeneous and every unit is
    reachable from the root.
    """
    variables = list(rng.permutation(d))
    cards = rng.integers(2, kmax + 1, size=d)
    tree = _random_vtree_splits(rng, variables)

    units: list = []

    def emit(u):
        u.uid = len(units)
        units.append(u)
        return u.uid

    def dirichlet(n):
        return rng.dirichlet(np.ones(n))

    def build(node, is_root=False):
        if isinstance(node, frozenset):
            (var,) = node
            k = int(cards[var])
            n_inputs = int(rng.integers(1, 4)) if not is_root else 2
            inputs = [emit(InputUnit(-1, var, dirichlet(k)))
                      for _ in range(n_inputs)]
            if n_inputs > 1 and rng.random() < 0.5 and not is_root:
                n_sums = int(rng.integers(1, 3))
                return [emit(SumUnit(-1, list(inputs), dirichlet(n_inputs)))
                        for _ in range(n_sums)]
            if is_root:
                return [emit(SumUnit(-1, list(inputs), dirichlet(n_inputs)))]
            return inputs
        left, right = node
        exp_l = build(left)
        exp_r = build(right)
        n_prod = max(len(exp_l), len(exp_r), int(rng.integers(1, 4)))
        prods = [emit(ProductUnit(-1, [exp_l[j % len(exp_l)],
                                       exp_r[j % len(exp_r)]]))
                 for j in range(n_prod)]
        n_sums = 1 if is_root else int(rng.integers(1, 3))
        return [emit(SumUnit(-1, list(prods), dirichlet(n_prod)))
                for _ in range(n_sums)]

    build(tree, is_root=True)
    c = build_circuit(units)
    report = validate(c)
    assert report.ok and report.structured
    return c


# ---------------------------------------------------------------------------
# oracles
# ---------------------------------------------------------------------------

def all_assignments(cards):
    return itertools.product(*(range(int(k)) for k in cards))


def total_mass(circuit: Circuit) -> float:
    """Sum of exp(log p(x)) over every complete assignment."""
    total = 0.0
    for x in all_assignments(circuit.cardinalities):
        total += math.exp(evaluate_marginal(circuit, Evidence.exact(list(x))))
    return total


def naive_eval_sets(circuit: Circuit, order) -> list[set]:
    """Literal per-step transcription of the scheduled-evaluation
    membership conditions, used as an oracle for the vtree-path builder:
    a unit is evaluated at step i iff its scope is exactly the step's
    variable, or it is a sum with an evaluated child, or it is a product
    whose scope contains the step's variable and none of whose children
    covers the whole prefix."""
    out = []
    prefix: set = set()
    for i in range(circuit.num_vars):
        cur = int(order[i])
        prefix = prefix | {cur}
        in_eval: set = set()
        for u in circuit.units:
            sc = circuit.scopes[u.uid]
            if sc == {cur}:
                in_eval.add(u.uid)
            elif u.kind == 1 and any(c in in_eval for c in u.children):
                in_eval.add(u.uid)
            elif (u.kind == 2 and cur in sc
                  and not any(prefix <= circuit.scopes[c] for c in u.children)):
                in_eval.add(u.uid)
        out.append(in_eval)
    return out


def prefix_marginal_oracle(circuit: Circuit, order, x) -> np.ndarray:
    """Naive prefix marginals: one full evaluation per prefix."""
    ev = Evidence.free(circuit.num_vars)
    out = np.empty(len(order), dtype=np.float64)
    for i, var in enumerate(order):
        ev = ev.with_exact(int(var), int(x[int(var)]))
        out[i] = evaluate_marginal(circuit, ev)
    return out


def conditional_oracle(circuit: Circuit, order, x) -> list[np.ndarray]:
    """Naive conditional tables p(X_pi(i) = v | prefix) by enumeration of
    full-evidence marginals."""
    cards = circuit.cardinalities
    ev = Evidence.free(circuit.num_vars)
    out = []
    log_prev = 0.0
    for i, var in enumerate(order):
        var = int(var)
        k = int(cards[var])
        row = np.empty(k, dtype=np.float64)
        for v in range(k):
            row[v] = math.exp(
                evaluate_marginal(circuit, ev.with_exact(var, v)) - log_prev)
        row /= row.sum()
        out.append(row)
        ev = ev.with_exact(var, int(x[var]))
        log_prev = evaluate_marginal(circuit, ev)
    return out


def hclt_pgm_loglik(circuit: Circuit, layout, tree, m: int, x) -> float:
    """Brute-force latent-tree inference: sum over all latent states of
    the product of the conditional tables read back out of the circuit.
    Independent of circuit evaluation."""
    d = tree.num_vars
    prior = circuit.units[layout.sum_ids[tree.root][0]].params
    total = 0.0
    for z in itertools.product(range(m), repeat=d):
        p = prior[z[tree.root]]
        for v in range(d):
            pv = tree.parents[v]
            if pv >= 0:
                p *= circuit.units[layout.sum_ids[v][z[pv]]].params[z[v]]
            p *= circuit.units[layout.input_ids[v][z[v]]].probs[int(x[v])]
        total += p
    return math.log(total)
