"""Vtrees: the binary variable trees a structured-decomposable circuit
conforms to, plus the ordering step that yields the coding variable order.

A circuit with binary products maps every unit to the unique vtree node
sharing its scope; product splits must match the node's child scopes.
Ordering swaps children so the left subtree is never smaller, and the
optimal variable order is the inorder traversal of the ordered vtree.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .circuit import KIND_PRODUCT, Circuit, ProductUnit
from .errors import ContractError, StructuralError


@dataclass
class VtreeNode:
    nid: int
    var: int = -1      # leaf variable, -1 for internal
    left: int = -1
    right: int = -1

    @property
    def is_leaf(self) -> bool:
        return self.var >= 0


class Vtree:
    """Nodes in topological order (children before parents, root last)."""

    def __init__(self, nodes: list[VtreeNode], scopes: list[frozenset]):
        self.nodes = nodes
        self.scopes = scopes
        self.leaf_counts = np.array(
            [1 if n.is_leaf else 0 for n in nodes], dtype=np.int64)
        for n in nodes:
            if not n.is_leaf:
                self.leaf_counts[n.nid] = (
                    self.leaf_counts[n.left] + self.leaf_counts[n.right])
        self.node_of_scope = {scopes[n.nid]: n.nid for n in nodes}

    @property
    def root(self) -> int:
        return len(self.nodes) - 1

    @property
    def num_leaves(self) -> int:
        return int(self.leaf_counts[self.root])

    def parent_array(self) -> np.ndarray:
        par = np.full(len(self.nodes), -1, dtype=np.int64)
        for n in self.nodes:
            if not n.is_leaf:
                par[n.left] = n.nid
                par[n.right] = n.nid
        return par

    def leaf_of_var(self) -> dict[int, int]:
        return {n.var: n.nid for n in self.nodes if n.is_leaf}

    def inorder_vars(self) -> list[int]:
        # Only leaves carry variables, so left-before-right expansion
        # emits them in inorder position.
        out: list[int] = []
        stack = [self.root]
        while stack:
            node = self.nodes[stack.pop()]
            if node.is_leaf:
                out.append(node.var)
            else:
                stack.append(node.right)
                stack.append(node.left)
        return out


def extract_vtree(circuit: Circuit) -> tuple[Vtree, np.ndarray]:
    """Recover the vtree of a validated binary-product SD circuit.

    Returns the vtree and the conformance map (unit id -> vtree node id).
    Raises StructuralError when no consistent vtree exists, i.e. some
    scope has inconsistent product splits or never appears as a split.
    """
    circuit.require_validated()
    if not circuit.flags.structured:
        raise ContractError("circuit is not structured-decomposable")

    # Scope -> canonical split, from any binary product of that scope.
    split_of: dict[frozenset, tuple[frozenset, frozenset]] = {}
    for u in circuit.units:
        if u.kind != KIND_PRODUCT or len(u.children) == 1:
            continue  # single-child products conform by scope alone
        if len(u.children) != 2:
            raise ContractError(
                f"unit {u.uid}: products must be binary before vtree extraction")
        sc = circuit.scopes[u.uid]
        split = (circuit.scopes[u.children[0]], circuit.scopes[u.children[1]])
        prev = split_of.setdefault(sc, split)
        if prev != split:
            raise StructuralError(
                f"scope {sorted(sc)}: inconsistent product splits, no vtree")

    nodes: list[VtreeNode] = []
    scopes: list[frozenset] = []
    built: dict[frozenset, int] = {}

    # Iterative postorder build: deep chain vtrees exceed the recursion
    # limit at D ~ 1000.
    work = [(circuit.scopes[circuit.root], False)]
    while work:
        scope, ready = work.pop()
        if scope in built:
            continue
        if len(scope) == 1:
            nid = len(nodes)
            nodes.append(VtreeNode(nid, var=next(iter(scope))))
            scopes.append(scope)
            built[scope] = nid
            continue
        if scope not in split_of:
            raise StructuralError(
                f"scope {sorted(scope)} has no product split, no vtree")
        l, r = split_of[scope]
        if not ready:
            work.append((scope, True))
            work.append((r, False))
            work.append((l, False))
        else:
            nid = len(nodes)
            nodes.append(VtreeNode(nid, left=built[l], right=built[r]))
            scopes.append(scope)
            built[scope] = nid
    # Variables marginalized into the root via multi-var scopes only are
    # covered; every unit scope must now resolve to a node.
    vtree = Vtree(nodes, scopes)
    conf = np.empty(len(circuit.units), dtype=np.int32)
    for u in circuit.units:
        nid = vtree.node_of_scope.get(circuit.scopes[u.uid])
        if nid is None:
            raise StructuralError(
                f"unit {u.uid}: scope {sorted(circuit.scopes[u.uid])} "
                "not a vtree node scope")
        conf[u.uid] = nid
    return vtree, conf


def order_vtree(vtree: Vtree) -> tuple[Vtree, np.ndarray]:
    """Swap children so every internal node has leaf_count(left) >=
    leaf_count(right); ties keep the original orientation.

    Returns the ordered vtree (same node ids) and a boolean mask of the
    nodes whose children were swapped, so conforming product units can be
    reordered to match.
    """
    swapped = np.zeros(len(vtree.nodes), dtype=bool)
    nodes = []
    for n in vtree.nodes:
        if n.is_leaf:
            nodes.append(VtreeNode(n.nid, var=n.var))
        elif vtree.leaf_counts[n.right] > vtree.leaf_counts[n.left]:
            swapped[n.nid] = True
            nodes.append(VtreeNode(n.nid, left=n.right, right=n.left))
        else:
            nodes.append(VtreeNode(n.nid, left=n.left, right=n.right))
    return Vtree(nodes, list(vtree.scopes)), swapped


def apply_vtree_order(circuit: Circuit, conf: np.ndarray,
                      swapped: np.ndarray) -> Circuit:
    """Reorder binary product children to match a reordered vtree.

    Unit ids, parameters and scopes are unchanged; only child order of
    products conforming to swapped nodes flips.
    """
    units = []
    for u in circuit.units:
        if (u.kind == KIND_PRODUCT and len(u.children) == 2
                and swapped[conf[u.uid]]):
            units.append(ProductUnit(u.uid, [u.children[1], u.children[0]]))
        else:
            units.append(u)
    out = Circuit(units, circuit.variables, circuit.scopes)
    out.flags = circuit.flags
    return out


def optimal_order(vtree: Vtree) -> np.ndarray:
    """Variable order read off an inorder traversal of the (ordered) vtree."""
    return np.asarray(vtree.inorder_vars(), dtype=np.int64)
