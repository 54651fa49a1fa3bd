"""Synthetic tree-structured categorical data.

Samples are drawn from a known tree-shaped model: every variable is
generated from a conditional table given its parent's value.  With
peaked tables the pairwise dependencies are strong enough for the
structure learner to recover the generating tree.
"""

from __future__ import annotations

import numpy as np

from .learner import CLTree


def tree_cpts(rng: np.random.Generator, tree: CLTree, cards,
              concentration: float = 0.3) -> list[np.ndarray]:
    """Random conditional tables: cpts[v][pv, :] = p(x_v | x_parent = pv);
    the root's table has a single row.  Lower concentration -> peakier."""
    cards = np.asarray(cards, dtype=np.int64)
    cpts: list[np.ndarray] = []
    for v in range(tree.num_vars):
        k = int(cards[v])
        rows = 1 if tree.parents[v] < 0 else int(cards[tree.parents[v]])
        cpts.append(rng.dirichlet(np.full(k, concentration), size=rows))
    return cpts


def sample_tree_data(rng: np.random.Generator, n: int, tree: CLTree, cards,
                     concentration: float = 0.3,
                     cpts: list[np.ndarray] | None = None) -> np.ndarray:
    """n samples from the tree model; returns an (n, D) int64 matrix."""
    cards = np.asarray(cards, dtype=np.int64)
    d = tree.num_vars
    if cpts is None:
        cpts = tree_cpts(rng, tree, cards, concentration)

    order = []
    children = tree.children_of()
    stack = [tree.root]
    while stack:
        v = stack.pop()
        order.append(v)
        stack.extend(children[v])

    out = np.zeros((n, d), dtype=np.int64)
    for v in order:
        k = int(cards[v])
        if tree.parents[v] < 0:
            cdf = np.cumsum(cpts[v][0])
            out[:, v] = np.searchsorted(cdf, rng.random(n), side="right")
        else:
            pv = out[:, tree.parents[v]]
            u = rng.random(n)
            cdf = np.cumsum(cpts[v], axis=1)
            out[:, v] = (u[:, None] >= cdf[pv]).sum(axis=1)
    return np.minimum(out, cards[None, :] - 1)
