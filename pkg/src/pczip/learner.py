"""Structure and parameter learning for latent tree circuits.

Pipeline: pairwise mutual information -> maximum-weight spanning tree ->
latent-augmented tree compiled to a smooth, structured-decomposable
circuit -> mini-batch EM warmup with a linear step-size schedule ->
full-batch EM finetuning.  Expected flows (edge responsibilities) drive
both EM modes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .circuit import (
    KIND_INPUT,
    KIND_SUM,
    Circuit,
    InputUnit,
    ProductUnit,
    SumUnit,
    build_circuit,
    flatten,
    validate,
)
from .errors import ContractError
from .kernels import active as _kern

LOG2 = math.log(2.0)


# ---------------------------------------------------------------------------
# mutual information
# ---------------------------------------------------------------------------

@dataclass
class MITable:
    """Symmetric pairwise mutual information in bits; the diagonal is kept
    at zero by convention (self-information is never a spanning-tree
    edge)."""

    values: np.ndarray  # float64[D, D]

    @property
    def num_vars(self) -> int:
        return self.values.shape[0]


def truncate_categories(data: np.ndarray, cards: np.ndarray,
                        truncate_bits: int) -> tuple[np.ndarray, np.ndarray]:
    """Map categories onto their 2**truncate_bits most significant levels.

    Cheapens the MI pass on high-cardinality data; the circuit itself is
    always learned on untruncated data.
    """
    k2 = 1 << truncate_bits
    cards = np.asarray(cards, dtype=np.int64)
    out = data.astype(np.int64, copy=True)
    new_cards = cards.copy()
    for i in range(cards.shape[0]):
        if cards[i] > k2:
            out[:, i] = (out[:, i] * k2) // cards[i]
            new_cards[i] = k2
    return out, new_cards


def pairwise_mi(x: np.ndarray, y: np.ndarray, kx: int, ky: int,
                alpha: float = 1.0) -> float:
    """MI in bits between two category columns with per-cell pseudocount
    alpha.  With alpha=0 and x is y, this is the empirical entropy H(X)."""
    n = x.shape[0]
    joint = np.zeros((kx, ky), dtype=np.float64)
    np.add.at(joint, (x, y), 1.0)
    joint += alpha
    joint /= joint.sum()
    px = joint.sum(axis=1, keepdims=True)
    py = joint.sum(axis=0, keepdims=True)
    mask = joint > 0
    ratio = np.where(mask, joint / (px * py), 1.0)
    return float(np.sum(joint * np.log2(ratio, where=mask, out=np.zeros_like(ratio))))


def mutual_information(data: np.ndarray, cards, truncate_bits: int | None = None,
                       alpha: float = 1.0, block: int = 64) -> MITable:
    """All-pairs MI via blockwise one-hot contractions.

    Laplace pseudocount alpha on every joint cell avoids log 0 on sparse
    pairs; constant columns come out with MI ~ 0 against everything.
    """
    data = np.asarray(data, dtype=np.int64)
    cards = np.asarray(cards, dtype=np.int64)
    if truncate_bits is not None:
        data, cards = truncate_categories(data, cards, truncate_bits)
    n, d = data.shape
    kmax = int(cards.max())

    def onehot(cols):
        oh = np.zeros((n, len(cols), kmax), dtype=np.float64)
        for a, i in enumerate(cols):
            oh[np.arange(n), a, data[:, i]] = 1.0
        return oh

    mi = np.zeros((d, d), dtype=np.float64)
    for i0 in range(0, d, block):
        cols_i = list(range(i0, min(i0 + block, d)))
        oh_i = onehot(cols_i)
        for j0 in range(i0, d, block):
            cols_j = list(range(j0, min(j0 + block, d)))
            oh_j = oh_i if j0 == i0 else onehot(cols_j)
            counts = np.einsum("nak,nbl->abkl", oh_i, oh_j)
            for a, i in enumerate(cols_i):
                for b, j in enumerate(cols_j):
                    if j <= i:
                        continue
                    ki, kj = int(cards[i]), int(cards[j])
                    joint = counts[a, b, :ki, :kj] + alpha
                    joint = joint / joint.sum()
                    px = joint.sum(axis=1, keepdims=True)
                    py = joint.sum(axis=0, keepdims=True)
                    val = float(np.sum(joint * np.log2(joint / (px * py))))
                    mi[i, j] = mi[j, i] = max(val, 0.0)
    return MITable(values=mi)


# ---------------------------------------------------------------------------
# Chow-Liu tree
# ---------------------------------------------------------------------------

@dataclass
class CLTree:
    """Spanning tree as a parent array; parents[root] == -1."""

    parents: np.ndarray  # int64[D]
    root: int = 0

    @property
    def num_vars(self) -> int:
        return self.parents.shape[0]

    def children_of(self) -> list[list[int]]:
        ch: list[list[int]] = [[] for _ in range(self.num_vars)]
        for v, p in enumerate(self.parents):
            if p >= 0:
                ch[p].append(v)
        return ch

    def total_weight(self, mi: MITable) -> float:
        return float(sum(mi.values[v, p]
                         for v, p in enumerate(self.parents) if p >= 0))


def chow_liu_tree(mi: MITable, root: int = 0) -> CLTree:
    """Maximum-MI spanning tree (Kruskal), rooted at `root`.

    Deterministic tie-break: heavier edge first, then smaller endpoint
    pair.
    """
    d = mi.num_vars
    parents = np.full(d, -1, dtype=np.int64)
    if d == 1:
        return CLTree(parents=parents, root=root)

    edges = [(i, j) for i in range(d) for j in range(i + 1, d)]
    edges.sort(key=lambda e: (-mi.values[e[0], e[1]], e[0], e[1]))

    uf = list(range(d))

    def find(a: int) -> int:
        while uf[a] != a:
            uf[a] = uf[uf[a]]
            a = uf[a]
        return a

    adj: list[list[int]] = [[] for _ in range(d)]
    taken = 0
    for i, j in edges:
        ri, rj = find(i), find(j)
        if ri != rj:
            uf[ri] = rj
            adj[i].append(j)
            adj[j].append(i)
            taken += 1
            if taken == d - 1:
                break

    seen = np.zeros(d, dtype=bool)
    seen[root] = True
    stack = [root]
    while stack:
        v = stack.pop()
        for w in adj[v]:
            if not seen[w]:
                seen[w] = True
                parents[w] = v
                stack.append(w)
    return CLTree(parents=parents, root=root)


def chain_tree(d: int) -> CLTree:
    """Path 0 - 1 - ... - d-1 rooted at 0; handy for synthetic models."""
    parents = np.arange(-1, d - 1, dtype=np.int64)
    return CLTree(parents=parents, root=0)


def balanced_tree(d: int) -> CLTree:
    """Heap-shaped tree (node i parents (i-1)//2); maximal branching."""
    parents = np.array([-1] + [(i - 1) // 2 for i in range(1, d)],
                       dtype=np.int64)
    return CLTree(parents=parents, root=0)


# ---------------------------------------------------------------------------
# latent tree -> circuit compilation
# ---------------------------------------------------------------------------

@dataclass
class EmConfig:
    batch_size: int = 1024
    minibatch_epochs: int = 100
    fullbatch_epochs: int = 20
    eta_start: float = 0.1   # linear schedule over mini-batch epochs
    eta_end: float = 0.05
    alpha: float = 0.01      # pseudocount per sum edge / leaf category


@dataclass
class HcltSpec:
    tree: CLTree
    latents: int            # categories per latent variable, >= 2
    em: EmConfig = field(default_factory=EmConfig)
    seed: int = 0
    truncate_bits: int | None = None  # MI pass only


@dataclass
class HcltLayout:
    """Unit-id bookkeeping from compilation, keyed by observed variable.

    input_ids[i][m] models the observed variable given its latent state m;
    sum_ids[i][m] models the subtree below variable i given the parent
    latent state m (the root has a single sum).  Lets tests read the
    conditional probability tables straight out of the circuit.
    """

    input_ids: dict
    prod_ids: dict
    sum_ids: dict


def compile_hclt(spec: HcltSpec, cards, rng: np.random.Generator | None = None
                 ) -> tuple[Circuit, HcltLayout]:
    """Compile the latent tree into a circuit, bottom-up over the tree.

    Each observed leaf contributes M categorical input units; each tree
    node contributes M products over (own inputs x child subtrees) and M
    sums over those products (the root keeps a single sum, which becomes
    the circuit root).  Nodes without children skip the degenerate
    single-child products and mix their input units directly.
    """
    tree, m = spec.tree, spec.latents
    if m < 2:
        raise ContractError("latent cardinality must be >= 2")
    cards = np.asarray(cards, dtype=np.int64)
    if cards.shape[0] != tree.num_vars:
        raise ContractError("cardinalities do not match tree size")
    rng = rng if rng is not None else np.random.default_rng(spec.seed)

    children = tree.children_of()
    units: list = []
    layout = HcltLayout(input_ids={}, prod_ids={}, sum_ids={})

    def emit(u) -> int:
        u.uid = len(units)
        units.append(u)
        return u.uid

    def leaf_probs(k: int) -> np.ndarray:
        p = 1.0 + 0.05 * rng.uniform(-1.0, 1.0, size=k)
        return p / p.sum()

    def sum_params(k: int) -> np.ndarray:
        return rng.dirichlet(np.ones(k))

    # Iterative postorder over the tree.
    order: list[int] = []
    stack = [tree.root]
    while stack:
        v = stack.pop()
        order.append(v)
        stack.extend(children[v])
    order.reverse()

    for v in order:
        k = int(cards[v])
        inputs = [emit(InputUnit(-1, v, leaf_probs(k))) for _ in range(m)]
        layout.input_ids[v] = inputs
        n_sums = 1 if v == tree.root else m
        if children[v]:
            prods = []
            for j in range(m):
                ch = [inputs[j]] + [layout.sum_ids[c][j] for c in children[v]]
                prods.append(emit(ProductUnit(-1, ch)))
            layout.prod_ids[v] = prods
            layout.sum_ids[v] = [
                emit(SumUnit(-1, list(prods), sum_params(m)))
                for _ in range(n_sums)]
        else:
            layout.prod_ids[v] = []
            layout.sum_ids[v] = [
                emit(SumUnit(-1, list(inputs), sum_params(m)))
                for _ in range(n_sums)]

    circ = build_circuit(units)
    validate(circ)
    return circ, layout


def hclt_param_count(d: int, m: int, k: int) -> int:
    """Parameter count of a compiled tree model: per-variable M*K leaf
    probabilities plus M*M sum weights (M at the root)."""
    return d * m * k + (d - 1) * m * m + m


# ---------------------------------------------------------------------------
# expected flows and EM updates
# ---------------------------------------------------------------------------

@dataclass
class FlowAccumulator:
    """Expected-count accumulators aligned to the flattened circuit:
    edge_flow to flat.ch (product edges stay zero), leaf_flow to
    flat.ip_logp."""

    edge_flow: np.ndarray
    leaf_flow: np.ndarray
    loglik: float
    count: int

    def add(self, other: "FlowAccumulator") -> "FlowAccumulator":
        self.edge_flow += other.edge_flow
        self.leaf_flow += other.leaf_flow
        self.loglik += other.loglik
        self.count += other.count
        return self


def em_flows(circuit: Circuit, batch: np.ndarray) -> FlowAccumulator:
    """E-step over a batch: per-edge and per-leaf expected counts.

    The flow of sum edge (n, c) on sample x is
    theta_{n,c} * p_c(x) * d p_root(x)/d p_n(x) / p_root(x); flows out of
    any sum unit add up to the flow into it, and the root's outgoing
    flows sum to 1 per sample.
    """
    circuit.require_validated()
    batch = np.asarray(batch, dtype=np.int64)
    flat = flatten(circuit)
    loglik, edge_flow, leaf_flow = _kern.em_sweep(flat, batch)
    return FlowAccumulator(edge_flow=edge_flow, leaf_flow=leaf_flow,
                           loglik=loglik, count=batch.shape[0])


def em_update(circuit: Circuit, flows: FlowAccumulator, mode: str = "fullbatch",
              eta: float = 1.0, alpha: float = 0.01) -> Circuit:
    """M-step: normalize pseudocounted flows into new parameters.

    fullbatch replaces the parameters with the EM target; minibatch
    blends old and target with step size eta (eta=0 is a no-op).
    """
    if mode not in ("fullbatch", "minibatch"):
        raise ContractError(f"unknown EM mode {mode!r}")
    if mode == "fullbatch":
        eta = 1.0
    flat = flatten(circuit)
    new_sum: dict[int, np.ndarray] = {}
    new_leaf: dict[int, np.ndarray] = {}
    for u in circuit.units:
        if u.kind == KIND_SUM:
            lo, hi = flat.ch_off[u.uid], flat.ch_off[u.uid + 1]
            counts = flows.edge_flow[lo:hi] + alpha
            total = counts.sum()
            if total <= 0.0:
                continue  # no signal and no pseudocount: keep parameters
            target = counts / total
            new_sum[u.uid] = (1.0 - eta) * u.params + eta * target
        elif u.kind == KIND_INPUT:
            lo, hi = flat.ip_off[u.uid], flat.ip_off[u.uid + 1]
            counts = flows.leaf_flow[lo:hi] + alpha
            total = counts.sum()
            if total <= 0.0:
                continue
            target = counts / total
            new_leaf[u.uid] = (1.0 - eta) * u.probs + eta * target
    return circuit.clone_with_params(new_sum, new_leaf)


# ---------------------------------------------------------------------------
# training loop
# ---------------------------------------------------------------------------

@dataclass
class EpochStats:
    phase: str
    epoch: int
    eta: float
    train_bpd: float
    valid_bpd: float | None = None

    def line(self) -> str:
        v = f" valid_bpd={self.valid_bpd:.4f}" if self.valid_bpd is not None else ""
        return (f"[{self.phase}] epoch={self.epoch} eta={self.eta:.4f} "
                f"train_bpd={self.train_bpd:.4f}{v}")


def _bpd(loglik: float, n: int, d: int) -> float:
    return -loglik / (n * d * LOG2)


def train(data: np.ndarray, spec: HcltSpec, cards, valid: np.ndarray | None = None,
          log_fn=None) -> tuple[Circuit, list[EpochStats]]:
    """compile -> mini-batch EM with linear eta schedule -> full-batch EM.

    Returns the trained circuit and the per-epoch stats that also go to
    log_fn (one line per epoch).
    """
    data = np.asarray(data, dtype=np.int64)
    cards = np.asarray(cards, dtype=np.int64)
    n, d = data.shape
    cfg = spec.em
    rng = np.random.default_rng(spec.seed)
    circuit, _ = compile_hclt(spec, cards, rng=rng)
    history: list[EpochStats] = []

    def log(stats: EpochStats):
        history.append(stats)
        if log_fn is not None:
            log_fn(stats.line())

    def valid_bpd(c: Circuit) -> float | None:
        if valid is None or valid.shape[0] == 0:
            return None
        ll = float(_kern.forward_batch(flatten(c), valid).sum())
        return _bpd(ll, valid.shape[0], d)

    for epoch in range(cfg.minibatch_epochs):
        if cfg.minibatch_epochs > 1:
            frac = epoch / (cfg.minibatch_epochs - 1)
        else:
            frac = 0.0
        eta = cfg.eta_start + (cfg.eta_end - cfg.eta_start) * frac
        perm = rng.permutation(n)
        loglik = 0.0
        for lo in range(0, n, cfg.batch_size):
            idx = perm[lo:lo + cfg.batch_size]
            flows = em_flows(circuit, data[idx])
            circuit = em_update(circuit, flows, "minibatch", eta=eta,
                                alpha=cfg.alpha)
            loglik += flows.loglik
        log(EpochStats("minibatch", epoch, eta, _bpd(loglik, n, d),
                       valid_bpd(circuit)))

    for epoch in range(cfg.fullbatch_epochs):
        flows = em_flows(circuit, data)
        circuit = em_update(circuit, flows, "fullbatch", alpha=cfg.alpha)
        log(EpochStats("fullbatch", epoch, 1.0, _bpd(flows.loglik, n, d),
                       valid_bpd(circuit)))

    return circuit, history
