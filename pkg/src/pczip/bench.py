"""Benchmarks: schedule counting versus the naive evaluator, and
encode/decode throughput for each kernel backend.

The counting table is the empirical side of the sub-linear coding cost:
evaluated vtree-node groups per full prefix sweep stay under
3 * D * log2(D), and evaluated units divided by the naive D * |p| cost
shrinks as D grows.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .codec import prepare_model
from .inference import count_evaluated_units
from .kernels import get_backend
from .learner import HcltSpec, balanced_tree, chain_tree, compile_hclt
from .circuit import flatten
from .synth import sample_tree_data


@dataclass
class CountRow:
    d: int
    shape: str
    edges: int
    groups: int
    group_bound: float
    units: int
    naive_units: int
    ratio: float  # evaluated units / (D * |p|)

    def line(self) -> str:
        return (f"D={self.d:<5} shape={self.shape:<9} |p|={self.edges:<8} "
                f"groups={self.groups:<7} bound={self.group_bound:<10.0f} "
                f"units={self.units:<9} naive={self.naive_units:<10} "
                f"units/(D*|p|)={self.ratio:.5f}")


def _build(d: int, m: int, shape: str, seed: int = 0):
    tree = chain_tree(d) if shape == "chain" else balanced_tree(d)
    cards = np.full(d, 4, dtype=np.int64)
    circuit, _ = compile_hclt(HcltSpec(tree=tree, latents=m, seed=seed), cards)
    return prepare_model(circuit)


def counting_table(dims, m: int = 4, shapes=("chain", "balanced")) -> list[CountRow]:
    rows = []
    for d in dims:
        for shape in shapes:
            prep = _build(d, m, shape)
            rep = count_evaluated_units(prep.schedule)
            edges = prep.circuit.num_edges
            n_units = len(prep.circuit.units)
            rows.append(CountRow(
                d=d, shape=shape, edges=edges,
                groups=rep.total_groups, group_bound=rep.group_bound,
                units=rep.total_units,
                naive_units=d * n_units,
                ratio=rep.total_units / (d * edges)))
    return rows


@dataclass
class ThroughputRow:
    d: int
    backend: str
    encode_sps: float  # samples per second
    decode_sps: float
    codeword_bpd: float

    def line(self) -> str:
        return (f"D={self.d:<5} backend={self.backend:<7} "
                f"encode={self.encode_sps:>9.1f} samples/s "
                f"decode={self.decode_sps:>9.1f} samples/s "
                f"codeword_bpd={self.codeword_bpd:.4f}")


def throughput_table(dims, m: int = 4, n_samples: int = 64,
                     backends=("c", "python"), seed: int = 0,
                     precision: int = 16) -> list[ThroughputRow]:
    rows = []
    rng = np.random.default_rng(seed)
    for d in dims:
        tree = chain_tree(d)
        cards = np.full(d, 4, dtype=np.int64)
        circuit, _ = compile_hclt(HcltSpec(tree=tree, latents=m, seed=seed), cards)
        prep = prepare_model(circuit)
        flat = flatten(prep.circuit)
        data = sample_tree_data(rng, n_samples, tree, cards)
        for name in backends:
            try:
                kern = get_backend(name)
            except (ImportError, ValueError):
                continue
            t0 = time.perf_counter()
            enc = [kern.encode_sample(flat, prep.schedule, prep.p_down.log,
                                      data[i], precision)
                   for i in range(n_samples)]
            t1 = time.perf_counter()
            for i, (blob, nbits, _) in enumerate(enc):
                out = kern.decode_sample(flat, prep.schedule, prep.p_down.log,
                                         blob, nbits, precision)
                if not np.array_equal(out, data[i]):
                    raise AssertionError(
                        f"backend {name}: roundtrip mismatch at sample {i}")
            t2 = time.perf_counter()
            bits = sum(r[1] for r in enc)
            rows.append(ThroughputRow(
                d=d, backend=name,
                encode_sps=n_samples / max(t1 - t0, 1e-9),
                decode_sps=n_samples / max(t2 - t1, 1e-9),
                codeword_bpd=bits / (n_samples * d)))
    return rows
