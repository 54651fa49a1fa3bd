"""PCM1 binary model format.

Little-endian throughout.  Layout:

    magic   "PCM1" (4 bytes)
    version u32 (= 1)
    D       u32
    K       u32[D]            per-variable cardinality
    n_units u32
    n_edges u64
    units in topological order, each:
        kind u8               0 input, 1 sum, 2 product
        input:   var u32, probs f64[K[var]]
        sum:     n_ch u32, children u32[n_ch], params f64[n_ch]
        product: n_ch u32, children u32[n_ch]
    sections, each: tag u32, length u64, payload[length]
        tag 1: vtree + conformance map
            n_nodes u32
            per node (children before parents): kind u8
                leaf:     var u32
                internal: left u32, right u32
            conformance u32[n_units]
        tag 2: metadata, UTF-8 JSON
    checksum u32              zlib CRC-32 of all preceding bytes

The vtree section is optional: loading a model without it re-extracts
the vtree from the circuit, which is deterministic for ordered circuits.
"""

from __future__ import annotations

import json
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .circuit import (
    KIND_INPUT,
    KIND_PRODUCT,
    KIND_SUM,
    Circuit,
    InputUnit,
    ProductUnit,
    SumUnit,
    build_circuit,
    validate,
)
from .errors import ChecksumMismatchError, FormatError
from .vtree import Vtree, VtreeNode

MAGIC = b"PCM1"
VERSION = 1
SECTION_VTREE = 1
SECTION_METADATA = 2


def _pack_u32(x: int) -> bytes:
    return struct.pack("<I", x)


def serialize_model(circuit: Circuit, vtree: Vtree | None = None,
                    conf: np.ndarray | None = None,
                    metadata: dict | None = None) -> bytes:
    out = bytearray()
    out += MAGIC
    out += struct.pack("<II", VERSION, circuit.num_vars)
    out += circuit.cardinalities.astype("<u4").tobytes()
    out += struct.pack("<IQ", len(circuit.units), circuit.num_edges)
    for u in circuit.units:
        if u.kind == KIND_INPUT:
            out += struct.pack("<BI", KIND_INPUT, u.var)
            out += np.asarray(u.probs, dtype="<f8").tobytes()
        elif u.kind == KIND_SUM:
            out += struct.pack("<BI", KIND_SUM, len(u.children))
            out += np.asarray(u.children, dtype="<u4").tobytes()
            out += np.asarray(u.params, dtype="<f8").tobytes()
        else:
            out += struct.pack("<BI", KIND_PRODUCT, len(u.children))
            out += np.asarray(u.children, dtype="<u4").tobytes()

    if vtree is not None and conf is not None:
        sec = bytearray()
        sec += _pack_u32(len(vtree.nodes))
        for n in vtree.nodes:
            if n.is_leaf:
                sec += struct.pack("<BI", 0, n.var)
            else:
                sec += struct.pack("<BII", 1, n.left, n.right)
        sec += np.asarray(conf, dtype="<u4").tobytes()
        out += struct.pack("<IQ", SECTION_VTREE, len(sec))
        out += sec
    if metadata is not None:
        blob = json.dumps(metadata, sort_keys=True).encode("utf-8")
        out += struct.pack("<IQ", SECTION_METADATA, len(blob))
        out += blob

    out += struct.pack("<I", zlib.crc32(bytes(out)) & 0xFFFFFFFF)
    return bytes(out)


@dataclass
class ModelFile:
    circuit: Circuit
    vtree: Vtree | None
    conf: np.ndarray | None
    metadata: dict | None
    checksum: int


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError("model file truncated")
        b = self.data[self.pos:self.pos + n]
        self.pos += n
        return b

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return struct.unpack("<I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack("<Q", self.take(8))[0]

    def f64s(self, n: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * n), dtype="<f8").astype(np.float64)

    def u32s(self, n: int) -> np.ndarray:
        return np.frombuffer(self.take(4 * n), dtype="<u4").astype(np.int64)


def deserialize_model(data: bytes) -> ModelFile:
    if len(data) < 8 or data[:4] != MAGIC:
        raise FormatError("not a PCM1 model file")
    stored = struct.unpack("<I", data[-4:])[0]
    actual = zlib.crc32(data[:-4]) & 0xFFFFFFFF
    if stored != actual:
        raise ChecksumMismatchError(
            f"model checksum mismatch: stored {stored:#x}, actual {actual:#x}")

    r = _Reader(data[:-4])
    r.take(4)
    version = r.u32()
    if version != VERSION:
        raise FormatError(f"unsupported model version {version}")
    d = r.u32()
    cards = r.u32s(d)
    n_units = r.u32()
    r.u64()  # edge count, re-derived from the units

    units: list = []
    for _ in range(n_units):
        kind = r.u8()
        if kind == KIND_INPUT:
            var = r.u32()
            probs = r.f64s(int(cards[var]))
            units.append(InputUnit(-1, var, probs))
        elif kind == KIND_SUM:
            n_ch = r.u32()
            ch = r.u32s(n_ch).tolist()
            params = r.f64s(n_ch)
            units.append(SumUnit(-1, ch, params))
        elif kind == KIND_PRODUCT:
            n_ch = r.u32()
            units.append(ProductUnit(-1, r.u32s(n_ch).tolist()))
        else:
            raise FormatError(f"unknown unit kind {kind}")
    for i, u in enumerate(units):
        u.uid = i

    vtree = conf = metadata = None
    while r.pos < len(r.data):
        tag = r.u32()
        length = r.u64()
        payload = r.take(length)
        if tag == SECTION_VTREE:
            pr = _Reader(payload)
            n_nodes = pr.u32()
            nodes = []
            scopes: list[frozenset] = []
            for nid in range(n_nodes):
                k = pr.u8()
                if k == 0:
                    v = pr.u32()
                    nodes.append(VtreeNode(nid, var=v))
                    scopes.append(frozenset((v,)))
                else:
                    left, right = pr.u32(), pr.u32()
                    nodes.append(VtreeNode(nid, left=left, right=right))
                    scopes.append(scopes[left] | scopes[right])
            vtree = Vtree(nodes, scopes)
            conf = pr.u32s(n_units).astype(np.int32)
        elif tag == SECTION_METADATA:
            metadata = json.loads(payload.decode("utf-8"))
        # unknown sections are skipped for forward compatibility

    circuit = build_circuit(units)
    validate(circuit)
    if not np.array_equal(circuit.cardinalities, cards):
        raise FormatError("cardinality table disagrees with input units")
    return ModelFile(circuit=circuit, vtree=vtree, conf=conf,
                     metadata=metadata, checksum=stored)


def write_model(path, circuit: Circuit, vtree: Vtree | None = None,
                conf: np.ndarray | None = None,
                metadata: dict | None = None) -> int:
    """Write a model file; returns its checksum (also the trailing u32)."""
    blob = serialize_model(circuit, vtree, conf, metadata)
    with open(path, "wb") as f:
        f.write(blob)
    return struct.unpack("<I", blob[-4:])[0]


def read_model(path) -> ModelFile:
    with open(path, "rb") as f:
        return deserialize_model(f.read())


def model_checksum(circuit: Circuit, vtree: Vtree | None = None,
                   conf: np.ndarray | None = None,
                   metadata: dict | None = None) -> int:
    blob = serialize_model(circuit, vtree, conf, metadata)
    return struct.unpack("<I", blob[-4:])[0]
