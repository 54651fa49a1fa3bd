"""End-to-end dataset (de)compression and the PCZ1 archive format.

Every sample is coded independently (one codeword per sample, no shared
state), so archives decompress sample-parallel and single-sample rates
match the dataset rate.  The archive never embeds the model; a checksum
ties it to the model file it was produced with.

PCZ1 layout (little-endian):

    magic   "PCZ1" (4 bytes)
    version u32 (= 1)
    model checksum u32
    N       u64   sample count
    D       u32   symbols per sample
    bit lengths u32[N]      exact codeword lengths in bits
    payload               concatenated codewords, each padded to a byte
    checksum u32          CRC-32 of all preceding bytes

Rate accounting: codeword bpd counts the exact bit lengths; the header,
per-sample length table and byte-alignment padding are framing overhead
reported separately in the stats.
"""

from __future__ import annotations

import struct
import time
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from . import model_io
from .circuit import Circuit, binarize_products, flatten, validate
from .coder import PRECISION
from .errors import ChecksumMismatchError, ContractError, FormatError
from .inference import (
    EvalSchedule,
    TopDownProbs,
    build_schedule,
    top_down_probabilities,
)
from .kernels import active as _kern
from .vtree import apply_vtree_order, extract_vtree, optimal_order, order_vtree

ARCHIVE_MAGIC = b"PCZ1"
ARCHIVE_VERSION = 1
LOG2 = np.log(2.0)


@dataclass
class Archive:
    model_checksum: int
    d: int
    bit_lengths: np.ndarray  # uint32[N]
    payload: bytes

    @property
    def n_samples(self) -> int:
        return self.bit_lengths.shape[0]

    @property
    def byte_lengths(self) -> np.ndarray:
        return (self.bit_lengths.astype(np.int64) + 7) // 8

    @property
    def codeword_bits(self) -> int:
        return int(self.bit_lengths.astype(np.int64).sum())

    def to_bytes(self) -> bytes:
        out = bytearray()
        out += ARCHIVE_MAGIC
        out += struct.pack("<IIQI", ARCHIVE_VERSION,
                           self.model_checksum & 0xFFFFFFFF,
                           self.n_samples, self.d)
        out += self.bit_lengths.astype("<u4").tobytes()
        out += self.payload
        out += struct.pack("<I", zlib.crc32(bytes(out)) & 0xFFFFFFFF)
        return bytes(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Archive":
        if len(data) < 24 or data[:4] != ARCHIVE_MAGIC:
            raise FormatError("not a PCZ1 archive")
        stored = struct.unpack("<I", data[-4:])[0]
        if stored != (zlib.crc32(data[:-4]) & 0xFFFFFFFF):
            raise ChecksumMismatchError("archive checksum mismatch")
        version, model_crc, n, d = struct.unpack("<IIQI", data[4:24])
        if version != ARCHIVE_VERSION:
            raise FormatError(f"unsupported archive version {version}")
        pos = 24
        bl = np.frombuffer(data[pos:pos + 4 * n], dtype="<u4")
        if bl.shape[0] != n:
            raise FormatError("archive truncated in length table")
        pos += 4 * n
        payload = data[pos:-4]
        expect = int(((bl.astype(np.int64) + 7) // 8).sum())
        if len(payload) != expect:
            raise FormatError("payload size disagrees with length table")
        return cls(model_checksum=model_crc, d=d,
                   bit_lengths=bl.astype(np.uint32), payload=payload)

    def write(self, path) -> None:
        with open(path, "wb") as f:
            f.write(self.to_bytes())

    @classmethod
    def read(cls, path) -> "Archive":
        with open(path, "rb") as f:
            return cls.from_bytes(f.read())


@dataclass
class CompressStats:
    n_samples: int
    d: int
    theoretical_bpd: float
    codeword_bpd: float
    gap: float
    wall_time: float
    payload_bytes: int
    archive_bytes: int

    def line(self) -> str:
        return (f"samples={self.n_samples} D={self.d} "
                f"theoretical_bpd={self.theoretical_bpd:.4f} "
                f"codeword_bpd={self.codeword_bpd:.4f} gap={self.gap:.4f} "
                f"wall={self.wall_time:.2f}s archive_bytes={self.archive_bytes}")


@dataclass
class PreparedModel:
    """A circuit with everything coding needs precomputed: ordered binary
    form, vtree + conformance, variable order, schedule, top-down
    probabilities, and the checksum archives are tied to."""

    circuit: Circuit
    vtree: object
    conf: np.ndarray
    order: np.ndarray
    schedule: EvalSchedule
    p_down: TopDownProbs
    checksum: int


def prepare_model(circuit: Circuit, vtree=None, conf=None,
                  checksum: int | None = None) -> PreparedModel:
    """Binarize, vtree-order and schedule a circuit for coding.

    When vtree/conf come from a model file the circuit is already in its
    canonical ordered binary form and is used as-is; otherwise the
    canonical form is derived here (the returned circuit may therefore
    differ from the input and is the one to serialize).
    """
    if circuit.flags is None:
        validate(circuit)
    circuit.require_validated()
    if vtree is None or conf is None:
        circuit = binarize_products(circuit)
        vtree, conf = extract_vtree(circuit)
        vtree, swapped = order_vtree(vtree)
        circuit = apply_vtree_order(circuit, conf, swapped)
    order = optimal_order(vtree)
    schedule = build_schedule(circuit, vtree, conf, order)
    p_down = top_down_probabilities(circuit)
    if checksum is None:
        checksum = model_io.model_checksum(circuit, vtree, conf)
    return PreparedModel(circuit=circuit, vtree=vtree, conf=conf, order=order,
                         schedule=schedule, p_down=p_down, checksum=checksum)


def _check_cards(circuit: Circuit, data: np.ndarray) -> None:
    if data.ndim != 2 or data.shape[1] != circuit.num_vars:
        raise ContractError(
            f"data shape {data.shape} does not match D={circuit.num_vars}")
    if data.shape[0]:
        cards = circuit.cardinalities
        hi = data.max(axis=0)
        lo = data.min(axis=0)
        if lo.min() < 0 or np.any(hi >= cards):
            v = int(np.argmax(hi >= cards)) if np.any(hi >= cards) else -1
            raise ContractError(
                f"data exceeds model cardinality (variable {v})")


def compress(circuit: Circuit, schedule: EvalSchedule, p_down: TopDownProbs,
             data: np.ndarray, checksum: int | None = None,
             precision: int = PRECISION, threads: int = 1
             ) -> tuple[Archive, CompressStats]:
    """Encode every row of data into an independent codeword."""
    data = np.asarray(data, dtype=np.int64)
    _check_cards(circuit, data)
    flat = flatten(circuit)
    if checksum is None:
        checksum = model_io.model_checksum(circuit)
    t0 = time.perf_counter()

    def one(i: int):
        return _kern.encode_sample(flat, schedule, p_down.log, data[i],
                                   precision)

    n = data.shape[0]
    if threads > 1 and n > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            results = list(ex.map(one, range(n)))
    else:
        results = [one(i) for i in range(n)]
    wall = time.perf_counter() - t0

    bit_lengths = np.array([r[1] for r in results], dtype=np.uint32)
    payload = b"".join(r[0] for r in results)
    logps = np.array([r[2] for r in results], dtype=np.float64)

    d = circuit.num_vars
    archive = Archive(model_checksum=checksum, d=d, bit_lengths=bit_lengths,
                      payload=payload)
    nd = max(1, n * d)
    theo = float(-logps.sum() / LOG2 / nd)
    code = float(bit_lengths.astype(np.int64).sum() / nd)
    stats = CompressStats(
        n_samples=n, d=d, theoretical_bpd=theo, codeword_bpd=code,
        gap=code - theo, wall_time=wall,
        payload_bytes=len(payload), archive_bytes=len(archive.to_bytes()))
    return archive, stats


def decompress(circuit: Circuit, schedule: EvalSchedule, p_down: TopDownProbs,
               archive: Archive, checksum: int | None = None,
               precision: int = PRECISION, threads: int = 1) -> np.ndarray:
    """Reconstruct the exact dataset from an archive."""
    if checksum is None:
        checksum = model_io.model_checksum(circuit)
    if archive.model_checksum != (checksum & 0xFFFFFFFF):
        raise ChecksumMismatchError(
            f"archive was built with model {archive.model_checksum:#x}, "
            f"got {checksum & 0xFFFFFFFF:#x}")
    if archive.d != circuit.num_vars:
        raise FormatError("archive dimensionality does not match the model")
    flat = flatten(circuit)
    n = archive.n_samples
    offs = np.zeros(n + 1, dtype=np.int64)
    np.cumsum(archive.byte_lengths, out=offs[1:])

    def one(i: int):
        chunk = archive.payload[offs[i]:offs[i + 1]]
        return _kern.decode_sample(flat, schedule, p_down.log, chunk,
                                   int(archive.bit_lengths[i]), precision)

    if threads > 1 and n > 1:
        with ThreadPoolExecutor(max_workers=threads) as ex:
            rows = list(ex.map(one, range(n)))
    else:
        rows = [one(i) for i in range(n)]
    if rows:
        return np.stack(rows).astype(np.int64)
    return np.zeros((0, circuit.num_vars), dtype=np.int64)


def eval_bpd(circuit: Circuit, data: np.ndarray) -> float:
    """Mean -log2 p(x) / D over the dataset (the model's theoretical rate)."""
    data = np.asarray(data, dtype=np.int64)
    _check_cards(circuit, data)
    if data.shape[0] == 0:
        return 0.0
    circuit.require_validated()
    logp = _kern.forward_batch(flatten(circuit), data)
    return float(-logp.mean() / (circuit.num_vars * LOG2))
