"""rANS streaming entropy coder over integer-quantized conditional CDFs.

Configuration: 16-bit frequency precision, bit-wise renormalization with
states kept below 2**17, zero-initialized encoder state, explicit 17-bit
final flush.  Codewords are bit stacks packed LSB-first into bytes and
consumed from the end by the decoder; a codeword therefore carries its
exact bit length next to the byte payload.

rANS is stack-like: encoding pushes symbols in reverse order after all
tables are known, decoding pops them forward, asking a table provider
for step i's table given the symbols decoded so far.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import PrecisionError, UnencodableSymbolError
from .kernels import active as _kern

PRECISION = 16


@dataclass
class FrequencyTable:
    """Integer frequencies summing to exactly 2**precision.

    Every symbol with positive model probability has freq >= 1, so any
    in-support symbol stays encodable after quantization.
    """

    freqs: np.ndarray      # uint32[K]
    cumfreqs: np.ndarray   # uint32[K], exclusive prefix sums
    precision: int = PRECISION

    @property
    def total(self) -> int:
        return 1 << self.precision


@dataclass
class Codeword:
    data: bytes
    bit_length: int

    @property
    def num_bytes(self) -> int:
        return len(self.data)


def quantize(probs: np.ndarray, precision: int = PRECISION) -> FrequencyTable:
    """Largest-remainder apportionment of probs to a 2**precision grid.

    Deterministic: remainders tie toward the lower symbol index, and the
    floor of one slot per in-support symbol is restored by stealing from
    the smallest remainders first.
    """
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape[0] > (1 << precision):
        raise PrecisionError(
            f"{probs.shape[0]} symbols exceed 2^{precision} slots")
    freqs = _kern.quantize_probs(probs, precision)
    cum = np.zeros_like(freqs)
    np.cumsum(freqs[:-1], out=cum[1:], dtype=np.uint32)
    return FrequencyTable(freqs=freqs, cumfreqs=cum, precision=precision)


def encode(symbols, tables: list[FrequencyTable]) -> Codeword:
    """Encode symbols[i] under tables[i] into a single codeword.

    Encoding walks the symbols in reverse (rANS pops in forward order),
    so all tables must be known up front; the autoregressive model
    computes them in one forward pass before calling this.
    """
    symbols = np.asarray(symbols, dtype=np.int64)
    if symbols.shape[0] != len(tables):
        raise ValueError("one table per symbol required")
    if symbols.shape[0] == 0:
        return Codeword(data=b"", bit_length=0)
    precision = tables[0].precision
    kmax = max(t.freqs.shape[0] for t in tables)
    fr = np.zeros((len(tables), kmax), dtype=np.uint32)
    cm = np.zeros((len(tables), kmax), dtype=np.uint32)
    for i, t in enumerate(tables):
        if t.precision != precision:
            raise ValueError("mixed table precisions")
        k = t.freqs.shape[0]
        fr[i, :k] = t.freqs
        cm[i, :k] = t.cumfreqs
        if fr[i, symbols[i]] == 0:
            raise UnencodableSymbolError(
                f"symbol {symbols[i]} has zero frequency at step {i}")
    data, nbits = _kern.rans_encode(symbols, fr, cm, precision)
    return Codeword(data=data, bit_length=nbits)


def decode(codeword: Codeword, table_provider, n_symbols: int,
           precision: int = PRECISION) -> np.ndarray:
    """Decode n_symbols from a codeword.

    table_provider(prefix) -> FrequencyTable for the next step given the
    list of already-decoded symbols; this is how the conditional model
    drives the decoder.
    """

    def _provider(prefix):
        t = table_provider(prefix)
        return t.freqs, t.cumfreqs

    return _kern.rans_decode_callback(codeword.data, codeword.bit_length,
                                      _provider, n_symbols, precision)


def decode_with_tables(codeword: Codeword,
                       tables: list[FrequencyTable]) -> np.ndarray:
    """Decode against a fixed, fully known table stream."""
    if not tables:
        return np.zeros(0, dtype=np.int64)
    precision = tables[0].precision
    kmax = max(t.freqs.shape[0] for t in tables)
    fr = np.zeros((len(tables), kmax), dtype=np.uint32)
    cm = np.zeros((len(tables), kmax), dtype=np.uint32)
    for i, t in enumerate(tables):
        k = t.freqs.shape[0]
        fr[i, :k] = t.freqs
        cm[i, :k] = t.cumfreqs
    return _kern.rans_decode_tables(codeword.data, codeword.bit_length,
                                    fr, cm, precision)
