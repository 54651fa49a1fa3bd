"""Pure-numpy kernel backend.

Semantics reference for the Cython extension: every routine here has a
compiled twin in _ckern.pyx with the same contract.  Loops run per unit
(vectorized over categories / batch where possible), so this backend is
correct but slow; it exists so the package works without a compiler and
so the compiled kernels have something to be tested against.

rANS configuration: 16-bit frequency precision, bit-wise renormalization
with a zero-initialized state below 2**17, and an explicit 17-bit final
state flush.  The stream is a bit stack packed LSB-first into bytes; the
decoder consumes it from the end.  Starting from state 0 instead of the
renormalization floor makes the flush cost ~1 bit instead of ~16, which
is what keeps the per-sample codeword within a few bits of -log2 p(x).
"""

from __future__ import annotations

import math

import numpy as np

from ..errors import (
    CorruptStreamError,
    ImpossiblePrefixError,
    NumericalError,
    PrecisionError,
    UnencodableSymbolError,
)

NEG_INF = -math.inf


# ---------------------------------------------------------------------------
# forward evaluation / EM sweeps (full-evidence, batched)
# ---------------------------------------------------------------------------

def forward_batch(flat, X, chunk: int = 256) -> np.ndarray:
    """Log-likelihood of each complete row of X under the circuit."""
    X = np.asarray(X, dtype=np.int64)
    out = np.empty(X.shape[0], dtype=np.float64)
    for lo in range(0, X.shape[0], chunk):
        hi = min(lo + chunk, X.shape[0])
        logv = _forward_values(flat, X[lo:hi])
        out[lo:hi] = logv[flat.root]
    return out


def _forward_values(flat, X) -> np.ndarray:
    n, b = flat.n_units, X.shape[0]
    logv = np.empty((n, b), dtype=np.float64)
    for u in range(n):
        k = flat.kind[u]
        if k == 0:
            base = flat.ip_off[u]
            logv[u] = flat.ip_logp[base + X[:, flat.var[u]]]
        else:
            lo, hi = flat.ch_off[u], flat.ch_off[u + 1]
            ch = flat.ch[lo:hi]
            if k == 2:
                logv[u] = logv[ch].sum(axis=0)
            else:
                terms = flat.logw[lo:hi, None] + logv[ch]
                m = terms.max(axis=0)
                safe = m > NEG_INF
                acc = np.exp(terms - np.where(safe, m, 0.0)).sum(axis=0)
                logv[u] = np.where(safe, m + np.log(acc), NEG_INF)
    return logv


def em_sweep(flat, X, chunk: int = 128):
    """One E-pass over X: returns (total loglik, per-edge flows aligned to
    flat.ch, per-input-category flows aligned to flat.ip_logp)."""
    X = np.asarray(X, dtype=np.int64)
    edge_flow = np.zeros(flat.ch.shape[0], dtype=np.float64)
    leaf_flow = np.zeros(flat.ip_logp.shape[0], dtype=np.float64)
    total = 0.0
    for lo in range(0, X.shape[0], chunk):
        hi = min(lo + chunk, X.shape[0])
        total += _em_chunk(flat, X[lo:hi], edge_flow, leaf_flow)
    return total, edge_flow, leaf_flow


def _em_chunk(flat, X, edge_flow, leaf_flow) -> float:
    n, b = flat.n_units, X.shape[0]
    logv = _forward_values(flat, X)
    logp = logv[flat.root]
    if np.any(logp == NEG_INF):
        bad = int(np.argmax(logp == NEG_INF))
        raise NumericalError(f"zero-likelihood sample at batch index {bad}")

    logd = np.full((n, b), NEG_INF, dtype=np.float64)
    logd[flat.root] = 0.0
    for u in range(n - 1, -1, -1):
        k = flat.kind[u]
        if k == 0:
            w = np.exp(logd[u] + logv[u] - logp)
            np.add.at(leaf_flow, flat.ip_off[u] + X[:, flat.var[u]], w)
            continue
        lo, hi = flat.ch_off[u], flat.ch_off[u + 1]
        if k == 1:
            for e in range(lo, hi):
                c = flat.ch[e]
                contrib = logd[u] + flat.logw[e]
                logd[c] = np.logaddexp(logd[c], contrib)
                edge_flow[e] += np.exp(contrib + logv[c] - logp).sum()
        else:
            # p_c = 0 forces every flow through c to 0, so its share of
            # the derivative can be dropped instead of forming inf - inf.
            ok = logd[u] > NEG_INF
            for e in range(lo, hi):
                c = flat.ch[e]
                contrib = np.where(ok & (logv[c] > NEG_INF),
                                   logd[u] + logv[u] - logv[c], NEG_INF)
                logd[c] = np.logaddexp(logd[c], contrib)
    return float(logp.sum())


# ---------------------------------------------------------------------------
# scheduled evaluation (prefix marginals / per-step conditional tables)
# ---------------------------------------------------------------------------

class _StepEvaluator:
    """Per-sample scratch state for one scheduled left-to-right sweep.

    The cache holds every unit's committed log value; untouched units
    stay at log 1 = 0.0, which is exactly the all-free initialization the
    schedule relies on.
    """

    def __init__(self, flat, sched, logpdown):
        self.flat = flat
        self.sched = sched
        self.logpdown = logpdown
        self.cache = np.zeros(flat.n_units, dtype=np.float64)
        self.logf_prev = 0.0
        self._tmp = np.empty((sched.max_width, sched.max_card),
                             dtype=np.float64)

    def step_logf(self, i: int) -> np.ndarray:
        """Log joint p(prefix, X_pi(i)=v) for all v, before normalization."""
        flat, sched = self.flat, self.sched
        var = sched.order[i]
        k = flat.card[var]
        lo, hi = sched.ev_off[i], sched.ev_off[i + 1]
        tmp = self._tmp
        for e in range(lo, hi):
            u = sched.ev_unit[e]
            slot = e - lo
            kd = flat.kind[u]
            if kd == 0:
                base = flat.ip_off[u]
                tmp[slot, :k] = flat.ip_logp[base:base + k]
                continue
            clo, chi = sched.ec_off[e], sched.ec_off[e + 1]
            if kd == 2:
                acc = np.zeros(k, dtype=np.float64)
                for j in range(clo, chi):
                    s = sched.ec_slot[j]
                    if s >= 0:
                        acc += tmp[s, :k]
                    else:
                        acc += self.cache[sched.ec_unit[j]]
                tmp[slot, :k] = acc
            else:
                terms = np.empty((chi - clo, k), dtype=np.float64)
                for j in range(clo, chi):
                    s = sched.ec_slot[j]
                    v = tmp[s, :k] if s >= 0 else self.cache[sched.ec_unit[j]]
                    terms[j - clo] = sched.ec_logw[j] + v
                m = terms.max(axis=0)
                safe = m > NEG_INF
                acc = np.exp(terms - np.where(safe, m, 0.0)).sum(axis=0)
                tmp[slot, :k] = np.where(safe, m + np.log(acc), NEG_INF)

        hlo, hhi = sched.hd_off[i], sched.hd_off[i + 1]
        terms = (self.logpdown[sched.hd_unit[hlo:hhi], None]
                 + tmp[sched.hd_slot[hlo:hhi], :k])
        m = terms.max(axis=0)
        safe = m > NEG_INF
        acc = np.exp(terms - np.where(safe, m, 0.0)).sum(axis=0)
        return np.where(safe, m + np.log(acc), NEG_INF)

    def commit(self, i: int, value: int, logf: np.ndarray) -> None:
        sched = self.sched
        lo, hi = sched.ev_off[i], sched.ev_off[i + 1]
        self.cache[sched.ev_unit[lo:hi]] = self._tmp[:hi - lo, value]
        self.logf_prev = float(logf[value])


def prefix_sweep(flat, sched, logpdown, x) -> np.ndarray:
    """Log prefix marginals F[i] = log p(x_pi(1..i+1)), i in [0, D)."""
    x = np.asarray(x, dtype=np.int64)
    ev = _StepEvaluator(flat, sched, logpdown)
    out = np.empty(sched.n_steps, dtype=np.float64)
    for i in range(sched.n_steps):
        logf = ev.step_logf(i)
        if np.any(np.isnan(logf)):
            raise NumericalError(f"non-finite value at step {i}")
        ev.commit(i, int(x[sched.order[i]]), logf)
        out[i] = ev.logf_prev
    return out


def table_stream(flat, sched, logpdown, x):
    """Per-step normalized conditional tables (linear space) for input x.

    Yields (probs, logf_vec) per step; probs sums to 1.  Step i depends
    only on the committed values of steps < i, matching what an
    incremental decoder sees.
    """
    x = np.asarray(x, dtype=np.int64)
    ev = _StepEvaluator(flat, sched, logpdown)
    out = []
    for i in range(sched.n_steps):
        logf = ev.step_logf(i)
        probs = _normalize_table(logf, ev.logf_prev, i)
        out.append((probs, logf.copy()))
        ev.commit(i, int(x[sched.order[i]]), logf)
    return out


def _normalize_table(logf: np.ndarray, logf_prev: float, step: int) -> np.ndarray:
    if logf_prev == NEG_INF:
        raise ImpossiblePrefixError(f"prefix has zero probability at step {step}")
    probs = np.exp(logf - logf_prev)
    total = probs.sum()
    if not np.isfinite(total) or total <= 0.0:
        raise NumericalError(f"bad conditional table at step {step}")
    return probs / total


# ---------------------------------------------------------------------------
# frequency quantization
# ---------------------------------------------------------------------------

def quantize_probs(probs: np.ndarray, precision: int) -> np.ndarray:
    """Deterministic largest-remainder apportionment to 2**precision.

    Every symbol with positive probability gets frequency >= 1; ties are
    broken toward the lower symbol index.  The compiled backend must
    reproduce this function bit-for-bit, since encoder and decoder both
    derive their tables from it.
    """
    probs = np.asarray(probs, dtype=np.float64)
    total = 1 << precision
    k = probs.shape[0]
    support = [v for v in range(k) if probs[v] > 0.0]
    ns = len(support)
    if ns == 0:
        raise UnencodableSymbolError("no symbol has positive probability")
    if ns > total:
        raise PrecisionError(f"{ns} in-support symbols exceed 2^{precision}")

    psum = 0.0
    for v in support:
        psum += probs[v]
    freq = np.zeros(k, dtype=np.uint32)
    rem = np.zeros(k, dtype=np.float64)
    t = 0
    for v in support:
        target = probs[v] / psum * total
        base = int(math.floor(target))
        rem[v] = target - base
        if base < 1:
            base = 1
        freq[v] = base
        t += base

    order = sorted(support, key=lambda v: (-rem[v], v))
    j = 0
    while t < total:
        freq[order[j % ns]] += 1
        t += 1
        j += 1
    j = ns - 1
    while t > total:
        v = order[j]
        if freq[v] > 1:
            freq[v] -= 1
            t -= 1
        j = j - 1 if j > 0 else ns - 1
    return freq


def _cumulative(freq: np.ndarray) -> np.ndarray:
    cum = np.zeros(freq.shape[0], dtype=np.uint32)
    np.cumsum(freq[:-1], out=cum[1:], dtype=np.uint32)
    return cum


# ---------------------------------------------------------------------------
# rANS core (bit-renormalized, stack semantics)
# ---------------------------------------------------------------------------

class _BitWriter:
    __slots__ = ("buf", "nbits")

    def __init__(self):
        self.buf = bytearray()
        self.nbits = 0

    def push(self, bit: int) -> None:
        if (self.nbits & 7) == 0:
            self.buf.append(0)
        self.buf[-1] |= bit << (self.nbits & 7)
        self.nbits += 1


class _BitReader:
    """Pops bits from the end of the stream (stack order)."""

    __slots__ = ("buf", "pos")

    def __init__(self, data: bytes, bit_length: int):
        if bit_length > 8 * len(data):
            raise CorruptStreamError("bit length exceeds payload")
        self.buf = data
        self.pos = bit_length

    def pop(self) -> int:
        self.pos -= 1
        return (self.buf[self.pos >> 3] >> (self.pos & 7)) & 1


_STATE_LO = 1 << 16  # renormalization floor; also 2**precision
_FLUSH_BITS = 17     # states stay below 2**17 between symbols


def _rans_push(state: int, freq: int, cum: int, precision: int,
               writer: _BitWriter) -> int:
    if freq == 0:
        raise UnencodableSymbolError("symbol has zero frequency")
    limit = freq << 1
    while state >= limit:
        writer.push(state & 1)
        state >>= 1
    return ((state // freq) << precision) + (state % freq) + cum


def _rans_init_decoder(reader: _BitReader) -> int:
    state = 0
    for _ in range(min(_FLUSH_BITS, reader.pos)):
        state = (state << 1) | reader.pop()
    return state


def _rans_pop(state: int, freqs, cums, precision: int,
              reader: _BitReader) -> tuple[int, int]:
    mask = (1 << precision) - 1
    slot = state & mask
    sym = -1
    for v in range(freqs.shape[0]):
        f = int(freqs[v])
        if f and int(cums[v]) <= slot < int(cums[v]) + f:
            sym = v
            break
    if sym < 0:
        raise CorruptStreamError("code point outside every symbol range")
    state = int(freqs[sym]) * (state >> precision) + slot - int(cums[sym])
    while state < _STATE_LO and reader.pos > 0:
        state = (state << 1) | reader.pop()
    return sym, state


def rans_encode(symbols, freqs, cums, precision: int):
    """Encode symbols[i] under table row i (reverse-order push), returning
    (payload bytes, bit length).  freqs/cums are (n, K) uint32 rows."""
    symbols = np.asarray(symbols, dtype=np.int64)
    w = _BitWriter()
    state = 0
    for i in range(symbols.shape[0] - 1, -1, -1):
        v = int(symbols[i])
        state = _rans_push(state, int(freqs[i, v]), int(cums[i, v]),
                           precision, w)
    for j in range(_FLUSH_BITS):
        w.push((state >> j) & 1)
    return bytes(w.buf), w.nbits


def rans_decode_tables(data: bytes, bit_length: int, freqs, cums,
                       precision: int) -> np.ndarray:
    """Decode len(freqs) symbols with a fixed (n, K) table stream."""
    r = _BitReader(data, bit_length)
    state = _rans_init_decoder(r)
    n = freqs.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        out[i], state = _rans_pop(state, freqs[i], cums[i], precision, r)
    if state != 0 or r.pos != 0:
        raise CorruptStreamError("stream not fully consumed")
    return out


def rans_decode_callback(data: bytes, bit_length: int, provider, n: int,
                         precision: int) -> np.ndarray:
    """Decode n symbols; provider(decoded_prefix_list) -> (freqs, cums)."""
    r = _BitReader(data, bit_length)
    state = _rans_init_decoder(r)
    out: list[int] = []
    for _ in range(n):
        freqs, cums = provider(out)
        sym, state = _rans_pop(state, np.asarray(freqs, dtype=np.uint32),
                               np.asarray(cums, dtype=np.uint32), precision, r)
        out.append(sym)
    if state != 0 or r.pos != 0:
        raise CorruptStreamError("stream not fully consumed")
    return np.asarray(out, dtype=np.int64)


# ---------------------------------------------------------------------------
# integrated per-sample codecs (tables + rANS in one pass)
# ---------------------------------------------------------------------------

def encode_sample(flat, sched, logpdown, x, precision: int):
    """Compress one complete sample; returns (payload, bit_length, logp).

    Tables are computed forward (the decoder can reproduce them), symbols
    are pushed in reverse, matching the stack discipline of rANS.
    """
    x = np.asarray(x, dtype=np.int64)
    d = sched.n_steps
    ev = _StepEvaluator(flat, sched, logpdown)
    kmax = sched.max_card
    fr = np.zeros((d, kmax), dtype=np.uint32)
    cm = np.zeros((d, kmax), dtype=np.uint32)
    syms = np.empty(d, dtype=np.int64)
    for i in range(d):
        var = sched.order[i]
        k = flat.card[var]
        logf = ev.step_logf(i)
        probs = _normalize_table(logf, ev.logf_prev, i)
        fr[i, :k] = quantize_probs(probs, precision)
        cm[i, :k] = _cumulative(fr[i, :k])
        syms[i] = x[var]
        ev.commit(i, int(syms[i]), logf)
    data, nbits = rans_encode(syms, fr, cm, precision)
    return data, nbits, ev.logf_prev


def decode_sample(flat, sched, logpdown, data: bytes, bit_length: int,
                  precision: int) -> np.ndarray:
    """Inverse of encode_sample; returns the sample indexed by variable."""
    ev = _StepEvaluator(flat, sched, logpdown)
    r = _BitReader(data, bit_length)
    state = _rans_init_decoder(r)
    x = np.empty(flat.num_vars, dtype=np.int64)
    for i in range(sched.n_steps):
        var = sched.order[i]
        k = flat.card[var]
        logf = ev.step_logf(i)
        probs = _normalize_table(logf, ev.logf_prev, i)
        freq = quantize_probs(probs, precision)
        cum = _cumulative(freq)
        sym, state = _rans_pop(state, freq, cum, precision, r)
        if sym >= k:
            raise CorruptStreamError(f"decoded symbol out of range at step {i}")
        x[var] = sym
        ev.commit(i, sym, logf)
    if state != 0 or r.pos != 0:
        raise CorruptStreamError("stream not fully consumed")
    return x
