# cython: boundscheck=False, wraparound=False, cdivision=True
# cython: initializedcheck=False, nonecheck=False
"""Compiled kernel backend.

Same contracts as pykern (the pure-numpy reference); see that module for
the semantics, including the rANS configuration.  Per backend, encoder
and decoder reproduce bit-identical frequency tables; across backends
only numerical agreement within tolerance is promised.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport INFINITY, exp, floor, isnan, log, log1p
from libc.stdlib cimport free, malloc
from libc.string cimport memset

from ..errors import (
    CorruptStreamError,
    ImpossiblePrefixError,
    NumericalError,
    PrecisionError,
    UnencodableSymbolError,
)

cnp.import_array()

cdef double NEG_INF = -INFINITY

cdef enum:
    STATE_LO = 65536      # 1 << 16, renormalization floor
    FLUSH_BITS = 17


cdef inline double _logaddexp(double a, double b) nogil:
    if a == NEG_INF:
        return b
    if b == NEG_INF:
        return a
    if a < b:
        a, b = b, a
    return a + log1p(exp(b - a))


# ---------------------------------------------------------------------------
# flat circuit view
# ---------------------------------------------------------------------------

cdef struct FlatView:
    int n_units
    int num_vars
    const cnp.uint8_t *kind
    const cnp.int64_t *ch_off
    const cnp.int32_t *ch
    const double *logw
    const cnp.int32_t *var
    const cnp.int64_t *ip_off
    const double *ip_logp
    const cnp.int32_t *card


cdef class _FlatRef:
    """Keeps the numpy arrays of a FlatCircuit alive while a FlatView
    points into them."""
    cdef object arrays
    cdef FlatView view

    def __cinit__(self, flat):
        kind = np.ascontiguousarray(flat.kind, dtype=np.uint8)
        ch_off = np.ascontiguousarray(flat.ch_off, dtype=np.int64)
        ch = np.ascontiguousarray(flat.ch, dtype=np.int32)
        logw = np.ascontiguousarray(flat.logw, dtype=np.float64)
        var = np.ascontiguousarray(flat.var, dtype=np.int32)
        ip_off = np.ascontiguousarray(flat.ip_off, dtype=np.int64)
        ip_logp = np.ascontiguousarray(flat.ip_logp, dtype=np.float64)
        card = np.ascontiguousarray(flat.card, dtype=np.int32)
        self.arrays = (kind, ch_off, ch, logw, var, ip_off, ip_logp, card)
        self.view.n_units = kind.shape[0]
        self.view.num_vars = card.shape[0]
        self.view.kind = <const cnp.uint8_t*> cnp.PyArray_DATA(<cnp.ndarray> kind)
        self.view.ch_off = <const cnp.int64_t*> cnp.PyArray_DATA(<cnp.ndarray> ch_off)
        self.view.ch = <const cnp.int32_t*> cnp.PyArray_DATA(<cnp.ndarray> ch)
        self.view.logw = <const double*> cnp.PyArray_DATA(<cnp.ndarray> logw)
        self.view.var = <const cnp.int32_t*> cnp.PyArray_DATA(<cnp.ndarray> var)
        self.view.ip_off = <const cnp.int64_t*> cnp.PyArray_DATA(<cnp.ndarray> ip_off)
        self.view.ip_logp = <const double*> cnp.PyArray_DATA(<cnp.ndarray> ip_logp)
        self.view.card = <const cnp.int32_t*> cnp.PyArray_DATA(<cnp.ndarray> card)


cdef struct SchedView:
    int n_steps
    int max_width
    int max_card
    const cnp.int64_t *order
    const cnp.int64_t *ev_off
    const cnp.int32_t *ev_unit
    const cnp.int64_t *ec_off
    const cnp.int32_t *ec_slot
    const cnp.int32_t *ec_unit
    const double *ec_logw
    const cnp.int64_t *hd_off
    const cnp.int32_t *hd_unit
    const cnp.int32_t *hd_slot


cdef class _SchedRef:
    cdef object arrays
    cdef SchedView view

    def __cinit__(self, sched):
        order = np.ascontiguousarray(sched.order, dtype=np.int64)
        ev_off = np.ascontiguousarray(sched.ev_off, dtype=np.int64)
        ev_unit = np.ascontiguousarray(sched.ev_unit, dtype=np.int32)
        ec_off = np.ascontiguousarray(sched.ec_off, dtype=np.int64)
        ec_slot = np.ascontiguousarray(sched.ec_slot, dtype=np.int32)
        ec_unit = np.ascontiguousarray(sched.ec_unit, dtype=np.int32)
        ec_logw = np.ascontiguousarray(sched.ec_logw, dtype=np.float64)
        hd_off = np.ascontiguousarray(sched.hd_off, dtype=np.int64)
        hd_unit = np.ascontiguousarray(sched.hd_unit, dtype=np.int32)
        hd_slot = np.ascontiguousarray(sched.hd_slot, dtype=np.int32)
        self.arrays = (order, ev_off, ev_unit, ec_off, ec_slot, ec_unit,
                       ec_logw, hd_off, hd_unit, hd_slot)
        self.view.n_steps = order.shape[0]
        self.view.max_width = sched.max_width
        self.view.max_card = sched.max_card
        self.view.order = <const cnp.int64_t*> cnp.PyArray_DATA(<cnp.ndarray> order)
        self.view.ev_off = <const cnp.int64_t*> cnp.PyArray_DATA(<cnp.ndarray> ev_off)
        self.view.ev_unit = <const cnp.int32_t*> cnp.PyArray_DATA(<cnp.ndarray> ev_unit)
        self.view.ec_off = <const cnp.int64_t*> cnp.PyArray_DATA(<cnp.ndarray> ec_off)
        self.view.ec_slot = <const cnp.int32_t*> cnp.PyArray_DATA(<cnp.ndarray> ec_slot)
        self.view.ec_unit = <const cnp.int32_t*> cnp.PyArray_DATA(<cnp.ndarray> ec_unit)
        self.view.ec_logw = <const double*> cnp.PyArray_DATA(<cnp.ndarray> ec_logw)
        self.view.hd_off = <const cnp.int64_t*> cnp.PyArray_DATA(<cnp.ndarray> hd_off)
        self.view.hd_unit = <const cnp.int32_t*> cnp.PyArray_DATA(<cnp.ndarray> hd_unit)
        self.view.hd_slot = <const cnp.int32_t*> cnp.PyArray_DATA(<cnp.ndarray> hd_slot)


# ---------------------------------------------------------------------------
# forward evaluation / EM
# ---------------------------------------------------------------------------

cdef double _forward_one(FlatView *fv, const cnp.int64_t *x, double *logv) nogil:
    cdef int u, k
    cdef cnp.int64_t e, lo, hi
    cdef double acc, m, t
    for u in range(fv.n_units):
        k = fv.kind[u]
        if k == 0:
            logv[u] = fv.ip_logp[fv.ip_off[u] + x[fv.var[u]]]
        elif k == 2:
            acc = 0.0
            lo = fv.ch_off[u]; hi = fv.ch_off[u + 1]
            for e in range(lo, hi):
                acc += logv[fv.ch[e]]
            logv[u] = acc
        else:
            lo = fv.ch_off[u]; hi = fv.ch_off[u + 1]
            m = NEG_INF
            for e in range(lo, hi):
                t = fv.logw[e] + logv[fv.ch[e]]
                if t > m:
                    m = t
            if m == NEG_INF:
                logv[u] = NEG_INF
            else:
                acc = 0.0
                for e in range(lo, hi):
                    acc += exp(fv.logw[e] + logv[fv.ch[e]] - m)
                logv[u] = m + log(acc)
    return logv[fv.n_units - 1]


def forward_batch(flat, X, int chunk=256):
    cdef _FlatRef fr = _FlatRef(flat)
    cdef FlatView *fv = &fr.view
    X = np.ascontiguousarray(X, dtype=np.int64)
    cdef cnp.int64_t[:, ::1] xm = X
    cdef int n = xm.shape[0]
    out = np.empty(n, dtype=np.float64)
    cdef double[::1] om = out
    cdef double *logv = <double*> malloc(fv.n_units * sizeof(double))
    if logv == NULL:
        raise MemoryError()
    cdef int i
    try:
        with nogil:
            for i in range(n):
                om[i] = _forward_one(fv, &xm[i, 0], logv)
    finally:
        free(logv)
    return out


def em_sweep(flat, X, int chunk=128):
    cdef _FlatRef fr = _FlatRef(flat)
    cdef FlatView *fv = &fr.view
    X = np.ascontiguousarray(X, dtype=np.int64)
    cdef cnp.int64_t[:, ::1] xm = X
    cdef int n = xm.shape[0]
    cdef cnp.int64_t n_edges = fv.ch_off[fv.n_units]
    cdef cnp.int64_t n_leaf = fv.ip_off[fv.n_units]
    edge_flow = np.zeros(n_edges, dtype=np.float64)
    leaf_flow = np.zeros(n_leaf, dtype=np.float64)
    cdef double[::1] efm = edge_flow
    cdef double[::1] lfm = leaf_flow
    cdef double *ef = &efm[0] if n_edges else NULL
    cdef double *lf = &lfm[0] if n_leaf else NULL
    cdef double *logv = <double*> malloc(fv.n_units * sizeof(double))
    cdef double *logd = <double*> malloc(fv.n_units * sizeof(double))
    if logv == NULL or logd == NULL:
        free(logv); free(logd)
        raise MemoryError()
    cdef double total = 0.0, logp, contrib, t
    cdef int i, u, k, bad = -1
    cdef cnp.int64_t e, lo, hi
    cdef int c
    try:
        with nogil:
            for i in range(n):
                logp = _forward_one(fv, &xm[i, 0], logv)
                if logp == NEG_INF:
                    bad = i
                    break
                total += logp
                for u in range(fv.n_units):
                    logd[u] = NEG_INF
                logd[fv.n_units - 1] = 0.0
                for u in range(fv.n_units - 1, -1, -1):
                    k = fv.kind[u]
                    if k == 0:
                        if logd[u] != NEG_INF:
                            lf[fv.ip_off[u] + xm[i, fv.var[u]]] += \
                                exp(logd[u] + logv[u] - logp)
                        continue
                    if logd[u] == NEG_INF:
                        continue
                    lo = fv.ch_off[u]; hi = fv.ch_off[u + 1]
                    if k == 1:
                        for e in range(lo, hi):
                            c = fv.ch[e]
                            contrib = logd[u] + fv.logw[e]
                            logd[c] = _logaddexp(logd[c], contrib)
                            ef[e] += exp(contrib + logv[c] - logp)
                    else:
                        for e in range(lo, hi):
                            c = fv.ch[e]
                            if logv[c] == NEG_INF:
                                continue
                            contrib = logd[u] + logv[u] - logv[c]
                            logd[c] = _logaddexp(logd[c], contrib)
    finally:
        free(logv)
        free(logd)
    if bad >= 0:
        raise NumericalError(f"zero-likelihood sample at batch index {bad}")
    return total, edge_flow, leaf_flow


# ---------------------------------------------------------------------------
# scheduled step evaluation
# ---------------------------------------------------------------------------

cdef void _step_fill(FlatView *fv, SchedView *sv, int i, int k,
                     double *cache, double *tmp) nogil:
    """Fill tmp[slot * max_card + v] for all units of step i."""
    cdef cnp.int64_t e0 = sv.ev_off[i], e1 = sv.ev_off[i + 1], e, j
    cdef int slot, u, kd, v, s
    cdef int kmax = sv.max_card
    cdef double *row
    cdef const double *src
    cdef double cval, m, acc, t
    for e in range(e0, e1):
        u = sv.ev_unit[e]
        slot = <int> (e - e0)
        row = tmp + slot * kmax
        kd = fv.kind[u]
        if kd == 0:
            src = fv.ip_logp + fv.ip_off[u]
            for v in range(k):
                row[v] = src[v]
        elif kd == 2:
            for v in range(k):
                row[v] = 0.0
            for j in range(sv.ec_off[e], sv.ec_off[e + 1]):
                s = sv.ec_slot[j]
                if s >= 0:
                    src = tmp + s * kmax
                    for v in range(k):
                        row[v] += src[v]
                else:
                    cval = cache[sv.ec_unit[j]]
                    for v in range(k):
                        row[v] += cval
        else:
            for v in range(k):
                m = NEG_INF
                for j in range(sv.ec_off[e], sv.ec_off[e + 1]):
                    s = sv.ec_slot[j]
                    cval = tmp[s * kmax + v] if s >= 0 else cache[sv.ec_unit[j]]
                    t = sv.ec_logw[j] + cval
                    if t > m:
                        m = t
                if m == NEG_INF:
                    row[v] = NEG_INF
                    continue
                acc = 0.0
                for j in range(sv.ec_off[e], sv.ec_off[e + 1]):
                    s = sv.ec_slot[j]
                    cval = tmp[s * kmax + v] if s >= 0 else cache[sv.ec_unit[j]]
                    acc += exp(sv.ec_logw[j] + cval - m)
                row[v] = m + log(acc)


cdef void _step_heads(FlatView *fv, SchedView *sv, int i, int k,
                      const double *logpdown, double *tmp,
                      double *logf) nogil:
    cdef cnp.int64_t h0 = sv.hd_off[i], h1 = sv.hd_off[i + 1], h
    cdef int v
    cdef int kmax = sv.max_card
    cdef double m, acc, t
    for v in range(k):
        m = NEG_INF
        for h in range(h0, h1):
            t = logpdown[sv.hd_unit[h]] + tmp[sv.hd_slot[h] * kmax + v]
            if t > m:
                m = t
        if m == NEG_INF:
            logf[v] = NEG_INF
            continue
        acc = 0.0
        for h in range(h0, h1):
            acc += exp(logpdown[sv.hd_unit[h]]
                       + tmp[sv.hd_slot[h] * kmax + v] - m)
        logf[v] = m + log(acc)


cdef void _step_commit(SchedView *sv, int i, int v, int kmax,
                       double *cache, double *tmp) nogil:
    cdef cnp.int64_t e0 = sv.ev_off[i], e1 = sv.ev_off[i + 1], e
    for e in range(e0, e1):
        cache[sv.ev_unit[e]] = tmp[(e - e0) * kmax + v]


cdef class _Workspace:
    cdef double *cache
    cdef double *tmp
    cdef double *logf
    cdef double *probs

    def __cinit__(self, int n_units, int max_width, int max_card):
        self.cache = <double*> malloc(n_units * sizeof(double))
        self.tmp = <double*> malloc(
            max(1, max_width) * max(1, max_card) * sizeof(double))
        self.logf = <double*> malloc(max(1, max_card) * sizeof(double))
        self.probs = <double*> malloc(max(1, max_card) * sizeof(double))
        if (self.cache == NULL or self.tmp == NULL or self.logf == NULL
                or self.probs == NULL):
            raise MemoryError()
        memset(self.cache, 0, n_units * sizeof(double))

    def __dealloc__(self):
        free(self.cache)
        free(self.tmp)
        free(self.logf)
        free(self.probs)


def prefix_sweep(flat, sched, logpdown, x):
    cdef _FlatRef fr = _FlatRef(flat)
    cdef _SchedRef sr = _SchedRef(sched)
    cdef FlatView *fv = &fr.view
    cdef SchedView *sv = &sr.view
    pd = np.ascontiguousarray(logpdown, dtype=np.float64)
    xx = np.ascontiguousarray(x, dtype=np.int64)
    cdef double[::1] pdm = pd
    cdef cnp.int64_t[::1] xm = xx
    out = np.empty(sv.n_steps, dtype=np.float64)
    cdef double[::1] om = out
    cdef _Workspace ws = _Workspace(fv.n_units, sv.max_width, sv.max_card)
    cdef int i, k, v, s, bad = -1
    with nogil:
        for i in range(sv.n_steps):
            k = fv.card[sv.order[i]]
            _step_fill(fv, sv, i, k, ws.cache, ws.tmp)
            _step_heads(fv, sv, i, k, &pdm[0], ws.tmp, ws.logf)
            v = <int> xm[sv.order[i]]
            for s in range(k):
                if isnan(ws.logf[s]):
                    bad = i
                    break
            if bad >= 0:
                break
            _step_commit(sv, i, v, sv.max_card, ws.cache, ws.tmp)
            om[i] = ws.logf[v]
    if bad >= 0:
        raise NumericalError(f"non-finite value at step {bad}")
    return out


cdef int _normalize(double *logf, double logf_prev, double *probs,
                    int k) nogil:
    """probs = normalized exp(logf - logf_prev); 0 ok, -1 dead prefix,
    -2 non-finite."""
    cdef int v
    cdef double total = 0.0
    if logf_prev == NEG_INF:
        return -1
    for v in range(k):
        probs[v] = exp(logf[v] - logf_prev)
        total += probs[v]
    if total <= 0.0 or total != total or total == INFINITY:
        return -2
    for v in range(k):
        probs[v] /= total
    return 0


def table_stream(flat, sched, logpdown, x):
    cdef _FlatRef fr = _FlatRef(flat)
    cdef _SchedRef sr = _SchedRef(sched)
    cdef FlatView *fv = &fr.view
    cdef SchedView *sv = &sr.view
    pd = np.ascontiguousarray(logpdown, dtype=np.float64)
    xx = np.ascontiguousarray(x, dtype=np.int64)
    cdef double[::1] pdm = pd
    cdef cnp.int64_t[::1] xm = xx
    cdef _Workspace ws = _Workspace(fv.n_units, sv.max_width, sv.max_card)
    cdef double logf_prev = 0.0
    cdef int i, k, v, rc
    out = []
    for i in range(sv.n_steps):
        k = fv.card[sv.order[i]]
        _step_fill(fv, sv, i, k, ws.cache, ws.tmp)
        _step_heads(fv, sv, i, k, &pdm[0], ws.tmp, ws.logf)
        rc = _normalize(ws.logf, logf_prev, ws.probs, k)
        if rc == -1:
            raise ImpossiblePrefixError(
                f"prefix has zero probability at step {i}")
        if rc == -2:
            raise NumericalError(f"bad conditional table at step {i}")
        probs = np.empty(k, dtype=np.float64)
        logf = np.empty(k, dtype=np.float64)
        for v in range(k):
            probs[v] = ws.probs[v]
            logf[v] = ws.logf[v]
        out.append((probs, logf))
        v = <int> xm[sv.order[i]]
        _step_commit(sv, i, v, sv.max_card, ws.cache, ws.tmp)
        logf_prev = ws.logf[v]
    return out


# ---------------------------------------------------------------------------
# quantization (exact mirror of pykern.quantize_probs)
# ---------------------------------------------------------------------------

cdef int _quantize(const double *probs, int k, int precision,
                   cnp.uint32_t *freq, double *rem, int *order) nogil:
    """Returns 0, or -1 (no support) / -2 (too many symbols)."""
    cdef int total = 1 << precision
    cdef int ns = 0, v, j, pos, t, base
    cdef double psum = 0.0, target
    for v in range(k):
        freq[v] = 0
        rem[v] = 0.0
        if probs[v] > 0.0:
            order[ns] = v  # ascending-index support list, sorted below
            ns += 1
            psum += probs[v]
    if ns == 0:
        return -1
    if ns > total:
        return -2

    t = 0
    for j in range(ns):
        v = order[j]
        target = probs[v] / psum * total
        base = <int> floor(target)
        rem[v] = target - base
        if base < 1:
            base = 1
        freq[v] = base
        t += base

    # Insertion sort by (rem desc, index asc); exact analogue of
    # sorted(support, key=lambda v: (-rem[v], v)).
    cdef int key
    cdef double kr
    for j in range(1, ns):
        key = order[j]
        kr = rem[key]
        pos = j - 1
        while pos >= 0 and (rem[order[pos]] < kr
                            or (rem[order[pos]] == kr and order[pos] > key)):
            order[pos + 1] = order[pos]
            pos -= 1
        order[pos + 1] = key

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
    return 0


def quantize_probs(probs, int precision):
    p = np.ascontiguousarray(probs, dtype=np.float64)
    cdef double[::1] pm = p
    cdef int k = pm.shape[0]
    out = np.zeros(k, dtype=np.uint32)
    cdef cnp.uint32_t[::1] om = out
    rem = np.zeros(k, dtype=np.float64)
    order = np.zeros(k, dtype=np.int32)
    cdef double[::1] rm = rem
    cdef cnp.int32_t[::1] cm = order
    cdef int rc = _quantize(&pm[0], k, precision, &om[0], &rm[0],
                            <int*> &cm[0])
    if rc == -1:
        raise UnencodableSymbolError("no symbol has positive probability")
    if rc == -2:
        raise PrecisionError(f"{k} in-support symbols exceed 2^{precision}")
    return out


# ---------------------------------------------------------------------------
# rANS core
# ---------------------------------------------------------------------------

cdef struct BitBuf:
    unsigned char *data
    cnp.int64_t nbits
    cnp.int64_t cap_bits


cdef inline void _bb_push(BitBuf *bb, unsigned int bit) nogil:
    if (bb.nbits & 7) == 0:
        bb.data[bb.nbits >> 3] = 0
    bb.data[bb.nbits >> 3] |= bit << (bb.nbits & 7)
    bb.nbits += 1


cdef inline unsigned int _bit_at(const unsigned char *data,
                                 cnp.int64_t pos) nogil:
    return (data[pos >> 3] >> (pos & 7)) & 1


cdef inline cnp.uint32_t _rans_push_c(cnp.uint32_t state, cnp.uint32_t f,
                                      cnp.uint32_t c, int precision,
                                      BitBuf *bb) nogil:
    cdef cnp.uint32_t limit = f << 1
    while state >= limit:
        _bb_push(bb, state & 1)
        state >>= 1
    return ((state / f) << precision) + (state % f) + c


cdef inline cnp.uint32_t _rans_init_c(const unsigned char *data,
                                      cnp.int64_t *pos) nogil:
    cdef cnp.uint32_t state = 0
    cdef int j, todo
    todo = FLUSH_BITS if pos[0] >= FLUSH_BITS else <int> pos[0]
    for j in range(todo):
        pos[0] -= 1
        state = (state << 1) | _bit_at(data, pos[0])
    return state


cdef inline int _rans_pop_c(cnp.uint32_t *state, const cnp.uint32_t *freq,
                            const cnp.uint32_t *cum, int k, int precision,
                            const unsigned char *data,
                            cnp.int64_t *pos) nogil:
    cdef cnp.uint32_t mask = (1 << precision) - 1
    cdef cnp.uint32_t slot = state[0] & mask
    cdef int v, sym = -1
    for v in range(k):
        if freq[v] != 0 and cum[v] <= slot and slot < cum[v] + freq[v]:
            sym = v
            break
    if sym < 0:
        return -1
    state[0] = freq[sym] * (state[0] >> precision) + slot - cum[sym]
    while state[0] < STATE_LO and pos[0] > 0:
        pos[0] -= 1
        state[0] = (state[0] << 1) | _bit_at(data, pos[0])
    return sym


def rans_encode(symbols, freqs, cums, int precision):
    syms = np.ascontiguousarray(symbols, dtype=np.int64)
    fr = np.ascontiguousarray(freqs, dtype=np.uint32)
    cm = np.ascontiguousarray(cums, dtype=np.uint32)
    cdef cnp.int64_t[::1] sm = syms
    cdef cnp.uint32_t[:, ::1] fm = fr
    cdef cnp.uint32_t[:, ::1] cmm = cm
    cdef cnp.int64_t n = sm.shape[0]
    cdef BitBuf bb
    bb.cap_bits = (FLUSH_BITS + 2) * (n + 2) + 64
    buf = np.zeros((bb.cap_bits >> 3) + 2, dtype=np.uint8)
    cdef cnp.uint8_t[::1] bm = buf
    bb.data = <unsigned char*> &bm[0]
    bb.nbits = 0
    cdef cnp.uint32_t state = 0
    cdef cnp.int64_t i
    cdef int v, j, bad = -1
    with nogil:
        for i in range(n - 1, -1, -1):
            v = <int> sm[i]
            if fm[i, v] == 0:
                bad = <int> i
                break
            state = _rans_push_c(state, fm[i, v], cmm[i, v], precision, &bb)
        if bad < 0:
            for j in range(FLUSH_BITS):
                _bb_push(&bb, (state >> j) & 1)
    if bad >= 0:
        raise UnencodableSymbolError(f"symbol has zero frequency at step {bad}")
    nbytes = (bb.nbits + 7) >> 3
    return buf[:nbytes].tobytes(), int(bb.nbits)


def rans_decode_tables(data, cnp.int64_t bit_length, freqs, cums,
                       int precision):
    fr = np.ascontiguousarray(freqs, dtype=np.uint32)
    cm = np.ascontiguousarray(cums, dtype=np.uint32)
    cdef cnp.uint32_t[:, ::1] fm = fr
    cdef cnp.uint32_t[:, ::1] cmm = cm
    cdef const unsigned char[::1] dm = data
    if bit_length > 8 * dm.shape[0]:
        raise CorruptStreamError("bit length exceeds payload")
    cdef cnp.int64_t n = fm.shape[0]
    cdef int k = fm.shape[1]
    out = np.empty(n, dtype=np.int64)
    cdef cnp.int64_t[::1] om = out
    cdef cnp.int64_t pos = bit_length
    cdef const unsigned char *dp = &dm[0] if dm.shape[0] else NULL
    cdef cnp.uint32_t state = _rans_init_c(dp, &pos) if dp != NULL else 0
    cdef cnp.int64_t i
    cdef int sym, bad = -1
    with nogil:
        for i in range(n):
            sym = _rans_pop_c(&state, &fm[i, 0], &cmm[i, 0], k, precision,
                              dp, &pos)
            if sym < 0:
                bad = <int> i
                break
            om[i] = sym
    if bad >= 0:
        raise CorruptStreamError("code point outside every symbol range")
    if state != 0 or pos != 0:
        raise CorruptStreamError("stream not fully consumed")
    return out


def rans_decode_callback(data, cnp.int64_t bit_length, provider, int n,
                         int precision):
    cdef const unsigned char[::1] dm = data
    if bit_length > 8 * dm.shape[0]:
        raise CorruptStreamError("bit length exceeds payload")
    cdef cnp.int64_t pos = bit_length
    cdef const unsigned char *dp = &dm[0] if dm.shape[0] else NULL
    cdef cnp.uint32_t state = _rans_init_c(dp, &pos) if dp != NULL else 0
    out = []
    cdef int i, sym
    cdef cnp.uint32_t[::1] fm1, cm1
    for i in range(n):
        freqs, cums = provider(out)
        fm1 = np.ascontiguousarray(freqs, dtype=np.uint32)
        cm1 = np.ascontiguousarray(cums, dtype=np.uint32)
        sym = _rans_pop_c(&state, &fm1[0], &cm1[0], <int> fm1.shape[0],
                          precision, dp, &pos)
        if sym < 0:
            raise CorruptStreamError("code point outside every symbol range")
        out.append(sym)
    if state != 0 or pos != 0:
        raise CorruptStreamError("stream not fully consumed")
    return np.asarray(out, dtype=np.int64)


# ---------------------------------------------------------------------------
# integrated per-sample codecs
# ---------------------------------------------------------------------------

def encode_sample(flat, sched, logpdown, x, int precision):
    cdef _FlatRef fr = _FlatRef(flat)
    cdef _SchedRef sr = _SchedRef(sched)
    cdef FlatView *fv = &fr.view
    cdef SchedView *sv = &sr.view
    pd = np.ascontiguousarray(logpdown, dtype=np.float64)
    xx = np.ascontiguousarray(x, dtype=np.int64)
    cdef double[::1] pdm = pd
    cdef cnp.int64_t[::1] xm = xx
    cdef int d = sv.n_steps
    cdef int kmax = max(1, sv.max_card)
    cdef _Workspace ws = _Workspace(fv.n_units, sv.max_width, sv.max_card)

    fr_tab = np.zeros((d, kmax), dtype=np.uint32)
    cm_tab = np.zeros((d, kmax), dtype=np.uint32)
    syms = np.zeros(d, dtype=np.int64)
    rem = np.zeros(kmax, dtype=np.float64)
    order = np.zeros(kmax, dtype=np.int32)
    cdef cnp.uint32_t[:, ::1] fm = fr_tab
    cdef cnp.uint32_t[:, ::1] cmm = cm_tab
    cdef cnp.int64_t[::1] sm = syms
    cdef double[::1] rm = rem
    cdef cnp.int32_t[::1] orm = order

    cdef double logf_prev = 0.0
    cdef int i, k, v, rc = 0, bad_step = -1
    cdef cnp.uint32_t acc
    with nogil:
        for i in range(d):
            k = fv.card[sv.order[i]]
            _step_fill(fv, sv, i, k, ws.cache, ws.tmp)
            _step_heads(fv, sv, i, k, &pdm[0], ws.tmp, ws.logf)
            rc = _normalize(ws.logf, logf_prev, ws.probs, k)
            if rc != 0:
                bad_step = i
                break
            rc = _quantize(ws.probs, k, precision, &fm[i, 0], &rm[0],
                           <int*> &orm[0])
            if rc != 0:
                rc = -3
                bad_step = i
                break
            acc = 0
            for v in range(k):
                cmm[i, v] = acc
                acc += fm[i, v]
            v = <int> xm[sv.order[i]]
            sm[i] = v
            _step_commit(sv, i, v, sv.max_card, ws.cache, ws.tmp)
            logf_prev = ws.logf[v]
    if bad_step >= 0:
        if rc == -1:
            raise ImpossiblePrefixError(
                f"prefix has zero probability at step {bad_step}")
        if rc == -3:
            raise UnencodableSymbolError(
                f"empty table support at step {bad_step}")
        raise NumericalError(f"bad conditional table at step {bad_step}")

    data, nbits = rans_encode(syms, fr_tab, cm_tab, precision)
    return data, nbits, float(logf_prev)


def decode_sample(flat, sched, logpdown, data, cnp.int64_t bit_length,
                  int precision):
    cdef _FlatRef fr = _FlatRef(flat)
    cdef _SchedRef sr = _SchedRef(sched)
    cdef FlatView *fv = &fr.view
    cdef SchedView *sv = &sr.view
    pd = np.ascontiguousarray(logpdown, dtype=np.float64)
    cdef double[::1] pdm = pd
    cdef const unsigned char[::1] dm = data
    if bit_length > 8 * dm.shape[0]:
        raise CorruptStreamError("bit length exceeds payload")
    cdef int d = sv.n_steps
    cdef int kmax = max(1, sv.max_card)
    cdef _Workspace ws = _Workspace(fv.n_units, sv.max_width, sv.max_card)
    freq = np.zeros(kmax, dtype=np.uint32)
    cum = np.zeros(kmax, dtype=np.uint32)
    rem = np.zeros(kmax, dtype=np.float64)
    order = np.zeros(kmax, dtype=np.int32)
    out = np.zeros(fv.num_vars, dtype=np.int64)
    cdef cnp.uint32_t[::1] fm = freq
    cdef cnp.uint32_t[::1] cmm = cum
    cdef double[::1] rm = rem
    cdef cnp.int32_t[::1] orm = order
    cdef cnp.int64_t[::1] om = out

    cdef cnp.int64_t pos = bit_length
    cdef const unsigned char *dp = &dm[0] if dm.shape[0] else NULL
    cdef cnp.uint32_t state = _rans_init_c(dp, &pos) if dp != NULL else 0
    cdef double logf_prev = 0.0
    cdef int i, k, v, sym, rc = 0, bad_step = -1
    cdef cnp.uint32_t acc
    with nogil:
        for i in range(d):
            k = fv.card[sv.order[i]]
            _step_fill(fv, sv, i, k, ws.cache, ws.tmp)
            _step_heads(fv, sv, i, k, &pdm[0], ws.tmp, ws.logf)
            rc = _normalize(ws.logf, logf_prev, ws.probs, k)
            if rc != 0:
                bad_step = i
                break
            rc = _quantize(ws.probs, k, precision, &fm[0], &rm[0],
                           <int*> &orm[0])
            if rc != 0:
                rc = -3
                bad_step = i
                break
            acc = 0
            for v in range(k):
                cmm[v] = acc
                acc += fm[v]
            sym = _rans_pop_c(&state, &fm[0], &cmm[0], k, precision, dp, &pos)
            if sym < 0:
                rc = -4
                bad_step = i
                break
            om[sv.order[i]] = sym
            _step_commit(sv, i, sym, sv.max_card, ws.cache, ws.tmp)
            logf_prev = ws.logf[sym]
    if bad_step >= 0:
        if rc == -1:
            raise ImpossiblePrefixError(
                f"prefix has zero probability at step {bad_step}")
        if rc == -3:
            raise UnencodableSymbolError(
                f"empty table support at step {bad_step}")
        if rc == -4:
            raise CorruptStreamError(
                f"code point outside every symbol range at step {bad_step}")
        raise NumericalError(f"bad conditional table at step {bad_step}")
    if state != 0 or pos != 0:
        raise CorruptStreamError("stream not fully consumed")
    return out
