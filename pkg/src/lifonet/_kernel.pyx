# cython: language_level=3
"""Compiled event kernel.

Twin of ``_pykernel.py``: same state layout, same floating-point operations in
the same order.  Any change here must be mirrored there (the backend
equivalence test compares event logs byte for byte).
"""

import numpy as np
cimport numpy as cnp
from libc.stdlib cimport malloc, realloc, free
from libc.string cimport memmove, memset
from libc.math cimport INFINITY, fabs

cnp.import_array()

cdef enum:
    LIFO_P = 0
    LIFO_NP = 1
    FIFO = 2
    PS = 3
    HLPPS = 4
    IS = 5

cdef enum:
    ARRIVAL = 0
    DEPARTURE = 1
    PREEMPT = 2
    RESUME = 3

cdef enum:
    R_HORIZON = 0
    R_MAX_EVENTS = 1
    R_PREDICATE = 2
    R_CAP = 3
    R_IDLE = 4

cdef enum:
    N_AUDIT = 9

cdef enum:
    A_TIME = 0
    A_WORK = 1
    A_SELECT = 2
    A_NONPREEMPT = 3
    A_FLOW = 4
    A_COUNT = 5
    A_ACCOUNT = 6
    A_RESIDUAL = 7
    A_RATE = 8

cdef double DONE_FRACTION = 1e-12
cdef double ACCOUNTING_TOL = 1e-9
cdef double RATE_TOL = 1e-12


cdef class _DBuf:
    """Growable double buffer."""
    cdef double* data
    cdef Py_ssize_t n, cap

    def __cinit__(self):
        self.cap = 1024
        self.n = 0
        self.data = <double*> malloc(self.cap * sizeof(double))
        if self.data == NULL:
            raise MemoryError()

    def __dealloc__(self):
        free(self.data)

    cdef inline void push(self, double x) except *:
        cdef double* p
        if self.n == self.cap:
            p = <double*> realloc(self.data, 2 * self.cap * sizeof(double))
            if p == NULL:
                raise MemoryError()
            self.data = p
            self.cap *= 2
        self.data[self.n] = x
        self.n += 1

    cdef object array(self):
        out = np.empty(self.n, dtype=np.float64)
        cdef double[::1] v = out
        cdef Py_ssize_t i
        for i in range(self.n):
            v[i] = self.data[i]
        return out


cdef class _IBuf:
    """Growable int64 buffer."""
    cdef long long* data
    cdef Py_ssize_t n, cap

    def __cinit__(self):
        self.cap = 1024
        self.n = 0
        self.data = <long long*> malloc(self.cap * sizeof(long long))
        if self.data == NULL:
            raise MemoryError()

    def __dealloc__(self):
        free(self.data)

    cdef inline void push(self, long long x) except *:
        cdef long long* p
        if self.n == self.cap:
            p = <long long*> realloc(self.data, 2 * self.cap * sizeof(long long))
            if p == NULL:
                raise MemoryError()
            self.data = p
            self.cap *= 2
        self.data[self.n] = x
        self.n += 1

    cdef object array(self):
        out = np.empty(self.n, dtype=np.int64)
        cdef long long[::1] v = out
        cdef Py_ssize_t i
        for i in range(self.n):
            v[i] = self.data[i]
        return out


cdef double* _dalloc(Py_ssize_t n, double fill) except NULL:
    cdef double* p = <double*> malloc((n if n > 0 else 1) * sizeof(double))
    if p == NULL:
        raise MemoryError()
    cdef Py_ssize_t i
    for i in range(n):
        p[i] = fill
    return p


cdef long long* _ialloc(Py_ssize_t n, long long fill) except NULL:
    cdef long long* p = <long long*> malloc((n if n > 0 else 1) * sizeof(long long))
    if p == NULL:
        raise MemoryError()
    cdef Py_ssize_t i
    for i in range(n):
        p[i] = fill
    return p


cdef class Kernel:
    cdef public int K, S, G, nsrc, nstreams
    cdef long long *cls_station
    cdef long long *cls_next
    cdef long long *cls_group
    cdef double *cls_tail_grp
    cdef double *cls_tail_tot
    cdef double *cls_chain_tail
    cdef double *cls_chain_entry
    cdef long long *cls_cont
    cdef long long *cls_kind
    cdef double *cls_mean
    cdef long long *cls_mix_start
    cdef long long *cls_mix_len
    cdef long long *cls_ustream
    cdef long long *cls_estream
    cdef double *mix_cumw
    cdef long long *mix_k
    cdef double *mix_mean
    cdef long long *st_disc
    cdef long long *src_class
    cdef long long *src_kind
    cdef double *src_p
    cdef long long *src_mix_start
    cdef long long *src_mix_len
    cdef long long *src_ustream
    cdef long long *src_estream
    cdef object _refill
    cdef list _bufs
    cdef double **buf
    cdef long long *bpos
    cdef long long *blen

    cdef long long *counts
    cdef long long *arrivals
    cdef long long *departures
    cdef long long *dorig
    cdef long long *external
    cdef long long *z0
    cdef long long *grp_count
    cdef double *grp_W
    cdef double *grp_ta
    cdef double *grp_rate
    cdef double *grp_rate0
    cdef double *grp_jump
    cdef double W_tot, tot_ta, tot_rate0, tot_jump
    cdef long long *st_n
    cdef long long **st_jobs
    cdef long long *st_head
    cdef long long *st_cap
    cdef long long *st_cur
    cdef double *st_next
    cdef long long *st_seq
    cdef long long *st_dep
    cdef double *st_upd
    cdef double *st_grp_rate
    cdef double *new_grp
    cdef double *src_next
    cdef long long *src_seq

    cdef Py_ssize_t jcap, jn
    cdef long long *j_class
    cdef long long *j_id
    cdef double *j_stamp
    cdef double *j_res
    cdef double *j_upd
    cdef double *j_svc
    cdef char *j_cont
    cdef double *j_rate
    cdef char *j_init
    cdef char *j_pre
    cdef double *j_entry
    cdef long long *freelist
    cdef Py_ssize_t nfree

    cdef public double clock
    cdef long long seq
    cdef long long next_id
    cdef public long long steps_total
    cdef public long long total
    cdef long long *mask
    cdef long long mask_count

    cdef bint audit
    cdef long long *audit_counts
    cdef object audit_first
    cdef long long *st_prev
    cdef long long *seen
    cdef long long *inflow
    cdef long long *audit_head

    cdef bint rec_events, rec_series, rec_stations
    cdef double grid_dt, grid_next
    cdef _DBuf ev_time, se_time, se_W, se_Wtot, sl_time, sl_W, sl_Wtot
    cdef _IBuf ev_kind, ev_cls, ev_job, se_cnt, sl_cnt

    def __cinit__(self):
        self.jcap = 0

    def __init__(self, tables, refill):
        t = tables
        self.K = t["K"]
        self.S = t["S"]
        self.G = t["G"]
        self.nsrc = t["nsrc"]
        self.nstreams = t["nstreams"]
        cdef int K = self.K, S = self.S, G = self.G
        self.cls_station = self._ivec(t["cls_station"])
        self.cls_next = self._ivec(t["cls_next"])
        self.cls_group = self._ivec(t["cls_group"])
        self.cls_tail_grp = self._dvec(t["cls_tail_grp"])
        self.cls_tail_tot = self._dvec(t["cls_tail_tot"])
        self.cls_chain_tail = self._dvec(t["cls_chain_tail"])
        self.cls_chain_entry = self._dvec(t["cls_chain_entry"])
        self.cls_cont = self._ivec(t["cls_cont"])
        self.cls_kind = self._ivec(t["cls_kind"])
        self.cls_mean = self._dvec(t["cls_mean"])
        self.cls_mix_start = self._ivec(t["cls_mix_start"])
        self.cls_mix_len = self._ivec(t["cls_mix_len"])
        self.cls_ustream = self._ivec(t["cls_ustream"])
        self.cls_estream = self._ivec(t["cls_estream"])
        self.mix_cumw = self._dvec(t["mix_cumw"])
        self.mix_k = self._ivec(t["mix_k"])
        self.mix_mean = self._dvec(t["mix_mean"])
        self.st_disc = self._ivec(t["st_disc"])
        self.src_class = self._ivec(t["src_class"])
        self.src_kind = self._ivec(t["src_kind"])
        flat = []
        for row in t["src_p"]:
            r = [float(v) for v in row]
            r += [0.0] * (5 - len(r))
            flat.extend(r)
        self.src_p = self._dvec(flat)
        self.src_mix_start = self._ivec(t["src_mix_start"])
        self.src_mix_len = self._ivec(t["src_mix_len"])
        self.src_ustream = self._ivec(t["src_ustream"])
        self.src_estream = self._ivec(t["src_estream"])
        self._refill = refill
        self._bufs = [None] * self.nstreams
        self.buf = <double**> malloc((self.nstreams if self.nstreams > 0 else 1) * sizeof(double*))
        self.bpos = _ialloc(self.nstreams, 0)
        self.blen = _ialloc(self.nstreams, 0)

        self.counts = _ialloc(K, 0)
        self.arrivals = _ialloc(K, 0)
        self.departures = _ialloc(K, 0)
        self.dorig = _ialloc(K, 0)
        self.external = _ialloc(K, 0)
        self.z0 = _ialloc(K, 0)
        self.grp_count = _ialloc(G, 0)
        self.grp_W = _dalloc(G, 0.0)
        self.grp_ta = _dalloc(G, 0.0)
        self.grp_rate = _dalloc(G, 0.0)
        self.grp_rate0 = _dalloc(G, 0.0)
        self.grp_jump = _dalloc(G, 0.0)
        self.W_tot = 0.0
        self.tot_ta = 0.0
        self.tot_rate0 = 0.0
        self.tot_jump = 0.0
        self.st_n = _ialloc(S, 0)
        self.st_jobs = <long long**> malloc(S * sizeof(long long*))
        self.st_head = _ialloc(S, 0)
        self.st_cap = _ialloc(S, 64)
        cdef int s
        for s in range(S):
            self.st_jobs[s] = _ialloc(64, -1)
        self.st_cur = _ialloc(S, -1)
        self.st_next = _dalloc(S, INFINITY)
        self.st_seq = _ialloc(S, 0)
        self.st_dep = _ialloc(S, -1)
        self.st_upd = _dalloc(S, 0.0)
        self.st_grp_rate = _dalloc(S * G, 0.0)
        self.new_grp = _dalloc(G, 0.0)
        self.src_next = _dalloc(self.nsrc, INFINITY)
        self.src_seq = _ialloc(self.nsrc, 0)

        self._grow_jobs(256)
        self.freelist = _ialloc(256, 0)
        self.nfree = 0

        self.clock = 0.0
        self.seq = 0
        self.next_id = 0
        self.steps_total = 0
        self.total = 0
        self.mask = _ialloc(K, 0)
        self.mask_count = 0

        self.audit = False
        self.audit_counts = _ialloc(N_AUDIT, 0)
        self.audit_first = ""
        self.st_prev = _ialloc(S, -1)
        self.seen = _ialloc(K, 0)
        self.inflow = _ialloc(K, 0)
        self.audit_head = _ialloc(K, -1)
        self._reset_records()

    def __dealloc__(self):
        cdef int s
        if self.jcap == 0:
            return
        free(self.cls_station); free(self.cls_next); free(self.cls_group)
        free(self.cls_tail_grp); free(self.cls_tail_tot); free(self.cls_chain_tail); free(self.cls_chain_entry); free(self.cls_cont); free(self.cls_kind)
        free(self.cls_mean); free(self.cls_mix_start); free(self.cls_mix_len)
        free(self.cls_ustream); free(self.cls_estream); free(self.mix_cumw)
        free(self.mix_k); free(self.mix_mean); free(self.st_disc)
        free(self.src_class); free(self.src_kind); free(self.src_p)
        free(self.src_mix_start); free(self.src_mix_len); free(self.src_ustream)
        free(self.src_estream); free(self.buf); free(self.bpos); free(self.blen)
        free(self.counts); free(self.arrivals); free(self.departures)
        free(self.dorig); free(self.external); free(self.z0); free(self.grp_count)
        free(self.grp_W); free(self.grp_ta); free(self.grp_rate); free(self.grp_rate0); free(self.grp_jump); free(self.st_n)
        for s in range(self.S):
            free(self.st_jobs[s])
        free(self.st_jobs); free(self.st_head); free(self.st_cap)
        free(self.st_cur); free(self.st_next); free(self.st_seq); free(self.st_dep)
        free(self.st_upd); free(self.st_grp_rate); free(self.new_grp)
        free(self.src_next); free(self.src_seq)
        free(self.j_class); free(self.j_id); free(self.j_stamp); free(self.j_res)
        free(self.j_upd); free(self.j_svc); free(self.j_cont); free(self.j_rate)
        free(self.j_init); free(self.j_pre); free(self.j_entry); free(self.freelist)
        free(self.mask); free(self.audit_counts); free(self.st_prev)
        free(self.seen); free(self.inflow); free(self.audit_head)

    cdef long long* _ivec(self, values) except NULL:
        vals = list(values)
        cdef long long* p = _ialloc(len(vals), 0)
        cdef Py_ssize_t i
        for i in range(len(vals)):
            p[i] = int(vals[i])
        return p

    cdef double* _dvec(self, values) except NULL:
        vals = list(values)
        cdef double* p = _dalloc(len(vals), 0.0)
        cdef Py_ssize_t i
        for i in range(len(vals)):
            p[i] = float(vals[i])
        return p

    cdef void _grow_jobs(self, Py_ssize_t cap) except *:
        self.j_class = <long long*> realloc(self.j_class if self.jcap else NULL, cap * sizeof(long long))
        self.j_id = <long long*> realloc(self.j_id if self.jcap else NULL, cap * sizeof(long long))
        self.j_stamp = <double*> realloc(self.j_stamp if self.jcap else NULL, cap * sizeof(double))
        self.j_res = <double*> realloc(self.j_res if self.jcap else NULL, cap * sizeof(double))
        self.j_upd = <double*> realloc(self.j_upd if self.jcap else NULL, cap * sizeof(double))
        self.j_svc = <double*> realloc(self.j_svc if self.jcap else NULL, cap * sizeof(double))
        self.j_cont = <char*> realloc(self.j_cont if self.jcap else NULL, cap * sizeof(char))
        self.j_rate = <double*> realloc(self.j_rate if self.jcap else NULL, cap * sizeof(double))
        self.j_init = <char*> realloc(self.j_init if self.jcap else NULL, cap * sizeof(char))
        self.j_pre = <char*> realloc(self.j_pre if self.jcap else NULL, cap * sizeof(char))
        self.j_entry = <double*> realloc(self.j_entry if self.jcap else NULL, cap * sizeof(double))
        if (self.j_class == NULL or self.j_id == NULL or self.j_stamp == NULL or self.j_res == NULL
                or self.j_upd == NULL or self.j_svc == NULL or self.j_cont == NULL or self.j_rate == NULL
                or self.j_init == NULL or self.j_pre == NULL or self.j_entry == NULL):
            raise MemoryError()
        if self.jcap:
            self.freelist = <long long*> realloc(self.freelist, cap * sizeof(long long))
            if self.freelist == NULL:
                raise MemoryError()
        self.jcap = cap

    # ------------------------------------------------------------------ rng
    cdef double _draw(self, long long sid) except? -1.0:
        cdef cnp.ndarray arr
        if self.bpos[sid] >= self.blen[sid]:
            arr = np.ascontiguousarray(self._refill(sid), dtype=np.float64)
            self._bufs[sid] = arr
            self.buf[sid] = <double*> cnp.PyArray_DATA(arr)
            self.blen[sid] = arr.shape[0]
            self.bpos[sid] = 0
        cdef double x = self.buf[sid][self.bpos[sid]]
        self.bpos[sid] += 1
        return x

    cdef double _mixture(self, long long start, long long n, long long us, long long es) except? -1.0:
        cdef long long idx = start + n - 1
        cdef long long i, r
        cdef double u, total, m
        if n > 1:
            u = self._draw(us)
            for i in range(start, start + n):
                if u < self.mix_cumw[i]:
                    idx = i
                    break
        total = 0.0
        m = self.mix_mean[idx]
        for r in range(self.mix_k[idx]):
            total += m * self._draw(es)
        return total

    cdef double _service(self, long long k) except? -1.0:
        cdef long long kind = self.cls_kind[k]
        if kind == 0:
            return self.cls_mean[k]
        if kind == 1:
            return self.cls_mean[k] * self._draw(self.cls_estream[k])
        return self._mixture(self.cls_mix_start[k], self.cls_mix_len[k], self.cls_ustream[k], self.cls_estream[k])

    cdef double _interarrival(self, long long i) except? -1.0:
        cdef long long kind = self.src_kind[i]
        cdef double* p = self.src_p + 5 * i
        cdef double x
        if kind == 0:
            if self._draw(self.src_ustream[i]) < p[0]:
                return p[1]
            while True:
                x = p[2] + self._draw(self.src_estream[i]) / p[4]
                if x <= p[3]:
                    return x
        if kind == 1:
            return p[0] * self._draw(self.src_estream[i])
        if kind == 2:
            return p[0]
        return self._mixture(self.src_mix_start[i], self.src_mix_len[i], self.src_ustream[i], self.src_estream[i])

    # ----------------------------------------------------------------- jobs
    cdef long long _new_job(self) except -1:
        if self.nfree > 0:
            self.nfree -= 1
            return self.freelist[self.nfree]
        if self.jn == self.jcap:
            self._grow_jobs(2 * self.jcap)
        self.j_class[self.jn] = 0
        self.j_id[self.jn] = 0
        self.j_stamp[self.jn] = 0.0
        self.j_res[self.jn] = 0.0
        self.j_upd[self.jn] = 0.0
        self.j_svc[self.jn] = 0.0
        self.j_cont[self.jn] = 0
        self.j_rate[self.jn] = 0.0
        self.j_init[self.jn] = 0
        self.j_pre[self.jn] = 0
        self.j_entry[self.jn] = 0.0
        self.jn += 1
        return self.jn - 1

    cdef inline bint _key_less(self, long long a, long long b):
        cdef double sa = self.j_stamp[a]
        cdef double sb = self.j_stamp[b]
        if sa != sb:
            return sa < sb
        return self.j_id[a] < self.j_id[b]

    cdef void _insert(self, long long s, long long j) except *:
        cdef long long head = self.st_head[s]
        cdef long long n = self.st_n[s]
        cdef long long cap = self.st_cap[s]
        cdef long long* lst = self.st_jobs[s]
        cdef long long* p
        if head + n == cap:
            if head > cap // 2:
                memmove(lst, lst + head, n * sizeof(long long))
                self.st_head[s] = 0
                head = 0
            else:
                p = <long long*> realloc(lst, 2 * cap * sizeof(long long))
                if p == NULL:
                    raise MemoryError()
                self.st_jobs[s] = p
                self.st_cap[s] = 2 * cap
                lst = p
        lst = lst + head
        cdef long long i = n
        while i > 0 and self._key_less(j, lst[i - 1]):
            lst[i] = lst[i - 1]
            i -= 1
        lst[i] = j
        self.st_n[s] = n + 1

    cdef void _remove(self, long long s, long long j):
        cdef long long* lst = self.st_jobs[s] + self.st_head[s]
        cdef long long n = self.st_n[s]
        cdef long long i
        if lst[n - 1] == j:
            pass
        elif lst[0] == j:
            self.st_head[s] += 1
        else:
            i = 0
            while lst[i] != j:
                i += 1
            memmove(lst + i, lst + i + 1, (n - 1 - i) * sizeof(long long))
        self.st_n[s] = n - 1
        if n == 1:
            self.st_head[s] = 0

    # -------------------------------------------------------------- records
    cdef void _reset_records(self):
        self.rec_events = False
        self.rec_series = False
        self.rec_stations = False
        self.grid_dt = 0.0
        self.grid_next = INFINITY
        self.ev_time = _DBuf()
        self.ev_kind = _IBuf()
        self.ev_cls = _IBuf()
        self.ev_job = _IBuf()
        self.se_time = _DBuf()
        self.se_cnt = _IBuf()
        self.se_W = _DBuf()
        self.se_Wtot = _DBuf()
        self.sl_time = _DBuf()
        self.sl_cnt = _IBuf()
        self.sl_W = _DBuf()
        self.sl_Wtot = _DBuf()

    cdef inline void _log(self, int kind, long long k, long long j) except *:
        if self.rec_events:
            self.ev_time.push(self.clock)
            self.ev_kind.push(kind)
            self.ev_cls.push(k)
            self.ev_job.push(self.j_id[j])

    cdef inline double _w_at(self, int g, double t):
        return self.grp_W[g] - self.grp_rate[g] * (t - self.grp_ta[g])

    cdef inline double _wtot_at(self, double t):
        cdef double rate = 0.0
        cdef int g
        for g in range(self.G):
            rate += self.grp_rate[g]
        return self.W_tot - rate * (t - self.tot_ta)

    cdef void _series_row(self, double t) except *:
        cdef int g
        self.se_time.push(t)
        for g in range(self.G):
            self.se_cnt.push(self.grp_count[g])
        for g in range(self.G):
            self.se_W.push(self._w_at(g, t))
        self.se_Wtot.push(self._wtot_at(t))

    cdef void _station_row(self) except *:
        cdef int s, g
        cdef double t = self.clock
        self.sl_time.push(t)
        for s in range(self.S):
            self.sl_cnt.push(self.st_n[s])
        for g in range(self.G):
            self.sl_W.push(self._w_at(g, t))
        self.sl_Wtot.push(self._wtot_at(t))

    cdef inline void _open_step(self):
        cdef double rate = 0.0
        cdef int g
        for g in range(self.G):
            self.grp_rate0[g] = self.grp_rate[g]
            self.grp_jump[g] = 0.0
            rate += self.grp_rate[g]
        self.tot_rate0 = rate
        self.tot_jump = 0.0

    cdef inline void _close_step(self, double t):
        cdef double rate = 0.0
        cdef int g
        for g in range(self.G):
            rate += self.grp_rate[g]
            if self.grp_jump[g] != 0.0 or self.grp_rate[g] != self.grp_rate0[g]:
                self.grp_W[g] = self.grp_W[g] - self.grp_rate0[g] * (t - self.grp_ta[g]) + self.grp_jump[g]
                self.grp_ta[g] = t
        if self.tot_jump != 0.0 or rate != self.tot_rate0:
            self.W_tot = self.W_tot - self.tot_rate0 * (t - self.tot_ta) + self.tot_jump
            self.tot_ta = t

    # ---------------------------------------------------------- allocation
    cdef long long _select(self, long long s):
        cdef long long n = self.st_n[s]
        if n == 0:
            return -1
        cdef long long* lst = self.st_jobs[s] + self.st_head[s]
        cdef long long disc = self.st_disc[s]
        if disc == FIFO:
            return lst[0]
        if disc == LIFO_NP and self.st_cur[s] >= 0:
            return self.st_cur[s]
        cdef long long last = lst[n - 1]
        if self.j_stamp[last] != -INFINITY:
            return last
        return lst[0]

    cdef void _advance_station(self, long long s, double t):
        cdef long long* lst = self.st_jobs[s] + self.st_head[s]
        cdef long long n = self.st_n[s]
        cdef double d = t - self.st_upd[s]
        cdef double r
        cdef long long i, j
        if d != 0.0:
            for i in range(n):
                j = lst[i]
                r = self.j_rate[j]
                if r != 0.0:
                    self.j_res[j] -= r * d
                self.j_upd[j] = t
        self.st_upd[s] = t

    cdef void _reallocate(self, long long s, double t) except *:
        cdef long long disc = self.st_disc[s]
        cdef long long new, old, n, i, j, k, i2
        cdef double d, share, r, tj, best_t, left
        cdef long long best
        cdef int g
        cdef double* old_grp
        if disc <= FIFO:
            new = self._select(s)
            old = self.st_cur[s]
            if new == old:
                return
            if old >= 0:
                d = t - self.j_upd[old]
                self.j_res[old] -= d
                self.j_upd[old] = t
                self.j_rate[old] = 0.0
                self.j_pre[old] = 1
                self.grp_rate[self.cls_group[self.j_class[old]]] -= 1.0
                self._log(PREEMPT, self.j_class[old], old)
            self.st_cur[s] = new
            if new >= 0:
                if self.j_cont[new]:
                    self.j_cont[new] = 0
                else:
                    self.j_upd[new] = t
                self.j_rate[new] = 1.0
                self.grp_rate[self.cls_group[self.j_class[new]]] += 1.0
                if self.j_pre[new]:
                    self.j_pre[new] = 0
                    self._log(RESUME, self.j_class[new], new)
                self.st_next[s] = self.j_upd[new] + (self.j_res[new] - self.cls_chain_tail[self.j_class[new]])
                self.st_dep[s] = new
                self.st_seq[s] = self.seq
                self.seq += 1
            else:
                self.st_next[s] = INFINITY
                self.st_dep[s] = -1
            return

        self._advance_station(s, t)
        cdef long long* lst = self.st_jobs[s] + self.st_head[s]
        n = self.st_n[s]
        for g in range(self.G):
            self.new_grp[g] = 0.0
        if disc == PS:
            share = 1.0 / n if n else 0.0
            for i in range(n):
                j = lst[i]
                self.j_rate[j] = share
                self.new_grp[self.cls_group[self.j_class[j]]] += share
        elif disc == IS:
            for i in range(n):
                j = lst[i]
                self.j_rate[j] = 1.0
                self.new_grp[self.cls_group[self.j_class[j]]] += 1.0
        else:
            for i in range(n):
                self.j_rate[lst[i]] = 0.0
            for i in range(n):
                j = lst[i]
                k = self.j_class[j]
                if self.j_rate[j] == 0.0:
                    # head of its class: no earlier job of the same class
                    i2 = 0
                    while self.j_class[lst[i2]] != k:
                        i2 += 1
                    if i2 == i:
                        share = self.counts[k] / <double> n
                        self.j_rate[j] = share
                        self.new_grp[self.cls_group[k]] += share
        old_grp = self.st_grp_rate + s * self.G
        for g in range(self.G):
            if self.new_grp[g] != old_grp[g]:
                self.grp_rate[g] += self.new_grp[g] - old_grp[g]
            old_grp[g] = self.new_grp[g]
        best = -1
        best_t = INFINITY
        for i in range(n):
            j = lst[i]
            r = self.j_rate[j]
            if r > 0.0:
                left = self.j_res[j] - self.cls_chain_tail[self.j_class[j]]
                if left <= DONE_FRACTION * self.j_svc[j]:
                    tj = t
                else:
                    tj = t + left / r
                if tj < best_t:
                    best_t = tj
                    best = j
        self.st_next[s] = best_t
        self.st_dep[s] = best
        self.st_seq[s] = self.seq
        self.seq += 1

    # ------------------------------------------------------------ movement
    cdef void _enter(self, long long j, long long k, double t, bint external, bint cont) except *:
        cdef double svc = self._service(k)
        cdef double entry
        self.j_class[j] = k
        self.j_stamp[j] = t
        self.j_svc[j] = svc
        self.j_rate[j] = 0.0
        self.j_pre[j] = 0
        if cont:
            self.j_cont[j] = 1
        else:
            entry = self.cls_chain_entry[k]
            self.j_res[j] = entry if entry >= 0.0 else svc + self.cls_chain_tail[k]
            self.j_upd[j] = t
            self.j_cont[j] = 0
        cdef long long g = self.cls_group[k]
        self.counts[k] += 1
        self.arrivals[k] += 1
        if external:
            self.external[k] += 1
            self.total += 1
        self.grp_count[g] += 1
        self.grp_jump[g] += svc + self.cls_tail_grp[k]
        self.tot_jump += svc + self.cls_tail_tot[k]
        if self.mask[k]:
            self.mask_count += 1
        self._log(ARRIVAL, k, j)
        cdef long long s = self.cls_station[k]
        self._insert(s, j)
        self._reallocate(s, t)

    cdef bint _depart(self, long long s, double t) except? -1:
        cdef long long j = self.st_dep[s]
        cdef long long k = self.j_class[j]
        cdef double left
        cdef bint single = self.st_disc[s] <= FIFO
        cdef bint cont
        if single:
            left = (self.j_res[j] - self.cls_chain_tail[k]) - (t - self.j_upd[j])
            self.grp_rate[self.cls_group[k]] -= 1.0
            self.st_cur[s] = -1
            self.st_next[s] = INFINITY
            self.st_dep[s] = -1
        else:
            self._advance_station(s, t)
            left = self.j_res[j] - self.cls_chain_tail[k]
        self.j_rate[j] = 0.0
        if self.audit and fabs(left) > ACCOUNTING_TOL:
            self._violate(A_ACCOUNT, f"job {self.j_id[j]} class {k}: {left!r} of {self.j_svc[j]!r} left at departure")
        self._remove(s, j)
        cdef long long g = self.cls_group[k]
        self.counts[k] -= 1
        self.departures[k] += 1
        if self.j_init[j]:
            self.dorig[k] += 1
            self.j_init[j] = 0
        self.grp_count[g] -= 1
        self.grp_jump[g] -= self.cls_tail_grp[k]
        self.tot_jump -= self.cls_tail_tot[k]
        if self.mask[k]:
            self.mask_count -= 1
        self._log(DEPARTURE, k, j)
        cdef long long nk = self.cls_next[k]
        cdef bint moved = True
        if nk >= 0:
            if self.cls_station[nk] == s:
                moved = False
            cont = self.cls_cont[nk] != 0 and not moved and self.st_disc[s] <= LIFO_NP
            self._enter(j, nk, t, False, cont)
            if self.j_cont[j]:
                self.j_res[j] -= t - self.j_upd[j]
                self.j_upd[j] = t
                self.j_cont[j] = 0
        else:
            self.total -= 1
            self.freelist[self.nfree] = j
            self.nfree += 1
        self._reallocate(s, t)
        return moved

    # ------------------------------------------------------------- set-up
    def add_job(self, long long k, double residual, bint sentinel):
        cdef long long j = self._new_job()
        cdef double svc = self._service(k) if residual < 0 else residual
        cdef double entry = self.cls_chain_entry[k]
        self.j_class[j] = k
        self.j_id[j] = self.next_id
        self.next_id += 1
        self.j_stamp[j] = -INFINITY if sentinel else self.clock
        self.j_res[j] = entry if (residual < 0 and entry >= 0.0) else svc + self.cls_chain_tail[k]
        self.j_svc[j] = svc
        self.j_cont[j] = 0
        self.j_rate[j] = 0.0
        self.j_upd[j] = self.clock
        self.j_init[j] = 1
        self.j_pre[j] = 0
        self.j_entry[j] = self.clock
        cdef long long g = self.cls_group[k]
        self.counts[k] += 1
        self.z0[k] += 1
        self.total += 1
        self.grp_count[g] += 1
        self.grp_W[g] += svc + self.cls_tail_grp[k]
        self.grp_ta[g] = self.clock
        self.W_tot += svc + self.cls_tail_tot[k]
        self.tot_ta = self.clock
        self._insert(self.cls_station[k], j)
        return self.j_id[j]

    def start(self, clocks):
        cdef double t = self.clock
        cdef long long s, i
        cdef double u
        for s in range(self.S):
            self.st_upd[s] = t
            self._reallocate(s, t)
            self.st_prev[s] = self.st_cur[s]
        for i in range(self.nsrc):
            u = clocks[i]
            if u < 0:
                u = self._interarrival(i)
            self.src_next[i] = t + u
            self.src_seq[i] = self.seq
            self.seq += 1

    # ---------------------------------------------------------------- audit
    cdef void _violate(self, int code, msg) except *:
        self.audit_counts[code] += 1
        if not self.audit_first:
            self.audit_first = f"t={self.clock!r}: {msg}"

    cdef inline bint _beats(self, long long a, long long b):
        cdef double sa = self.j_stamp[a]
        cdef double sb = self.j_stamp[b]
        if sa != sb:
            return sa > sb
        if sa == -INFINITY:
            return self.j_id[a] < self.j_id[b]
        return self.j_id[a] > self.j_id[b]

    cdef long long _brute_best(self, long long* lst, long long n, bint lifo):
        cdef long long best = lst[0]
        cdef long long i, j
        for i in range(n):
            j = lst[i]
            if lifo:
                if self._beats(j, best):
                    best = j
            elif self._key_less(j, best):
                best = j
        return best

    cdef void _audit_step(self, double prev_clock) except *:
        cdef double t = self.clock
        cdef long long s, n, disc, i, j, k, head, cur, prev, expect
        cdef double rate_sum, cur_res, want
        cdef bint present
        cdef long long* lst
        if t < prev_clock:
            self._violate(A_TIME, f"clock went back from {prev_clock!r}")
        for k in range(self.K):
            self.seen[k] = 0
        for s in range(self.S):
            lst = self.st_jobs[s] + self.st_head[s]
            n = self.st_n[s]
            disc = self.st_disc[s]
            rate_sum = 0.0
            for i in range(n):
                j = lst[i]
                self.seen[self.j_class[j]] += 1
                rate_sum += self.j_rate[j]
                cur_res = self.j_res[j] - self.j_rate[j] * (t - self.j_upd[j]) - self.cls_chain_tail[self.j_class[j]]
                if cur_res < -ACCOUNTING_TOL or cur_res > self.j_svc[j] + ACCOUNTING_TOL:
                    self._violate(A_RESIDUAL, f"job {self.j_id[j]} residual {cur_res!r} outside [0, {self.j_svc[j]!r}]")
                if self.cls_station[self.j_class[j]] != s:
                    self._violate(A_COUNT, f"job {self.j_id[j]} at wrong station")
            if n == 0:
                if rate_sum != 0.0 or (disc <= FIFO and self.st_cur[s] != -1):
                    self._violate(A_WORK, f"station {s} empty but serving")
                self.st_prev[s] = -1
                continue
            if disc == IS:
                for i in range(n):
                    j = lst[i]
                    if self.j_rate[j] != 1.0:
                        self._violate(A_RATE, f"IS job {self.j_id[j]} rate {self.j_rate[j]!r}")
                continue
            if fabs(rate_sum - 1.0) > RATE_TOL:
                self._violate(A_WORK, f"station {s} rates sum to {rate_sum!r}")
            if disc <= FIFO:
                cur = self.st_cur[s]
                prev = self.st_prev[s]
                present = False
                if prev >= 0:
                    for i in range(n):
                        if lst[i] == prev:
                            present = True
                            break
                if disc == LIFO_NP and present:
                    if cur != prev:
                        self._violate(A_NONPREEMPT, f"station {s} switched away from job {self.j_id[prev]}")
                else:
                    expect = self._brute_best(lst, n, disc != FIFO)
                    if cur != expect:
                        self._violate(A_SELECT, f"station {s} serves job {self.j_id[cur] if cur >= 0 else -1}, expected {self.j_id[expect]}")
                for i in range(n):
                    j = lst[i]
                    want = 1.0 if j == cur else 0.0
                    if self.j_rate[j] != want:
                        self._violate(A_RATE, f"job {self.j_id[j]} rate {self.j_rate[j]!r}")
            elif disc == PS:
                for i in range(n):
                    j = lst[i]
                    if self.j_rate[j] != 1.0 / n:
                        self._violate(A_RATE, f"PS job {self.j_id[j]} rate {self.j_rate[j]!r}")
            else:
                for i in range(n):
                    self.audit_head[self.j_class[lst[i]]] = -1
                for i in range(n):
                    j = lst[i]
                    k = self.j_class[j]
                    head = self.audit_head[k]
                    if head < 0 or self._key_less(j, head):
                        self.audit_head[k] = j
                for i in range(n):
                    j = lst[i]
                    k = self.j_class[j]
                    want = self.counts[k] / <double> n if j == self.audit_head[k] else 0.0
                    if self.j_rate[j] != want:
                        self._violate(A_RATE, f"HLPPS job {self.j_id[j]} rate {self.j_rate[j]!r}, want {want!r}")
            self.st_prev[s] = self.st_cur[s]
        for k in range(self.K):
            self.inflow[k] = self.external[k]
        for k in range(self.K):
            if self.cls_next[k] >= 0:
                self.inflow[self.cls_next[k]] += self.departures[k]
        for k in range(self.K):
            if self.inflow[k] != self.arrivals[k]:
                self._violate(A_FLOW, f"class {k}: arrivals {self.arrivals[k]} != inflow {self.inflow[k]}")
            if self.counts[k] != self.z0[k] + self.arrivals[k] - self.departures[k] or self.counts[k] != self.seen[k]:
                self._violate(A_COUNT, f"class {k}: count {self.counts[k]} vs {self.seen[k]} present")

    # ------------------------------------------------------------------ run
    def set_mask(self, classes):
        cdef long long k
        for k in range(self.K):
            self.mask[k] = 0
        self.mask_count = 0
        for k in classes:
            self.mask[k] = 1
            self.mask_count += self.counts[k]

    def run(self, double horizon, double max_events, bint use_mask, double cap,
            bint rec_events, bint rec_series, bint rec_stations, double grid_dt, bint audit):
        self._reset_records()
        self.rec_events = rec_events
        self.rec_series = rec_series
        self.rec_stations = rec_stations
        self.audit = audit
        self.grid_dt = grid_dt
        if self.grid_dt > 0.0:
            self.grid_next = self.clock + self.grid_dt
        cdef double t0 = self.clock
        cdef long long min_count = self.total
        cdef double min_W = self._wtot_at(self.clock)
        cdef long long steps = 0
        cdef int reason = R_IDLE
        cdef double best_t, ti, ts, prev, w
        cdef long long best_seq, best_src, best_st, i, s, j
        cdef int g
        cdef bint moved
        if self.rec_series:
            self._series_row(self.clock)
        if self.rec_stations:
            self._station_row()
        if use_mask and self.mask_count == 0:
            return self._finish(R_PREDICATE, steps, t0, min_count, min_W)
        while True:
            if steps >= max_events:
                reason = R_MAX_EVENTS
                break
            if steps >= cap:
                reason = R_CAP
                break
            best_t = INFINITY
            best_seq = 0
            best_src = -1
            best_st = -1
            for i in range(self.nsrc):
                ti = self.src_next[i]
                if ti < best_t or (ti == best_t and best_t != INFINITY and self.src_seq[i] < best_seq):
                    best_t = ti
                    best_seq = self.src_seq[i]
                    best_src = i
                    best_st = -1
            for s in range(self.S):
                ts = self.st_next[s]
                if ts < best_t or (ts == best_t and best_t != INFINITY and self.st_seq[s] < best_seq):
                    best_t = ts
                    best_seq = self.st_seq[s]
                    best_st = s
                    best_src = -1
            if best_t == INFINITY:
                reason = R_IDLE
                break
            if best_t > horizon:
                self._advance_to(horizon)
                w = self._wtot_at(horizon)
                if w < min_W:
                    min_W = w
                reason = R_HORIZON
                break
            prev = self.clock
            if self.grid_dt > 0.0:
                while self.grid_next < best_t:
                    self._series_row(self.grid_next)
                    self.grid_next += self.grid_dt
            w = self._wtot_at(best_t)
            if w < min_W:
                min_W = w
            self._open_step()
            self.clock = best_t
            if best_src >= 0:
                i = best_src
                j = self._new_job()
                self.j_id[j] = self.next_id
                self.next_id += 1
                self.j_init[j] = 0
                self.j_entry[j] = best_t
                self._enter(j, self.src_class[i], best_t, True, False)
                self.src_next[i] = best_t + self._interarrival(i)
                self.src_seq[i] = self.seq
                self.seq += 1
                moved = True
            else:
                moved = self._depart(best_st, best_t)
            self._close_step(best_t)
            steps += 1
            if self.total < min_count:
                min_count = self.total
            w = self._wtot_at(best_t)
            if w < min_W:
                min_W = w
            if self.rec_series and self.grid_dt <= 0.0:
                self._series_row(best_t)
            if self.rec_stations and moved:
                self._station_row()
            if self.audit:
                self._audit_step(prev)
            if use_mask and self.mask_count == 0:
                reason = R_PREDICATE
                break
        return self._finish(reason, steps, t0, min_count, min_W)

    cdef void _advance_to(self, double t) except *:
        if t <= self.clock:
            return
        if self.grid_dt > 0.0:
            while self.grid_next <= t:
                self._series_row(self.grid_next)
                self.grid_next += self.grid_dt
        self.clock = t

    cdef dict _finish(self, int reason, long long steps, double t0, long long min_count, double min_W):
        self.steps_total += steps
        return {
            "reason": reason,
            "steps": steps,
            "t_start": t0,
            "t_end": self.clock,
            "min_count": min_count,
            "min_W": min_W,
        }

    # ------------------------------------------------------------- queries
    def records(self):
        return {
            "ev_time": self.ev_time.array(),
            "ev_kind": self.ev_kind.array(),
            "ev_cls": self.ev_cls.array(),
            "ev_job": self.ev_job.array(),
            "se_time": self.se_time.array(),
            "se_cnt": self.se_cnt.array(),
            "se_W": self.se_W.array(),
            "se_Wtot": self.se_Wtot.array(),
            "sl_time": self.sl_time.array(),
            "sl_cnt": self.sl_cnt.array(),
            "sl_W": self.sl_W.array(),
            "sl_Wtot": self.sl_Wtot.array(),
        }

    def jobs(self):
        out = []
        cdef double t = self.clock
        cdef long long s, i, j
        cdef long long* lst
        for s in range(self.S):
            lst = self.st_jobs[s] + self.st_head[s]
            for i in range(self.st_n[s]):
                j = lst[i]
                res = self.j_res[j] - self.j_rate[j] * (t - self.j_upd[j]) - self.cls_chain_tail[self.j_class[j]]
                out.append((self.j_class[j], self.j_id[j], self.j_stamp[j], res, self.j_svc[j], bool(self.j_init[j]), self.j_entry[j]))
        return out

    def serving(self):
        out = []
        cdef long long s, i, j
        cdef long long* lst
        for s in range(self.S):
            lst = self.st_jobs[s] + self.st_head[s]
            row = []
            for i in range(self.st_n[s]):
                j = lst[i]
                if self.j_rate[j] > 0.0:
                    row.append((self.j_id[j], self.j_rate[j]))
            out.append(row)
        return out

    def source_clocks(self):
        return [self.src_next[i] - self.clock for i in range(self.nsrc)]

    def state_arrays(self):
        return {
            "counts": [self.counts[k] for k in range(self.K)],
            "arrivals": [self.arrivals[k] for k in range(self.K)],
            "departures": [self.departures[k] for k in range(self.K)],
            "dorig": [self.dorig[k] for k in range(self.K)],
            "z0": [self.z0[k] for k in range(self.K)],
            "grp_count": [self.grp_count[g] for g in range(self.G)],
            "grp_W": [self._w_at(g, self.clock) for g in range(self.G)],
            "W_tot": self._wtot_at(self.clock),
            "st_n": [self.st_n[s] for s in range(self.S)],
            "clock": self.clock,
            "total": self.total,
            "steps_total": self.steps_total,
        }

    def audit_report(self):
        return [self.audit_counts[i] for i in range(N_AUDIT)], self.audit_first
