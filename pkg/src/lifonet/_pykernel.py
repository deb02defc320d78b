"""Pure-Python event kernel.

Mirror of ``_kernel.pyx``: same data layout, same arithmetic in the same
order, so both backends produce identical event logs for identical inputs.
Keep the two files in step.
"""

import math

INF = math.inf
NEG_INF = -math.inf

# disciplines
LIFO_P, LIFO_NP, FIFO, PS, HLPPS, IS = range(6)
# event kinds
ARRIVAL, DEPARTURE, PREEMPT, RESUME = range(4)
# stop reasons
R_HORIZON, R_MAX_EVENTS, R_PREDICATE, R_CAP, R_IDLE = range(5)

DONE_FRACTION = 1e-12
ACCOUNTING_TOL = 1e-9
RATE_TOL = 1e-12

N_AUDIT = 9
A_TIME, A_WORK, A_SELECT, A_NONPREEMPT, A_FLOW, A_COUNT, A_ACCOUNT, A_RESIDUAL, A_RATE = range(N_AUDIT)


class Kernel:
    def __init__(self, tables, refill):
        t = tables
        self.K = t["K"]
        self.S = t["S"]
        self.G = t["G"]
        self.nsrc = t["nsrc"]
        self.cls_station = list(t["cls_station"])
        self.cls_next = list(t["cls_next"])
        self.cls_group = list(t["cls_group"])
        self.cls_tail_grp = [float(x) for x in t["cls_tail_grp"]]
        self.cls_tail_tot = [float(x) for x in t["cls_tail_tot"]]
        self.cls_chain_tail = [float(x) for x in t["cls_chain_tail"]]
        self.cls_chain_entry = [float(x) for x in t["cls_chain_entry"]]
        self.cls_cont = list(t["cls_cont"])
        self.cls_kind = list(t["cls_kind"])
        self.cls_mean = [float(x) for x in t["cls_mean"]]
        self.cls_mix_start = list(t["cls_mix_start"])
        self.cls_mix_len = list(t["cls_mix_len"])
        self.cls_ustream = list(t["cls_ustream"])
        self.cls_estream = list(t["cls_estream"])
        self.mix_cumw = [float(x) for x in t["mix_cumw"]]
        self.mix_k = list(t["mix_k"])
        self.mix_mean = [float(x) for x in t["mix_mean"]]
        self.st_disc = list(t["st_disc"])
        self.src_class = list(t["src_class"])
        self.src_kind = list(t["src_kind"])
        self.src_p = [[float(v) for v in row] for row in t["src_p"]]
        self.src_mix_start = list(t["src_mix_start"])
        self.src_mix_len = list(t["src_mix_len"])
        self.src_ustream = list(t["src_ustream"])
        self.src_estream = list(t["src_estream"])
        self.nstreams = t["nstreams"]
        self._refill = refill

        self.buf = [None] * self.nstreams
        self.bpos = [0] * self.nstreams
        self.blen = [0] * self.nstreams

        K, S, G = self.K, self.S, self.G
        self.counts = [0] * K
        self.arrivals = [0] * K
        self.departures = [0] * K
        self.dorig = [0] * K
        self.external = [0] * K
        self.z0 = [0] * K
        self.grp_count = [0] * G
        # workloads are kept lazily: value at an anchor time, drained at the
        # current rate since; an anchor moves only when its rate or level changes
        self.grp_W = [0.0] * G
        self.grp_ta = [0.0] * G
        self.grp_rate = [0.0] * G
        self.grp_rate0 = [0.0] * G
        self.grp_jump = [0.0] * G
        self.W_tot = 0.0
        self.tot_ta = 0.0
        self.tot_rate0 = 0.0
        self.tot_jump = 0.0
        self.st_n = [0] * S
        self.st_jobs = [[] for _ in range(S)]
        self.st_cur = [-1] * S
        self.st_next = [INF] * S
        self.st_seq = [0] * S
        self.st_dep = [-1] * S
        self.st_upd = [0.0] * S
        self.st_grp_rate = [[0.0] * G for _ in range(S)]
        self.src_next = [INF] * self.nsrc
        self.src_seq = [0] * self.nsrc

        # job pool
        self.j_class = []
        self.j_id = []
        self.j_stamp = []
        self.j_res = []
        self.j_upd = []
        self.j_svc = []
        self.j_cont = []
        self.j_rate = []
        self.j_init = []
        self.j_pre = []
        self.j_entry = []
        self.free = []

        self.clock = 0.0
        self.seq = 0
        self.next_id = 0
        self.steps_total = 0
        self.total = 0
        self.mask = [0] * K
        self.mask_count = 0

        self.audit = False
        self.audit_counts = [0] * N_AUDIT
        self.audit_first = ""
        self.st_prev = [-1] * S

        self._reset_records()

    # ------------------------------------------------------------------ rng
    def _draw(self, sid):
        if self.bpos[sid] >= self.blen[sid]:
            arr = self._refill(sid)
            self.buf[sid] = [float(x) for x in arr]
            self.blen[sid] = len(arr)
            self.bpos[sid] = 0
        x = self.buf[sid][self.bpos[sid]]
        self.bpos[sid] += 1
        return x

    def _mixture(self, start, n, us, es):
        idx = start + n - 1
        if n > 1:
            u = self._draw(us)
            for i in range(start, start + n):
                if u < self.mix_cumw[i]:
                    idx = i
                    break
        total = 0.0
        m = self.mix_mean[idx]
        for _ in range(self.mix_k[idx]):
            total += m * self._draw(es)
        return total

    def _service(self, k):
        kind = self.cls_kind[k]
        if kind == 0:
            return self.cls_mean[k]
        if kind == 1:
            return self.cls_mean[k] * self._draw(self.cls_estream[k])
        return self._mixture(self.cls_mix_start[k], self.cls_mix_len[k], self.cls_ustream[k], self.cls_estream[k])

    def _interarrival(self, i):
        kind = self.src_kind[i]
        p = self.src_p[i]
        if kind == 0:
            # p = (atom threshold, atom, lower, upper, beta)
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
    def _new_job(self):
        if self.free:
            return self.free.pop()
        self.j_class.append(0)
        self.j_id.append(0)
        self.j_stamp.append(0.0)
        self.j_res.append(0.0)
        self.j_upd.append(0.0)
        self.j_svc.append(0.0)
        self.j_cont.append(False)
        self.j_rate.append(0.0)
        self.j_init.append(False)
        self.j_pre.append(False)
        self.j_entry.append(0.0)
        return len(self.j_class) - 1

    def _key_less(self, a, b):
        sa = self.j_stamp[a]
        sb = self.j_stamp[b]
        if sa != sb:
            return sa < sb
        return self.j_id[a] < self.j_id[b]

    def _insert(self, s, j):
        lst = self.st_jobs[s]
        lst.append(j)
        i = len(lst) - 1
        while i > 0 and self._key_less(j, lst[i - 1]):
            lst[i] = lst[i - 1]
            i -= 1
        lst[i] = j
        self.st_n[s] += 1

    def _remove(self, s, j):
        lst = self.st_jobs[s]
        if lst[-1] == j:
            lst.pop()
        elif lst[0] == j:
            del lst[0]
        else:
            lst.remove(j)
        self.st_n[s] -= 1

    # -------------------------------------------------------------- records
    def _reset_records(self):
        self.rec_events = False
        self.rec_series = False
        self.rec_stations = False
        self.grid_dt = 0.0
        self.grid_next = INF
        self.ev_time = []
        self.ev_kind = []
        self.ev_cls = []
        self.ev_job = []
        self.se_time = []
        self.se_cnt = []
        self.se_W = []
        self.se_Wtot = []
        self.sl_time = []
        self.sl_cnt = []
        self.sl_W = []
        self.sl_Wtot = []

    def _log(self, kind, k, j):
        if self.rec_events:
            self.ev_time.append(self.clock)
            self.ev_kind.append(kind)
            self.ev_cls.append(k)
            self.ev_job.append(self.j_id[j])

    def _w_at(self, g, t):
        return self.grp_W[g] - self.grp_rate[g] * (t - self.grp_ta[g])

    def _wtot_at(self, t):
        rate = 0.0
        for g in range(self.G):
            rate += self.grp_rate[g]
        return self.W_tot - rate * (t - self.tot_ta)

    def _series_row(self, t):
        self.se_time.append(t)
        self.se_cnt.extend(self.grp_count)
        for g in range(self.G):
            self.se_W.append(self._w_at(g, t))
        self.se_Wtot.append(self._wtot_at(t))

    def _station_row(self):
        t = self.clock
        self.sl_time.append(t)
        self.sl_cnt.extend(self.st_n)
        for g in range(self.G):
            self.sl_W.append(self._w_at(g, t))
        self.sl_Wtot.append(self._wtot_at(t))

    def _open_step(self):
        rate = 0.0
        for g in range(self.G):
            self.grp_rate0[g] = self.grp_rate[g]
            self.grp_jump[g] = 0.0
            rate += self.grp_rate[g]
        self.tot_rate0 = rate
        self.tot_jump = 0.0

    def _close_step(self, t):
        rate = 0.0
        for g in range(self.G):
            rate += self.grp_rate[g]
            if self.grp_jump[g] != 0.0 or self.grp_rate[g] != self.grp_rate0[g]:
                self.grp_W[g] = self.grp_W[g] - self.grp_rate0[g] * (t - self.grp_ta[g]) + self.grp_jump[g]
                self.grp_ta[g] = t
        if self.tot_jump != 0.0 or rate != self.tot_rate0:
            self.W_tot = self.W_tot - self.tot_rate0 * (t - self.tot_ta) + self.tot_jump
            self.tot_ta = t

    # ---------------------------------------------------------- allocation
    def _select(self, s):
        lst = self.st_jobs[s]
        if not lst:
            return -1
        disc = self.st_disc[s]
        if disc == FIFO:
            return lst[0]
        if disc == LIFO_NP and self.st_cur[s] >= 0:
            return self.st_cur[s]
        last = lst[-1]
        if self.j_stamp[last] != NEG_INF:
            return last
        return lst[0]

    def _reallocate(self, s, t):
        disc = self.st_disc[s]
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
                self.j_pre[old] = True
                self.grp_rate[self.cls_group[self.j_class[old]]] -= 1.0
                self._log(PREEMPT, self.j_class[old], old)
            self.st_cur[s] = new
            if new >= 0:
                if self.j_cont[new]:
                    # next stage of a deterministic chain: the service segment goes on
                    self.j_cont[new] = False
                else:
                    self.j_upd[new] = t
                self.j_rate[new] = 1.0
                self.grp_rate[self.cls_group[self.j_class[new]]] += 1.0
                if self.j_pre[new]:
                    self.j_pre[new] = False
                    self._log(RESUME, self.j_class[new], new)
                self.st_next[s] = self.j_upd[new] + (self.j_res[new] - self.cls_chain_tail[self.j_class[new]])
                self.st_dep[s] = new
                self.st_seq[s] = self.seq
                self.seq += 1
            else:
                self.st_next[s] = INF
                self.st_dep[s] = -1
            return

        # shared disciplines: bring every residual up to t, then re-split
        lst = self.st_jobs[s]
        d = t - self.st_upd[s]
        if d != 0.0:
            for j in lst:
                r = self.j_rate[j]
                if r != 0.0:
                    self.j_res[j] -= r * d
                self.j_upd[j] = t
        self.st_upd[s] = t
        n = len(lst)
        G = self.G
        new_grp = [0.0] * G
        if disc == PS:
            share = 1.0 / n if n else 0.0
            for j in lst:
                self.j_rate[j] = share
                new_grp[self.cls_group[self.j_class[j]]] += share
        elif disc == IS:
            for j in lst:
                self.j_rate[j] = 1.0
                new_grp[self.cls_group[self.j_class[j]]] += 1.0
        else:
            for j in lst:
                self.j_rate[j] = 0.0
            for j in lst:
                k = self.j_class[j]
                # first job of each class in key order is its head
                if self.j_rate[j] == 0.0 and self._is_head(lst, j):
                    share = self.counts[k] / n
                    self.j_rate[j] = share
                    new_grp[self.cls_group[k]] += share
        old_grp = self.st_grp_rate[s]
        for g in range(G):
            if new_grp[g] != old_grp[g]:
                self.grp_rate[g] += new_grp[g] - old_grp[g]
        self.st_grp_rate[s] = new_grp
        best = -1
        best_t = INF
        for j in lst:
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

    def _is_head(self, lst, j):
        k = self.j_class[j]
        for i in lst:
            if self.j_class[i] == k:
                return i == j
        return False

    # ------------------------------------------------------------ movement
    def _enter(self, j, k, t, external, cont):
        svc = self._service(k)
        self.j_class[j] = k
        self.j_stamp[j] = t
        self.j_svc[j] = svc
        self.j_rate[j] = 0.0
        self.j_pre[j] = False
        if cont:
            # j_res/j_upd still describe the whole chain's open service segment
            self.j_cont[j] = True
        else:
            entry = self.cls_chain_entry[k]
            self.j_res[j] = entry if entry >= 0.0 else svc + self.cls_chain_tail[k]
            self.j_upd[j] = t
            self.j_cont[j] = False
        g = self.cls_group[k]
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
        s = self.cls_station[k]
        self._insert(s, j)
        self._reallocate(s, t)

    def _depart(self, s, t):
        j = self.st_dep[s]
        k = self.j_class[j]
        single = self.st_disc[s] <= FIFO
        if single:
            left = (self.j_res[j] - self.cls_chain_tail[k]) - (t - self.j_upd[j])
            self.grp_rate[self.cls_group[k]] -= 1.0
            self.st_cur[s] = -1
            self.st_next[s] = INF
            self.st_dep[s] = -1
        else:
            self._reallocate_advance(s, t)
            left = self.j_res[j] - self.cls_chain_tail[k]
        self.j_rate[j] = 0.0
        if self.audit and abs(left) > ACCOUNTING_TOL:
            self._violate(A_ACCOUNT, f"job {self.j_id[j]} class {k}: {left!r} of {self.j_svc[j]!r} left at departure")
        self._remove(s, j)
        g = self.cls_group[k]
        self.counts[k] -= 1
        self.departures[k] += 1
        if self.j_init[j]:
            self.dorig[k] += 1
            self.j_init[j] = False
        self.grp_count[g] -= 1
        self.grp_jump[g] -= self.cls_tail_grp[k]
        self.tot_jump -= self.cls_tail_tot[k]
        if self.mask[k]:
            self.mask_count -= 1
        self._log(DEPARTURE, k, j)
        nk = self.cls_next[k]
        moved = True
        if nk >= 0:
            if self.cls_station[nk] == s:
                moved = False
            cont = bool(self.cls_cont[nk]) and not moved and self.st_disc[s] <= LIFO_NP
            self._enter(j, nk, t, False, cont)
            if self.j_cont[j]:
                # not picked up again at once: close the segment here
                self.j_res[j] -= t - self.j_upd[j]
                self.j_upd[j] = t
                self.j_cont[j] = False
        else:
            self.total -= 1
            self.free.append(j)
        self._reallocate(s, t)
        return moved

    def _reallocate_advance(self, s, t):
        lst = self.st_jobs[s]
        d = t - self.st_upd[s]
        if d != 0.0:
            for j in lst:
                r = self.j_rate[j]
                if r != 0.0:
                    self.j_res[j] -= r * d
                self.j_upd[j] = t
        self.st_upd[s] = t

    # ------------------------------------------------------------- set-up
    def add_job(self, k, residual, sentinel):
        """Place a job at class ``k`` before the run starts.

        ``residual`` < 0 requests a freshly sampled service time.
        """
        j = self._new_job()
        svc = self._service(k) if residual < 0 else float(residual)
        self.j_class[j] = k
        self.j_id[j] = self.next_id
        self.next_id += 1
        self.j_stamp[j] = NEG_INF if sentinel else self.clock
        entry = self.cls_chain_entry[k]
        self.j_res[j] = entry if (residual < 0 and entry >= 0.0) else svc + self.cls_chain_tail[k]
        self.j_svc[j] = svc
        self.j_cont[j] = False
        self.j_rate[j] = 0.0
        self.j_upd[j] = self.clock
        self.j_init[j] = True
        self.j_pre[j] = False
        self.j_entry[j] = self.clock
        g = self.cls_group[k]
        self.counts[k] += 1
        self.z0[k] += 1
        self.total += 1
        self.grp_count[g] += 1
        # before start(): nothing drains yet, so anchors take the work directly
        self.grp_W[g] += svc + self.cls_tail_grp[k]
        self.grp_ta[g] = self.clock
        self.W_tot += svc + self.cls_tail_tot[k]
        self.tot_ta = self.clock
        self._insert(self.cls_station[k], j)
        return self.j_id[j]

    def start(self, clocks):
        """Allocate service everywhere and schedule the sources.

        ``clocks[i]`` < 0 asks for a sampled first interarrival.
        """
        t = self.clock
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
    def _violate(self, code, msg):
        self.audit_counts[code] += 1
        if not self.audit_first:
            self.audit_first = f"t={self.clock!r}: {msg}"

    def _beats(self, a, b):
        sa = self.j_stamp[a]
        sb = self.j_stamp[b]
        if sa != sb:
            return sa > sb
        if sa == NEG_INF:
            return self.j_id[a] < self.j_id[b]
        return self.j_id[a] > self.j_id[b]

    def _audit_step(self, prev_clock):
        t = self.clock
        if t < prev_clock:
            self._violate(A_TIME, f"clock went back from {prev_clock!r}")
        K = self.K
        seen = [0] * K
        for s in range(self.S):
            lst = self.st_jobs[s]
            n = len(lst)
            disc = self.st_disc[s]
            rate_sum = 0.0
            for j in lst:
                seen[self.j_class[j]] += 1
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
                for j in lst:
                    if self.j_rate[j] != 1.0:
                        self._violate(A_RATE, f"IS job {self.j_id[j]} rate {self.j_rate[j]!r}")
                continue
            if abs(rate_sum - 1.0) > RATE_TOL:
                self._violate(A_WORK, f"station {s} rates sum to {rate_sum!r}")
            if disc <= FIFO:
                cur = self.st_cur[s]
                prev = self.st_prev[s]
                if disc == LIFO_NP and prev >= 0 and prev in lst:
                    if cur != prev:
                        self._violate(A_NONPREEMPT, f"station {s} switched away from job {self.j_id[prev]}")
                else:
                    expect = self._brute_best(lst, disc != FIFO)
                    if cur != expect:
                        self._violate(A_SELECT, f"station {s} serves job {self.j_id[cur] if cur >= 0 else -1}, expected {self.j_id[expect]}")
                for j in lst:
                    want = 1.0 if j == cur else 0.0
                    if self.j_rate[j] != want:
                        self._violate(A_RATE, f"job {self.j_id[j]} rate {self.j_rate[j]!r}")
            elif disc == PS:
                for j in lst:
                    if self.j_rate[j] != 1.0 / n:
                        self._violate(A_RATE, f"PS job {self.j_id[j]} rate {self.j_rate[j]!r}")
            else:
                heads = {}
                for j in lst:
                    k = self.j_class[j]
                    if k not in heads or self._key_less(j, heads[k]):
                        heads[k] = j
                for j in lst:
                    k = self.j_class[j]
                    want = self.counts[k] / n if j == heads[k] else 0.0
                    if self.j_rate[j] != want:
                        self._violate(A_RATE, f"HLPPS job {self.j_id[j]} rate {self.j_rate[j]!r}, want {want!r}")
            self.st_prev[s] = self.st_cur[s]
        inflow = list(self.external)
        for k in range(K):
            nk = self.cls_next[k]
            if nk >= 0:
                inflow[nk] += self.departures[k]
        for k in range(K):
            if inflow[k] != self.arrivals[k]:
                self._violate(A_FLOW, f"class {k}: arrivals {self.arrivals[k]} != inflow {inflow[k]}")
            if self.counts[k] != self.z0[k] + self.arrivals[k] - self.departures[k] or self.counts[k] != seen[k]:
                self._violate(A_COUNT, f"class {k}: count {self.counts[k]} vs {seen[k]} present")

    def _brute_best(self, lst, lifo):
        best = lst[0]
        for j in lst:
            if lifo:
                if self._beats(j, best):
                    best = j
            elif self._key_less(j, best):
                best = j
        return best

    # ------------------------------------------------------------------ run
    def set_mask(self, classes):
        self.mask = [0] * self.K
        self.mask_count = 0
        for k in classes:
            self.mask[k] = 1
            self.mask_count += self.counts[k]

    def run(self, horizon, max_events, use_mask, cap, rec_events, rec_series, rec_stations, grid_dt, audit):
        self._reset_records()
        self.rec_events = bool(rec_events)
        self.rec_series = bool(rec_series)
        self.rec_stations = bool(rec_stations)
        self.audit = bool(audit)
        self.grid_dt = float(grid_dt)
        if self.grid_dt > 0.0:
            self.grid_next = self.clock + self.grid_dt
        t0 = self.clock
        min_count = self.total
        min_W = self._wtot_at(self.clock)
        steps = 0
        reason = R_IDLE
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
            # next event: smallest (time, seq) over sources then stations
            best_t = INF
            best_seq = 0
            best_src = -1
            best_st = -1
            for i in range(self.nsrc):
                ti = self.src_next[i]
                if ti < best_t or (ti == best_t and best_t != INF and self.src_seq[i] < best_seq):
                    best_t = ti
                    best_seq = self.src_seq[i]
                    best_src = i
                    best_st = -1
            for s in range(self.S):
                ts = self.st_next[s]
                if ts < best_t or (ts == best_t and best_t != INF and self.st_seq[s] < best_seq):
                    best_t = ts
                    best_seq = self.st_seq[s]
                    best_st = s
                    best_src = -1
            if best_t == INF:
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
                self.j_init[j] = False
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

    def _advance_to(self, t):
        if t <= self.clock:
            return
        if self.grid_dt > 0.0:
            while self.grid_next <= t:
                self._series_row(self.grid_next)
                self.grid_next += self.grid_dt
        self.clock = t

    def _finish(self, reason, steps, t0, min_count, min_W):
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
            "ev_time": self.ev_time,
            "ev_kind": self.ev_kind,
            "ev_cls": self.ev_cls,
            "ev_job": self.ev_job,
            "se_time": self.se_time,
            "se_cnt": self.se_cnt,
            "se_W": self.se_W,
            "se_Wtot": self.se_Wtot,
            "sl_time": self.sl_time,
            "sl_cnt": self.sl_cnt,
            "sl_W": self.sl_W,
            "sl_Wtot": self.sl_Wtot,
        }

    def jobs(self):
        """Current job records: (class, id, stamp, residual, service, init, entry)."""
        out = []
        t = self.clock
        for s in range(self.S):
            for j in self.st_jobs[s]:
                res = self.j_res[j] - self.j_rate[j] * (t - self.j_upd[j]) - self.cls_chain_tail[self.j_class[j]]
                out.append((self.j_class[j], self.j_id[j], self.j_stamp[j], res, self.j_svc[j], self.j_init[j], self.j_entry[j]))
        return out

    def serving(self):
        """Per-station list of (job id, rate) for jobs receiving service."""
        out = []
        for s in range(self.S):
            out.append([(self.j_id[j], self.j_rate[j]) for j in self.st_jobs[s] if self.j_rate[j] > 0.0])
        return out

    def source_clocks(self):
        return [self.src_next[i] - self.clock for i in range(self.nsrc)]

    def state_arrays(self):
        return {
            "counts": list(self.counts),
            "arrivals": list(self.arrivals),
            "departures": list(self.departures),
            "dorig": list(self.dorig),
            "z0": list(self.z0),
            "grp_count": list(self.grp_count),
            "grp_W": [self._w_at(g, self.clock) for g in range(self.G)],
            "W_tot": self._wtot_at(self.clock),
            "st_n": list(self.st_n),
            "clock": self.clock,
            "total": self.total,
            "steps_total": self.steps_total,
        }

    def audit_report(self):
        return list(self.audit_counts), self.audit_first
