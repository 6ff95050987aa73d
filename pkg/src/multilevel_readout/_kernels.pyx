# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled Monte Carlo kernels.

Mirrors ``_fallback.py`` draw for draw; the test suite checks bit-identity.
Config-vector indices are defined in ``_layout.py``.
"""

from libc.math cimport ceil, cos, log, sin, sqrt, M_PI
from libc.stdint cimport int64_t, uint8_t, uint16_t, uint64_t

BACKEND = "cython"

cdef enum:
    P_KD = 0
    P_KU = 1
    P_T_MAP = 2
    P_T_R = 3
    P_LEAD = 4
    P_DEMOL = 5
    P_G_GE = 6
    P_G_EF = 7
    P_G_FH = 8
    P_G_UP = 9
    P_G_LEAK = 10
    P_LEAK = 11
    P_FIXED = 12
    P_DELTA0 = 13
    P_DELTA1 = 14
    P_NMAX = 15
    P_MAX_ITER = 16
    R_DT = 0
    R_NOISE = 1
    R_G_GE = 2
    R_G_EF = 3
    R_G_FH = 4
    R_G_UP = 5
    MAX_JUMPS = 256
    MAX_DIM = 64
    MAX_ROWS = 16

cdef uint64_t GOLDEN = 0x9E3779B97F4A7C15ULL
cdef double INV_2_53 = 1.0 / 9007199254740992.0


cdef inline uint64_t mix64(uint64_t z) nogil:
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL
    return z ^ (z >> 31)


cdef inline uint64_t c_trial_key(uint64_t seed, uint64_t stream, uint64_t trial) nogil:
    cdef uint64_t k = mix64(seed + GOLDEN)
    k = mix64(k + (stream + 1) * GOLDEN)
    return mix64(k + (trial + 1) * GOLDEN)


def trial_key(uint64_t seed, uint64_t stream, uint64_t trial):
    return c_trial_key(seed, stream, trial)


cdef inline double next_double(uint64_t* state) nogil:
    state[0] += GOLDEN
    return (mix64(state[0]) >> 11) * INV_2_53


cdef int evolve_storage(uint64_t* rng, int n, double duration, double kd, double ku, int nmax) nogil:
    cdef double t = 0.0, loss, gain, total
    while True:
        loss = n * kd
        if n < nmax:
            gain = (n + 1) * ku
        else:
            gain = 0.0
        total = loss + gain
        if total <= 0.0:
            break
        t += -log(1.0 - next_double(rng)) / total
        if t > duration:
            break
        if next_double(rng) * total < loss:
            n -= 1
        else:
            n += 1
    return n


cdef int demolish(uint64_t* rng, int n, double p) nogil:
    cdef int lost = 0, j
    if p <= 0.0:
        return n
    for j in range(n):
        if next_double(rng) < p:
            lost += 1
    return n - lost


cdef int evolve_ancilla(uint64_t* rng, int a, double duration, double* down, double g_up) nogil:
    cdef double t = 0.0, rate
    while True:
        if a == 0:
            rate = g_up
        else:
            rate = down[a]
        if rate <= 0.0:
            break
        t += -log(1.0 - next_double(rng)) / rate
        if t > duration:
            break
        if a == 0:
            a = 1
        else:
            a -= 1
    return a


cdef inline int swap_level(int a, int x, int y) nogil:
    if a == x:
        return y
    if a == y:
        return x
    return a


cdef inline int ladder(int a, int outcome) nogil:
    if outcome == 3:
        a = swap_level(a, 2, 3)
    if outcome >= 2:
        a = swap_level(a, 1, 2)
    if outcome >= 1:
        a = swap_level(a, 0, 1)
    return a


cdef inline int sample_row(uint64_t* rng, const double[:, :] cdf, int row) nogil:
    cdef double u = next_double(rng)
    cdef int k
    for k in range(3):
        if u < cdf[row, k]:
            return k
    return 3


cdef int do_reset(uint64_t* rng, int* a, const double[:] cfg, const double[:, :] cdf,
                  double* down, int* n, double* total, int* first) nogil:
    cdef int it = 0, out
    cdef int max_iter = <int>cfg[P_MAX_ITER]
    cdef int nmax = <int>cfg[P_NMAX]
    while True:
        it += 1
        out = sample_row(rng, cdf, a[0])
        if it == 1:
            first[0] = out
        # misassignment within g..h is dominated by transitions during the
        # measurement, so the ancilla is left in the assigned level
        if a[0] <= 3:
            a[0] = out
        n[0] = demolish(rng, n[0], cfg[P_DEMOL])
        if next_double(rng) < cfg[P_LEAK]:
            a[0] = 4
        if out != 0:
            a[0] = ladder(a[0], out)
        a[0] = evolve_ancilla(rng, a[0], cfg[P_T_R], down, cfg[P_G_UP])
        n[0] = evolve_storage(rng, n[0], cfg[P_T_R], cfg[P_KD], cfg[P_KU], nmax)
        total[0] += cfg[P_T_R]
        if out == 0:
            return it
        if it >= max_iter:
            return -1


cdef inline void fill_down(const double[:] cfg, double* down) nogil:
    down[0] = 0.0
    down[1] = cfg[P_G_GE]
    down[2] = cfg[P_G_EF]
    down[3] = cfg[P_G_FH]
    down[4] = cfg[P_G_LEAK]


def storage_batch(uint64_t seed, uint64_t stream, int64_t trial_start, int64_t n_trials, int n0,
                  double duration, double kd, double ku, int nmax, int64_t[:] out_n):
    cdef int64_t i
    cdef uint64_t rng
    with nogil:
        for i in range(n_trials):
            rng = c_trial_key(seed, stream, <uint64_t>(trial_start + i))
            out_n[i] = evolve_storage(&rng, n0, duration, kd, ku, nmax)


def reset_batch(uint64_t seed, uint64_t stream, int64_t trial_start, int64_t n_trials, int level0,
                const double[:] cfg, const double[:, :] cdf, int64_t[:] out_iters, int64_t[:] out_final):
    cdef int64_t i
    cdef uint64_t rng
    cdef double down[5]
    cdef int a, n, first, it
    cdef double total
    cdef int64_t status = -1
    fill_down(cfg, down)
    with nogil:
        for i in range(n_trials):
            rng = c_trial_key(seed, stream, <uint64_t>(trial_start + i))
            a = level0
            n = 0
            total = 0.0
            first = 0
            it = do_reset(&rng, &a, cfg, cdf, down, &n, &total, &first)
            if it < 0:
                status = i
                break
            out_iters[i] = it
            out_final[i] = a
    return status


def protocol_batch(uint64_t seed, uint64_t stream, int64_t trial_start, int64_t n_trials, int n_cycles,
                   int n0, const double[:] cfg, const uint8_t[:] in_s, const double[:] eps_map,
                   const double[:, :] cdf, uint8_t[:, :] outcomes, uint8_t[:, :] raw,
                   uint16_t[:, :] iters, double[:] total_time):
    cdef int64_t i
    cdef int c, n, a, it, first, ins, flip, err
    cdef uint64_t rng
    cdef double total, u
    cdef double down[5]
    cdef double kd = cfg[P_KD], ku = cfg[P_KU]
    cdef double t_map = cfg[P_T_MAP], t_r = cfg[P_T_R]
    cdef int nmax = <int>cfg[P_NMAX]
    cdef bint fixed = cfg[P_FIXED] > 0.5
    cdef int64_t status = -1
    fill_down(cfg, down)
    with nogil:
        for i in range(n_trials):
            rng = c_trial_key(seed, stream, <uint64_t>(trial_start + i))
            n = n0
            a = 0
            total = 0.0
            if cfg[P_LEAD] > 0.0:
                n = demolish(&rng, n, cfg[P_DEMOL])
                n = evolve_storage(&rng, n, cfg[P_LEAD], kd, ku, nmax)
            for c in range(n_cycles):
                n = evolve_storage(&rng, n, t_map, kd, ku, nmax)
                total += t_map
                ins = in_s[n]
                if fixed:
                    u = next_double(&rng)
                    if ins:
                        flip = u < 1.0 - cfg[P_DELTA0]
                    else:
                        flip = u < cfg[P_DELTA1]
                    outcomes[i, c] = 1 if flip else 0
                    raw[i, c] = 1 if flip else 0
                    iters[i, c] = 1
                    n = demolish(&rng, n, cfg[P_DEMOL])
                    n = evolve_storage(&rng, n, t_r, kd, ku, nmax)
                    total += t_r
                    continue
                u = next_double(&rng)
                err = u < eps_map[n]
                if (ins != 0) != (err != 0):
                    if a <= 1:
                        a = 1 - a
                first = 0
                it = do_reset(&rng, &a, cfg, cdf, down, &n, &total, &first)
                if it < 0:
                    status = i
                    break
                raw[i, c] = first
                outcomes[i, c] = 1 if first != 0 else 0
                iters[i, c] = it
            if status >= 0:
                break
            total_time[i] = total
    return status


def mle_labels(const uint8_t[:, :] outcomes, const uint16_t[:, :] iters, const double[:, :, :] trans,
               const double[:, :] emis, const int64_t[:] rows, const double[:] row_weight,
               const uint8_t[:] row_logical, uint8_t[:, :] labels):
    cdef int64_t n_trials = outcomes.shape[0], i
    cdef int n_cycles = outcomes.shape[1]
    cdef int dim = trans.shape[1]
    cdef int n_rows = rows.shape[0]
    cdef double A[MAX_ROWS][MAX_DIM]
    cdef double dst[MAX_DIM]
    cdef int r, c, k, y, m, n
    cdef double big, acc, m0, m1, s
    if dim > MAX_DIM or n_rows > MAX_ROWS:
        raise ValueError("state space too large for compiled kernel")
    with nogil:
        for i in range(n_trials):
            for r in range(n_rows):
                for m in range(dim):
                    A[r][m] = 0.0
                A[r][rows[r]] = 1.0
            for c in range(n_cycles):
                if c == 0:
                    k = 0
                else:
                    k = iters[i, c - 1]
                y = outcomes[i, c]
                big = 0.0
                for r in range(n_rows):
                    for m in range(dim):
                        acc = 0.0
                        for n in range(dim):
                            acc += trans[k, m, n] * A[r][n]
                        dst[m] = acc * emis[m, y]
                        if dst[m] > big:
                            big = dst[m]
                    for m in range(dim):
                        A[r][m] = dst[m]
                if big <= 0.0:
                    big = 1.0
                m0 = 0.0
                m1 = 0.0
                for r in range(n_rows):
                    s = 0.0
                    for m in range(dim):
                        A[r][m] = A[r][m] / big
                        s += A[r][m]
                    if row_logical[r]:
                        m1 += row_weight[r] * s
                    else:
                        m0 += row_weight[r] * s
                labels[i, c] = 1 if m1 > m0 else 0


def readout_batch(uint64_t seed, uint64_t stream, int64_t trial_start, int64_t n_trials, int level0,
                  const double[:] cfg, const double[:, :] centers, const double[:] rcum,
                  const int64_t[:] grid_n, int64_t[:, :] counts):
    cdef double dt = cfg[R_DT], sigma = cfg[R_NOISE], g_up = cfg[R_G_UP]
    cdef double down[4]
    cdef int n_grid = grid_n.shape[0]
    cdef double horizon = grid_n[n_grid - 1] * dt
    cdef double norms[4]
    cdef int64_t seg_start[MAX_JUMPS]
    cdef int seg_level[MAX_JUMPS]
    cdef int64_t i, nk, prev, a, b
    cdef int s, k, j, n_seg, level, best
    cdef uint64_t rng
    cdef double t, rate, wx, wy, u1, u2, rad, scale, mx, my, w, score, best_score
    cdef int64_t status = -1
    down[0] = 0.0
    down[1] = cfg[R_G_GE]
    down[2] = cfg[R_G_EF]
    down[3] = cfg[R_G_FH]
    for s in range(4):
        norms[s] = centers[s, 0] * centers[s, 0] + centers[s, 1] * centers[s, 1]
    with nogil:
        for i in range(n_trials):
            rng = c_trial_key(seed, stream, <uint64_t>(trial_start + i))
            seg_start[0] = 0
            seg_level[0] = level0
            n_seg = 1
            level = level0
            t = 0.0
            while True:
                if level == 0:
                    rate = g_up
                else:
                    rate = down[level]
                if rate <= 0.0:
                    break
                t += -log(1.0 - next_double(&rng)) / rate
                if t >= horizon:
                    break
                if level == 0:
                    level = 1
                else:
                    level = level - 1
                if n_seg >= MAX_JUMPS:
                    status = i
                    break
                seg_start[n_seg] = <int64_t>ceil(t / dt)
                seg_level[n_seg] = level
                n_seg += 1
            if status >= 0:
                break
            wx = 0.0
            wy = 0.0
            prev = 0
            for k in range(n_grid):
                nk = grid_n[k]
                u1 = next_double(&rng)
                u2 = next_double(&rng)
                rad = sqrt(-2.0 * log(1.0 - u1))
                scale = sigma * sqrt(rcum[nk] - rcum[prev])
                wx += scale * rad * cos(2.0 * M_PI * u2)
                wy += scale * rad * sin(2.0 * M_PI * u2)
                prev = nk
                mx = 0.0
                my = 0.0
                for j in range(n_seg):
                    a = seg_start[j]
                    if a >= nk:
                        break
                    if j + 1 < n_seg:
                        b = seg_start[j + 1]
                    else:
                        b = nk
                    if b > nk:
                        b = nk
                    w = rcum[b] - rcum[a]
                    mx += centers[seg_level[j], 0] * w
                    my += centers[seg_level[j], 1] * w
                best = 0
                best_score = 0.0
                for s in range(4):
                    score = norms[s] * rcum[nk] - 2.0 * (centers[s, 0] * (mx + wx) + centers[s, 1] * (my + wy))
                    if s == 0 or score < best_score:
                        best = s
                        best_score = score
                counts[k, best] += 1
    return status
