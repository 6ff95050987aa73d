"""Pure-Python kernels.

Statement-for-statement mirror of ``_kernels.pyx``: same draws in the same
order, same floating-point operations, so both backends return bit-identical
arrays for identical inputs. Used when the extension is not built or when
``MULTILEVEL_READOUT_PURE_PYTHON=1``.
"""

from math import ceil, cos, log, sin, sqrt, pi

from ._layout import (
    MAX_JUMPS, OK, P_DELTA0, P_DELTA1, P_DEMOL, P_FIXED, P_G_EF, P_G_FH,
    P_G_GE, P_G_LEAK, P_G_UP, P_KD, P_KU, P_LEAD, P_LEAK, P_MAX_ITER, P_NMAX,
    P_T_MAP, P_T_R, R_DT, R_G_EF, R_G_FH, R_G_GE, R_G_UP, R_NOISE,
)
from ._rng import SplitMix, trial_key

BACKEND = "python"


def _evolve_storage(rng, n, duration, kd, ku, nmax):
    t = 0.0
    while True:
        loss = n * kd
        gain = (n + 1) * ku if n < nmax else 0.0
        total = loss + gain
        if total <= 0.0:
            break
        t += -log(1.0 - rng.next_double()) / total
        if t > duration:
            break
        if rng.next_double() * total < loss:
            n -= 1
        else:
            n += 1
    return n


def _demolish(rng, n, p):
    if p <= 0.0:
        return n
    lost = 0
    for _ in range(n):
        if rng.next_double() < p:
            lost += 1
    return n - lost


def _evolve_ancilla(rng, a, duration, down, g_up):
    t = 0.0
    while True:
        if a == 0:
            rate = g_up
        else:
            rate = down[a]
        if rate <= 0.0:
            break
        t += -log(1.0 - rng.next_double()) / rate
        if t > duration:
            break
        if a == 0:
            a = 1
        else:
            a -= 1
    return a


def _swap(a, x, y):
    if a == x:
        return y
    if a == y:
        return x
    return a


def _ladder(a, outcome):
    if outcome == 3:
        a = _swap(a, 2, 3)
    if outcome >= 2:
        a = _swap(a, 1, 2)
    if outcome >= 1:
        a = _swap(a, 0, 1)
    return a


def _sample_row(rng, cdf, row):
    u = rng.next_double()
    for k in range(3):
        if u < cdf[row][k]:
            return k
    return 3


def _reset(rng, a, cfg, cdf, down, state):
    """Run the feedforward reset; ``state`` is [n, total_time, first_outcome]."""
    it = 0
    while True:
        it += 1
        out = _sample_row(rng, cdf, a)
        if it == 1:
            state[2] = out
        # misassignment within g..h is dominated by transitions during the
        # measurement, so the ancilla is left in the assigned level
        if a <= 3:
            a = out
        state[0] = _demolish(rng, state[0], cfg[P_DEMOL])
        if rng.next_double() < cfg[P_LEAK]:
            a = 4
        if out != 0:
            a = _ladder(a, out)
        a = _evolve_ancilla(rng, a, cfg[P_T_R], down, cfg[P_G_UP])
        state[0] = _evolve_storage(rng, state[0], cfg[P_T_R], cfg[P_KD], cfg[P_KU], int(cfg[P_NMAX]))
        state[1] += cfg[P_T_R]
        if out == 0:
            return it, a
        if it >= int(cfg[P_MAX_ITER]):
            return -1, a


def _down_rates(cfg):
    return (0.0, cfg[P_G_GE], cfg[P_G_EF], cfg[P_G_FH], cfg[P_G_LEAK])


def storage_batch(seed, stream, trial_start, n_trials, n0, duration, kd, ku, nmax, out_n):
    for i in range(n_trials):
        rng = SplitMix(trial_key(seed, stream, trial_start + i))
        out_n[i] = _evolve_storage(rng, n0, duration, kd, ku, nmax)


def reset_batch(seed, stream, trial_start, n_trials, level0, cfg, cdf, out_iters, out_final):
    cfg = [float(x) for x in cfg]
    cdf = cdf.tolist()
    down = _down_rates(cfg)
    for i in range(n_trials):
        rng = SplitMix(trial_key(seed, stream, trial_start + i))
        state = [0, 0.0, 0]
        it, a = _reset(rng, level0, cfg, cdf, down, state)
        if it < 0:
            return i
        out_iters[i] = it
        out_final[i] = a
    return OK


def protocol_batch(seed, stream, trial_start, n_trials, n_cycles, n0, cfg, in_s,
                   eps_map, cdf, outcomes, raw, iters, total_time):
    cfg = [float(x) for x in cfg]
    cdf = cdf.tolist()
    in_s = [int(x) for x in in_s]
    eps_map = [float(x) for x in eps_map]
    kd = cfg[P_KD]
    ku = cfg[P_KU]
    nmax = int(cfg[P_NMAX])
    t_map = cfg[P_T_MAP]
    t_r = cfg[P_T_R]
    fixed = cfg[P_FIXED] > 0.5
    down = _down_rates(cfg)
    for i in range(n_trials):
        rng = SplitMix(trial_key(seed, stream, trial_start + i))
        n = n0
        a = 0
        total = 0.0
        if cfg[P_LEAD] > 0.0:
            n = _demolish(rng, n, cfg[P_DEMOL])
            n = _evolve_storage(rng, n, cfg[P_LEAD], kd, ku, nmax)
        for c in range(n_cycles):
            n = _evolve_storage(rng, n, t_map, kd, ku, nmax)
            total += t_map
            ins = in_s[n]
            if fixed:
                u = rng.next_double()
                if ins:
                    flip = u < 1.0 - cfg[P_DELTA0]
                else:
                    flip = u < cfg[P_DELTA1]
                outcomes[i, c] = 1 if flip else 0
                raw[i, c] = 1 if flip else 0
                iters[i, c] = 1
                n = _demolish(rng, n, cfg[P_DEMOL])
                n = _evolve_storage(rng, n, t_r, kd, ku, nmax)
                total += t_r
                continue
            u = rng.next_double()
            err = u < eps_map[n]
            if (ins != 0) != err:
                if a <= 1:
                    a = 1 - a
            state = [n, total, 0]
            it, a = _reset(rng, a, cfg, cdf, down, state)
            if it < 0:
                return i
            n = state[0]
            total = state[1]
            raw[i, c] = state[2]
            outcomes[i, c] = 1 if state[2] != 0 else 0
            iters[i, c] = it
        total_time[i] = total
    return OK


def mle_labels(outcomes, iters, trans, emis, rows, row_weight, row_logical, labels):
    n_trials = outcomes.shape[0]
    n_cycles = outcomes.shape[1]
    dim = trans.shape[1]
    n_rows = rows.shape[0]
    trans = trans.tolist()
    emis = emis.tolist()
    rows = rows.tolist()
    row_weight = row_weight.tolist()
    row_logical = row_logical.tolist()
    outs = outcomes.tolist()
    its = iters.tolist()
    for i in range(n_trials):
        A = [[0.0] * dim for _ in range(n_rows)]
        for r in range(n_rows):
            A[r][rows[r]] = 1.0
        for c in range(n_cycles):
            k = 0 if c == 0 else its[i][c - 1]
            y = outs[i][c]
            tk = trans[k]
            big = 0.0
            for r in range(n_rows):
                src = A[r]
                dst = [0.0] * dim
                for m in range(dim):
                    acc = 0.0
                    for n in range(dim):
                        acc += tk[m][n] * src[n]
                    dst[m] = acc * emis[m][y]
                    if dst[m] > big:
                        big = dst[m]
                A[r] = dst
            if big <= 0.0:
                big = 1.0
            m0 = 0.0
            m1 = 0.0
            for r in range(n_rows):
                row = A[r]
                s = 0.0
                for m in range(dim):
                    row[m] = row[m] / big
                    s += row[m]
                if row_logical[r]:
                    m1 += row_weight[r] * s
                else:
                    m0 += row_weight[r] * s
            labels[i, c] = 1 if m1 > m0 else 0


def readout_batch(seed, stream, trial_start, n_trials, level0, cfg, centers, rcum, grid_n, counts):
    n_grid = grid_n.shape[0]
    cfg = [float(x) for x in cfg]
    dt = cfg[R_DT]
    sigma = cfg[R_NOISE]
    down = (0.0, cfg[R_G_GE], cfg[R_G_EF], cfg[R_G_FH])
    g_up = cfg[R_G_UP]
    centers = centers.tolist()
    rcum = rcum.tolist()
    grid_n = grid_n.tolist()
    horizon = grid_n[n_grid - 1] * dt
    norms = [centers[s][0] * centers[s][0] + centers[s][1] * centers[s][1] for s in range(4)]
    for i in range(n_trials):
        rng = SplitMix(trial_key(seed, stream, trial_start + i))
        seg_start = [0]
        seg_level = [level0]
        level = level0
        t = 0.0
        while True:
            rate = g_up if level == 0 else down[level]
            if rate <= 0.0:
                break
            t += -log(1.0 - rng.next_double()) / rate
            if t >= horizon:
                break
            level = 1 if level == 0 else level - 1
            if len(seg_start) >= MAX_JUMPS:
                return i
            seg_start.append(int(ceil(t / dt)))
            seg_level.append(level)
        n_seg = len(seg_start)
        wx = 0.0
        wy = 0.0
        prev = 0
        for k in range(n_grid):
            nk = grid_n[k]
            u1 = rng.next_double()
            u2 = rng.next_double()
            rad = sqrt(-2.0 * log(1.0 - u1))
            scale = sigma * sqrt(rcum[nk] - rcum[prev])
            wx += scale * rad * cos(2.0 * pi * u2)
            wy += scale * rad * sin(2.0 * pi * u2)
            prev = nk
            mx = 0.0
            my = 0.0
            for j in range(n_seg):
                a = seg_start[j]
                if a >= nk:
                    break
                b = seg_start[j + 1] if j + 1 < n_seg else nk
                if b > nk:
                    b = nk
                w = rcum[b] - rcum[a]
                mx += centers[seg_level[j]][0] * w
                my += centers[seg_level[j]][1] * w
            best = 0
            best_score = 0.0
            for s in range(4):
                score = norms[s] * rcum[nk] - 2.0 * (centers[s][0] * (mx + wx) + centers[s][1] * (my + wy))
                if s == 0 or score < best_score:
                    best = s
                    best_score = score
            counts[k, best] += 1
    return OK
