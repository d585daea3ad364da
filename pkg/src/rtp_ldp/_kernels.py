"""Compiled event-loop kernels for the particle simulator.

Layout conventions shared with the Python layer:

* layer index 0 is sigma = +1 (moves right), layer 1 is sigma = -1;
* per-layer Fenwick trees over sites hold the occupation numbers, giving
  O(log N) weighted site selection and O(1) aggregate class rates;
* tilted dynamics use thinning: proposals run at per-class envelope rates
  and are accepted with the exact time-t rate ratio, so no time-stepping
  error enters the simulation;
* path functionals (the log density of the tilted path law, Dynkin
  residuals, quadratic variation) are accumulated exactly between events
  from per-site lookup tables, which requires the corresponding fields to
  be constant in time.  Time-dependent fields go through the event-log
  replay implemented in Python.

All occupation weights are integers stored in float64 trees, so tree
arithmetic is exact and weighted selection can never land on an empty site.
"""
from __future__ import annotations

import numpy as np
from numba import njit, prange

from .rng import rng_init, rng_uniform, rng_exponential, rng_poisson

_U64 = np.uint64

STATUS_OK = 0
STATUS_EVENT_OVERFLOW = 1

EV_JUMP = 0
EV_FLIP = 1


@njit(cache=True, inline="always")
def _c_eval(rk, beta, tab_m, tab_cp, tab_cm, sigma, m):
    if rk == 0:
        return 1.0
    if rk == 1:
        return np.exp(-sigma * beta * m)
    tab = tab_cp if sigma == 1 else tab_cm
    n = tab_m.shape[0]
    if m <= tab_m[0]:
        return tab[0]
    if m >= tab_m[n - 1]:
        return tab[n - 1]
    lo = 0
    hi = n - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if tab_m[mid] <= m:
            lo = mid
        else:
            hi = mid
    w = (m - tab_m[lo]) / (tab_m[hi] - tab_m[lo])
    return tab[lo] * (1.0 - w) + tab[hi] * w


@njit(cache=True)
def _fw_build(tree, weights):
    n = weights.shape[0]
    for i in range(n + 1):
        tree[i] = 0.0
    for i in range(1, n + 1):
        tree[i] += weights[i - 1]
        j = i + (i & (-i))
        if j <= n:
            tree[j] += tree[i]


@njit(cache=True, inline="always")
def _fw_add(tree, i, delta):
    n = tree.shape[0] - 1
    j = i + 1
    while j <= n:
        tree[j] += delta
        j += j & (-j)


@njit(cache=True, inline="always")
def _fw_find(tree, target):
    # largest 0-based index whose prefix sum is <= target
    n = tree.shape[0] - 1
    k = 1
    while (k << 1) <= n:
        k <<= 1
    idx = 0
    rem = target
    while k > 0:
        nxt = idx + k
        if nxt <= n and tree[nxt] <= rem:
            idx = nxt
            rem -= tree[nxt]
        k >>= 1
    return idx


@njit(cache=True, inline="always")
def _field_eval_packed(t, pos, layer, tv_layer, tv_k, tv_cos, tv_sin):
    tot = 0.0
    nm = tv_layer.shape[0]
    deg = tv_cos.shape[1]
    for j in range(nm):
        if tv_layer[j] != layer:
            continue
        ac = 0.0
        asn = 0.0
        tp = 1.0
        for p in range(deg):
            ac += tv_cos[j, p] * tp
            asn += tv_sin[j, p] * tp
            tp *= t
        ang = 6.283185307179586 * tv_k[j] * pos
        tot += ac * np.cos(ang) + asn * np.sin(ang)
    return tot


@njit(cache=True, nogil=True)
def run_path_kernel(
    n_sites, t_final, counts,
    # switch-rate family
    rk, beta, tab_m, tab_cp, tab_cm, c_max,
    # tilt: 0 none, 1 constant-in-time site tables, 2 packed time-varying field
    tilt_mode, tjump, tflip,
    tv_layer, tv_k, tv_cos, tv_sin,
    env_jump, env_flip,
    # log-density test field W (constant in time)
    w_on, wsite, wjump, wflip,
    # Dynkin / quadratic-variation test functions (constant in time)
    phs, phj, phf, phj2, phf2,
    # boundary times (sorted, last == t_final); brec flags snapshot recording
    btimes, brec,
    rng_state,
    record_events, ev_t, ev_kind, ev_site, ev_layer,
    # outputs
    snap_counts, m_series, jumps_series, flips_series, dynk_series, qv_out,
):
    n = n_sites
    nphi = phs.shape[0]
    nb = btimes.shape[0]

    tree = np.zeros((2, n + 1))
    _fw_build(tree[0], counts[:, 0].astype(np.float64))
    _fw_build(tree[1], counts[:, 1].astype(np.float64))

    n_plus = 0
    n_minus = 0
    for x in range(n):
        n_plus += counts[x, 0]
        n_minus += counts[x, 1]
    total = n_plus + n_minus
    m = 0.0
    if total > 0:
        m = (n_plus - n_minus) / total

    # running sums for the exactly integrable path functionals
    sj = np.zeros(2)
    sf = np.zeros(2)
    pw0 = 0.0
    if w_on != 0:
        for x in range(n):
            for s in range(2):
                c = counts[x, s]
                if c > 0:
                    sj[s] += c * wjump[x, s]
                    sf[s] += c * wflip[x, s]
                    pw0 += c * wsite[x, s]
        pw0 /= n

    pphi0 = np.zeros(nphi)
    pphi = np.zeros(nphi)
    dj = np.zeros((nphi, 2))
    df = np.zeros((nphi, 2))
    qj = np.zeros((nphi, 2))
    qf = np.zeros((nphi, 2))
    for j in range(nphi):
        for x in range(n):
            for s in range(2):
                c = counts[x, s]
                if c > 0:
                    pphi[j] += c * phs[j, x, s]
                    dj[j, s] += c * phj[j, x, s]
                    df[j, s] += c * phf[j, x, s]
                    qj[j, s] += c * phj2[j, x, s]
                    qf[j, s] += c * phf2[j, x, s]
        pphi0[j] = pphi[j]

    logz_int = 0.0
    dynk_int = np.zeros(nphi)
    qv_int = np.zeros(nphi)
    jump_total = 0
    flip_total = 0
    n_events = 0

    t = 0.0
    bi = 0
    si = 0
    nf = float(n)
    status = STATUS_OK

    while True:
        cp = _c_eval(rk, beta, tab_m, tab_cp, tab_cm, 1, m)
        cm = _c_eval(rk, beta, tab_m, tab_cp, tab_cm, -1, m)
        if tilt_mode == 0:
            rj0 = nf * n_plus
            rj1 = nf * n_minus
            rf0 = cp * n_plus
            rf1 = cm * n_minus
        else:
            rj0 = nf * n_plus * env_jump[0]
            rj1 = nf * n_minus * env_jump[1]
            rf0 = c_max * env_flip[0] * n_plus
            rf1 = c_max * env_flip[1] * n_minus
        rtot = rj0 + rj1 + rf0 + rf1

        if rtot > 0.0:
            t_prop = t + rng_exponential(rng_state) / rtot
        else:
            t_prop = np.inf

        # cross accumulation boundaries that precede the proposed event
        crossed_end = False
        while bi < nb and btimes[bi] <= t_prop:
            dt = btimes[bi] - t
            if dt > 0.0:
                if w_on != 0:
                    logz_int += dt * (nf * (sj[0] + sj[1]) + cp * sf[0] + cm * sf[1])
                for j in range(nphi):
                    dynk_int[j] += dt * (dj[j, 0] + dj[j, 1] + (cp * df[j, 0] + cm * df[j, 1]) / nf)
                    qv_int[j] += dt * ((qj[j, 0] + qj[j, 1]) / nf
                                       + (cp * qf[j, 0] + cm * qf[j, 1]) / (nf * nf))
            t = btimes[bi]
            if brec[bi] != 0:
                for x in range(n):
                    snap_counts[si, x, 0] = counts[x, 0]
                    snap_counts[si, x, 1] = counts[x, 1]
                m_series[si] = m
                jumps_series[si] = jump_total
                flips_series[si] = flip_total
                for j in range(nphi):
                    dynk_series[j, si] = (pphi[j] - pphi0[j]) / nf - dynk_int[j]
                si += 1
            bi += 1
            if bi >= nb:
                crossed_end = True
                break
        if crossed_end:
            break

        dt = t_prop - t
        if w_on != 0:
            logz_int += dt * (nf * (sj[0] + sj[1]) + cp * sf[0] + cm * sf[1])
        for j in range(nphi):
            dynk_int[j] += dt * (dj[j, 0] + dj[j, 1] + (cp * df[j, 0] + cm * df[j, 1]) / nf)
            qv_int[j] += dt * ((qj[j, 0] + qj[j, 1]) / nf
                               + (cp * qf[j, 0] + cm * qf[j, 1]) / (nf * nf))
        t = t_prop

        # event category
        u = rng_uniform(rng_state) * rtot
        if u < rj0:
            kind = EV_JUMP
            s = 0
        elif u < rj0 + rj1:
            kind = EV_JUMP
            s = 1
        elif u < rj0 + rj1 + rf0:
            kind = EV_FLIP
            s = 0
        else:
            kind = EV_FLIP
            s = 1

        ns = n_plus if s == 0 else n_minus
        x = _fw_find(tree[s], rng_uniform(rng_state) * float(ns))

        sigma = 1 if s == 0 else -1
        if kind == EV_JUMP:
            y = x + 1 if s == 0 else x - 1
            if y >= n:
                y -= n
            if y < 0:
                y += n
            s2 = s
        else:
            y = x
            s2 = 1 - s

        # thinning acceptance against the envelope rate
        if tilt_mode != 0:
            if tilt_mode == 1:
                if kind == EV_JUMP:
                    factor = tjump[x, s]
                    bound = env_jump[s]
                else:
                    cs = cp if s == 0 else cm
                    factor = cs * tflip[x, s]
                    bound = c_max * env_flip[s]
            else:
                pos = x / nf
                if kind == EV_JUMP:
                    pos2 = y / nf
                    factor = np.exp(_field_eval_packed(t, pos2, s, tv_layer, tv_k, tv_cos, tv_sin)
                                    - _field_eval_packed(t, pos, s, tv_layer, tv_k, tv_cos, tv_sin))
                    bound = env_jump[s]
                else:
                    cs = cp if s == 0 else cm
                    htil = (_field_eval_packed(t, pos, 0, tv_layer, tv_k, tv_cos, tv_sin)
                            - _field_eval_packed(t, pos, 1, tv_layer, tv_k, tv_cos, tv_sin))
                    factor = cs * np.exp(-sigma * htil)
                    bound = c_max * env_flip[s]
            if rng_uniform(rng_state) * bound >= factor:
                continue

        # apply the move (x, s) -> (y, s2)
        if w_on != 0:
            sj[s] -= wjump[x, s]
            sf[s] -= wflip[x, s]
            sj[s2] += wjump[y, s2]
            sf[s2] += wflip[y, s2]
        for j in range(nphi):
            pphi[j] += phs[j, y, s2] - phs[j, x, s]
            dj[j, s] -= phj[j, x, s]
            df[j, s] -= phf[j, x, s]
            qj[j, s] -= phj2[j, x, s]
            qf[j, s] -= phf2[j, x, s]
            dj[j, s2] += phj[j, y, s2]
            df[j, s2] += phf[j, y, s2]
            qj[j, s2] += phj2[j, y, s2]
            qf[j, s2] += phf2[j, y, s2]
        counts[x, s] -= 1
        counts[y, s2] += 1
        _fw_add(tree[s], x, -1.0)
        _fw_add(tree[s2], y, 1.0)
        if kind == EV_FLIP:
            if s == 0:
                n_plus -= 1
                n_minus += 1
            else:
                n_plus += 1
                n_minus -= 1
            m = (n_plus - n_minus) / total
            flip_total += 1
        else:
            jump_total += 1

        if record_events != 0:
            if n_events >= ev_t.shape[0]:
                status = STATUS_EVENT_OVERFLOW
                break
            ev_t[n_events] = t
            ev_kind[n_events] = kind
            ev_site[n_events] = x
            ev_layer[n_events] = s
        n_events += 1

    logz = 0.0
    if w_on != 0 and status == STATUS_OK:
        pwt = 0.0
        for x in range(n):
            for s in range(2):
                c = counts[x, s]
                if c > 0:
                    pwt += c * wsite[x, s]
        pwt /= n
        logz = (pwt - pw0) - logz_int / nf

    for j in range(nphi):
        qv_out[j] = qv_int[j]

    return logz, n_events, status


@njit(cache=True, nogil=True)
def poisson_counts(rng_state, lam):
    """Draw independent Poisson occupation numbers, sites outer, layers inner."""
    n = lam.shape[0]
    counts = np.zeros((n, 2), dtype=np.int64)
    for x in range(n):
        for s in range(2):
            if lam[x, s] > 0.0:
                counts[x, s] = rng_poisson(rng_state, lam[x, s])
    return counts


@njit(cache=True, parallel=True)
def run_batch_kernel(
    n_sites, t_final, lam, fixed_counts, use_fixed,
    rk, beta, tab_m, tab_cp, tab_cm, c_max,
    tilt_mode, tjump, tflip,
    tv_layer, tv_k, tv_cos, tv_sin,
    env_jump, env_flip,
    w_on, wsite, wjump, wflip,
    phs, phj, phf, phj2, phf2,
    base_seed, n_paths, keep_final_counts,
    # outputs
    out_m, out_logz, out_dynk, out_qv, out_counts, out_total0, out_total1,
):
    """Independent replicas; replica p consumes the stream seeded with base_seed ^ p.

    Each path is simulated exactly as in ``run_path_kernel`` with a single
    terminal boundary, returning compact per-path statistics.  Results are
    indexed by replica, so the fold is deterministic however many threads run.
    """
    n = n_sites
    nphi = phs.shape[0]
    for p in prange(n_paths):
        state = rng_init(_U64(base_seed) ^ _U64(p))
        if use_fixed != 0:
            counts = fixed_counts.copy()
        else:
            counts = poisson_counts(state, lam)
        total0 = 0
        for x in range(n):
            total0 += counts[x, 0] + counts[x, 1]

        btimes = np.empty(1)
        btimes[0] = t_final
        brec = np.ones(1, dtype=np.int8)
        snap_counts = np.empty((1, n, 2), dtype=np.int64)
        m_series = np.zeros(1)
        jumps_series = np.zeros(1, dtype=np.int64)
        flips_series = np.zeros(1, dtype=np.int64)
        dynk_series = np.zeros((nphi, 1))
        qv_out = np.zeros(nphi)
        ev_f = np.empty(0)
        ev_i8 = np.empty(0, dtype=np.int8)
        ev_i32 = np.empty(0, dtype=np.int32)
        ev_i8b = np.empty(0, dtype=np.int8)

        logz, n_events, status = run_path_kernel(
            n, t_final, counts,
            rk, beta, tab_m, tab_cp, tab_cm, c_max,
            tilt_mode, tjump, tflip,
            tv_layer, tv_k, tv_cos, tv_sin,
            env_jump, env_flip,
            w_on, wsite, wjump, wflip,
            phs, phj, phf, phj2, phf2,
            btimes, brec,
            state,
            0, ev_f, ev_i8, ev_i32, ev_i8b,
            snap_counts, m_series, jumps_series, flips_series, dynk_series, qv_out,
        )

        out_m[p] = m_series[0]
        out_logz[p] = logz
        for j in range(nphi):
            out_dynk[p, j] = dynk_series[j, 0]
            out_qv[p, j] = qv_out[j]
        total1 = 0
        for x in range(n):
            total1 += counts[x, 0] + counts[x, 1]
            if keep_final_counts != 0:
                out_counts[p, x, 0] = counts[x, 0]
                out_counts[p, x, 1] = counts[x, 1]
        out_total0[p] = total0
        out_total1[p] = total1
