"""Jit-compiled twins of the hot numeric kernels.

Same semantics as the numpy implementations in ``kernels``; that module
picks the backend.  Scalar loops here are deliberately plain so numba
emits tight code, and no fastmath is used so both backends follow IEEE
evaluation order.
"""

import numpy as np
from numba import njit

STATUS_OK = 0
STATUS_MAX_STEPS = 1
STATUS_UNDERFLOW = 2


@njit(cache=True)
def matvec(x, out, w_act, active_bits, out_coef, tr_coef, death, birth):
    n = x.shape[0]
    nb = active_bits.shape[0]
    for i in range(1, n):
        s = w_act[i]
        slo = 0.0
        shi = 0.0
        for k in range(nb):
            m = np.int64(1) << active_bits[k]
            if i & m:
                slo += x[i ^ m]
            else:
                shi += x[i | m]
        out[i] = out_coef[s] * x[i] + tr_coef[s] * slo + death * shi
    out[0] = 0.0
    for k in range(nb):
        out[np.int64(1) << active_bits[k]] += birth


@njit(cache=True)
def solve_interval(x, t0, t1, w_act, active_bits, out_coef, tr_coef,
                   death, birth, rtol, atol, max_steps):
    """Dormand-Prince 4(5) with FSAL from t0 to t1, x updated in place.

    Returns (status, t_reached, n_matvec, n_accepted, n_rejected).
    """
    n = x.shape[0]
    span = t1 - t0
    if span <= 0.0:
        return STATUS_OK, t1, 0, 0, 0

    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    k5 = np.empty(n)
    k6 = np.empty(n)
    k7 = np.empty(n)
    y = np.empty(n)
    ynew = np.empty(n)

    nfev = 0
    matvec(x, k1, w_act, active_bits, out_coef, tr_coef, death, birth)
    nfev += 1

    # initial step: probe the derivative's rate of change
    d0 = 0.0
    d1 = 0.0
    for i in range(n):
        sc = atol + rtol * abs(x[i])
        d0 += (x[i] / sc) ** 2
        d1 += (k1[i] / sc) ** 2
    d0 = np.sqrt(d0 / n)
    d1 = np.sqrt(d1 / n)
    if d0 < 1e-5 or d1 < 1e-5:
        h0 = 0.01 * span
    else:
        h0 = 0.01 * d0 / d1
        if h0 > span:
            h0 = span
    for i in range(n):
        y[i] = x[i] + h0 * k1[i]
    matvec(y, k2, w_act, active_bits, out_coef, tr_coef, death, birth)
    nfev += 1
    d2 = 0.0
    for i in range(n):
        sc = atol + rtol * abs(x[i])
        d2 += ((k2[i] - k1[i]) / sc) ** 2
    d2 = np.sqrt(d2 / n) / h0
    dm = max(d1, d2)
    if dm < 1e-30:
        h1 = span
    else:
        h1 = (0.01 / dm) ** 0.2
    h = min(100.0 * h0, h1)
    if h > span:
        h = span

    t = t0
    accepted = 0
    rejected = 0
    just_rejected = False
    tiny = 1e-14 * max(max(abs(t0), abs(t1)), 1.0)

    while t1 - t > 0.0:
        if accepted + rejected >= max_steps:
            return STATUS_MAX_STEPS, t, nfev, accepted, rejected
        if h < tiny:
            return STATUS_UNDERFLOW, t, nfev, accepted, rejected
        if h > t1 - t:
            h = t1 - t

        for i in range(n):
            y[i] = x[i] + h * (0.2 * k1[i])
        matvec(y, k2, w_act, active_bits, out_coef, tr_coef, death, birth)
        for i in range(n):
            y[i] = x[i] + h * (3.0 / 40.0 * k1[i] + 9.0 / 40.0 * k2[i])
        matvec(y, k3, w_act, active_bits, out_coef, tr_coef, death, birth)
        for i in range(n):
            y[i] = x[i] + h * (44.0 / 45.0 * k1[i] - 56.0 / 15.0 * k2[i]
                               + 32.0 / 9.0 * k3[i])
        matvec(y, k4, w_act, active_bits, out_coef, tr_coef, death, birth)
        for i in range(n):
            y[i] = x[i] + h * (19372.0 / 6561.0 * k1[i] - 25360.0 / 2187.0 * k2[i]
                               + 64448.0 / 6561.0 * k3[i] - 212.0 / 729.0 * k4[i])
        matvec(y, k5, w_act, active_bits, out_coef, tr_coef, death, birth)
        for i in range(n):
            y[i] = x[i] + h * (9017.0 / 3168.0 * k1[i] - 355.0 / 33.0 * k2[i]
                               + 46732.0 / 5247.0 * k3[i] + 49.0 / 176.0 * k4[i]
                               - 5103.0 / 18656.0 * k5[i])
        matvec(y, k6, w_act, active_bits, out_coef, tr_coef, death, birth)
        for i in range(n):
            ynew[i] = x[i] + h * (35.0 / 384.0 * k1[i] + 500.0 / 1113.0 * k3[i]
                                  + 125.0 / 192.0 * k4[i] - 2187.0 / 6784.0 * k5[i]
                                  + 11.0 / 84.0 * k6[i])
        matvec(ynew, k7, w_act, active_bits, out_coef, tr_coef, death, birth)
        nfev += 6

        errn = 0.0
        for i in range(n):
            err = h * (71.0 / 57600.0 * k1[i] - 71.0 / 16695.0 * k3[i]
                       + 71.0 / 1920.0 * k4[i] - 17253.0 / 339200.0 * k5[i]
                       + 22.0 / 525.0 * k6[i] - 1.0 / 40.0 * k7[i])
            xa = abs(x[i])
            ya = abs(ynew[i])
            big = xa if xa > ya else ya
            sc = atol + rtol * big
            errn += (err / sc) ** 2
        errn = np.sqrt(errn / n)

        if errn <= 1.0:
            t = t + h
            for i in range(n):
                x[i] = ynew[i]
                k1[i] = k7[i]
            accepted += 1
            if errn == 0.0:
                fac = 5.0
            else:
                fac = 0.9 * errn ** -0.2
                if fac > 5.0:
                    fac = 5.0
                elif fac < 0.2:
                    fac = 0.2
            if just_rejected and fac > 1.0:
                fac = 1.0
            just_rejected = False
            h = h * fac
        else:
            rejected += 1
            just_rejected = True
            fac = 0.9 * errn ** -0.2
            if fac < 0.2:
                fac = 0.2
            h = h * fac

    return STATUS_OK, t, nfev, accepted, rejected


@njit(cache=True)
def subset_sums(x, bases, masks):
    m = bases.shape[0]
    out = np.empty(m)
    for k in range(m):
        base = bases[k]
        mask = masks[k]
        acc = 0.0
        sub = mask
        while True:
            acc += x[base | sub]
            if sub == 0:
                break
            sub = (sub - 1) & mask
        out[k] = acc
    return out
