"""Numeric kernels for the pattern-frequency ODE system.

Two interchangeable backends: jit-compiled loops (``_kernels_numba``) and
pure numpy.  The jit backend is the default; set ``SDLT_NUMBA=0`` to force
numpy, and a failed numba import falls back silently.  Both produce the
same trajectories up to floating-point reduction order.

The state vector ``x`` is dense over a width-w slice of the pattern space
(length 2**w), slot 0 pinned at zero.  Lineage activity is a bit mask:
flips are only generated across active bit positions, and the transfer
pool size is the number of active lineages.
"""

import os
from dataclasses import dataclass

import numpy as np

_flag = os.environ.get("SDLT_NUMBA", "").strip().lower()
if _flag in ("0", "false", "no", "off", "numpy"):
    _nb = None
else:
    try:
        from . import _kernels_numba as _nb
    except ImportError:
        _nb = None

HAVE_NUMBA = _nb is not None
BACKEND = "numba" if HAVE_NUMBA else "numpy"

STATUS_OK = 0
STATUS_MAX_STEPS = 1
STATUS_UNDERFLOW = 2

_STATUS_TEXT = {
    STATUS_OK: "ok",
    STATUS_MAX_STEPS: "step budget exhausted",
    STATUS_UNDERFLOW: "step size underflow",
}


def status_text(code):
    return _STATUS_TEXT.get(code, "unknown status %d" % code)


@dataclass(frozen=True)
class SliceTables:
    """Precomputed lookups for one (width, active-mask) configuration."""

    width: int
    active_bits: np.ndarray  # int64, ascending bit positions of live lineages
    w_act: np.ndarray        # uint8, per-index popcount over active bits

    @property
    def n_active(self):
        return int(self.active_bits.shape[0])


def make_tables(width, active=None):
    """Build SliceTables; ``active`` is a boolean sequence per position
    (True = lineage still evolving), default all active."""
    if width < 1:
        raise ValueError("slice width must be >= 1")
    if active is None:
        bits = np.arange(width, dtype=np.int64)
    else:
        active = np.asarray(active, dtype=bool)
        if active.shape != (width,):
            raise ValueError("active mask length != width")
        bits = np.flatnonzero(active).astype(np.int64)
    idx = np.arange(1 << width, dtype=np.int64)
    mask = 0
    for b in bits:
        mask |= 1 << int(b)
    w_act = np.bitwise_count(idx & mask).astype(np.uint8)
    return SliceTables(width=width, active_bits=bits, w_act=w_act)


def _coef_arrays(tables, death, transfer):
    # outflow and transfer-inflow coefficients indexed by active weight
    la = tables.n_active
    if la < 1:
        raise ValueError("no active lineages in slice")
    s = np.arange(tables.width + 1, dtype=np.float64)
    out_coef = -s * (death + transfer * (1.0 - s / la))
    tr_coef = np.zeros(tables.width + 1)
    tr_coef[1:] = transfer * (s[1:] - 1.0) / la
    return out_coef, tr_coef


def _matvec_numpy(x, out, w_act, active_bits, out_coef, tr_coef, death, birth):
    w = int(round(np.log2(x.size)))
    shape = (2,) * w
    slo = np.zeros_like(x)
    shi = np.zeros_like(x)
    xv = x.reshape(shape)
    for b in active_bits:
        ax = w - 1 - int(b)
        xm = np.moveaxis(xv, ax, 0)
        sm = np.moveaxis(slo.reshape(shape), ax, 0)
        hm = np.moveaxis(shi.reshape(shape), ax, 0)
        sm[1] += xm[0]
        hm[0] += xm[1]
    np.multiply(out_coef[w_act], x, out=out)
    out += tr_coef[w_act] * slo
    out += death * shi
    out[0] = 0.0
    for b in active_bits:
        out[1 << int(b)] += birth


def generator_matvec(x, tables, death, transfer, birth):
    """One application of the rate generator: returns dx/dt for state x."""
    out_coef, tr_coef = _coef_arrays(tables, death, transfer)
    out = np.empty_like(x)
    if HAVE_NUMBA:
        _nb.matvec(x, out, tables.w_act, tables.active_bits,
                   out_coef, tr_coef, death, birth)
    else:
        _matvec_numpy(x, out, tables.w_act, tables.active_bits,
                      out_coef, tr_coef, death, birth)
    return out


@dataclass
class SolveStats:
    status: int
    t_reached: float
    n_matvec: int
    n_accepted: int
    n_rejected: int

    @property
    def ok(self):
        return self.status == STATUS_OK


def _solve_interval_numpy(x, t0, t1, w_act, active_bits, out_coef, tr_coef,
                          death, birth, rtol, atol, max_steps):
    n = x.shape[0]
    span = t1 - t0
    if span <= 0.0:
        return STATUS_OK, t1, 0, 0, 0

    def f(y, out):
        _matvec_numpy(y, out, w_act, active_bits, out_coef, tr_coef,
                      death, birth)

    k1 = np.empty(n); k2 = np.empty(n); k3 = np.empty(n); k4 = np.empty(n)
    k5 = np.empty(n); k6 = np.empty(n); k7 = np.empty(n)
    nfev = 0
    f(x, k1); nfev += 1

    sc = atol + rtol * np.abs(x)
    d0 = np.sqrt(np.mean((x / sc) ** 2))
    d1 = np.sqrt(np.mean((k1 / sc) ** 2))
    if d0 < 1e-5 or d1 < 1e-5:
        h0 = 0.01 * span
    else:
        h0 = min(0.01 * d0 / d1, span)
    y = x + h0 * k1
    f(y, k2); nfev += 1
    d2 = np.sqrt(np.mean(((k2 - k1) / sc) ** 2)) / h0
    dm = max(d1, d2)
    h1 = span if dm < 1e-30 else (0.01 / dm) ** 0.2
    h = min(100.0 * h0, h1, span)

    t = t0
    accepted = 0
    rejected = 0
    just_rejected = False
    tiny = 1e-14 * max(abs(t0), abs(t1), 1.0)

    while t1 - t > 0.0:
        if accepted + rejected >= max_steps:
            return STATUS_MAX_STEPS, t, nfev, accepted, rejected
        if h < tiny:
            return STATUS_UNDERFLOW, t, nfev, accepted, rejected
        h = min(h, t1 - t)

        f(x + h * (0.2 * k1), k2)
        f(x + h * (3.0 / 40.0 * k1 + 9.0 / 40.0 * k2), k3)
        f(x + h * (44.0 / 45.0 * k1 - 56.0 / 15.0 * k2 + 32.0 / 9.0 * k3), k4)
        f(x + h * (19372.0 / 6561.0 * k1 - 25360.0 / 2187.0 * k2
                   + 64448.0 / 6561.0 * k3 - 212.0 / 729.0 * k4), k5)
        f(x + h * (9017.0 / 3168.0 * k1 - 355.0 / 33.0 * k2
                   + 46732.0 / 5247.0 * k3 + 49.0 / 176.0 * k4
                   - 5103.0 / 18656.0 * k5), k6)
        ynew = x + h * (35.0 / 384.0 * k1 + 500.0 / 1113.0 * k3
                        + 125.0 / 192.0 * k4 - 2187.0 / 6784.0 * k5
                        + 11.0 / 84.0 * k6)
        f(ynew, k7)
        nfev += 6

        err = h * (71.0 / 57600.0 * k1 - 71.0 / 16695.0 * k3
                   + 71.0 / 1920.0 * k4 - 17253.0 / 339200.0 * k5
                   + 22.0 / 525.0 * k6 - 1.0 / 40.0 * k7)
        sc = atol + rtol * np.maximum(np.abs(x), np.abs(ynew))
        errn = np.sqrt(np.mean((err / sc) ** 2))

        if errn <= 1.0:
            t = t + h
            x[:] = ynew
            k1[:] = k7
            accepted += 1
            fac = 5.0 if errn == 0.0 else min(5.0, max(0.2, 0.9 * errn ** -0.2))
            if just_rejected:
                fac = min(1.0, fac)
            just_rejected = False
            h = h * fac
        else:
            rejected += 1
            just_rejected = True
            h = h * max(0.2, 0.9 * errn ** -0.2)

    return STATUS_OK, t, nfev, accepted, rejected


def solve_interval_raw(x, t0, t1, tables, death, transfer, birth,
                       rtol, atol, max_steps):
    """Advance x in place from t0 to t1 under the fixed-slice generator."""
    out_coef, tr_coef = _coef_arrays(tables, death, transfer)
    if HAVE_NUMBA:
        res = _nb.solve_interval(x, t0, t1, tables.w_act, tables.active_bits,
                                 out_coef, tr_coef, death, birth,
                                 rtol, atol, max_steps)
    else:
        res = _solve_interval_numpy(x, t0, t1, tables.w_act,
                                    tables.active_bits, out_coef, tr_coef,
                                    death, birth, rtol, atol, max_steps)
    return SolveStats(*res)


def catastrophe_update(x, bit, tables, death, transfer, birth, kappa):
    """Instantaneous catastrophe of severity kappa on the lineage at ``bit``.

    Equivalent to evolving the single affected lineage for a pseudo-time
    delta = -log(1 - kappa)/death under death and incoming transfer, plus
    fresh births onto that lineage.  Modifies x in place.
    """
    if not 0.0 <= kappa < 1.0:
        raise ValueError("catastrophe severity must be in [0, 1)")
    if kappa == 0.0:
        return x
    delta = -np.log1p(-kappa) / death
    la = tables.n_active
    m = np.int64(1) << np.int64(bit)
    idx = np.arange(x.size, dtype=np.int64)
    lo = idx[(idx & m) == 0]
    lo = lo[lo != 0]
    hi = lo | m
    a = transfer * tables.w_act[lo].astype(np.float64) / la
    c = a + death
    e = np.exp(-c * delta)
    xq = x[lo].copy()
    xr = x[hi].copy()
    x[lo] = ((death + a * e) * xq + death * (1.0 - e) * xr) / c
    x[hi] = (a * (1.0 - e) * xq + (a + death * e) * xr) / c
    # the lone-trait pattern on the struck lineage also receives new births
    e0 = np.exp(-death * delta)
    x[m] = e0 * x[m] + (1.0 - e0) * birth / death
    x[0] = 0.0
    return x


def _subset_sums_numpy(x, bases, masks):
    out = np.empty(bases.shape[0])
    for k in range(bases.shape[0]):
        idx = np.array([bases[k]], dtype=np.int64)
        mask = int(masks[k])
        b = 1
        while b <= mask:
            if mask & b:
                idx = np.concatenate([idx, idx | b])
            b <<= 1
        out[k] = x[idx].sum()
    return out


def subset_sums(x, bases, masks):
    """For each (base, mask) pair, sum x over {base | sub : sub subset of mask}."""
    bases = np.ascontiguousarray(bases, dtype=np.int64)
    masks = np.ascontiguousarray(masks, dtype=np.int64)
    if HAVE_NUMBA:
        return _nb.subset_sums(x, bases, masks)
    return _subset_sums_numpy(x, bases, masks)
