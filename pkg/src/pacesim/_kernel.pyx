# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled episode kernel; see ``_kernel_py.py`` for the reference version."""
from libc.math cimport exp

cdef enum:
    DUAL_OPTIMAL = 0
    SEQUENTIAL = 1

cdef enum:
    SECOND_PRICE = 0
    LINEAR_ALLOCATION = 1

cdef enum:
    MAX_POISSON = 10000


cdef inline double _multiplier(int pacer, double lam, double mu) nogil:
    cdef double ros, bud
    if pacer == DUAL_OPTIMAL:
        return (1.0 + lam) / (mu + lam)
    if pacer == SEQUENTIAL:
        return (1.0 + lam) / lam / mu
    ros = (1.0 + lam) / lam
    bud = 1.0 / mu
    return ros if ros < bud else bud


cdef inline double _interp(double x, const double[::1] xs, const double[::1] ys) nogil:
    cdef Py_ssize_t n = xs.shape[0]
    cdef Py_ssize_t lo, hi, mid
    cdef double w
    if x <= xs[0]:
        return ys[0]
    if x >= xs[n - 1]:
        return ys[n - 1]
    lo = 0
    hi = n - 1
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if xs[mid] <= x:
            lo = mid
        else:
            hi = mid
    w = (x - xs[lo]) / (xs[hi] - xs[lo])
    return ys[lo] + w * (ys[hi] - ys[lo])


cdef inline long _poisson_inv(double u, double mean) nogil:
    cdef long k = 0
    cdef double p, cdf
    if mean <= 0.0:
        return 0
    p = exp(-mean)
    cdf = p
    while u > cdf and k < MAX_POISSON:
        k += 1
        p *= mean / k
        cdf += p
    return k


def poisson_inv(double u, double mean):
    return _poisson_inv(u, mean)


def run_rounds(int pacer, int env_kind,
               const double[::1] values, const double[::1] a, const double[::1] b,
               const double[::1] knot_k, const double[::1] knot_clicks,
               const double[::1] knot_cost, double periods,
               double rho, double budget, double alpha, double eta,
               double lam0, double mu0,
               double[::1] out_k, double[::1] out_bid, double[::1] out_x,
               double[::1] out_p, double[::1] out_val, double[::1] out_lam,
               double[::1] out_mu, double[::1] out_spent):
    cdef Py_ssize_t n = values.shape[0]
    cdef Py_ssize_t t
    cdef double lam = lam0, mu = mu0, spent = 0.0
    cdef double v, k, remaining, bid, x, p, val, keff, day_clicks, cpc
    cdef bint stopped = False
    cdef Py_ssize_t stop_round = -1
    with nogil:
        for t in range(n):
            out_lam[t] = lam
            out_mu[t] = mu
            if stopped:
                out_k[t] = 0.0
                out_bid[t] = 0.0
                out_x[t] = 0.0
                out_p[t] = 0.0
                out_val[t] = 0.0
                out_spent[t] = spent
                continue
            v = values[t]
            k = _multiplier(pacer, lam, mu)
            remaining = budget - spent
            bid = k * v
            if bid > remaining:
                bid = remaining
            if env_kind == SECOND_PRICE:
                if bid >= a[t]:
                    x = 1.0
                    p = a[t]
                else:
                    x = 0.0
                    p = 0.0
            elif env_kind == LINEAR_ALLOCATION:
                x = bid / a[t]
                if x > 1.0:
                    x = 1.0
                p = bid * bid / (2.0 * a[t])
                if p > a[t] / 2.0:
                    p = a[t] / 2.0
            else:
                if v > 0.0:
                    keff = bid / v
                else:
                    keff = 0.0
                day_clicks = _interp(keff, knot_k, knot_clicks)
                if day_clicks > 0.0:
                    cpc = _interp(keff, knot_k, knot_cost) / day_clicks
                    x = <double>_poisson_inv(a[t], day_clicks / periods)
                    p = x * cpc * b[t]
                else:
                    x = 0.0
                    p = 0.0
            if spent + p > budget:
                x = 0.0
                p = 0.0
                stopped = True
            val = v * x
            spent = spent + p
            out_k[t] = k
            out_bid[t] = bid
            out_x[t] = x
            out_p[t] = p
            out_val[t] = val
            out_spent[t] = spent
            lam = lam * exp(-alpha * (val - p))
            mu = mu * exp(-eta * (rho - p))
            if spent >= budget:
                stopped = True
            if stopped and stop_round < 0:
                stop_round = t
    return stop_round
