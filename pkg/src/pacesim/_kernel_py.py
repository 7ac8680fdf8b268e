"""Pure-Python episode kernel.

Mirrors ``_kernel.pyx`` statement for statement; the two must stay in sync so
that both backends produce the same trajectories.
"""
from math import exp

DUAL_OPTIMAL = 0
SEQUENTIAL = 1
MIN = 2

SECOND_PRICE = 0
LINEAR_ALLOCATION = 1
LANDSCAPE = 2

MAX_POISSON = 10000


def multiplier(pacer, lam, mu):
    if pacer == DUAL_OPTIMAL:
        return (1.0 + lam) / (mu + lam)
    if pacer == SEQUENTIAL:
        return (1.0 + lam) / lam / mu
    ros = (1.0 + lam) / lam
    bud = 1.0 / mu
    return ros if ros < bud else bud


def interp(x, xs, ys):
    n = len(xs)
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


def poisson_inv(u, mean):
    if mean <= 0.0:
        return 0
    k = 0
    p = exp(-mean)
    cdf = p
    while u > cdf and k < MAX_POISSON:
        k += 1
        p *= mean / k
        cdf += p
    return k


def run_rounds(pacer, env_kind, values, a, b, knot_k, knot_clicks, knot_cost, periods,
               rho, budget, alpha, eta, lam0, mu0,
               out_k, out_bid, out_x, out_p, out_val, out_lam, out_mu, out_spent):
    """Simulate ``len(values)`` rounds and fill the ``out_*`` arrays in place.

    Returns the 0-based index of the round after which the pacer stopped
    (budget exhausted or overspend zeroed), or -1 if it never stopped.
    """
    n = len(values)
    lam = lam0
    mu = mu0
    spent = 0.0
    stopped = False
    stop_round = -1
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
        k = multiplier(pacer, lam, mu)
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
            day_clicks = interp(keff, knot_k, knot_clicks)
            if day_clicks > 0.0:
                cpc = interp(keff, knot_k, knot_cost) / day_clicks
                x = float(poisson_inv(a[t], day_clicks / periods))
                p = x * cpc * b[t]
            else:
                x = 0.0
                p = 0.0
        if spent + p > budget:
            # overspend: the round is voided and the pacer switches off
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
