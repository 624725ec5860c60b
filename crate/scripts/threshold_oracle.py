#!/usr/bin/env python3
"""Independent cross-check for the shooting thresholds.

Works in plain log-radius, not the phase-plane chart the Rust code uses:
with w(s) = u(e^s) the radial equation becomes

    w'' + (n-2) w' + eta w + K(s) e^{(2+delta(s)) s} w |w|^{q(s)-2} = 0,

with the coefficient triple switching at s = 0. Profiles regular at the
origin are seeded from the two-term expansion

    w = d e^{-kappa s} + A e^{nu s},   nu = 2 + delta - kappa (q-1),
    A  = -K d^{q-1} / chi(nu),         chi(m) = m^2 + (n-2) m + eta,

far to the left; fast-decaying profiles from the matching expansion with
kappa replaced by n-2-kappa far to the right, integrated backwards. Each
threshold is bisected on the sign-change count of w. Results are frozen
into the Rust regression tests; rerun this script if those constants ever
need to move.
"""

import argparse
import math

import numpy as np
from scipy.integrate import solve_ivp

RTOL = 1e-13
ATOL = 1e-300  # effectively pure relative control; fd tails are ~1e-24
BLOW_CAP = 1e12


def chi(m, n, eta):
    return m * m + (n - 2.0) * m + eta


def kappa_of(n, eta):
    disc = (n - 2.0) ** 2 - 4.0 * eta
    if disc <= 0:
        raise ValueError("eta beyond the Hardy bound")
    return ((n - 2.0) - math.sqrt(disc)) / 2.0


class Problem:
    def __init__(self, n, eta, side1, side2):
        self.n = n
        self.eta = eta
        self.side1 = side1  # (K, q, delta)
        self.side2 = side2
        self.kappa = kappa_of(n, eta)

    def rhs(self, side):
        K, q, delta = side
        n, eta = self.n, self.eta

        def f(s, wv):
            w, v = wv
            g = w * abs(w) ** (q - 2.0)
            return (v, -(n - 2.0) * v - eta * w - K * math.exp((2.0 + delta) * s) * g)

        return f


def zero_event(s, wv):
    return wv[0]


def blow_event(s, wv):
    return abs(wv[0]) - BLOW_CAP


blow_event.terminal = True


def count_zeros(prob, state, s_from, s_to):
    """Sign changes of w from s_from to s_to, split at the switch."""
    zeros = 0
    s = s_from
    wv = state
    forward = s_to > s_from
    legs = []
    if forward:
        if s < 0.0 < s_to:
            legs = [(prob.side1, s, 0.0), (prob.side2, 0.0, s_to)]
        elif s >= 0.0:
            legs = [(prob.side2, s, s_to)]
        else:
            legs = [(prob.side1, s, s_to)]
    else:
        if s > 0.0 > s_to:
            legs = [(prob.side2, s, 0.0), (prob.side1, 0.0, s_to)]
        elif s <= 0.0:
            legs = [(prob.side1, s, s_to)]
        else:
            legs = [(prob.side2, s, s_to)]
    for side, a, b in legs:
        sol = solve_ivp(
            prob.rhs(side),
            (a, b),
            wv,
            method="DOP853",
            rtol=RTOL,
            atol=ATOL,
            events=(zero_event, blow_event),
            dense_output=False,
        )
        if not sol.success and sol.status != 1:
            raise RuntimeError(f"integration failed on [{a}, {b}]: {sol.message}")
        zeros += len(sol.t_events[0])
        wv = sol.y[:, -1]
        if sol.status == 1 and len(sol.t_events[1]):
            break  # blow-up cap; the count is settled by now
    return zeros


def regular_seed(prob, d, s0):
    K, q, delta = prob.side1
    kap = prob.kappa
    nu = 2.0 + delta - kap * (q - 1.0)
    A = -K * d * abs(d) ** (q - 2.0) / chi(nu, prob.n, prob.eta)
    w = d * math.exp(-kap * s0) + A * math.exp(nu * s0)
    v = -kap * d * math.exp(-kap * s0) + nu * A * math.exp(nu * s0)
    return (w, v)


def decay_seed(prob, big_l, s1):
    K, q, delta = prob.side2
    kap_c = prob.n - 2.0 - prob.kappa
    mu = 2.0 + delta - kap_c * (q - 1.0)
    B = -K * big_l * abs(big_l) ** (q - 2.0) / chi(mu, prob.n, prob.eta)
    w = big_l * math.exp(-kap_c * s1) + B * math.exp(mu * s1)
    v = -kap_c * big_l * math.exp(-kap_c * s1) + mu * B * math.exp(mu * s1)
    return (w, v)


def regular_count(prob, d, s0=-18.0, s_end=70.0):
    return count_zeros(prob, regular_seed(prob, d, s0), s0, s_end)


def decay_count(prob, big_l, s1=18.0, s_lo=-60.0):
    return count_zeros(prob, decay_seed(prob, big_l, s1), s1, s_lo)


def bisect_threshold(counts, lo, hi, k, rel=1e-13):
    """Label where the count first exceeds k, given counts(lo) <= k < counts(hi)."""
    clo = counts(lo)
    chi_ = counts(hi)
    assert clo <= k < chi_, f"bad bracket for k={k}: N({lo})={clo}, N({hi})={chi_}"
    while hi - lo > rel * hi:
        mid = 0.5 * (lo + hi)
        if counts(mid) <= k:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def scan_thresholds(counts, label_hi, k_max, points=400):
    grid = np.linspace(label_hi / points, label_hi, points)
    vals = [counts(g) for g in grid]
    out = []
    for i in range(len(grid) - 1):
        if vals[i] != vals[i + 1]:
            for k in range(vals[i], vals[i + 1]):
                if len(out) <= k:
                    out.append(bisect_threshold(counts, grid[i], grid[i + 1], k))
        if len(out) > k_max:
            break
    return out[: k_max + 1]


def report(name, prob, family, label_hi, k_max):
    if family == "regular":
        counts = lambda d: regular_count(prob, d)
    else:
        counts = lambda L: decay_count(prob, L)
    ths = scan_thresholds(counts, label_hi, k_max)
    print(f"# {name} ({family} family)")
    for k, th in enumerate(ths):
        print(f"threshold[{k}] = {th:.14e}")
    # spot-check the interval counts on both sides of each threshold
    edges = [0.0] + ths
    for i in range(len(ths)):
        lo, hi = edges[i], edges[i + 1]
        probes = [lo + (hi - lo) * f for f in (0.25, 0.5, 0.75)]
        ns = {counts(p) for p in probes}
        print(f"interval ({lo:.6e}, {hi:.6e}): counts {sorted(ns)}")
    print()
    return ths


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--which", default="all", choices=["all", "ladder", "ladder-hardy", "dual"])
    args = ap.parse_args()

    if args.which in ("all", "ladder"):
        # absorbing inside, exciting outside, quartic on both sides
        prob = Problem(5, 0.0, (-1.0, 4.0, 0.0), (1.0, 4.0, 0.0))
        report("n=5, eta=0, K=(-1,+1), q=(4,4)", prob, "regular", 2.45, 2)

    if args.which in ("all", "ladder-hardy"):
        prob = Problem(5, 1.0, (-1.0, 4.0, 0.0), (1.0, 4.0, 0.0))
        report("n=5, eta=1, K=(-1,+1), q=(4,4)", prob, "regular", 4.0, 2)

    if args.which in ("all", "dual"):
        # exciting inside, absorbing outside, cubic on both sides
        prob = Problem(5, 0.0, (1.0, 3.0, 0.0), (-1.0, 3.0, 0.0))
        report("n=5, eta=0, K=(+1,-1), q=(3,3)", prob, "decay", 8.0, 1)


if __name__ == "__main__":
    main()
