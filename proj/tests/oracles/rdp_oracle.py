#!/usr/bin/env python3
"""Independent evaluation of the RDP accountant used to freeze expected test values.

epsilon(sigma, delta, T) = min over alpha in {1.25, 1.50, ..., 512.00} of
    T * alpha / (2 sigma^2) + ln(1/delta) / (alpha - 1)

sigma(epsilon, delta, T) is found by bisection on [1e-3, 1e6] to relative
tolerance 1e-4, returning the upper end of the final bracket (smallest sigma
found with epsilon(sigma) <= epsilon).

Run:  python3 rdp_oracle.py
"""
import math


def alphas():
    a = 1.25
    while a <= 512.0 + 1e-9:
        yield a
        a += 0.25


def epsilon_of(sigma, delta, rounds):
    log_inv_delta = math.log(1.0 / delta)
    return min(rounds * a / (2.0 * sigma * sigma) + log_inv_delta / (a - 1.0)
               for a in alphas())


def calibrate_sigma(epsilon, delta, rounds):
    lo, hi = 1e-3, 1e6
    if epsilon_of(hi, delta, rounds) > epsilon:
        raise ValueError("unattainable")
    if epsilon_of(lo, delta, rounds) <= epsilon:
        return lo
    while (hi - lo) / lo > 1e-4:
        mid = 0.5 * (lo + hi)
        if epsilon_of(mid, delta, rounds) <= epsilon:
            hi = mid
        else:
            lo = mid
    return hi


if __name__ == "__main__":
    delta = 1.0 / 12.0
    print("epsilon_of(sigma=4, delta=1/12, T=50) = %.12g"
          % epsilon_of(4.0, delta, 50))
    print("calibrate_sigma(epsilon=3, delta=1/12, T=50) = %.12g"
          % calibrate_sigma(3.0, delta, 50))
    for eps in (0.1, 0.5, 1.0, 3.0, 6.0):
        s = calibrate_sigma(eps, delta, 50)
        print("sigma(eps=%.1f) = %.6g   check eps = %.6g"
              % (eps, s, epsilon_of(s, delta, 50)))
    print("epsilon_of(sigma=1, delta=1e-2, T=1) = %.12g"
          % epsilon_of(1.0, 1e-2, 1))
    print("epsilon_of(sigma=100, delta=1e-2, T=1) = %.12g"
          % epsilon_of(100.0, 1e-2, 1))
