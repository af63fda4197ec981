"""Arbitrary-precision reference values frozen into tests/oracles.rs.

Run with `python3 reference_values.py`; needs mpmath only.
"""
import csv
import os

from mpmath import mp, mpf, exp, quad, sqrt, erf, factorial, cos, sin, power

mp.dps = 40

HERE = os.path.dirname(os.path.abspath(__file__))
TABLE = os.path.join(HERE, "..", "..", "..", "..", "data", "system_a.csv")
P = {"S": mpf("0.7"), "D": mpf("0.2"), "V": mpf("0.1")}


def load():
    rows = {}
    with open(TABLE) as f:
        lines = [l for l in f if l.strip() and not l.startswith("#")]
    for r in csv.DictReader(lines):
        rows[r["pattern"]] = tuple(mpf(r[k]) for k in ("mean", "sigma", "min", "max"))
    return rows


def photon_prob(n, tg):
    mean, sigma, lo, hi = tg
    if sigma == 0 or hi <= lo:
        return exp(-mean) * power(mean, n) / factorial(n)
    w = lambda x: exp(-((x - mean) / sigma) ** 2 / 2)
    norm = quad(w, [lo, mean, hi]) if lo < mean < hi else quad(w, [lo, hi])
    f = lambda x: w(x) * exp(-x) * power(x, n) / factorial(n)
    num = quad(f, [lo, mean, hi]) if lo < mean < hi else quad(f, [lo, hi])
    return num / norm


def tau(a, b, rows, n_cut):
    total = mpf(0)
    for nxt in "SDV":
        ka, kb = a + nxt, b + nxt
        s = sum(sqrt(photon_prob(n, rows[ka]) * photon_prob(n, rows[kb])) for n in range(n_cut + 1))
        total += P[nxt] * s
    return total ** 2


def gains(a, l):
    eta = mpf("0.65") * power(10, -mpf("0.2") * l / 10)
    pd = mpf("7.2e-8")
    d = mpf("0.08")
    g = 1 - (1 - pd) ** 2 * exp(-eta * a)
    h = (exp(-eta * a * cos(d) ** 2) - exp(-eta * a * sin(d) ** 2)) / 2
    e = pd ** 2 / 2 + pd * (1 - pd) * (1 + h) + (1 - pd) ** 2 * (mpf(1) / 2 + h - exp(-eta * a) / 2)
    return g, e


def main():
    rows = load()
    for a, b in [("S", "D"), ("S", "V"), ("D", "V")]:
        print(f"tau {a}{b} n_cut=3: {mp.nstr(tau(a, b, rows, 3), 17)}")
    for n in range(3):
        print(f"p({n}|SD): {mp.nstr(photon_prob(n, rows['SD']), 17)}")
    g, e = gains(mpf("0.638635"), 50)
    print(f"gain 50 km: {mp.nstr(g, 17)}")
    print(f"error gain 50 km: {mp.nstr(e, 17)}")


if __name__ == "__main__":
    main()
