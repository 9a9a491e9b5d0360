#!/usr/bin/env python3
"""Regenerate schedule_reference.csv: extended-precision rank-decay tables.

Evaluates each decay formula with mpmath at 300 significant digits, then
floors and clamps to [r_min, r_max]. 300 digits is enough to resolve the
sigmoid tail terms (~1e-109 at T=999), which double precision or a casual
50-digit evaluation would round away.
"""

import mpmath as mp

mp.mp.dps = 300

R_MAX, R_MIN = 2048, 256
TOTALS = [150, 999]


def raw(kind, tau, total, i):
    d = R_MAX - R_MIN
    if kind == "linear":
        return R_MAX - mp.mpf(d) * i / total
    if kind == "cosine":
        return R_MIN + mp.mpf(d) / 2 * (1 + mp.cos(mp.pi * i / total))
    if kind == "sigmoid":
        mid = total // 2
        return R_MAX - mp.mpf(d) / (1 + mp.e ** (-mp.mpf(tau) * (i - mid)))
    if kind == "exponential":
        return R_MIN + mp.mpf(d) * mp.e ** (-mp.mpf(tau) * i)
    raise ValueError(kind)


def rank(kind, tau, total, i):
    v = int(mp.floor(raw(kind, tau, total, i)))
    return max(R_MIN, min(R_MAX, v))


def main():
    rows = ["kind,tau,total_epochs,epoch,rank"]
    for kind, tau in [
        ("linear", 0),
        ("cosine", 0),
        ("sigmoid", 0.1),
        ("sigmoid", 0.5),
        ("exponential", 0.1),
        ("exponential", 0.5),
    ]:
        for total in TOTALS:
            for i in range(total + 1):
                rows.append(f"{kind},{tau},{total},{i},{rank(kind, tau, total, i)}")
    out = "\n".join(rows) + "\n"
    with open(__file__.replace("gen_schedule_reference.py", "schedule_reference.csv"), "w") as f:
        f.write(out)
    print(f"wrote {len(rows) - 1} rows")


if __name__ == "__main__":
    main()
