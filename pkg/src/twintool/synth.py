"""Synthetic trace generation for demos and end-to-end tests.

Produces decoded-trace CSV files with piecewise-constant aggregate load:
each second carries exactly ``level_mbps * 1e6 / tbs_bits`` equal-size
allocations spread evenly over the second and round-robined across UEs, so
the per-second load of the generated trace is exact by construction.
"""

from __future__ import annotations


def make_piecewise_trace(levels_mbps, seconds_per_level: int, n_ues: int = 4,
                         tbs_bits: int = 10000, prb_count: int = 5,
                         first_rnti: int = 4711) -> list[str]:
    """Rows (without header) in the default trace column order."""
    rows = []
    second = 0
    for level in levels_mbps:
        per_second = level * 1e6 / tbs_bits
        if abs(per_second - round(per_second)) > 1e-9:
            raise ValueError(f"level {level} Mbps is not a whole number of allocations")
        per_second = int(round(per_second))
        if per_second < n_ues:
            raise ValueError("need at least one allocation per UE per second")
        for _ in range(seconds_per_level):
            for j in range(per_second):
                ms = second * 1000 + (j * 1000) // per_second
                rnti = first_rnti + j % n_ues
                sfn = (ms // 10) % 1024
                subframe = ms % 10
                rows.append(f"{ms},{sfn},{subframe},{rnti},DL,10,{tbs_bits},{prb_count}")
            second += 1
    return rows


def write_piecewise_trace(path, levels_mbps, seconds_per_level: int,
                          n_ues: int = 4, tbs_bits: int = 10000,
                          prb_count: int = 5) -> int:
    rows = make_piecewise_trace(levels_mbps, seconds_per_level, n_ues,
                                tbs_bits, prb_count)
    with open(path, "w") as fh:
        fh.write("\n".join(rows) + "\n")
    return len(rows)
