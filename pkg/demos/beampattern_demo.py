"""Solve one desk-small instance and render the transmit beampattern as an
ASCII chart: information-beam amplitude vs artificial-noise amplitude across
angles, with the scheduled users and the eavesdropper marked.

Usage: python3 demos/beampattern_demo.py [seed]
"""

import math
import sys

import numpy as np

from mcnoma_isac.config import preset_config
from mcnoma_isac.metrics import beampattern
from mcnoma_isac.optimizer import run
from mcnoma_isac.scenario import build_scenario


def main() -> None:
    seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
    config = preset_config("desk-small").replace(seed=seed)
    realization = build_scenario(config, seed)
    report = run(realization, config)
    solution = report.solution
    if solution is None:
        print(f"no solution (status={report.status})")
        return

    angles = np.linspace(-np.pi / 2, np.pi / 2, 61)
    pattern = beampattern(solution, angles)
    info, an = pattern[:, 1], pattern[:, 2]
    scale = max(info.max(), an.max())
    width = 40

    user_deg = np.degrees(realization.user_angles)
    eve_deg = math.degrees(realization.eve_angle)
    print(f"status={report.status}  min_rate={report.min_rate:.4f} bit/s/Hz")
    print(f"{'angle':>7}  {'info':>6}  {'an':>6}  (#=info, *=an)")
    for a, fi, fa in zip(np.degrees(angles), info / scale, an / scale):
        bar = [" "] * width
        for pos in range(int(round(fa * (width - 1))) + 1):
            bar[pos] = "*"
        for pos in range(int(round(fi * (width - 1))) + 1):
            bar[pos] = "#"
        mark = ""
        if any(abs(a - u) < 1.5 for u in user_deg):
            mark = "  <- user"
        if abs(a - eve_deg) < 1.5:
            mark = "  <- eavesdropper"
        print(f"{a:>7.1f}  {fi:>6.3f}  {fa:>6.3f}  {''.join(bar)}{mark}")


if __name__ == "__main__":
    main()
