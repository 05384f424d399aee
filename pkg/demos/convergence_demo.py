"""Run the joint optimizer on the desk-small preset and print the
per-iteration trajectory of the surrogate objective and the audited min-rate.

Usage: python3 demos/convergence_demo.py [seed]
"""

import sys

from mcnoma_isac.config import preset_config
from mcnoma_isac.optimizer import run
from mcnoma_isac.scenario import build_scenario


def main() -> None:
    seed = int(sys.argv[1]) if len(sys.argv) > 1 else 0
    config = preset_config("desk-small").replace(seed=seed)
    realization = build_scenario(config, seed)
    report = run(realization, config)

    print(f"status={report.status}  min_rate={report.min_rate:.4f} bit/s/Hz")
    print(f"{'iter':>4}  {'objective':>12}  {'min_rate':>10}")
    for it in report.iterates:
        print(f"{it.iteration:>4}  {it.objective:>12.6f}  {it.min_rate:>10.6f}")

    audit = report.audit
    for name, entry in audit.items():
        if isinstance(entry, dict) and "pass" in entry:
            print(f"{name:>12}: {'pass' if entry['pass'] else 'FAIL'}")


if __name__ == "__main__":
    main()
