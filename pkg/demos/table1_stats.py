"""Print circuit statistics for the four reference Trotter circuits.

Usage: python3 demos/table1_stats.py
"""

from pathlib import Path

from fhsim import experiments as ex

CONFIG = Path(__file__).resolve().parents[1] / "configs" / "table1_stats.cfg"


def main():
    rows = ex.circuit_stats_report(ex.load_config(CONFIG))
    print(f"{'case':<16}{'eta':>4}{'t_evol':>8}{'t_us':>8}{'depth':>7}{'2q':>6}{'mw':>6}{'rz':>6}")
    for r in rows:
        print(f"{r['case']:<16}{r['eta']:>4}{r['t_evol']:>8.1f}{r['t_circuit_us']:>8.2f}"
              f"{r['depth']:>7}{r['two_qubit']:>6}{r['microwave']:>6}{r['rz']:>6}")
    print("hopping-only rows: two-qubit and rz counts are per chain")


if __name__ == "__main__":
    main()
