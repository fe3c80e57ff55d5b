"""One Floquet calibration of a synthetic gate, with and without readout errors.

Usage: python3 demos/calibration.py
"""

from fhsim.floquet import PairSampler, calibrate, make_schedule
from fhsim.gates import NcGateParams

TRUTH = NcGateParams(0.783, 0.02, 0.05, 0.2, 0.138)


def main():
    schedule = make_schedule(1.9, 7)
    print(f"schedule {schedule.ns}")
    for flip in (0.0, 0.02):
        est = calibrate(PairSampler(TRUTH, flip, flip, seed=1), schedule, shots=1000)
        print(f"readout flip {flip:.2f}:")
        for name, err in est.errors(TRUTH).items():
            print(f"  {name:>5} = {getattr(est, name):+.5f}  error {err:.1e}  se {getattr(est, name + '_se'):.1e}")


if __name__ == "__main__":
    main()
