"""Command-line entry point.

Verbs:
    run        execute the experiment a config describes (any kind)
    stats      reference circuit statistics, optionally for a serialized circuit
    calibrate  repeated Floquet calibrations of a synthetic gate
    report     summarize the JSON outputs found in an output directory

Exit codes: 0 success, 2 config error, 3 infeasible decomposition,
4 empty postselection.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import experiments as ex
from .gates import InfeasibleDecompositionError
from .mitigation import EmptyPostselectionError

EXIT_OK, EXIT_CONFIG, EXIT_INFEASIBLE, EXIT_EMPTY = 0, 2, 3, 4


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fhsim", description="Fermi-Hubbard circuit simulation experiments")
    sub = p.add_subparsers(dest="verb", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="experiment config file")
        sp.add_argument("--seed", type=int, default=None, help="override the config seed")
        sp.add_argument("--out", default="out", help="output directory (default: out)")
        sp.add_argument("--jobs", type=int, default=1, help="worker processes for independent cells")
        sp.add_argument("--noiseless", action="store_true", help="replace the device by its noiseless version")

    common(sub.add_parser("run", help="run the experiment described by --config"))
    st = sub.add_parser("stats", help="circuit statistics")
    common(st, config_required=False)
    st.add_argument("--circuit", default=None, help="serialized circuit file to analyze instead of the reference circuits")
    st.add_argument("--tau", type=float, default=0.3, help="Trotter step for --circuit (default 0.3)")
    common(sub.add_parser("calibrate", help="Floquet calibration of a synthetic gate"))
    rp = sub.add_parser("report", help="summarize results in --out")
    rp.add_argument("--out", default="out", help="directory holding previous outputs")
    return p


def _load(args) -> ex.ExperimentConfig | None:
    if not getattr(args, "config", None):
        return None
    return ex.load_config(args.config)


def _run(args) -> int:
    cfg = _load(args)
    out = Path(args.out)
    kw = dict(out_dir=out, jobs=args.jobs, noiseless=args.noiseless, seed=args.seed)
    if cfg.kind == "separation":
        res = ex.run_separation(cfg, **kw)
        for u, r in res.items():
            g = ex.separation_gap(r)[-1]
            print(f"u={u:g}: gap(t_final)={g:.4f} +- {r.kappa_sem['gap'][-1]:.4f}, "
                  f"exact={ex.separation_gap(r, 'exact')[-1]:.4f}, success={r.success[-1]:.3f}")
    elif cfg.kind in ("wavepacket", "mitigation-ablation"):
        res = ex.run_wavepacket(cfg, **kw)
        msg = f"success(eta_max)={res.success[-1]:.3f}"
        if res.fit is not None:
            msg += f", a={res.fit.a:.5f}, b={res.fit.b:.4f}, damping(eta_max)={res.fit.damping(res.exact.etas[-1]):.3f}"
        print(msg)
    elif cfg.kind == "calibration":
        rep = ex.run_calibration(cfg, **kw)
        _print_calibration(rep)
    else:
        _print_stats(ex.circuit_stats_report(cfg, out))
    print(f"wrote {out}/")
    return EXIT_OK


def _print_stats(rows) -> None:
    cols = ["case", "eta", "t_evol", "t_circuit_us", "depth", "two_qubit", "microwave", "rz", "per_chain_fields"]
    print("\t".join(cols))
    for r in rows:
        print("\t".join(f"{r[c]:.3g}" if isinstance(r[c], float) else str(r[c]) for c in cols))


def _print_calibration(rep: dict) -> None:
    print(f"schedule {rep['schedule']}, {rep['trials']} trial(s), {rep['shots_per_setting']} shots/setting")
    for k, v in rep["rms_error"].items():
        print(f"  {k:>5}: rms error {v:.2e}, max {rep['max_error'][k]:.2e}")


def _stats(args) -> int:
    out = Path(args.out)
    if args.circuit:
        from .hubbard import circuit_stats, parse_circuit_text

        path = Path(args.circuit)
        if not path.is_file():
            raise ex.ConfigError(f"circuit file {path} not found")
        try:
            circ = parse_circuit_text(path.read_text(), infeasible="split")
        except (KeyError, ValueError) as exc:
            if isinstance(exc, InfeasibleDecompositionError):
                raise
            raise ex.ConfigError(f"malformed circuit file: {exc}") from exc
        st = circuit_stats(circ, args.tau)
        row = {"case": path.stem, "eta": circ.eta, "t_evol": st.t_evol, "t_circuit_us": st.t_circuit_us,
               "depth": st.depth, "two_qubit": st.two_qubit, "microwave": st.microwave, "rz": st.rz,
               "per_chain_fields": ""}
        ex.write_json(out / "circuit_stats.json", {"schema": ex.SCHEMA_VERSION, "rows": [row]})
        _print_stats([row])
        return EXIT_OK
    _print_stats(ex.circuit_stats_report(_load(args), out))
    return EXIT_OK


def _calibrate(args) -> int:
    cfg = _load(args)
    if cfg.kind != "calibration":
        raise ex.ConfigError(f"calibrate needs a config of kind 'calibration', got {cfg.kind!r}")
    rep = ex.run_calibration(cfg, Path(args.out), args.jobs, args.noiseless, args.seed)
    _print_calibration(rep)
    return EXIT_OK


def _report(args) -> int:
    out = Path(args.out)
    files = sorted(out.glob("*.json"))
    if not files:
        raise ex.ConfigError(f"no JSON results in {out}")
    for f in files:
        data = json.loads(f.read_text())
        print(f"== {f.name}")
        if f.name == "separation_summary.json":
            for u, s in data["u"].items():
                print(f"  u={u}: gap={s['gap_final']:.4f} +- {s['gap_final_sem']:.4f} "
                      f"(exact {s['exact_gap_final']:.4f}), success={s['success_rate'][-1]:.3f}")
        elif f.name == "wavepacket_summary.json":
            print(f"  success(eta_max)={data['success_rate'][-1]:.3f}")
            if "fit" in data:
                print(f"  a={data['fit']['a']:.5f} b={data['fit']['b']:.4f} "
                      f"damping(eta_max)={data['fit']['damping_final']:.3f}")
        elif f.name == "calibration_report.json":
            _print_calibration(data)
        elif f.name == "circuit_stats.json":
            _print_stats(data["rows"])
        else:
            print("  keys: " + ", ".join(sorted(data)))
    return EXIT_OK


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    handler = {"run": _run, "stats": _stats, "calibrate": _calibrate, "report": _report}[args.verb]
    try:
        return handler(args)
    except ex.ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except InfeasibleDecompositionError as exc:
        print(f"infeasible decomposition: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except EmptyPostselectionError as exc:
        print(f"empty postselection: {exc}", file=sys.stderr)
        return EXIT_EMPTY


if __name__ == "__main__":
    sys.exit(main())
