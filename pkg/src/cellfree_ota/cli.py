"""Command-line entry point: sweep subcommands writing fixed-schema CSV.

Subcommands: nmse, ser-vs-snr, ser-vs-pmax, coded-ber, validate-moments.
Every run is reproducible: identical (config, seed) gives byte-identical
output.  Exit code is 0 on success and nonzero when validate-moments fails
its tolerances.
"""
from __future__ import annotations

import argparse
import sys

from . import harness
from .config import SystemConfig, load_config


def _floats(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip() != ""]


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=str, default=None, help="JSON config file")
    p.add_argument("--seed", type=int, default=None, help="master seed override")
    p.add_argument("--trials", type=int, default=None, help="trials (or cap) per sweep point")
    p.add_argument("--out", type=str, default=None, help="output CSV path")
    p.add_argument(
        "--estimator", choices=["ls", "lmmse"], default=None, help="fronthaul estimator"
    )
    p.add_argument(
        "--detector", choices=["lmmse", "ls", "ml", "soft"], default=None
    )
    p.add_argument(
        "--wired-baseline", action="store_true", help="include the wired-fronthaul oracle"
    )


def _build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="cellfree-ota",
        description="Uplink cell-free massive MIMO with an over-the-air fronthaul",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("nmse", help="fronthaul estimation NMSE vs uplink SNR")
    _add_common(p)
    p.add_argument("--rho-ul-db", type=_floats, default=None, metavar="LIST")
    p.add_argument("--p-max-w", type=_floats, default=[1.0, 5.0], metavar="LIST")

    p = sub.add_parser("ser-vs-snr", help="symbol error rate vs uplink SNR")
    _add_common(p)
    p.add_argument("--rho-ul-db", type=_floats, default=None, metavar="LIST")
    p.add_argument("--p-max-w", type=_floats, default=[1.0, 5.0], metavar="LIST")
    p.add_argument("--err-target", type=int, default=100)

    p = sub.add_parser("ser-vs-pmax", help="symbol error rate vs power budget")
    _add_common(p)
    p.add_argument("--p-max-dbm", type=_floats, default=None, metavar="LIST")
    p.add_argument("--rho-ul-db", type=_floats, default=[-4.0, -3.0], metavar="LIST")
    p.add_argument("--err-target", type=int, default=100)

    p = sub.add_parser("coded-ber", help="coded BER vs Eb/N0 (WLAN half-rate code)")
    _add_common(p)
    p.add_argument("--ebn0-db", type=_floats, default=None, metavar="LIST")
    p.add_argument("--p-max-w", type=_floats, default=[1.0, 5.0], metavar="LIST")
    p.add_argument("--frame-err-target", type=int, default=100)

    p = sub.add_parser("validate-moments", help="closed forms vs Monte Carlo oracle")
    _add_common(p)
    p.add_argument("--draws", type=int, default=200_000)

    return ap


def _config(args) -> SystemConfig:
    cfg = load_config(args.config) if args.config else SystemConfig()
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if getattr(args, "estimator", None):
        over["estimator"] = args.estimator
    if getattr(args, "detector", None):
        over["detector"] = args.detector
    return cfg.with_(**over) if over else cfg


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    cfg = _config(args)
    out = args.out or f"{args.command.replace('-', '_')}.csv"

    if args.command == "nmse":
        rho = args.rho_ul_db or [-30, -25, -20, -15, -10, -5, 0, 5, 10]
        res = harness.run_nmse(
            cfg, rho, p_max_w=tuple(args.p_max_w),
            estimators=(cfg.estimator,) if args.estimator else ("ls", "lmmse"),
            trials=args.trials, seed=args.seed,
        )
    elif args.command == "ser-vs-snr":
        rho = args.rho_ul_db or [-30, -25, -20, -15, -10, -5, 0, 5, 10]
        res = harness.run_ser(
            cfg, rho, p_max_w=tuple(args.p_max_w), estimators=(cfg.estimator,),
            detector=cfg.detector, wired_baseline=args.wired_baseline,
            err_target=args.err_target, max_trials=args.trials, seed=args.seed,
        )
    elif args.command == "ser-vs-pmax":
        dbm = args.p_max_dbm or [20, 25, 30, 35, 40]
        res = harness.run_ser_vs_pmax(
            cfg, dbm, rho_ul_db_values=tuple(args.rho_ul_db),
            estimators=("ls", "lmmse") if args.estimator is None else (cfg.estimator,),
            detector=cfg.detector, wired_baseline=args.wired_baseline,
            err_target=args.err_target, max_trials=args.trials, seed=args.seed,
        )
    elif args.command == "coded-ber":
        ebn0 = args.ebn0_db or [-13, -12, -11.5, -11, -10.5, -10, -9, -8]
        res = harness.run_coded_ber(
            cfg, ebn0, p_max_w=tuple(args.p_max_w), estimator=cfg.estimator,
            wired_baseline=args.wired_baseline,
            frame_err_target=args.frame_err_target,
            max_blocks=args.trials, seed=args.seed,
        )
    elif args.command == "validate-moments":
        res, passed = harness.validate_moments(cfg, draws=args.draws, seed=args.seed)
        res.write_csv(out)
        for row in res.rows:
            status = "pass" if row.metric <= float(row.label.rsplit("tol", 1)[1]) else "FAIL"
            print(f"{row.label:40s} {row.metric:.4g}  {status}")
        print(f"wrote {out}")
        return 0 if passed else 1
    else:  # pragma: no cover - argparse enforces the choices
        raise AssertionError(args.command)

    res.write_csv(out)
    print(f"wrote {out} ({len(res.rows)} rows)")
    return 0


if __name__ == "__main__":
    sys.exit(main())
