"""Command-line interface.

Exit codes: 0 success, 1 usage or configuration error, 2 runtime error,
3 ``run`` finished but authentication failures exceeded the scenario budget.
"""
from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import math
import sys
from pathlib import Path

from .batch import read_batch, write_batch
from .config import ConfigError, load_scenario
from .correlator import correlate_vector, noise_floor
from .detector import (
    detection_threshold,
    evaluate_vector,
    plan_exhaustive,
    plan_handover,
    required_cn0,
    single_event_pfa,
)
from .runner import (
    STREAM_NOISE,
    Campaign,
    emit_tables,
    epoch_rng,
    run_campaign,
    summary_from_tables,
)
from .signal_gen import SPEED_OF_LIGHT, los_range_rate

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_AUTH = 0, 1, 2, 3

log = logging.getLogger("acas_sim")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="acas-sim", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    plan = sub.add_parser("plan", help="search sizes and detection budget")
    plan.add_argument("--delta-t", type=float, default=30.0, help="time uncertainty [s]")
    plan.add_argument("--t-i", type=float, default=0.004, help="coherent integration [s]")
    plan.add_argument("--doppler-span", type=float, default=5000.0, help="+/- Doppler [Hz]")
    plan.add_argument("--chip-len", type=float, default=60.0, help="chip length [m]")
    plan.add_argument("--e1-period", type=float, default=0.004, help="E1 code period [s]")
    plan.add_argument("--overall-pfa", type=float, default=1e-3)
    plan.add_argument("--pd", type=float, default=0.9)
    plan.add_argument("--json", action="store_true", help="machine-readable output")

    run = sub.add_parser("run", help="run a scenario campaign")
    run.add_argument("scenario", help="scenario file or bundled name")
    _add_overrides(run)
    run.add_argument("--epochs", type=int, help="number of epochs (default: duration)")
    run.add_argument("--out", type=Path, default=Path("run"), help="output directory")
    run.add_argument("--save-batch", type=int, action="append", default=[], metavar="K",
                     help="also write the sample batch of epoch K")

    det = sub.add_parser("detect", help="detect the E6 signal in a recorded batch")
    det.add_argument("batch", type=Path)
    det.add_argument("config", help="scenario the batch belongs to")
    _add_overrides(det)
    det.add_argument("--epoch", type=int, default=0, help="epoch index of the batch")
    det.add_argument("--offset", type=float, help="predicted code offset [m]")
    det.add_argument("--doppler", type=float, help="predicted E6 Doppler [Hz]")

    rep = sub.add_parser("report", help="recompute a run summary from its tables")
    rep.add_argument("run_dir", type=Path)
    return p


def _add_overrides(p):
    p.add_argument("--seed", type=int)
    p.add_argument("--detector", choices=["max", "early"])
    p.add_argument("--level", type=int, choices=[1, 2, 3])
    p.add_argument("--override-resource-guard", action="store_true")


def _apply_overrides(cfg, args):
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.detector:
        algo = "maximum" if args.detector == "max" else "early"
        changes["detection"] = dataclasses.replace(cfg.detection, algorithm=algo)
    if args.level:
        changes["mitigation"] = dataclasses.replace(cfg.mitigation, level=args.level)
    if args.override_resource_guard:
        changes["vss"] = dataclasses.replace(cfg.vss, override_resource_guard=True)
    return cfg.replace(**changes) if changes else cfg


def cmd_plan(args) -> int:
    ex = plan_exhaustive(args.delta_t, args.chip_len, args.t_i, args.doppler_span)
    ho = plan_handover(args.delta_t, args.e1_period, args.t_i)
    pfa_ex = single_event_pfa(args.overall_pfa, ex.n_total)
    pfa_ho = single_event_pfa(args.overall_pfa, ho.n_total)
    out = {
        "exhaustive": {
            "n_code_offsets": ex.n_code_offsets, "n_doppler_bins": ex.n_doppler_bins,
            "doppler_bin_width": ex.doppler_bin_width, "n_total": ex.n_total,
            "single_event_pfa": pfa_ex,
            "required_cn0": required_cn0(pfa_ex, args.pd, args.t_i),
        },
        "handover": {
            "n_code_offsets": ho.n_code_offsets, "n_total": ho.n_total,
            "single_event_pfa": pfa_ho,
            "required_cn0": required_cn0(pfa_ho, args.pd, args.t_i),
        },
        "complexity_ratio": ex.n_total / ho.n_total,
    }
    if args.json:
        print(json.dumps(out, indent=2))
        return EXIT_OK
    e, h = out["exhaustive"], out["handover"]
    print(f"exhaustive  offsets {e['n_code_offsets']:.4g}  Doppler bins {e['n_doppler_bins']}"
          f" ({e['doppler_bin_width']:g} Hz)  N = {e['n_total']:.4g}")
    print(f"            Pfa {e['single_event_pfa']:.4g}  C/N0 for Pd {args.pd:g}:"
          f" {e['required_cn0']:.2f} dB-Hz")
    print(f"handover    offsets {h['n_code_offsets']}  N = {h['n_total']}")
    print(f"            Pfa {h['single_event_pfa']:.4g}  C/N0 for Pd {args.pd:g}:"
          f" {h['required_cn0']:.2f} dB-Hz")
    print(f"complexity ratio {out['complexity_ratio']:.4g}")
    return EXIT_OK


def cmd_run(args) -> int:
    cfg = _apply_overrides(load_scenario(args.scenario), args)
    result = run_campaign(cfg, args.epochs, progress=True)
    emit_tables(result, cfg.outputs, args.out)
    camp = None
    for k in args.save_batch:
        camp = camp or Campaign(cfg, args.epochs)
        write_batch(args.out / f"batch_{k}.iq", camp.batch(k))
    s = result.summary
    print(json.dumps({"scenario": cfg.name, **s.to_dict()}, indent=2))
    if s.auth_failures > cfg.auth_failure_budget * s.epochs:
        log.warning("authentication failures %d exceed budget %.3g of %d epochs",
                    s.auth_failures, cfg.auth_failure_budget, s.epochs)
        return EXIT_AUTH
    return EXIT_OK


def cmd_detect(args) -> int:
    cfg = _apply_overrides(load_scenario(args.config), args)
    batch = read_batch(args.batch)
    camp = Campaign(cfg, max(args.epoch + 1, 1))
    s, det = cfg.signal, cfg.detection
    recs = camp.recs(args.epoch)
    t_ref = batch.t_start + batch.duration / 2
    # Without E1 observables the prediction comes from the scenario's range model.
    state, _ = camp.capture_state(args.epoch)
    offset = args.offset if args.offset is not None else float(state.range_at(t_ref))
    rate = float(los_range_rate(t_ref, state.receiver_dynamics()))
    doppler = args.doppler
    if doppler is None:
        doppler = -rate * s.carrier_freq / SPEED_OF_LIGHT
    freq = s.carrier_offset + doppler
    vec = correlate_vector(batch, recs, det.n_correlators, det.spacing, offset,
                           s.recs_length, freq, range_rate=rate, t_ref=t_ref)
    nf = noise_floor(batch, camp.bogus_code(args.epoch), det.noise_hypotheses,
                     epoch_rng(cfg.seed, args.epoch, STREAM_NOISE), t_i=s.recs_length, freq=freq)
    report = evaluate_vector(vec, detection_threshold(nf, det.pfa), det, epoch=t_ref)
    print(json.dumps({k: (None if isinstance(v, float) and math.isnan(v) else v)
                      for k, v in dataclasses.asdict(report).items()}, indent=2))
    return EXIT_OK if report.detected else EXIT_AUTH


def cmd_report(args) -> int:
    summary = summary_from_tables(args.run_dir)
    print(json.dumps(summary.to_dict(), indent=2))
    return EXIT_OK


COMMANDS = {"plan": cmd_plan, "run": cmd_run, "detect": cmd_detect, "report": cmd_report}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ConfigError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
