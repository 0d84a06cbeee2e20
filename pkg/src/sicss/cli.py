"""Command-line interface: simulate, design-beams, separate, ssl, eval, audit, bench."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys

import numpy as np

from .audio_io import load_masks, load_truth, read_wav, save_masks, save_truth, write_wav
from .beamforming import design_bank, save_bank
from .config import load_config
from .geometry import angle_grid, build_steering_table, circular_distance, load_geometry
from .separation import LookaheadViolation, MaskSet
from .signal_core import stft

log = logging.getLogger("sicss")


class ContractError(Exception):
    """Input or output violates a documented contract; exit status 1."""


def _config(args, **extra):
    overrides = dict(
        estimator=getattr(args, "estimator", None),
        postfilter=getattr(args, "postfilter", None),
        bank_path=getattr(args, "bank", None),
    )
    overrides.update(extra)
    return load_config(getattr(args, "config", None), **overrides)


def _read_input(path, config):
    rate, x = read_wav(path)
    if rate != config.frame.sample_rate:
        raise ContractError(f"{path}: sample rate {rate}, expected {config.frame.sample_rate}")
    if x.shape[0] != config.geometry.num_mics:
        raise ContractError(f"{path}: {x.shape[0]} channels, geometry has {config.geometry.num_mics}")
    return x


# ---------------------------------------------------------------- commands


def cmd_simulate(args):
    from . import simkit

    geometry = load_geometry(args.geometry) if args.geometry else None
    if args.scenario:
        scen = simkit.read_scenario(args.scenario, geometry)
    elif args.preset == "two-speaker":
        scen = simkit.two_speaker_scenario(duration=args.duration, seed=args.seed,
                                           noise_db=args.noise_db, geometry=geometry)
    else:
        scen = simkit.meeting_scenario(duration=args.duration, seed=args.seed,
                                       noise_db=args.noise_db, geometry=geometry)
    mix, truth = simkit.synthesize(scen)
    write_wav(args.out, scen.sample_rate, mix, pcm16=args.pcm16)
    if args.truth:
        save_truth(args.truth, truth)
    print(f"wrote {args.out}: {mix.shape[0]} channels, {mix.shape[1] / scen.sample_rate:.2f} s, "
          f"{len(truth.utterances)} utterances")
    return 0


def cmd_design_beams(args):
    config = _config(args)
    bank = design_bank(config.geometry, config.frame, args.loading if args.loading is not None else config.loading)
    save_bank(bank, args.out)
    print(f"wrote {args.out}: {bank.num_beams} beams x {bank.weights.shape[1]} bins x "
          f"{bank.weights.shape[2]} channels")
    return 0


def cmd_separate(args):
    from .pipeline import causality_audit, run_pipeline

    config = _config(args)
    x = _read_input(args.input, config)
    truth = load_truth(args.truth) if args.truth else None
    record = bool(args.dump_masks)
    out = run_pipeline(x, config, truth, record=record)
    for path, ch in zip(args.out, out.samples):
        write_wav(path, config.frame.sample_rate, ch)
    if args.dump_masks:
        frames = sorted(out.trace.masks)
        speech = np.stack([out.trace.masks[t] for t in frames], axis=1)
        save_masks(args.dump_masks, MaskSet(speech, np.clip(1 - speech.sum(0), 0, 1)),
                   latency_frames=config.latency_frames)
    if args.dump_track:
        out.track.write_csv(args.dump_track)
    report = out.report.as_dict()
    status = 0
    if args.audit:
        rng = np.random.default_rng(args.seed)
        T = config.frame.num_frames(x.shape[1])
        probes = sorted(rng.choice(max(T, 1), size=min(args.probes, max(T, 1)), replace=False))
        audit = causality_audit(config, x, probes, truth, seed=args.seed)
        print(audit.summary())
        report["audit_passed"] = audit.passed
        status = 0 if audit.passed else 1
    if args.report:
        with open(args.report, "w") as fh:
            json.dump(report, fh, indent=2)
    _print_report(report)
    return status


def _print_report(report):
    print(f"backend {report['backend']}: RTF {report['rtf']:.3f} "
          f"({report['wall_seconds']:.2f} s for {report['audio_seconds']:.2f} s of audio)")
    for stage, sec in report["stage_seconds"].items():
        print(f"  {stage:12s} {sec:8.3f} s")
    print(f"latency: declared {report['declared_latency_frames']} frames, "
          f"measured {report['measured_latency_frames']} frames")


def cmd_ssl(args):
    from .ssl import localize

    config = _config(args)
    x = _read_input(args.input, config)
    masks = load_masks(args.masks)
    spec = stft(x, config.frame)
    if masks.num_frames != spec.num_frames:
        raise ContractError(f"mask dump has {masks.num_frames} frames, input has {spec.num_frames}")
    table = build_steering_table(config.geometry, angle_grid(config.ssl_grid_step), config.frame)
    track = localize(spec, masks, config.schedule, table)
    track.write_csv(args.out)
    print(f"wrote {args.out}: {len(track)} intervals")
    return 0


def evaluate(outputs, truth, latency_samples, frame, track_rows=None):
    """Metrics for latency-delayed ``outputs`` (2, n) against ``truth``."""
    from . import simkit

    n = truth.speaker_images.shape[-1]
    aligned = np.asarray(outputs)[:, latency_samples : latency_samples + n]
    if aligned.shape[1] != n:
        raise ContractError(f"outputs hold {aligned.shape[1]} aligned samples, truth has {n}")
    mix_ref = truth.speaker_images[:, truth.reference_index].sum(0) + truth.noise_reference()
    purity = simkit.channel_purity(aligned, truth)
    dominant = simkit.dominant_channels(aligned, truth)
    rows = []
    for u, p, ch in zip(truth.utterances, purity, dominant):
        energy = np.dot(u.reference, u.reference)
        if energy > 0:
            sdr = simkit.si_sdr(aligned[ch, u.start : u.end], u.reference)
            base = simkit.si_sdr(mix_ref[u.start : u.end], u.reference)
        else:
            sdr = base = float("nan")
        rows.append({"speaker": u.speaker, "start": u.start, "end": u.end, "channel": ch,
                     "purity": p, "si_sdr": sdr, "si_sdr_mix": base, "si_sdri": sdr - base})
    summary = {
        "utterances": len(rows),
        "min_purity": min((r["purity"] for r in rows), default=float("nan")),
        "mean_si_sdri": float(np.mean([r["si_sdri"] for r in rows])) if rows else float("nan"),
    }
    if track_rows:
        truth_angles = truth.true_angles(frame)
        errs = []
        for lo, hi, tgt, itf in track_rows:
            k = min(hi, truth_angles.shape[0] - 1)
            if k < 0:
                continue
            for az in truth_angles[k]:
                if not np.isnan(az):
                    errs.append(float(min(circular_distance(az, tgt), circular_distance(az, itf))))
        summary["ssl_mean_error_deg"] = float(np.mean(errs)) if errs else float("nan")
        summary["ssl_max_error_deg"] = float(np.max(errs)) if errs else float("nan")
    return rows, summary


def cmd_eval(args):
    from .ssl import DirectionTrack

    config = _config(args)
    truth = load_truth(args.truth)
    chans = []
    for path in args.outputs:
        rate, data = read_wav(path)
        if rate != truth.sample_rate:
            raise ContractError(f"{path}: sample rate {rate} != {truth.sample_rate}")
        chans.append(data[0])
    if len({len(c) for c in chans}) != 1:
        raise ContractError("output streams differ in length")
    latency = args.latency_frames if args.latency_frames is not None else config.latency_frames
    track = DirectionTrack.read_csv(args.track) if args.track else None
    rows, summary = evaluate(np.stack(chans), truth, latency * config.frame.frame_shift,
                             config.frame, track)
    fields = ["speaker", "start", "end", "channel", "purity", "si_sdr", "si_sdr_mix", "si_sdri"]
    out = open(args.csv, "w", newline="") if args.csv else sys.stdout
    try:
        w = csv.DictWriter(out, fieldnames=fields)
        w.writeheader()
        for r in rows:
            w.writerow({k: (f"{v:.4f}" if isinstance(v, float) else v) for k, v in r.items()})
    finally:
        if args.csv:
            out.close()
    for k, v in summary.items():
        print(f"{k}: {v:.4f}" if isinstance(v, float) else f"{k}: {v}", file=sys.stderr)
    return 0


def cmd_audit(args):
    from .pipeline import causality_audit, peeking_builder

    config = _config(args)
    x = _read_input(args.input, config)
    truth = load_truth(args.truth) if args.truth else None
    rng = np.random.default_rng(args.seed)
    T = config.frame.num_frames(x.shape[1])
    probes = sorted(int(p) for p in rng.choice(T, size=min(args.probes, T), replace=False))
    builder = peeking_builder(config) if args.inject_fault else None
    if builder is not None:
        config = config.with_(estimator="baseline")
    report = causality_audit(config, x, probes, truth, estimator_builder=builder, seed=args.seed)
    print(report.summary())
    print("audit", "PASSED" if report.passed else f"FAILED at stage {report.failing_stage}")
    return 0 if report.passed else 1


def cmd_bench(args):
    from .bench import run_benchmark

    config = _config(args)
    x = truth = None
    if args.input:
        x = _read_input(args.input, config)
        if config.estimator != "baseline" and not args.truth:
            config = config.with_(estimator="baseline")
        truth = load_truth(args.truth) if args.truth else None
    results = run_benchmark(config, duration=args.duration, samples=x, truth=truth,
                            backends=args.backend, seed=args.seed)
    for r in results:
        _print_report(r)
    if args.report:
        with open(args.report, "w") as fh:
            json.dump(results, fh, indent=2)
    return 0 if all(r["rtf"] < 1.0 for r in results) else 1


# ---------------------------------------------------------------- parser


def build_parser():
    p = argparse.ArgumentParser(prog="sicss", description="Low-latency continuous speech separation")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, pipeline=True):
        sp.add_argument("--config", help="pipeline config file")
        sp.add_argument("--seed", type=int, default=0)
        if pipeline:
            sp.add_argument("--estimator", choices=("oracle", "baseline", "adversarial"))
            sp.add_argument("--postfilter", choices=("oracle", "mask-reuse", "passthrough"))
            sp.add_argument("--bank", help="beam bank file written by design-beams")

    sp = sub.add_parser("simulate", help="render a synthetic scene")
    sp.add_argument("--scenario", help="scenario file (one source per line)")
    sp.add_argument("--preset", choices=("meeting", "two-speaker"), default="meeting")
    sp.add_argument("--duration", type=float, default=60.0)
    sp.add_argument("--noise-db", type=float, default=-56.0)
    sp.add_argument("--geometry", help="geometry file")
    sp.add_argument("--out", required=True)
    sp.add_argument("--truth", help="directory for ground truth")
    sp.add_argument("--pcm16", action="store_true", help="write 16-bit PCM instead of float")
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("design-beams", help="design and save the fixed beam bank")
    common(sp, pipeline=False)
    sp.add_argument("--loading", type=float)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_design_beams)

    sp = sub.add_parser("separate", help="run the streaming pipeline on a WAV file")
    common(sp)
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--out", nargs=2, required=True, metavar=("CH1", "CH2"))
    sp.add_argument("--truth", help="ground-truth directory (oracle estimator/post-filter)")
    sp.add_argument("--dump-masks")
    sp.add_argument("--dump-track")
    sp.add_argument("--audit", action="store_true")
    sp.add_argument("--probes", type=int, default=10)
    sp.add_argument("--report", help="write the run report as JSON")
    sp.set_defaults(func=cmd_separate)

    sp = sub.add_parser("ssl", help="localize from a recording and a mask dump")
    common(sp, pipeline=False)
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--masks", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_ssl)

    sp = sub.add_parser("eval", help="score separated outputs against ground truth")
    common(sp, pipeline=False)
    sp.add_argument("--outputs", nargs=2, required=True)
    sp.add_argument("--truth", required=True)
    sp.add_argument("--latency-frames", type=int)
    sp.add_argument("--track")
    sp.add_argument("--csv")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("audit", help="causality audit of the pipeline")
    common(sp)
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--truth")
    sp.add_argument("--probes", type=int, default=10)
    sp.add_argument("--inject-fault", action="store_true",
                    help="use an estimator that reads one frame past its look-ahead")
    sp.set_defaults(func=cmd_audit)

    sp = sub.add_parser("bench", help="real-time factor per kernel backend")
    common(sp)
    sp.add_argument("--in", dest="input")
    sp.add_argument("--truth")
    sp.add_argument("--duration", type=float, default=20.0)
    sp.add_argument("--backend", nargs="*", help="backends to compare (default: all available)")
    sp.add_argument("--report")
    sp.set_defaults(func=cmd_bench)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ContractError, LookaheadViolation, ValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
