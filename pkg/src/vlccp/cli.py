"""Command-line entry point: ``vlccp encode|decode|inspect|run|sweep|calibrate``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .bits import to_hex
from .config import PRESETS, ConfigError, RunConfig, load_config, resolve_config, save_config
from .cpm import (
    DEFAULT_KEY,
    AuthenticationError,
    CpmError,
    decode_cpm,
    encode_cpm,
    message_from_dict,
    message_to_dict,
    padded_bytes_to_bits,
)
from .harness import CalibrationError, calibrate, check_results, results_csv, run_experiment

EXIT_INPUT = 2
EXIT_CHECK = 3
EXIT_CALIBRATION = 4


def _key(text: str | None) -> bytes:
    if text is None:
        return DEFAULT_KEY
    try:
        return bytes.fromhex(text)
    except ValueError:
        raise CpmError(f"key must be hex, got {text!r}") from None


def _size_report(n_bits: int, n_objects: int) -> str:
    padded = -(-n_bits // 8) * 8
    return f"{n_bits} bits (padded {padded})\n272 + 74n = 272 + 74*{n_objects} = {n_bits}"


def cmd_encode(args) -> int:
    try:
        data = json.loads(Path(args.message).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise CpmError(f"{args.message}: {exc}") from None
    msg = message_from_dict(data)
    bits = encode_cpm(msg, _key(args.key))
    print(to_hex(bits))
    print(_size_report(bits.size, len(msg.objects)))
    return 0


def _bits_from_hex(text: str):
    try:
        return padded_bytes_to_bits(bytes.fromhex(text.strip()))
    except ValueError:
        raise CpmError(f"not a hex string: {text[:16]!r}...") from None


def cmd_decode(args) -> int:
    msg = decode_cpm(_bits_from_hex(args.hex), _key(args.key))
    print(json.dumps(message_to_dict(msg), indent=2))
    return 0


def cmd_inspect(args) -> int:
    bits = _bits_from_hex(args.hex)
    n = (bits.size - 272) // 74
    print(_size_report(bits.size, n))
    try:
        msg = decode_cpm(bits, _key(args.key))
        print("mac: ok")
    except AuthenticationError:
        print("mac: MISMATCH")
        return 1
    print(json.dumps(message_to_dict(msg), indent=2))
    return 0


def _config(args) -> RunConfig:
    if getattr(args, "config", None):
        cfg = load_config(args.config)
        base = cfg.to_dict()
        preset = base.pop("preset")
        if args.preset is not None and args.preset != preset:
            raise ConfigError(f"--preset {args.preset} conflicts with config preset {preset}")
    else:
        preset, base = args.preset or "indoor-stationary", {}
    overrides = {
        "seed": args.seed,
        "out": args.out,
        "dump_frames": args.dump_frames,
        "packets": getattr(args, "packets", None),
        "runs": getattr(args, "runs", None),
        "fps_list": getattr(args, "fps", None),
        "distance_list": getattr(args, "distance", None),
        "speed_list": getattr(args, "speed", None),
    }
    base.update({k: v for k, v in overrides.items() if v is not None})
    if args.noise is not None:
        base["noise_sigma"] = args.noise
    return resolve_config(preset, **base)


def cmd_run(args) -> int:
    cfg = _config(args)
    out = Path(cfg.out or "results")
    out.mkdir(parents=True, exist_ok=True)
    results = run_experiment(cfg, frame_dir=out / "frames" if cfg.dump_frames else None)
    text = results_csv(cfg, results)
    path = out / f"{cfg.preset}.csv"
    path.write_text(text)
    sys.stdout.write(text)
    problems = check_results(cfg, results)
    for p in problems:
        print(f"check failed: {p}", file=sys.stderr)
    print(f"wrote {path}", file=sys.stderr)
    return EXIT_CHECK if problems else 0


def cmd_calibrate(args) -> int:
    cfg = _config(args)
    try:
        res = calibrate(cfg, sigma_max=args.sigma_max)
    except CalibrationError as exc:
        print(f"calibration failed: {exc}", file=sys.stderr)
        return EXIT_CALIBRATION
    fields = cfg.to_dict()
    preset = fields.pop("preset")
    cfg = resolve_config(preset, **fields, noise_sigma=res.noise_sigma)
    out = Path(args.write or Path(cfg.out or ".") / "calibrated.json")
    out.parent.mkdir(parents=True, exist_ok=True)
    save_config(cfg, out)
    print(f"noise_sigma={res.noise_sigma:g} ber={res.ber:.3g} ({res.errors}/{res.bits})")
    print(f"wrote {out}")
    return 0


def _add_run_flags(p: argparse.ArgumentParser, sweep_axes: bool = False) -> None:
    p.add_argument("--config", help="JSON config or a result CSV with a config header")
    p.add_argument("--preset", help=f"one of: {', '.join(PRESETS)}")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--noise", type=float, help="noise sigma in gray levels")
    p.add_argument("--dump-frames", type=int, metavar="N", help="write the first N frames as PGM")
    p.add_argument("--packets", type=int)
    p.add_argument("--runs", type=int)
    if sweep_axes:
        p.add_argument("--fps", type=float, nargs="+")
        p.add_argument("--distance", type=float, nargs="+")
        p.add_argument("--speed", type=float, nargs="+", help="km/h")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vlccp", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("encode", help="encode a JSON message file to hex")
    p.add_argument("message")
    p.add_argument("--key", help="16-byte MAC key as hex")
    p.set_defaults(func=cmd_encode)

    for name, func, helptext in (("decode", cmd_decode, "verify and decode a hex message"),
                                 ("inspect", cmd_inspect, "size report and fields of a hex message")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("hex")
        p.add_argument("--key")
        p.set_defaults(func=func)

    p = sub.add_parser("run", help="run a preset experiment")
    _add_run_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep", help="run with explicit sweep axes")
    _add_run_flags(p, sweep_axes=True)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("calibrate", help="search the noise level for the 100 m BER target")
    _add_run_flags(p)
    p.add_argument("--sigma-max", type=float, default=64.0)
    p.add_argument("--write", help="calibrated config path (default OUT/calibrated.json)")
    p.set_defaults(func=cmd_calibrate, preset=None)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    if args.func is cmd_calibrate and args.preset is None and not args.config:
        args.preset = "outdoor-range"
    try:
        return args.func(args)
    except (CpmError, ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
    return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
