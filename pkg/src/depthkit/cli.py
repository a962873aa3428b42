"""Command-line entry point.

    depthkit audit   --manifest m.jsonl --out scores.csv --report report.csv
    depthkit filter  --scores scores.csv --good good.jsonl --bad bad.jsonl [--manifest m.jsonl]
    depthkit eval    --pred preds.jsonl --gt gts.jsonl [--out eval.csv]
    depthkit decoder --tokens t.sdtk --config s --params seed:0 --out disp.pfm
    depthkit decoder --config l --report flops --res 512x512
    depthkit bench   --config s --res 256x256 --runs 10

Exit codes: 0 success, 1 usage error, 2 data error. Every subcommand accepts
``--config-file`` with ``key = value`` lines; flags given on the command
line win over the file.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .depthio import (FAR_PLANE, DepthFormatError, ManifestError, atomic_write_text,
                      load_depth, read_manifest, read_raw, write_manifest, write_pfm)
from .evalkit import DELTA_TAU, DegenerateFitError, evaluate_affine_invariant
from .filterpipe import (KEPT, AuditError, FilterPolicy, audit, build_report, decide,
                         emit_report, fmt_num, read_scores, write_scores)

log = logging.getLogger("depthkit")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def __init__(self, *args, **kwargs):
        kwargs.setdefault("allow_abbrev", False)
        super().__init__(*args, **kwargs)

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _version_text() -> str:
    from .sdt.counting import CONVENTIONS

    return (f"depthkit {__version__}\n{CONVENTIONS}\n"
            "Edge threshold: nearest-rank 90th percentile of defined gradient "
            "magnitudes; edges are strictly greater. Percentile cuts drop "
            "floor(fraction * n) per group, ties broken by id.")


def _resolution(text: str) -> tuple[int, int]:
    try:
        h, w = text.lower().split("x")
        return int(h), int(w)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}") from None


def _add_policy(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("filter policy")
    g.add_argument("--valid-ratio-min", type=float, default=0.2)
    g.add_argument("--cut-fraction", type=float, default=0.2)
    g.add_argument("--grouping", choices=("per_dataset", "global"), default="per_dataset")
    g.add_argument("--k", type=int, default=20, help="histogram bins")
    g.add_argument("--lo", type=float, default=0.0)
    g.add_argument("--hi", type=float, default=None, help="defaults to the far plane")
    g.add_argument("--range-mode", choices=("fixed", "sample"), default="fixed")
    g.add_argument("--sequential", action="store_true",
                   help="re-rank by s_grad after the s_dist cut")


def _policy(args) -> FilterPolicy:
    try:
        return FilterPolicy(valid_ratio_min=args.valid_ratio_min, cut_fraction=args.cut_fraction,
                            grouping=args.grouping, k=args.k, lo=args.lo,
                            hi=args.far_plane if args.hi is None else args.hi,
                            range_mode=args.range_mode, sequential=args.sequential)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config-file", type=Path, help="key = value defaults")
    common.add_argument("--far-plane", type=float, default=FAR_PLANE)
    common.add_argument("--threads", type=int, default=1)
    common.add_argument("--seed", type=int, default=0)
    common.add_argument("--strict", action="store_true",
                        help="exit 2 if any sample fails to load or score")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = _Parser(prog="depthkit", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="store_true", help="print version and counting conventions")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("audit", parents=[common], help="score a manifest and split good/bad")
    p.add_argument("--manifest", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True, help="per-sample scores CSV")
    p.add_argument("--report", type=Path, help="per-dataset report (.csv or .json)")
    _add_policy(p)

    p = sub.add_parser("filter", parents=[common], help="apply the policy to a scores CSV")
    p.add_argument("--scores", type=Path, required=True)
    p.add_argument("--manifest", type=Path, help="source manifest; re-emitted entries keep all fields")
    p.add_argument("--good", type=Path, required=True)
    p.add_argument("--bad", type=Path, required=True)
    p.add_argument("--report", type=Path)
    _add_policy(p)

    p = sub.add_parser("eval", parents=[common], help="affine-invariant AbsRel / delta1")
    p.add_argument("--pred", type=Path, required=True, help="manifest of disparity predictions")
    p.add_argument("--gt", type=Path, required=True, help="manifest of ground-truth depth")
    p.add_argument("--out", type=Path, help="CSV path (stdout if omitted)")
    p.add_argument("--depth-cap", type=float, default=None, help="defaults to the far plane")
    p.add_argument("--tau", type=float, default=DELTA_TAU)

    p = sub.add_parser("decoder", parents=[common], help="decoder forward pass or counters")
    p.add_argument("--config", choices=("s", "b", "l"), default="s")
    p.add_argument("--tokens", type=Path)
    p.add_argument("--params", default="seed:0", help="a .npz file or seed:N")
    p.add_argument("--out", type=Path, help="output disparity PFM")
    p.add_argument("--report", choices=("params", "flops"))
    p.add_argument("--res", type=_resolution, default=(768, 768), help="HxW for --report flops")
    p.add_argument("--include-encoder", action="store_true")
    p.add_argument("--attention-matrix", action="store_true",
                   help="count the n^2 attention term in the encoder estimate")

    p = sub.add_parser("bench", parents=[common], help="time decoder forward passes")
    p.add_argument("--config", choices=("s", "b", "l"), default="s")
    p.add_argument("--res", type=_resolution, default=(256, 256))
    p.add_argument("--runs", type=int, default=10)
    p.add_argument("--warmup", type=int, default=1)
    return parser


# ---------------------------------------------------------------- config file

def read_config_file(path: Path) -> dict[str, str]:
    out = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.lstrip("-").replace("-", "_")] = value
    return out


def _apply_config_file(parser: argparse.ArgumentParser, argv: list[str]) -> None:
    pre = argparse.ArgumentParser(add_help=False, allow_abbrev=False)
    pre.add_argument("--config-file", type=Path)
    known, _ = pre.parse_known_args(argv)
    if known.config_file is None:
        return
    values = read_config_file(known.config_file)
    subparsers = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    for sp in subparsers.choices.values():
        dests = {a.dest: a for a in sp._actions}
        defaults = {}
        for key, value in values.items():
            action = dests.get(key)
            if action is None:
                continue
            if isinstance(action, argparse._StoreTrueAction):
                defaults[key] = value.lower() in ("1", "true", "yes", "on")
            else:
                # string defaults are run through the action's type by argparse
                defaults[key] = value
        sp.set_defaults(**defaults)
    unknown = set(values) - {a.dest for sp in subparsers.choices.values() for a in sp._actions}
    if unknown:
        raise UsageError(f"{known.config_file}: unknown keys {sorted(unknown)}")


# ---------------------------------------------------------------- commands

def cmd_audit(args) -> int:
    policy = _policy(args)
    entries = _manifest(args.manifest)
    try:
        scores, report = audit(entries, policy, args.far_plane, args.threads)
    except AuditError as exc:
        raise DataError(str(exc)) from None
    write_scores(scores, report.decisions, args.out)
    if args.report:
        emit_report(report, args.report, _report_format(args.report))
    failed = [s for s in scores if s.error]
    for s in failed:
        log.warning("sample %s: %s", s.id, s.error)
    s = report.summary
    log.info("audited %d samples: %d good, %d bad", s.total, s.good, s.bad)
    return EXIT_DATA if failed and args.strict else EXIT_OK


def cmd_filter(args) -> int:
    policy = _policy(args)
    try:
        scores = read_scores(args.scores)
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"{args.scores}: {exc}") from None
    reasons = decide(scores, policy)
    good_ids = {s.id for s in scores if reasons[s.id] == KEPT}
    if args.manifest:
        entries = _manifest(args.manifest)
        by_id = {e.id: e for e in entries}
        unknown = [s.id for s in scores if s.id not in by_id]
        if unknown:
            raise DataError(f"scores reference ids missing from the manifest: {unknown[:5]}")
        scored = [by_id[s.id] for s in scores]
        write_manifest([e for e in scored if e.id in good_ids], args.good)
        write_manifest([e for e in scored if e.id not in good_ids], args.bad)
    else:
        def lines(keep):
            return "".join(json.dumps({"id": s.id, "dataset": s.dataset}) + "\n"
                           for s in scores if (s.id in good_ids) == keep)
        atomic_write_text(args.good, lines(True))
        atomic_write_text(args.bad, lines(False))
    if args.report:
        emit_report(build_report(scores, reasons, policy), args.report,
                    _report_format(args.report))
    log.info("%d good, %d bad", len(good_ids), len(scores) - len(good_ids))
    if args.strict and any(s.error for s in scores):
        return EXIT_DATA
    return EXIT_OK


def _eval_pair(pred_entry, gt_entry, depth_cap, tau):
    try:
        gt = load_depth(gt_entry, depth_cap)
        pred = read_raw(pred_entry)
        if pred.shape != gt.depth.shape:
            raise ValueError(f"prediction shape {pred.shape} != ground truth {gt.depth.shape}")
        mask = gt.valid & np.isfinite(pred)
        return gt_entry.id, evaluate_affine_invariant(pred, gt.depth, mask, depth_cap, tau), ""
    except (OSError, ValueError) as exc:
        return gt_entry.id, None, f"{type(exc).__name__}: {exc}"


def cmd_eval(args) -> int:
    depth_cap = args.far_plane if args.depth_cap is None else args.depth_cap
    preds = {e.id: e for e in _manifest(args.pred)}
    gts = _manifest(args.gt)
    missing = [e.id for e in gts if e.id not in preds]
    if missing:
        raise DataError(f"no prediction for ids {missing[:5]}")
    pairs = [(preds[e.id], e) for e in gts]
    if args.threads > 1:
        with ThreadPoolExecutor(args.threads) as pool:
            results = list(pool.map(lambda pe: _eval_pair(*pe, depth_cap, args.tau), pairs))
    else:
        results = [_eval_pair(p, g, depth_cap, args.tau) for p, g in pairs]
    results.sort(key=lambda r: r[0])

    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["id", "absrel", "delta1", "m"])
    ok = [r for r in results if r[1] is not None]
    for sid, res, err in results:
        if res is None:
            log.warning("sample %s: %s", sid, err)
            w.writerow([sid, "nan", "nan", 0])
        else:
            w.writerow([sid, fmt_num(res.absrel), fmt_num(res.delta1), res.m])
    if ok:
        mean_absrel = math.fsum(r[1].absrel for r in ok) / len(ok)
        mean_delta1 = math.fsum(r[1].delta1 for r in ok) / len(ok)
        w.writerow(["mean", fmt_num(mean_absrel), fmt_num(mean_delta1),
                    sum(r[1].m for r in ok)])
    if args.out:
        atomic_write_text(args.out, buf.getvalue())
    else:
        sys.stdout.write(buf.getvalue())
    if not ok:
        raise DataError("no sample could be evaluated")
    return EXIT_DATA if args.strict and len(ok) < len(results) else EXIT_OK


def _load_params(spec: str, config):
    from .sdt import DecoderParams, init_params

    if spec.startswith("seed:"):
        try:
            return init_params(config, int(spec[5:]))
        except ValueError:
            raise UsageError(f"bad --params {spec!r}") from None
    try:
        params = DecoderParams.load(spec)
    except (OSError, ValueError, KeyError) as exc:
        raise DataError(f"{spec}: {exc}") from None
    if params.config != config:
        raise DataError(f"{spec}: parameters are for {params.config}, not {config}")
    return params


def cmd_decoder(args) -> int:
    from .sdt import (CONVENTIONS, DPT_PARAMS_M, DecoderConfig, TokenFormatError, count_flops,
                      count_params, flops_breakdown, forward, read_tokens)

    config = DecoderConfig.named(args.config)
    if args.report == "params":
        n = count_params(config)
        ref = DPT_PARAMS_M[args.config] * 1e6
        print(f"# {CONVENTIONS}")
        print(f"config={args.config} params={n} ({n / 1e6:.2f} M); "
              f"reference multi-branch decoder {ref / 1e6:.2f} M; ratio {n / ref:.4f}")
        return EXIT_OK
    if args.report == "flops":
        H, W = args.res
        try:
            parts = flops_breakdown(config, H, W)
            total = count_flops(config, H, W, args.include_encoder, args.config,
                                args.attention_matrix)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        print(f"# {CONVENTIONS}")
        for name, v in parts.items():
            print(f"{name}: {v / 1e9:.2f} G")
        label = "total (decoder + ViT estimate)" if args.include_encoder else "total (decoder)"
        print(f"{label} at {H}x{W}: {total / 1e9:.2f} G")
        return EXIT_OK
    if args.tokens is None or args.out is None:
        raise UsageError("decoder: --tokens and --out are required unless --report is given")
    try:
        tokens = read_tokens(args.tokens)
    except (OSError, TokenFormatError) as exc:
        raise DataError(f"{args.tokens}: {exc}") from None
    params = _load_params(args.params, config)
    try:
        disp = forward(tokens, params)
    except ValueError as exc:
        raise DataError(str(exc)) from None
    write_pfm(args.out, disp)
    log.info("wrote %dx%d disparity to %s", disp.shape[0], disp.shape[1], args.out)
    return EXIT_OK


def cmd_bench(args) -> int:
    from .sdt import DecoderConfig, bench, format_latency

    config = DecoderConfig.named(args.config)
    try:
        mean, std = bench(config, args.res, args.runs, args.warmup, args.seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    H, W = args.res
    print(f"{H}x{W} config={args.config} runs={args.runs}: {format_latency(mean, std)}")
    return EXIT_OK


def _manifest(path: Path):
    try:
        return read_manifest(path)
    except OSError as exc:
        raise DataError(f"{path}: {exc}") from None
    except ManifestError as exc:
        raise DataError(str(exc)) from None


def _report_format(path: Path) -> str:
    return "json" if path.suffix.lower() == ".json" else "csv"


COMMANDS = {"audit": cmd_audit, "filter": cmd_filter, "eval": cmd_eval,
            "decoder": cmd_decoder, "bench": cmd_bench}


def run(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config_file(parser, argv)
        args = parser.parse_args(argv)
        if args.version:
            print(_version_text())
            return EXIT_OK
        if args.command is None:
            raise UsageError("a subcommand is required: " + ", ".join(COMMANDS))
        if args.threads < 1:
            raise UsageError("--threads must be >= 1")
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(message)s")
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, DepthFormatError, DegenerateFitError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
