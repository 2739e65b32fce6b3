"""Command-line entry point: ``tgquant <command> ...``.

Config comes from ``--config file.json`` (keys ``act_group_size``,
``step_over_std``, ``token_zero_ratio``, ``act_bits``, ``weight_bits``,
``percentile``, ``variant``); command-line flags override the file. An
output path of ``-`` writes to stdout; errors go to stderr only.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import _fmt
from .calibration import RadiusTable, calibrate_fixed_radii
from .diagnostics import (
    BoundaryProtocolConfig,
    DiagnosticsReport,
    build_report,
    labels_from_mask,
    reports_to_csv,
)
from .errors import ConfigError, GridError, ParseError, ShapeError, TGQError
from .quant_core import VARIANTS, QuantConfig, config_for_variant, quantize_activations, step_size
from .quant_layer import QuantLinearSpec, detokenize_4d, quant_linear_forward, tokenize_4d
from .synthgen import SynthSpec, generate
from .tensor_io import encode_npy, read_npy, require_finite
from .weight_quant import load_packed, pack_weights, save_packed

DEFAULT_VARIANT = "full"

# config-file key -> QuantConfig field
FILE_KEYS = {
    "act_group_size": "group_size",
    "step_over_std": "tau",
    "token_zero_ratio": "zr",
    "act_bits": "act_bits",
    "weight_bits": "weight_bits",
    "percentile": "percentile",
}


# ---------------------------------------------------------------------------
# helpers


def _optional_float(text: str) -> Optional[float]:
    return None if text.lower() in ("none", "off", "null") else float(text)


def _write(path: str, data: bytes | str) -> None:
    if isinstance(data, str):
        data = data.encode()
    if path == "-":
        sys.stdout.buffer.write(data)
        sys.stdout.buffer.flush()
    else:
        Path(path).write_bytes(data)


def _load_config_file(path: Optional[str]) -> dict:
    if not path:
        return {}
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"config file {path} is not JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config file must hold a JSON object")
    unknown = set(doc) - set(FILE_KEYS) - {"variant"}
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    return doc


def resolve_config(args: argparse.Namespace) -> tuple[str, QuantConfig]:
    """Layer flags over the config file over defaults, then apply the variant."""
    doc = _load_config_file(getattr(args, "config", None))
    values = {FILE_KEYS[k]: v for k, v in doc.items() if k in FILE_KEYS}
    for field in FILE_KEYS.values():
        flag = getattr(args, field, None)
        if flag is not None:
            values[field] = None if flag == "none" else flag
    variant = getattr(args, "variant", None) or doc.get("variant") or DEFAULT_VARIANT
    return variant, config_for_variant(variant, QuantConfig(**values))


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("quantizer config")
    g.add_argument("--config", help="JSON config file; flags override it")
    g.add_argument("--variant", choices=sorted(VARIANTS), help=f"ablation variant (default {DEFAULT_VARIANT})")
    g.add_argument("--act-bits", "--bits", dest="act_bits", type=int)
    g.add_argument("--weight-bits", dest="weight_bits", type=int)
    g.add_argument("--act-group-size", dest="group_size", type=int)
    g.add_argument("--step-over-std", dest="tau", type=_none_or_float, help="tau; 'none' disables C1")
    g.add_argument("--token-zero-ratio", dest="zr", type=_none_or_float, help="zr; 'none' disables C2")
    g.add_argument("--percentile", dest="percentile", type=_none_or_float)


def _none_or_float(text: str):
    value = _optional_float(text)
    return "none" if value is None else value


def _add_protocol_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("token classes")
    g.add_argument("--labels", help="JSON labels sidecar (as written by gen-synth)")
    g.add_argument("--mask", help="binary uint8 mask .npy for the boundary-band protocol")
    g.add_argument("--grid", type=int, nargs=2, metavar=("H", "W"), help="token grid for --mask")
    g.add_argument("--r-in", type=int, default=BoundaryProtocolConfig.r_in)
    g.add_argument("--r-out", type=int, default=BoundaryProtocolConfig.r_out)
    g.add_argument("--gamma-bdry", type=float, default=BoundaryProtocolConfig.gamma_bdry)
    g.add_argument("--gamma-nonbdry", type=float, default=BoundaryProtocolConfig.gamma_nonbdry)


def _load_activations(path: str, layout: str = "channels_last") -> tuple[np.ndarray, Optional[tuple[int, int]]]:
    """Return ``(rows, spatial_grid)`` where rows is ``(tokens, C)`` float32."""
    X = read_npy(path)
    if X.dtype != np.float32:
        raise ShapeError(f"{path}: activations must be float32")
    require_finite(X)
    grid = None
    if layout == "nchw":
        if X.ndim != 4:
            raise ShapeError(f"{path}: --layout nchw needs a 4-D tensor, got {X.shape}")
        if X.shape[0] == 1:
            grid = (X.shape[2], X.shape[3])
        X = tokenize_4d(X)
    if X.ndim < 2:
        X = X.reshape(1, -1)
    return X.reshape(-1, X.shape[-1]), grid


def _token_labels(args, n_tokens: int, grid: Optional[tuple[int, int]]):
    if args.labels and args.mask:
        raise ConfigError("use either --labels or --mask, not both")
    if args.labels:
        doc = json.loads(Path(args.labels).read_text())
        labels = doc["labels"] if isinstance(doc, dict) else doc
        if len(labels) != n_tokens:
            raise ShapeError(f"{len(labels)} labels for {n_tokens} tokens")
        return labels
    if args.mask:
        mask = read_npy(args.mask)
        grid = tuple(args.grid) if args.grid else grid
        if grid is None:
            raise GridError("--mask needs --grid H W")
        if grid[0] * grid[1] != n_tokens:
            raise GridError(f"grid {grid[0]}x{grid[1]} does not cover {n_tokens} tokens")
        protocol = BoundaryProtocolConfig(args.r_in, args.r_out, args.gamma_bdry, args.gamma_nonbdry)
        return list(labels_from_mask(mask, grid, protocol))
    return None


def diagnose_rows(rows, labels, variant: str, cfg: QuantConfig, layer: str = "layer") -> DiagnosticsReport:
    _, table = quantize_activations(rows, cfg)
    return build_report(table, labels, rows, cfg, layer=layer, variant=variant)


# ---------------------------------------------------------------------------
# commands


def cmd_quantize(args) -> int:
    variant, cfg = resolve_config(args)
    X = read_npy(args.input)
    require_finite(X)
    if X.dtype != np.float32:
        raise ShapeError("activations must be float32")
    if args.layout == "nchw":
        tokens = tokenize_4d(X)
        x_hat, table = quantize_activations(tokens, cfg)
        x_hat = detokenize_4d(x_hat, X.shape[2], X.shape[3])
    else:
        x_hat, table = quantize_activations(X, cfg)
    _write(args.out, encode_npy(x_hat))
    if args.stats:
        groups = [
            {"token": s.group_index[0], "group": s.group_index[1], "c_base": s.c_base, "c_tau": s.c_tau,
             "c_zr": s.c_zr, "c_final": s.c_final, "delta": s.delta, "sigma": s.sigma, "eta": s.eta,
             "rho0": s.rho0, "clipped": s.clipped_count}
            for s in table
        ]
        doc = {"variant": variant, "config": cfg.to_dict(), "shape": list(X.shape),
               "scope": table.scope, "groups": groups}
        _write(args.stats, _fmt.dumps(doc))
    return 0


def cmd_diagnose(args) -> int:
    variant, cfg = resolve_config(args)
    rows, grid = _load_activations(args.input, args.layout)
    labels = _token_labels(args, rows.shape[0], grid)
    report = diagnose_rows(rows, labels, variant, cfg, layer=args.layer)
    _write(args.out, report.to_json())
    if args.csv:
        _write(args.csv, reports_to_csv([report]))
    return 0


SWEEP_FIELDS = {"g": "group_size", "tau": "tau", "zr": "zr"}


def sweep_rows(rows, labels, param: str, values: Sequence[float], variant: str, base: QuantConfig) -> list[dict]:
    if not values:
        raise ConfigError("sweep needs at least one value")
    field = SWEEP_FIELDS[param]
    out = []
    for value in values:
        value = int(value) if field == "group_size" else float(value)
        cfg = config_for_variant(variant, base.replace(**{field: value}))
        _, table = quantize_activations(rows, cfg)
        report = build_report(table, labels, rows, cfg, variant=variant)
        naive = float(step_size(np.abs(rows).max(), cfg.q_max, cfg.eps_scale))
        row = {"param": param, "value": value}
        row.update(report.csv_row())
        row.update({
            "per_tensor_delta": naive,
            "max_group_delta": float(table.delta.max()),
            "rho0_group_max": float(table.rho0.max()),
            "rho0_bound": (cfg.zr + 1.0 / cfg.group_size) if cfg.zr is not None else None,
        })
        out.append(_fmt.round_sig(row))
    return out


def cmd_sweep(args) -> int:
    variant, cfg = resolve_config(args)
    rows, grid = _load_activations(args.input, args.layout)
    labels = _token_labels(args, rows.shape[0], grid)
    table = sweep_rows(rows, labels, args.param, args.values, variant, cfg)
    fieldnames: list[str] = []
    for row in table:
        fieldnames.extend(k for k in row if k not in fieldnames)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=fieldnames, lineterminator="\n")
    writer.writeheader()
    writer.writerows(table)
    _write(args.out, buf.getvalue())
    return 0


def cmd_pack_weights(args) -> int:
    W = read_npy(args.input)
    if W.dtype != np.float32 or W.ndim != 2:
        raise ShapeError("weights must be a 2-D float32 array (out, in)")
    bits = args.weight_bits if args.weight_bits is not None else QuantConfig().weight_bits
    save_packed(pack_weights(W, bits), args.out)
    return 0


def cmd_linear(args) -> int:
    variant, cfg = resolve_config(args)
    X = read_npy(args.input)
    require_finite(X)
    weights = load_packed(args.weights)
    bias = read_npy(args.bias) if args.bias else None
    radius = RadiusTable.load(args.radii).radius(args.layer) if args.radii else None
    spec = QuantLinearSpec(weights=weights, cfg=cfg, bias=bias, fixed_radius=radius)
    _write(args.out, encode_npy(quant_linear_forward(X, spec)))
    return 0


def cmd_gen_synth(args) -> int:
    spec = SynthSpec(
        n_tokens=args.tokens, n_channels=args.channels, boundary_frac=args.boundary_frac,
        cue_scale=args.cue_scale, background_scale=args.background_scale,
        background_offset=args.background_offset, spike_magnitude=args.spike_magnitude,
        spike_prob=args.spike_prob, signed_spikes=args.signed_spikes, seed=args.seed,
    )
    X, labels = generate(spec)
    _write(args.out, encode_npy(X))
    if args.labels_out:
        sidecar = {
            "labels": labels,
            "boundary_tokens": [i for i, lab in enumerate(labels) if lab == "boundary_heavy"],
            "spec": spec.to_dict(),
        }
        _write(args.labels_out, _fmt.dumps(sidecar))
    return 0


def cmd_calibrate(args) -> int:
    variant, cfg = resolve_config(args)
    samples = [_load_activations(p)[0] for p in args.inputs]
    table = calibrate_fixed_radii(samples, cfg, layer=args.layer, sources=list(args.inputs))
    _write(args.out, table.to_json())
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="tgquant", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("quantize", help="quantize-dequantize an activation tensor")
    p.add_argument("input")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--stats", help="write per-group statistics JSON here")
    p.add_argument("--layout", choices=("channels_last", "nchw"), default="channels_last")
    _add_config_flags(p)
    p.set_defaults(func=cmd_quantize)

    p = sub.add_parser("diagnose", help="mechanism diagnostics report for one layer")
    p.add_argument("input")
    p.add_argument("-o", "--out", default="-")
    p.add_argument("--csv", help="also write a one-row CSV")
    p.add_argument("--layer", default="layer")
    p.add_argument("--layout", choices=("channels_last", "nchw"), default="channels_last")
    _add_config_flags(p)
    _add_protocol_flags(p)
    p.set_defaults(func=cmd_diagnose)

    p = sub.add_parser("sweep", help="vary one hyperparameter, one CSV row per value")
    p.add_argument("input")
    p.add_argument("--param", choices=sorted(SWEEP_FIELDS), required=True)
    p.add_argument("--values", type=float, nargs="+", required=True)
    p.add_argument("-o", "--out", default="-")
    p.add_argument("--layout", choices=("channels_last", "nchw"), default="channels_last")
    _add_config_flags(p)
    _add_protocol_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("pack-weights", help="quantize and pack a weight matrix")
    p.add_argument("input")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--weight-bits", dest="weight_bits", type=int)
    p.set_defaults(func=cmd_pack_weights)

    p = sub.add_parser("linear", help="simulated quantized linear forward")
    p.add_argument("input")
    p.add_argument("weights")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--bias")
    p.add_argument("--radii", help="radius table JSON from 'calibrate' (fixed mode)")
    p.add_argument("--layer", default="layer")
    _add_config_flags(p)
    p.set_defaults(func=cmd_linear)

    defaults = SynthSpec()
    p = sub.add_parser("gen-synth", help="generate synthetic activations")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--labels-out")
    p.add_argument("--tokens", type=int, default=defaults.n_tokens)
    p.add_argument("--channels", type=int, default=defaults.n_channels)
    p.add_argument("--boundary-frac", type=float, default=defaults.boundary_frac)
    p.add_argument("--cue-scale", type=float, default=defaults.cue_scale)
    p.add_argument("--background-scale", type=float, default=defaults.background_scale)
    p.add_argument("--background-offset", type=float, default=defaults.background_offset)
    p.add_argument("--spike-magnitude", type=float, default=defaults.spike_magnitude)
    p.add_argument("--spike-prob", type=float, default=defaults.spike_prob)
    p.add_argument("--signed-spikes", action="store_true")
    p.add_argument("--seed", type=int, default=defaults.seed)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("calibrate", help="fixed per-tensor radii from calibration samples")
    p.add_argument("inputs", nargs="+")
    p.add_argument("-o", "--out", required=True)
    p.add_argument("--layer", default="layer")
    _add_config_flags(p)
    p.set_defaults(func=cmd_calibrate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (TGQError, OSError, KeyError, json.JSONDecodeError) as exc:
        print(f"tgquant {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
