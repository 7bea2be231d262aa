"""Command-line entry point.

Exit codes: 0 on success, 1 on a domain error (one ``error: <Name>: ...``
line on stderr), 2 on usage errors including a missing config file.
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import fields

import numpy as np

from . import bitpack, experiments
from .dataio import dump_config, load_config
from .errors import ConfigError, IoError, RFError
from .experiments import ExperimentConfig

# config keys each subcommand reads
KEYS = {
    "depth-sweep": (
        "d", "d_hidden", "depths", "n", "n_test", "trials", "master_seed", "weight_kinds",
        "activation", "mirror", "tol", "max_iter", "closed_form", "threads",
    ),
    "mnist-sweep": (
        "mnist_dir", "activation", "depths", "d_hidden", "widths", "width_depth", "k_per_class",
        "test_per_class", "trials", "master_seed", "weight_kinds", "threads",
    ),
    "theory": (
        "dims", "n", "activation", "theory_methods", "mirror", "tol", "max_iter",
        "closure", "fprime", "source", "master_seed",
    ),
    "theory-compare": (
        "grid", "theory_methods", "trials", "n_test", "master_seed", "weight_kinds", "mirror",
        "tol", "max_iter", "closure", "fprime", "source", "threads",
    ),
    "bench": ("bench_dims", "bench_reps", "master_seed"),
}

_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        self.exit(2, f"{self.prog}: error: {message}\n")


def _add_experiment(sub, name: str, help_text: str):
    p = sub.add_parser(name, help=help_text, description=help_text)
    p.add_argument("--config", help="key = value file; flags override its values")
    p.add_argument("--preset", choices=("desk", "paper"), help="built-in parameter set applied before --config")
    p.add_argument("--out", default="results", help="output directory (default: results)")
    keys = p.add_argument_group("config keys (each also valid in --config files)")
    for key in KEYS[name]:
        default = getattr(ExperimentConfig(), key)
        shown = experiments._render(default)
        keys.add_argument(
            "--" + key.replace("_", "-"), dest=key, default=None, metavar=_TYPES[key].split("[")[0].upper(),
            help=f"{key} (default: {shown or 'unset'}" + (", env RF_THREADS" if key == "threads" else "") + ")",
        )
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="rfquant", description="Random-features quantization experiments.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    _add_experiment(sub, "depth-sweep", "Test MSE across depths for Gaussian and sign weights.")
    _add_experiment(sub, "mnist-sweep", "MNIST accuracy across depths and widths.")
    _add_experiment(sub, "theory", "Predicted test MSE for one architecture.")
    _add_experiment(sub, "theory-compare", "Theory against simulation on a grid of architectures.")
    _add_experiment(sub, "bench", "Dense against packed one-bit mat-vec timings.")
    pk = sub.add_parser("pack", help="Pack a dense .npy matrix into an RFB1 file, or inspect one.")
    pk.add_argument("input", help=".npy matrix to pack, or .rfb file to inspect")
    pk.add_argument("-o", "--output", help="output .rfb path when packing")
    return parser


def _config_for(args) -> ExperimentConfig:
    cfg = experiments.preset(args.command, args.preset) if args.preset else ExperimentConfig(experiment=args.command)
    values = {}
    if args.config:
        values.update(load_config(args.config))
    for key in KEYS[args.command]:
        v = getattr(args, key)
        if v is not None:
            values[key] = v
    values["experiment"] = args.command
    return experiments.with_overrides(cfg, values)


def _pack(args) -> int:
    if args.input.endswith(".rfb"):
        P = bitpack.load(args.input)
        print(f"d_out={P.d_out} d_in={P.d_in} bytes={P.nbytes}")
        return 0
    try:
        W = np.load(args.input)
    except (OSError, ValueError) as exc:
        raise IoError(str(exc), path=args.input) from None
    out = args.output or os.path.splitext(args.input)[0] + ".rfb"
    P = bitpack.pack_signs(W)
    bitpack.save(P, out)
    print(f"wrote {out} d_out={P.d_out} d_in={P.d_in} bytes={P.nbytes}")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        if args.command == "pack":
            return _pack(args)
        cfg = _config_for(args)
        table = experiments.run(cfg)
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, f"{args.command}.cfg"), "w") as fh:
            fh.write(dump_config(cfg.as_strings()))
        main_csv, summary_csv = table.write(args.out, args.command)
        print(main_csv)
        print(summary_csv)
        return 0
    except ConfigError as exc:
        print(exc.line(), file=sys.stderr)
        return 2
    except RFError as exc:
        print(exc.line(), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
