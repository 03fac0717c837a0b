"""Command-line entry point: gen, extract, hist, train, score, compare."""
import argparse
import hashlib
import json
import os
import platform
import sys
from dataclasses import dataclass, replace
from importlib import metadata
from pathlib import Path

import numpy as np
import pandas as pd

from .critic import ScoringModel, train_central
from .datagen import PRESETS, make_population, population_frame, write_population
from .evaluation import SCALES, consistency_report, histogram_svg, score_histogram, write_histogram_csv
from .exceptions import ConfigurationError, FedDriveError
from .federated import Coordinator, RoundConfig, Transcript, histogram_edges, run_fedavg, run_federated, suggest_distribution
from .specs import FLEET_SPECS, specs_from_json, specs_to_json
from .trips import client_matrices, extract_fleet_metrics, read_driving_csv, read_metrics_csv, write_metrics_csv

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_USAGE = 0, 1, 2, 64
KEY_BITS_ENV = "FEDDRIVE_KEY_BITS"
COMMANDS = ("gen", "extract", "hist", "train", "score", "compare")
CONFIG_KEYS = {"T", "tau", "K", "seed", "bins", "key_bits"}


@dataclass(frozen=True)
class ExperimentConfig:
    T: int = 300
    tau: float = 0.5
    K: int = None
    seed: int = 0
    bins: int = 50
    key_bits: int = 1024
    mode: str = "federated"

    def round_config(self):
        return RoundConfig(
            T=self.T, tau=self.tau, K=self.K, rng_seed=self.seed, histogram_bins=self.bins, key_bits=self.key_bits
        )


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigurationError(message)


def _common(p):
    p.add_argument("--config", type=Path, help="JSON file with T, tau, K, seed, bins, key_bits")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", type=Path, default=Path("."), help="output directory")


def _data_source(p):
    src = p.add_mutually_exclusive_group()
    src.add_argument("--data", type=Path, help="metrics CSV (vehicle_id, trip_id, metrics...)")
    src.add_argument("--preset", choices=sorted(PRESETS), help="generate a synthetic population instead")
    p.add_argument("--specs", type=Path, help="metric spec JSON (required with --data)")


def build_parser():
    parser = _Parser(prog="feddrivescore", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen", help="write a synthetic preset population")
    _common(p)
    p.add_argument("--preset", choices=sorted(PRESETS), required=True)

    p = sub.add_parser("extract", help="raw 1 Hz records to per-trip metrics")
    _common(p)
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--specs", type=Path)

    p = sub.add_parser("hist", help="secure per-metric histograms")
    _common(p)
    _data_source(p)
    p.add_argument("--svg", action="store_true")

    p = sub.add_parser("train", help="fit a scoring model")
    _common(p)
    _data_source(p)
    p.add_argument("--mode", choices=("central", "federated", "fedavg"))
    p.add_argument("--tau", type=float)
    p.add_argument("--rounds", type=int)

    p = sub.add_parser("score", help="score trips with a model")
    _common(p)
    p.add_argument("--model", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--scale", choices=sorted(SCALES), default="unit")

    p = sub.add_parser("compare", help="consistency report of a candidate against a reference model")
    _common(p)
    p.add_argument("--reference", type=Path, required=True)
    p.add_argument("--candidate", type=Path, required=True)
    p.add_argument("--data", type=Path, required=True)
    p.add_argument("--scale", choices=sorted(SCALES), default="unit")
    p.add_argument("--svg", action="store_true")
    return parser


def load_config(args):
    cfg = ExperimentConfig()
    if getattr(args, "config", None) is not None:
        try:
            raw = json.loads(args.config.read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(raw, dict) or set(raw) - CONFIG_KEYS:
            raise ConfigurationError(f"config keys must be a subset of {sorted(CONFIG_KEYS)}")
        cfg = replace(cfg, **raw)
    overrides = {
        "seed": getattr(args, "seed", None),
        "tau": getattr(args, "tau", None),
        "T": getattr(args, "rounds", None),
        "mode": getattr(args, "mode", None),
    }
    cfg = replace(cfg, **{k: v for k, v in overrides.items() if v is not None})
    env = os.environ.get(KEY_BITS_ENV)
    if env:
        try:
            cfg = replace(cfg, key_bits=int(env))
        except ValueError as exc:
            raise ConfigurationError(f"{KEY_BITS_ENV} must be an integer") from exc
    cfg.round_config()  # validates
    return cfg


def _load_specs(path, default=None):
    if path is None:
        if default is None:
            raise ConfigurationError("--specs is required")
        return default
    try:
        return specs_from_json(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read specs {path}: {exc}") from exc


def _load_model(path):
    try:
        return ScoringModel.load(path)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigurationError(f"cannot read model {path}: {exc}") from exc


def _population(args, cfg):
    """Return (specs, {client_id: matrix}) from --data/--specs or --preset."""
    if args.preset is not None:
        spec = PRESETS[args.preset](cfg.seed)
        _, clients = make_population(spec)
        frame = population_frame(clients, spec.specs)
        return spec.specs, client_matrices(frame)
    if args.data is None:
        raise ConfigurationError("one of --data or --preset is required")
    specs = _load_specs(args.specs)
    return specs, client_matrices(read_metrics_csv(args.data, specs))


def _versions():
    out = {"python": platform.python_version()}
    for pkg in ("feddrivescore", "numpy", "scipy", "scikit-learn", "pandas", "gmpy2"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


def write_manifest(out, command, argv, cfg, files):
    digests = {}
    for f in sorted(files):
        digests[f] = hashlib.sha256((out / f).read_bytes()).hexdigest()
    manifest = {
        "command": command,
        "argv": list(argv),
        "config": {k: getattr(cfg, k) for k in ("T", "tau", "K", "seed", "bins", "key_bits", "mode")},
        "versions": _versions(),
        "outputs": digests,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


# -- subcommands -------------------------------------------------------------


def cmd_gen(args, cfg):
    spec = PRESETS[args.preset](cfg.seed)
    _, clients = make_population(spec)
    write_population(clients, spec.specs, args.out / "metrics.csv", args.out / "specs.json")
    return ["metrics.csv", "specs.json"]


def cmd_extract(args, cfg):
    specs = _load_specs(args.specs, FLEET_SPECS)
    frame = extract_fleet_metrics(read_driving_csv(args.input), specs)
    write_metrics_csv(frame, args.out / "metrics.csv")
    (args.out / "specs.json").write_text(json.dumps(specs_to_json(specs), indent=2))
    return ["metrics.csv", "specs.json"]


def cmd_hist(args, cfg):
    specs, clients = _population(args, cfg)
    coord = Coordinator(clients, specs, replace(cfg.round_config(), T=1, tau=1.0, K=None))
    u, v = coord.secure_extrema()
    edges = histogram_edges(u, v, cfg.bins)
    counts = coord.secure_histogram(edges, round_=1)
    files, families = [], {}
    for spec, e, c in zip(specs, edges, counts):
        name = f"hist_{spec.name}.csv"
        write_histogram_csv(args.out / name, e, c)
        files.append(name)
        families[spec.name] = suggest_distribution(c, e)
        if args.svg:
            svg = f"hist_{spec.name}.svg"
            (args.out / svg).write_text(histogram_svg(e, c, spec.name))
            files.append(svg)
    (args.out / "families.json").write_text(json.dumps(families, indent=2) + "\n")
    coord.transcript.write(args.out / "transcript.jsonl")
    return files + ["families.json", "transcript.jsonl"]


def cmd_train(args, cfg):
    specs, clients = _population(args, cfg)
    rc = cfg.round_config()
    files = ["model.json"]
    if cfg.mode == "central":
        model = train_central(np.vstack([X for X in clients.values() if len(X)]), specs)
    elif cfg.mode == "federated":
        transcript = Transcript()
        result = run_federated(clients, specs, rc, transcript=transcript)
        model = result.model
        transcript.write(args.out / "transcript.jsonl")
        np.savetxt(args.out / "weights_history.csv", result.weight_history, delimiter=",", fmt="%.17g")
        files += ["transcript.jsonl", "weights_history.csv"]
    else:
        result = run_fedavg(clients, specs, rc)
        model = result.model
        np.savetxt(args.out / "weights_history.csv", result.weight_history, delimiter=",", fmt="%.17g")
        files.append("weights_history.csv")
    model.save(args.out / "model.json")
    return files


def cmd_score(args, cfg):
    model = _load_model(args.model)
    frame = read_metrics_csv(args.data, model.specs)
    scores = model.score(frame.iloc[:, 2:].to_numpy(dtype=float)) * SCALES[args.scale]
    out = pd.DataFrame({"vehicle_id": frame["vehicle_id"], "trip_id": frame["trip_id"], "score": scores})
    out.to_csv(args.out / "scores.csv", index=False, float_format="%.17g")
    return ["scores.csv"]


def cmd_compare(args, cfg):
    ref = _load_model(args.reference)
    cand = _load_model(args.candidate)
    frame = read_metrics_csv(args.data, ref.specs)
    X = frame.iloc[:, 2:].to_numpy(dtype=float)
    report = consistency_report(ref, cand, X, scale=args.scale)
    (args.out / "report.json").write_text(report.to_json() + "\n")
    files = ["report.json"]
    k = SCALES[args.scale]
    for tag, model in (("reference", ref), ("candidate", cand)):
        edges, counts = score_histogram(model.score(X) * k, cfg.bins, (0.0, k))
        write_histogram_csv(args.out / f"scores_{tag}.csv", edges, counts)
        files.append(f"scores_{tag}.csv")
        if args.svg:
            (args.out / f"scores_{tag}.svg").write_text(histogram_svg(edges, counts, tag))
            files.append(f"scores_{tag}.svg")
    return files


HANDLERS = {
    "gen": cmd_gen,
    "extract": cmd_extract,
    "hist": cmd_hist,
    "train": cmd_train,
    "score": cmd_score,
    "compare": cmd_compare,
}


def run_command(argv):
    argv = list(argv)
    parser = build_parser()
    if not argv or argv[0] not in COMMANDS:
        if argv and argv[0] in ("-h", "--help"):
            parser.print_help()
            return EXIT_OK
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    try:
        args = parser.parse_args(argv)
        cfg = load_config(args)
        args.out.mkdir(parents=True, exist_ok=True)
        files = HANDLERS[args.command](args, cfg)
        write_manifest(args.out, args.command, argv, cfg, files)
    except ConfigurationError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FedDriveError, OSError, ValueError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


def main(argv=None):
    sys.exit(run_command(sys.argv[1:] if argv is None else argv))


if __name__ == "__main__":
    main()
