"""Command-line interface: simulate, fit, fit-spectral, eval, export."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .anneal import AnnealDriver
from .data import GroundTruth, ParseError, load_observations, save_observations
from .data import simulate_time_varying, simulate_var1, standardize
from .engine import FitConfig, NumericalFailure, fit
from .metrics import GraphTrajectory, extract_graphs, structure_metrics
from .model import FORMAT_NAME, VariationalModel
from .spectral import FrequencyBand, band_graph, fit_spectral, normalized_dft

EXIT_OK, EXIT_USAGE, EXIT_IO, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _write_json(path, doc):
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=1, sort_keys=True)
        fh.write("\n")


def _write_trace(path, res):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "elbo", "accepted", "rate"])
        for row in res.trace_rows():
            w.writerow([row[0], repr(float(row[1])), row[2], repr(float(row[3]))])


def _fit_config(args):
    n_anneal = 0 if args.no_anneal else args.anneal_iters
    max_iters = max(args.max_iters, n_anneal)
    return FitConfig(max_iters=max_iters, anneal_iters=n_anneal, elbo_rel_tol=args.tol,
                     graph_threshold=args.threshold, rng_seed=args.seed)


def _driver(args):
    return None if args.no_anneal else AnnealDriver(args.anneal_iters, seed=args.seed)


def _save_fit(out, res, extra):
    out.mkdir(parents=True, exist_ok=True)
    doc = res.model.to_dict()
    doc["fit"] = {"elbo_trace": res.elbo_trace, "accepted": [bool(a) for a in res.accepted],
                  "rates": res.rates, "iterations_run": res.iterations_run,
                  "converged": res.converged, **extra}
    _write_json(out / "model.json", doc)
    _write_trace(out / "trace.csv", res)
    _write_json(out / "run.json", {"wall_time_seconds": res.wall_time_seconds,
                                   "anneal_acceptance_rate": res.anneal_acceptance_rate,
                                   "flags": res.flags})


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_simulate(args):
    if args.kind == "var1":
        obs, truth = simulate_var1(args.p, args.n, args.ne, args.seed)
    else:
        obs, truth = simulate_time_varying(args.p, args.n, args.ne, args.seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_observations(obs, out / "data.csv")
    _write_json(out / "truth.json", truth.to_dict())
    return EXIT_OK


def cmd_fit(args):
    obs = load_observations(args.input)
    if not args.no_standardize:
        obs, _ = standardize(obs)
    cfg = _fit_config(args)
    res = fit(obs, cfg, _driver(args))
    g = extract_graphs(res.model, args.threshold)
    _save_fit(Path(args.out), res, {"threshold": args.threshold})
    _write_json(Path(args.out) / "graph.json",
                {"adjacency": g.adjacency.astype(int).tolist(), "threshold": args.threshold})
    return EXIT_OK


def cmd_fit_spectral(args):
    obs = load_observations(args.input)
    if obs.has_missing:
        raise ValueError("spectral fits need complete series")
    obs, _ = standardize(obs)
    coeffs = normalized_dft(obs.values, args.sample_rate)
    res = fit_spectral(coeffs, _fit_config(args), _driver(args), standardize=True)
    out = Path(args.out)
    _save_fit(out, res, {"threshold": args.threshold, "n_samples": coeffs.n_samples,
                         "sample_rate": args.sample_rate, "freqs": coeffs.freqs.tolist()})
    whole = FrequencyBand(args.sample_rate / coeffs.n_samples * 0.5, args.sample_rate / 2,
                          args.sample_rate)
    adj = band_graph(res, whole, args.threshold, coeffs.freqs, coeffs.n_samples)
    _write_json(out / "graph.json", {"adjacency": [adj.astype(int).tolist()],
                                     "threshold": args.threshold})
    bands = []
    for text in args.band or []:
        b = FrequencyBand.parse(text, args.sample_rate)
        a = band_graph(res, b, args.threshold, coeffs.freqs, coeffs.n_samples)
        edges = [[int(j), int(k)] for j, k in zip(*np.nonzero(np.triu(a, 1)))]
        bands.append({"lo": b.lo, "hi": b.hi, "edges": edges})
    if bands:
        _write_json(out / "bands.json", {"bands": bands})
    return EXIT_OK


def _load_graph(path, threshold):
    with open(path) as fh:
        doc = json.load(fh)
    if doc.get("format") == FORMAT_NAME:
        return extract_graphs(VariationalModel.from_dict(doc), threshold)
    if "adjacency" in doc:
        return GraphTrajectory(np.asarray(doc["adjacency"], dtype=bool))
    if "support" in doc:
        return GraphTrajectory(GroundTruth.from_dict(doc).support)
    raise ParseError(f"{path}: not a model, graph or truth document")


def cmd_eval(args):
    est = _load_graph(args.est, args.threshold)
    truth = _load_graph(args.truth, args.threshold)
    rep = structure_metrics(est, truth, "macro" if args.macro else "micro")
    doc = rep.to_dict()
    doc.pop("wall_time_seconds")
    json.dump(doc, sys.stdout, indent=1)
    sys.stdout.write("\n")
    return EXIT_OK


def cmd_export(args):
    with open(args.model) as fh:
        doc = json.load(fh)
    model = VariationalModel.from_dict(doc)
    w = csv.writer(sys.stdout, lineterminator="\n")
    if args.what == "edges":
        w.writerow(["t", "j", "k", "s_mean", "k_mean"])
        km, _ = model.k_moments()
        for e, (j, k) in enumerate(model.pairs):
            for t in range(model.N):
                w.writerow([t + 1, j + 1, k + 1, repr(float(model.s_marg[e, t])),
                            repr(complex(km[e, t])) if np.iscomplexobj(km)
                            else repr(float(km[e, t]))])
    elif args.what == "elbo":
        trace = doc.get("fit", {}).get("elbo_trace")
        if trace is None:
            raise ParseError("model document carries no ELBO trace")
        w.writerow(["iteration", "elbo"])
        for i, v in enumerate(trace):
            w.writerow([i + 1, repr(float(v))])
    else:
        thr = args.threshold
        if thr is None:
            thr = doc.get("fit", {}).get("threshold", 0.5)
        counts = extract_graphs(model, thr).edge_counts
        w.writerow(["t", "count"])
        for t, c in enumerate(counts):
            w.writerow([t + 1, int(c)])
    return EXIT_OK


def _fit_flags(p):
    p.add_argument("--input", required=True)
    p.add_argument("--out", default=".")
    p.add_argument("--anneal-iters", type=int, default=500)
    p.add_argument("--max-iters", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--no-anneal", action="store_true")


def build_parser():
    ap = _Parser(prog="badge", description="Dynamic sparse graphical model learning.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("simulate", help="generate a synthetic data set")
    p.add_argument("--kind", choices=["time-varying", "var1"], default="time-varying")
    p.add_argument("--p", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--ne", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="fit a time-varying model")
    _fit_flags(p)
    p.add_argument("--no-standardize", action="store_true")
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("fit-spectral", help="fit a frequency-varying model to a series")
    _fit_flags(p)
    p.add_argument("--sample-rate", type=float, default=1.0)
    p.add_argument("--band", action="append", help="lo:hi, repeatable")
    p.set_defaults(func=cmd_fit_spectral)

    p = sub.add_parser("eval", help="score an estimated graph against the truth")
    p.add_argument("--est", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--macro", action="store_true")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("export", help="dump model contents as CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--what", choices=["edges", "elbo", "edge-counts"], required=True)
    p.add_argument("--threshold", type=float, default=None)
    p.set_defaults(func=cmd_export)
    return ap


def run_cli(argv=None):
    """Run one subcommand and return its exit code."""
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help
        return EXIT_OK if exc.code in (0, None) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (NumericalFailure, FloatingPointError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (OSError, ParseError, json.JSONDecodeError, KeyError) as exc:
        print(f"input/output error: {exc}", file=sys.stderr)
        return EXIT_IO
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


def main():
    sys.exit(run_cli())
