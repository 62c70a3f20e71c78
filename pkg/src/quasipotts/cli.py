"""Batch command line: ``quasipotts {generate,fit,score,cluster}``.

Runs are driven by a YAML config; command-line flags override config fields.
The number of worker processes comes from ``QUASIPOTTS_WORKERS`` only.
"""
from __future__ import annotations

import argparse
import copy
import logging
import sys
from pathlib import Path

import numpy as np
import yaml

from . import io, networks, summary
from .engine import McmcConfig, resolve_workers, run_all
from .model import PottsSpec, gibbs_generate
from .prior import Hyperparams, default_hyperparams

log = logging.getLogger("quasipotts")

DEFAULTS = {
    "data": None,
    "truth": None,
    "ingest": {"header": False, "missing_code": None, "origin_shift": 0, "columns": None,
               "filters": [], "seed": 0},
    "model": {"m": 2, "mean_field": "ising-identity", "coupling": "ising-identity"},
    "hyperparams": {"u": 2.0, "c0": 1.0, "c1": 1.0, "sigma": 0.1, "grad_cap": 100.0,
                    "fix_diagonal_active": True, "gamma": None, "rho": None, "q": None},
    "mcmc": {"sampler": "pg", "iterations": 5000, "burn_in": 1000, "thin": 1,
             "master_seed": 0, "init": "lasso", "lambda": None, "random_scan": False},
    "output": {"directory": "out", "ci_level": 0.95, "groups": None, "save_samples": False},
    "generate": {"topology": "blocks", "p": 20, "n_edges": 10, "block_size": 2,
                 "max_degree": None, "diag": -2.0, "offdiag": 4.0, "theta_file": None,
                 "n": 600, "burn_in": 1000, "thin": 10, "seed": 0, "topology_seed": 0},
}


class CliError(RuntimeError):
    pass


def _merge(base, upd):
    out = copy.deepcopy(base)
    for k, v in (upd or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_config(path, overrides: dict | None = None) -> dict:
    cfg = {}
    if path is not None:
        with open(path) as fh:
            cfg = yaml.safe_load(fh) or {}
        base = Path(path).parent
        for key in ("data", "truth"):
            if cfg.get(key):
                cfg[key] = str((base / cfg[key]).resolve())
        out = cfg.get("output", {})
        if out.get("directory"):
            out["directory"] = str((base / out["directory"]).resolve())
        groups = out.get("groups")
        if isinstance(groups, str):
            out["groups"] = str((base / groups).resolve())
        gen = cfg.get("generate", {})
        if gen.get("theta_file"):
            gen["theta_file"] = str((base / gen["theta_file"]).resolve())
    return _merge(_merge(DEFAULTS, cfg), overrides or {})


def run_hash(cfg) -> str:
    """Config hash over everything that can change results (not the output path)."""
    cfg = copy.deepcopy(cfg)
    cfg.get("output", {}).pop("directory", None)
    return io.config_hash(cfg)


def build_spec(cfg, p: int) -> PottsSpec:
    mb = cfg["model"]
    return PottsSpec(p, int(mb["m"]), mb["mean_field"], mb["coupling"])


def build_hyperparams(cfg, n: int, p: int) -> Hyperparams:
    hb = cfg["hyperparams"]
    overrides = {k: float(hb[k]) for k in ("gamma", "rho", "q") if hb.get(k) is not None}
    return default_hyperparams(
        n, p, u=float(hb["u"]), c0=float(hb["c0"]), c1=float(hb["c1"]),
        sigma=float(hb["sigma"]), grad_cap=float(hb["grad_cap"]),
        fix_diagonal_active=bool(hb["fix_diagonal_active"]), **overrides,
    )


def build_mcmc(cfg) -> McmcConfig:
    mb = cfg["mcmc"]
    return McmcConfig(
        sampler=mb["sampler"], iterations=int(mb["iterations"]), burn_in=int(mb["burn_in"]),
        thin=int(mb["thin"]), master_seed=int(mb["master_seed"]), init=mb["init"],
        lasso_lambda=None if mb.get("lambda") is None else float(mb["lambda"]),
        random_scan=bool(mb.get("random_scan", False)),
    )


def load_groups(spec_groups, columns):
    """Group labels -> node indices, from an inline mapping or a CSV file.

    The file holds ``column,group`` lines; members may be column names or
    integer node indices.
    """
    if spec_groups is None:
        return None
    if isinstance(spec_groups, str):
        mapping: dict = {}
        rows, _ = io._read_rows(spec_groups)
        for row in rows:
            if len(row) < 2:
                continue
            mapping.setdefault(row[1], []).append(row[0])
    else:
        mapping = dict(spec_groups)
    lookup = {c: i for i, c in enumerate(columns)}
    out = {}
    for label, members in mapping.items():
        idx = []
        for mbr in members:
            key = str(mbr)
            if key in lookup:
                idx.append(lookup[key])
            else:
                try:
                    idx.append(int(mbr))
                except ValueError:
                    raise CliError(f"unknown group member {mbr!r}") from None
        out[str(label)] = idx
    return out


def write_cluster_outputs(outdir: Path, edge_prob, groups: dict, h: str, seed):
    labels = list(groups)
    phi = summary.phi_matrix(edge_prob, [groups[k] for k in labels])
    dist = summary.pseudo_distance(phi)
    tree = summary.ward_cluster(dist, labels)
    io.write_matrix(outdir / "phi.csv", phi, "phi", h, seed)
    io.write_matrix(outdir / "distance.csv", dist, "distance", h, seed)
    with open(outdir / "merges.csv", "w") as fh:
        fh.write(f"# {io.header_line('merges', h, seed)}\n")
        fh.write("# labels=" + ",".join(labels) + "\n")
        fh.write("cluster_a,cluster_b,height,size\n")
        for a, b, ht, sz in tree.merges:
            fh.write(f"{a},{b},{ht!r},{sz}\n")
    return phi, tree


# -- subcommands ---------------------------------------------------------------


def cmd_generate(cfg) -> int:
    g = cfg["generate"]
    outdir = Path(cfg["output"]["directory"])
    outdir.mkdir(parents=True, exist_ok=True)
    if g["topology"] == "file":
        theta = io.read_matrix(g["theta_file"])
    elif g["topology"] == "blocks":
        theta = networks.diagonal_blocks(int(g["p"]), int(g["n_edges"]), int(g["block_size"]),
                                         float(g["diag"]), float(g["offdiag"]))
    elif g["topology"] == "random":
        theta = networks.random_edges(int(g["p"]), int(g["n_edges"]), float(g["diag"]),
                                      float(g["offdiag"]), seed=int(g["topology_seed"]),
                                      max_degree=g.get("max_degree"))
    else:
        raise CliError(f"unknown topology {g['topology']!r}")
    spec = build_spec(cfg, theta.shape[0])
    Z = gibbs_generate(theta, spec, int(g["n"]), int(g["burn_in"]), int(g["thin"]), seed=int(g["seed"]))
    h = run_hash(cfg)
    io.write_matrix(outdir / "data.csv", Z, "data", h, g["seed"], integer=True)
    io.write_matrix(outdir / "theta_star.csv", theta, "theta_star", h, g["seed"])
    io.write_matrix(outdir / "delta_star.csv", networks.support(theta), "delta_star", h, g["seed"],
                    integer=True)
    log.info("wrote %d x %d data to %s", *Z.shape, outdir)
    return 0


def cmd_fit(cfg) -> int:
    if not cfg.get("data"):
        raise CliError("fit needs a data path")
    outdir = Path(cfg["output"]["directory"])
    outdir.mkdir(parents=True, exist_ok=True)
    ing = cfg["ingest"]
    schema = {k: ing.get(k) for k in ("delimiter", "header", "columns", "filters",
                                       "missing_code", "origin_shift") if ing.get(k) is not None}
    Z, report = io.ingest(cfg["data"], schema, seed=ing.get("seed"), m=int(cfg["model"]["m"]))
    n, p = Z.shape
    spec = build_spec(cfg, p)
    hp = build_hyperparams(cfg, n, p)
    mcmc = build_mcmc(cfg)
    h = run_hash(cfg)
    seed = mcmc.master_seed

    def progress(event, node, info):
        if event == "finished":
            log.info("node %d done: acceptance %.3f", node, info["acceptance_rate"])

    fit = run_all(Z, hp, spec, mcmc, workers=resolve_workers(None), progress=progress)
    level = float(cfg["output"]["ci_level"])
    T, D = fit.theta_samples(), fit.delta_samples()
    summ = summary.summarize_samples(T, D, level)
    for name in ("theta_hat", "theta_tilde", "edge_prob", "ci_lo", "ci_hi"):
        io.write_matrix(outdir / f"{name}.csv", getattr(summ, name), name, h, seed)
    if cfg["output"].get("save_samples"):
        io.write_samples(outdir / "theta_samples.bin", T)
        io.write_samples(outdir / "delta_samples.bin", D)
    io.write_json(outdir / "ingest_report.json", dict(report.to_dict(), config_sha256=h, seed=seed))
    io.write_json(outdir / "run_log.json", {
        "config_sha256": h,
        "seed": seed,
        "hyperparams": hp.to_dict(),
        "mcmc": mcmc.to_dict(),
        "nodes": [{"node": nr.node, "wall_time": nr.wall_time, "constant_column": nr.constant_column,
                   "acceptance_rate": nr.diagnostics.acceptance_rate,
                   "flips_made": nr.diagnostics.flips_made,
                   "clamp_events": nr.diagnostics.clamp_events} for nr in fit.nodes],
    })
    if cfg.get("truth"):
        theta_star = io.read_matrix(cfg["truth"])
        metrics = score_metrics(summ, theta_star, T, D)
        metrics.update({"config_sha256": h, "seed": seed})
        io.write_json(outdir / "metrics.json", metrics)
    groups = load_groups(cfg["output"].get("groups"), report.columns)
    if groups:
        write_cluster_outputs(outdir, summ.edge_prob, groups, h, seed)
    return 0


def score_metrics(summ, theta_star, T=None, D=None) -> dict:
    m = summary.coverage_report(summ, theta_star)
    out = {
        "relative_error_posterior_mean": m.relative_error,
        "edge_f1": m.f1,
        "active_coverage": m.coverage,
        "inactive_zero_coverage": m.inactive_zero_coverage,
        "inactive_mean_half_width": m.inactive_mean_half_width,
        "diagonal_coverage": m.diagonal_coverage,
    }
    if T is not None and D is not None:
        err, f1 = summary.trace_metrics(T, D, theta_star)
        out["relative_error_avg_over_samples"] = float(err.mean())
        out["f1_avg_over_samples"] = float(f1.mean())
    return out


def cmd_score(args) -> int:
    est = Path(args.estimates)
    theta_star = io.read_matrix(args.truth)
    hdr = io.read_header(est / "theta_hat.csv")
    h = hdr.get("config_sha256", "")
    seed = int(hdr["seed"]) if hdr.get("seed", "").isdigit() else hdr.get("seed", "")
    lo, hi = io.read_matrix(est / "ci_lo.csv"), io.read_matrix(est / "ci_hi.csv")
    theta_hat = io.read_matrix(est / "theta_hat.csv")
    summ = summary.PosteriorSummary(theta_hat, summary.symmetrize(theta_hat),
                                    io.read_matrix(est / "edge_prob.csv"), lo, hi, lo, hi, float("nan"))
    T = D = None
    if (est / "theta_samples.bin").exists() and (est / "delta_samples.bin").exists():
        T = io.read_samples(est / "theta_samples.bin")
        D = io.read_samples(est / "delta_samples.bin").astype(np.int8)
    metrics = score_metrics(summ, theta_star, T, D)
    metrics.update({"config_sha256": h, "seed": seed})
    out = Path(args.out) if args.out else est / "metrics.json"
    io.write_json(out, metrics)
    return 0


def cmd_cluster(args) -> int:
    edge_prob = io.read_matrix(args.edge_prob)
    p = edge_prob.shape[0]
    columns = [str(i) for i in range(p)]
    if args.columns:
        columns = [c.strip() for c in Path(args.columns).read_text().split(",")]
    groups = load_groups(args.groups, columns)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    hdr = io.read_header(args.edge_prob)
    write_cluster_outputs(outdir, edge_prob, groups, hdr.get("config_sha256", ""), hdr.get("seed", ""))
    return 0


def _fit_overrides(args) -> dict:
    mc = {}
    for key, attr in (("iterations", "iterations"), ("burn_in", "burn_in"), ("thin", "thin"),
                      ("master_seed", "seed"), ("sampler", "sampler"), ("init", "init")):
        v = getattr(args, attr, None)
        if v is not None:
            mc[key] = v
    out = {}
    if mc:
        out["mcmc"] = mc
    if getattr(args, "out", None):
        out["output"] = {"directory": str(Path(args.out).resolve())}
    if getattr(args, "data", None):
        out["data"] = str(Path(args.data).resolve())
    if getattr(args, "truth", None):
        out["truth"] = str(Path(args.truth).resolve())
    return out


def make_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="quasipotts", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="simulate data from a generating matrix")
    g.add_argument("config", nargs="?")
    g.add_argument("--out")
    g.add_argument("--seed", type=int, help="Gibbs sampler seed")
    g.add_argument("--n", type=int)

    f = sub.add_parser("fit", help="run the node-parallel sampler and summarise")
    f.add_argument("config")
    f.add_argument("--data")
    f.add_argument("--truth")
    f.add_argument("--out")
    f.add_argument("--iterations", type=int)
    f.add_argument("--burn-in", dest="burn_in", type=int)
    f.add_argument("--thin", type=int)
    f.add_argument("--seed", type=int, help="master seed")
    f.add_argument("--sampler", choices=("mala", "pg"))
    f.add_argument("--init", choices=("lasso", "zero"))

    s = sub.add_parser("score", help="score saved estimates against a truth matrix")
    s.add_argument("estimates", help="fit output directory")
    s.add_argument("--truth", required=True)
    s.add_argument("--out")

    c = sub.add_parser("cluster", help="trait-level edge probabilities and Ward clustering")
    c.add_argument("--edge-prob", dest="edge_prob", required=True)
    c.add_argument("--groups", required=True, help="CSV of column,group lines")
    c.add_argument("--columns", help="file with comma-separated node column names")
    c.add_argument("--out", required=True)
    return ap


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "generate":
            ov = {}
            gen = {k: v for k, v in (("seed", args.seed), ("n", args.n)) if v is not None}
            if gen:
                ov["generate"] = gen
            if args.out:
                ov["output"] = {"directory": str(Path(args.out).resolve())}
            return cmd_generate(load_config(args.config, ov))
        if args.command == "fit":
            return cmd_fit(load_config(args.config, _fit_overrides(args)))
        if args.command == "score":
            return cmd_score(args)
        return cmd_cluster(args)
    except Exception as exc:
        mod = type(exc).__module__.rsplit(".", 1)[-1]
        print(f"quasipotts {args.command}: [{mod}] {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
