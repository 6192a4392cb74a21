"""Command-line entry point: ``palace <subcommand> [options]``.

Options can also come from a JSON file given with ``--config``; keys are the
long option names with dashes replaced by underscores. Flags given on the
command line win over the file. Every command writes ``<out>.manifest.json``
next to its main output with the resolved options, input digests and
library versions.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
from dataclasses import asdict
from importlib import metadata
from pathlib import Path

import numpy as np

from palace import __version__
from palace.certify import fit_class_stats, firing_report, sample_thresholds, write_firing_csv
from palace.cover import LandmarkConfiguration, matched_uniform_grid, uniform_grid
from palace.diagram import read_diagrams, top_persistence_filter, write_diagrams
from palace.embed import embed_batch, read_embedding_csv, write_embedding_csv
from palace.kernel import bandwidth_quantile, gram
from palace.pipeline import (
    BOUND_COLUMNS,
    NI_COLUMNS,
    SWEEP_COLUMNS,
    place_landmarks,
    run_audits,
    run_cv,
    run_selector_sweep,
    stratified_holdout,
    write_rows,
)
from palace.rips import read_clouds, rips_persistence, write_clouds
from palace.svm import DEFAULT_C_GRID
from palace.synthetic import (
    InflationConfig,
    gen_annulus_dataset,
    run_domain_inflation,
    write_inflation_csv,
)

logger = logging.getLogger("palace")


def _floats(text: str) -> list[float]:
    return [float(t) for t in str(text).split(",") if t.strip()]


def _ints(text: str) -> list[int]:
    return [int(t) for t in str(text).split(",") if t.strip()]


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _versions() -> dict:
    out = {"python": platform.python_version(), "palace": __version__}
    for pkg in ("numpy", "scipy", "scikit-learn", "numba"):
        try:
            out[pkg] = metadata.version(pkg)
        except metadata.PackageNotFoundError:
            out[pkg] = None
    return out


def write_manifest(args: argparse.Namespace, inputs: dict, extra: dict | None = None) -> Path:
    resolved = {k: v for k, v in vars(args).items() if k not in ("func", "config")}
    manifest = {
        "command": args.command,
        "options": resolved,
        "inputs": {k: {"path": str(p), "sha256": _sha256(p)} for k, p in inputs.items() if p},
        "versions": _versions(),
    }
    if extra:
        manifest.update(extra)
    path = Path(f"{args.out}.manifest.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str) + "\n")
    return path


def _labels(diagrams) -> np.ndarray:
    labels = [d.label for d in diagrams]
    if any(y is None for y in labels):
        raise SystemExit("every diagram needs a label for this command")
    return np.asarray(labels)


# -- subcommands -------------------------------------------------------------


def cmd_gen(args):
    clouds = gen_annulus_dataset(args.n_per_class, args.n_points, args.noise_sd, args.seed)
    write_clouds(clouds, args.out)
    write_manifest(args, {}, {"rng": "PCG64, SeedSequence(seed, spawn_key=(cloud_index,))"})


def cmd_persist(args):
    clouds = read_clouds(args.clouds)
    out = []
    for cloud in clouds:
        h0, h1 = rips_persistence(cloud, max_radius=args.max_radius)
        dgm = h1 if args.dim == 1 else h0
        out.append(top_persistence_filter(dgm, args.n_max) if args.n_max > 0 else dgm)
    write_diagrams(out, args.out)
    write_manifest(args, {"clouds": args.clouds})


def cmd_place(args):
    diagrams = read_diagrams(args.diagrams)
    if args.placement == "grid":
        if args.spacing:
            config = uniform_grid(args.domain, args.spacing, args.tau)
        else:
            config, _ = matched_uniform_grid(args.domain, args.K, args.tau)
    else:
        config = place_landmarks(
            diagrams, _labels(diagrams) if args.placement == "class-aware" else [0] * len(diagrams),
            args.K, args.alpha, args.tau_strategy, args.placement, tau=args.tau,
        )
    Path(args.out).write_text(config.to_json() + "\n")
    write_manifest(args, {"diagrams": args.diagrams}, {"K": config.K, "tau": config.tau})


def cmd_embed(args):
    diagrams = read_diagrams(args.diagrams)
    config = LandmarkConfiguration.from_json(Path(args.landmarks).read_text())
    write_embedding_csv(embed_batch(diagrams, config), args.out)
    write_manifest(args, {"diagrams": args.diagrams, "landmarks": args.landmarks})


def cmd_gram(args):
    X = read_embedding_csv(args.embedding)
    sigma = args.sigma if args.sigma else bandwidth_quantile(X, args.q)
    G = gram(X, sigma)
    G.save(args.out)
    write_manifest(args, {"embedding": args.embedding}, {"sigma": sigma})


def cmd_train(args):
    diagrams = read_diagrams(args.diagrams)
    res = run_cv(
        diagrams, _labels(diagrams), args.K, args.alpha, args.tau_strategy, args.placement,
        q_grid=_floats(args.q_grid) if not args.sigma_grid else None,
        sigma_grid=_floats(args.sigma_grid) if args.sigma_grid else None,
        C_grid=_floats(args.C_grid), outer_folds=args.outer_folds, seeds=_ints(args.seeds),
        inner_folds=args.inner_folds,
    )
    res.to_csv(args.out)
    print(f"accuracy {100 * res.mean:.1f} +- {100 * res.std:.1f}")
    write_manifest(args, {"diagrams": args.diagrams}, {"mean": res.mean, "std": res.std})


def cmd_select(args):
    diagrams = read_diagrams(args.diagrams)
    rows, rank = run_selector_sweep(
        diagrams, _labels(diagrams), _ints(args.K_grid), _floats(args.alpha_grid), args.q,
        args.tau_strategy, args.placement, with_cv=not args.no_cv,
        cv_kwargs={"C_grid": _floats(args.C_grid), "outer_folds": args.outer_folds,
                   "seeds": _ints(args.seeds), "inner_folds": args.inner_folds},
        tau_kwargs={"seed": args.seed},
    )
    write_rows(rows, SWEEP_COLUMNS, args.out)
    for key, rho in rank.items():
        print(f"spearman({key}, cv_acc) = {rho:.3f}")
    write_manifest(args, {"diagrams": args.diagrams}, {"spearman": rank})


def cmd_certify(args):
    diagrams = read_diagrams(args.diagrams)
    labels = _labels(diagrams)
    config = LandmarkConfiguration.from_json(Path(args.landmarks).read_text())
    X = embed_batch(diagrams, config)
    test = stratified_holdout(labels, args.test_frac, args.seed)
    stats = fit_class_stats(X[~test], labels[~test])
    rows = firing_report(stats, X[test], labels[test], args.delta, args.dataset, variant=args.variant)
    write_firing_csv(rows, args.out)
    th = sample_thresholds(stats, args.delta, args.variant)
    write_manifest(
        args, {"diagrams": args.diagrams, "landmarks": args.landmarks},
        {"m_star_pinelis": th.pinelis.tolist(), "m_star_gaussian": th.gaussian.tolist(),
         "class_counts": stats.counts.tolist()},
    )


def cmd_audit_ni(args):
    diagrams = read_diagrams(args.diagrams)
    rows, _ = run_audits(diagrams, None, args.n_pairs, args.seed)
    write_rows(rows, NI_COLUMNS, args.out)
    audited = [r for r in rows if r["auditable"]]
    frac = 100.0 * np.mean([r["passes"] for r in audited]) if audited else float("nan")
    print(f"auditable {len(audited)}/{len(rows)}, passing {frac:.1f}%")
    write_manifest(args, {"diagrams": args.diagrams})


def cmd_audit_bound(args):
    diagrams = read_diagrams(args.diagrams)
    config = LandmarkConfiguration.from_json(Path(args.landmarks).read_text())
    _, summary = run_audits(diagrams, config, args.n_pairs, args.seed)
    write_rows([summary], BOUND_COLUMNS, args.out)
    write_manifest(args, {"diagrams": args.diagrams, "landmarks": args.landmarks})


def cmd_bench_inflate(args):
    cfg = InflationConfig(
        n_per_class=args.n_per_class, n_points=args.n_points, noise_sd=args.noise_sd, seed=args.seed,
        n_max=args.n_max, K=args.K, alpha=args.alpha, levels=tuple(_floats(args.levels)),
        outer_folds=args.outer_folds, inner_folds=args.inner_folds, q=args.q,
        C_grid=tuple(_floats(args.C_grid)), grid_radius=args.grid_radius, placement=args.placement,
    )
    diagrams = labels = None
    if args.diagrams:
        diagrams = read_diagrams(args.diagrams)
        labels = _labels(diagrams)
    rows = run_domain_inflation(cfg, diagrams, labels)
    write_inflation_csv(rows, args.out)
    for r in rows:
        print(f"ell={r['ell']:g} L={r['L']:.2f} uniform={r['uniform_mean']:.1f}+-{r['uniform_std']:.1f} "
              f"nonuniform={r['fps_mean']:.1f}+-{r['fps_std']:.1f} delta={r['delta']:+.1f}")
    write_manifest(args, {"diagrams": args.diagrams}, {"inflation_config": asdict(cfg)})


# -- parser ------------------------------------------------------------------


def _add_placement(p, default="class-aware"):
    p.add_argument("--K", type=int, default=11)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--tau-strategy", default="median-half-persistence")
    p.add_argument("--placement", default=default)


def _add_cv(p):
    p.add_argument("--C-grid", default=",".join(str(c) for c in DEFAULT_C_GRID))
    p.add_argument("--outer-folds", type=int, default=10)
    p.add_argument("--inner-folds", type=int, default=3)
    p.add_argument("--seeds", default="42")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="palace", description=__doc__.splitlines()[0])
    parser.add_argument("--config", help="JSON file with option defaults")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate the 4-class annulus point clouds")
    p.add_argument("--n-per-class", type=int, default=100)
    p.add_argument("--n-points", type=int, default=60)
    p.add_argument("--noise-sd", type=float, default=0.08)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("persist", help="Rips persistence diagrams of point clouds")
    p.add_argument("--clouds", required=True)
    p.add_argument("--dim", type=int, choices=(0, 1), default=1)
    p.add_argument("--n-max", type=int, default=30, help="top-N filter, 0 keeps everything")
    p.add_argument("--max-radius", type=float, default=float("inf"))
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_persist)

    p = sub.add_parser("place", help="landmark configuration from training diagrams")
    p.add_argument("--diagrams", required=True)
    _add_placement(p)
    p.add_argument("--tau", type=float, default=None, help="fixed tau instead of the strategy")
    p.add_argument("--domain", type=float, default=None, help="grid placement: extent L")
    p.add_argument("--spacing", type=float, default=None, help="grid placement: spacing R (else matched to K)")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_place)

    p = sub.add_parser("embed", help="summation embedding of diagrams")
    p.add_argument("--diagrams", required=True)
    p.add_argument("--landmarks", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_embed)

    p = sub.add_parser("gram", help="landmark-kernel gram of an embedding matrix")
    p.add_argument("--embedding", required=True)
    p.add_argument("--sigma", type=float, default=None)
    p.add_argument("--q", type=float, default=0.25)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gram)

    p = sub.add_parser("train", help="nested stratified CV with fold-local placement")
    p.add_argument("--diagrams", required=True)
    _add_placement(p)
    p.add_argument("--q-grid", default="0.25")
    p.add_argument("--sigma-grid", default=None)
    _add_cv(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("select", help="selector sweep over (K, alpha) with Spearman against CV accuracy")
    p.add_argument("--diagrams", required=True)
    p.add_argument("--K-grid", default="5,11,21")
    p.add_argument("--alpha-grid", default="1.0")
    p.add_argument("--q", type=float, default=0.25)
    p.add_argument("--tau-strategy", default="median-half-persistence")
    p.add_argument("--placement", default="class-aware")
    p.add_argument("--seed", type=int, default=0, help="seed for the tau-hat pair sample")
    p.add_argument("--no-cv", action="store_true")
    _add_cv(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("certify", help="certificate firing report on a stratified split")
    p.add_argument("--diagrams", required=True)
    p.add_argument("--landmarks", required=True)
    p.add_argument("--delta", type=float, default=0.05)
    p.add_argument("--variant", choices=("chi2", "univariate"), default="chi2")
    p.add_argument("--test-frac", type=float, default=0.3)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--dataset", default="synthetic")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("audit-ni", help="non-interference audit on sampled diagram pairs")
    p.add_argument("--diagrams", required=True)
    p.add_argument("--n-pairs", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_audit_ni)

    p = sub.add_parser("audit-bound", help="empirical certificate-bound audit")
    p.add_argument("--diagrams", required=True)
    p.add_argument("--landmarks", required=True)
    p.add_argument("--n-pairs", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_audit_bound)

    p = sub.add_parser("bench-inflate", help="domain-inflation experiment, uniform grid vs FPS")
    p.add_argument("--diagrams", default=None, help="precomputed labelled H1 diagrams (else generated)")
    p.add_argument("--n-per-class", type=int, default=100)
    p.add_argument("--n-points", type=int, default=60)
    p.add_argument("--noise-sd", type=float, default=0.08)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--n-max", type=int, default=30)
    p.add_argument("--K", type=int, default=11)
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--levels", default="1,2,3,4,5,8")
    p.add_argument("--q", type=float, default=0.25)
    p.add_argument("--grid-radius", choices=("grid", "nn"), default="grid")
    p.add_argument("--placement", choices=("fps", "class-aware"), default="fps")
    _add_cv(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench_inflate)
    return parser


def _config_defaults(argv) -> dict:
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config")
    known, _ = pre.parse_known_args(argv)
    if not known.config:
        return {}
    with open(known.config) as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise SystemExit(f"{known.config}: config must be a JSON object")
    # lists become the comma form the grid options expect
    return {k: ",".join(str(x) for x in v) if isinstance(v, list) else v for k, v in data.items()}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    defaults = _config_defaults(argv)
    if defaults:
        for action in parser._subparsers._group_actions:
            for sp in action.choices.values():
                known = {a.dest for a in sp._actions}
                sp.set_defaults(**{k: v for k, v in defaults.items() if k in known})
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (ValueError, OSError) as exc:
        print(f"palace {args.command}: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
