"""Command line front end.

One binary with subcommands (simulate, likelihood, mcmc, analyze,
validate).  Option precedence is flag > config file > built-in default.
Every file-producing run writes a JSON manifest beside its output with
the input digests, the resolved options, the seed, and a configuration
hash; the hash covers no timestamps, so identical runs produce an
identical manifest.  Exit codes: 0 success, 1 usage error, 2 runtime
failure.
"""

import argparse
import hashlib
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import __version__, analyze, mcmc, treeio
from .epf import IntegrationError, RateParams, SolverOptions, expected_frequencies
from .kernels import BACKEND
from .likelihood import ModelParams, pattern_loglik
from .phylo import CladeConstraint
from .simulate import SimConfig, gillespie_simulate, replicate_seeds
from .traitdata import (MatrixFormatError, pattern_text, read_trait_matrix,
                        save_trait_matrix)


class _Parser(argparse.ArgumentParser):
    """argparse with usage failures mapped to exit code 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(1, "%s: error: %s\n" % (self.prog, message))


def _version_text():
    import numpy
    import scipy
    bits = ["sdlt %s" % __version__,
            "python %d.%d.%d" % sys.version_info[:3],
            "numpy %s" % numpy.__version__,
            "scipy %s" % scipy.__version__,
            "kernel backend %s" % BACKEND]
    if BACKEND == "numba":
        import numba
        bits.append("numba %s" % numba.__version__)
    return ", ".join(bits)


def _thread_count(requested):
    if requested is not None:
        return max(1, int(requested))
    env = os.environ.get("SDLT_THREADS", "").strip()
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


# ---------------------------------------------------------------------------
# manifests


def _sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(65536), b""):
            h.update(block)
    return h.hexdigest()


def _write_manifest(path, subcommand, options, inputs, seed):
    """Reproducibility record: digests + resolved options + config hash."""
    digests = {name: {"path": str(p), "sha256": _sha256_file(p)}
               for name, p in inputs.items()}
    core = {"subcommand": subcommand,
            "options": options,
            "inputs": {k: v["sha256"] for k, v in digests.items()},
            "seed": seed}
    blob = json.dumps(core, sort_keys=True, separators=(",", ":"))
    manifest = {"tool": "sdlt %s" % __version__,
                "backend": BACKEND,
                "subcommand": subcommand,
                "options": options,
                "inputs": digests,
                "seed": seed,
                "config_hash": hashlib.sha256(blob.encode()).hexdigest()}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


# ---------------------------------------------------------------------------
# small input formats


def read_constraints(path):
    """Calibration file: one constraint per line.

    Fields (whitespace separated): kind, leaf list (comma separated, or
    ``-`` for the root), lower bound, upper bound (``-`` for an open
    side), then optional flags (``nomono`` drops the monophyly
    requirement of a clade).  ``#`` starts a comment.
    """
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for ln, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            if len(tokens) < 4:
                raise ValueError("%s:%d: want kind, leaves, lower, upper"
                                 % (path, ln))
            kind = tokens[0]
            leaves = () if tokens[1] == "-" else tuple(tokens[1].split(","))
            bounds = []
            for tok in tokens[2:4]:
                bounds.append(None if tok == "-" else float(tok))
            mono = True
            for flag in tokens[4:]:
                if flag == "nomono":
                    mono = False
                else:
                    raise ValueError("%s:%d: unknown flag %r"
                                     % (path, ln, flag))
            try:
                out.append(CladeConstraint(kind, bounds[0], bounds[1],
                                           leaves, mono))
            except ValueError as exc:
                raise ValueError("%s:%d: %s" % (path, ln, exc)) from None
    return tuple(out)


def _parse_obs(text):
    """``0.9`` for a shared probability or ``A=0.9,B=0.8`` per taxon."""
    if "=" not in text:
        return float(text)
    out = {}
    for item in text.split(","):
        name, _, val = item.partition("=")
        if not name or not val:
            raise ValueError("bad observation-probability item %r" % item)
        out[name] = float(val)
    return out


def _parse_severities(text):
    vals = [float(v) for v in text.split(",")]
    return vals[0] if len(vals) == 1 else vals


def _obs_array(obs, taxa):
    """Per-taxon observation probabilities in data order, or None."""
    if obs is None:
        return None
    if isinstance(obs, dict):
        missing = [t for t in taxa if t not in obs]
        if missing:
            raise ValueError("no observation probability for %s"
                             % ", ".join(missing))
        return np.array([float(obs[t]) for t in taxa])
    return np.full(len(taxa), float(obs))


def _open_out(path):
    if path is None or path == "-":
        return sys.stdout, False
    return open(path, "w", encoding="utf-8"), True


def _emit(path, columns, rows):
    fh, close = _open_out(path)
    try:
        fh.write("\t".join(str(c) for c in columns) + "\n")
        for row in rows:
            fh.write("\t".join(
                analyze.SCALAR_FMT % v if isinstance(v, float) else str(v)
                for v in row) + "\n")
    finally:
        if close:
            fh.close()


# ---------------------------------------------------------------------------
# simulate


def _with_suffix(path, tag):
    stem, dot, ext = path.rpartition(".")
    if not dot or "/" in ext:
        return path + tag
    return stem + tag + "." + ext


def _cmd_simulate(args):
    tree = treeio.read_tree(args.tree)
    params = RateParams(args.birth, args.death, args.transfer)
    sev = _parse_severities(args.severity) if args.severity else ()
    if tree.catastrophes and args.severity is None:
        raise ValueError("the tree has catastrophes; pass --severity")
    obs = _parse_obs(args.obs) if args.obs else None

    n = args.replicates
    threads = _thread_count(args.threads) if n > 1 else 1
    seeds = replicate_seeds(args.seed, n)
    cfgs = [SimConfig(tree, params, severities=sev, obs_probs=obs,
                      seed=s) for s in seeds]
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(gillespie_simulate, cfgs))
    else:
        results = [gillespie_simulate(c) for c in cfgs]
    paths = [args.out] if n == 1 else \
        [_with_suffix(args.out, ".r%03d" % k) for k in range(n)]

    for path, (tm, _) in zip(paths, results):
        save_trait_matrix(tm, path)
    if args.history:
        with open(args.history, "w", encoding="utf-8") as fh:
            fh.write("time\tkind\tbranch\ttrait\n")
            events = []
            for tm, histories in results[:1]:
                for h in histories:
                    events.extend((t, kind, br, h.trait)
                                  for t, kind, br, _src in h.events)
            for t, kind, br, trait in sorted(events):
                fh.write("%s\t%s\t%d\t%d\n"
                         % (analyze.SCALAR_FMT % t, kind, br, trait))

    options = {"birth": args.birth, "death": args.death,
               "transfer": args.transfer, "severity": args.severity,
               "obs": args.obs, "replicates": n, "out": args.out,
               "history": args.history}
    _write_manifest(args.out + ".manifest.json", "simulate", options,
                    {"tree": args.tree}, args.seed)
    print("wrote %d matrix file(s); %d traits in the first"
          % (n, results[0][0].n_traits), file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------
# likelihood


def _cmd_likelihood(args):
    tree = treeio.read_tree(args.tree)
    tm = read_trait_matrix(args.matrix)
    counts = tm.pattern_counts()
    obs = _parse_obs(args.obs) if args.obs else None
    model = ModelParams(death=args.death, transfer=args.transfer,
                        severity=args.severity,
                        obs_probs=_obs_array(obs, tm.taxa))
    opts = SolverOptions(rtol=args.rtol, atol=args.atol)
    ll, epf = pattern_loglik(counts, tm.taxa, tree, model, options=opts)

    patterns = sorted(counts)
    means = epf.means(patterns, taxa=tm.taxa)
    rows = [[pattern_text(p), counts[p], float(args.birth * m)]
            for p, m in zip(patterns, means)]
    poiss = -args.birth * epf.registered_total
    for p, m in zip(patterns, means):
        mu = args.birth * float(m)
        npat = counts[p]
        poiss += (-math.inf if mu <= 0.0 and npat > 0 else
                  0.0 if mu <= 0.0 else
                  npat * math.log(mu) - math.lgamma(npat + 1.0))
    fh, close = _open_out(args.out)
    try:
        fh.write("pattern\tcount\tmean\n")
        for pat, cnt, mean in rows:
            fh.write("%s\t%d\t%s\n" % (pat, cnt, analyze.SCALAR_FMT % mean))
        fh.write("# registered_total\t%s\n"
                 % (analyze.SCALAR_FMT % (args.birth * epf.registered_total)))
        fh.write("# log_likelihood_multinomial\t%s\n"
                 % (analyze.SCALAR_FMT % ll))
        fh.write("# log_likelihood_poisson\t%s\n" % (analyze.SCALAR_FMT % poiss))
    finally:
        if close:
            fh.close()
    if args.out and args.out != "-":
        _write_manifest(args.out + ".manifest.json", "likelihood",
                        {"birth": args.birth, "death": args.death,
                         "transfer": args.transfer,
                         "severity": args.severity, "obs": args.obs,
                         "rtol": args.rtol, "atol": args.atol,
                         "out": args.out},
                        {"tree": args.tree, "matrix": args.matrix}, None)
    return 0


# ---------------------------------------------------------------------------
# mcmc


_CONFIG_KEYS = {"iterations": int, "burn_in": int, "thin": int, "seed": int,
                "mode": str, "scale_factor": float,
                "severity_window": float, "obs_window": float,
                "prior_only": None, "rtol": float, "atol": float}


def _parse_bool(text):
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError("not a boolean: %r" % text)


def read_chain_config(path):
    """Key-value chain settings (``key = value``; ``#`` comments).

    Move probabilities use ``move.<kernel>`` keys and override single
    entries of the default table (0 disables a kernel); unknown keys
    are errors.
    """
    out = {}
    moves = {}
    with open(path, "r", encoding="utf-8") as fh:
        for ln, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, eq, val = line.partition("=")
            if not eq:
                raise ValueError("%s:%d: want key = value" % (path, ln))
            key = key.strip().replace("-", "_")
            val = val.strip()
            if key.startswith("move."):
                moves[key[5:]] = float(val)
                continue
            if key not in _CONFIG_KEYS:
                raise ValueError("%s:%d: unknown key %r (valid: %s, move.*)"
                                 % (path, ln, key,
                                    ", ".join(sorted(_CONFIG_KEYS))))
            conv = _CONFIG_KEYS[key]
            if conv is None:
                out[key] = _parse_bool(val)
            elif key == "mode":
                out[key] = val.lower()
            else:
                out[key] = conv(val)
    if moves:
        unknown = sorted(set(moves) - set(mcmc.DEFAULT_MOVE_PROBS))
        if unknown:
            raise ValueError("%s: unknown kernel(s) %s"
                             % (path, ", ".join(unknown)))
        out["move_probs"] = {**mcmc.DEFAULT_MOVE_PROBS, **moves}
    return out


def _cmd_mcmc(args):
    tm = read_trait_matrix(args.matrix)
    constraints = read_constraints(args.constraints)

    settings = {}
    if args.config:
        settings.update(read_chain_config(args.config))
    solver = {}
    for key in ("rtol", "atol"):
        if key in settings:
            solver[key] = settings.pop(key)
    for key in ("iterations", "burn_in", "thin", "seed", "mode"):
        val = getattr(args, key)
        if val is not None:
            settings[key] = val
    if args.prior_only:
        settings["prior_only"] = True
    if solver:
        settings["solver"] = SolverOptions(
            rtol=solver.get("rtol", 1e-6), atol=solver.get("atol", 1e-8))
    cfg = mcmc.KernelConfig(**settings)

    counts = tm.pattern_counts()
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
    tree, model = mcmc.initial_state(counts, tm.taxa, constraints, cfg,
                                     rng=rng)

    total = cfg.iterations
    marks = {max(1, (total * k) // 10) for k in range(1, 11)}

    def progress(it, state):
        if it in marks:
            print("  %3d%%  log posterior %.3f  cats %d"
                  % (100 * it // total, state.parts.log_posterior,
                     len(state.tree.catastrophes)), file=sys.stderr)

    result = mcmc.run_chain(counts, tm.taxa, tree, model, cfg,
                            callback=progress if not args.quiet else None)

    log = analyze.SampleLog.from_chain(result)
    log.write(args.out + ".tsv", args.out + ".trees")
    ev = result.evaluator
    rows = [[k, p, a, (a / p if p else 0.0)]
            for k, (p, a) in sorted(result.accept.items())]
    rows += [["eval_full", ev.n_full, ev.n_full, 1.0],
             ["eval_resumed", ev.n_resumed, ev.n_resumed, 1.0],
             ["eval_reused", ev.n_reused, ev.n_reused, 1.0],
             ["eval_solver_failures", ev.n_solver_failures,
              ev.n_solver_failures, 1.0]]
    _emit(args.out + ".accept.tsv",
          ["kernel", "proposed", "accepted", "rate"], rows)

    options = {"config": args.config, "iterations": cfg.iterations,
               "burn_in": cfg.burn_in, "thin": cfg.thin, "mode": cfg.mode,
               "prior_only": cfg.prior_only, "out": args.out}
    inputs = {"matrix": args.matrix, "constraints": args.constraints}
    if args.config:
        inputs["config"] = args.config
    _write_manifest(args.out + ".manifest.json", "mcmc", options, inputs,
                    cfg.seed)
    print("kept %d samples -> %s.tsv / %s.trees"
          % (log.n_samples, args.out, args.out), file=sys.stderr)
    return 0


# ---------------------------------------------------------------------------
# analyze subcommands


def _cmd_analyze_ess(args):
    columns, rows = analyze.read_scalar_table(args.samples)
    names = args.columns.split(",") if args.columns else None
    if names:
        missing = [n for n in names if n not in columns]
        if missing:
            raise ValueError("no column(s) %s" % ", ".join(missing))
    hdr, out = analyze.trace_summary(columns, rows, names)
    _emit(args.out, hdr, out)
    return 0


def _cmd_analyze_consensus(args):
    trees = treeio.read_trees(args.trees)
    if not trees:
        raise ValueError("no trees in %r" % args.trees)
    root = analyze.consensus_tree(trees, threshold=args.threshold)
    fh, close = _open_out(args.out)
    try:
        fh.write(analyze.render_consensus(root) + "\n")
    finally:
        if close:
            fh.close()
    return 0


def _cmd_analyze_bf(args):
    leaves = tuple(args.leaves.split(",")) if args.leaves else ()
    constraint = CladeConstraint(args.kind, leaves=leaves)
    post = analyze.constraint_times(
        treeio.read_trees(args.posterior + ".trees"), constraint)
    prior = analyze.constraint_times(
        treeio.read_trees(args.prior + ".trees"), constraint)
    rep = analyze.savage_dickey(post, prior, args.value, window=args.window)
    _emit(args.out,
          ["kind", "leaves", "value", "window", "prior_fraction",
           "posterior_fraction", "log_bf", "lower_bound"],
          [[args.kind, args.leaves or "-", float(args.value),
            float(args.window), rep.prior_fraction, rep.posterior_fraction,
            rep.log_bf, int(rep.lower_bound)]])
    return 0


def _cmd_analyze_predict(args):
    log = analyze.SampleLog.read(args.samples + ".tsv",
                                 args.samples + ".trees")
    tm = read_trait_matrix(args.test)
    opts = SolverOptions(rtol=args.rtol, atol=args.atol)
    score = analyze.predictive_score(log.states(), tm.pattern_counts(),
                                     tm.taxa, options=opts)
    _emit(args.out,
          ["score", "se", "n_samples", "ess_weights"],
          [[score.score, score.se, score.n_samples, score.ess_weights]])
    return 0


def _cmd_analyze_validate(args):
    tree = treeio.read_tree(args.tree)
    params = RateParams(args.birth, args.death, args.transfer)
    sev = _parse_severities(args.severity) if args.severity else ()
    obs = _parse_obs(args.obs) if args.obs else None
    seeds = replicate_seeds(args.seed, args.replicates)
    cfgs = [SimConfig(tree, params, severities=sev, obs_probs=obs, seed=s)
            for s in seeds]
    threads = _thread_count(args.threads)
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(gillespie_simulate, cfgs))
    else:
        results = [gillespie_simulate(c) for c in cfgs]
    replicates = [tm.pattern_counts() for tm, _ in results]

    kappa = None
    if tree.catastrophes:
        if isinstance(sev, list):
            raise ValueError("the exact check uses one shared severity")
        kappa = float(sev) if sev != () else None
        if kappa is None:
            raise ValueError("the tree has catastrophes; pass --severity")
    xi = _obs_array(obs, tree.leaf_names) if obs is not None else None
    epf = expected_frequencies(tree, params, kappa=kappa, xi=xi)
    report = analyze.validate_distribution(replicates, epf,
                                           taxa=tree.leaf_names,
                                           alpha=args.alpha)
    rows = [[pattern_text(c.pattern), c.mean, c.stat, c.critical,
             "pass" if c.ok else "FAIL"] for c in report.checks]
    _emit(args.out, ["pattern", "mean", "ks_stat", "critical", "status"],
          rows)
    print("%s: %d patterns over %d replicates, familywise alpha %g"
          % ("pass" if report.passed else "FAIL", len(report.checks),
             report.n_replicates, args.alpha), file=sys.stderr)
    return 0 if report.passed else 2


# ---------------------------------------------------------------------------
# bundled end-to-end check


def _data_path(name):
    import importlib.resources as res
    return res.files("sdlt").joinpath("data", name)


def _cmd_validate(args):
    import tempfile

    t_all = time.perf_counter()

    def stage(label, t0):
        print("ok: %s (%.1fs)" % (label, time.perf_counter() - t0))

    t0 = time.perf_counter()
    tree = treeio.parse_tree(_data_path("demo.tree").read_text(),
                             constraints=read_constraints(
                                 str(_data_path("demo.constraints"))))
    with tempfile.TemporaryDirectory() as tmp:
        matrix_path = os.path.join(tmp, "demo.tsv")
        with open(matrix_path, "w", encoding="utf-8") as fh:
            fh.write(_data_path("demo.tsv").read_text())
        tm = read_trait_matrix(matrix_path)
        stage("loaded bundled data (%d taxa, %d traits, %d catastrophes)"
              % (tm.n_taxa, tm.n_traits, len(tree.catastrophes)), t0)

        t0 = time.perf_counter()
        model = ModelParams(death=2e-3, transfer=5e-4, severity=0.5)
        ll, _ = pattern_loglik(tm.pattern_counts(), tm.taxa, tree, model)
        if not math.isfinite(ll):
            raise RuntimeError("likelihood is not finite on the demo data")
        stage("likelihood evaluation (log likelihood %.3f)" % ll, t0)

        t0 = time.perf_counter()
        params = RateParams(0.2, 2e-3, 5e-4)
        seeds = replicate_seeds(args.seed, 60)
        reps = [gillespie_simulate(SimConfig(tree, params, severities=0.5,
                                             seed=s))[0].pattern_counts()
                for s in seeds]
        epf = expected_frequencies(tree, params, kappa=0.5)
        report = analyze.validate_distribution(reps, epf,
                                               taxa=tree.leaf_names,
                                               alpha=0.001)
        if not report.passed:
            worst = report.worst
            raise RuntimeError(
                "simulator drifted from the exact law (pattern %r: "
                "stat %.3f > %.3f)" % (worst.pattern, worst.stat,
                                       worst.critical))
        stage("simulator matches the exact pattern law (60 replicates)", t0)

        t0 = time.perf_counter()
        cfg = mcmc.KernelConfig(iterations=800, burn_in=200, thin=5,
                                seed=args.seed,
                                solver=SolverOptions(rtol=1e-5, atol=1e-7))
        constraints = read_constraints(str(_data_path("demo.constraints")))
        counts = tm.pattern_counts()
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed))
        t_init, m_init = mcmc.initial_state(counts, tm.taxa, constraints,
                                            cfg, rng=rng)
        result = mcmc.run_chain(counts, tm.taxa, t_init, m_init, cfg)
        log = analyze.SampleLog.from_chain(result)
        if log.n_samples < 100:
            raise RuntimeError("chain kept too few samples")
        stage("mcmc chain (%d kept samples, %d solver failures)"
              % (log.n_samples, result.evaluator.n_solver_failures), t0)

        t0 = time.perf_counter()
        e = analyze.ess(log.column("log_posterior"))
        root = analyze.consensus_tree(log.trees)
        line = analyze.render_consensus(root)
        if not line.endswith(";"):
            raise RuntimeError("consensus rendering failed")
        stage("diagnostics (log-posterior ESS %.0f, consensus over %d trees)"
              % (e, log.n_samples), t0)

    print("all stages passed (%.1fs total)" % (time.perf_counter() - t_all))
    return 0


# ---------------------------------------------------------------------------
# wiring


def _add_rate_flags(p, birth_default=None):
    p.add_argument("--birth", type=float, default=birth_default,
                   required=birth_default is None,
                   help="trait birth rate per lineage")
    p.add_argument("--death", type=float, required=True,
                   help="per-copy death rate")
    p.add_argument("--transfer", type=float, default=0.0,
                   help="per-copy transfer rate (default 0)")
    p.add_argument("--severity", default=None,
                   help="catastrophe severity, one value or a comma list "
                        "aligned with the tree's catastrophes")
    p.add_argument("--obs", default=None,
                   help="observation probability: one value or "
                        "name=value pairs")


def build_parser():
    top = _Parser(prog="sdlt",
                  description="Stochastic Dollo with lateral transfer: "
                              "simulation, exact likelihoods, and Bayesian "
                              "inference on dated trees.")
    top.add_argument("--version", action="version", version=_version_text())
    sub = top.add_subparsers(dest="subcommand", required=True,
                             parser_class=_Parser)

    p = sub.add_parser("simulate", help="draw trait matrices on a dated tree")
    p.add_argument("tree", help="tree file")
    _add_rate_flags(p)
    p.add_argument("--replicates", type=int, default=1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=None,
                   help="worker processes for replicate runs "
                        "(default: SDLT_THREADS or all cores)")
    p.add_argument("--out", required=True, help="output matrix path; "
                   "replicate runs insert .rNNN before the extension")
    p.add_argument("--history", default=None,
                   help="write the first replicate's event log here")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("likelihood",
                       help="exact pattern means and log likelihood")
    p.add_argument("tree")
    p.add_argument("matrix")
    _add_rate_flags(p, birth_default=1.0)
    p.add_argument("--rtol", type=float, default=1e-8)
    p.add_argument("--atol", type=float, default=1e-10)
    p.add_argument("--out", default=None, help="output path (default stdout)")
    p.set_defaults(func=_cmd_likelihood)

    p = sub.add_parser("mcmc", help="posterior sampling over trees, "
                                    "catastrophes, and rates")
    p.add_argument("matrix")
    p.add_argument("--constraints", required=True,
                   help="calibration file (kind, leaves, lower, upper)")
    p.add_argument("--config", default=None,
                   help="key = value chain settings")
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--burn-in", dest="burn_in", type=int, default=None)
    p.add_argument("--thin", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--mode", choices=("sdlt", "sd"), default=None)
    p.add_argument("--prior-only", action="store_true",
                   help="sample the prior (likelihood held constant)")
    p.add_argument("--quiet", action="store_true")
    p.add_argument("--out", required=True,
                   help="output prefix (.tsv, .trees, .accept.tsv)")
    p.set_defaults(func=_cmd_mcmc)

    pa = sub.add_parser("analyze", help="chain diagnostics and model "
                                        "comparison")
    asub = pa.add_subparsers(dest="tool", required=True, parser_class=_Parser)

    p = asub.add_parser("ess", help="trace summaries with effective "
                                    "sample sizes")
    p.add_argument("samples", help="scalar sample table (.tsv)")
    p.add_argument("--columns", default=None, help="comma list (default all)")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_analyze_ess)

    p = asub.add_parser("consensus", help="majority-rule consensus tree")
    p.add_argument("trees", help="sampled trees, one per line")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_analyze_consensus)

    p = asub.add_parser("bf", help="Bayes factor for relaxing a calibration")
    p.add_argument("--posterior", required=True,
                   help="sample prefix of the relaxed posterior run")
    p.add_argument("--prior", required=True,
                   help="sample prefix of the matching prior-only run")
    p.add_argument("--kind", choices=("root", "clade", "leaf"),
                   required=True)
    p.add_argument("--leaves", default=None,
                   help="comma list naming the clade or leaf")
    p.add_argument("--value", type=float, required=True,
                   help="the constrained time")
    p.add_argument("--window", type=float, default=50.0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_analyze_bf)

    p = asub.add_parser("predict", help="posterior predictive score of "
                                        "held-out traits")
    p.add_argument("--samples", required=True, help="sample prefix")
    p.add_argument("--test", required=True, help="held-out trait matrix")
    p.add_argument("--rtol", type=float, default=1e-6)
    p.add_argument("--atol", type=float, default=1e-8)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_analyze_predict)

    p = asub.add_parser("validate", help="simulator vs exact pattern law")
    p.add_argument("tree")
    _add_rate_flags(p)
    p.add_argument("--replicates", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--alpha", type=float, default=0.01)
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_analyze_validate)

    p = sub.add_parser("validate", help="end-to-end check on bundled data")
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=_cmd_validate)

    return top


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError, RuntimeError, MatrixFormatError,
            treeio.TreeParseError, IntegrationError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
