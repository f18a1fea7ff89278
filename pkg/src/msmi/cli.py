"""Command-line interface.

Subcommands::

    msmi gen {gaussian,latent,correlated}
    msmi estimate {msmi-neural,msmi-lipo,msmi-generalized,asmi,ksg,kl-entropy,msh-lipo}
    msmi gaussian {msmi,cca,mi,msh}
    msmi study {auc,convergence,timing}

Exit status is 0 on success, 1 on usage errors and 2 on estimation errors.
Reports go to ``--out`` when given, otherwise to stdout; logs go to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import MsmiError

log = logging.getLogger("msmi")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _add_common(p, *, k=True, seed=True, input_=True):
    if input_:
        p.add_argument("--input", required=True, help="dataset CSV with columns x0..,y0..")
    if k:
        p.add_argument("--k", type=int, default=1, help="slice dimension (default 1)")
    if seed:
        p.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
    p.add_argument("--out", help="write the JSON report here instead of stdout")
    p.add_argument("--config", help="JSON file of flag values; explicit flags override it")


def _add_train_flags(p):
    p.add_argument("--epochs", type=int, default=100, help="training epochs (default 100)")
    p.add_argument("--batch-size", type=int, default=256, help="minibatch size (default 256)")
    p.add_argument("--lr", type=float, default=2e-4, help="initial Adam learning rate (default 2e-4)")
    p.add_argument("--lr-schedule", choices=["cosine", "constant"], default="cosine",
                   help="learning-rate schedule over all steps (default cosine)")
    p.add_argument("--eval-fraction", type=float, default=0.1, help="held-out fraction (default 0.1)")
    p.add_argument("--negatives", choices=["cyclic", "random"], default="cyclic",
                   help="derangement used for negative pairs (default cyclic)")
    p.add_argument("--critic", choices=["separable", "joint"], default="separable", help="critic kind")
    p.add_argument("--theory-mode", action="store_true",
                   help="shallow ReLU critic projected onto the bounded class after each step")
    p.add_argument("--ell", type=int, default=64, help="hidden units in theory mode (default 64)")
    p.add_argument("--dtype", choices=["float32", "float64"], default="float32", help="critic precision")
    p.add_argument("--qr-grad", choices=["exact", "finite-difference"], default="exact",
                   help="QR backward rule for the slices")
    p.add_argument("--checkpoint", help="write trained parameters as JSON here")


def _add_budget_flags(p):
    p.add_argument("--budget", type=int, default=1000, help="objective evaluations (default 1000)")
    p.add_argument("--exploration-prob", type=float, default=0.1, help="AdaLIPO exploration probability")
    p.add_argument("--grid-base", type=float, default=1.3, help="AdaLIPO Lipschitz grid base")
    p.add_argument("--local-prob", type=float, default=0.5,
                   help="probability of a local trust-region round (0 gives plain AdaLIPO)")


def _add_knn(p):
    p.add_argument("--k-nn", type=int, default=3, help="nearest neighbours (default 3)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="msmi", description="Max-sliced mutual information toolkit")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    top = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    gen = top.add_parser("gen", help="generate a synthetic dataset CSV")
    gsub = gen.add_subparsers(dest="kind", required=True, parser_class=_Parser)
    g = gsub.add_parser("gaussian", help="Gaussian pair: embedded signal or a model JSON")
    g.add_argument("--model", help="JSON with mean_x, mean_y, cov_x, cov_y, cross_cov")
    g.add_argument("--d", type=int, default=5, help="dimension of X and Y for the embedded-signal model")
    g.add_argument("--rho", type=float, default=0.9, help="correlation of coordinate 0 (embedded model)")
    g = gsub.add_parser("latent", help="latent shared-subspace model")
    g.add_argument("--d", type=int, default=10, help="ambient dimension")
    g.add_argument("--dprime", type=int, default=4, help="latent dimension")
    g.add_argument("--dependent", action="store_true", help="share the latent factor (default: independent)")
    g = gsub.add_parser("correlated", help="scalar Y = rho X + sqrt(1 - rho^2) Z")
    g.add_argument("--rho", type=float, default=0.5, help="correlation")
    for g in gsub.choices.values():
        g.add_argument("--n", type=int, required=True, help="number of samples")
        g.add_argument("--seed", type=int, default=0, help="random seed (default 0)")
        g.add_argument("--out", required=True, help="output CSV; provenance goes to <stem>.provenance.json")
        g.add_argument("--config", help="JSON file of flag values; explicit flags override it")

    est = top.add_parser("estimate", help="estimate an information measure from a dataset CSV")
    esub = est.add_subparsers(dest="method", required=True, parser_class=_Parser)
    e = esub.add_parser("msmi-neural", help="neural max-sliced MI")
    _add_common(e)
    _add_train_flags(e)
    e = esub.add_parser("msmi-generalized", help="neural generalized max-sliced MI with MLP slicers")
    _add_common(e)
    _add_train_flags(e)
    e.add_argument("--slicer-hidden", type=int, default=32, help="hidden units per slicer (default 32)")
    e.add_argument("--compare-linear", action="store_true",
                   help="also train linear slices and warn if the generalized value falls below them")
    e = esub.add_parser("msmi-lipo", help="max-sliced MI by AdaLIPO over KSG estimates")
    _add_common(e)
    _add_knn(e)
    _add_budget_flags(e)
    e = esub.add_parser("asmi", help="average-sliced MI by Monte Carlo")
    _add_common(e)
    _add_knn(e)
    e.add_argument("--num-slices", type=int, default=128, help="Haar slice pairs (default 128)")
    e.add_argument("--neural", action="store_true", help="neural MI on each slice instead of KSG")
    e.add_argument("--epochs", type=int, default=100, help="epochs per neural run (with --neural)")
    e = esub.add_parser("ksg", help="KSG mutual information on the raw vectors")
    _add_common(e, k=False)
    _add_knn(e)
    for name, helptext in (("kl-entropy", "Kozachenko-Leonenko entropy of X or Y"),
                           ("msh-lipo", "max-sliced entropy of X or Y by AdaLIPO")):
        e = esub.add_parser(name, help=helptext)
        _add_common(e, k=name == "msh-lipo")
        _add_knn(e)
        e.add_argument("--variable", choices=["x", "y"], default="x", help="which side of the dataset")
        if name == "msh-lipo":
            _add_budget_flags(e)

    gau = top.add_parser("gaussian", help="closed forms on the Gaussian fit of a dataset")
    gsub = gau.add_subparsers(dest="quantity", required=True, parser_class=_Parser)
    for name, helptext in (("msmi", "Gaussian max-sliced MI and CCA slices"), ("cca", "k-dimensional CCA"),
                           ("mi", "Gaussian mutual information"), ("msh", "Gaussian max-sliced entropy (PCA)")):
        g = gsub.add_parser(name, help=helptext)
        _add_common(g, k=name != "mi", seed=False)
        g.add_argument("--ridge", type=float, default=None,
                       help="covariance ridge (default 1e-6 * trace / dim of each sample covariance)")
        if name == "msh":
            g.add_argument("--variable", choices=["x", "y"], default="x", help="which side of the dataset")

    st = top.add_parser("study", help="run a desk-scale study")
    ssub = st.add_subparsers(dest="study", required=True, parser_class=_Parser)
    s = ssub.add_parser("auc", help="independence-testing AUC-ROC")
    s.add_argument("--d", type=int, default=10, help="ambient dimension")
    s.add_argument("--dprime", type=int, default=4, help="latent dimension")
    s.add_argument("--k", type=int, default=1, help="slice dimension")
    _add_knn(s)
    s.add_argument("--n", type=int, nargs="+", default=[1000], help="sample sizes")
    s.add_argument("--trials", type=int, default=50, help="trials per class (default 50)")
    s.add_argument("--full", action="store_true", help="100 trials per class")
    s.add_argument("--method", choices=["msmi-lipo", "asmi-mc"], action="append",
                   help="statistic (repeatable; default msmi-lipo)")
    s.add_argument("--budget", type=int, default=1000, help="AdaLIPO evaluations")
    s.add_argument("--num-slices", type=int, default=128, help="aSMI Monte Carlo slices")
    s = ssub.add_parser("convergence", help="neural estimation error versus n")
    s.add_argument("--rho", type=float, default=0.5, help="correlation")
    s.add_argument("--n", type=int, nargs="+", default=[500, 1500, 5000, 15000, 50000], help="sample sizes")
    s.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4], help="seeds")
    s.add_argument("--steps", type=int, default=3000, help="optimizer steps per run (0: use --epochs)")
    s.add_argument("--epochs", type=int, default=100, help="epochs when --steps is 0")
    s = ssub.add_parser("timing", help="wall-clock comparison of neural mSMI and aSMI")
    s.add_argument("--n", type=int, nargs="+", default=[5000, 10000], help="sample sizes")
    s.add_argument("--epochs", type=int, default=20, help="training epochs")
    s.add_argument("--num-slices", type=int, default=128, help="kNN aSMI slices")
    s.add_argument("--neural-m", type=int, default=0, help="neural aSMI runs (0 disables)")
    for s in ssub.choices.values():
        s.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
        s.add_argument("--out", help="JSON document path (default stdout)")
        s.add_argument("--out-csv", help="CSV table path")
        s.add_argument("--jobs", type=int, default=1, help="worker processes (default 1)")
        s.add_argument("--config", help="JSON file of flag values; explicit flags override it")
    return parser


def _find_subparser(parser, argv):
    """Walk subcommand tokens to the parser that owns the leaf flags."""
    current = parser
    for tok in argv:
        if tok.startswith("-"):
            continue
        actions = [a for a in current._actions if isinstance(a, argparse._SubParsersAction)]
        if not actions or tok not in actions[0].choices:
            break
        current = actions[0].choices[tok]
    return current


def parse(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        try:
            values = json.loads(Path(args.config).read_text())
        except (OSError, ValueError) as exc:
            raise UsageError(f"cannot read --config: {exc}") from exc
        leaf = _find_subparser(parser, argv)
        dests = {a.dest for a in leaf._actions}
        unknown = sorted(set(values) - dests)
        if unknown:
            raise UsageError(f"unknown keys in --config: {', '.join(unknown)}")
        leaf.set_defaults(**values)
        args = parser.parse_args(argv)
    return args


# --- command implementations -------------------------------------------------


def _emit(doc: dict, out) -> None:
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if out:
        Path(out).write_text(text)
    else:
        sys.stdout.write(text)


def _load(path):
    from .datagen import read_csv

    return read_csv(path)


def _cmd_gen(args) -> None:
    from . import datagen
    from .gaussian import GaussianJointModel

    if args.kind == "correlated":
        ds = datagen.gen_correlated_gaussian(args.n, args.rho, args.seed)
    elif args.kind == "latent":
        ds = datagen.gen_latent_subspace(args.n, args.d, args.dprime, args.dependent, args.seed)
    elif args.model:
        spec = json.loads(Path(args.model).read_text())
        model = GaussianJointModel(**{key: np.asarray(spec[key], dtype=float)
                                      for key in ("mean_x", "mean_y", "cov_x", "cov_y", "cross_cov")})
        ds = datagen.gen_gaussian_pair(args.n, model, args.seed)
    else:
        ds = datagen.gen_embedded_signal(args.n, args.d, args.rho, args.seed)
    datagen.write_csv(ds, args.out)
    log.info("wrote %d samples to %s", ds.n, args.out)


def _train_cfg(args):
    from .neural import TrainConfig

    return TrainConfig(k=args.k, batch_size=args.batch_size, epochs=args.epochs, learning_rate=args.lr,
                       lr_schedule=args.lr_schedule, eval_fraction=args.eval_fraction, negative_sampling=args.negatives,
                       theory_mode=args.theory_mode, ell=args.ell, seed=args.seed, critic_kind=args.critic,
                       dtype=args.dtype, qr_grad=args.qr_grad)


def _simple_report(method, value, args, config, start, extras=None) -> dict:
    from .report import EstimateReport

    rep = EstimateReport(method=method, value_nats=value, seed=getattr(args, "seed", None),
                         wall_time_s=time.perf_counter() - start, config=config, extras=extras or {})
    return rep.to_dict()


def _cmd_estimate(args) -> dict:
    from .knn import KSG_VARIANT, kl_entropy, ksg_mi
    from .lipo import SearchBudget, msh_lipo, msmi_lipo
    from .neural import train_generalized_msmi, train_msmi

    data = _load(args.input)
    start = time.perf_counter()
    base = {"input": args.input}
    if args.method == "msmi-neural":
        rep = train_msmi(data, _train_cfg(args), checkpoint=args.checkpoint)
    elif args.method == "msmi-generalized":
        rep = train_generalized_msmi(data, _train_cfg(args), args.slicer_hidden, checkpoint=args.checkpoint,
                                     compare_linear=args.compare_linear)
    elif args.method == "msmi-lipo":
        budget = SearchBudget(args.budget, args.exploration_prob, args.grid_base, args.seed, args.local_prob)
        rep = msmi_lipo(data, args.k, args.k_nn, budget)
    elif args.method == "asmi":
        return _asmi(args, data, start, base)
    elif args.method == "ksg":
        value = ksg_mi(data.x, data.y, args.k_nn)
        return _simple_report("ksg", value, args, {**base, "k_nn": args.k_nn}, start, {"mi_estimator": KSG_VARIANT})
    elif args.method == "kl-entropy":
        pts = data.x if args.variable == "x" else data.y
        value = kl_entropy(pts, args.k_nn)
        return _simple_report("kl-entropy", value, args, {**base, "k_nn": args.k_nn, "variable": args.variable},
                              start)
    else:
        pts = data.x if args.variable == "x" else data.y
        budget = SearchBudget(args.budget, args.exploration_prob, args.grid_base, args.seed, args.local_prob)
        res = msh_lipo(pts, args.k, args.k_nn, budget)
        cfg = {**base, "k": args.k, "k_nn": args.k_nn, "variable": args.variable, "budget": args.budget,
               "exploration_prob": args.exploration_prob, "grid_base": args.grid_base, "local_prob": args.local_prob}
        return _simple_report("msh-lipo", res.value, args, cfg, start,
                              {"slice": res.slice, "trace_values": res.trace.values, "search": "adalipo+tr"})
    rep.config = {**base, **rep.config}
    return rep.to_dict()


def _asmi(args, data, start, base) -> dict:
    from .asmi import AsmiConfig, asmi_estimate, asmi_neural
    from .neural import TrainConfig

    cfg = {**base, "k": args.k, "num_slices": args.num_slices, "k_nn": args.k_nn, "neural": args.neural}
    if args.neural:
        res = asmi_neural(data, TrainConfig(k=args.k, epochs=args.epochs, seed=args.seed), args.num_slices, args.seed)
        cfg["epochs"] = args.epochs
    else:
        res = asmi_estimate(data, AsmiConfig(args.k, args.num_slices, args.k_nn, args.seed))
    return _simple_report("asmi", res.value, args, cfg, start, {"per_slice": res.per_slice})


def _cmd_gaussian(args) -> dict:
    from .gaussian import cca_k, fit_gaussian, gaussian_mi, gaussian_msmi, max_sliced_entropy_gaussian, sample_ridges

    data = _load(args.input)
    start = time.perf_counter()
    model = fit_gaussian(data)
    ridge = sample_ridges(model) if args.ridge is None else args.ridge
    cfg = {"input": args.input, "ridge": ridge}
    if args.quantity != "mi":
        cfg["k"] = args.k
    if args.quantity == "msmi":
        res = gaussian_msmi(model, args.k, ridge)
        extras = {"cca": {"a": res.slices.a, "b": res.slices.b,
                          "canonical_correlations": res.slices.canonical_correlations},
                  "degenerate_correlation": res.degenerate}
        return _simple_report("gaussian-msmi", res.value, args, cfg, start, extras)
    if args.quantity == "cca":
        sol = cca_k(model, args.k, ridge)
        return _simple_report("gaussian-cca", float(np.sum(sol.canonical_correlations)), args, cfg, start,
                              {"a": sol.a, "b": sol.b, "canonical_correlations": sol.canonical_correlations})
    if args.quantity == "mi":
        return _simple_report("gaussian-mi", gaussian_mi(model, ridge), args, cfg, start)
    cov = model.cov_x if args.variable == "x" else model.cov_y
    value, a = max_sliced_entropy_gaussian(cov, args.k)
    cfg["variable"] = args.variable
    return _simple_report("gaussian-msh", value, args, cfg, start, {"a_pca": a})


def _cmd_study(args) -> dict:
    from .asmi import AsmiConfig
    from .harness import AucStudyConfig, convergence_study, independence_auc, timing_study
    from .neural import TrainConfig

    if args.study == "auc":
        cfg = AucStudyConfig(d=args.d, d_prime=args.dprime, k=args.k, k_nn=args.k_nn, sample_sizes=tuple(args.n),
                             trials_per_class=100 if args.full else args.trials,
                             methods=tuple(args.method or ["msmi-lipo"]), budget=args.budget,
                             num_slices=args.num_slices, seed=args.seed)
        res = independence_auc(cfg, jobs=args.jobs)
    elif args.study == "convergence":
        res = convergence_study(args.rho, args.n, args.seeds, TrainConfig(epochs=args.epochs),
                                steps=args.steps or None, jobs=args.jobs)
    else:
        res = timing_study(args.n, TrainConfig(epochs=args.epochs), AsmiConfig(num_slices=args.num_slices),
                           neural_m=args.neural_m, seed=args.seed)
    if args.out_csv:
        res.to_csv(args.out_csv)
    return res.to_dict()


def run(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")
    import torch

    torch.set_num_threads(1)
    try:
        if args.command == "gen":
            _cmd_gen(args)
            return 0
        handler = {"estimate": _cmd_estimate, "gaussian": _cmd_gaussian, "study": _cmd_study}[args.command]
        _emit(handler(args), args.out)
    except (MsmiError, ValueError, OSError) as exc:
        print(f"msmi: error: {exc}", file=sys.stderr)
        return 2
    return 0


def main() -> None:
    sys.exit(run())


if __name__ == "__main__":
    main()
