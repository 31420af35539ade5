"""Command-line interface.

Subcommands: ``simulate`` (Monte Carlo study of the estimator roster),
``estimate`` (transported effect from data files), ``spec-test``
(ratio-equality test, from data files or by simulation), and ``cluster``
(constrained cluster assignment of embeddings). Results go to ``--out`` or
standard output; diagnostics to standard error. When writing a report
file, a companion figure is rendered next to it unless ``--no-figures``.

Exit status: 0 success, 1 usage error, 2 data or estimation error.
"""
from __future__ import annotations

import argparse
import os
import sys
from .model import (CommonArmAnchor, CommonArmQuery, ConfigurationError,
                    EstimationError, ReplicatedQuery)
from .nuisance import NuisanceConfig, fit_cross_fitted
from .io import (ParseError, read_embeddings, read_observations, report_to_string)
from .simlab import (DgpConfig, ESTIMATOR_NAMES, run_monte_carlo,
                     run_spec_test_study, distinct_gap_anchors,
                     power_trial_table, shared_time_anchors, default_trial_table)
from .tmle import estimate_tate_tmle
from .transport import (anchor_ratios, estimate_tate_multi_anchor,
                        estimate_tate_strategy1, estimate_tate_strategy2,
                        specification_test, variance_diagnostic)
from .clustering import cluster_corpus

SIMULATE_COLUMNS = ["estimator", "n", "bias", "rmse", "se_ratio", "coverage"]
ESTIMATE_COLUMNS = ["psi", "se", "ci_low", "ci_high", "ratio", "p_value"]
CALIBRATION_COLUMNS = ["kappa", "n", "reps", "alpha", "rejection_rate", "mean_q"]
CLUSTER_COLUMNS = ["item_id", "test_id", "cluster"]


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # exit code 1 for usage problems, not argparse's 2
        raise UsageError(message)


def _add_common(p: _Parser) -> None:
    p.add_argument("--out", help="output path (default: standard output)")
    p.add_argument("--format", choices=["table", "csv"], default="table")
    p.add_argument("--no-figures", action="store_true",
                   help="skip the companion figure when writing to a file")
    p.add_argument("--config", help="key=value defaults file; flags override")
    p.add_argument("--seed", type=int, default=1)
    p.add_argument("--alpha", type=float, default=0.05)


def _add_nuisance(p: _Parser) -> None:
    p.add_argument("--nuisance", choices=["linear", "boosted", "logistic"],
                   default="linear", help="outcome-regression model")
    p.add_argument("--folds", type=int, default=5)


def build_parser() -> _Parser:
    parser = _Parser(prog="temporal-transport",
                     description="Transported treatment-effect estimation "
                                 "across time from collections of trials.")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", parents=[], help="Monte Carlo estimator study")
    sim.add_argument("--n", default="1200",
                     help="sample size, or comma list for several blocks")
    sim.add_argument("--reps", type=int, default=500)
    sim.add_argument("--estimators", default="oracle,s1,s2-c,s2-t,s2-m",
                     help=f"comma list from {', '.join(ESTIMATOR_NAMES)}")
    sim.add_argument("--kappa", type=float, default=0.0,
                     help="measurement-gap tilt of the temporal modifier")
    _add_nuisance(sim)
    _add_common(sim)

    est = sub.add_parser("estimate", help="transported effect from data files")
    est.add_argument("--observations", required=True)
    est.add_argument("--trials", required=True)
    est.add_argument("--aggregate", action="store_true",
                     help="observations file carries impression/click counts")
    est.add_argument("--strategy", choices=["s1", "s2"], required=True)
    est.add_argument("--target-trial", type=int, required=True)
    est.add_argument("--delta0", type=int, required=True)
    est.add_argument("--delta1", type=int, required=True)
    est.add_argument("--anchors", required=True,
                     help="s1: 'j,jprime'; s2: comma list of arm:target_trial:source_trial")
    est.add_argument("--tmle", choices=["factorized", "joint"],
                     help="use targeted estimation instead of the plug-in")
    est.add_argument("--tmle-link", choices=["linear", "logistic"], default="linear")
    _add_nuisance(est)
    _add_common(est)

    spec = sub.add_parser("spec-test", help="anchor ratio-equality test")
    spec.add_argument("--observations")
    spec.add_argument("--trials")
    spec.add_argument("--aggregate", action="store_true")
    spec.add_argument("--target-trial", type=int)
    spec.add_argument("--delta0", type=int)
    spec.add_argument("--delta1", type=int)
    spec.add_argument("--anchors",
                      help="comma list of arm:target_trial:source_trial (m >= 2)")
    spec.add_argument("--reps", type=int,
                      help="simulation mode: rejection-rate study over this many datasets")
    spec.add_argument("--n", type=int, default=1200, help="simulation-mode sample size")
    spec.add_argument("--kappa", type=float, default=0.0,
                      help="simulation mode: violation strength (0 = null)")
    _add_nuisance(spec)
    _add_common(spec)

    clu = sub.add_parser("cluster", help="constrained cluster assignment of embeddings")
    clu.add_argument("--embeddings", required=True)
    clu.add_argument("--k", type=int, default=50, help="number of clusters")
    clu.add_argument("--distance", choices=["squared", "euclidean"], default="squared")
    _add_common(clu)
    return parser


def _apply_config_file(args: argparse.Namespace, argv: list[str]) -> None:
    if not getattr(args, "config", None):
        return
    overrides = {}
    with open(args.config, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise UsageError(f"{args.config}:{lineno}: expected key=value")
            key, value = line.split("=", 1)
            overrides[key.strip().replace("-", "_")] = value.strip()
    explicit = {a[2:].split("=", 1)[0].replace("-", "_")
                for a in argv if a.startswith("--")}
    for key, value in overrides.items():
        if key in explicit or not hasattr(args, key):
            continue
        current = getattr(args, key)
        if isinstance(current, bool):
            setattr(args, key, value.lower() in ("1", "true", "yes"))
        elif isinstance(current, int):
            setattr(args, key, int(value))
        elif isinstance(current, float):
            setattr(args, key, float(value))
        else:
            setattr(args, key, value)


def _nuisance_config(args) -> NuisanceConfig:
    return NuisanceConfig(outcome_model=args.nuisance, n_folds=args.folds,
                          seed=args.seed)


def _parse_s2_anchors(text: str) -> tuple[CommonArmAnchor, ...]:
    anchors = []
    for part in text.split(","):
        pieces = part.strip().split(":")
        if len(pieces) != 3:
            raise UsageError(f"anchor {part!r} is not arm:target_trial:source_trial")
        try:
            anchors.append(CommonArmAnchor(int(pieces[0]), int(pieces[1]), int(pieces[2])))
        except ValueError:
            raise UsageError(f"anchor {part!r} has non-integer fields") from None
    return tuple(anchors)


def _emit(rows, columns, args, figure_fn=None, figure_rows=None) -> None:
    text = report_to_string(rows, columns, args.format)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
        if figure_fn is not None and not args.no_figures:
            base, _ = os.path.splitext(args.out)
            figure_fn(figure_rows if figure_rows is not None else rows, base + ".png")
    else:
        sys.stdout.write(text)


def _cmd_simulate(args) -> int:
    from .figures import simulation_figure
    estimators = [e.strip() for e in args.estimators.split(",") if e.strip()]
    unknown = [e for e in estimators if e not in ESTIMATOR_NAMES]
    if unknown:
        raise UsageError(f"unknown estimators: {', '.join(unknown)}")
    try:
        sizes = [int(tok) for tok in str(args.n).split(",")]
    except ValueError:
        raise UsageError(f"--n must be an integer or comma list, got {args.n!r}") from None
    rows = []
    for n in sizes:
        config = DgpConfig(n_total=n, violation_kappa=args.kappa)
        metrics = run_monte_carlo(config, args.reps, estimators, args.seed,
                                  _nuisance_config(args), args.alpha)
        for m in metrics:
            rows.append({"estimator": m.estimator, "n": m.n, "bias": m.bias,
                         "rmse": m.rmse, "se_ratio": m.se_ratio,
                         "coverage": m.coverage})
            if m.n_failed:
                print(f"note: {m.estimator} failed in {m.n_failed} replications",
                      file=sys.stderr)
    _emit(rows, SIMULATE_COLUMNS, args, simulation_figure)
    return 0


def _load_dataset(args):
    if not args.observations or not args.trials:
        raise UsageError("data mode needs --observations and --trials")
    return read_observations(args.observations, args.trials, args.aggregate)


def _cmd_estimate(args) -> int:
    from .figures import estimate_figure
    if args.strategy == "s1":
        pieces = args.anchors.split(",")
        if len(pieces) != 2:
            raise UsageError("s1 anchors must be 'j,jprime'")
        try:
            query = ReplicatedQuery(args.target_trial, args.delta0, args.delta1,
                                    int(pieces[0]), int(pieces[1]))
        except ValueError:
            raise UsageError(f"anchors {args.anchors!r} must be integers") from None
    else:
        query = CommonArmQuery(args.target_trial, args.delta0, args.delta1,
                               _parse_s2_anchors(args.anchors))
    data = _load_dataset(args)
    nuisance = fit_cross_fitted(data, _nuisance_config(args))
    p_value = None
    if args.tmle:
        result, report = estimate_tate_tmle(data, nuisance, query, args.tmle,
                                            args.tmle_link, args.alpha)
        if not report.converged:
            print("note: targeting did not converge", file=sys.stderr)
    elif args.strategy == "s1":
        result = estimate_tate_strategy1(data, nuisance, query, args.alpha)
    elif len(query.anchors) == 1:
        result = estimate_tate_strategy2(data, nuisance, query, args.alpha)
    else:
        result = estimate_tate_multi_anchor(data, nuisance, query, args.alpha)
    if isinstance(query, CommonArmQuery) and len(query.anchors) >= 2:
        test = specification_test(anchor_ratios(data, nuisance, query), data.n)
        p_value = test.p_value
    for note in result.warnings:
        print(f"note: {note}", file=sys.stderr)
    if not args.tmle:
        diag = variance_diagnostic(result)
        print(f"note: variance diagnostic, assembled {diag['assembled']:.6g} vs "
              f"independent-block closed form {diag['closed_form']:.6g} "
              f"(relative gap {diag['relative_gap']:.3f})", file=sys.stderr)
    rows = [{"psi": result.psi, "se": result.std_error, "ci_low": result.ci_low,
             "ci_high": result.ci_high, "ratio": result.ratio, "p_value": p_value,
             "estimator": f"{args.strategy}{'-tmle' if args.tmle else ''}"}]
    _emit(rows, ESTIMATE_COLUMNS, args, estimate_figure)
    return 0


def _cmd_spec_test(args) -> int:
    from .figures import calibration_figure, estimate_figure
    if args.reps:
        table = power_trial_table() if args.kappa != 0.0 else default_trial_table()
        query = distinct_gap_anchors() if args.kappa != 0.0 else shared_time_anchors()
        config = DgpConfig(n_total=args.n, violation_kappa=args.kappa,
                           trial_table=table)
        study = run_spec_test_study(config, args.reps, query, args.seed,
                                    args.alpha, _nuisance_config(args))
        if study.n_failed:
            print(f"note: {study.n_failed} replications failed", file=sys.stderr)
        rows = [{"kappa": study.kappa, "n": study.n, "reps": study.replications,
                 "alpha": study.alpha, "rejection_rate": study.rejection_rate,
                 "mean_q": study.mean_q}]
        _emit(rows, CALIBRATION_COLUMNS, args, calibration_figure)
        return 0
    if args.target_trial is None or args.delta0 is None or args.delta1 is None \
            or not args.anchors:
        raise UsageError("data mode needs --target-trial, --delta0, --delta1, --anchors "
                         "(or pass --reps for simulation mode)")
    anchors = _parse_s2_anchors(args.anchors)
    if len(anchors) < 2:
        raise UsageError("the ratio-equality test needs at least two anchors")
    query = CommonArmQuery(args.target_trial, args.delta0, args.delta1, anchors)
    data = _load_dataset(args)
    nuisance = fit_cross_fitted(data, _nuisance_config(args))
    result = estimate_tate_multi_anchor(data, nuisance, query, args.alpha)
    test = specification_test(result.anchor_set, data.n)
    for note in test.warnings:
        print(f"note: {note}", file=sys.stderr)
    print(f"Q = {test.q:.6f}, df = {test.df}, p = {test.p_value:.6f}", file=sys.stderr)
    rows = [{"psi": result.psi, "se": result.std_error, "ci_low": result.ci_low,
             "ci_high": result.ci_high, "ratio": result.ratio,
             "p_value": test.p_value, "estimator": "s2-m"}]
    _emit(rows, ESTIMATE_COLUMNS, args, estimate_figure)
    return 0


def _cmd_cluster(args) -> int:
    from .figures import cluster_figure
    corpus = read_embeddings(args.embeddings)
    assignment = cluster_corpus(corpus, args.k, args.seed,
                                squared=args.distance == "squared")
    item_to_test = {item: test_id for test_id, members in corpus.tests.items()
                    for item in members}
    rows = [{"item_id": item, "test_id": item_to_test.get(item, ""),
             "cluster": cluster}
            for item, cluster in sorted(assignment.cluster_of.items())]
    sizes = [0] * args.k
    for cluster in assignment.cluster_of.values():
        sizes[cluster] += 1
    _emit(rows, CLUSTER_COLUMNS, args,
          lambda _rows, path: cluster_figure(sizes, path))
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    if argv is None:
        argv = sys.argv[1:]
    try:
        args = parser.parse_args(argv)
        _apply_config_file(args, argv)
        if not 0.0 < args.alpha < 1.0:
            raise UsageError(f"--alpha must lie in (0, 1), got {args.alpha}")
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    try:
        if args.command == "simulate":
            return _cmd_simulate(args)
        if args.command == "estimate":
            return _cmd_estimate(args)
        if args.command == "spec-test":
            return _cmd_spec_test(args)
        return _cmd_cluster(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    except (ParseError, ConfigurationError, EstimationError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


def entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entry()
