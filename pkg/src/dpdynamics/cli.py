"""Command-line front end.

Every command writes CSV: ``#``-prefixed metadata lines recording the full
parameter set, one header row, then data rows.  Floats are written with 17
significant digits so values round-trip exactly.

Exit codes: 0 success, 2 usage, 3 precondition or domain violation,
4 verdict failure, 5 I/O error.
"""

from __future__ import annotations

import argparse
import contextlib
import math
import sys
from typing import Iterable, List, Optional, Sequence

import numpy as np

from dpdynamics import accountant as acc
from dpdynamics import oracle, planner, trainer
from dpdynamics.errors import DpDynamicsError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_PRECONDITION = 3
EXIT_VERDICT = 4
EXIT_IO = 5

TIGHTNESS_RATIO_TOL = 1e-3
SANDWICH_RTOL = 1e-12


class VerdictFailure(Exception):
    pass


def fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, (bool, np.bool_)):
        return str(value)
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.17g}"
    return str(value)


class CsvWriter:
    def __init__(self, stream):
        self.stream = stream

    def meta(self, **params) -> None:
        for key, value in params.items():
            self.stream.write(f"# {key}={fmt(value)}\n")

    def row(self, *values) -> None:
        self.stream.write(",".join(fmt(v) for v in values) + "\n")


@contextlib.contextmanager
def _output(path: Optional[str]):
    if path is None or path == "-":
        yield sys.stdout
        return
    with open(path, "w", newline="") as fh:
        yield fh


def _sigma2(args) -> float:
    if args.sigma2 is not None:
        return args.sigma2
    return args.sigma * args.sigma


def _add_noise(p, default_sigma: Optional[float] = None) -> None:
    g = p.add_mutually_exclusive_group(required=default_sigma is None)
    g.add_argument("--sigma", type=float, default=default_sigma, help="noise standard deviation")
    g.add_argument("--sigma2", type=float, help="noise variance")


def _floats(text: str) -> List[float]:
    return [float(t) for t in text.split(",") if t]


def cmd_account(args, out: CsvWriter) -> None:
    beta = args.beta if args.beta is not None else args.lam
    loss = acc.LossClass(args.lam, beta, args.sg, args.lipschitz)
    methods = args.method or ["best"]
    inp = acc.AccountantInput(loss, args.n, args.eta, _sigma2(args), args.K, args.alpha)
    curves = {m: acc.bound_curve(m, inp, gamma=args.gamma, lsi_variant=args.lsi) for m in methods}
    out.meta(
        command="account", alpha=args.alpha, lam=args.lam, beta=beta, sg=args.sg,
        lipschitz=args.lipschitz, sigma2=inp.sigma2, n=args.n, eta=args.eta, K=args.K,
        gamma=args.gamma, lsi=args.lsi, methods=";".join(methods),
    )
    out.row("k", "method", "epsilon")
    for m in methods:
        for k, eps in enumerate(curves[m].values):
            out.row(k, m, eps)


def figure1_rows(alphas, lams, beta, sg, n, eta, sigma2, K):
    """Rows ``(K, method, alpha, lambda, epsilon)``; composition does not depend on lambda."""
    rows = []
    for alpha in alphas:
        for lam in lams:
            inp = acc.AccountantInput(acc.LossClass(lam, beta, sg), n, eta, sigma2, K, alpha)
            for k, eps in enumerate(acc.bound_curve("converging", inp).values):
                rows.append((k, "converging", alpha, lam, eps))
        inp = acc.AccountantInput(acc.LossClass(min(lams), beta, sg), n, eta, sigma2, K, alpha)
        for k in range(K + 1):
            rows.append((k, "composition", alpha, None, acc.composition_bound(inp.at(k))))
    return rows


def cmd_figure1(args, out: CsvWriter) -> None:
    alphas, lams = _floats(args.alphas), _floats(args.lambdas)
    sigma2 = _sigma2(args)
    rows = figure1_rows(alphas, lams, args.beta, args.sg, args.n, args.eta, sigma2, args.K)
    out.meta(
        command="figure1", alphas=args.alphas, lambdas=args.lambdas, beta=args.beta, sg=args.sg,
        n=args.n, eta=args.eta, sigma2=sigma2, K=args.K,
    )
    out.row("K", "method", "alpha", "lambda", "epsilon")
    for r in rows:
        out.row(*r)


def figure2_rows(alphas, sg, n, eta, sigma2, K):
    rows = []
    for alpha in alphas:
        # lambda = beta = 1 for the squared loss; only sg enters these bounds
        inp = acc.AccountantInput(acc.LossClass(1.0, 1.0, sg), n, eta, sigma2, K, alpha)
        for k in range(K + 1):
            ik = inp.at(k)
            rows.append((k, alpha, acc.squared_loss_upper_bound(ik), acc.lower_bound(ik), acc.composition_bound(ik)))
    return rows


def cmd_figure2(args, out: CsvWriter) -> None:
    alphas = _floats(args.alphas)
    sigma2 = _sigma2(args)
    rows = figure2_rows(alphas, args.sg, args.n, args.eta, sigma2, args.K)
    out.meta(command="figure2", alphas=args.alphas, sg=args.sg, n=args.n, eta=args.eta, sigma2=sigma2, K=args.K)
    out.row("K", "alpha", "our_bound", "lower_bound", "composition")
    for r in rows:
        out.row(*r)


def tightness_table(alpha, sg, n, d, eta, sigma2, K):
    """Rows ``(K, lower, exact, upper)`` plus the verdict and the final exact/lower ratio."""
    pair = oracle.worst_case_pair(n, d, sg)
    exact = oracle.exact_divergence_curve(pair, eta, sigma2, K, alpha)
    inp = acc.AccountantInput(acc.LossClass(1.0, 1.0, sg), n, eta, sigma2, K, alpha)
    rows = []
    ok = True
    for k in range(K + 1):
        ik = inp.at(k)
        lo, ex, up = acc.lower_bound(ik), float(exact[k]), acc.squared_loss_upper_bound(ik)
        ok &= lo <= ex * (1 + SANDWICH_RTOL) and ex <= up * (1 + SANDWICH_RTOL)
        rows.append((k, lo, ex, up))
    lo_K, ex_K = rows[-1][1], rows[-1][2]
    ratio = ex_K / lo_K if lo_K > 0 else math.nan
    ok &= abs(ratio - (2.0 - eta)) <= TIGHTNESS_RATIO_TOL
    return rows, bool(ok), ratio


def cmd_tightness(args, out: CsvWriter) -> None:
    sigma2 = _sigma2(args)
    rows, ok, ratio = tightness_table(args.alpha, args.sg, args.n, args.d, args.eta, sigma2, args.K)
    out.meta(command="tightness", alpha=args.alpha, sg=args.sg, n=args.n, d=args.d, eta=args.eta, sigma2=sigma2, K=args.K)
    out.row("K", "lower", "exact", "upper")
    for r in rows:
        out.row(*r)
    verdict = "PASS" if ok else "FAIL"
    out.meta(verdict=verdict, final_ratio=ratio, target_ratio=2.0 - args.eta, ratio_tol=TIGHTNESS_RATIO_TOL)
    if not ok:
        raise VerdictFailure(f"tightness verdict FAIL (final exact/lower ratio {ratio:.17g})")


def cmd_plan(args, out: CsvWriter) -> None:
    beta = args.beta if args.beta is not None else args.lam
    loss = acc.LossClass(args.lam, beta, 2.0 * args.lipschitz, args.lipschitz)
    if args.eps_prime is not None:
        budget = acc.RdpPoint(args.alpha, args.eps_prime)
    else:
        budget = acc.DpParams(args.eps, args.delta)
    res = planner.plan(planner.PlanRequest(loss, args.n, args.d, budget, args.diameter))
    check = acc.converging_bound(acc.AccountantInput(loss, args.n, res.eta, res.sigma2, res.k_star, res.alpha))
    out.meta(
        command="plan", lipschitz=args.lipschitz, lam=args.lam, beta=beta, n=args.n, d=args.d,
        alpha=args.alpha, eps_prime=args.eps_prime, eps=args.eps, delta=args.delta, diameter=args.diameter,
    )
    out.row("key", "value")
    out.row("sigma2", res.sigma2)
    out.row("k_star", res.k_star)
    out.row("eta", res.eta)
    out.row("predicted_risk", res.predicted_risk)
    out.row("floor", res.floor)
    out.row("alpha", res.alpha)
    out.row("eps_rdp", res.eps_rdp)
    out.row("achieved_rdp", check)
    if isinstance(budget, acc.DpParams):
        out.row("achieved_dp_eps", acc.rdp_to_dp(acc.RdpPoint(res.alpha, check), budget.delta).eps)


def _loss(args) -> trainer.LossModel:
    if args.loss == "squared":
        return trainer.SquaredLoss()
    return trainer.LogisticLoss(args.mu)


def cmd_train(args, out: CsvWriter) -> None:
    data = trainer.load_dataset(args.data)
    loss = _loss(args)
    proj = trainer.ProjectionSpec.ball(args.radius) if args.radius is not None else trainer.ProjectionSpec()
    config = trainer.TrainConfig(args.eta, _sigma2(args), args.K, proj, args.seed, args.theta0)
    cols = [f"x{i}" for i in range(data.d)]
    meta = dict(
        command="train", data=args.data, n=data.n, d=data.d, domain_radius=data.domain_radius,
        loss=args.loss, mu=args.mu if args.loss == "logistic" else None, eta=args.eta,
        sigma2=config.sigma2, K=args.K, projection=proj.kind, radius=args.radius, seed=args.seed,
        theta0=args.theta0, runs=args.runs,
    )
    if args.runs is None:
        theta = trainer.run_noisy_gd(data, loss, config)
        out.meta(**meta)
        out.row("row", *cols)
        out.row("theta", *theta)
        return
    mc = trainer.monte_carlo_runs(data, loss, config, args.runs)
    out.meta(**meta)
    out.row("row", *cols)
    out.row("mean", *mc.mean)
    out.row("var", *mc.var)
    out.row("stderr", *mc.standard_error)
    if args.oracle:
        state = oracle.state_for_config(data, loss, config)
        out.row("oracle_mean", *state.mean)
        out.row("oracle_var", *([state.var] * data.d))
    if args.samples:
        for i, theta in enumerate(mc.samples):
            out.row(f"run{i}", *theta)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dpdyn", description="Renyi-DP dynamics of noisy gradient descent")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("-o", "--out", default=None, help="output CSV path (default stdout)")

    a = sub.add_parser("account", help="per-iteration RDP bound curves")
    a.add_argument("--method", action="append", choices=acc.METHODS,
                   help="bound to evaluate; repeat for several (default: best)")
    a.add_argument("--alpha", type=float, required=True)
    a.add_argument("--lambda", dest="lam", type=float, required=True)
    a.add_argument("--beta", type=float, default=None, help="smoothness (default: lambda)")
    a.add_argument("--lipschitz", type=float, default=None)
    a.add_argument("--sg", type=float, required=True, help="total gradient sensitivity")
    _add_noise(a)
    a.add_argument("--n", type=int, required=True)
    a.add_argument("--eta", type=float, required=True)
    a.add_argument("--K", type=int, required=True)
    a.add_argument("--gamma", type=float, default=0.5, help="balancing ratio for the recursion method")
    a.add_argument("--lsi", choices=("strongly-convex", "squared-loss"), default="strongly-convex",
                   help="LSI constant used by the recursion method")
    common(a)

    f1 = sub.add_parser("figure1", help="converging bound vs composition baseline")
    f1.add_argument("--alphas", default="10,20,30")
    f1.add_argument("--lambdas", default="1,2,4")
    f1.add_argument("--beta", type=float, default=4.0)
    f1.add_argument("--sg", type=float, default=4.0)
    f1.add_argument("--n", type=int, default=5000)
    f1.add_argument("--eta", type=float, default=0.02)
    _add_noise(f1, 0.02)
    f1.add_argument("--K", type=int, default=500)
    common(f1)

    f2 = sub.add_parser("figure2", help="squared-loss upper bound vs lower bound vs composition")
    f2.add_argument("--alphas", default="10,20,30")
    f2.add_argument("--sg", type=float, default=4.0)
    f2.add_argument("--n", type=int, default=5000)
    f2.add_argument("--eta", type=float, default=0.02)
    _add_noise(f2, 0.02)
    f2.add_argument("--K", type=int, default=300)
    common(f2)

    t = sub.add_parser("tightness", help="lower <= exact <= upper check against the Gaussian oracle")
    t.add_argument("--alpha", type=float, default=10.0)
    t.add_argument("--sg", type=float, default=4.0)
    t.add_argument("--n", type=int, default=5000)
    t.add_argument("--d", type=int, default=2)
    t.add_argument("--eta", type=float, default=0.02)
    _add_noise(t, 0.02)
    t.add_argument("--K", type=int, default=1000)
    common(t)

    pl = sub.add_parser("plan", help="noise variance and iteration count for a privacy budget")
    pl.add_argument("--lipschitz", type=float, required=True)
    pl.add_argument("--lambda", dest="lam", type=float, required=True)
    pl.add_argument("--beta", type=float, default=None, help="smoothness (default: lambda)")
    pl.add_argument("--n", type=int, required=True)
    pl.add_argument("--d", type=int, required=True)
    pl.add_argument("--alpha", type=float, default=None, help="RDP order (with --eps-prime)")
    pl.add_argument("--eps-prime", type=float, default=None, help="RDP budget")
    pl.add_argument("--eps", type=float, default=None, help="DP epsilon (with --delta)")
    pl.add_argument("--delta", type=float, default=None)
    pl.add_argument("--diameter", type=float, default=None, help="bound on ||theta_0 - theta*||")
    common(pl)

    tr = sub.add_parser("train", help="run projected noisy gradient descent")
    tr.add_argument("--data", required=True, help="dataset file, one whitespace-separated record per line")
    tr.add_argument("--loss", choices=("squared", "logistic"), default="squared")
    tr.add_argument("--mu", type=float, default=None, help="ridge strength for the logistic loss")
    tr.add_argument("--eta", type=float, required=True)
    _add_noise(tr)
    tr.add_argument("--K", type=int, required=True)
    tr.add_argument("--radius", type=float, default=None, help="project onto the centered ball of this radius")
    tr.add_argument("--seed", type=int, default=0)
    tr.add_argument("--theta0", choices=("zero", "projected-gaussian"), default="zero")
    tr.add_argument("--runs", type=int, default=None, help="Monte-Carlo replications")
    tr.add_argument("--samples", action="store_true", help="also write every replication's theta_K")
    tr.add_argument("--oracle", action="store_true", help="append the exact Gaussian moments")
    common(tr)
    return p


COMMANDS = {
    "account": cmd_account,
    "figure1": cmd_figure1,
    "figure2": cmd_figure2,
    "tightness": cmd_tightness,
    "plan": cmd_plan,
    "train": cmd_train,
}


def _validate(parser, args) -> None:
    if args.command == "plan":
        rdp = args.alpha is not None or args.eps_prime is not None
        dp = args.eps is not None or args.delta is not None
        if rdp == dp or (rdp and None in (args.alpha, args.eps_prime)) or (dp and None in (args.eps, args.delta)):
            parser.error("give either --alpha with --eps-prime, or --eps with --delta")
    if args.command == "train":
        if args.loss == "logistic" and args.mu is None:
            parser.error("--loss logistic needs --mu")
        if args.oracle and args.runs is None:
            parser.error("--oracle needs --runs")


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    _validate(parser, args)
    try:
        with _output(args.out) as stream:
            COMMANDS[args.command](args, CsvWriter(stream))
    except DpDynamicsError as exc:
        print(f"dpdyn: error: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except VerdictFailure as exc:
        print(f"dpdyn: {exc}", file=sys.stderr)
        return EXIT_VERDICT
    except OSError as exc:
        print(f"dpdyn: I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
