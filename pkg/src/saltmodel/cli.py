"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 bad input data, 3 numerical failure.
Errors are reported as a single JSON object on stderr.
"""

import argparse
import json
import sys

import numpy as np

from . import datagen, fileio, lds
from .baselines import fit_arhmm
from .fit import FitConfig, FitError, fit_em
from .hmm import DirichletPrior, forward_backward, viterbi
from .lds import LdsParams
from .metrics import (EvalReport, align_states, explained_variance, per_frame_loglik,
                      segmentation_accuracy, tensor_mse)
from .model import SaltParams, ar_filter, dense_log_likelihoods, lag_design
from .tensor import ShapeError

EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _ranks(text):
    out = []
    for part in text.split(","):
        if "-" in part:
            lo, hi = part.split("-")
            out.extend(range(int(lo), int(hi) + 1))
        else:
            out.append(int(part))
    return out


def _pairs(text):
    try:
        return [tuple(int(v) for v in item.split(",")) for item in text.split(";") if item]
    except ValueError as exc:
        raise UsageError(f"bad --pairs value {text!r}; expected 'p,q;p,q'") from exc


def build_parser():
    ap = _Parser(prog="saltmodel", description="Switching low-rank tensor autoregressions.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sim = sub.add_parser("simulate", help="generate a synthetic series")
    sim.add_argument("generator", choices=["lds", "slds", "nascar", "lorenz"])
    sim.add_argument("--T", type=int, required=True)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--out", required=True, help="series CSV")
    sim.add_argument("--out-states", help="true discrete states CSV (slds, nascar)")
    sim.add_argument("--out-model", help="generating LDS as model JSON (lds)")
    sim.add_argument("--lds", help="simulate this LDS model file instead of a random one")
    sim.add_argument("--n-real", type=int, default=1)
    sim.add_argument("--n-pairs", type=int, default=3)
    sim.add_argument("--obs-dim", type=int)
    sim.add_argument("--decay", type=float, default=0.9)
    sim.add_argument("--q", type=float, default=0.1, help="state noise variance")
    sim.add_argument("--r", type=float, default=1.0, help="observation noise variance")
    sim.add_argument("--states", type=int, default=2, help="number of SLDS states")
    sim.add_argument("--switches", type=int, default=4, help="evenly spaced SLDS switches")
    sim.add_argument("--dt", type=float, default=0.01)
    sim.add_argument("--noise", type=float, default=0.1, help="Lorenz noise scale")

    fit = sub.add_parser("fit", help="fit a model by EM")
    fit.add_argument("--data", required=True)
    fit.add_argument("--model-kind", choices=["cp-salt", "tucker-salt", "arhmm"], required=True)
    fit.add_argument("--states", type=int, default=1)
    fit.add_argument("--rank", type=int, default=2)
    fit.add_argument("--lags", type=int, default=1)
    fit.add_argument("--iters", type=int, default=100)
    fit.add_argument("--tol", type=float, default=1e-7)
    fit.add_argument("--seed", type=int, default=0)
    fit.add_argument("--init", choices=["random", "kmeans"], default="kmeans")
    fit.add_argument("--sticky-diag", type=float, default=1.0)
    fit.add_argument("--sticky-offdiag", type=float, default=1.0)
    fit.add_argument("--out-model", required=True)
    fit.add_argument("--out-trace")

    ev = sub.add_parser("eval", help="evaluate a model, writing an EvalReport JSON")
    ev.add_argument("--model", required=True)
    ev.add_argument("--data")
    ev.add_argument("--truth-model")
    ev.add_argument("--truth-states")
    ev.add_argument("--out", help="report path (default: stdout)")

    l2s = sub.add_parser("lds2salt", help="convert an LDS to its truncated SALT form")
    l2s.add_argument("--lds", required=True)
    l2s.add_argument("--lags", type=int, required=True)
    l2s.add_argument("--mode", choices=["cp", "tucker"], default="tucker")
    l2s.add_argument("--out", required=True)

    flt = sub.add_parser("filters", help="export per-pair autoregressive filters")
    flt.add_argument("--model", required=True)
    flt.add_argument("--state", type=int, default=0)
    flt.add_argument("--pairs", required=True, help="output,input pairs, e.g. '0,0;1,0'")
    flt.add_argument("--out", required=True)

    rs = sub.add_parser("rank-sweep", help="fit a grid of ranks against a ground-truth LDS")
    rs.add_argument("--data", required=True)
    rs.add_argument("--truth-model", required=True, help="ground-truth LDS model file")
    rs.add_argument("--test-data")
    rs.add_argument("--modes", default="tucker,cp")
    rs.add_argument("--tucker-ranks", default="5-9")
    rs.add_argument("--cp-ranks", default="8-12")
    rs.add_argument("--lags", type=int, default=50)
    rs.add_argument("--iters", type=int, default=300)
    rs.add_argument("--tol", type=float, default=1e-7)
    rs.add_argument("--seed", type=int, default=0)
    rs.add_argument("--init", choices=["random", "kmeans"], default="random")
    rs.add_argument("--out", required=True)
    return ap


def _simulate(a):
    states = None
    if a.generator == "lds":
        if a.lds:
            p = _load_kind(a.lds, LdsParams)
        else:
            p = datagen.random_rotational_lds(a.n_real, a.n_pairs, a.obs_dim or 20, a.decay,
                                              a.seed, q=a.q, r=a.r)
        y = lds.simulate_lds(p, a.T, a.seed)
        if a.out_model:
            fileio.save_model(a.out_model, p)
    elif a.generator == "slds":
        N = a.obs_dim or 20
        base = datagen.random_rotational_lds(a.n_real, a.n_pairs, N, a.decay, a.seed, q=a.q, r=a.r)
        As = [datagen.random_rotational_lds(a.n_real, a.n_pairs, N, a.decay, [a.seed, h]).A
              for h in range(a.states)]
        D = base.latent_dim
        gt = datagen.SldsGroundTruth(As, [np.zeros(D)] * a.states, [base.Q] * a.states,
                                     base.C, base.d, base.R)
        y, states = datagen.simulate_slds(gt, a.T, a.seed, n_switches=a.switches)
    elif a.generator == "nascar":
        gt = datagen.nascar(N=a.obs_dim or 10, seed=a.seed)
        y, states = datagen.simulate_slds(gt, a.T, a.seed, script=datagen.nascar_script(a.T))
    else:
        y = datagen.lorenz_series(a.T, dt=a.dt, N=a.obs_dim or 20, noise_scale=a.noise,
                                  seed=a.seed)
    fileio.save_series(a.out, y)
    if a.out_states and states is not None:
        fileio.save_states(a.out_states, states)
    return {"T": len(y), "N": y.shape[1]}


def _load_kind(path, cls):
    m = fileio.load_model(path)
    if not isinstance(m, cls):
        raise fileio.DataError(f"{path} holds a {type(m).__name__}, expected {cls.__name__}")
    return m


def _fit(a):
    mode = {"cp-salt": "cp", "tucker-salt": "tucker", "arhmm": "tucker"}[a.model_kind]
    try:
        cfg = FitConfig(H=a.states, D=a.rank, L=a.lags, mode=mode, max_iters=a.iters,
                        rel_tol=a.tol, seed=a.seed, init=a.init,
                        prior=DirichletPrior(a.sticky_diag, a.sticky_offdiag))
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    y = fileio.load_series(a.data)
    if len(y) <= cfg.L + 1:
        raise fileio.DataError(f"series has {len(y)} steps; need more than {cfg.L + 1}")
    fitter = fit_arhmm if a.model_kind == "arhmm" else fit_em
    params, trace = fitter(y, cfg)
    fileio.save_model(a.out_model, params)
    if a.out_trace:
        fileio.save_trace(a.out_trace, trace.objective)
    return {"iterations": len(trace.loglik) - 1, "converged": trace.converged,
            "loglik": trace.loglik[-1], "monotone": trace.is_monotone()}


def _truth_tensors(truth, L):
    if isinstance(truth, LdsParams):
        return lds.truncated_kalman_coeffs(lds.solve_dare(truth), truth, L)[0][None]
    return truth.tensors()


def evaluate(model, y=None, truth=None, true_states=None):
    """Build an :class:`EvalReport` for a fitted or converted model."""
    rep = EvalReport()
    extra = {}
    if y is not None:
        if isinstance(model, LdsParams):
            ss = lds.solve_dare(model)
            ll = lds.kalman_log_likelihoods(ss, model, y)
            rep.per_frame_loglik = float(ll.mean())
            rep.explained_variance = explained_variance(
                lds.steady_state_predictions(ss, model, y), y)
        else:
            if len(y) <= model.L:
                raise fileio.DataError(f"series has {len(y)} steps; model needs more than {model.L}")
            X, Y = lag_design(y, model.L)
            A = model.tensors()
            post = forward_backward(dense_log_likelihoods(A, model.b, model.Sigma, X, Y), model.tm)
            rep.per_frame_loglik = per_frame_loglik(post.log_marginal, len(Y))
            means = np.einsum("hnp,tp->thn", A.reshape(model.H, model.N, -1), X) + model.b[None]
            pred = np.einsum("th,thn->tn", post.predicted, means)
            rep.explained_variance = explained_variance(pred, Y)
            if true_states is not None:
                path = viterbi(dense_log_likelihoods(A, model.b, model.Sigma, X, Y), model.tm)
                truth_s = np.asarray(true_states)[model.L:]
                if len(truth_s) != len(path):
                    raise fileio.DataError(f"{len(true_states)} true states for {len(y)} steps")
                H = max(model.H, int(truth_s.max()) + 1)
                acc, conf = segmentation_accuracy(path, truth_s, H)
                rep.seg_accuracy, rep.confusion = acc, conf.tolist()
                rep.permutation = align_states(conf).tolist()
        if truth is not None and isinstance(truth, LdsParams) and not isinstance(model, LdsParams):
            ss = lds.solve_dare(truth)
            extra["truth_per_frame_loglik"] = float(
                lds.kalman_log_likelihoods(ss, truth, y)[model.L:].mean())
    if truth is not None and not isinstance(model, LdsParams):
        T_true = _truth_tensors(truth, model.L)
        perm = rep.permutation if rep.permutation is not None and len(T_true) == model.H else None
        rep.tensor_mse = tensor_mse(model.tensors(), T_true, perm)
    return {**rep.to_dict(), **extra}


def _eval(a):
    model = fileio.load_model(a.model)
    y = fileio.load_series(a.data) if a.data else None
    truth = fileio.load_model(a.truth_model) if a.truth_model else None
    states = fileio.load_states(a.truth_states) if a.truth_states else None
    if states is not None and y is None:
        raise UsageError("--truth-states needs --data")
    report = evaluate(model, y, truth, states)
    if a.out:
        fileio.save_json(a.out, report)
    else:
        sys.stdout.write(json.dumps(report, indent=1) + "\n")
    return None


def _lds2salt(a):
    p = _load_kind(a.lds, LdsParams)
    m = lds.lds_to_salt(p, a.lags, a.mode)
    fileio.save_model(a.out, m)
    return {"rank": m.D}


def _filters(a):
    m = _load_kind(a.model, SaltParams)
    pairs = _pairs(a.pairs)
    try:
        cols = [ar_filter(m, a.state, pq) for pq in pairs]
    except IndexError as exc:
        raise UsageError(str(exc)) from exc
    header = ["lag"] + [f"p{p}_q{q}" for p, q in pairs]
    rows = [[l + 1] + [float(c[l]) for c in cols] for l in range(m.L)]
    fileio.save_table(a.out, header, rows)
    return None


def _rank_sweep(a):
    y = fileio.load_series(a.data)
    truth = _load_kind(a.truth_model, LdsParams)
    y_test = fileio.load_series(a.test_data) if a.test_data else None
    target = _truth_tensors(truth, a.lags)
    rows = []
    for mode in a.modes.split(","):
        if mode not in ("tucker", "cp"):
            raise UsageError(f"unknown mode {mode!r}")
        for D in _ranks(a.tucker_ranks if mode == "tucker" else a.cp_ranks):
            cfg = FitConfig(H=1, D=D, L=a.lags, mode=mode, max_iters=a.iters, rel_tol=a.tol,
                            seed=a.seed, init=a.init)
            params, trace = fit_em(y, cfg)
            test = evaluate(params, y_test)["per_frame_loglik"] if y_test is not None else ""
            rows.append([mode, D, tensor_mse(params.tensors(), target),
                         per_frame_loglik(trace.loglik[-1], len(y) - a.lags), test,
                         len(trace.loglik) - 1, int(trace.converged), int(trace.is_monotone())])
    fileio.save_table(a.out, ["mode", "rank", "tensor_mse", "train_loglik", "test_loglik",
                              "iterations", "converged", "monotone"], rows)
    return None


COMMANDS = {"simulate": _simulate, "fit": _fit, "eval": _eval, "lds2salt": _lds2salt,
            "filters": _filters, "rank-sweep": _rank_sweep}


def _fail(code, kind, exc):
    sys.stderr.write(json.dumps({"error": kind, "type": type(exc).__name__,
                                 "message": str(exc)}) + "\n")
    return code


def main(argv=None):
    try:
        args = build_parser().parse_args(argv)
        summary = COMMANDS[args.command](args)
    except UsageError as exc:
        return _fail(EXIT_USAGE, "usage", exc)
    except (FitError, lds.RiccatiConvergenceError, np.linalg.LinAlgError,
            FloatingPointError) as exc:
        return _fail(EXIT_NUMERIC, "numerical", exc)
    except (fileio.DataError, ShapeError, lds.UnstableSystemError, ValueError, OSError) as exc:
        return _fail(EXIT_DATA, "data", exc)
    if summary:
        sys.stderr.write(json.dumps(summary) + "\n")
    return 0


if __name__ == "__main__":
    sys.exit(main())
