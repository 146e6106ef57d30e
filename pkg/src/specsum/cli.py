"""Command-line interface: ``specsum {estimate,compare,gadget,bench}``.

Exit codes: 0 success, 2 bad input, 3 guard refusal, 4 failed internal check.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
import time
from dataclasses import dataclass, field, replace

import numpy as np

from . import estimator as est
from . import gadgets, local_ham, oracle, polyapprox, reference
from .errors import CheckError, GuardError, InputError

TARGETS = {
    "logdet": "logdet",
    "trinv": "trace-inverse",
    "power": "trace-power",
    "partition": "partition",
    "trace": "normalized-trace",
    "poly": "poly-trace",
}
BENCH_HEADER = [
    "target", "method", "s", "kappa_or_p", "eps", "degree", "samples",
    "queries", "elapsed_ms", "value", "exact", "abs_err",
]
EXIT_INPUT, EXIT_GUARD, EXIT_CHECK = 2, 3, 4


@dataclass
class RunConfig:
    command: str
    target: str | None = None
    file: str | None = None
    family: str | None = None
    gadget: str | None = None
    hamiltonian: str | None = None
    n: int = 6
    kappa: float | None = None
    bandwidth: int = 1
    family_seed: int = 0
    lambda_min: float | None = None
    lambda_max: float | None = None
    beta: float = 1.0
    p: int = 1
    poly: str | None = None
    eps: float = 0.05
    delta: float = 1e-3
    method: str = "taylor"
    seed: int = 0
    seeds: int = 1
    workers: int = 1
    samples: int | None = None
    out: str | None = None
    format: str = "json"
    log10: bool = False
    timing: bool = True
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        sources = [s for s in (self.file, self.family, self.gadget, self.hamiltonian) if s]
        if self.command in ("estimate", "compare") and len(sources) != 1:
            raise InputError("give exactly one matrix source: --file, --family, --gadget or --hamiltonian")


# -- sources -------------------------------------------------------------------


def _bounds(cfg: RunConfig, default):
    if cfg.lambda_min is not None or cfg.lambda_max is not None:
        lo = cfg.lambda_min if cfg.lambda_min is not None else (default.lambda_min if default else None)
        hi = cfg.lambda_max if cfg.lambda_max is not None else (default.lambda_max if default else 1.0)
        if lo is None:
            raise InputError("--lambda-max needs --lambda-min")
        return oracle.SpectralBounds(lo, hi)
    if cfg.kappa is not None and cfg.family is None:
        return oracle.SpectralBounds.from_kappa(cfg.kappa)
    return default


def build_source(cfg: RunConfig):
    """``(matrix, bounds)``; the matrix is a MatrixOracle or a LocalHamiltonian."""
    if cfg.file:
        A = oracle.load_matrix_file(cfg.file)
        return A, _bounds(cfg, A.bounds)
    if cfg.family:
        params = {"kappa": cfg.kappa if cfg.kappa is not None else 4.0,
                  "seed": cfg.family_seed, "bandwidth": cfg.bandwidth}
        A = oracle.synth_family(cfg.family, cfg.n, params)
        return A, _bounds(cfg, A.bounds)
    if cfg.gadget:
        g = gadgets.load_gadget(cfg.gadget)
        A = oracle.product_oracle(gadgets.build_block_matrix(g).rescaled())
        floor = 1.0 / (2 * (g.T + 1))
        return A, _bounds(cfg, oracle.SpectralBounds(floor**2, 1.0))
    H = local_ham.load_local_hamiltonian(cfg.hamiltonian)
    return H, _bounds(cfg, None)


def _request(cfg: RunConfig, seed: int | None = None) -> est.EstimateRequest:
    return est.EstimateRequest(
        TARGETS[cfg.target], cfg.eps, cfg.delta, cfg.method,
        cfg.seed if seed is None else seed, cfg.samples, cfg.workers,
    )


def run_estimate(cfg: RunConfig, matrix, bounds, seed=None, cache=None) -> est.EstimateReport:
    req = _request(cfg, seed)
    t = cfg.target
    if isinstance(matrix, local_ham.LocalHamiltonian):
        cache = cache if isinstance(cache, local_ham.SequenceCache) else None
        if t == "logdet":
            return local_ham.estimate_local_logdet(matrix, bounds, req, cache=cache)
        if t == "trinv":
            return local_ham.estimate_local_trace_inverse(matrix, bounds, req, cache=cache)
        if t == "partition":
            return local_ham.estimate_local_partition(matrix, cfg.beta, req, cache=cache)
        raise InputError(f"target {t!r} is not available for local Hamiltonians")
    cache = cache if isinstance(cache, est.PowerCache) else None
    params = {"bounds": bounds, "p": cfg.p, "beta": cfg.beta}
    if t == "poly":
        if not cfg.poly:
            raise InputError("target poly needs --poly FILE")
        params["poly"] = polyapprox.load_poly(cfg.poly)
    return est.estimate(matrix, req, cache=cache, **params)


def exact_value(cfg: RunConfig, matrix, spectrum=None) -> float:
    """Normalized ground truth from the dense eigensolver."""
    if isinstance(matrix, local_ham.LocalHamiltonian):
        M = matrix.to_dense(original=True)
    else:
        M = matrix.to_dense()
    N = M.shape[0]
    if spectrum is None:
        spectrum = reference.eig_hermitian(M, vectors=False)
    t = cfg.target
    if t == "logdet":
        s = reference.exact_spectral_sum(M, "log", spectrum)
    elif t == "trinv":
        s = reference.exact_spectral_sum(M, "inverse", spectrum)
    elif t == "power":
        s = reference.exact_spectral_sum(M, "power", spectrum, p=cfg.p)
    elif t == "partition":
        s = reference.exact_spectral_sum(M, "exp", spectrum, beta=cfg.beta)
    elif t == "trace":
        s = reference.exact_spectral_sum(M, "power", spectrum, p=1)
    else:
        s = reference.exact_spectral_sum(M, "poly", spectrum, poly=polyapprox.load_poly(cfg.poly))
    return s / N


def _display(cfg: RunConfig, d: dict) -> dict:
    if cfg.log10 and cfg.target == "logdet":
        for key in ("value", "exact", "abs_err"):
            if key in d and d[key] is not None:
                d[key] = d[key] / math.log(10)
        d["log_base"] = 10
    return d


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _emit(cfg: RunConfig, payload, rows=None) -> None:
    if cfg.format == "csv" and rows is not None:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        for r in rows:
            w.writerow(r)
        text = buf.getvalue()
    else:
        text = json.dumps(payload, default=_json_default) + "\n"
    if cfg.out:
        with open(cfg.out, "w") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_estimate(cfg: RunConfig) -> int:
    matrix, bounds = build_source(cfg)
    rep = run_estimate(cfg, matrix, bounds)
    d = _display(cfg, rep.to_dict(cfg.timing))
    _emit(cfg, d, [list(d.keys()), list(d.values())])
    return 0


def cmd_compare(cfg: RunConfig) -> int:
    matrix, bounds = build_source(cfg)
    exact = exact_value(cfg, matrix)
    if cfg.seeds <= 1:
        rep = run_estimate(cfg, matrix, bounds)
        d = rep.to_dict(cfg.timing)
        d["exact"] = exact
        d["abs_err"] = abs(rep.value - exact)
        d["pass"] = d["abs_err"] <= cfg.eps
        d = _display(cfg, d)
        _emit(cfg, d, [list(d.keys()), list(d.values())])
        return 0
    cache = local_ham.SequenceCache() if isinstance(matrix, local_ham.LocalHamiltonian) else est.PowerCache()
    hits, worst = 0, 0.0
    for k in range(cfg.seeds):
        rep = run_estimate(cfg, matrix, bounds, seed=cfg.seed + k, cache=cache)
        err = abs(rep.value - exact)
        worst = max(worst, err)
        hits += err <= cfg.eps
    need = 1 - cfg.delta - 0.02
    d = {
        "target": TARGETS[cfg.target], "method": cfg.method, "eps": cfg.eps, "delta": cfg.delta,
        "seeds": cfg.seeds, "first_seed": cfg.seed, "exact": exact, "within_eps": hits,
        "coverage": hits / cfg.seeds, "required": need, "max_abs_err": worst,
        "pass": hits / cfg.seeds >= need,
    }
    _emit(cfg, d, [list(d.keys()), list(d.values())])
    return 0


def gadget_checks(g: gadgets.CircuitGadget, s: int | None, t: int | None, sweep) -> dict:
    """Verification suite for one gadget; every entry has a ``pass`` flag."""
    A = gadgets.build_block_matrix(g)
    D = A.to_dense()
    checks = {}
    inv = gadgets.closed_form_inverse(g)
    err = float(np.max(np.abs(D @ inv - np.eye(D.shape[0]))))
    dense_err = float(np.max(np.abs(reference.dense_inverse(D) - inv)))
    checks["inverse"] = {"identity_err": err, "dense_err": dense_err, "pass": err <= 1e-9 and dense_err <= 1e-9}
    s = 0 if s is None else s
    t = g.T * g.N if t is None else t
    det = gadgets.build_det_gadget(g, s, t)
    got = reference.dense_determinant(det.unscaled.to_dense())
    mdl = abs(got - det.predicted_det)
    checks["determinant"] = {
        "s": s, "t": t, "det": [got.real, got.imag],
        "predicted": [det.predicted_det.real, det.predicted_det.imag],
        "err": mdl, "pass": mdl <= 1e-9,
    }
    lam = reference.eig_hermitian(oracle.product_oracle(A).to_dense(), vectors=False).values
    lhs = math.fsum(np.log(lam).tolist())
    rhs = 2 * math.log(abs(reference.dense_determinant(D)))
    checks["psd_reduction"] = {"logdet_AAdag": lhs, "two_log_abs_det": rhs, "pass": abs(lhs - rhs) <= 1e-8}
    sv = np.sqrt(np.clip(reference.eig_hermitian(
        oracle.product_oracle(A.rescaled()).to_dense(), vectors=False).values, 0, None))
    floor = 1.0 / (2 * (g.T + 1))
    checks["singular_window"] = {
        "sigma_min": float(sv[0]), "sigma_max": float(sv[-1]), "floor": floor,
        "pass": sv[0] >= floor - 1e-9 and sv[-1] <= 1 + 1e-9,
    }
    if sweep:
        reps = gadgets.brandao_sweep(g, [(J, J) for J in sweep])
        dist = [r.distance for r in reps]
        checks["brandao_sweep"] = {
            "mu_reject": reps[0].mu_reject,
            "rows": [{"J": J, "low_mean": r.low_mean, "distance": r.distance,
                      "lambda_below": r.lambda_below, "lambda_above": r.lambda_above, "gap": r.gap}
                     for J, r in zip(sweep, reps)],
            "pass": dist[-1] < min(dist[:-1], default=math.inf) and all(r.gap > 0 for r in reps),
        }
    return checks


def cmd_gadget(cfg: RunConfig) -> int:
    if cfg.gadget:
        g = gadgets.load_gadget(cfg.gadget)
    else:
        n, T = cfg.extras["random"]
        g = gadgets.random_gadget(n, T, np.random.default_rng(cfg.seed))
    checks = gadget_checks(g, cfg.extras.get("s"), cfg.extras.get("t"), cfg.extras.get("sweep"))
    ok = all(c["pass"] for c in checks.values())
    payload = {"gadget": repr(g), "checks": checks, "pass": ok}
    _emit(cfg, payload, [["check", "pass"]] + [[k, v["pass"]] for k, v in checks.items()])
    return 0 if ok else EXIT_CHECK


def _parse_list(text: str, kind=float):
    return [kind(v) for v in text.split(",") if v.strip()]


def _planned_degree(cfg: RunConfig, kappa) -> int | str:
    """Degree the driver would have used, for rows whose run was refused."""
    try:
        return est.target_polynomial(TARGETS[cfg.target], cfg.method, kappa, cfg.eps).degree
    except (InputError, GuardError):
        return ""


def cmd_bench(cfg: RunConfig) -> int:
    x = cfg.extras
    rows = [BENCH_HEADER]
    family = cfg.family or "shifted-laplacian-ring"
    grid = []
    for target in x["targets"]:
        if target == "power":
            A = oracle.synth_family(family, cfg.n, {"kappa": x["kappas"][0], "seed": cfg.family_seed,
                                                    "bandwidth": cfg.bandwidth})
            grid += [(target, A, p, {"p": p}) for p in x["ps"]]
        else:
            for kappa in x["kappas"]:
                A = oracle.synth_family(family, cfg.n, {"kappa": kappa, "seed": cfg.family_seed,
                                                        "bandwidth": cfg.bandwidth})
                grid.append((target, A, kappa, {}))
    spectra = {}
    for target, A, knob, extra in grid:
        if id(A) not in spectra:
            spectra[id(A)] = reference.eig_hermitian(A.to_dense(), vectors=False) if A.dim <= 256 else None
        for method in x["methods"]:
            for eps in x["eps"]:
                sub = replace(cfg, target=target, method=method, eps=eps, p=extra.get("p", cfg.p),
                              family=family)
                t0 = time.perf_counter()
                try:
                    rep = run_estimate(sub, A, A.bounds)
                except GuardError as exc:
                    ms = 1000 * (time.perf_counter() - t0)
                    rows.append([target, method, A.sparsity, knob, eps, _planned_degree(sub, knob), "", "",
                                 f"{ms:.3f}" if cfg.timing else "0", f"refused: {type(exc).__name__}", "", ""])
                    continue
                exact = exact_value(sub, A, spectra[id(A)]) if spectra[id(A)] is not None else None
                rows.append([
                    target, method, A.sparsity, knob, eps, rep.degree, rep.samples, rep.queries,
                    f"{rep.elapsed_ms:.3f}" if cfg.timing else "0", repr(rep.value),
                    "" if exact is None else repr(exact),
                    "" if exact is None else repr(abs(rep.value - exact)),
                ])
    payload = [dict(zip(BENCH_HEADER, r)) for r in rows[1:]]
    if cfg.format == "json":
        _emit(cfg, payload)
    else:
        _emit(cfg, None, rows)
    return 0


# -- argument parsing ----------------------------------------------------------


def _source_args(p: argparse.ArgumentParser) -> None:
    src = p.add_argument_group("matrix source (exactly one)")
    src.add_argument("--file", help="HERM matrix file")
    src.add_argument("--family", choices=oracle.FAMILIES, help="synthetic matrix family")
    src.add_argument("--gadget", help="GADGET file; estimates run on (A/2)(A/2)^dagger")
    src.add_argument("--hamiltonian", help="LOCALHAM file (local estimator)")
    p.add_argument("--n", type=int, default=6, help="qubits for --family (N = 2**n)")
    p.add_argument("--kappa", type=float, help="family condition parameter, or spectrum in [1/kappa, 1]")
    p.add_argument("--bandwidth", type=int, default=1, help="banded-random half bandwidth")
    p.add_argument("--family-seed", type=int, default=0, help="seed of the random family instance")
    p.add_argument("--lambda-min", type=float, help="declared smallest eigenvalue")
    p.add_argument("--lambda-max", type=float, help="declared largest eigenvalue")


def _estimate_args(p: argparse.ArgumentParser, with_target: bool = True) -> None:
    if with_target:
        p.add_argument("target", choices=sorted(TARGETS))
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--p", type=int, default=1, help="exponent for target power")
    p.add_argument("--poly", help="POLY file for target poly")
    p.add_argument("--eps", type=float, default=0.05)
    p.add_argument("--delta", type=float, default=1e-3)
    p.add_argument("--method", choices=est.METHODS, default="taylor")
    p.add_argument("--samples", type=int, help="override the Hoeffding sample count")
    _common(p)


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--out", help="write the report here instead of stdout")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.add_argument("--no-timing", dest="timing", action="store_false",
                   help="report elapsed_ms as 0 so output is byte-reproducible")


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="specsum", description="Sampling estimators for normalized spectral sums.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("estimate", help="estimate a normalized spectral sum")
    _source_args(p)
    _estimate_args(p)
    p.add_argument("--log10", action="store_true", help="display logdet in base 10")

    p = sub.add_parser("compare", help="estimate and compare against the dense reference")
    _source_args(p)
    _estimate_args(p)
    p.add_argument("--seeds", type=int, default=1, help="run this many consecutive seeds and report coverage")
    p.add_argument("--log10", action="store_true")

    p = sub.add_parser("gadget", help="build a circuit gadget and verify its identities")
    p.add_argument("--gadget", help="GADGET file")
    p.add_argument("--random", nargs=2, type=int, metavar=("N_QUBITS", "T"), help="random gadget instead of a file")
    p.add_argument("--s", type=int, help="row index of the rank-one update (default 0)")
    p.add_argument("--t", type=int, help="column index (default T * 2**n)")
    p.add_argument("--sweep", default="1,4,16,64", help="J_in = J_prop values; empty to skip")
    _common(p)

    p = sub.add_parser("bench", help="degree/query/time sweep, taylor vs chebyshev")
    p.add_argument("--family", choices=oracle.FAMILIES, default="shifted-laplacian-ring")
    p.add_argument("--n", type=int, default=6)
    p.add_argument("--bandwidth", type=int, default=1)
    p.add_argument("--family-seed", type=int, default=0)
    p.add_argument("--targets", default="logdet,trinv,power")
    p.add_argument("--methods", default="taylor,chebyshev")
    p.add_argument("--kappas", default="4,16,64")
    p.add_argument("--ps", default="10,50,100")
    p.add_argument("--eps", default="0.05")
    p.add_argument("--delta", type=float, default=1e-3)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--samples", type=int, default=1000,
                   help="fixed sample count per run (0 = Hoeffding count)")
    _common(p)
    p.set_defaults(format="csv")
    return ap


def config_from_args(ns: argparse.Namespace) -> RunConfig:
    d = vars(ns).copy()
    cmd = d.pop("command")
    extras = {}
    if cmd == "gadget":
        if bool(d.get("gadget")) == bool(d.get("random")):
            raise InputError("give exactly one of --gadget or --random")
        extras["random"] = d.pop("random")
        extras["s"], extras["t"] = d.pop("s"), d.pop("t")
        extras["sweep"] = _parse_list(d.pop("sweep"))
    if cmd == "bench":
        extras["targets"] = [t for t in d.pop("targets").split(",") if t]
        for t in extras["targets"]:
            if t not in ("logdet", "trinv", "power", "partition"):
                raise InputError(f"bench target {t!r} not supported")
        extras["methods"] = [m for m in d.pop("methods").split(",") if m]
        extras["kappas"] = _parse_list(d.pop("kappas"))
        extras["ps"] = _parse_list(d.pop("ps"), int)
        extras["eps"] = _parse_list(d.pop("eps"))
        d["eps"] = extras["eps"][0] if extras["eps"] else 0.05
        if d.get("samples") == 0:
            d["samples"] = None
    d.pop("s", None)
    d.pop("t", None)
    return RunConfig(command=cmd, extras=extras, **d)


COMMANDS = {"estimate": cmd_estimate, "compare": cmd_compare, "gadget": cmd_gadget, "bench": cmd_bench}


def main(argv=None) -> int:
    ap = build_parser()
    try:
        ns = ap.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 2 on bad usage, matching the input-error code
        return exc.code if isinstance(exc.code, int) else EXIT_INPUT
    try:
        cfg = config_from_args(ns)
        return COMMANDS[cfg.command](cfg)
    except GuardError as exc:
        print(f"specsum: refused: {exc}", file=sys.stderr)
        return EXIT_GUARD
    except CheckError as exc:
        print(f"specsum: check failed: {exc}", file=sys.stderr)
        return EXIT_CHECK
    except (InputError, ValueError, IndexError, OSError) as exc:
        print(f"specsum: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
