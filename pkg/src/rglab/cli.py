"""Command-line front end: config resolution, run orchestration and CSV/JSON output.

Every subcommand has a table of options with defaults.  A JSON config file may
set any of them, flags override the file, and unknown keys are rejected.  Each
run writes ``<command>.json`` (resolved config, sha256 config hash, seed,
version and results) and, where the output is tabular, ``<command>.csv`` into
the ``--out`` directory.  Floats are written with 17 significant digits and
JSON keys are sorted, so equal (config, seed) pairs give byte-identical files.

Exit codes: 0 success, 2 validation error, 3 numerical gate failure.
"""

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys

import numpy as np

from . import __version__

EXIT_OK, EXIT_INVALID, EXIT_GATE = 0, 2, 3

INT, FLOAT, STR, FLOATS = "int", "float", "str", "floats"

MODEL = {"d": (INT, 4), "L": (INT, 2), "N": (INT, 3), "n": (INT, 1),
         "m2": (FLOAT, 0.0), "g0": (FLOAT, 0.0), "nu0": (FLOAT, 0.0)}


def _model(**over):
    out = dict(MODEL)
    for k, v in over.items():
        out[k] = (out[k][0], v)
    return out


OPTIONS = {
    "hier": {**_model(m2=0.01), "jmax": (INT, 200)},
    "frd": {"d": (INT, 2), "L": (INT, 2), "m2": (FLOAT, 1.0), "jmax": (INT, 3),
            "scales": (INT, 40), "momenta": (INT, 20), "tol": (FLOAT, 1e-6)},
    "flow": {**_model(g0=0.05), "mu0": (FLOAT, None), "jmax": (INT, 30)},
    "critical": {**_model(g0=0.02), "jmax": (INT, 2000), "bisect_jmax": (INT, 400),
                 "tol": (FLOAT, 1e-8)},
    "chi": {**_model(g0=0.05), "eps": (FLOATS, [1e-2, 1e-3, 1e-4, 1e-5, 1e-6]),
            "ode_eps_min": (FLOAT, 1e-10), "ode_eps_max": (FLOAT, 1e-2), "ode_points": (INT, 41)},
    "nonpert": {**_model(d=1, N=4, m2=1.0, g0=0.1), "engine": (STR, "quadrature"),
                "samples": (INT, 20000), "nodes": (INT, 513)},
    "oracle": {**_model(d=1, N=2, m2=0.3, g0=0.5, nu0=-0.2), "tol": (FLOAT, 1e-6)},
    "meanfield": {"n": (INT, 1), "beta": (FLOATS, [0.5, 0.9, 0.99, 1.01, 1.1, 1.5]),
                  "h": (FLOATS, [0.0, 1e-3, 1e-1]), "phi_max": (FLOAT, 1.5),
                  "phi_points": (INT, 61)},
    "walks": {"graph": (STR, "cycle"), "V": (INT, 4), "w": (FLOAT, 0.3), "v": (FLOAT, 1.0),
              "samples": (INT, 20000), "bubble_d": (FLOATS, [2.0, 3.0, 4.0]),
              "bubble_m2": (FLOAT, 1e-4), "saw_d": (INT, 2), "saw_n": (INT, 10),
              "tol": (FLOAT, 1e-9)},
    "susy-check": {"matrices": (INT, 20), "tol": (FLOAT, 1e-10)},
}
ALIASES = {"g0": ["--g"]}
CHOICES = {"engine": ("quadrature", "mc"), "graph": ("cycle", "complete")}


class ConfigError(Exception):
    pass


class GateFailure(Exception):
    pass


# ---------------------------------------------------------------------------
# configuration


def _parse_floats(s):
    try:
        return [float(t) for t in s.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {s!r}")


def _flag_type(kind):
    return {INT: int, FLOAT: float, STR: str, FLOATS: _parse_floats}[kind]


def build_parser():
    p = argparse.ArgumentParser(prog="rglab")
    p.add_argument("--version", action="version", version=f"rglab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for cmd, opts in OPTIONS.items():
        sp = sub.add_parser(cmd)
        sp.add_argument("--config", default=None, help="JSON config file")
        sp.add_argument("--out", default="out", help="output directory")
        sp.add_argument("--seed", type=int, default=None)
        sp.add_argument("--threads", type=int, default=None)
        for key, (kind, _) in opts.items():
            flags = ["--" + key.replace("_", "-")] + ALIASES.get(key, [])
            sp.add_argument(*flags, dest=key, type=_flag_type(kind), default=None,
                            choices=CHOICES.get(key))
    return p


def _check_value(key, kind, value, where):
    if value is None:
        return None
    if kind == INT:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: field {key!r} must be an integer")
        return value
    if kind == FLOAT:
        if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
            raise ConfigError(f"{where}: field {key!r} must be a finite number")
        return float(value)
    if kind == STR:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: field {key!r} must be a string")
        if key in CHOICES and value not in CHOICES[key]:
            raise ConfigError(f"{where}: field {key!r} must be one of {CHOICES[key]}")
        return value
    if not isinstance(value, list) or not value:
        raise ConfigError(f"{where}: field {key!r} must be a non-empty list of numbers")
    return [_check_value(key, FLOAT, v, where) for v in value]


def load_config_file(path, command):
    """Read and validate a JSON config; reports line and column on syntax errors."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError(f"{path}: cannot read config ({e.strerror})")
    try:
        data = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"{path}: line {e.lineno} column {e.colno}: {e.msg}")
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    opts = OPTIONS[command]
    allowed = set(opts) | {"seed", "threads"}
    out = {}
    for key, value in data.items():
        if key not in allowed:
            raise ConfigError(f"{path}: unknown field {key!r} for {command}")
        kind = INT if key in ("seed", "threads") else opts[key][0]
        out[key] = _check_value(key, kind, value, path)
    return out


def resolve_config(args):
    """Merge defaults, config file and flags (flags win)."""
    cmd = args.command
    cfg = {k: v for k, (_, v) in OPTIONS[cmd].items()}
    cfg["seed"] = 0
    cfg["threads"] = 1
    if args.config is not None:
        cfg.update({k: v for k, v in load_config_file(args.config, cmd).items() if v is not None})
    for key in OPTIONS[cmd]:
        v = getattr(args, key)
        if v is not None:
            cfg[key] = v
    if args.seed is not None:
        cfg["seed"] = args.seed
    env = os.environ.get("RGLAB_THREADS")
    if env is not None:
        try:
            cfg["threads"] = int(env)
        except ValueError:
            raise ConfigError(f"RGLAB_THREADS must be an integer, got {env!r}")
    if args.threads is not None:
        cfg["threads"] = args.threads
    if not 0 <= cfg["seed"] < 2 ** 64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    if cfg["threads"] < 1:
        raise ConfigError("threads must be positive")
    return cfg


def config_hash(cfg):
    blob = json.dumps(cfg, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


def stream_seed(seed, *counter):
    """Per-stream generator seeded from the master seed and a counter tuple."""
    return np.random.default_rng([seed, *counter])


# ---------------------------------------------------------------------------
# output


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def _jsonable(v):
    if isinstance(v, dict):
        return {str(k): _jsonable(x) for k, x in v.items()}
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (int, np.integer)):
        return int(v)
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return v if math.isfinite(v) else str(v)
    if isinstance(v, complex):
        return [v.real, v.imag]
    return v


def csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\r\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(x) for x in r])
    return buf.getvalue()


class Emitter:
    """Collects output files and writes them into the output directory."""

    def __init__(self, outdir, command, cfg):
        self.outdir, self.command, self.cfg = outdir, command, cfg
        self.files = {}

    def csv(self, header, rows, suffix=""):
        self.files[f"{self.command}{suffix}.csv"] = csv_text(header, rows)

    def json(self, results):
        doc = {"command": self.command, "config": self.cfg, "config_hash": config_hash(self.cfg),
               "seed": self.cfg["seed"], "version": f"rglab {__version__}",
               "results": _jsonable(results)}
        self.files[f"{self.command}.json"] = json.dumps(doc, sort_keys=True, indent=2) + "\n"

    def prepare(self):
        """Create the output directory up front so bad paths fail before any work."""
        try:
            os.makedirs(self.outdir, exist_ok=True)
        except OSError as e:
            raise ConfigError(f"cannot create output directory {self.outdir!r}: {e.strerror}")
        if not os.access(self.outdir, os.W_OK):
            raise ConfigError(f"output directory {self.outdir!r} is not writable")

    def write(self):
        try:
            for name, text in self.files.items():
                with open(os.path.join(self.outdir, name), "w", encoding="utf-8", newline="") as fh:
                    fh.write(text)
        except OSError as e:
            raise ConfigError(f"cannot write output to {self.outdir!r}: {e.strerror}")


def _params(cfg):
    from .params import ModelParams
    keys = ("d", "L", "N", "n", "m2", "g0", "nu0")
    return ModelParams(**{k: cfg[k] for k in keys if k in cfg})


def _gate(ok, what):
    if not ok:
        raise GateFailure(what)


# ---------------------------------------------------------------------------
# subcommands


def _hier_dense_check(cfg):
    """Max entrywise gap between the scale sum and (-Δ_H + m2)^{-1} on the box."""
    from .hierarchical import HierGeometry, gamma_j, hier_laplacian_entry
    d, L, N, m2 = cfg["d"], cfg["L"], cfg["N"], cfg["m2"]
    geom = HierGeometry(d, L, N)
    V = geom.volume
    if m2 <= 0 or V > 256:
        return None
    labels = [geom.block_labels(j) for j in range(N + 1)]
    same = [lab[:, None] == lab[None, :] for lab in labels]
    C = np.full((V, V), 1.0 / (m2 * float(L) ** (d * N)))
    for j in range(1, N + 1):
        C += float(gamma_j(j, m2, L)) * (same[j - 1] * float(L) ** (-d * (j - 1))
                                         - same[j] * float(L) ** (-d * j))
    # coalescence scale of each pair; the Laplacian depends on x, y only through it
    jx = np.zeros((V, V), dtype=int)
    for j in range(N, 0, -1):
        jx[same[j] & ~same[j - 1]] = j
    sites = geom.sites()
    lap = np.zeros((V, V))
    for j in range(N + 1):
        mask = jx == j
        x, y = (0, 0) if j == 0 else tuple(np.argwhere(mask)[0])
        lap[mask] = hier_laplacian_entry(tuple(sites[x]), tuple(sites[y]), geom)
    return float(np.max(np.abs(C - np.linalg.inv(-lap + m2 * np.eye(V)))))


def run_hier(cfg, em):
    from .hierarchical import gamma_j, green_diag, hier_bubble, moments, vartheta
    d, L, m2, jmax = cfg["d"], cfg["L"], cfg["m2"], cfg["jmax"]
    _params(cfg)
    rows = []
    for j in range(jmax):
        t = moments(j, m2, d, L)
        rows.append((j, float(t.c), float(t.c2), float(t.c3), float(t.c4),
                     float(gamma_j(j + 1, m2, L)), vartheta(j, m2, L)))
    em.csv(["j", "c", "c2", "c3", "c4", "gamma", "vartheta"], rows)
    res = {"decomposition_error": _hier_dense_check(cfg)}
    if d > 2 or m2 > 0:
        res["green_diag"], res["green_diag_tail"] = green_diag(m2, d, L, jmax)
    if d > 4 or m2 > 0:
        b = hier_bubble(m2, d, L, jmax)
        res["bubble"] = {"value": b.value, "tail_bound": b.tail_bound,
                         "log_ratio": b.log_ratio, "asymptote": b.asymptote}
    em.json(res)
    if res["decomposition_error"] is not None:
        _gate(res["decomposition_error"] < 1e-10, "hierarchical decomposition identity")


def run_frd(cfg, em):
    from .frd import default_profile, frd_slice, lattice_symbol, symbol_scale
    d, L, m2 = cfg["d"], cfg["L"], cfg["m2"]
    if not 1 <= d <= 3:
        raise ConfigError("frd kernels are tabulated for d <= 3")
    if m2 <= 0:
        raise ConfigError("frd needs m2 > 0")
    prof = default_profile()
    rows = []
    outside = 0.0
    for j in range(1, cfg["jmax"] + 1):
        sl = frd_slice(j, d, L, m2, prof)
        outside = max(outside, sl.max_outside_range())
        full = sl.full()
        R = full.shape[0] // 2
        for idx in np.ndindex(full.shape):
            x = tuple(i - R for i in idx)
            if sum(abs(c) for c in x) < L ** j / 2:
                rows.append((j, *x, full[idx]))
    em.csv(["j"] + [f"x{i + 1}" for i in range(d)] + ["value"], rows)
    rng = stream_seed(cfg["seed"], 0)
    ks = rng.uniform(-math.pi, math.pi, size=(cfg["momenta"], d))
    J = cfg["scales"]
    resid = []
    for k in ks:
        tot = sum(float(symbol_scale(j, k, d, L, m2, prof)) for j in range(1, J))
        tot += float(symbol_scale(("tail", J), k, d, L, m2, prof))
        resid.append(abs(tot - 1 / (lattice_symbol(k) + m2)))
    res = {"symbol_residual_max": max(resid), "symbol_residuals": resid,
           "momenta": ks.tolist(), "max_outside_range": outside}
    em.json(res)
    _gate(res["symbol_residual_max"] < cfg["tol"], "FRD symbol sum")
    _gate(outside < 1e-10, "FRD finite range")


FLOW_HEADER = ["j", "g", "mu", "u", "beta", "eta", "xi", "vartheta"]


def run_flow(cfg, em):
    from .pertflow import mu0_backward, run_flow as flow
    p = _params(cfg)
    res = {}
    mu0 = cfg["mu0"]
    if mu0 is None:
        b = mu0_backward(cfg["g0"], cfg["m2"], p)
        mu0 = b.mu0c
        res["mu0c"], res["mu0c_tail_bound"] = b.mu0c, b.tail_bound
    traj = flow(cfg["g0"], mu0, cfg["m2"], p, cfg["jmax"])
    em.csv(FLOW_HEADER, traj.rows())
    res.update({"mu0": mu0, "stop": traj.stop, "reason": traj.reason,
                "g_final": traj.g[traj.stop], "mu_final": traj.mu[traj.stop]})
    em.json(res)


def run_critical(cfg, em):
    from .pertflow import mu0_backward, mu0_bisection, run_flow as flow
    p = _params(cfg)
    b = mu0_backward(cfg["g0"], cfg["m2"], p, jmax=cfg["jmax"])
    bis = mu0_bisection(cfg["g0"], cfg["m2"], p, jmax=cfg["bisect_jmax"])
    traj = flow(cfg["g0"], b.mu0c, cfg["m2"], p, min(cfg["jmax"], b.terms))
    em.csv(FLOW_HEADER, traj.rows())
    diff = abs(b.mu0c - bis)
    em.json({"mu0c_backward": b.mu0c, "mu0c_bisect": bis, "diff": diff,
             "tail_bound": b.tail_bound, "terms": b.terms})
    _gate(diff < cfg["tol"], "critical point dual construction")


def run_chi(cfg, em):
    from .pertflow import amplitude, chi_ode_invert, chi_prediction, gamma_exponent
    p = _params(cfg)
    g = cfg["g0"]
    if g <= 0:
        raise ConfigError("chi needs g0 > 0")
    preds = [chi_prediction(g, e, p) for e in cfg["eps"]]
    em.csv(["eps", "chi_asymptotic", "chi_effective", "m2", "residual"],
           [(c.eps, c.chi_asymptotic, c.chi_effective, c.m2, c.residual) for c in preds])
    gam = gamma_exponent(p.n)
    grid = np.geomspace(cfg["ode_eps_min"], cfg["ode_eps_max"], cfg["ode_points"])
    ode = chi_ode_invert(gam, 1 / amplitude(g, p), grid)
    res = {"gamma": gam, "ode_exponent": ode.exponent, "ode_naive_exponent": ode.naive_exponent}
    if len(preds) >= 2:
        x = np.log(np.log([1 / c.eps for c in preds]))
        y = np.log([c.eps * c.chi_effective for c in preds])
        res["effective_exponent"] = float(np.polyfit(x, y, 1)[0])
    em.json(res)


def run_nonpert(cfg, em):
    from .nonpert import chi_finite_volume, extract_couplings, progressive_flow, u4bar
    p = _params(cfg)
    if cfg["engine"] == "quadrature" and p.n != 1:
        raise ConfigError("the quadrature engine needs n = 1")
    traj = progressive_flow(p, engine=cfg["engine"], seed=cfg["seed"], samples=cfg["samples"],
                            nodes=cfg["nodes"])
    rows, flagged = [], []
    for j, F in enumerate(traj):
        u, nu, g = extract_couplings(F, j, p)
        rows.append((j, F.R, u, nu, g))
        flagged += [[j, int(k)] for k in F.info.get("flagged", [])]
    em.csv(["j", "R", "u", "nu", "g"], rows)
    res = {"flagged_nodes": flagged}
    if p.m2 > 0:
        res["chi_N"] = chi_finite_volume(traj, p.m2, p)
        res["u4bar"], res["g_ren"] = u4bar(traj[-1], p.m2, p)
    em.json(res)
    _gate(all(math.isfinite(r[k]) for r in rows for k in (2, 3, 4)), "finite couplings")


def run_oracle(cfg, em):
    from .nonpert import oracle_chi
    p = _params(cfg)
    if p.m2 <= 0:
        raise ConfigError("oracle needs m2 > 0")
    o = oracle_chi(p)
    em.json({"direct": o.direct, "progressive": o.progressive, "rel_diff": o.rel_diff})
    _gate(o.rel_diff < cfg["tol"], "oracle equivalence")


def run_meanfield(cfg, em):
    from .meanfield import (MeanFieldState, fixed_point_residual, potential_hessian_min,
                            renorm_potential, solve_magnetisation, susceptibility)
    n = cfg["n"]
    rows = []
    worst = 0.0
    for beta in cfg["beta"]:
        for h in cfg["h"]:
            st = MeanFieldState(n, beta, h)
            phi0 = solve_magnetisation(st)
            worst = max(worst, fixed_point_residual(phi0, st))
            chi = susceptibility(st)
            rows.append((beta, 1 / beta, h, phi0, chi, potential_hessian_min(phi0, st)))
    em.csv(["beta", "T", "h", "phi0", "chi", "V_curvature"], rows)
    phis = np.linspace(-cfg["phi_max"], cfg["phi_max"], cfg["phi_points"])
    vrows = [(beta, h, x, renorm_potential(x, MeanFieldState(n, beta, h)))
             for beta in cfg["beta"] for h in cfg["h"] for x in phis]
    em.csv(["beta", "h", "phi", "V"], vrows, suffix="_potential")
    em.json({"beta_c": float(n), "max_fixed_point_residual": worst})
    _gate(worst < 1e-12, "mean-field fixed point")


def run_walks(cfg, em):
    from .walks_susy import (WeightedGraph, ctrw_feynman_kac, euclid_bubble,
                             resolvent_walk_sum, saw_bounds_check, saw_count)
    make = WeightedGraph.cycle if cfg["graph"] == "cycle" else WeightedGraph.complete
    G = make(cfg["V"], cfg["w"], cfg["v"])
    dense = G.dense_inverse()
    walk, tail = resolvent_walk_sum(G)
    err = float(np.max(np.abs(walk - dense)))
    mc, se = ctrw_feynman_kac(G, 0, 0, seed=int(stream_seed(cfg["seed"], 1).integers(2 ** 63)),
                              samples=cfg["samples"])
    bubbles = {}
    for d in cfg["bubble_d"]:
        b = euclid_bubble(cfg["bubble_m2"], int(d))
        bubbles[str(int(d))] = {"value": b.value, "scaled": b.scaled, "asymptote": b.asymptote}
    counts = saw_count(cfg["saw_d"], cfg["saw_n"])
    em.csv(["n", "c_n"], list(enumerate(counts)))
    em.json({"resolvent_error": err, "resolvent_tail": tail,
             "feynman_kac": {"mean": mc, "se": se, "exact": dense[0, 0],
                             "z": (mc - dense[0, 0]) / se if se > 0 else 0.0},
             "bubble": bubbles, "saw_bounds": saw_bounds_check(counts, cfg["saw_d"])})
    _gate(err < cfg["tol"], "resolvent walk sum")


def run_susy(cfg, em):
    from .walks_susy import identity_suite
    res = identity_suite(seed=cfg["seed"], matrices=cfg["matrices"])
    em.csv(["identity", "residual"], sorted(res.items()))
    em.json(res)
    sys.stdout.write("".join(f"{k:14s} {_fmt(v)}\n" for k, v in sorted(res.items())))
    _gate(all(v < cfg["tol"] for v in res.values()), "identity suite")


COMMANDS = {"hier": run_hier, "frd": run_frd, "flow": run_flow, "critical": run_critical,
            "chi": run_chi, "nonpert": run_nonpert, "oracle": run_oracle,
            "meanfield": run_meanfield, "walks": run_walks, "susy-check": run_susy}


def dispatch(argv=None):
    """Parse ``argv``, run the subcommand and return the exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_INVALID if e.code else EXIT_OK
    code = EXIT_OK
    try:
        cfg = resolve_config(args)
        em = Emitter(args.out, args.command, cfg)
        em.prepare()
        try:
            COMMANDS[args.command](cfg, em)
        except GateFailure as e:
            print(f"rglab: numerical gate failed: {e}", file=sys.stderr)
            code = EXIT_GATE
        em.write()
    except (ConfigError, ValueError) as e:
        print(f"rglab: error: {e}", file=sys.stderr)
        return EXIT_INVALID
    return code


def main():
    sys.exit(dispatch())
