"""Experiment runner: build a coupling from JSON, estimate, bound, report.

Subcommands
-----------
* ``run <config.json>``: execute the configured tasks, write CSV/JSON rows.
* ``sweep <template.json> <grid.json>``: one run per grid point, long CSV.
* ``list-couplings``: registry of JSON-constructible couplings.
* ``selftest``: enumeration oracle suite plus a chunked-MC determinism probe.

Exit codes: 0 ok, 2 config error, 3 numeric error, 4 selftest failure.

Output rows carry the fixed columns (experiment_id, coupling, n, seed,
metric, value, ci, bound, flags, version, config); floats are printed with
%.17g so output is byte-identical for identical (config, seed, chunk_size,
worker_count), and chunk-keyed RNG streams make results invariant to the
worker count (STEINCOUPLINGS_WORKERS).
"""

from __future__ import annotations

import argparse
import json
import math
import sys

import numpy as np

from . import __version__
from . import couplings as cpl
from .applications import (
    GeometryInstance,
    GraphInstance,
    HoeffdingInstance,
    OccupancyInstance,
    geometry_coupling,
    graph_coupling,
    hoeffding_variant1,
    hoeffding_variant2,
    hoeffding_variant3,
    occupancy_coupling,
    occupancy_statistics_library,
)
from .applications.geometry import isolation_indicator
from .applications.graphs import graph_statistics_library
from .core import (
    ChunkedRunner,
    DataError,
    InvalidParameterError,
    TruncationParams,
    UnsupportedCouplingError,
    default_family,
    moment_probe,
    stein_residual,
    try_enumerate,
)
from .estimation import (
    ConditionalConcentration,
    ErrorTermReport,
    bound_corollary1,
    bound_corollary2,
    bound_corollary4,
    bound_corollary5,
    bound_theorem1,
    bound_theorem2,
    bound_theorem3,
    bound_theorem4,
    estimate_conditional_terms,
    estimate_r7_r8,
    estimate_r11_r12,
    estimate_truncated_terms,
    estimate_unconditional_terms,
    graph_bound,
    hoeffding_bound,
    occupancy_bound,
)
from .metrics import empirical_dk, empirical_dw
from .recursion import RecursionProblem, lemma1_solve
from .zero_bias import zero_bias_density

VERSION_STRING = f"steincouplings-{__version__}"

CSV_COLUMNS = [
    "experiment_id",
    "coupling",
    "n",
    "seed",
    "metric",
    "value",
    "ci",
    "bound",
    "flags",
    "version",
    "config",
]


class ConfigError(ValueError):
    pass


def _require_keys(obj: dict, allowed: dict, where: str) -> None:
    if not isinstance(obj, dict):
        raise ConfigError(f"{where} must be an object")
    for k in obj:
        if k not in allowed:
            raise ConfigError(f"unknown key {k!r} in {where}")
    for k, required in allowed.items():
        if required and k not in obj:
            raise ConfigError(f"missing required key {k!r} in {where}")


# ---------------------------------------------------------------------------
# Coupling registry
# ---------------------------------------------------------------------------


def _summand_from(params: dict) -> cpl.DiscreteSummand:
    params = params or {"kind": "rademacher"}
    _require_keys(params, {"kind": True, "values": False, "probs": False, "n": False}, "summand")
    if params["kind"] == "rademacher":
        return None  # resolved against n by the caller
    if params["kind"] == "discrete":
        return cpl.DiscreteSummand(tuple(params["values"]), tuple(params["probs"]))
    raise ConfigError(f"unknown summand kind {params['kind']!r}")


def _build_indep_sum(params, which):
    _require_keys(params, {"n": True, "summand": False}, "coupling.params")
    n = int(params["n"])
    summand = _summand_from(params.get("summand")) or cpl.rademacher_summand(n)
    spec = cpl.IndependentSumSpec(n, summand)
    return {
        "deletion": cpl.indep_sum_deletion,
        "replacement": cpl.indep_sum_replacement,
        "duplication": cpl.indep_sum_duplication,
    }[which](spec)


def _build_two_runs(params):
    _require_keys(params, {"n": True, "p": True, "g_variant": False}, "coupling.params")
    return cpl.two_runs_coupling(int(params["n"]), float(params["p"]), params.get("g_variant", "27c"))


def _build_curie_weiss(params):
    _require_keys(
        params,
        {"n": True, "beta": True, "h": False, "burnin": False, "thin": False, "variant": False},
        "coupling.params",
    )
    return cpl.curie_weiss_coupling(
        int(params["n"]),
        float(params["beta"]),
        float(params.get("h", 0.0)),
        params.get("burnin"),
        params.get("thin"),
        params.get("variant", "exact"),
    )


def _build_poisson_chain(params):
    _require_keys(
        params, {"kernel": True, "phi": True, "variant": False, "t_max": False}, "coupling.params"
    )
    spec = cpl.FiniteChainSpec(
        np.array(params["kernel"], dtype=float),
        np.array(params["phi"], dtype=float),
        int(params.get("t_max", 10_000)),
    )
    return cpl.poisson_equation_coupling(spec, params.get("variant", "linear_solve"))


def _build_local_dependence(params, decomposable=False):
    _require_keys(params, {"n": True}, "coupling.params")
    n = int(params["n"])
    src = cpl.MovingProductSource(n)
    hoods = cpl.DependencyNeighborhoods.m_dependent(n, 1, sigma=np.eye(n) / n)
    if decomposable:
        return cpl.decomposable_coupling(src, hoods)
    return cpl.local_dependence_coupling(src, hoods)


def _build_quadratic(params):
    _require_keys(params, {"matrix": True}, "coupling.params")
    return cpl.quadratic_form_coupling(np.array(params["matrix"], dtype=float))


def _build_size_bias(params):
    _require_keys(params, {"distribution": True, "n": False, "p": True}, "coupling.params")
    if params["distribution"] == "bernoulli":
        return cpl.size_bias_bernoulli(float(params["p"]))
    if params["distribution"] == "binomial":
        return cpl.size_bias_binomial(int(params["n"]), float(params["p"]))
    raise ConfigError("size_bias distribution must be 'bernoulli' or 'binomial'")


def _build_interpolation(params):
    _require_keys(params, {"n": True, "functional": False}, "coupling.params")
    n = int(params["n"])
    name = params.get("functional", "sum")
    if name == "sum":
        func = lambda x: float(np.sum(x))  # noqa: E731
    elif name == "max":
        func = lambda x: float(np.max(x))  # noqa: E731
    else:
        raise ConfigError("interpolation functional must be 'sum' or 'max'")
    return cpl.interpolation_coupling(func, n, summand=cpl.rademacher_summand(n))


def _hoeffding_instance(params) -> HoeffdingInstance:
    kind = params.get("kind", "corner3")
    if params.get("matrix") is not None:
        return HoeffdingInstance(np.array(params["matrix"], dtype=float), normalize=True)
    if kind == "corner3":
        return HoeffdingInstance.corner3()
    if kind == "random":
        return HoeffdingInstance.random(int(params["n"]), int(params.get("matrix_seed", 0)))
    raise ConfigError("hoeffding kind must be 'corner3' or 'random' (or give a matrix)")


def _build_hoeffding(params):
    _require_keys(
        params,
        {"variant": True, "kind": False, "matrix": False, "n": False, "matrix_seed": False},
        "coupling.params",
    )
    inst = _hoeffding_instance(params)
    variant = int(params["variant"])
    builder = {1: hoeffding_variant1, 2: hoeffding_variant2, 3: hoeffding_variant3}.get(variant)
    if builder is None:
        raise ConfigError("hoeffding variant must be 1, 2 or 3")
    sampler = builder(inst)
    sampler.instance = inst
    if variant == 3:
        a = inst.a_norm
        sampler.default_truncation = TruncationParams(
            2 * inst.n * a, 2 * a, 2 * a, 8 * a, 1.0
        )
    return sampler


def _build_occupancy(params):
    _require_keys(
        params, {"n": True, "m": True, "probs": False, "h": False}, "coupling.params"
    )
    h_conf = params.get("h", {"name": "empty_urns"})
    _require_keys(h_conf, {"name": True, "k": False, "m0": False}, "coupling.params.h")
    lib = occupancy_statistics_library()
    name = h_conf["name"]
    if name == "empty_urns":
        h = lib["empty_urns"]
    elif name == "exactly_k":
        h = lib["exactly_k"](int(h_conf["k"]))
    elif name == "exceed":
        h = lib["exceed"](int(h_conf["m0"]))
    elif name == "excess":
        h = lib["excess"](int(h_conf["m0"]))
    else:
        raise ConfigError(f"unknown occupancy statistic {name!r}")
    inst = OccupancyInstance(int(params["n"]), int(params["m"]), params.get("probs"), h)
    sampler = occupancy_coupling(inst)
    sampler.instance = inst
    return sampler


def _build_geometry(params):
    _require_keys(params, {"d": True, "n": True, "rho": True}, "coupling.params")
    inst = GeometryInstance(
        d=int(params["d"]), n=int(params["n"]), rho=float(params["rho"]), psi=None, psi_norm=1.0
    )
    inst.psi = isolation_indicator(float(params["rho"]))(inst)
    sampler = geometry_coupling(inst)
    sampler.instance = inst
    return sampler


def _build_graph(params):
    _require_keys(params, {"n": True, "lam": True, "h": False}, "coupling.params")
    h_conf = params.get("h", {"name": "same_component"})
    _require_keys(h_conf, {"name": True, "m0": False}, "coupling.params.h")
    lib = graph_statistics_library()
    name = h_conf["name"]
    if name not in lib:
        raise ConfigError(f"unknown graph statistic {name!r}")
    stat = lib[name](int(h_conf["m0"])) if name == "distance_capped" else lib[name]()
    inst = GraphInstance(int(params["n"]), float(params["lam"]), stat)
    sampler = graph_coupling(inst)
    sampler.instance = inst
    return sampler


COUPLING_REGISTRY = {
    "indep_sum_deletion": (
        lambda p: _build_indep_sum(p, "deletion"),
        "{n, summand?}: W' = W - X_I, G = -n X_I",
    ),
    "indep_sum_replacement": (
        lambda p: _build_indep_sum(p, "replacement"),
        "{n, summand?}: W' = W - X_I + X'_I, G = (n/2)(X'_I - X_I)",
    ),
    "indep_sum_duplication": (
        lambda p: _build_indep_sum(p, "duplication"),
        "{n, summand?}: W' = W + X'_I, G = n(X'_I - X_I)",
    ),
    "two_runs": (_build_two_runs, "{n, p, g_variant?}: circular 2-runs count"),
    "curie_weiss": (
        _build_curie_weiss,
        "{n, beta, h?, burnin?, thin?, variant?}: recentred magnetization",
    ),
    "poisson_chain": (
        _build_poisson_chain,
        "{kernel, phi, variant?, t_max?}: finite-chain reward coupling",
    ),
    "local_dependence_1dep": (
        lambda p: _build_local_dependence(p, False),
        "{n}: 1-dependent moving-product sequence",
    ),
    "decomposable_1dep": (
        lambda p: _build_local_dependence(p, True),
        "{n}: 1-dependent sequence with pair neighborhoods, Dt and S",
    ),
    "quadratic_form": (_build_quadratic, "{matrix}: xi^T A xi - tr A on Rademacher xi"),
    "size_bias": (
        _build_size_bias,
        "{distribution: bernoulli|binomial, p, n?}: (V-mu, V^s-mu, mu)",
    ),
    "interpolation": (
        _build_interpolation,
        "{n, functional?: sum|max}: replacement interpolation to independence",
    ),
    "hoeffding": (
        _build_hoeffding,
        "{variant: 1|2|3, kind?: corner3|random, n?, matrix_seed?, matrix?}",
    ),
    "occupancy": (_build_occupancy, "{n, m, probs?, h?: {name,...}}: urn functionals"),
    "geometry": (_build_geometry, "{d, n, rho}: isolation statistic on the torus"),
    "graph": (_build_graph, "{n, lam, h?: {name,...}}: component functionals"),
}


def build_coupling(conf: dict):
    _require_keys(conf, {"name": True, "params": False}, "coupling")
    name = conf["name"]
    if name not in COUPLING_REGISTRY:
        raise ConfigError(f"unknown coupling {name!r}; see list-couplings")
    try:
        return COUPLING_REGISTRY[name][0](conf.get("params", {}))
    except (InvalidParameterError, KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"invalid parameters for coupling {name!r}: {exc}") from exc


# ---------------------------------------------------------------------------
# Config and rows
# ---------------------------------------------------------------------------

_TASK_KEYS = {
    "residual": {"n_samples": False},
    "moments": {"n_samples": False},
    "terms": {"truncation": False, "n_samples": False},
    "bounds": {
        "theorems": True,
        "truncation": False,
        "epsilon": False,
        "c_d": False,
        "k_const": False,
        "n_samples": False,
    },
    "distance": {"metric": True, "n_samples": False},
    "zero_bias": {"grid_lo": False, "grid_hi": False, "grid_points": False, "n_samples": False},
    "recursion": {"n": True, "a_const": True, "band": True},
}


def validate_config(conf: dict) -> dict:
    _require_keys(
        conf,
        {
            "experiment_id": False,
            "coupling": False,
            "n_samples": False,
            "seed": True,
            "chunk_size": False,
            "tasks": True,
            "output": True,
        },
        "config",
    )
    _require_keys(conf["output"], {"path": True, "format": True}, "output")
    if conf["output"]["format"] not in ("csv", "json"):
        raise ConfigError("output.format must be 'csv' or 'json'")
    if not isinstance(conf["tasks"], dict) or not conf["tasks"]:
        raise ConfigError("tasks must be a non-empty object")
    for t, tconf in conf["tasks"].items():
        if t not in _TASK_KEYS:
            raise ConfigError(f"unknown task {t!r}")
        _require_keys(tconf, _TASK_KEYS[t], f"tasks.{t}")
    needs_coupling = [t for t in conf["tasks"] if t != "recursion"]
    if needs_coupling and "coupling" not in conf:
        raise ConfigError(f"tasks {needs_coupling} require a coupling")
    if needs_coupling and "n_samples" not in conf:
        raise ConfigError("n_samples required for sampling tasks")
    if not isinstance(conf["seed"], int):
        raise ConfigError("seed must be an integer")
    return conf


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return f"{x:.17g}"
    return str(x)


class RowSink:
    def __init__(self, experiment_id, coupling_name, n, seed, config_json):
        self.base = {
            "experiment_id": experiment_id,
            "coupling": coupling_name,
            "n": n,
            "seed": seed,
            "version": VERSION_STRING,
            "config": config_json,
        }
        self.rows: list[dict] = []

    def add(self, metric, value=None, ci=None, bound=None, flags=()):
        row = dict(self.base)
        row.update(
            metric=metric,
            value=value,
            ci=ci,
            bound=bound,
            flags=";".join(flags) if flags else "",
        )
        self.rows.append(row)

    def write(self, path, fmt):
        if fmt == "csv":
            lines = [",".join(CSV_COLUMNS)]
            for row in self.rows:
                cells = []
                for col in CSV_COLUMNS:
                    cell = _fmt(row.get(col))
                    if "," in cell or '"' in cell:
                        cell = '"' + cell.replace('"', '""') + '"'
                    cells.append(cell)
                lines.append(",".join(cells))
            text = "\n".join(lines) + "\n"
        else:
            serializable = [
                {k: row.get(k) for k in CSV_COLUMNS} for row in self.rows
            ]
            text = json.dumps(serializable, sort_keys=True, indent=1) + "\n"
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)


# ---------------------------------------------------------------------------
# Tasks
# ---------------------------------------------------------------------------


def _trunc_from(conf, sampler) -> TruncationParams:
    if conf is not None:
        _require_keys(
            conf,
            {"alpha": True, "beta": True, "beta_tilde": True, "beta_prime": True, "gamma": True},
            "truncation",
        )
        return TruncationParams(**{k: float(v) for k, v in conf.items()})
    default = getattr(sampler, "default_truncation", None)
    if default is None:
        raise ConfigError("task needs truncation constants (none supplied or derivable)")
    return default


def _app_bound_row(sampler, sink, task_conf):
    inst = getattr(sampler, "instance", None)
    if inst is None:
        return
    if isinstance(inst, HoeffdingInstance):
        br = hoeffding_bound(inst.n, inst.a_norm)
    elif isinstance(inst, OccupancyInstance):
        br = occupancy_bound(
            inst.n, math.sqrt(inst.sigma2()), inst.h_norm, inst.dh_norm, inst.m, inst.p_bar
        )
        if not br.inputs["condition_ok"]:
            br.flags.append("condition (log-window) violated")
    elif isinstance(inst, GraphInstance):
        br = graph_bound(
            inst.n,
            math.sqrt(inst.sigma2),
            inst.lam,
            inst.statistic.h_norm,
            inst.statistic.dh_norm,
            float(task_conf.get("k_const", 1.0)),
        )
    else:
        return
    if any("not applicable" in f for f in br.flags):
        sink.add(f"bound_{br.theorem}", bound=None, flags=br.flags)
    else:
        sink.add(f"bound_{br.theorem}", bound=br.value, flags=br.flags)


def run_tasks(conf: dict, sink: RowSink) -> None:
    sampler = build_coupling(conf["coupling"]) if "coupling" in conf else None
    seed = conf["seed"]
    chunk_size = int(conf.get("chunk_size", 1 << 14))
    runner = ChunkedRunner(seed=seed, chunk_size=chunk_size)
    n_samples = conf.get("n_samples")
    tasks = conf["tasks"]
    report = ErrorTermReport()
    dist_row = None

    if "residual" in tasks:
        ns = tasks["residual"].get("n_samples", n_samples)
        rep = stein_residual(sampler, default_family(), None if try_enumerate(sampler) else ns, runner)
        for name, est, hw in zip(rep.names, rep.estimates, rep.halfwidths):
            sink.add(f"residual_{name}", value=est, ci=hw)
        sink.add("residual_r0_lower", value=rep.r0_lower)
    if "moments" in tasks:
        ns = tasks["moments"].get("n_samples", n_samples)
        mom = moment_probe(sampler, None if try_enumerate(sampler) else ns, runner)
        sink.add("e_w", value=mom.e_w.mean, ci=mom.e_w.halfwidth)
        sink.add("var_w", value=mom.var_w)
        sink.add("e_gd", value=mom.e_gd.mean, ci=mom.e_gd.halfwidth)
        sink.add("e_abs_w", value=mom.e_abs_w.mean, ci=mom.e_abs_w.halfwidth)
        sink.add("e_w1_sq", value=mom.e_w1_sq.mean, ci=mom.e_w1_sq.halfwidth)
    if "terms" in tasks or "bounds" in tasks:
        tconf = tasks.get("terms", {})
        ns = tconf.get("n_samples", n_samples)
        use_enum = try_enumerate(sampler) is not None
        estimate_unconditional_terms(sampler, None if use_enum else ns, runner, report)
        probe_rng = np.random.default_rng(0)
        if sampler.conditional_gd(probe_rng) is not None:
            estimate_conditional_terms(sampler, ns, runner, report)
        trunc_conf = tconf.get("truncation") or tasks.get("bounds", {}).get("truncation")
        trunc = None
        if trunc_conf is not None or getattr(sampler, "default_truncation", None) is not None:
            trunc = _trunc_from(trunc_conf, sampler)
            estimate_truncated_terms(sampler, trunc, None if use_enum else ns, runner, report)
        if "terms" in tasks:
            for name in ("r4", "r5", "r4p", "r5p", "r9", "r10", "r6", "r6p",
                         "var_cond_gd", "r3_hat", "e_abs_w", "e_w1_sq", "e_abs_gd2"):
                val = getattr(report, name)
                if val is not None:
                    sink.add(name, value=val, ci=report.ci.get(name))
    if "distance" in tasks:
        metric = tasks["distance"]["metric"]
        if metric not in ("dk", "dw"):
            raise ConfigError("distance.metric must be 'dk' or 'dw'")
        ns = tasks["distance"].get("n_samples", n_samples)
        w_chunks = runner.map_chunks(lambda rng, k: sampler.draw_batch(rng, k).w, ns)
        w = np.concatenate(w_chunks)
        est = empirical_dk(w) if metric == "dk" else empirical_dw(w)
        sink.add(metric, value=est.value, ci=est.dkw_halfwidth)
        dist_row = (metric, est)
    if "bounds" in tasks:
        bconf = tasks["bounds"]
        emitted = []
        for theorem in bconf["theorems"]:
            if theorem == "theorem1":
                br = bound_theorem1(report)
            elif theorem == "corollary1":
                report.require("var_cond_gd", "e_abs_gd2")
                br = bound_corollary1(report.var_cond_gd, report.e_abs_gd2)
            elif theorem == "corollary2":
                br = bound_corollary2(
                    *report.require("e_abs_gd2", "e_gdtilde_dprime", "e_s_dprime")
                )
            elif theorem == "theorem2":
                br = bound_theorem2(report, _trunc_from(bconf.get("truncation"), sampler))
            elif theorem == "corollary4":
                trunc = _trunc_from(bconf.get("truncation"), sampler)
                (vc,) = report.require("var_cond_gd")
                br = bound_corollary4(vc, trunc.alpha, trunc.beta)
            elif theorem == "corollary5":
                br = bound_corollary5(_trunc_from(bconf.get("truncation"), sampler))
            elif theorem == "theorem3":
                estimate_r7_r8(sampler, max((n_samples or 1000) // 10, 100), runner, report=report)
                br = bound_theorem3(report)
            elif theorem == "theorem4":
                eps = float(bconf.get("epsilon", 0.1))
                estimate_r11_r12(
                    sampler,
                    ConditionalConcentration(eps),
                    None if try_enumerate(sampler) else n_samples,
                    runner,
                    report,
                )
                br = bound_theorem4(report, eps)
            elif theorem == "application":
                _app_bound_row(sampler, sink, bconf)
                continue
            else:
                raise ConfigError(f"unknown theorem {theorem!r}")
            emitted.append(br)
            pair_val = dist_row[1].value if dist_row else None
            pair_ci = dist_row[1].dkw_halfwidth if dist_row else None
            sink.add(f"bound_{br.theorem}", value=pair_val, ci=pair_ci, bound=br.value,
                     flags=br.flags)
        if dist_row is not None:
            slack = dist_row[1].dkw_halfwidth or 0.0
            for br in emitted:
                if br.value < dist_row[1].value - slack:
                    print(
                        f"FAIL soft check: bound {br.theorem} = {br.value:.6g} below "
                        f"empirical {dist_row[0]} = {dist_row[1].value:.6g}",
                        file=sys.stderr,
                    )
    if "zero_bias" in tasks:
        zconf = tasks["zero_bias"]
        grid = np.linspace(
            float(zconf.get("grid_lo", -5.0)),
            float(zconf.get("grid_hi", 5.0)),
            int(zconf.get("grid_points", 401)),
        )
        dens = zero_bias_density(sampler, grid, zconf.get("n_samples", n_samples), runner)
        sink.add("zero_bias_integral", value=dens.integral(), ci=dens.integral_ci())
        for u, r, c in zip(dens.grid, dens.rho_hat, dens.ci):
            sink.add(f"rho[{u:.17g}]", value=r, ci=c)
    if "recursion" in tasks:
        rconf = tasks["recursion"]
        prob = RecursionProblem.banded(
            int(rconf["n"]), float(rconf["a_const"]), float(rconf["band"])
        )
        sol = lemma1_solve(prob)
        sink.add("kappa_bound", value=sol["kappa_n_bound"])
        sink.add("alpha_n", value=sol["alpha_n"])
        sink.add("alpha_n_prime", value=sol["alpha_n_prime"])


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _load_json(path: str) -> dict:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot load {path}: {exc}") from exc


def _canonical(conf: dict) -> str:
    return json.dumps(conf, sort_keys=True, separators=(",", ":"))


def cmd_run(args) -> int:
    conf = validate_config(_load_json(args.config))
    coupling_name = conf.get("coupling", {}).get("name", "")
    n = conf.get("coupling", {}).get("params", {}).get("n", "")
    sink = RowSink(
        conf.get("experiment_id", "exp"), coupling_name, n, conf["seed"], _canonical(conf)
    )
    run_tasks(conf, sink)
    sink.write(conf["output"]["path"], conf["output"]["format"])
    print(f"wrote {len(sink.rows)} rows to {conf['output']['path']}")
    return 0


def _set_path(conf: dict, dotted: str, value) -> None:
    parts = dotted.split(".")
    node = conf
    for p in parts[:-1]:
        if p not in node or not isinstance(node[p], dict):
            node[p] = {}
        node = node[p]
    node[parts[-1]] = value


def cmd_sweep(args) -> int:
    template = _load_json(args.template)
    grid = _load_json(args.grid)
    if not isinstance(grid, dict):
        raise ConfigError("grid must be an object {param_path: [values]}")
    keys = sorted(grid)
    all_rows: list[dict] = []
    combos: list[tuple] = []
    if keys:
        import itertools as _it

        combos = list(_it.product(*(grid[k] for k in keys)))
    for idx, combo in enumerate(combos):
        conf = json.loads(json.dumps(template))
        for k, v in zip(keys, combo):
            _set_path(conf, k, v)
        conf = validate_config(conf)
        coupling_name = conf.get("coupling", {}).get("name", "")
        n = conf.get("coupling", {}).get("params", {}).get("n", "")
        sink = RowSink(
            f"{conf.get('experiment_id', 'exp')}[{idx}]",
            coupling_name,
            n,
            conf["seed"],
            _canonical(conf),
        )
        run_tasks(conf, sink)
        all_rows.extend(sink.rows)
    out = template.get("output", {})
    sink = RowSink("", "", "", 0, "")
    sink.rows = all_rows
    sink.write(out.get("path", "sweep.csv"), "csv")
    print(f"wrote {len(all_rows)} rows to {out.get('path', 'sweep.csv')}")
    return 0


def cmd_list_couplings(_args) -> int:
    for name in sorted(COUPLING_REGISTRY):
        print(f"{name}: {COUPLING_REGISTRY[name][1]}")
    return 0


SELFTEST_CASES = [
    ("indep_sum_deletion", {"n": 3}),
    ("indep_sum_replacement", {"n": 3}),
    ("indep_sum_duplication", {"n": 3}),
    ("two_runs", {"n": 8, "p": 0.5}),
    ("curie_weiss", {"n": 4, "beta": 0.5}),
    (
        "poisson_chain",
        {"kernel": [[0.7, 0.3], [0.3, 0.7]], "phi": [1.0, -1.0]},
    ),
    ("local_dependence_1dep", {"n": 6}),
    ("decomposable_1dep", {"n": 6}),
    ("quadratic_form", {"matrix": [[0.0, 1.0], [1.0, 0.0]]}),
    ("size_bias", {"distribution": "bernoulli", "p": 0.3}),
    ("interpolation", {"n": 2}),
    ("hoeffding", {"variant": 1}),
    ("hoeffding", {"variant": 2}),
    ("hoeffding", {"variant": 3}),
    ("occupancy", {"n": 3, "m": 2}),
    ("graph", {"n": 4, "lam": 0.5}),
]


def cmd_selftest(_args) -> int:
    failures = 0
    family = default_family()
    for name, params in SELFTEST_CASES:
        sampler = build_coupling({"name": name, "params": params})
        enum = sampler.enumerate()
        psum = float(np.sum(enum.probs))
        rep = stein_residual(sampler, family)
        mom = moment_probe(sampler)
        ok = (
            abs(psum - 1.0) <= 1e-12
            and rep.max_abs < 1e-12
            and abs(mom.e_w.mean) < 1e-12
            and abs(mom.e_gd.mean - mom.var_w) < 1e-12
        )
        status = "PASS" if ok else "FAIL"
        if not ok:
            failures += 1
        print(
            f"{status} {name}{json.dumps(params, sort_keys=True)} "
            f"residual={rep.max_abs:.3e} |EW|={abs(mom.e_w.mean):.3e} "
            f"|EGD-VarW|={abs(mom.e_gd.mean - mom.var_w):.3e}"
        )
    # chunked-MC determinism probe: values must be identical for any worker
    # count given fixed (seed, chunk_size)
    sampler = build_coupling({"name": "two_runs", "params": {"n": 12, "p": 0.3}})
    runner = ChunkedRunner(seed=20_250_808, chunk_size=4096)
    mom = moment_probe(sampler, n_samples=65_536, runner=runner)
    print(f"mc_probe e_w={mom.e_w.mean:.17g} e_gd={mom.e_gd.mean:.17g} var_w={mom.var_w:.17g}")
    remark1 = mom.remark1_ok()
    print(f"{'PASS' if remark1 else 'FAIL'} mc_probe remark1")
    if not remark1:
        failures += 1
    if failures:
        print(f"{failures} selftest failures")
        return 4
    print("selftest ok")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="steincouplings", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run an experiment config")
    p_run.add_argument("config")
    p_run.set_defaults(fn=cmd_run)
    p_sweep = sub.add_parser("sweep", help="run a config template over a grid")
    p_sweep.add_argument("template")
    p_sweep.add_argument("grid")
    p_sweep.set_defaults(fn=cmd_sweep)
    p_list = sub.add_parser("list-couplings", help="list JSON-constructible couplings")
    p_list.set_defaults(fn=cmd_list_couplings)
    p_self = sub.add_parser("selftest", help="run the enumeration oracle suite")
    p_self.set_defaults(fn=cmd_selftest)
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except (
        DataError,
        FloatingPointError,
        InvalidParameterError,
        UnsupportedCouplingError,
        np.linalg.LinAlgError,
    ) as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
