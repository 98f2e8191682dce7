"""Scenario files and the pipelines behind each CLI subcommand.

A scenario is one YAML (or JSON) mapping.  Top-level keys:

``box``          ``{lo, hi, h | n_cells, mirror}``
``D``, ``Omega`` shape expressions (see :func:`xelliptic.geometry.shape_from_config`)
``family``       ``{name, dim, alpha, phis}``
``coefficients`` one coefficient spec, or a list of specs (``invariance``)
``points``       list of points ``y``
``wiener``       ``{lambda, levels, rho0, thresholds: {...}}``
``outputs``      ``{prefix}``
``seed``         integer seed for randomised checks
``cell_budget``  maximum number of grid nodes (default ``2**24``)

plus one optional block per subcommand: ``capacity``, ``distance``,
``greens``, ``cone``, ``validate``.
"""
from __future__ import annotations

import copy
import csv
import json
import math
from pathlib import Path

import numpy as np
import yaml

from . import fields, geometry, metric, potential, solver, wiener
from .errors import ConfigurationError

TOP_KEYS = {"box", "D", "Omega", "family", "coefficients", "points", "wiener", "outputs",
            "seed", "cell_budget", "capacity", "distance", "greens", "cone", "validate",
            "description"}
DEFAULT_BUDGET = 2**24


def load_scenario(path, overrides=()) -> dict:
    """Read a scenario file and apply ``key.sub=value`` overrides (values parsed as YAML)."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read scenario {path}: {exc}") from exc
    try:
        cfg = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigurationError(f"scenario is not valid YAML/JSON: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigurationError("scenario must be a mapping")
    for item in overrides:
        apply_override(cfg, item)
    unknown = set(cfg) - TOP_KEYS
    if unknown:
        raise ConfigurationError(f"unknown scenario keys {sorted(unknown)}")
    return cfg


def apply_override(cfg: dict, item: str) -> None:
    if "=" not in item:
        raise ConfigurationError(f"override {item!r} is not key=value")
    key, raw = item.split("=", 1)
    parts = key.strip().split(".")
    node = cfg
    for p in parts[:-1]:
        if not isinstance(node.get(p), dict):
            node[p] = {}
        node = node[p]
    node[parts[-1]] = yaml.safe_load(raw)


def build_box(cfg: dict) -> geometry.BoundingBox:
    b = cfg.get("box")
    if not isinstance(b, dict) or "lo" not in b or "hi" not in b:
        raise ConfigurationError("box needs lo and hi")
    lo, hi = list(map(float, b["lo"])), list(map(float, b["hi"]))
    if "n_cells" in b:
        n = b["n_cells"]
    elif "h" in b:
        n = [int(round((c - a) / float(b["h"]))) for a, c in zip(lo, hi)]
    else:
        raise ConfigurationError("box needs h or n_cells")
    box = geometry.BoundingBox(tuple(lo), tuple(hi), tuple(n), tuple(b.get("mirror", ())))
    budget = int(cfg.get("cell_budget", DEFAULT_BUDGET))
    if math.prod(box.shape) > budget:
        raise ConfigurationError(f"grid has {math.prod(box.shape)} nodes, budget is {budget}")
    return box


class Context:
    """Resolved scenario objects shared by the pipelines."""

    def __init__(self, cfg: dict):
        self.cfg = cfg
        self.box = build_box(cfg)
        if "D" not in cfg or "Omega" not in cfg:
            raise ConfigurationError("scenario needs D and Omega")
        self.domain = geometry.make_domain(self.box, cfg["D"], cfg["Omega"])
        self.family = fields.family_from_config(cfg.get("family", {"name": "euclidean",
                                                                   "dim": self.box.dim}))
        if self.family.dim != self.box.dim:
            raise ConfigurationError("family dimension differs from the box dimension")
        self.seed = int(cfg.get("seed", 0))
        self.rng = np.random.default_rng(self.seed)
        self.points = [tuple(map(float, p)) for p in cfg.get("points", [])]

    def coefficient_specs(self) -> list:
        spec = self.cfg.get("coefficients", {"type": "structure"})
        return spec if isinstance(spec, list) else [spec]

    def coefficients(self, spec=None):
        spec = self.coefficient_specs()[0] if spec is None else spec
        return fields.coefficients_from_config(spec, self.family, self.box,
                                               np.random.default_rng(self.seed))

    def need_points(self):
        if not self.points:
            raise ConfigurationError("scenario needs at least one point")
        return self.points

    def distance(self, point):
        return metric.control_distance(self.family, point, self.box)

    def wiener_config(self) -> dict:
        w = dict(self.cfg.get("wiener", {}))
        extra = set(w) - {"lambda", "levels", "rho0", "thresholds"}
        if extra:
            raise ConfigurationError(f"unknown wiener keys {sorted(extra)}")
        if "rho0" not in w:
            raise ConfigurationError("wiener.rho0 is required")
        th = w.get("thresholds", {})
        try:
            thresholds = wiener.Thresholds(**th)
        except TypeError as exc:
            raise ConfigurationError(f"bad thresholds: {exc}") from exc
        return {"lam": float(w.get("lambda", 0.5)), "levels": int(w.get("levels", 6)),
                "rho0": float(w["rho0"]), "thresholds": thresholds}


# ---------------------------------------------------------------------------
# Report helpers
# ---------------------------------------------------------------------------


def clean(obj):
    """Recursively convert numpy scalars and round floats to 10 significant digits."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return None if not math.isfinite(v) else float(f"{v:.10g}") + 0.0
    return obj


def dumps(obj) -> str:
    return json.dumps(clean(obj), indent=2, sort_keys=True)


class Output:
    def __init__(self, out_dir, prefix):
        self.dir = Path(out_dir) if out_dir else None
        self.prefix = prefix
        if self.dir is not None:
            self.dir.mkdir(parents=True, exist_ok=True)

    def path(self, name):
        return None if self.dir is None else self.dir / f"{self.prefix}{name}"

    def json(self, name, obj):
        p = self.path(name)
        if p is not None:
            p.write_text(dumps(obj) + "\n")


# ---------------------------------------------------------------------------
# Pipelines
# ---------------------------------------------------------------------------


def run_classify(ctx: Context, out: Output) -> dict:
    wc = ctx.wiener_config()
    form = solver.assemble(ctx.domain, ctx.coefficients())
    cone_cfg = ctx.cfg.get("cone")
    results = []
    for i, p in enumerate(ctx.need_points()):
        y = ctx.domain.snap_to_boundary(p)
        dist = ctx.distance(y)
        prof = wiener.wiener_profile(form, y, dist, wc["rho0"], wc["lam"], wc["levels"])
        theta = None
        if cone_cfg:
            rep = wiener.cone_check(ctx.domain, dist, cone_cfg["radii"],
                                    float(cone_cfg.get("theta_min", 0.1)))
            theta = min(rep.theta)
        verdict = wiener.classify(prof, wc["thresholds"], theta)
        write_profile(prof, out.path(f"profile_{i}.csv"))
        results.append(verdict.to_json() | {"integral_estimate": prof.integral_estimate})
    report = {"command": "classify", "results": results}
    out.json("verdict.json", report)
    return report


def write_profile(prof: wiener.CapacityProfile, path) -> None:
    """Columns: rho, cap, ball_volume, limit_est, mu_diag, reference_cap, term, delta,
    n_nodes, resolved.  ``mu_diag`` is the relative defect of cap = mu(K)."""
    if path is None:
        return
    cols = ["rho", "cap", "ball_volume", "limit_est", "mu_diag", "reference_cap", "term",
            "delta", "n_nodes", "resolved"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for row in prof.rows():
            w.writerow([f"{row[c]:.10g}" if isinstance(row[c], float) else int(row[c])
                        for c in cols])


def run_capacity(ctx: Context, out: Output) -> dict:
    c = ctx.cfg.get("capacity")
    if not isinstance(c, dict) or "K" not in c:
        raise ConfigurationError("capacity block with an obstacle shape K is required")
    K = geometry.rasterize(c["K"], ctx.box)
    form = solver.assemble(ctx.domain, ctx.coefficients())
    res = potential.capacity(form, K)
    report = {"command": "capacity", "capacity": res.capacity, "nodes": res.n_nodes,
              "total_measure": res.total_measure, "identity_defect": res.identity_defect,
              "negative_measure_nodes": res.negative_measure, "h": ctx.box.h}
    ref = c.get("reference")
    if isinstance(ref, dict):
        val = potential.annulus_capacity(ctx.box.dim, float(ref["r"]), float(ref["R"]))
        report |= {"reference": val, "relative_error": (res.capacity - val) / val}
    elif ref is not None:
        val = float(ref)
        report |= {"reference": val, "relative_error": (res.capacity - val) / val}
    out.json("capacity.json", report)
    if out.dir is not None:
        geometry.dump_grid(out.path("potential.bin"), res.u, ctx.box, field="capacitary potential")
    return report


def run_distance(ctx: Context, out: Output) -> dict:
    d = ctx.cfg.get("distance", {})
    radii = d.get("radii")
    if not radii:
        raise ConfigurationError("distance.radii is required")
    results = []
    for i, p in enumerate(ctx.need_points()):
        dist = ctx.distance(p)
        prof = metric.volume_profile(dist, radii)
        entry = {"point": list(p), "radii": list(prof.radii), "volumes": list(prof.volumes),
                 "doubling_ratios": list(prof.doubling_ratios), "A_est": prof.A_est,
                 "Q_est": prof.Q_est, "truncated": [bool(t) for t in prof.truncated]}
        if len(prof.radii) >= 3:
            entry["reverse_doubling"] = metric.reverse_doubling(prof).to_json()
        if any(prof.truncated):
            entry["error"] = "ball of radius 2r touches the bounding box"
        path = out.path(f"volumes_{i}.csv")
        if path is not None:
            prof.write_csv(path)
            geometry.dump_grid(out.path(f"distance_{i}.bin"), dist.values, ctx.box,
                               field="control distance")
        results.append(entry)
    report = {"command": "distance", "results": results}
    out.json("distance.json", report)
    return report


def run_greens(ctx: Context, out: Output) -> dict:
    g = ctx.cfg.get("greens", {})
    poles = g.get("poles") or ctx.need_points()
    form = solver.assemble(ctx.domain, ctx.coefficients())
    results, all_ratios = [], []
    for i, p in enumerate(poles):
        pole = ctx.box.nearest_node(p)
        col = potential.green_column(form, pole)
        dist = ctx.distance(pole)
        band = potential.green_band(form, col, dist,
                                    upper_fraction=float(g.get("upper_fraction", 1 / 8)))
        all_ratios.append(band.ratios)
        results.append({"pole": list(p), "pairs": int(band.ratios.size), "C": band.C,
                        "min_ratio": float(np.min(band.ratios)),
                        "max_ratio": float(np.max(band.ratios)),
                        "boundary_distance": band.boundary_distance})
        if out.dir is not None:
            geometry.dump_grid(out.path(f"green_{i}.bin"), col.values, ctx.box,
                               field="green column", pole=list(pole))
    r = np.concatenate(all_ratios)
    report = {"command": "greens", "results": results,
              "C": float(max(r.max(), 1 / r.min())) if r.size else None}
    out.json("greens.json", report)
    return report


def run_cone(ctx: Context, out: Output) -> dict:
    c = ctx.cfg.get("cone")
    if not isinstance(c, dict) or "radii" not in c:
        raise ConfigurationError("cone block with radii is required")
    results = []
    for p in ctx.need_points():
        y = ctx.domain.snap_to_boundary(p)
        rep = wiener.cone_check(ctx.domain, ctx.distance(y), c["radii"],
                                float(c.get("theta_min", 0.1)))
        results.append({"point": list(p)} | rep.to_json())
    report = {"command": "cone", "results": results}
    out.json("cone.json", report)
    return report


def run_invariance(ctx: Context, out: Output) -> dict:
    wc = ctx.wiener_config()
    mats = [ctx.coefficients(s) for s in ctx.coefficient_specs()]
    results = []
    for p in ctx.need_points():
        y = ctx.domain.snap_to_boundary(p)
        rep = wiener.invariance_harness(ctx.domain, ctx.family, mats, y, ctx.distance(y),
                                        wc["rho0"], wc["lam"], wc["levels"], wc["thresholds"],
                                        rng=np.random.default_rng(ctx.seed))
        results.append({"point": list(p)} | rep.to_json())
    report = {"command": "invariance", "results": results,
              "agree": all(r["agree"] for r in results),
              "comparable": all(r["comparable"] for r in results)}
    out.json("invariance.json", report)
    return report


def random_trig(box, rng, terms=4, freq=3):
    """Smooth random trigonometric polynomial on the node grid."""
    X = box.coordinates()
    u = np.zeros(box.shape)
    for _ in range(terms):
        k = rng.integers(-freq, freq + 1, size=box.dim)
        phase = rng.uniform(0, 2 * math.pi)
        u += rng.standard_normal() * np.cos(np.tensordot(k, X, axes=1) * math.pi + phase)
    return u


def run_validate(ctx: Context, out: Output) -> dict:
    v = dict(ctx.cfg.get("validate", {}))
    rng = ctx.rng
    B = ctx.coefficients()
    rows = []

    pts = ctx.box.coordinates().reshape(ctx.box.dim, -1)
    take = rng.choice(pts.shape[1], size=min(20000, pts.shape[1]), replace=False)
    ell = fields.check_x_ellipticity(B, ctx.family, pts[:, np.sort(take)], rng=rng)
    rows.append(("x-ellipticity", f"[{ell.min_ratio:.4g}, {ell.max_ratio:.4g}]", ell.passes))

    center = tuple(v.get("center", ctx.points[0] if ctx.points else
                         [0.5 * (a + b) for a, b in zip(ctx.box.lo, ctx.box.hi)]))
    dist = ctx.distance(center)
    radii = v.get("radii", [0.1, 0.2])
    prof = metric.volume_profile(dist, radii)
    rows.append(("doubling Q_est", f"{prof.Q_est:.4g}",
                 bool(np.all(prof.doubling_ratios > 1) and not np.any(prof.truncated))))

    r = float(radii[0])
    b1, b2 = metric.ball(dist, r), metric.ball(dist, 2 * r)
    pr = [metric.poincare_ratio(ctx.family, random_trig(ctx.box, rng), b1, b2, r, ctx.box)
          for _ in range(int(v.get("poincare_trials", 20)))]
    rows.append(("poincare sup ratio", f"{max(pr):.4g}", bool(np.isfinite(max(pr)))))

    form = solver.assemble(ctx.domain, B)
    excess, cac = [], []
    bdist = metric.distance_to_set(ctx.family, ctx.domain.boundary, ctx.box)
    K = ctx.domain.mask_Omega & (bdist >= float(v.get("caccioppoli_margin", 0.25)))
    for _ in range(int(v.get("mp_trials", 5))):
        g = random_trig(ctx.box, rng)
        u = solver.solve_in_omega(form, g)
        osc = float(np.ptp(g[ctx.domain.boundary]))
        excess.append(solver.maximum_principle_excess(u, ctx.domain) / osc)
        if K.any():
            cac.append(solver.caccioppoli_ratio(form, u, K, ctx.family, bdist))
    mp_tol = 1e-8 if B.diagonal else 5e-3
    rows.append(("maximum principle excess/osc", f"{max(excess):.3g}", max(excess) <= mp_tol))
    if cac:
        rows.append(("caccioppoli max ratio", f"{max(cac):.4g}", bool(np.isfinite(max(cac)))))

    if ctx.box.mirror:
        rows.append(("green band C", "skipped (mirrored box)", True))
    else:
        pole = ctx.box.nearest_node(center)
        if ctx.domain.interior_D[pole]:
            col = potential.green_column(form, pole)
            band = potential.green_band(form, col, metric.control_distance(ctx.family, pole,
                                                                           ctx.box))
            rows.append(("green band C", f"{band.C:.4g}", bool(band.C < 10)))
    report = {"command": "validate",
              "checks": [{"check": n, "value": val, "pass": bool(ok)} for n, val, ok in rows],
              "all_pass": all(ok for _, _, ok in rows)}
    out.json("validate.json", report)
    return report


PIPELINES = {"classify": run_classify, "capacity": run_capacity, "distance": run_distance,
             "greens": run_greens, "cone": run_cone, "invariance": run_invariance,
             "validate": run_validate}


def run(command: str, cfg: dict, out_dir=None) -> dict:
    if command not in PIPELINES:
        raise ConfigurationError(f"unknown command {command!r}")
    cfg = copy.deepcopy(cfg)
    ctx = Context(cfg)
    prefix = str(cfg.get("outputs", {}).get("prefix", ""))
    return PIPELINES[command](ctx, Output(out_dir, prefix))
