"""Experiment configuration, orchestration and report emission."""
from __future__ import annotations

import csv
import dataclasses
import json
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, bundles, coupling, models, paths, sections
from .errors import ConfigError, GeometryError
from .geometry import PointRef
from .manifolds import flat_space
from .trajectory import PathEnsemble

SCHEMA_VERSION = "1.0"

EXPERIMENTS = ("bm-check", "ito-check", "section-test", "bundle-check", "coupling",
               "liouville-scan", "prop51", "sasaki", "hopf")

BASES = ("flat-r2", "sphere2", "sphere3", "torus2", "circle")
PRINCIPAL = ("frames-sphere2", "frames-torus2", "hopf")
TM = ("tm-sphere2-sasaki", "tm-sphere2-complete", "tm-sphere2-horizontal",
      "tm-torus2-complete", "tm-torus2-horizontal", "tm-torus2-sasaki")
ASSOCIATED = TM + ("hopf-c1", "hopf-c2", "trivial-torus2")

# experiment -> (default model, admissible models)
EXPERIMENT_MODELS = {
    "bm-check": ("flat-r2", BASES),
    "ito-check": ("sphere2", ("sphere2", "sphere3")),
    "section-test": ("tm-torus2-horizontal", ASSOCIATED),
    "bundle-check": ("frames-sphere2", PRINCIPAL),
    "coupling": ("torus2", BASES),
    "liouville-scan": ("tm-sphere2-sasaki", ASSOCIATED),
    "prop51": ("tm-torus2-complete", ("tm-torus2-complete", "tm-torus2-horizontal",
                                      "tm-sphere2-complete", "tm-sphere2-horizontal")),
    "sasaki": ("tm-sphere2-sasaki", ("tm-sphere2-sasaki",)),
    "hopf": ("hopf-c1", ("hopf-c1", "hopf-c2")),
}

SECTIONS = ("zero", "constant", "sin", "cos-sum", "sin-cos", "grad-height", "hopf")
COUPLING_METHODS = coupling.METHODS
CSV_PATHS = 100
CSV_NODES = 101


@dataclass(frozen=True)
class ExperimentConfig:
    """One experiment run.  Keys outside these fields are rejected."""

    experiment: str
    model: str | None = None
    dt: float = 1e-3
    horizon: float = 1.0
    n_paths: int = 1000
    seed: int = 0
    fd_step: float = 1e-3
    resolution: float = 0.02
    merge_radius: float | None = None
    output_dir: str = "bundlemart-out"
    method: str = "reflection"
    family: tuple | None = None
    section: str | None = None
    scale: float = 1.0
    threads: int | None = None

    @property
    def resolved_model(self) -> str:
        return self.model or EXPERIMENT_MODELS.get(self.experiment, (None,))[0]

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["model"] = self.resolved_model
        if d["family"] is not None:
            d["family"] = list(d["family"])
        return d

    @classmethod
    def from_mapping(cls, data: dict) -> "ExperimentConfig":
        problems = validate(data)
        if problems:
            raise ConfigError("; ".join(problems))
        data = dict(data)
        if data.get("family") is not None:
            data["family"] = tuple(float(v) for v in data["family"])
        for key in ("dt", "horizon", "fd_step", "resolution", "scale"):
            if key in data:
                data[key] = float(data[key])
        return cls(**data)


CONFIG_KEYS = tuple(f.name for f in dataclasses.fields(ExperimentConfig))


def _is_number(v) -> bool:
    return isinstance(v, (int, float)) and not isinstance(v, bool) and math.isfinite(v)


def validate(config) -> list[str]:
    """Schema and range diagnostics for a config mapping (empty when valid).

    Never runs a simulation.
    """
    data = config.to_dict() if isinstance(config, ExperimentConfig) else dict(config)
    out = []
    unknown = sorted(set(data) - set(CONFIG_KEYS))
    if unknown:
        out.append(f"unknown key(s) {', '.join(map(repr, unknown))}; allowed keys: "
                   f"{', '.join(CONFIG_KEYS)}")
    exp = data.get("experiment")
    if exp is None:
        out.append("experiment is required; choose from " + ", ".join(EXPERIMENTS))
    elif exp not in EXPERIMENTS:
        out.append(f"unknown experiment {exp!r}; choose from {', '.join(EXPERIMENTS)}")
    model = data.get("model")
    if model is not None:
        if model not in models.MODELS:
            out.append(f"unknown model {model!r}; known models: {', '.join(models.model_names())}")
        elif exp in EXPERIMENT_MODELS and model not in EXPERIMENT_MODELS[exp][1]:
            out.append(f"model {model!r} does not fit experiment {exp!r}; use one of "
                       f"{', '.join(EXPERIMENT_MODELS[exp][1])}")
    for key in ("dt", "horizon", "fd_step", "resolution"):
        if key in data and not (_is_number(data[key]) and data[key] > 0):
            out.append(f"{key} must be positive")
    if _is_number(data.get("dt", 1e-3)) and _is_number(data.get("horizon", 1.0)):
        dt, hz = data.get("dt", 1e-3), data.get("horizon", 1.0)
        if dt > 0 and hz > 0:
            ratio = hz / dt
            if abs(ratio - round(ratio)) > 1e-6 * max(1.0, ratio):
                out.append("horizon must be a whole multiple of dt")
            elif dt > hz:
                out.append("dt must not exceed horizon")
    if "n_paths" in data:
        v = data["n_paths"]
        if not (isinstance(v, int) and not isinstance(v, bool) and v > 0):
            out.append("n_paths must be a positive integer")
    if "seed" in data:
        v = data["seed"]
        if not (isinstance(v, int) and not isinstance(v, bool) and 0 <= v < 2 ** 64):
            out.append("seed must be an integer in [0, 2^64)")
    if data.get("merge_radius") is not None:
        v = data["merge_radius"]
        if not (_is_number(v) and v >= 0):
            out.append("merge_radius must be non-negative")
    if "method" in data and data["method"] not in COUPLING_METHODS:
        out.append(f"method must be one of {', '.join(COUPLING_METHODS)}")
    if data.get("family") is not None:
        fam = data["family"]
        if not (isinstance(fam, (list, tuple)) and fam and all(_is_number(v) for v in fam)):
            out.append("family must be a non-empty list of numbers")
    if data.get("section") is not None and data["section"] not in SECTIONS:
        out.append(f"unknown section {data['section']!r}; choose from {', '.join(SECTIONS)}")
    if "scale" in data and not _is_number(data["scale"]):
        out.append("scale must be a number")
    if data.get("threads") is not None:
        v = data["threads"]
        if not (isinstance(v, int) and not isinstance(v, bool) and v > 0):
            out.append("threads must be a positive integer")
    if "output_dir" in data and not isinstance(data["output_dir"], str):
        out.append("output_dir must be a string")
    return out


@dataclass
class RunReport:
    config: dict
    verdicts: list = field(default_factory=list)
    oracles: list = field(default_factory=list)
    diagnostics: dict = field(default_factory=dict)
    wall_time: float = 0.0
    status: str = "completed"
    error: str | None = None
    files: list = field(default_factory=list)
    tool_version: str = __version__
    schema_version: str = SCHEMA_VERSION

    @property
    def seed(self) -> int:
        return self.config["seed"]

    @property
    def passed(self) -> bool:
        return all(o["pass"] for o in self.oracles)

    def to_dict(self) -> dict:
        return _clean({"schema_version": self.schema_version, "tool": "bundlemart",
                       "tool_version": self.tool_version, "seed": self.seed,
                       "config": self.config, "status": self.status, "error": self.error,
                       "verdicts": self.verdicts, "oracles": self.oracles,
                       "diagnostics": self.diagnostics, "files": self.files,
                       "wall_time_s": self.wall_time})

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def stable_json(self) -> str:
        """Serialized verdicts and oracles, the part that must reproduce exactly."""
        d = self.to_dict()
        return json.dumps({k: d[k] for k in ("config", "verdicts", "oracles", "seed")},
                          sort_keys=True)


def _clean(obj):
    """JSON-safe copy: numpy scalars to Python, non-finite floats to strings."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else str(v)
    return obj


def oracle(name: str, value, expected, tolerance, passed: bool, rule: str) -> dict:
    return {"name": name, "value": value, "expected": expected, "tolerance": tolerance,
            "rule": rule, "pass": bool(passed)}


def verdict(name: str, decision: str, items=None, **extra) -> dict:
    out = {"name": name, "decision": decision}
    if items is not None:
        out["forms"] = [v.to_dict() for v in items]
    out.update(extra)
    return out


# -- helpers ---------------------------------------------------------------------------

def _thin(ens: PathEnsemble) -> PathEnsemble:
    stride = max(1, int(math.ceil((len(ens.times) - 1) / (CSV_NODES - 1))))
    sel = slice(0, None, stride)
    P = min(ens.n_paths, CSV_PATHS)
    return PathEnsemble(ens.manifold, ens.times[sel], ens.coords[:P, sel], ens.charts[:P, sel],
                        ens.seed, ens.dt, ens.generator_tag)


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)


def _coordinate_forms(dim):
    def theta(c, x):
        return np.broadcast_to(np.eye(dim), np.shape(x)[:-1] + (dim, dim))
    return theta


def bm_battery(man, ens: PathEnsemble, resolution: float, z: float = 3.0):
    """Drift test of the coordinate Itô integrals and the trace identity of ``ens``.

    Returns ``(verdict, trace_mean, trace_se)``; the quadratic integral of
    ``g`` should have mean ``dim · horizon``.
    """
    integ = paths.ito_integrals(_coordinate_forms(man.dim), ens, man.christoffel)
    items = [paths.drift_test(integ[a], resolution, z=z) for a in range(man.dim)]
    q = paths.quadratic_integral(man.metric, ens).terminal
    return items, float(np.mean(q)), float(np.std(q, ddof=1) / np.sqrt(q.size))


def _cos_colatitude(man, ens):
    u = np.empty(ens.coords.shape[:1] + (man.dim + 1,))
    ch, x = ens.terminal()
    for c in np.unique(ch):
        sel = ch == c
        u[sel] = man.embed(int(c), x[sel])
    return -u[:, -1] / man.params["radius"]


# -- experiments -------------------------------------------------------------------------

def _bm_check(cfg, out):
    man = models.load_model(cfg.resolved_model)
    x0 = sections.default_start(man)
    ens = paths.simulate_brownian(man, x0, cfg.horizon, cfg.dt, cfg.n_paths, cfg.seed)
    T = cfg.horizon
    res = {"verdicts": [], "oracles": []}
    if man.name.startswith("flat"):
        v = float(np.var(ens.coords[:, -1, 0], ddof=1))
        se = T * math.sqrt(2.0 / (cfg.n_paths - 1))
        res["oracles"].append(oracle("variance-B1", v, T, 3 * se, abs(v - T) <= 3 * se,
                                     "within 3 standard errors"))
    items, qm, qse = bm_battery(man, ens, cfg.resolution)
    res["verdicts"].append(verdict("coordinate-ito-drift", paths.combine_decisions(items), items))
    res["oracles"].append(oracle("trace-identity", qm, man.dim * T, 0.05 * man.dim * T,
                                 abs(qm - man.dim * T) <= 0.05 * man.dim * T,
                                 "relative error 5%"))
    if man.name.startswith("sphere") and man.dim == 2:
        c0 = float(_cos_colatitude(man, PathEnsemble(man, ens.times[:1], ens.coords[:1, :1],
                                                      ens.charts[:1, :1]))[0])
        m = float(np.mean(_cos_colatitude(man, ens)))
        exp = math.exp(-T) * c0
        res["oracles"].append(oracle("heat-eigen-decay", m, exp, 0.05 * abs(exp),
                                     abs(m - exp) <= 0.05 * abs(exp), "relative error 5%"))
    _thin(ens).to_csv(out / "paths.csv")
    res["files"] = ["paths.csv"]
    return res


def inclusion_map(man) -> paths.SmoothMap:
    """Embedding of a round sphere into Euclidean space as a SmoothMap."""
    amb = flat_space(man.dim + 1)
    return paths.SmoothMap(man, amb, lambda c, x: (0, man.embed(c, x)))


def ito_residual_rms(man, dt, horizon, n_paths, seed, form=None) -> float:
    """Root mean square of the terminal geometric Itô residual of the inclusion."""
    F = inclusion_map(man)
    w = np.ones(man.dim + 1) / math.sqrt(man.dim + 1) if form is None else np.asarray(form)
    theta = lambda c, y: np.broadcast_to(w, np.shape(y)[:-1] + w.shape)
    ens = paths.simulate_brownian(man, sections.default_start(man), horizon, dt, n_paths, seed)
    r = paths.geometric_ito_residual(F, theta, ens).terminal
    return float(np.sqrt(np.mean(r ** 2)))


def _ito_check(cfg, out):
    man = models.load_model(cfg.resolved_model)
    coarse = ito_residual_rms(man, cfg.dt, cfg.horizon, cfg.n_paths, cfg.seed)
    fine = ito_residual_rms(man, cfg.dt / 10, cfg.horizon, cfg.n_paths, cfg.seed)
    ratio = coarse / fine if fine > 0 else math.inf
    rows = [[cfg.dt, coarse], [cfg.dt / 10, fine]]
    _write_rows(out / "ito_residual.csv", ["dt", "rms_residual"], rows)
    return {"oracles": [oracle("ito-residual-shrink", ratio, 1.5, None, ratio >= 1.5,
                               "coarse/fine residual ratio at least 1.5")],
            "diagnostics": {"rms_residual": {"coarse": coarse, "fine": fine}},
            "files": ["ito_residual.csv"]}


def make_section(bundle, name: str, scale: float = 1.0):
    """Named test section of ``bundle`` multiplied by ``scale`` where meaningful."""
    if name == "zero":
        return models.zero_section(bundle)
    if name == "constant":
        v = np.zeros(bundle.k)
        v[0] = scale
        return models.constant_section(bundle, v)
    if name in ("sin", "cos-sum", "sin-cos"):
        s = models.torus_field(bundle, name)
        if scale == 1.0:
            return s
        return sections.SectionModel(f"{name}*{scale:g}", bundle,
                                     lambda c, x, f=s.field: scale * f(c, x))
    if name == "grad-height":
        return models.height_gradient(bundle, scale)
    if name == "hopf":
        xi = np.zeros(bundle.k)
        xi[0] = scale
        return models.hopf_section(bundle, xi)
    raise ConfigError(f"unknown section {name!r}")


def _default_section(model: str) -> str:
    if model.startswith("hopf"):
        return "hopf"
    if "sphere2" in model:
        return "grad-height"
    return "sin"


def section_report(section, ens, fd_step, resolution, n_points=20, seed=0, z=3.0):
    """Vertical and horizontal verdicts on a shared ensemble and FD tension co-vanishing."""
    vert = sections.vertical_martingale_test(section, ensemble=ens, resolution=resolution, z=z)
    hor = sections.horizontally_harmonic_test(section, ensemble=ens, resolution=resolution, z=z)
    P = section.bundle.principal
    rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(0, 9)))
    pts = coupling.sample_base_points(P.base, n_points, seed)
    lift = sections.EquivariantLift(section)
    thr = 2 * fd_step ** 2
    covanish, vmax, hmax = True, 0.0, 0.0
    for p in pts:
        c = P.base.index(p.chart_id)
        _, vt, _ = sections.vertical_tension_batch(section, c, p.coords, fd_step)
        z_p = np.concatenate([p.coords, [rng.uniform(-np.pi, np.pi)]])
        ht, _ = sections.horizontal_tension_batch(lift, c, z_p, fd_step)
        # compare fiber-metric norms: |frame components| of the vertical part
        u = section.bundle.frame(c, p.coords)
        vn = float(np.linalg.norm(np.linalg.solve(u, vt)))
        hn = float(np.linalg.norm(ht))
        vmax, hmax = max(vmax, vn), max(hmax, hn)
        covanish &= (vn <= thr) == (hn <= thr)
    pred, pse = sections.tension_drift_oracle(section, ens, fd_step)
    return vert, hor, {"covanish": bool(covanish), "max_vertical_tension": vmax,
                       "max_horizontal_tension": hmax, "threshold": thr,
                       "predicted_drift": pred, "predicted_se": pse}


def _section_test(cfg, out):
    bundle = models.load_model(cfg.resolved_model)
    name = cfg.section or _default_section(cfg.resolved_model)
    section = make_section(bundle, name, cfg.scale)
    ens = paths.simulate_brownian(bundle.base, sections.default_start(bundle.base), cfg.horizon,
                                  cfg.dt, cfg.n_paths, cfg.seed)
    vert, hor, tens = section_report(section, ens, cfg.fd_step, cfg.resolution, seed=cfg.seed)
    est = np.array([v.drift_estimate for v in vert.verdicts])
    se = np.array([v.std_error for v in vert.verdicts])
    width = 2 * 1.959963984540054 * np.sqrt(se ** 2 + tens["predicted_se"] ** 2)
    gap = float(np.max(np.abs(est - tens["predicted_drift"])))
    vert.integrals.to_csv(out / "vertical_integrals.csv") if cfg.n_paths <= CSV_PATHS else \
        vert.integrals[:, :CSV_PATHS].to_csv(out / "vertical_integrals.csv")
    return {"verdicts": [verdict("vertical", vert.decision, vert.verdicts, section=section.name),
                         verdict("horizontal", hor.decision, hor.verdicts, section=section.name)],
            "oracles": [oracle("paired-decisions-agree", [vert.decision, hor.decision], "equal",
                               None, vert.decision == hor.decision, "same decision"),
                        oracle("tensions-covanish", [tens["max_vertical_tension"],
                                                     tens["max_horizontal_tension"]],
                               "both below or both above", tens["threshold"], tens["covanish"],
                               "2*fd_step^2 at 20 points"),
                        oracle("drift-vs-tension", gap, 0.0, float(np.max(2 * width)),
                               bool(np.all(np.abs(est - tens["predicted_drift"]) <= 2 * width)),
                               "within two 95% CI widths")],
            "diagnostics": {"tension": tens},
            "files": ["vertical_integrals.csv"]}


def _bundle_check(cfg, out):
    P = models.load_model(cfg.resolved_model)
    rng = np.random.default_rng(np.random.SeedSequence(int(cfg.seed), spawn_key=(0, 10)))
    pts = coupling.sample_base_points(P.base, 100, cfg.seed)
    worst_rep, worst_hor, worst_proj = 0.0, 0.0, 0.0
    for p in pts:
        z = np.concatenate([p.coords, [rng.uniform(-np.pi, np.pi)]])
        pp = PointRef(p.chart_id, z)
        A = rng.standard_normal(P.group.dim)
        worst_rep = max(worst_rep, float(np.max(np.abs(
            P.connection_form(pp, P.fundamental_field(pp, A)) - A))))
        v = rng.standard_normal(P.base.dim)
        h = bundles.horizontal_lift_vector(P, pp, v)
        worst_hor = max(worst_hor, float(np.max(np.abs(P.connection_form(pp, h)))))
        worst_proj = max(worst_proj, float(np.max(np.abs(P.push_down(h).components - v))))
    ors = [oracle("connection-reproduces-generators", worst_rep, 0.0, 1e-8, worst_rep <= 1e-8,
                  "max error at 100 points"),
           oracle("lift-is-horizontal", worst_hor, 0.0, 1e-10, worst_hor <= 1e-10,
                  "max |omega(Hv)| at 100 points"),
           oracle("lift-projects-to-v", worst_proj, 0.0, 1e-10, worst_proj <= 1e-10,
                  "max |pi_* Hv - v| at 100 points")]
    x0 = sections.default_start(P.base)
    ens = paths.simulate_brownian(P.base, x0, cfg.horizon, cfg.dt, cfg.n_paths, cfg.seed)
    lifted = bundles.horizontal_lift_path(P, ens, 0.0)
    oi = bundles.omega_integral(P, lifted)
    vd = paths.drift_test(oi, cfg.resolution, z=3.0)
    diag = {"connection_coefficients": {"chart": x0.chart_id, "x": x0.coords,
                                        "omega": P.omega(P.base.index(x0.chart_id), x0.coords)},
            "omega_integral_max_abs": float(np.max(np.abs(oi.values)))}
    if cfg.resolved_model == "frames-sphere2":
        tri = [np.array([np.sin(a) * np.cos(b), np.sin(a) * np.sin(b), -np.cos(a)])
               for a, b in ((0.3, 0.0), (0.5, 2.0), (0.8, 4.0))]
        area = models.spherical_triangle_area(*tri)
        signed = -area * np.sign(np.dot(tri[0], np.cross(tri[1], tri[2])))
        hol = models.triangle_holonomy(tri, 1e-4, P)
        ors.append(oracle("triangle-holonomy", hol, float(signed), 1e-3,
                          abs(hol - signed) <= 1e-3, "rotation by enclosed area, step 1e-4"))
    if cfg.resolved_model == "hopf":
        u = PointRef(P.base.chart_id(0), np.array([0.3, -0.2]))
        for th in (0.1, 0.5, 1.0, 3.0):
            dp, dg = bundles.fiber_distance_check(P, u, P.group.identity(),
                                                  P.group.exp(np.array([th])))
            ors.append(oracle(f"fiber-distance-{th:g}", dp, dg, 1e-3, abs(dp - dg) <= 1e-3,
                              "Kaluza-Klein distance equals circle distance"))
    oi[:CSV_PATHS].to_csv(out / "omega_integral.csv")
    return {"verdicts": [verdict("omega-integral", vd.decision, [vd])], "oracles": ors,
            "diagnostics": diag, "files": ["omega_integral.csv"]}


def coupling_start(man):
    """Start pair for coupling experiments: a quarter turn along the first axis
    on tori, antipodal points on spheres, unit distance in Euclidean space."""
    x0 = sections.default_start(man)
    if man.name.startswith("sphere"):
        return x0, PointRef(man.chart_id(1), -x0.coords)
    if man.name.startswith("torus") or man.name == "circle":
        d = np.zeros(man.dim)
        d[0] = np.pi / 2
        return x0, PointRef(x0.chart_id, x0.coords + d)
    d = np.zeros(man.dim)
    d[0] = 1.0
    return x0, PointRef(x0.chart_id, x0.coords + d)


def _coupling(cfg, out):
    man = models.load_model(cfg.resolved_model)
    x0, y0 = coupling_start(man)
    pair = coupling.couple_brownian(man, x0, y0, cfg.horizon, cfg.dt, cfg.n_paths, cfg.seed,
                                    cfg.method, cfg.merge_radius)
    co = coupling.coalesce(pair)
    frac = pair.coupled_fraction
    n = cfg.n_paths
    ors = []
    kind = coupling._kind(man)
    if cfg.method == "reflection" and kind in ("torus", "flat"):
        d0 = float(np.linalg.norm(y0.coords - x0.coords))
        if kind == "torus":
            p = coupling.coupling_cdf_circle(d0, cfg.horizon, pair.merge_radius, cfg.dt)
        else:
            p = coupling.coupling_cdf_line(d0, cfg.horizon, pair.merge_radius, cfg.dt)
        se = math.sqrt(max(p * (1 - p), 1e-12) / n)
        ors.append(oracle("coupling-cdf", frac, p, 3 * se, abs(frac - p) <= 3 * se,
                          "within 3 binomial standard errors"))
    items, qm, qse = bm_battery(man, co.Ybar, cfg.resolution)
    target = man.dim * cfg.horizon
    ors.append(oracle("coalesced-trace-identity", qm, target, 0.05 * target,
                      abs(qm - target) <= 0.05 * target, "relative error 5%"))
    rows = [[i, repr(float(t))] for i, t in enumerate(pair.tau)]
    _write_rows(out / "coupling_times.csv", ["path_id", "tau"], rows)
    _thin(co.Ybar).to_csv(out / "coalesced_paths.csv")
    return {"verdicts": [verdict("coalesced-ito-drift", paths.combine_decisions(items), items)],
            "oracles": ors,
            "diagnostics": {"coupled_fraction": frac, "merge_radius": pair.merge_radius,
                            "method": cfg.method, **pair.meta},
            "files": ["coupling_times.csv", "coalesced_paths.csv"]}


def _scan_family(cfg, bundle, model):
    fam = cfg.family
    if model.startswith("hopf"):
        fam = fam or models.HOPF_NORMS
        return [make_section(bundle, "hopf", c) for c in fam]
    if "sphere2" in model:
        fam = fam or models.SASAKI_SCALES
        return [make_section(bundle, "grad-height", c) for c in fam]
    fam = fam or (0.0, 0.5, 1.0)
    return [make_section(bundle, "constant", c) for c in fam]


def _scan_verdicts(rep: coupling.ScanReport) -> list:
    return [{"name": e["name"], "decision": e["decision"], "forms": e["verdicts"],
             "lift_dispersion": e["lift_dispersion"]} for e in rep.entries]


def _liouville_scan(cfg, out):
    model = cfg.resolved_model
    bundle = models.load_model(model)
    family = _scan_family(cfg, bundle, model)
    x0 = sections.default_start(bundle.base)
    _, y0 = coupling_start(bundle.base)
    rep = coupling.liouville_experiment(bundle, family, cfg.horizon, cfg.dt, cfg.n_paths,
                                        cfg.seed, x0=x0, y0=y0, resolution=cfg.resolution,
                                        coupled_pairs=min(cfg.n_paths, 200), method=cfg.method)
    verdicts = _scan_verdicts(rep)
    constant_lift = [e["name"] for e in rep.entries if e["lift_dispersion"] == 0.0]
    diag = dict(rep.diagnostic)
    times, dist = diag.pop("times", []), diag.pop("mean_fiber_distance", [])
    _write_rows(out / "fiber_distance.csv", ["t", "mean_fiber_distance"],
                [[repr(float(t)), repr(float(d))] for t, d in zip(times, dist)])
    return {"verdicts": verdicts, "oracles": [],
            "diagnostics": {"coupled_lifts": diag, "scan": rep.meta,
                            "constant_lift_members": constant_lift},
            "files": ["fiber_distance.csv"]}


def _prop51(cfg, out):
    tm = models.load_model(cfg.resolved_model)
    if "torus" in cfg.resolved_model:
        family = [models.zero_section(tm), models.constant_section(tm, [1.0, -0.5]),
                  models.torus_field(tm, "sin"), models.torus_field(tm, "cos-sum")]
    else:
        family = [models.zero_section(tm), models.height_gradient(tm, 0.5)]
    ens = paths.simulate_brownian(tm.base, sections.default_start(tm.base), cfg.horizon, cfg.dt,
                                  cfg.n_paths, cfg.seed)
    verdicts, ors = [], []
    for s in family:
        r = models.prop51_test(tm, s, ensemble=ens, fd_step=cfg.fd_step, seed=cfg.seed,
                               resolution=cfg.resolution)
        verdicts.append(verdict(s.name, r.martingale.decision, r.martingale.verdicts,
                                gradient_max=r.gradient_max, constant=r.constant))
        ors.append(oracle(f"agreement-{s.name}", [r.martingale.decision, r.constant], "agree",
                          None, r.agree, "martingale iff components constant"))
    if "torus" in cfg.resolved_model:
        other = "complete_lift" if "horizontal" in cfg.resolved_model else "horizontal_lift"
        g1 = models.build_tm_connection(tm.base, tm.connection_name)
        g2 = models.build_tm_connection(tm.base, other)
        zs = np.random.default_rng(cfg.seed).uniform(-3, 3, (50, 4))
        same = bool(np.array_equal(g1(0, zs), g2(0, zs)))
        ors.append(oracle("lift-tables-equal", same, True, 0.0, same, "exact equality on the torus"))
    return {"verdicts": verdicts, "oracles": ors}


def _scan_oracles(rep, zero_names):
    ors = []
    passing = rep.passing
    ors.append(oracle("only-zero-passes", passing, zero_names, None,
                      sorted(passing) == sorted(zero_names), "exactly the zero member passes"))
    for e in rep.entries:
        if "oracle" in e and e["name"] not in zero_names:
            o = e["oracle"]
            ors.append(oracle(f"drift-vs-tension-{e['name']}", [v["drift_estimate"] for v in
                                                                 e["verdicts"]],
                              o["predicted_drift"], o["ci_width"], o["matches"],
                              "within two 95% CI widths"))
    return ors


def _sasaki(cfg, out):
    fam = cfg.family or models.SASAKI_SCALES
    rep = models.sasaki_experiment("sphere2", fam, cfg.n_paths, cfg.dt, cfg.horizon, cfg.seed,
                                   cfg.resolution, cfg.fd_step)
    zero = [e["name"] for e, c in zip(rep.entries, fam) if c == 0]
    return {"verdicts": _scan_verdicts(rep), "oracles": _scan_oracles(rep, zero),
            "diagnostics": {"scan": rep.meta}}


def _hopf(cfg, out):
    m = int(cfg.resolved_model[-1])
    fam = cfg.family or models.HOPF_NORMS
    rep = models.hopf_experiment(m, fam, cfg.n_paths, cfg.dt, cfg.horizon, cfg.seed,
                                 cfg.resolution, cfg.fd_step)
    zero = [e["name"] for e, c in zip(rep.entries, fam) if c == 0]
    ors = _scan_oracles(rep, zero)
    ors.append(oracle("fixed-point-g=i", rep.meta["fixed_space_dim_g_i"], 0, 0,
                      rep.meta["fixed_space_dim_g_i"] == 0, "fixed space of g=i is {0}"))
    return {"verdicts": _scan_verdicts(rep), "oracles": ors, "diagnostics": {"scan": rep.meta}}


RUNNERS = {"bm-check": _bm_check, "ito-check": _ito_check, "section-test": _section_test,
           "bundle-check": _bundle_check, "coupling": _coupling,
           "liouville-scan": _liouville_scan, "prop51": _prop51, "sasaki": _sasaki,
           "hopf": _hopf}


class NumericalFailure(RuntimeError):
    """Raised by ``run`` with the partial report attached."""

    def __init__(self, report: RunReport):
        super().__init__(report.error)
        self.report = report


def run(config: ExperimentConfig, write: bool = True) -> RunReport:
    """Run one experiment and write ``report.json`` plus CSV data to ``output_dir``.

    Configuration problems raise ``ConfigError``; geometric or numerical
    failures raise ``NumericalFailure`` carrying the partial report (also
    written to disk).
    """
    problems = validate(config)
    if problems:
        raise ConfigError("; ".join(problems))
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    report = RunReport(config.to_dict())
    old = os.environ.get("BUNDLEMART_THREADS")
    if config.threads is not None:
        os.environ["BUNDLEMART_THREADS"] = str(config.threads)
    start = time.perf_counter()
    try:
        res = RUNNERS[config.experiment](config, out)
        report.verdicts = res.get("verdicts", [])
        report.oracles = res.get("oracles", [])
        report.diagnostics = res.get("diagnostics", {})
        report.files = res.get("files", [])
    except (GeometryError, FloatingPointError, ValueError, np.linalg.LinAlgError) as exc:
        if isinstance(exc, ConfigError):
            raise
        report.status = "numerical-failure"
        report.error = f"{type(exc).__name__}: {exc}"
    finally:
        if config.threads is not None:
            if old is None:
                os.environ.pop("BUNDLEMART_THREADS", None)
            else:
                os.environ["BUNDLEMART_THREADS"] = old
    report.wall_time = time.perf_counter() - start
    if write:
        (out / "report.json").write_text(report.to_json())
    if report.status != "completed":
        raise NumericalFailure(report)
    return report
