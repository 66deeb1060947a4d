"""Batch driver: certification runs and norm studies written as JSON/CSV reports.

Reports carry the config digest and the domain hash, never timings, so a
re-run with the same config is byte-identical.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
import hashlib
import json
import logging
import math
import os
from pathlib import Path
import warnings

import numpy as np

from .errors import DomainFlag, InvariantViolation, SobexError
from .experiments import (
    calderon_brackets, calderon_run, commutation_run, product_run, slit_extension, slit_extension_mask,
)
from .extension import build_extension, default_window, operator_norm_study
from .grid import mask_for_shape
from .io import write_csv
from .partition import build_partition, certify_partition
from .quasicubes import build_quasicubes, certify_quasicubes
from .regularity import geodesic_ratio, measure_density, quasiconvexity
from .shapes import NAMED_SHAPES, load_shape
from .suites import SUITES, get_suite
from .whitney import certify_family, decompose

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
STUDIES = ("extension", "calderon", "commutation", "product", "slit")


@dataclass
class ExperimentConfig:
    domains: list = field(default_factory=lambda: ["unit_square"])
    p: list = field(default_factory=lambda: [2.0])
    levels: list = field(default_factory=lambda: [1 / 64, 1 / 128])
    epsilon: float = 0.5
    delta_S: float = 0.25
    suite: str = "smooth2d"
    seed: int = 0
    output: str = "reports"
    jobs: int = 1
    studies: list = field(default_factory=lambda: ["extension"])
    window_factor: float = 4.0
    probes: int = 10_000
    density_samples: int = 200
    pair_count: int = 50
    radii: list = field(default_factory=lambda: [1 / 16, 1 / 8, 1 / 4])
    quasiconvexity_limit: float = 2.0
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        if isinstance(self.p, (int, float)):
            self.p = [self.p]
        self.p = [float(p) for p in self.p]
        self.levels = [float(h) for h in self.levels]
        if not self.levels:
            raise ValueError("at least one grid level is required")
        if any(b >= a for a, b in zip(self.levels, self.levels[1:])):
            raise ValueError("levels must be strictly decreasing")
        if self.suite not in SUITES:
            raise ValueError(f"unknown suite {self.suite!r}")
        bad = set(self.studies) - set(STUDIES)
        if bad:
            raise ValueError(f"unknown studies {sorted(bad)}")
        if self.schema_version != SCHEMA_VERSION:
            raise ValueError(f"unsupported schema_version {self.schema_version}")

    @classmethod
    def from_dict(cls, doc):
        known = set(cls.__dataclass_fields__)
        extra = set(doc) - known
        if extra:
            raise ValueError(f"unknown config keys {sorted(extra)}")
        return cls(**doc)

    @classmethod
    def from_json(cls, path):
        path = Path(path)
        cfg = cls.from_dict(json.loads(path.read_text(encoding="utf-8")))
        # shape paths are relative to the config file
        base = path.parent
        cfg.domains = [
            d if isinstance(d, dict) or d in NAMED_SHAPES or Path(d).is_absolute() else str(base / d)
            for d in cfg.domains
        ]
        return cfg

    def to_dict(self):
        return asdict(self)

    def digest(self):
        return hashlib.sha256(_dumps(self.to_dict()).encode()).hexdigest()[:16]


def resolve_jobs(jobs):
    env = os.environ.get("SOBEX_JOBS")
    return max(1, int(env) if env else int(jobs))


def domain_label(domain, i=0):
    if isinstance(domain, dict):
        return f"domain{i}"
    if domain in NAMED_SHAPES:
        return domain
    return Path(domain).stem


def level_tag(h):
    n = 1 / h
    return f"h{int(round(n))}" if math.isclose(n, round(n)) else f"h{h:g}"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k) if not isinstance(k, float) else repr(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    return obj


def _dumps(obj):
    return json.dumps(_jsonable(obj), sort_keys=True, indent=2) + "\n"


def _map(fn, tasks, jobs):
    if jobs <= 1 or len(tasks) <= 1:
        return [fn(*t) for t in tasks]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, *zip(*tasks)))


# --- certification ----------------------------------------------------------

def certify_domain(cfg, domain, h, dumps=None):
    """All certification stages for one domain at one level; flags never abort the run."""
    dumps = dumps or {}
    mask = mask_for_shape(load_shape(domain), h)
    out = {"h": h, "epsilon": cfg.epsilon, "delta_S": cfg.delta_S, "domain_hash": mask.digest(),
           "flags": [], "violations": []}

    def stage(name, fn):
        try:
            out[name] = fn()
        except InvariantViolation as exc:
            out["violations"].append({"stage": name, "error": type(exc).__name__,
                                      "message": str(exc), "witness": exc.witness})
        except DomainFlag as exc:
            out["flags"].append({"stage": name, "error": type(exc).__name__, "message": str(exc),
                                 "witness": getattr(exc, "cubes", None)})
        except SobexError as exc:
            out["violations"].append({"stage": name, "error": type(exc).__name__,
                                      "message": str(exc), "witness": None})

    window = default_window(mask, cfg.window_factor)
    state = {}

    def whitney():
        fam = decompose(mask, window, certify=False)
        state["fam"] = fam
        if "whitney" in dumps:
            fam.dump_jsonl(dumps["whitney"])
        return certify_family(fam)

    def partition():
        basis = build_partition(state["fam"])
        rep = certify_partition(basis, cfg.probes, cfg.seed)
        rep["gradient_constant"] = basis.gradient_constant()
        if "partition" in dumps:
            dump_partition_sum(basis, dumps["partition"], cfg.seed)
        return rep

    def quasicubes():
        q = build_quasicubes(state["fam"], mask, cfg.epsilon, cfg.delta_S, strict=False)
        if "quasicubes" in dumps:
            q.dump_jsonl(dumps["quasicubes"])
        rep = certify_quasicubes(q)
        if q.violations:
            out["flags"].append({"stage": "quasicubes", "error": "RegularityViolationError",
                                 "message": f"{len(q.violations)} cubes with empty H_Q below delta_S",
                                 "witness": sorted(int(i) for i in q.violations)[:20]})
        return rep

    def ahlfors():
        rep = measure_density(mask, cfg.delta_S, cfg.density_samples, cfg.seed)
        return {"C_A": rep.C_A, "delta_A": rep.delta_A, "curve": rep.curve()}

    def quasiconvex():
        curve, skipped = {}, []
        for R in cfg.radii:
            if R <= 2 * h:
                skipped.append(R)  # too few cells for a geodesic at this level
                continue
            curve[R] = quasiconvexity(mask, R, cfg.pair_count, cfg.seed).C_q
        if not curve:
            return {"C_q": None, "curve": {}, "skipped_radii": skipped}
        worst = max(curve.values())
        if worst > cfg.quasiconvexity_limit:
            out["flags"].append({"stage": "quasiconvexity", "error": "QuasiconvexityFlag",
                                 "message": f"C_q = {worst!r} exceeds {cfg.quasiconvexity_limit!r}",
                                 "witness": None})
        return {"C_q": worst, "curve": curve, "skipped_radii": skipped}

    stage("whitney", whitney)
    if "fam" in state:
        stage("partition", partition)
        stage("quasicubes", quasicubes)
    stage("ahlfors", ahlfors)
    stage("quasiconvexity", quasiconvex)
    out["status"] = "violation" if out["violations"] else ("flag" if out["flags"] else "pass")
    return out


def dump_partition_sum(basis, path, seed=0, count=2000):
    """Sample the partition sum at random points off the set; CSV rows of coordinates and sum."""
    from .partition import distance_to_set

    fam = basis.family
    rng = np.random.default_rng(seed)
    lo = np.asarray(fam.window.center) - fam.window.half_side
    pts = lo + rng.random((4 * count, fam.dim)) * fam.window.side
    pts = pts[distance_to_set(fam, pts) > fam.spacing][:count]
    rows_, cubes, vals = basis.values(pts)
    total = np.bincount(rows_, weights=vals, minlength=len(pts))
    cols = [f"x{k}" for k in range(fam.dim)] + ["sum"]
    write_csv(path, [dict(zip(cols, [*p, s])) for p, s in zip(pts, total)], cols)


def run_certification(cfg, dumps=None):
    """Write one JSON report per domain and level; return the exit code."""
    outdir = Path(cfg.output)
    outdir.mkdir(parents=True, exist_ok=True)
    tasks = [(cfg, d, h, _dump_paths(dumps, domain_label(d, i), h))
             for i, d in enumerate(cfg.domains) for h in cfg.levels]
    results = _map(certify_domain, tasks, resolve_jobs(cfg.jobs))
    code = 0
    summary = []
    for (_, d, h, _), i_res in zip(tasks, results):
        label = domain_label(d, cfg.domains.index(d))
        report = {"schema_version": SCHEMA_VERSION, "config": cfg.to_dict(),
                  "config_digest": cfg.digest(), "domain": label, **i_res}
        path = outdir / f"certify_{label}_{level_tag(h)}.json"
        path.write_text(_dumps(report), encoding="utf-8")
        summary.append({"domain": label, "h": h, "status": i_res["status"],
                        "domain_hash": i_res["domain_hash"]})
        if i_res["status"] == "violation":
            code = 3
        elif i_res["status"] == "flag" and code == 0:
            code = 2
    (outdir / "certify_summary.json").write_text(
        _dumps({"schema_version": SCHEMA_VERSION, "config_digest": cfg.digest(), "runs": summary,
                "exit_code": code}), encoding="utf-8")
    return code


def _dump_paths(dumps, label, h):
    if not dumps:
        return None
    out = {}
    for kind, base in dumps.items():
        if base is None:
            continue
        p = Path(base)
        p.mkdir(parents=True, exist_ok=True)
        ext = "csv" if kind == "partition" else "jsonl"
        out[kind] = str(p / f"{kind}_{label}_{level_tag(h)}.{ext}")
    return out


# --- norm studies -----------------------------------------------------------

def _extension_study(cfg, domain, label, h, dump=None):
    mask = mask_for_shape(load_shape(domain), h)
    emap = build_extension(mask, default_window(mask, cfg.window_factor), cfg.epsilon, cfg.delta_S)
    if dump:
        emap.dump_stats(dump)
    fns = get_suite(cfg.suite)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        reports = [operator_norm_study(emap, fns, p) for p in cfg.p]
    return mask.digest(), [r.as_dict() for r in reports]


def _study_errors(study, label, h, exc):
    return {"study": study, "domain": label, "h": h, "error": type(exc).__name__, "message": str(exc)}


def run_norm_study(cfg, dump_operator=None):
    """Write CSV tables for the configured studies; per-experiment errors are recorded, not raised."""
    outdir = Path(cfg.output)
    outdir.mkdir(parents=True, exist_ok=True)
    header = f"schema_version={SCHEMA_VERSION} config_digest={cfg.digest()} config={json.dumps(_jsonable(cfg.to_dict()), sort_keys=True)}"
    errors = []
    jobs = resolve_jobs(cfg.jobs)

    if "extension" in cfg.studies:
        tasks, labels = [], []
        for i, d in enumerate(cfg.domains):
            label = domain_label(d, i)
            for h in cfg.levels:
                dump = None
                if dump_operator:
                    Path(dump_operator).mkdir(parents=True, exist_ok=True)
                    dump = str(Path(dump_operator) / f"operator_{label}_{level_tag(h)}.json")
                tasks.append((cfg, d, label, h, dump))
                labels.append((label, h))
        results = _map(_safe(_extension_study), tasks, jobs)
        rows, summary = [], []
        prev = {}
        for (label, h), res in zip(labels, results):
            if isinstance(res, Exception):
                errors.append(_study_errors("extension", label, h, res))
                continue
            digest, reps = res
            for rep in reps:
                p = rep["p"]
                for name, r in zip(rep["names"], rep["ratios"]):
                    rows.append({"domain": label, "domain_hash": digest, "h": h, "p": p,
                                 "epsilon": cfg.epsilon, "function": name, "ratio": r})
                ref = prev.get((label, p))
                drift = None if ref is None else abs(rep["max_ratio"] - ref) / ref
                prev[(label, p)] = rep["max_ratio"]
                summary.append({"domain": label, "domain_hash": digest, "h": h, "p": p,
                                "epsilon": cfg.epsilon, "max_ratio": rep["max_ratio"],
                                "refinement_drift": drift})
        write_csv(outdir / "extension_ratios.csv", rows,
                  ["domain", "domain_hash", "h", "p", "epsilon", "function", "ratio"], header)
        write_csv(outdir / "extension_summary.csv", summary,
                  ["domain", "domain_hash", "h", "p", "epsilon", "max_ratio", "refinement_drift"], header)

    if "calderon" in cfg.studies:
        rows, brackets = [], []
        prev = None
        for h in cfg.levels:
            try:
                res = calderon_run(h, cfg.p, cfg.suite)
            except (SobexError, ValueError) as exc:
                errors.append(_study_errors("calderon", "window", h, exc))
                continue
            rows += [{"h": h, **r} for r in res]
            b = calderon_brackets(res)
            for p, (lo, hi) in sorted(b.items()):
                row = {"h": h, "p": p, "lower": lo, "upper": hi, "C": max(1 / lo, hi)}
                if prev is not None and p in prev:
                    row["drift_lower"] = abs(lo - prev[p][0]) / prev[p][0]
                    row["drift_upper"] = abs(hi - prev[p][1]) / prev[p][1]
                brackets.append(row)
            prev = b
        write_csv(outdir / "calderon_ratios.csv", rows, ["h", "p", "name", "ratio"], header)
        write_csv(outdir / "calderon_brackets.csv", brackets,
                  ["h", "p", "lower", "upper", "C", "drift_lower", "drift_upper"], header)

    if "commutation" in cfg.studies:
        try:
            res = commutation_run(tuple(cfg.levels))
            rows = [{"h": h, "residual": r, "fitted_order": res["order"]}
                    for h, r in zip(res["spacings"], res["residuals"])]
        except (SobexError, ValueError) as exc:
            errors.append(_study_errors("commutation", "interval", None, exc))
            rows = []
        write_csv(outdir / "commutation.csv", rows, ["h", "residual", "fitted_order"], header)

    if "product" in cfg.studies:
        rows, summary = [], []
        for p in cfg.p:
            ref = None
            for h in cfg.levels:
                try:
                    res = product_run(h, p, ref)
                except (SobexError, ValueError) as exc:
                    errors.append(_study_errors("product", "interval x interval", h, exc))
                    continue
                ref = res
                rows += [{"h": h, "p": p, "function": n, "ratio": r}
                         for n, r in zip(res["names"], res["ratios"])]
                summary.append({k: res[k] for k in (
                    "h", "p", "max_ratio", "refinement_drift", "restriction_exact", "transpose_gap",
                    "converse_pass_fraction", "fubini_gap")})
        write_csv(outdir / "product_ratios.csv", rows, ["h", "p", "function", "ratio"], header)
        write_csv(outdir / "product_summary.csv", summary,
                  ["h", "p", "max_ratio", "refinement_drift", "restriction_exact", "transpose_gap",
                   "converse_pass_fraction", "fubini_gap"], header)

    if "slit" in cfg.studies:
        rows = []
        for p in cfg.p:
            prev = None
            for h in cfg.levels:
                try:
                    emap = slit_extension(h, cfg.delta_S, cfg.epsilon)
                    with warnings.catch_warnings():
                        warnings.simplefilter("ignore")
                        rep = operator_norm_study(emap, get_suite("jump"), p)
                    qc = geodesic_ratio(slit_extension_mask(h), (0.5, 2 * h), (0.5, -2 * h))
                except (SobexError, ValueError) as exc:
                    errors.append(_study_errors("slit", "slit_square", h, exc))
                    continue
                growth = None if prev is None else rep.max_ratio / prev
                rows.append({"h": h, "p": p, "max_ratio": rep.max_ratio, "growth": growth,
                             "quasiconvexity_ratio": qc})
                prev = rep.max_ratio
            growths = [r["growth"] for r in rows if r["p"] == p and r["growth"] is not None]
            flag = bool(growths) and all(g > 1 for g in growths)
            for r in rows:
                if r["p"] == p:
                    r["non_extension_behavior"] = flag
        write_csv(outdir / "slit.csv", rows,
                  ["h", "p", "max_ratio", "growth", "quasiconvexity_ratio", "non_extension_behavior"],
                  header)

    write_csv(outdir / "errors.csv", errors, ["study", "domain", "h", "error", "message"], header)
    return 0


class _safe:
    """Wrap a task so expected failures come back as values (picklable for worker pools)."""

    def __init__(self, fn):
        self.fn = fn

    def __call__(self, *args):
        try:
            return self.fn(*args)
        except (SobexError, ValueError) as exc:
            return exc
