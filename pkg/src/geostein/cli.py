"""Batch driver: JSON config in, JSON report (and CSV samples) out.

    geostein --config run.json --out results/ [--seed N] [--threads N]

Exit codes: 0 success, 1 computation error, 2 configuration error. Every
failed run leaves ``<out>/.failed`` next to whatever it managed to write.
"""

from __future__ import annotations

import argparse
import copy
import dataclasses
import datetime as _dt
import json
import logging
import math
import os
import sys
import time
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from . import __version__
from . import ksd as K
from . import measures as M
from . import operator as O
from . import sampling as S
from . import spectral as SP
from .errors import ConfigError, GeoSteinError, SchemaError, TooFewSamples, UnknownField
from .geometry import CIRCLE, EUCLIDEAN, HYPERBOLIC, SPHERE, TORUS, ManifoldSpec
from .io import read_samples_csv, write_json, write_samples_csv
from .quadrature import make_grid

log = logging.getLogger(__name__)

COMMANDS = ("sample", "ksd", "gof", "stein-check", "symmetry-check", "spectrum",
            "solve-stein", "curvature-check")
REPORT_NAME = "report.json"
SAMPLES_NAME = "samples.csv"
FAILED_MARKER = ".failed"


def _schema(name):
    return json.loads(resources.files("geostein").joinpath("schemas", name).read_text("utf-8"))


CONFIG_SCHEMA = _schema("config.schema.json")
REPORT_SCHEMA = _schema("report.schema.json")

_Validator = jsonschema.Draft202012Validator


def _with_defaults(cls):
    props = cls.VALIDATORS["properties"]

    def fill(validator, properties, instance, schema):
        if isinstance(instance, dict):
            for key, sub in properties.items():
                if "default" in sub:
                    instance.setdefault(key, copy.deepcopy(sub["default"]))
        yield from props(validator, properties, instance, schema)

    return jsonschema.validators.extend(cls, {"properties": fill})


_Filler = _with_defaults(_Validator)


def _pointer(path) -> str:
    return "".join("/" + str(p).replace("~", "~0").replace("/", "~1") for p in path)


def _raise_schema(err):
    path = list(err.absolute_path)
    if err.validator == "required":
        missing = [k for k in err.validator_value if k not in err.instance]
        path += missing[:1]
    raise SchemaError(err.message, _pointer(path))


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated config with every default filled in."""

    values: dict

    @property
    def command(self) -> str:
        return self.values["command"]

    @property
    def seed(self) -> int:
        return self.values["seed"]

    def __getitem__(self, key):
        return self.values[key]

    def get(self, key, default=None):
        return self.values.get(key, default)

    def with_seed(self, seed: int) -> ExperimentConfig:
        return ExperimentConfig({**self.values, "seed": int(seed)})

    def to_json(self) -> dict:
        return copy.deepcopy(self.values)


def parse_config(text: str, strict: bool = True) -> ExperimentConfig:
    """Validate a JSON config and materialise its defaults.

    Raises SchemaError (with a JSON pointer) on invalid documents and, in
    strict mode, UnknownField for keys the schema does not define. Lenient
    mode drops unknown keys with a warning.
    """
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc}", "") from None
    if not isinstance(doc, dict):
        raise SchemaError("config must be a JSON object", "")
    errors = list(_Validator(CONFIG_SCHEMA).iter_errors(doc))
    extra = [e for e in errors if e.validator == "additionalProperties"]
    if extra:
        e = extra[0]
        names = sorted(set(e.instance) - set(e.schema.get("properties", {})))
        if strict:
            raise UnknownField(f"unknown field {names[0]!r}",
                               _pointer(list(e.absolute_path) + names[:1]))
        for e in extra:
            for k in set(e.instance) - set(e.schema.get("properties", {})):
                log.warning("ignoring unknown field %s", _pointer(list(e.absolute_path) + [k]))
                del e.instance[k]
        errors = list(_Validator(CONFIG_SCHEMA).iter_errors(doc))
    if errors:
        _raise_schema(jsonschema.exceptions.best_match(errors))
    _Filler(CONFIG_SCHEMA).validate(doc)
    _materialise(doc)
    cfg = ExperimentConfig(doc)
    _cross_check(cfg)
    return cfg


def _materialise(doc):
    man = doc["manifold"]
    man.setdefault("dim", 1 if man["kind"] == CIRCLE else 2)
    dens = doc["density"]
    fam = dens["family"]
    if fam in ("von-mises-fisher",):
        dens.setdefault("kappa", 1.0)
    if fam in ("intrinsic-radial", "gaussian"):
        dens.setdefault("sigma", 1.0)
    if fam == "intrinsic-radial":
        dens.setdefault("alpha", 2.0)
    if doc["h_lap"] is None:
        # nested kernel differences lose accuracy to roundoff at smaller steps
        nested = doc["kernel"]["mode"] == "nested-fd" and doc["command"] in ("ksd", "gof")
        doc["h_lap"] = K.NESTED_FD_STEP if nested else O.DEFAULT_CFG.h_lap


def _cross_check(cfg: ExperimentConfig):
    try:
        spec = build_manifold(cfg)
    except (ValueError, GeoSteinError) as exc:
        raise SchemaError(str(exc), "/manifold") from None
    try:
        build_density(cfg, spec)
    except (ValueError, GeoSteinError) as exc:
        raise SchemaError(str(exc), "/density") from None
    cmd = cfg.command
    if cmd in ("ksd", "gof") and not cfg.get("kernel"):
        raise SchemaError("ksd and gof need a kernel", "/kernel")
    if cmd in ("spectrum", "solve-stein"):
        if spec.kind not in (CIRCLE, TORUS, EUCLIDEAN) or spec.dim > 2:
            raise SchemaError("spectral commands need a circle, 2-torus or Euclidean grid",
                              "/manifold/kind")
        if spec.kind == EUCLIDEAN and spec.restriction is None and "bounds" not in cfg.values:
            raise SchemaError("Euclidean grids need a ball or bounds", "/bounds")
    if cmd == "curvature-check" and cfg["density"]["family"] not in ("intrinsic-radial",
                                                                     "gaussian"):
        raise SchemaError("curvature-check needs an intrinsic-radial or gaussian density",
                          "/density/family")
    try:
        diff_config(cfg)
    except ValueError as exc:
        raise SchemaError(str(exc), "/h_lap") from None


# ---------------------------------------------------------------------------
# config -> library objects


def build_manifold(cfg) -> ManifoldSpec:
    m = cfg["manifold"]
    spec = ManifoldSpec(m["kind"], m["dim"])
    if "ball" in m:
        spec = spec.with_ball(tuple(m["ball"]["center"]), m["ball"]["radius"])
    if "puncture" in m:
        spec = spec.punctured(tuple(m["puncture"]))
    return spec


def build_density(cfg, spec) -> M.TargetDensity:
    d = cfg["density"]
    fam = d["family"]
    mu = d.get("mu")
    if mu is None:
        mu = spec.unrestricted().origin()
    if fam == "uniform":
        return M.uniform(spec)
    if fam == "von-mises-fisher":
        return M.von_mises_fisher(spec, mu, d["kappa"])
    if fam == "riemannian-gaussian":
        gamma = d.get("gamma", np.eye(spec.dim).tolist())
        return M.riemannian_gaussian(spec, mu, gamma)
    if fam == "intrinsic-radial":
        return M.intrinsic_radial(spec, mu, d["alpha"], d["sigma"])
    if fam == "gaussian":
        if spec.kind != EUCLIDEAN:
            raise ValueError("the gaussian family lives on Euclidean models")
        return M.gaussian(spec, d["sigma"], d.get("mu"))
    raise ValueError(f"unknown family {fam}")


def build_kernel(cfg) -> K.Kernel:
    k = cfg["kernel"]
    return K.Kernel(k["kind"], k["lengthscale"], k["mode"])


def build_function(spec, t, desc) -> O.TestFunction:
    kind = desc["kind"]
    if kind == "bump":
        center = desc.get("center")
        if center is None:
            fam = t.family
            center = getattr(fam, "mu", spec.unrestricted().origin())
        return O.bump(spec, np.asarray(center, float), desc.get("radius", 1.0))
    if kind in ("cos", "sin"):
        return O.trig(spec, kind, desc.get("frequency", 1.0), desc.get("phase", 0.0),
                      desc.get("axis", 0))
    if kind == "linear":
        return O.linear(spec, desc.get("direction", np.eye(spec.ambient_dim)[0]))
    return O.constant(spec, desc.get("value", 1.0))


def diff_config(cfg) -> O.DiffConfig:
    return O.DiffConfig(cfg["h_grad"], cfg["h_lap"])


def chain_config(cfg) -> S.ChainConfig:
    return S.ChainConfig(n_samples=cfg["n"], step=cfg["step"], burn_in=cfg["burn_in"],
                         thinning=cfg["thinning"], seed=cfg["seed"], n_chains=cfg["n_chains"])


def _samples(cfg, t):
    if cfg["input"]:
        try:
            s = read_samples_csv(cfg["input"])
        except OSError as exc:
            raise SchemaError(f"cannot read samples: {exc}", "/input") from None
        if s.manifold.unrestricted() != t.manifold.unrestricted():
            raise SchemaError("sample file manifold differs from the config", "/input")
        t.check_support(s.points)
        return S.SampleSet(t.manifold, s.points, s.meta)
    return S.geodesic_rw_mh(t, chain_config(cfg))


def _grid_spec(cfg, spec) -> SP.GridSpec:
    return SP.GridSpec(spec, cfg["resolution"], bounds=cfg.get("bounds"))


# ---------------------------------------------------------------------------
# commands


def _cmd_sample(cfg, t, out, threads):
    s = S.geodesic_rw_mh(t, chain_config(cfg))
    write_samples_csv(s, out / SAMPLES_NAME)
    return {"sample_file": SAMPLES_NAME, "n": len(s), "meta": s.meta}


def _gram(cfg, t, threads):
    s = _samples(cfg, t)
    g = K.stein_gram(t, build_kernel(cfg), s.points, diff_config(cfg), n_jobs=threads,
                     on_cut="drop")
    return s, g


KSD_NOTE = ("KSD is reported as E k_P(X, X'), the squared discrepancy. Samples show "
            "distributional agreement only; convergence of density ratios in L2(P) is "
            "not observable from them.")


def _cmd_ksd(cfg, t, out, threads):
    s, g = _gram(cfg, t, threads)
    u, v = K.ksd_estimate(g)
    return {"n": len(s), "ksd_u": u, "ksd_v": v, "jackknife_se": K.jackknife_se(g),
            "psd": K.psd_report(g), "dropped": len(g.dropped),
            "note": KSD_NOTE}


def _cmd_gof(cfg, t, out, threads):
    s = _samples(cfg, t)
    if len(s) < 10:
        raise TooFewSamples(f"the bootstrap test needs n >= 10, got {len(s)}")
    g = K.stein_gram(t, build_kernel(cfg), s.points, diff_config(cfg), n_jobs=threads,
                     on_cut="drop")
    res = K.gof_wild_bootstrap(g, cfg["level"], cfg["B"], cfg["seed"])
    return {"n": len(s), **res.to_json(), "note": KSD_NOTE}


def _cmd_stein_check(cfg, t, out, threads):
    spec = t.manifold
    f = build_function(spec, t, cfg.get("test_function") or {"kind": "bump"})
    s = _samples(cfg, t)
    est, se = O.stein_identity_mc(t, f, s, diff_config(cfg))
    quad = None
    try:
        grid = make_grid(spec, pole=getattr(t.family, "mu", None)) \
            if spec.kind == SPHERE else make_grid(spec)
        vals = O.stein_values(t, f, grid.nodes[t.support_mask(grid.nodes)], diff_config(cfg))
        full = np.zeros(len(grid.weights))
        full[t.support_mask(grid.nodes)] = vals
        quad = M.expectation_quadrature(t, grid, full)
    except GeoSteinError as exc:
        log.info("no quadrature oracle: %s", exc)
    return {"n": len(s), "test_function": f.label, "estimate": est, "stderr": se,
            "within_3_stderr": bool(abs(est) <= 3 * se), "quadrature": quad,
            "acceptance_rate": s.meta.get("acceptance_rate")}


def _cmd_symmetry_check(cfg, t, out, threads):
    spec = t.manifold
    f = build_function(spec, t, cfg.get("test_function") or {"kind": "sin"})
    h = build_function(spec, t, cfg.get("partner_function") or {"kind": "cos"})
    grid = make_grid(spec, cfg["resolution"], bounds=cfg.get("bounds"))
    d = O.symmetry_defect(t, f, h, grid, diff_config(cfg))
    return {"defect": d, "f": f.label, "h": h.label, "grid_nodes": len(grid.weights)}


def _cmd_spectrum(cfg, t, out, threads):
    op = SP.discretize(t, _grid_spec(cfg, t.manifold))
    s = SP.eigenpairs(op)
    rep = SP.spectral_report(op)
    payload = {**rep.to_json(), "structure": op.structure_residuals()}
    if rep.kernel_dim == 1:
        payload["wpi"] = SP.wpi_check(op, cfg["trials"], cfg["seed"], spectrum=s).to_json()
    return payload


def _cmd_solve_stein(cfg, t, out, threads):
    spec = t.manifold
    op = SP.discretize(t, _grid_spec(cfg, spec))
    rhs = build_function(spec, t, cfg.get("rhs") or {"kind": "cos"})
    h = rhs(op.nodes)
    f = SP.solve_stein_equation(op, h)
    payload = {"rhs": rhs.label, "residual": SP.stein_residual(op, f, h),
               "nodes": op.nodes.tolist(), "solution": f.tolist()}
    if spec.kind == EUCLIDEAN and spec.dim == 1:
        x = op.nodes[:, 0]
        payload["boundary_derivative"] = list(SP.boundary_derivative(f, x[1] - x[0]))
    return payload


def _cmd_curvature_check(cfg, t, out, threads):
    spec = t.manifold
    m = spec.model
    fam = t.family
    center = getattr(fam, "mu", spec.unrestricted().origin())
    # points on geodesic rays from the centre of the potential
    rng = np.random.default_rng(cfg["seed"])
    k = cfg["points"]
    dirs = rng.standard_normal((k, m.n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = np.linspace(0.0, 3.0 if spec.kind != SPHERE else 2.5, k)
    X = m.exp(np.broadcast_to(center, (k, m.D)), (radii[:, None] * dirs) @ m.frame(center))
    kappa = M.bakry_emery_bound(t, X)
    payload = {"kappa_hat": kappa, "ricci": M.ricci_constant(spec),
               "radii": [0.0, float(radii[-1])]}
    if spec.kind == HYPERBOLIC and isinstance(fam, M.IntrinsicRadial):
        quoted = M.quoted_hyperbolic_kappa(fam.sigma, spec.dim)
        payload["quoted_kappa"] = quoted
        payload["expected_kappa"] = 2.0 / fam.sigma**2 - (spec.dim - 1)
        payload["discrepancy"] = bool(abs(quoted - kappa) > 1e-4)
    return payload


DISPATCH = {
    "sample": _cmd_sample,
    "ksd": _cmd_ksd,
    "gof": _cmd_gof,
    "stein-check": _cmd_stein_check,
    "symmetry-check": _cmd_symmetry_check,
    "spectrum": _cmd_spectrum,
    "solve-stein": _cmd_solve_stein,
    "curvature-check": _cmd_curvature_check,
}


# ---------------------------------------------------------------------------
# running


def _report(cfg, status, payload, error, started, t0):
    return {
        "command": cfg.command if cfg else None,
        "status": status,
        "config": cfg.to_json() if cfg else None,
        "version": __version__,
        "seed": cfg.seed if cfg else None,
        "wall_clock": {"started": started, "seconds": time.perf_counter() - t0},
        "payload": payload,
        "error": error,
    }


def _finish(out: Path, report: dict) -> int:
    jsonschema.validate(json.loads(json.dumps(report, default=float)), REPORT_SCHEMA)
    out.mkdir(parents=True, exist_ok=True)
    marker = out / FAILED_MARKER
    if report["status"] != "ok":
        marker.write_text(f"{report['error']['type']}: {report['error']['message']}\n",
                          encoding="utf-8")
    write_json(report, out / REPORT_NAME)
    if report["status"] == "ok" and marker.exists():
        marker.unlink()
    return {"ok": 0, "error": 1, "config-error": 2}[report["status"]]


def thread_count(flag: int | None = None) -> int:
    if flag is not None:
        return max(1, int(flag))
    env = os.environ.get("GEOSTEIN_THREADS")
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            log.warning("ignoring GEOSTEIN_THREADS=%r", env)
    return 1


def run(config: ExperimentConfig, out, threads: int | None = None) -> int:
    """Run one command and write ``<out>/report.json``; returns the exit code."""
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    started = _dt.datetime.now(_dt.timezone.utc).isoformat()
    t0 = time.perf_counter()
    marker = out / FAILED_MARKER
    # mark the directory until the run is known to have succeeded
    marker.write_text("running\n", encoding="utf-8")
    try:
        spec = build_manifold(config)
        t = dataclasses.replace(build_density(config, spec), h_grad=config["h_grad"])
        payload = DISPATCH[config.command](config, t, out, thread_count(threads))
    except ConfigError as exc:
        err = {"type": type(exc).__name__, "message": str(exc), "pointer": exc.pointer}
        return _finish(out, _report(config, "config-error", None, err, started, t0))
    except (GeoSteinError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        err = {"type": type(exc).__name__, "message": str(exc)}
        return _finish(out, _report(config, "error", None, err, started, t0))
    return _finish(out, _report(config, "ok", _clean(payload), None, started, t0))


def _clean(obj):
    """Turn numpy scalars and arrays into plain JSON values."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, np.bool_):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="geostein", description=__doc__.splitlines()[0])
    p.add_argument("--config", required=True, help="path to a JSON experiment config")
    p.add_argument("--out", default=".", help="output directory (default: .)")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads (default: $GEOSTEIN_THREADS or 1)")
    p.add_argument("--lenient", action="store_true", help="ignore unknown config fields")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out)
    started = _dt.datetime.now(_dt.timezone.utc).isoformat()
    t0 = time.perf_counter()
    try:
        text = Path(args.config).read_text(encoding="utf-8")
        cfg = parse_config(text, strict=not args.lenient)
        if args.seed is not None:
            if args.seed < 0 or args.seed >= 2**64:
                raise SchemaError("seed must be an unsigned 64-bit integer", "/seed")
            cfg = cfg.with_seed(args.seed)
    except (OSError, ConfigError) as exc:
        pointer = getattr(exc, "pointer", "")
        err = {"type": type(exc).__name__, "message": str(exc), "pointer": pointer}
        print(f"config error: {exc}", file=sys.stderr)
        return _finish(out, _report(None, "config-error", None, err, started, t0))
    code = run(cfg, out, args.threads)
    if code:
        print(f"geostein: {cfg.command} failed, see {out / REPORT_NAME}", file=sys.stderr)
    return code


if __name__ == "__main__":
    sys.exit(main())
