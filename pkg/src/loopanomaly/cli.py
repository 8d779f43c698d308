"""Experiment runner: ``loopanomaly <experiment> --config run.yaml [overrides]``.

Every experiment writes ``report.csv``, ``report.json``, ``summary.txt``,
``plots/*.png`` and ``meta.json`` into the output directory.  The CSV and JSON
files depend only on the configuration (seed included), not on the worker
count or the wall clock; timings and host details go to ``meta.json``.

Exit codes: 0 success, 2 configuration error, 3 numerical error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import platform
import sys
import time
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Optional

import numpy as np
import yaml

from . import __version__
from .conformal_field import (
    Box,
    corner_f,
    edge_gradient_mismatch,
    field_from_dict,
    subdivision_laplacian_check,
)
from .errors import ConfigurationError, DomainError, NumericalError, RefusalError
from .loop_mass import (
    DEFAULT_N_LOOP,
    clen_mass_exact,
    delta_sweep,
    estimate_anomaly_direct,
    estimate_discrepancy,
    mass_direct_bruteforce,
    predicted_anomaly,
)
from .loop_space import MeasureSpec, occupation_moment_b, occupation_scaling_check
from .spectral import TorusSpec, spectral_report, torus_loop_mass

EXPERIMENTS = ("estimate-b", "anomaly", "sweep", "bruteforce", "spectral", "subdivision", "occupation")
CSV_COLUMNS = ("field_id", "measure", "estimator", "delta", "n", "value", "std_error", "fallback_rate", "seed")
EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL = 0, 2, 3

DEFAULT_FIELD = {"kind": "analytic_bump", "amplitude": 0.5, "radius": 2.0, "box": [-2.5, 2.5, -2.5, 2.5]}
DEFAULT_TORUS_FIELD = {"kind": "fourier", "modes": [[1, 0, 0.1, 0.0], [0, 1, 0.1, 0.3]], "box": [0.0, 1.0, 0.0, 1.0]}
DEFAULT_SUBDIVISION = {"kind": "square_subdivision", "targets": [[1.0, -0.5, 0.25], [0.0, 2.0, -1.0], [0.5, -1.5, 1.0]],
                       "box": [0.0, 3.0, 0.0, 3.0], "nodes_per_cell": 128}


@dataclass
class RunConfig:
    """Everything a run depends on.  ``options`` holds experiment-specific knobs."""

    experiment: str = "anomaly"
    field: dict = dc_field(default_factory=lambda: dict(DEFAULT_FIELD))
    measure: dict = dc_field(default_factory=lambda: {"sampler_kind": "brownian_bridge"})
    deltas: list = dc_field(default_factory=lambda: [0.04, 0.02, 0.01])
    N: int = 100_000
    n: int = DEFAULT_N_LOOP
    seed: int = 0
    out: str = "runs/out"
    workers: int = 1
    options: dict = dc_field(default_factory=dict)

    def validate(self):
        if self.experiment not in EXPERIMENTS:
            raise ConfigurationError(f"experiment: must be one of {EXPERIMENTS}, got {self.experiment!r}")
        if not isinstance(self.field, dict) or "kind" not in self.field:
            raise ConfigurationError("field: must be a mapping with a 'kind' key")
        if self.field.get("kind") == "grid":
            path = self.field.get("path")
            if not path or not Path(path).is_file():
                raise ConfigurationError(f"field.path: grid file {path!r} does not exist")
        if not isinstance(self.measure, dict):
            raise ConfigurationError("measure: must be a mapping")
        try:
            deltas = [float(d) for d in self.deltas]
        except (TypeError, ValueError):
            raise ConfigurationError(f"deltas: not a list of numbers: {self.deltas!r}") from None
        if not deltas or any(not d > 0 for d in deltas):
            raise ConfigurationError("deltas: every delta must be positive")
        for name in ("N", "n", "workers"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v < 1:
                raise ConfigurationError(f"{name}: must be a positive integer, got {v!r}")
        if isinstance(self.seed, bool) or not isinstance(self.seed, (int, np.integer)) or not 0 <= self.seed < 2**64:
            raise ConfigurationError(f"seed: must be an unsigned 64-bit integer, got {self.seed!r}")
        if not isinstance(self.options, dict):
            raise ConfigurationError("options: must be a mapping")
        return self

    def to_dict(self):
        return _plain(dataclasses.asdict(self))

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    def to_yaml(self):
        return yaml.safe_dump(self.to_dict(), sort_keys=True)

    @classmethod
    def from_yaml(cls, text):
        try:
            data = yaml.safe_load(text)
        except yaml.YAMLError as exc:
            raise ConfigurationError(f"config is not valid YAML: {exc}") from None
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigurationError("config must be a mapping at top level")
        return cls.from_dict(data)

    def save(self, path):
        Path(path).write_text(self.to_yaml())

    @classmethod
    def load(cls, path):
        p = Path(path)
        if not p.is_file():
            raise ConfigurationError(f"config file {str(path)!r} does not exist")
        return cls.from_yaml(p.read_text())


def _plain(obj):
    """Convert numpy scalars and arrays, tuples and nested containers to JSON/YAML-safe values."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        return float(obj)
    return obj


def field_id(field_dict):
    """``kind-<8 hex>`` from the canonical JSON of the field mapping."""
    canon = json.dumps(_plain(field_dict), sort_keys=True, separators=(",", ":"))
    return f"{field_dict.get('kind', 'field')}-{hashlib.sha256(canon.encode()).hexdigest()[:8]}"


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


class Report:
    """Rows in the shared CSV/JSON schema plus free-form extras and summary lines."""

    def __init__(self, config: RunConfig):
        self.config = config
        self.fid = field_id(config.field)
        self.rows = []
        self.extra = {}
        self.lines = []
        self.plots = []

    def add(self, estimator, value, std_error=0.0, delta=None, n=None, fallback_rate=0.0, measure="-"):
        self.rows.append({
            "field_id": self.fid, "measure": measure, "estimator": estimator,
            "delta": None if delta is None else float(delta), "n": None if n is None else int(n),
            "value": float(value), "std_error": float(std_error), "fallback_rate": float(fallback_rate),
            "seed": int(self.config.seed),
        })

    def csv_text(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow([_fmt(r[c]) for c in CSV_COLUMNS])
        return buf.getvalue()

    def json_text(self):
        # workers and out do not affect results and are left out so reports compare byte for byte
        cfg = {k: v for k, v in self.config.to_dict().items() if k not in ("workers", "out")}
        doc = {"config": cfg, "rows": self.rows, "extra": _plain(self.extra)}
        return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def _measure(cfg):
    try:
        return MeasureSpec.from_dict(cfg.measure)
    except TypeError as exc:
        raise ConfigurationError(f"measure: {exc}") from None


def _field(fd):
    try:
        return field_from_dict(fd)
    except (TypeError, KeyError) as exc:
        raise ConfigurationError(f"field: bad parameters for kind {fd.get('kind')!r}: {exc}") from None


def _region(cfg):
    r = cfg.options.get("region")
    return None if r is None else Box.coerce(r)


def _descending(deltas):
    return sorted({float(d) for d in deltas}, reverse=True)


def _exp_estimate_b(cfg, rep):
    m = _measure(cfg)
    est = occupation_moment_b(m, cfg.n, cfg.N, cfg.seed, cfg.workers, cfg.options.get("method", "auto"))
    rep.add(f"occupation_moment_{est.method}", est.value, est.std_error, n=cfg.n, measure=m.sampler_kind)
    if est.plain_value is not None:
        rep.add("occupation_moment_plain", est.plain_value, est.plain_std_error, n=cfg.n, measure=m.sampler_kind)
    rep.extra.update({"exact_b": m.exact_b, "discrete_b": m.discrete_b(cfg.n)})
    rep.lines.append(f"b = {est.value:.6f} +/- {est.std_error:.2e} ({est.method}; N={cfg.N}, n={cfg.n})")
    rep.lines.append(f"closed form b = {m.exact_b:.6f}; n-point discretization {m.discrete_b(cfg.n):.6f}")


def _anomaly_rows(cfg, rep, estimates, field, m, label):
    pred = predicted_anomaly(field, m)
    for e in estimates:
        rep.add(label, e.value, e.std_error, e.delta, cfg.n, e.fallback_rate, m.sampler_kind)
    return pred


def _exp_anomaly(cfg, rep):
    field = _field(cfg.field)
    m = _measure(cfg)
    D = _region(cfg)
    estimators = cfg.options.get("estimators", ["direct", "discrepancy"])
    pred = predicted_anomaly(field, m)
    rep.extra["prediction"] = pred
    rep.extra["dirichlet_energy"] = field.dirichlet_energy()
    rep.lines.append(f"predicted anomaly c (b/2) (rho,rho) = {pred:.6g}  (b={m.exact_b:.6g}, c={m.normalization:.6g})")
    series = {}
    for j, d in enumerate(_descending(cfg.deltas)):
        for k, name in enumerate(estimators):
            rng = [cfg.seed, j, k]
            if name == "direct":
                e = estimate_anomaly_direct(field, D, d, m, cfg.N, rng, cfg.n, cfg.workers)
            elif name == "discrepancy":
                e = estimate_discrepancy(field, D, d, m, cfg.N, rng, cfg.n, cfg.workers,
                                         weighting=cfg.options.get("weighting", "lebesgue"),
                                         z_time=cfg.options.get("z_time", "grid"))
            else:
                raise ConfigurationError(f"options.estimators: unknown estimator {name!r}")
            rep.add(name, e.value, e.std_error, d, cfg.n, e.fallback_rate, m.sampler_kind)
            series.setdefault(name, []).append((d, e.value, e.std_error))
            zero = " (every sample zero)" if e.details.get("per_sample_zero") else ""
            rep.lines.append(f"delta={d:<8g} {name:<12s} {e.value:+.6f} +/- {e.std_error:.2e}   "
                             f"prediction {pred:+.6f}{zero}")
    rep.plots.append(("anomaly", series, pred))


def _exp_sweep(cfg, rep):
    field = _field(cfg.field)
    m = _measure(cfg)
    deltas = _descending(cfg.deltas)
    est = cfg.options.get("estimator", "direct")
    out = delta_sweep(field, _region(cfg), deltas, m, cfg.N, cfg.seed, cfg.n, cfg.workers, est)
    pred = predicted_anomaly(field, m)
    rep.extra["prediction"] = pred
    rep.lines.append(f"prediction c (b/2) (rho,rho) = {pred:.6f}")
    rep.lines.append(f"{'delta':>10s} {'value':>12s} {'std_error':>10s} {'minus pred':>12s} {'z':>7s}")
    for e in out:
        rep.add(f"sweep_{est}", e.value, e.std_error, e.delta, cfg.n, e.fallback_rate, m.sampler_kind)
        z = (e.value - pred) / e.std_error if e.std_error > 0 else 0.0
        rep.lines.append(f"{e.delta:10.4g} {e.value:12.6f} {e.std_error:10.2e} {e.value - pred:+12.6f} {z:+7.2f}")
    rep.plots.append(("sweep", {est: [(e.delta, e.value, e.std_error) for e in out]}, pred))


def _exp_bruteforce(cfg, rep):
    field = _field(cfg.field)
    m = _measure(cfg)
    D = _region(cfg)
    pred = predicted_anomaly(field, m)
    rep.extra["prediction"] = pred
    series = []
    for j, d in enumerate(_descending(cfg.deltas)):
        mass = mass_direct_bruteforce(field, D, d, m, cfg.N, rng=[cfg.seed, j], n=cfg.n, workers=cfg.workers,
                                      control_variate=bool(cfg.options.get("control_variate", True)))
        clen = clen_mass_exact(field, D, d, m)
        area = (D or field.box).area
        rep.add("bruteforce_mass", mass.value, mass.std_error, d, cfg.n, measure=m.sampler_kind)
        rep.add("clen_mass_exact", clen, 0.0, d, cfg.n, measure=m.sampler_kind)
        rep.add("bruteforce_minus_clen", mass.value - clen, mass.std_error, d, cfg.n, measure=m.sampler_kind)
        rep.add("bruteforce_minus_flat", mass.value - m.normalization * area / d, mass.std_error, d, cfg.n,
                measure=m.sampler_kind)
        series.append((d, mass.value - clen, mass.std_error))
        rep.lines.append(f"delta={d:<8g} mass={mass.value:.6f} +/- {mass.std_error:.2e}  clen={clen:.6f}  "
                         f"mass-clen={mass.value - clen:+.6f}  prediction {pred:+.6f}")
    rep.plots.append(("bruteforce", {"bruteforce - clen": series}, pred))


def _exp_spectral(cfg, rep):
    o = cfg.options
    spec = TorusSpec(float(o.get("L1", 1.0)), float(o.get("L2", 1.0)))
    fd = cfg.field if cfg.field.get("kind") != "analytic_bump" else dict(DEFAULT_TORUS_FIELD)
    field = _field(fd)
    C = float(o.get("C", 50.0 * spec.area))
    delta = float(cfg.deltas[0] if "delta" not in o else o["delta"])
    lap = o.get("laplacian", "generator")
    report = spectral_report(spec, int(o.get("m_max", 4)), tuple(o.get("t_grid", (1e-3, 1e-2, 1e-1, 0.5, 1.0, 2.0))),
                             field if field.periodic else None, delta, C, lap)
    rep.extra["spectral"] = report
    for t, z, w in zip(report["t_grid"], report["Z"], report["weyl_ratio"]):
        rep.add(f"heat_trace_t={t:g}", z, measure="torus")
        rep.add(f"weyl_ratio_t={t:g}", w, measure="torus")
    rep.add("det_zeta", report["det_zeta"], measure="torus")
    rep.lines.append(f"torus periods ({spec.L1:g}, {spec.L2:g}); det'_zeta Laplacian = {report['det_zeta']:.12g}")
    for t, w in zip(report["t_grid"], report["weyl_ratio"]):
        rep.lines.append(f"  Weyl ratio Z(t) 4 pi t / area at t={t:g}: {w:.10f}")
    if "pa_rhs_terms" in report:
        rhs = report["pa_rhs_terms"]["total"]
        rep.add("pa_rhs", rhs, delta=delta, measure="torus")
        rep.lines.append(f"pa_rhs(delta={delta:g}, C={C:g}, {lap}) = {rhs:.6f}")
        if o.get("loop_mass", False):
            est = torus_loop_mass(spec, field, delta, C, cfg.N, cfg.seed, n_small=cfg.n, workers=cfg.workers)
            rep.add("torus_loop_mass", est.value, est.std_error, delta, cfg.n, measure="brownian")
            rep.add("torus_minus_pa_rhs", est.value - rhs, est.std_error, delta, cfg.n, measure="brownian")
            rep.extra["torus_loop_mass"] = dataclasses.asdict(est)
            rep.lines.append(f"torus loop mass = {est.value:.6f} +/- {est.std_error:.2e}; "
                             f"minus pa_rhs = {est.value - rhs:+.6f} ({(est.value - rhs) / est.std_error:+.2f} s.e.)")
    rep.plots.append(("weyl", report["t_grid"], report["weyl_ratio"]))


def _exp_subdivision(cfg, rep):
    fd = cfg.field if cfg.field.get("kind") == "square_subdivision" else dict(DEFAULT_SUBDIVISION)
    field = _field(fd)
    spec = field.subdivision
    stride = int(cfg.options.get("stride", 8))
    gen = np.random.default_rng(cfg.seed)
    z = gen.uniform(-1, 1, 1000) + 1j * gen.uniform(-1, 1, 1000)
    sym = float(np.max(np.abs(corner_f(1j * z) + corner_f(z))))
    chk = subdivision_laplacian_check(field, spec, stride)
    mis = edge_gradient_mismatch(field, spec)
    rep.add("corner_symmetry_max_error", sym, measure="-")
    rep.add("laplacian_max_error", chk["max_error"], measure="-")
    rep.add("laplacian_tolerance_scale", chk["tolerance_scale"], measure="-")
    rep.add("edge_gradient_mismatch", mis, measure="-")
    rep.extra.update({"stencil_spacing": chk["spacing"], "points": chk["points"], "grid_spacing": field.h})
    rep.lines.append(f"max |f(iz) + f(z)| over 1000 points = {sym:.3e}")
    rep.lines.append(f"stencil Laplacian max error {chk['max_error']:.4e} at spacing {chk['spacing']:.4g} "
                     f"(h log(1/h) = {chk['tolerance_scale']:.4g}, {chk['points']} points)")
    rep.lines.append(f"one-sided normal gradient mismatch across edges = {mis:.4e}")


def _exp_occupation(cfg, rep):
    m = _measure(cfg)
    ts = cfg.options.get("t", [0.25, 4.0])
    for j, t in enumerate(ts):
        chk = occupation_scaling_check(m, float(t), n=cfg.n, N=cfg.N, rng=[cfg.seed, j], workers=cfg.workers,
                                       bins=int(cfg.options.get("bins", 24)))
        rep.add(f"occupation_scaling_max_deviation_t={float(t):g}", chk.max_deviation, measure=m.sampler_kind, n=cfg.n)
        rep.add(f"occupation_scaling_max_zscore_t={float(t):g}", chk.max_zscore, measure=m.sampler_kind, n=cfg.n)
        rep.lines.append(f"t={float(t):g}: histogram scaling check max deviation {chk.max_deviation:.3e}, "
                         f"max z-score {chk.max_zscore:.2f} over {chk.n_bins} bins")


RUNNERS = {
    "estimate-b": _exp_estimate_b,
    "anomaly": _exp_anomaly,
    "sweep": _exp_sweep,
    "bruteforce": _exp_bruteforce,
    "spectral": _exp_spectral,
    "subdivision": _exp_subdivision,
    "occupation": _exp_occupation,
}


def _plot(rep, out):
    if not rep.plots:
        return
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    pdir = out / "plots"
    pdir.mkdir(parents=True, exist_ok=True)
    for item in rep.plots:
        fig, ax = plt.subplots(figsize=(5.5, 4))
        if item[0] == "weyl":
            _, t, w = item
            ax.semilogx(t, np.asarray(w) - 1.0, "o-")
            ax.set_xlabel("t")
            ax.set_ylabel("Z(t) 4 pi t / area - 1")
        else:
            name, series, pred = item
            for label, pts in series.items():
                d, v, s = (np.array(c) for c in zip(*pts))
                ax.errorbar(d, v, yerr=3 * s, fmt="o-", capsize=3, label=f"{label} (3 s.e.)")
            ax.axhline(pred, color="k", ls="--", lw=1, label="c (b/2)(rho,rho)")
            ax.set_xscale("log")
            ax.set_xlabel("delta")
            ax.set_ylabel("loop-mass difference")
            ax.legend(fontsize=8)
        ax.set_title(item[0])
        fig.tight_layout()
        fig.savefig(pdir / f"{item[0]}.png", dpi=110, metadata={"Software": None})
        plt.close(fig)


def run(config: RunConfig) -> int:
    """Execute one experiment and write its report files.  Returns the exit status."""
    config.validate()
    out = Path(config.out)
    out.mkdir(parents=True, exist_ok=True)
    start = time.perf_counter()
    rep = Report(config)
    RUNNERS[config.experiment](config, rep)
    (out / "report.csv").write_text(rep.csv_text())
    (out / "report.json").write_text(rep.json_text())
    (out / "summary.txt").write_text(f"loopanomaly {config.experiment}  seed={config.seed}\n"
                                     + "\n".join(rep.lines) + "\n")
    _plot(rep, out)
    meta = {
        "wall_time_s": time.perf_counter() - start,
        "timestamp": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
        "host": platform.node(),
        "platform": platform.platform(),
        "python": platform.python_version(),
        "versions": _versions(),
        "workers": config.workers,
    }
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return EXIT_OK


def _versions():
    import matplotlib
    import scipy

    return {"loopanomaly": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "matplotlib": matplotlib.__version__, "pyyaml": yaml.__version__}


def build_parser():
    p = argparse.ArgumentParser(prog="loopanomaly", description="Loop-measure conformal anomaly experiments.")
    p.add_argument("experiment", choices=EXPERIMENTS)
    p.add_argument("--config", help="YAML run configuration; flags override its values")
    p.add_argument("--seed", type=int)
    p.add_argument("--delta", type=float, nargs="+", dest="deltas")
    p.add_argument("--n", type=int, help="points per unit loop")
    p.add_argument("--N", type=int, help="Monte Carlo samples")
    p.add_argument("--workers", type=int)
    p.add_argument("--out", help="output directory")
    return p


def config_from_args(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    cfg.experiment = args.experiment
    for name in ("seed", "deltas", "n", "N", "workers", "out"):
        v = getattr(args, name)
        if v is not None:
            setattr(cfg, name, v)
    return cfg.validate()


def main(argv: Optional[list] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        return run(cfg)
    except (ConfigurationError, DomainError) as exc:
        print(f"loopanomaly: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, RefusalError, ArithmeticError) as exc:
        print(f"loopanomaly: numerical error in {args.experiment}: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
