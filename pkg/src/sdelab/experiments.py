"""Reproducible experiment driver: config parsing, dispatch, artifact emission.

Configs are flat INI documents with sections [experiment], [model],
[simulation], [output].  Every run is a pure function of the config: horizon
sub-seeds derive from the experiment seed, estimator bootstraps are tagged
streams, and CSV/manifest emission uses fixed column order and %.10g
formatting, so reruns (at any worker count) are byte-identical.
"""

from __future__ import annotations

import configparser
import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import bounds as _bounds
from . import rng as _rng
from .certify import certify_assumptions
from .coefficients import ModelError, ModelSpec
from .distances import DistanceEstimate, RateFit, kolmogorov_distance, rate_fit, tv_scheffe
from .malliavin import horizon_malliavin
from .models import build_model
from .simulate import SimConfig, clt_residual_moment, lln_residual, simulate_scaled_sample

EXPERIMENTS = ("berry_esseen", "clt_rate", "lln", "malliavin_regimes",
               "bounds_suite", "log_rate")
ESTIMATORS = ("kolmogorov", "tv_scheffe")


class ConfigError(ValueError):
    """Malformed experiment config; the message names the offending key."""


@dataclass
class ExperimentConfig:
    experiment: str
    model_name: str
    model_params: dict
    horizons: tuple
    n_paths: int = 100_000
    n_steps_per_unit_time: int = 64
    seed: int = 42
    x0: float = 1.0
    estimators: tuple = ("kolmogorov",)
    moment_order: float = 2.0
    output_dir: Path = Path("out")

    def build_model(self) -> ModelSpec:
        return build_model(self.model_name, **self.model_params)

    def sim_config(self, horizon: float, horizon_index: int) -> SimConfig:
        n_steps = max(1, int(round(horizon * self.n_steps_per_unit_time)))
        return SimConfig(horizon=horizon, n_steps=n_steps, n_paths=self.n_paths,
                         seed=_rng.derive_seed(self.seed, horizon_index),
                         x0=self.x0)


def _typed(value: str):
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            continue
    return value


def parse_config(text: str) -> ExperimentConfig:
    """Parse and validate an INI experiment document; builds the model once."""
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from exc

    if not parser.has_section("experiment"):
        raise ConfigError("missing [experiment] section")
    exp = parser["experiment"]
    name = exp.get("name")
    if name not in EXPERIMENTS:
        raise ConfigError(f"experiment.name: {name!r} not one of {EXPERIMENTS}")

    raw_h = exp.get("horizons", "")
    try:
        horizons = tuple(float(h) for h in raw_h.replace(",", " ").split())
    except ValueError as exc:
        raise ConfigError(f"experiment.horizons: cannot parse {raw_h!r}") from exc
    if not horizons:
        raise ConfigError("experiment.horizons: at least one horizon required")
    if list(horizons) != sorted(horizons):
        raise ConfigError(f"experiment.horizons: must be ascending, got {horizons}")
    if name in ("berry_esseen", "log_rate") and len(horizons) < 2:
        # A rate fit needs >= 3 horizons; with exactly 2 the distances are
        # still estimated and the fit is skipped.
        raise ConfigError(f"experiment.horizons: {name} needs >= 2 horizons")

    estimators = tuple(exp.get("estimators", "kolmogorov").replace(",", " ").split())
    for e in estimators:
        if e not in ESTIMATORS:
            raise ConfigError(f"experiment.estimators: unknown estimator {e!r}")

    if not parser.has_section("model"):
        raise ConfigError("missing [model] section")
    model_sec = dict(parser["model"])
    model_name = model_sec.pop("name", None)
    if model_name is None:
        raise ConfigError("model.name: required")
    model_params = {k: _typed(v) for k, v in model_sec.items()}
    try:
        build_model(model_name, **model_params)
    except (ModelError, TypeError) as exc:
        raise ConfigError(f"model: {exc}") from exc

    sim = parser["simulation"] if parser.has_section("simulation") else {}
    out = parser["output"] if parser.has_section("output") else {}
    return ExperimentConfig(
        experiment=name, model_name=model_name, model_params=model_params,
        horizons=horizons,
        n_paths=int(sim.get("n_paths", 100_000)),
        n_steps_per_unit_time=int(sim.get("n_steps_per_unit_time", 64)),
        seed=int(sim.get("seed", 42)),
        x0=float(sim.get("x0", 1.0)),
        estimators=estimators,
        moment_order=float(exp.get("p", 2.0)),
        output_dir=Path(out.get("dir", "out")),
    )


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    rows: list = field(default_factory=list)
    fits: dict = field(default_factory=dict)
    verdicts: dict = field(default_factory=dict)
    csv_paths: list = field(default_factory=list)
    svg_path: Optional[str] = None
    manifest_path: Optional[str] = None
    wall_clock: float = 0.0


_COLUMNS = ["kind", "t", "n", "value", "ci_low", "ci_high", "bandwidth",
            "slope", "slope_lo", "slope_hi", "r2"]


def _fmt(x) -> str:
    if x is None or x == "":
        return ""
    if isinstance(x, str):
        return x
    return f"{x:.10g}"


def emit_csv(report: ExperimentReport, path) -> None:
    """Write the report's primary table; identical reports give identical bytes."""
    lines = [",".join(_COLUMNS)]
    for row in report.rows:
        lines.append(",".join(_fmt(row.get(c)) for c in _COLUMNS))
    for name, fit in sorted(report.fits.items()):
        lines.append(",".join(_fmt(v) for v in [
            f"rate_fit:{name}", "", len(fit.horizons), "", "", "", "",
            fit.slope, fit.slope_ci[0], fit.slope_ci[1], fit.r2]))
    Path(path).write_text("\n".join(lines) + "\n")


def _distance_row(est: DistanceEstimate, t: float) -> dict:
    return {"kind": est.kind, "t": t, "n": est.n, "value": est.value,
            "ci_low": est.ci_low, "ci_high": est.ci_high,
            "bandwidth": est.bandwidth}


def _estimate(kind: str, sample: np.ndarray, seed: int) -> DistanceEstimate:
    if kind == "kolmogorov":
        return kolmogorov_distance(sample, seed=seed)
    return tv_scheffe(sample, seed=seed)


def _run_distance_experiment(cfg: ExperimentConfig, model: ModelSpec,
                             threads: int, report: ExperimentReport) -> None:
    def one_horizon(idx_t):
        idx, t = idx_t
        sim = cfg.sim_config(t, idx)
        sample = simulate_scaled_sample(model, sim)
        return [(kind, t, _estimate(kind, sample.f_values, sim.seed))
                for kind in cfg.estimators]

    tasks = list(enumerate(cfg.horizons))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(one_horizon, tasks))
    else:
        results = [one_horizon(task) for task in tasks]

    per_kind: dict[str, list] = {k: [] for k in cfg.estimators}
    for horizon_result in results:
        for kind, t, est in horizon_result:
            report.rows.append(_distance_row(est, t))
            per_kind[kind].append((t, est))
    report.rows.sort(key=lambda r: (r["kind"], r["t"]))

    for kind, pts in per_kind.items():
        if len(pts) >= 3 and all(e.value > 0 for _, e in pts):
            report.fits[kind] = rate_fit(
                [t for t, _ in pts], [e.value for _, e in pts],
                [e.ci_high - e.ci_low for _, e in pts])

    primary = report.fits.get("kolmogorov")
    band = (-0.65, -0.35) if cfg.experiment == "berry_esseen" else (-0.7, -0.2)
    if primary is not None:
        report.verdicts["slope"] = primary.slope
        report.verdicts["r2"] = primary.r2
        report.verdicts["slope_in_band"] = band[0] <= primary.slope <= band[1]
        report.verdicts["r2_ok"] = primary.r2 >= 0.9
    report.verdicts["max_distance"] = max(r["value"] for r in report.rows)


def _run_clt_rate(cfg: ExperimentConfig, model: ModelSpec, threads: int,
                  report: ExperimentReport) -> None:
    p = cfg.moment_order

    def one_horizon(idx_t):
        idx, t = idx_t
        sample = simulate_scaled_sample(model, cfg.sim_config(t, idx))
        moment = clt_residual_moment(sample, model, p)
        powered = np.abs(sample.f_values - sample.g_values) ** p
        se_mean = powered.std(ddof=1) / np.sqrt(powered.size)
        mean = powered.mean()
        # Delta-method interval for mean^(1/p).
        half = 1.96 * se_mean * mean ** (1.0 / p - 1.0) / p if mean > 0 else 0.0
        return {"kind": f"clt_moment_p{p:g}", "t": t, "n": sample.n,
                "value": moment, "ci_low": moment - half, "ci_high": moment + half}

    tasks = list(enumerate(cfg.horizons))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(one_horizon, tasks))
    else:
        rows = [one_horizon(task) for task in tasks]
    report.rows.extend(sorted(rows, key=lambda r: r["t"]))
    if len(rows) >= 3 and all(r["value"] > 0 for r in rows):
        fit = rate_fit([r["t"] for r in report.rows],
                       [r["value"] for r in report.rows],
                       [r["ci_high"] - r["ci_low"] for r in report.rows])
        report.fits["clt_moment"] = fit
        report.verdicts["slope"] = fit.slope
        report.verdicts["slope_leq_-0.4"] = fit.slope <= -0.4


def _run_lln(cfg: ExperimentConfig, model: ModelSpec, threads: int,
             report: ExperimentReport) -> None:
    for idx, t in enumerate(cfg.horizons):
        sample = simulate_scaled_sample(model, cfg.sim_config(t, idx))
        res = lln_residual(sample, model)
        half = 1.96 * res.sd / np.sqrt(sample.n)
        report.rows.append({"kind": "lln_residual", "t": t, "n": sample.n,
                            "value": res.mean, "ci_low": res.mean - half,
                            "ci_high": res.mean + half})
    worst = max(abs(r["value"]) for r in report.rows)
    report.verdicts["max_abs_residual"] = worst
    report.verdicts["residual_small"] = worst <= 0.05


def _run_malliavin(cfg: ExperimentConfig, model: ModelSpec, threads: int,
                   report: ExperimentReport) -> None:
    def one_horizon(idx_t):
        idx, t = idx_t
        return horizon_malliavin(model, cfg.sim_config(t, idx))

    tasks = list(enumerate(cfg.horizons))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            stats = list(pool.map(one_horizon, tasks))
    else:
        stats = [one_horizon(task) for task in tasks]

    for st in sorted(stats, key=lambda s: s.horizon):
        report.rows.append({"kind": "mean_ds_norm_sq", "t": st.horizon, "n": st.n,
                            "value": st.mean_ds_norm_sq[0],
                            "ci_low": st.mean_ds_norm_sq[1],
                            "ci_high": st.mean_ds_norm_sq[2]})
        report.rows.append({"kind": "mean_abs_pairing", "t": st.horizon, "n": st.n,
                            "value": st.mean_abs_pairing[0],
                            "ci_low": st.mean_abs_pairing[1],
                            "ci_high": st.mean_abs_pairing[2]})
        b = st.budget
        for label, term in (("budget_pairing", b.pairing_term),
                            ("budget_df_norm", b.df_norm_term),
                            ("budget_mean_stat", b.mean_stat_term),
                            ("budget_residual_mean", b.residual_mean),
                            ("budget_residual_var", b.residual_var)):
            report.rows.append({"kind": label, "t": st.horizon, "n": st.n,
                                "value": term[0], "ci_low": term[1],
                                "ci_high": term[2]})
    dsq = [(st.horizon, st.mean_ds_norm_sq) for st in stats]
    values = [v[0] for _, v in dsq]
    report.verdicts["dsq_max_over_min"] = max(values) / min(values)
    report.verdicts["bounded_regime"] = report.verdicts["dsq_max_over_min"] <= 2.0
    if len(dsq) >= 3 and all(v > 0 for v in values):
        fit = rate_fit([t for t, _ in dsq], values,
                       [v[2] - v[1] for _, v in dsq])
        report.fits["mean_ds_norm_sq"] = fit
        report.verdicts["dsq_growth_exponent"] = fit.slope


def _run_bounds_suite(cfg: ExperimentConfig, model: ModelSpec, threads: int,
                      report: ExperimentReport) -> None:
    seed = cfg.seed
    # Gaussian TV lemma on the standard grid.
    worst_gap = -np.inf
    for a in (0.8, 1.0, 1.25):
        for v in (0.0, 0.1, -0.1, 1.0, -1.0):
            exact = _bounds.gaussian_tv_exact_1d(a, v)
            bound = _bounds.gaussian_tv_bound(_bounds.GaussianTvQuery(
                d=1, a=a, v=np.array([v]), V=np.eye(1)))
            worst_gap = max(worst_gap, exact - min(1.0, bound))
    report.rows.append({"kind": "gaussian_tv_worst_gap", "t": 0.0, "n": 15,
                        "value": worst_gap, "ci_low": worst_gap,
                        "ci_high": worst_gap})
    report.verdicts["gaussian_tv_dominates"] = worst_gap <= 0.0

    hit = _bounds.hitting_tail_mc(model, level=0.0, x0=cfg.x0,
                                  t_marks=cfg.horizons, n_paths=cfg.n_paths,
                                  seed=_rng.derive_seed(seed, 101))
    for t, p, ci in zip(hit.t_marks, hit.probabilities, hit.ci):
        report.rows.append({"kind": "hitting_tail_prob", "t": t, "n": hit.n,
                            "value": p, "ci_low": ci[0], "ci_high": ci[1]})
    report.verdicts["hitting_tail_slope_ok"] = bool(hit.passes)

    for gamma in (1.0, 2.0):
        inv = _bounds.inverse_moment_y_mc(
            sigma=model.constants.sigma2, b1=model.constants.b1, gamma=gamma,
            x0=cfg.x0, t_grid=cfg.horizons if len(cfg.horizons) >= 3 else (4, 16, 64),
            n_paths=cfg.n_paths, seed=_rng.derive_seed(seed, 102 + int(gamma)))
        for t, est, ci in zip(inv.t_grid, inv.estimates, inv.ci):
            report.rows.append({"kind": f"inverse_moment_g{gamma:g}", "t": t,
                                "n": cfg.n_paths, "value": est,
                                "ci_low": ci[0], "ci_high": ci[1]})
        report.verdicts[f"inverse_moment_g{gamma:g}_slope_ok"] = \
            inv.slope <= -gamma + 0.1

    for c, want in ((0.25, True), (0.75, False)):
        res = _bounds.exp_functional_mc(
            "indicator_neg", a=1.0, c=c, x0=0.0, horizons=(16, 32, 64, 128),
            n_paths=cfg.n_paths, seed=_rng.derive_seed(seed, 200 + int(100 * c)))
        for t, mval, ci in zip(res.horizons, res.means, res.ci):
            report.rows.append({"kind": f"exp_functional_c{c:g}", "t": t,
                                "n": cfg.n_paths, "value": mval,
                                "ci_low": ci[0], "ci_high": ci[1]})
        report.verdicts[f"exp_functional_c{c:g}_stabilized"] = res.stabilized
        report.verdicts[f"exp_functional_c{c:g}_ok"] = res.stabilized == want

    if model.left_boundary is not None:
        inv = _bounds.inverse_moment_proxy(model, gamma=1.0, horizons=(8, 16, 32),
                                           n_paths=min(cfg.n_paths, 20_000),
                                           seed=_rng.derive_seed(seed, 300),
                                           x0=cfg.x0)
        for t, est, ci in zip(inv.horizons, inv.estimates, inv.ci):
            report.rows.append({"kind": "inverse_moment_proxy", "t": t,
                                "n": min(cfg.n_paths, 20_000), "value": est,
                                "ci_low": ci[0], "ci_high": ci[1]})
        report.verdicts["inverse_moment_proxy_stabilized"] = inv.stabilized


def _plot_rate(report: ExperimentReport, path: Path) -> None:
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4.5))
    for kind, fit in sorted(report.fits.items()):
        ts = np.array(fit.horizons)
        ds = np.array(fit.distances)
        ax.loglog(ts, ds, "o", label=f"{kind}")
        tt = np.geomspace(ts.min(), ts.max(), 64)
        ax.loglog(tt, np.exp(fit.intercept) * tt ** fit.slope, "-",
                  label=f"{kind} fit: slope {fit.slope:.3f}")
    ax.set_xlabel("horizon t")
    ax.set_ylabel("distance")
    ax.legend()
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


def run_experiment(cfg: ExperimentConfig, threads: int = 1) -> ExperimentReport:
    """Run the configured experiment, write artifacts, return the report."""
    t0 = time.perf_counter()
    model = cfg.build_model()
    report = ExperimentReport(config=cfg)
    runner = {
        "berry_esseen": _run_distance_experiment,
        "log_rate": _run_distance_experiment,
        "clt_rate": _run_clt_rate,
        "lln": _run_lln,
        "malliavin_regimes": _run_malliavin,
        "bounds_suite": _run_bounds_suite,
    }[cfg.experiment]
    runner(cfg, model, threads, report)

    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / f"{cfg.experiment}.csv"
    emit_csv(report, csv_path)
    report.csv_paths.append(str(csv_path))

    cert_path = out / "assumptions.csv"
    certify_assumptions(model).to_csv(cert_path)
    report.csv_paths.append(str(cert_path))

    if report.fits and cfg.experiment in ("berry_esseen", "log_rate", "clt_rate"):
        svg = out / f"{cfg.experiment}_rate.svg"
        _plot_rate(report, svg)
        report.svg_path = str(svg)

    artifacts = report.csv_paths + ([report.svg_path] if report.svg_path else [])
    manifest = {
        "experiment": cfg.experiment,
        "model": {"name": cfg.model_name, "params": cfg.model_params},
        "seed": cfg.seed,
        "artifacts": sorted(Path(a).name for a in artifacts),
        "verdicts": {k: (bool(v) if isinstance(v, (bool, np.bool_)) else v)
                     for k, v in sorted(report.verdicts.items())},
    }
    manifest_path = out / "manifest.json"
    manifest_path.write_text(json.dumps(manifest, indent=2, sort_keys=True,
                                        default=float) + "\n")
    report.manifest_path = str(manifest_path)
    report.wall_clock = time.perf_counter() - t0
    return report
