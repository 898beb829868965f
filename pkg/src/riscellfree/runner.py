"""Experiment drivers producing CSV samples and JSON reports."""

from __future__ import annotations

import csv
import io
import json
import math
import os
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import InvalidParameterError
from .montecarlo import concentration_spread, downlink_sinr_monte_carlo, uplink_sinr_monte_carlo
from .phase import equal_phase_design, random_phase_design
from .scenario import VARIANTS, ScenarioConfig, build_scenario, config_to_dict
from .throughput import net_throughput

CSV_COLUMNS = ("variant", "direction", "user", "value_mbps")
CSV_SCHEMA = "samples-v1"
KINDS = ("validate", "sweep_blocking", "cdf", "phase_compare", "element_size", "fixed_area", "asymptotics")
DIRECTIONS = ("uplink", "downlink")


@dataclass
class ExperimentSpec:
    """What to run and where to write it.

    ``params`` holds kind-specific settings: ``p_grid`` (sweep_blocking),
    ``sizes`` as (d_h, d_v) pairs in wavelengths (element_size),
    ``spacings`` in wavelengths and ``area_wavelengths`` (fixed_area),
    ``m_list`` and ``samples`` (asymptotics).
    """

    kind: str
    config: ScenarioConfig
    variants: Sequence[str] = ("ris_cellfree",)
    trials: int = 1000
    realizations: int = 1
    seed: Optional[int] = None
    out: Optional[str] = None
    threads: int = 1
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidParameterError(f"unknown experiment {self.kind!r}; choose from {KINDS}")
        if self.trials < 1 or self.realizations < 1:
            raise InvalidParameterError("trials and realizations must be >= 1")
        if self.threads < 1:
            raise InvalidParameterError("threads must be >= 1")
        bad = [v for v in self.variants if v not in VARIANTS]
        if bad or not self.variants:
            raise InvalidParameterError(f"unknown variants {bad}; choose from {VARIANTS}")
        if self.seed is None:
            self.seed = self.config.seed

    @property
    def master_seed(self) -> int:
        return int(self.seed)


@dataclass
class ExperimentResult:
    """Rows for the samples CSV plus a JSON-serializable report."""

    rows: list
    report: dict

    def csv_text(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in self.rows:
            w.writerow([row[0], row[1], row[2], repr(float(row[3]))])
        return buf.getvalue()

    def json_text(self) -> str:
        return json.dumps(self.report, indent=2, sort_keys=True, default=_jsonable) + "\n"

    def write(self, out_dir: str) -> None:
        try:
            os.makedirs(out_dir, exist_ok=True)
            with open(os.path.join(out_dir, "samples.csv"), "w") as fh:
                fh.write(self.csv_text())
            with open(os.path.join(out_dir, "report.json"), "w") as fh:
                fh.write(self.json_text())
        except OSError as exc:
            raise OSError(f"cannot write results to {out_dir!r}: {exc}") from exc


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not serializable: {type(obj)}")


def _clean(x):
    """Floats as plain lists, with non-finite values mapped to None."""
    arr = np.asarray(x, dtype=float)
    out = arr.tolist()
    if arr.ndim == 0:
        return out if math.isfinite(out) else None
    return json.loads(json.dumps(out).replace("Infinity", "null").replace("NaN", "null"))


def realization_rng(seed: int, index: int, stream: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(stream, index)))


def _mc_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence(int(seed), spawn_key=(7, index)).generate_state(1, np.uint64)[0] >> 1)


def _base_report(spec: ExperimentSpec) -> dict:
    return {
        "kind": spec.kind,
        "csv_schema": CSV_SCHEMA,
        "seed": spec.master_seed,
        "config": config_to_dict(spec.config),
        "config_fingerprint": spec.config.fingerprint(),
        "variants": list(spec.variants),
        "trials": spec.trials,
        "realizations": spec.realizations,
    }


def _drops(spec: ExperimentSpec, config: Optional[ScenarioConfig] = None):
    cfg = config or spec.config
    for r in range(spec.realizations):
        yield r, build_scenario(cfg, realization_rng(spec.master_seed, r))


def _closed_form_rates(scenario, phase, frame):
    up, down = scenario.link_model().closed_form(phase)
    return net_throughput(up, frame, "uplink"), net_throughput(down, frame, "downlink")


def _user_rows(rows, label, rates_up, rates_down):
    for direction, rates in (("uplink", rates_up), ("downlink", rates_down)):
        for k, v in enumerate(rates):
            rows.append((label, direction, k, float(v)))


def _sum_rows(rows, label, up, down):
    rows.append((label, "uplink", "sum", float(np.sum(up))))
    rows.append((label, "downlink", "sum", float(np.sum(down))))


def _mean_ci(values):
    v = np.asarray(values, dtype=float)
    mean = float(np.mean(v))
    half = 1.96 * float(np.std(v, ddof=1)) / math.sqrt(v.size) if v.size > 1 else float("inf")
    return mean, half


# ---------------------------------------------------------------------------


def run_validate(spec: ExperimentSpec) -> ExperimentResult:
    """Closed-form versus Monte Carlo per-user throughput on every drop."""
    frame = spec.config.frame_config()
    rows, per_drop = [], []
    gaps = {d: [] for d in DIRECTIONS}
    cf_all = {d: [] for d in DIRECTIONS}
    mc_all = {d: [] for d in DIRECTIONS}
    for r, base in _drops(spec):
        for variant in spec.variants:
            sc = base.as_variant(variant)
            model = sc.link_model()
            phase = sc.phase(realization_rng(spec.master_seed, r, stream=3))
            cf_u, cf_d = model.closed_form(phase)
            seed = _mc_seed(spec.master_seed, r)
            mc_u = uplink_sinr_monte_carlo(model, phase, spec.trials, seed, spec.threads, min_trials=1)
            mc_d = downlink_sinr_monte_carlo(model, phase, spec.trials, seed, spec.threads, min_trials=1)
            entry = {"realization": r, "variant": variant}
            for direction, cf, mc in (("uplink", cf_u, mc_u), ("downlink", cf_d, mc_d)):
                rate_cf = net_throughput(cf, frame, direction)
                rate_mc = net_throughput(mc.sinr, frame, direction)
                gap = np.where(rate_cf > 0, np.abs(rate_mc - rate_cf) / np.where(rate_cf > 0, rate_cf, 1), 0.0)
                gaps[direction].extend(gap.tolist())
                cf_all[direction].extend(rate_cf.tolist())
                mc_all[direction].extend(rate_mc.tolist())
                for k in range(sc.k):
                    rows.append((f"{variant}/closed_form", direction, k, float(rate_cf[k])))
                    rows.append((f"{variant}/monte_carlo", direction, k, float(rate_mc[k])))
                entry[direction] = {
                    "sinr_closed_form": _clean(cf),
                    "sinr_monte_carlo": _clean(mc.sinr),
                    "sinr_ci_half_width": _clean(mc.ci_half_width),
                    "rate_closed_form_mbps": _clean(rate_cf),
                    "rate_monte_carlo_mbps": _clean(rate_mc),
                    "relative_gap": _clean(gap),
                    "sum_rate_closed_form_mbps": float(np.sum(rate_cf)),
                    "sum_rate_monte_carlo_mbps": float(np.sum(rate_mc)),
                }
            per_drop.append(entry)
    report = _base_report(spec)
    report["drops"] = per_drop
    report["max_relative_gap"] = {d: float(max(gaps[d])) if gaps[d] else 0.0 for d in DIRECTIONS}
    report["max_cdf_gap"] = {d: _cdf_gap(cf_all[d], mc_all[d]) for d in DIRECTIONS}
    ul, dl = np.asarray(cf_all["uplink"]), np.asarray(cf_all["downlink"])
    ratio = np.median(dl) / np.median(ul) if np.median(ul) > 0 else float("inf")
    report["median_downlink_over_uplink"] = _clean(ratio)
    return ExperimentResult(rows, report)


def _cdf_gap(a, b):
    """Largest relative gap between matching quantiles of two samples."""
    a, b = np.sort(np.asarray(a)), np.sort(np.asarray(b))
    if a.size == 0:
        return 0.0
    ok = a > 0
    return float(np.max(np.abs(a[ok] - b[ok]) / a[ok])) if np.any(ok) else 0.0


def run_cdf(spec: ExperimentSpec, config: Optional[ScenarioConfig] = None, label_suffix: str = ""):
    """Closed-form per-user and sum throughput for every drop and variant."""
    cfg = config or spec.config
    frame = cfg.frame_config()
    rows = []
    sums = {v: {d: [] for d in DIRECTIONS} for v in spec.variants}
    for r, base in _drops(spec, cfg):
        for variant in spec.variants:
            sc = base.as_variant(variant)
            phase = sc.phase(realization_rng(spec.master_seed, r, stream=3))
            up, down = _closed_form_rates(sc, phase, frame)
            label = variant + label_suffix
            _user_rows(rows, label, up, down)
            sums[variant]["uplink"].append(float(np.sum(up)))
            sums[variant]["downlink"].append(float(np.sum(down)))
    report = _base_report(spec)
    report["config"] = config_to_dict(cfg)
    report["sum_throughput_mbps"] = sums
    report["mean_sum_throughput_mbps"] = {
        v: {d: float(np.mean(sums[v][d])) for d in DIRECTIONS} for v in spec.variants
    }
    return ExperimentResult(rows, report)


def run_sweep_blocking(spec: ExperimentSpec) -> ExperimentResult:
    """Mean sum throughput against the unblocked probability, on shared drops."""
    grid = [float(p) for p in spec.params.get("p_grid", np.round(np.linspace(0, 1, 11), 10))]
    if any(p < 0 or p > 1 for p in grid):
        raise InvalidParameterError("unblocked probabilities must lie in [0, 1]")
    frame = spec.config.frame_config()
    acc = {v: {d: np.zeros(len(grid)) for d in DIRECTIONS} for v in spec.variants}
    for r, base in _drops(spec):
        phase = base.phase(realization_rng(spec.master_seed, r, stream=3))
        for i, p in enumerate(grid):
            drop = base.with_unblocked_probability(p)
            for variant in spec.variants:
                up, down = _closed_form_rates(drop.as_variant(variant), phase, frame)
                acc[variant]["uplink"][i] += np.sum(up)
                acc[variant]["downlink"][i] += np.sum(down)
    rows, table = [], []
    for variant in spec.variants:
        for d in DIRECTIONS:
            means = acc[variant][d] / spec.realizations
            for p, val in zip(grid, means):
                rows.append((f"{variant}@p={p:g}", d, "sum", float(val)))
                table.append({"variant": variant, "direction": d, "p": p, "mean_sum_mbps": float(val)})
    report = _base_report(spec)
    report["p_grid"] = grid
    report["table"] = table
    return ExperimentResult(rows, report)


def run_phase_compare(spec: ExperimentSpec) -> ExperimentResult:
    """Equal versus random phases under sinc-correlated and uncorrelated surfaces."""
    frame = spec.config.frame_config()
    variant = spec.variants[0]
    combos = [(c, p) for c in ("sinc", "iid") for p in ("equal", "random")]
    sums = {f"{c}/{p}": {d: [] for d in DIRECTIONS} for c, p in combos}
    rows = []
    for r, base in _drops(spec):
        rng = realization_rng(spec.master_seed, r, stream=4)
        random_phase = random_phase_design(base.n, rng)
        equal_phase = equal_phase_design(base.n, spec.config.phase.theta0)
        for corr, policy in combos:
            sc = base.with_correlation(corr).as_variant(variant)
            phase = equal_phase if policy == "equal" else random_phase
            up, down = _closed_form_rates(sc, phase, frame)
            key = f"{corr}/{policy}"
            sums[key]["uplink"].append(float(np.sum(up)))
            sums[key]["downlink"].append(float(np.sum(down)))
            _sum_rows(rows, f"{variant}/{key}", up, down)
    summary = {}
    for key, by_dir in sums.items():
        summary[key] = {}
        for d in DIRECTIONS:
            mean, half = _mean_ci(by_dir[d])
            summary[key][d] = {"mean_sum_mbps": mean, "ci_half_width": _clean(half)}
    report = _base_report(spec)
    report["sum_throughput_mbps"] = sums
    report["summary"] = summary
    return ExperimentResult(rows, report)


def _with_ris(cfg: ScenarioConfig, n_h, n_v, d_h, d_v) -> ScenarioConfig:
    return cfg.replace(**{"ris.n_h": int(n_h), "ris.n_v": int(n_v), "ris.d_h_wavelengths": float(d_h),
                          "ris.d_v_wavelengths": float(d_v)})


def _run_settings(spec, settings):
    rows, summary = [], []
    for label, cfg in settings:
        res = run_cdf(spec, cfg, label_suffix=f"@{label}")
        rows.extend(res.rows)
        for variant in spec.variants:
            summary.append({
                "setting": label,
                "variant": variant,
                "n": cfg.ris.n_h * cfg.ris.n_v,
                "d_h_wavelengths": cfg.ris.d_h_wavelengths,
                "d_v_wavelengths": cfg.ris.d_v_wavelengths,
                "sum_throughput_mbps": res.report["sum_throughput_mbps"][variant],
                "mean_sum_throughput_mbps": res.report["mean_sum_throughput_mbps"][variant],
            })
    report = _base_report(spec)
    report["settings"] = summary
    return ExperimentResult(rows, report)


def run_element_size(spec: ExperimentSpec) -> ExperimentResult:
    """Sum-throughput CDFs for several element sizes at fixed element count."""
    sizes = spec.params.get("sizes", [(0.25, 0.25), (0.5, 0.5), (1.0, 1.0)])
    cfg = spec.config
    settings = [
        (f"{dh:g}x{dv:g}", _with_ris(cfg, cfg.ris.n_h, cfg.ris.n_v, dh, dv)) for dh, dv in sizes
    ]
    return _run_settings(spec, settings)


def fixed_area_layout(area_wavelengths: float, spacing: float):
    """``(n_h, n_v)`` keeping ``N d^2`` close to ``area^2`` (both in wavelengths).

    ``N = round((area / d)^2)``, ``n_h = floor(sqrt(N))``, ``n_v = ceil(N / n_h)``.
    """
    n = max(1, int(round((area_wavelengths / spacing) ** 2)))
    n_h = max(1, int(math.floor(math.sqrt(n))))
    return n_h, int(math.ceil(n / n_h))


def run_fixed_area(spec: ExperimentSpec) -> ExperimentResult:
    """Sum-throughput CDFs when the surface area is held constant."""
    area = float(spec.params.get("area_wavelengths", 10.0))
    spacings = spec.params.get("spacings", [1 / 3, 1 / 2, 1.0])
    settings = []
    for d in spacings:
        n_h, n_v = fixed_area_layout(area, d)
        settings.append((f"d={d:.4g}", _with_ris(spec.config, n_h, n_v, d, d)))
    return _run_settings(spec, settings)


def run_asymptotics(spec: ExperimentSpec) -> ExperimentResult:
    """Spread of the normalized received signal around its large-M limit.

    Each drop is generated once with the largest AP count; smaller networks
    keep its first ``M`` access points, so growing ``M`` only adds APs.
    """
    m_list = [int(m) for m in spec.params.get("m_list", [50, 100, 200, 400])]
    if not m_list or m_list[0] < 1 or any(b <= a for a, b in zip(m_list, m_list[1:])):
        raise InvalidParameterError("m_list must be strictly ascending positive integers")
    samples = int(spec.params.get("samples", spec.trials))
    regime = spec.params.get("regime", "large_M")
    variant = spec.variants[0]
    cfg = spec.config.replace(**{"network.m_aps": m_list[-1]})
    spreads = {m: {d: [] for d in DIRECTIONS} for m in m_list}
    for r, full in _drops(spec, cfg):
        full = full.as_variant(variant)
        phase = full.phase(realization_rng(spec.master_seed, r, stream=3))
        for m in m_list:
            model = full.first_aps(m).link_model()
            seed = _mc_seed(spec.master_seed, 1000 * m + r)
            for d in DIRECTIONS:
                spreads[m][d].append(concentration_spread(model, phase, samples, seed, d, regime))
    rows, table = [], []
    for m in m_list:
        for d in DIRECTIONS:
            val = float(np.sqrt(np.mean(np.square(spreads[m][d]))))
            rows.append((f"{variant}@M={m}", d, "spread", val))
            table.append({"m_aps": m, "direction": d, "spread": val, "per_realization": spreads[m][d]})
    report = _base_report(spec)
    report["regime"] = regime
    report["table"] = table
    return ExperimentResult(rows, report)


RUNNERS = {
    "validate": run_validate,
    "sweep_blocking": run_sweep_blocking,
    "cdf": run_cdf,
    "phase_compare": run_phase_compare,
    "element_size": run_element_size,
    "fixed_area": run_fixed_area,
    "asymptotics": run_asymptotics,
}


def run(spec: ExperimentSpec) -> ExperimentResult:
    result = RUNNERS[spec.kind](spec)
    if spec.out:
        result.write(spec.out)
    return result
