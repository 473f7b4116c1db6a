"""Batch command-line tool: campaigns, analysis and planning runs.

    mechlink <subcommand> --config <path> [--out <dir>] [--seed N] [--trials N]

Exit codes: 0 success, 2 config error, 3 runtime error.  Every run
writes a manifest (config hash, seed, versions) next to its artifacts;
identical (config, seed) runs produce byte-identical outputs regardless
of worker count (cap workers with MECHLINK_THREADS).
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import math
import os
import sys

import numpy as np
import scipy

from . import __version__, noise, planner, protocol, stats
from .campaign import ClickLog, atomic_write, run_campaign
from .config import ConfigError, RunConfig, parse_config

PI = math.pi
US = 1e-6
NS = 1e-9


class RuntimeFailure(RuntimeError):
    pass


def _fmt(x) -> str:
    if isinstance(x, float):
        return f"{x:.10g}"
    return str(x)


def write_json(path, doc) -> None:
    atomic_write(path, json.dumps(doc, indent=2, sort_keys=True,
                                  default=_json_default) + "\n")


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"not JSON-serializable: {type(obj)}")


def write_csv(path, header, rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(_fmt(v) for v in row))
    atomic_write(path, "\n".join(lines) + "\n")


def _manifest(out_dir, subcommand, config_path, cfg: RunConfig,
              seed=None, trials=None) -> None:
    with open(config_path, "rb") as fh:
        digest = hashlib.sha256(fh.read()).hexdigest()
    doc = {
        "subcommand": subcommand,
        "config_sha256": digest,
        "config": cfg.snapshot(),
        "seed": seed,
        "trials": trials,
        "versions": {"mechlink": __version__, "numpy": np.__version__,
                     "scipy": scipy.__version__},
    }
    write_json(os.path.join(out_dir, "manifest.json"), doc)


# ---------------------------------------------------------------------------
# shared analysis helpers


def _analysis_params(cfg: RunConfig) -> dict:
    a = cfg.analysis
    return {
        "grid_step": a.get("g2_grid_step", stats.G2_GRID_STEP),
        "g2_max": a.get("g2_max", stats.G2_MAX),
        "witness_step": a.get("witness_grid_step", stats.WITNESS_GRID_STEP),
        "threshold": a.get("classicality_threshold", 1.0),
        "flux_imbalance": a.get("flux_imbalance", 0.075),
    }


def _witness_report(tally: stats.CoincidenceTally, params: dict,
                    extras: dict | None = None) -> dict:
    dists = {}
    for det in (1, 2):
        dists[det] = stats.witness_distribution(
            tally, det, grid_step=params["grid_step"], g2_max=params["g2_max"],
            witness_step=params["witness_step"])
    sym = stats.symmetrize(dists[1], dists[2])
    threshold = params["threshold"]
    corr = stats.systematic_correction(sym.ml_value, params["flux_imbalance"])
    g2 = {}
    for i in (1, 2):
        for j in (1, 2):
            est = stats.g2_from_counts(tally, i, j)
            g2[f"r{i}p{j}"] = {"value": est.value, "lower": est.lower,
                               "upper": est.upper,
                               "coincidences": est.coincidences}
    doc = {
        "tally": tally.to_json_dict(),
        "g2": g2,
        "witness": {
            str(det): {
                "ml": dists[det].ml_value,
                "lower": dists[det].lower, "upper": dists[det].upper,
                "grid_warning": dists[det].grid_warning,
                "distribution": {"grid": dists[det].grid,
                                 "mass": dists[det].mass},
            } for det in (1, 2)
        },
        "witness_symmetrized": {
            "ml": sym.ml_value, "lower": sym.lower, "upper": sym.upper,
            "confidence_below_threshold": stats.confidence_below(sym, threshold),
            "threshold": threshold,
            "corrected_threshold": corr.corrected_threshold,
            "confidence_below_corrected":
                stats.confidence_below(sym, corr.corrected_threshold),
            "systematic_components": corr.components,
            "distribution": {"grid": sym.grid, "mass": sym.mass},
        },
    }
    if extras:
        doc.update(extras)
    return doc


def _pooled_pairs(tally: stats.CoincidenceTally, pairs) -> stats.G2Estimate:
    """Pooled correlation estimate over detector pairs with one interval."""
    import scipy.stats as sps
    c = sum(tally.coincidence(i, j) for i, j in pairs)
    n = sum(tally.pump_singles[j - 1] for _, j in pairs)
    denom = sum(tally.read_singles[i - 1] * tally.pump_singles[j - 1]
                for i, j in pairs)
    if denom == 0 or n == 0:
        raise stats.StatsError("zero singles in pooled estimate")
    scale = tally.n_trials * n / denom
    post = sps.beta(c + 1, n - c + 1)
    return stats.G2Estimate(value=c / n * scale, lower=post.ppf(0.16) * scale,
                            upper=post.ppf(0.84) * scale, coincidences=c,
                            heralds=n)


def _sweep_point(cfg: RunConfig, proto, stream, trials):
    model = protocol.build_trial_model(proto, conditional_states=False)
    log = run_campaign(proto, trials, cfg.seed, stream=stream, model=model,
                       config_snapshot=cfg.snapshot())
    tally = stats.tally(log)
    same = _pooled_pairs(tally, [(1, 1), (2, 2)])
    cross = _pooled_pairs(tally, [(1, 2), (2, 1)])
    exact_same = 0.5 * (model.g2_exact(1, 1) + model.g2_exact(2, 2))
    exact_cross = 0.5 * (model.g2_exact(1, 2) + model.g2_exact(2, 1))
    return model, tally, same, cross, exact_same, exact_cross


def _fringe_rows(xs, points):
    rows = []
    for x, (_, _, same, cross, es, ec) in zip(xs, points):
        rows.append([x, same.value, same.lower, same.upper,
                     cross.value, cross.lower, cross.upper, es, ec])
    return rows


_FRINGE_HEADER = ["x", "g2_same", "g2_same_err_lo", "g2_same_err_hi",
                  "g2_cross", "g2_cross_err_lo", "g2_cross_err_hi",
                  "g2_same_exact", "g2_cross_exact"]


# ---------------------------------------------------------------------------
# subcommands


def cmd_phase_sweep(cfg: RunConfig, out_dir, config_path) -> None:
    problems = cfg.require_simulation()
    if not cfg.delta_phi_sweep:
        problems.append("[sweep] delta_phi_pi_list is required for phase-sweep")
    if problems:
        raise ConfigError(problems)
    phases = cfg.delta_phi_sweep
    per_point = max(1, cfg.trials // len(phases))
    points = []
    for i, phi in enumerate(phases):
        proto = cfg.protocol.with_delta_phi(phi)
        points.append(_sweep_point(cfg, proto, i, per_point))
    xs = [phi / PI for phi in phases]
    write_csv(os.path.join(out_dir, "fringe.csv"), _FRINGE_HEADER,
              _fringe_rows(xs, points))

    # the cross/same difference doubles the fringe amplitude and cancels
    # the common offset, which conditions the period fit best
    cross_vals = np.array([p[3].value for p in points])
    same_vals = np.array([p[2].value for p in points])
    cross_sigma = np.array([0.5 * (p[3].upper - p[3].lower) for p in points])
    same_sigma = np.array([0.5 * (p[2].upper - p[2].lower) for p in points])
    fit = stats.fit_fringe(np.array(phases), cross_vals - same_vals,
                           np.hypot(cross_sigma, same_sigma))
    exact_cross = np.array([p[5] for p in points])
    exact_same = np.array([p[4] for p in points])
    fit_exact = stats.fit_fringe(np.array(phases), exact_cross - exact_same)
    all_sampled = np.concatenate([cross_vals, same_vals])
    all_exact = np.concatenate([exact_cross, exact_same])
    summary = {
        "points": len(phases),
        "trials_per_point": per_point,
        "period_pi": fit.period / PI,
        "period_pi_exact": fit_exact.period / PI,
        "period_error_pi": fit.period_error / PI,
        "visibility_sampled": stats.visibility(all_sampled),
        "visibility_exact": stats.visibility(all_exact),
        "herald_probability_exact": points[0][0].herald_prob(),
        "truncation_budget": max(p[0].truncation_budget for p in points),
    }
    write_json(os.path.join(out_dir, "fringe_fit.json"), summary)
    _manifest(out_dir, "phase-sweep", config_path, cfg, cfg.seed, cfg.trials)


def cmd_time_sweep(cfg: RunConfig, out_dir, config_path) -> None:
    problems = cfg.require_simulation()
    if not cfg.tau_sweep:
        problems.append("[sweep] tau_ns_list is required for time-sweep")
    if problems:
        raise ConfigError(problems)
    taus = cfg.tau_sweep
    per_point = max(1, cfg.trials // len(taus))
    points = []
    for i, tau in enumerate(taus):
        proto = cfg.protocol.with_tau(tau)
        points.append(_sweep_point(cfg, proto, i, per_point))
    xs = [t / NS for t in taus]
    write_csv(os.path.join(out_dir, "fringe.csv"), _FRINGE_HEADER,
              _fringe_rows(xs, points))

    windows = _split_windows(taus)
    vis_rows = []
    for idx in windows:
        center = float(np.mean([taus[k] for k in idx]))
        v_s = _window_visibility(
            [taus[k] for k in idx],
            [points[k][3].value for k in idx],
            [points[k][2].value for k in idx])
        v_e = _window_visibility(
            [taus[k] for k in idx],
            [points[k][5] for k in idx],
            [points[k][4] for k in idx])
        proto = cfg.protocol.with_tau(center)
        v_bound_exact = protocol.exact_visibility_ceiling(proto)
        v_bound_formula = _formula_bound(cfg, center)
        vis_rows.append([center / NS, v_s, v_e, v_bound_exact, v_bound_formula])
    write_csv(os.path.join(out_dir, "visibility.csv"),
              ["tau_ns", "v_sampled", "v_exact", "v_bound_exact",
               "v_bound_formula"], vis_rows)

    first = windows[0]
    fit = stats.fit_fringe(
        np.array([taus[k] for k in first]),
        np.array([points[k][3].value - points[k][2].value for k in first]),
        np.array([math.hypot(points[k][3].upper - points[k][3].lower,
                             points[k][2].upper - points[k][2].lower) * 0.5
                  for k in first]))
    summary = {
        "points": len(taus),
        "trials_per_point": per_point,
        "period_ns": fit.period / NS,
        "period_error_ns": fit.period_error / NS,
        "windows": [[taus[k] / NS for k in idx] for idx in windows],
        "visibility": [
            {"tau_ns": row[0], "sampled": row[1], "exact": row[2],
             "bound_exact": row[3], "bound_formula": row[4]}
            for row in vis_rows],
    }
    write_json(os.path.join(out_dir, "sweep_fit.json"), summary)
    _manifest(out_dir, "time-sweep", config_path, cfg, cfg.seed, cfg.trials)


def _split_windows(taus, max_gap=6e-9):
    windows, current = [], [0]
    for k in range(1, len(taus)):
        if taus[k] - taus[k - 1] <= max_gap:
            current.append(k)
        else:
            windows.append(current)
            current = [k]
    windows.append(current)
    return windows


def _window_visibility(taus, cross_vals, same_vals) -> float:
    """Fringe contrast within one delay window.

    Cross- and same-detector correlations oscillate half a fringe apart;
    a sinusoid fit per series recovers the amplitude wherever the window
    samples the fringe, and the two estimates are averaged.
    """
    taus = np.asarray(taus, dtype=float)
    out = []
    for vals in (np.asarray(cross_vals), np.asarray(same_vals)):
        if len(vals) >= 5:
            try:
                fit = stats.fit_fringe(taus, vals)
                if not fit.flagged:
                    top = fit.offset + abs(fit.amplitude)
                    bot = max(fit.offset - abs(fit.amplitude), 0.0)
                    out.append((top - bot) / (top + bot))
                    continue
            except stats.StatsError:
                pass
        out.append(stats.visibility(vals))
    return float(np.mean(out))


def _formula_bound(cfg: RunConfig, tau: float) -> float:
    """Low-temperature closed-form visibility ceiling for the config.

    Per-phonon background rates are referred to each device's detector-2
    detection scale, the convention of single-device runs.
    """
    proto = cfg.protocol
    intf = proto.interferometer
    budgets = []
    for dev, arm, w2 in ((proto.device_a, "A", 1.0 - intf.combiner_transmittance),
                         (proto.device_b, "B", intf.combiner_transmittance)):
        heat = noise.HeatingParams(decay=dev.gamma_decay,
                                   bath_gamma=dev.bath_gamma,
                                   bath_k=dev.bath_k, n_init=dev.n_init)
        n0 = dev.start_occupation

        def n_th(t, heat=heat, n0=n0):
            return noise.occupation(t, heat, n0)

        scale = (dev.p_read * dev.eta_path * intf.arm_attenuation(arm)
                 * w2 * proto.detectors.eta[1])
        n_bg = proto.detectors.p_dark_read[1] / scale if scale > 0 else 0.0
        budgets.append(noise.NoiseBudget(
            n_th=n_th, p_pump=dev.p_pump, n_leak=dev.n_leak,
            n_bg=min(n_bg, 0.499), decay=dev.gamma_decay))
    return noise.visibility_bound(tau, *budgets)


def cmd_witness(cfg: RunConfig, out_dir, config_path) -> None:
    problems = cfg.require_simulation()
    if problems:
        raise ConfigError(problems)
    model = protocol.build_trial_model(cfg.protocol)
    log = run_campaign(cfg.protocol, cfg.trials, cfg.seed, model=model,
                       config_snapshot=cfg.snapshot())
    tally = stats.tally(log)
    params = _analysis_params(cfg)

    exact = {}
    for det in (1, 2):
        try:
            exact[f"moment_ratio_det{det}"] = model.exact_witness(det)
        except protocol.ProtocolError:
            exact[f"moment_ratio_det{det}"] = None
    try:
        exact["bound_from_exact_g2_det1"] = stats.witness_from_g2(
            model.g2_exact(1, 1), model.g2_exact(2, 1))
        exact["bound_from_exact_g2_det2"] = stats.witness_from_g2(
            model.g2_exact(1, 2), model.g2_exact(2, 2))
    except stats.StatsError:
        pass
    extras = {
        "exact": exact,
        "herald_probability_exact": model.herald_prob(),
        "truncation_budget": model.truncation_budget,
        "trials": cfg.trials,
        "seed": cfg.seed,
    }
    doc = _witness_report(tally, params, extras)
    write_json(os.path.join(out_dir, "witness.json"), doc)
    atomic_write(os.path.join(out_dir, "tally.json"), tally.dumps())

    save = cfg.save_clicklog
    if save is None:
        save = len(log) <= 5_000_000
    if save:
        log.save(os.path.join(out_dir, "clicklog.csv"),
                 os.path.join(out_dir, "clicklog_meta.json"))
    _manifest(out_dir, "witness", config_path, cfg, cfg.seed, cfg.trials)


def cmd_pump_probe(cfg: RunConfig, out_dir, config_path) -> None:
    pp = cfg.pump_probe
    if "data_csv" in pp:
        t, d, sigma = noise.read_pump_probe_csv(pp["data_csv"])
    else:
        required = ("gamma_per_us", "bath_gamma_per_us")
        missing = [k for k in required if k not in pp]
        if missing:
            raise ConfigError([f"[pump_probe] missing {k}" for k in missing])
        if "seed" not in pp:
            raise ConfigError(["[pump_probe] seed is required for synthesis"])
        decay = pp["gamma_per_us"] / US
        bath_gamma = pp["bath_gamma_per_us"] / US
        t_max = pp.get("t_max_us", 20.0) * US
        n = int(pp.get("samples", 80))
        t = np.concatenate([np.linspace(0.03 * US, min(2 * US, t_max / 3), n // 2),
                            np.linspace(min(2 * US, t_max / 3) * 1.15, t_max,
                                        n - n // 2)])
        clean = noise.pump_probe_model(t, pp.get("amplitude_fast", 0.9),
                                       pp.get("amplitude_rise", 0.7),
                                       decay, bath_gamma, pp.get("offset", 0.08))
        frac = pp.get("noise_fraction", 0.02)
        sigma = np.maximum(frac * clean, 1e-4)
        rng = np.random.default_rng(pp["seed"])
        d = clean + rng.normal(0.0, sigma) if frac > 0 else clean
    fit = noise.fit_pump_probe(t, d, sigma)
    doc = {
        "lifetime_us": 1.0 / fit.params.decay / US,
        "bath_lifetime_us": 1.0 / fit.params.bath_gamma / US,
        "bath_k_per_us": fit.params.bath_k * US,
        "amplitude_fast": fit.amplitude_fast,
        "amplitude_rise": fit.amplitude_rise,
        "offset": fit.params.n_final,
        "chi2": fit.chi2,
        "n_points": len(t),
    }
    write_json(os.path.join(out_dir, "pump_probe_fit.json"), doc)
    model_curve = noise.pump_probe_model(t, fit.amplitude_fast, fit.amplitude_rise,
                                         fit.params.decay, fit.params.bath_gamma,
                                         fit.params.n_final)
    write_csv(os.path.join(out_dir, "pump_probe_curve.csv"),
              ["t_ns", "signal", "sigma", "fit"],
              [[tt / NS, dd, ss, mm] for tt, dd, ss, mm in
               zip(t, d, sigma, model_curve)])
    _manifest(out_dir, "pump-probe", config_path, cfg)


def cmd_plan_yield(cfg: RunConfig, out_dir, config_path) -> None:
    py = cfg.plan_yield
    if not py:
        raise ConfigError(["[plan.yield] section is required"])
    chips = py.get("chips", 2)
    sigma = py.get("sigma_nm_list", (2.0,))
    offsets = py.get("offsets_nm_list", (0.0,))
    if len(sigma) == 1:
        sigma = sigma * chips
    if len(offsets) == 1:
        offsets = offsets * chips
    model = planner.YieldModel(
        chips=chips, devices_per_chip=py.get("devices_per_chip", 234),
        sigma_nm=tuple(sigma), offsets_nm=tuple(offsets),
        window_mhz=py.get("window_mhz", 100.0),
        carrier_nm=py.get("carrier_nm", 1550.0))
    reps = py.get("mc_reps", 20000)
    seed = py.get("seed", 1)
    est = (planner.pair_yield(model, mc_reps=reps, seed=seed) if chips == 2
           else planner.multi_chip_yield(model, mc_reps=reps, seed=seed))
    doc = {
        "chips": chips,
        "devices_per_chip": model.devices_per_chip,
        "window_nm": model.window_nm,
        "analytic": est.analytic,
        "monte_carlo": est.monte_carlo,
        "monte_carlo_se": est.monte_carlo_se,
        "tuple_match_probability": est.pair_probability,
        "mc_reps": reps,
    }
    write_json(os.path.join(out_dir, "yield.json"), doc)
    lines = [
        f"chips: {chips} x {model.devices_per_chip} devices",
        f"match window: {model.window_mhz} MHz = {model.window_nm * 1e3:.3f} pm",
        f"analytic yield:    {est.analytic:.6f}",
        f"monte carlo yield: {est.monte_carlo:.6f} +- {est.monte_carlo_se:.6f}",
    ]
    atomic_write(os.path.join(out_dir, "yield.txt"), "\n".join(lines) + "\n")
    _manifest(out_dir, "plan-yield", config_path, cfg)


def _link_from_config(pf: dict) -> planner.LinkBudget:
    def budget(prefix):
        return noise.NoiseBudget(
            n_th=pf[f"{prefix}_n_th"], p_pump=pf[f"{prefix}_p_pump"],
            n_leak=pf[f"{prefix}_n_leak"], n_bg=pf[f"{prefix}_n_bg"],
            decay=pf[f"{prefix}_gamma_per_us"] / US)

    return planner.LinkBudget(
        budget_a=budget("a"), budget_b=budget("b"),
        tau=pf.get("tau_ns", 123.0) * NS,
        attenuation_db_per_km=pf.get("attenuation_db_per_km", 0.17),
        repetition_period=pf.get("repetition_us", 50.0) * US,
        overhead_fraction=pf.get("overhead_fraction", 0.15),
        herald_prob=pf.get("herald_prob", 2.7e-4),
        read_prob=pf.get("read_prob", 2.48e-4),
        herald_dilution=pf.get("herald_dilution", True),
        include_decay=pf.get("include_decay", True))


def cmd_plan_fiber(cfg: RunConfig, out_dir, config_path) -> None:
    pf = cfg.plan_fiber
    required = [f"{p}_{k}" for p in "ab"
                for k in ("n_th", "p_pump", "n_leak", "n_bg", "gamma_per_us")]
    missing = [k for k in required if k not in pf]
    if missing:
        raise ConfigError([f"[plan.fiber] missing {k}" for k in missing])
    link = _link_from_config(pf)
    floor = pf.get("g2_floor", 7.1)
    tau = link.tau

    combos = {}
    for dil in (True, False):
        for dec in (True, False):
            key = f"dilution={'on' if dil else 'off'},decay={'on' if dec else 'off'}"
            combos[key] = {
                "arm_a_db": planner.required_added_db(link.budget_a, floor, tau,
                                                      dil, dec),
                "arm_b_db": planner.required_added_db(link.budget_b, floor, tau,
                                                      dil, dec),
            }
    retention = pf.get("contrast_retention", 0.95)
    sep = planner.max_separation(link, retention)
    doc = {
        "g2_baseline_a": planner.degraded_g2(link.budget_a, 0.0, tau,
                                             link.herald_dilution,
                                             link.include_decay),
        "g2_baseline_b": planner.degraded_g2(link.budget_b, 0.0, tau,
                                             link.herald_dilution,
                                             link.include_decay),
        "g2_floor": floor,
        "required_db_combinations": combos,
        "required_db_default": {
            "arm_a_db": planner.required_added_db(link.budget_a, floor, tau,
                                                  link.herald_dilution,
                                                  link.include_decay),
            "arm_b_db": planner.required_added_db(link.budget_b, floor, tau,
                                                  link.herald_dilution,
                                                  link.include_decay),
        },
        "max_separation": dataclasses.asdict(sep),
        "separations": {},
    }
    for km in pf.get("separation_km_list", ()):
        split = planner.split_separation(link, km, retention)
        it = planner.integration_time(link, km,
                                      pf.get("sigma_clearance", 3.0), retention)
        doc["separations"][f"{km:g}"] = {
            "split": dataclasses.asdict(split),
            "integration_days": it.days,
            "trials": it.trials,
            "coincidences": it.coincidences,
            "witness_ml": it.witness_ml,
        }
    write_json(os.path.join(out_dir, "fiber.json"), doc)

    lines = [
        f"baseline correlations: A {doc['g2_baseline_a']:.2f}, "
        f"B {doc['g2_baseline_b']:.2f}; floor {floor:.2f}",
        f"added loss to floor:   A {doc['required_db_default']['arm_a_db']:.2f} dB, "
        f"B {doc['required_db_default']['arm_b_db']:.2f} dB",
        f"max insertable fiber:  {sep.total_km:.0f} km "
        f"(A {sep.arm_a_km:.0f} km, B {sep.arm_b_km:.0f} km)",
    ]
    for km, entry in doc["separations"].items():
        s = entry["split"]
        lines.append(
            f"separation {km} km: split A {s['arm_a_km']:.0f} / "
            f"B {s['arm_b_km']:.0f} km, {entry['integration_days']:.0f} days "
            f"({entry['coincidences']:.0f} coincidences, witness "
            f"{entry['witness_ml']:.2f})")
    atomic_write(os.path.join(out_dir, "fiber.txt"), "\n".join(lines) + "\n")
    _manifest(out_dir, "plan-fiber", config_path, cfg)


def cmd_analyze(cfg: RunConfig, out_dir, config_path) -> None:
    a = cfg.analyze
    if "tally_json" in a:
        with open(a["tally_json"]) as fh:
            tally = stats.CoincidenceTally.loads(fh.read())
    elif "clicklog_csv" in a:
        log = ClickLog.from_csv(a["clicklog_csv"], a.get("clicklog_meta"))
        tally = stats.tally(log)
    else:
        raise ConfigError(["[analyze] needs tally_json or clicklog_csv"])
    doc = _witness_report(tally, _analysis_params(cfg))
    write_json(os.path.join(out_dir, "witness.json"), doc)
    atomic_write(os.path.join(out_dir, "tally.json"), tally.dumps())
    _manifest(out_dir, "analyze", config_path, cfg)


_SUBCOMMANDS = {
    "phase-sweep": cmd_phase_sweep,
    "time-sweep": cmd_time_sweep,
    "witness": cmd_witness,
    "pump-probe": cmd_pump_probe,
    "plan-yield": cmd_plan_yield,
    "plan-fiber": cmd_plan_fiber,
    "analyze": cmd_analyze,
}


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="mechlink",
        description="heralded mechanical-entanglement simulator and analysis")
    ap.add_argument("subcommand", choices=sorted(_SUBCOMMANDS))
    ap.add_argument("--config", required=True)
    ap.add_argument("--out", default="out")
    ap.add_argument("--seed", type=int, default=None)
    ap.add_argument("--trials", type=int, default=None)
    args = ap.parse_args(argv)

    try:
        cfg = parse_config(args.config)
        if args.seed is not None:
            cfg.seed = args.seed
        if args.trials is not None:
            cfg.trials = args.trials
        os.makedirs(args.out, exist_ok=True)
        _SUBCOMMANDS[args.subcommand](cfg, args.out, args.config)
    except ConfigError as exc:
        for line in exc.violations:
            print(f"config error: {line}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
