"""Command-line front end: fit interpolators, simulate scenes, localize,
sweep parameters, and aggregate results.

Every command takes a JSON config (see README) with a master seed; a few
common flags override config keys. Exit codes: 0 success, 2 I/O or file
format, 3 numerical/fit failure, 4 incompatible inputs.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import evaluate, scenes
from .baselines import music_spectrum, srp_phat_spectrum
from .errors import (
    EstimationError,
    FormatError,
    ParameterError,
    SceneSpecError,
    ShamansError,
    ShapeError,
    SingularSystemError,
)
from .interp import (
    CoordNetConfig,
    ShBasisConfig,
    SparseSvMeasurements,
    fit_coordnet,
    fit_sh,
    interp_svs,
    load_fit_artifact,
    save_fit_artifact,
)
from .scenes import (
    derive_seed,
    load_scene,
    save_scene,
    scene_batch,
    synth_scene,
    synthetic_measured_svs,
)
from .signal import StftParams, read_wav, stft
from .stable import SolverConfig, shamans_localize
from .steering import (
    ArrayGeometry,
    DoaGrid,
    SteeringVectorSet,
    algebraic_svs,
    load_svset,
    save_svset,
)

EXIT_OK = 0
EXIT_IO = 2
EXIT_NUMERICAL = 3
EXIT_INCOMPATIBLE = 4

DEFAULT_CONFIG = {
    "seed": 0,
    "sample_rate": 48000,
    "stft": {"frame_size": 768, "hop": 384, "f_max_hz": 8000.0},
    "grid": {"count": 60, "radius_m": 1.7, "elevation_deg": 0.0},
    "array": {"kind": "random", "num_mics": 6, "aperture_m": 0.18},
    "sv": {"model": "ref", "path": None},
    "method": "shamans",
    "solver": {"beta": 1.0, "sparsity_lambda": 1e-3, "iterations": 500, "p_norm": 1.0},
    "peaks": {"threshold": 0.3, "min_sep_cells": 2, "max_peaks": 10},
    "field": {"degree": 8, "perturb_strength": 0.15},
    "scene": {"source_indices": [17], "snr_db": 20.0, "duration_s": 1.0,
              "source_kind": {"kind": "sas", "alpha": 1.5, "scale": 1.0}},
    "fit": {"method": "sh", "n_sv": 32, "max_degree": None, "ridge_lambda": 1e-6,
            "num_features": 128, "feature_scale": 2.0},
}


def _deep_merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for key, val in override.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], val)
        else:
            out[key] = val
    return out


def load_config(path: str | None, overrides: dict | None = None) -> dict:
    config = DEFAULT_CONFIG
    if path is not None:
        config = _deep_merge(config, json.loads(Path(path).read_text()))
    if overrides:
        config = _deep_merge(config, overrides)
    return config


def build_stft_params(config: dict) -> StftParams:
    s = config["stft"]
    return StftParams(frame_size=int(s["frame_size"]), hop=int(s["hop"]),
                      f_max_hz=float(s["f_max_hz"]),
                      sample_rate=int(config["sample_rate"]))


def build_grid(config: dict) -> DoaGrid:
    g = config["grid"]
    return DoaGrid.uniform(count=int(g["count"]), radius_m=float(g["radius_m"]),
                           elevation_deg=float(g.get("elevation_deg", 0.0)))


def build_array(config: dict) -> ArrayGeometry:
    a = config["array"]
    if a.get("kind", "random") == "positions":
        return ArrayGeometry(np.asarray(a["mic_positions_m"], dtype=float))
    seed = a.get("seed")
    if seed is None:
        seed = derive_seed(config["seed"], "array")
    return ArrayGeometry.random_array(num_mics=int(a.get("num_mics", 6)),
                                      aperture_m=float(a.get("aperture_m", 0.1)),
                                      seed=int(seed))


def stft_freqs(params: StftParams) -> np.ndarray:
    bin_hz = params.sample_rate / params.frame_size
    count = int(np.floor(params.f_max_hz / bin_hz + 1e-9)) + 1
    return np.arange(count) * bin_hz


def build_field(config: dict, geometry: ArrayGeometry, grid: DoaGrid,
                params: StftParams) -> scenes.SyntheticSvField:
    f = config["field"]
    seed = f.get("seed")
    if seed is None:
        seed = derive_seed(config["seed"], "field")
    return synthetic_measured_svs(geometry, grid.radius_m, stft_freqs(params),
                                  seed=int(seed), degree=int(f.get("degree", 8)),
                                  perturb_strength=float(f.get("perturb_strength", 0.15)))


def resolve_svs(config: dict, grid: DoaGrid, params: StftParams,
                geometry: ArrayGeometry | None = None) -> SteeringVectorSet:
    """Steering vectors per the configured model: ref | alg | sh | nslite."""
    model = config["sv"].get("model", "ref")
    path = config["sv"].get("path")
    if model == "alg":
        geometry = geometry or build_array(config)
        return algebraic_svs(geometry, grid, stft_freqs(params))
    if model == "ref":
        if path is not None:
            return load_svset(path)
        geometry = geometry or build_array(config)
        return build_field(config, geometry, grid, params).on_grid(grid)
    if model in ("sh", "nslite"):
        if path is None:
            raise ParameterError("sv.path must point to a fit artifact")
        fitted = load_fit_artifact(path)
        return interp_svs(fitted, grid, stft_freqs(params))
    raise ParameterError(f"unknown sv model {model!r}")


def run_method(method: str, spectrogram, svs, config: dict):
    """Dispatch a localizer; returns (normalized values, method tag, info)."""
    if method == "shamans":
        solver = config["solver"]
        measure = shamans_localize(spectrogram, svs, SolverConfig(
            beta=float(solver["beta"]),
            sparsity_lambda=float(solver["sparsity_lambda"]),
            iterations=int(solver["iterations"]),
            p_norm=float(solver["p_norm"])))
        return evaluate.minmax_normalize(measure.upsilon), "shamans", measure.info
    if method.startswith("music-"):
        rank = int(method.split("-", 1)[1])
        spectrum = music_spectrum(spectrogram, svs, subspace_rank=rank)
        return evaluate.minmax_normalize(spectrum.values), spectrum.method_tag, {}
    if method == "srp-phat":
        spectrum = srp_phat_spectrum(spectrogram, svs)
        return evaluate.minmax_normalize(spectrum.values), spectrum.method_tag, {}
    raise ParameterError(f"unknown method {method!r}")


# ---------------------------------------------------------------------------
# subcommands


def cmd_fit(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config["seed"] = args.seed
    fit_cfg = dict(config["fit"])
    if args.n_sv is not None:
        fit_cfg["n_sv"] = args.n_sv
    if args.method is not None:
        fit_cfg["method"] = args.method
    if args.max_degree is not None:
        fit_cfg["max_degree"] = args.max_degree
    if args.ridge_lambda is not None:
        fit_cfg["ridge_lambda"] = args.ridge_lambda

    measured = load_svset(args.measurements)
    n_sv = int(fit_cfg["n_sv"])
    if n_sv > measured.num_dirs:
        raise ShapeError(f"requested {n_sv} measurements, set has {measured.num_dirs}")
    rng = np.random.default_rng(derive_seed(config["seed"], "svsample"))
    chosen = np.sort(rng.choice(measured.num_dirs, size=n_sv, replace=False))
    dirs = measured.grid.directions()[chosen]
    samples = SparseSvMeasurements(directions=dirs,
                                   values=measured.values[chosen],
                                   freqs_hz=measured.freqs_hz)

    if fit_cfg["method"] == "sh":
        degree = fit_cfg.get("max_degree")
        if degree is None:
            degree = ShBasisConfig.default_degree(n_sv)
        model = fit_sh(samples, ShBasisConfig(max_degree=int(degree),
                                              ridge_lambda=float(fit_cfg["ridge_lambda"])))
    elif fit_cfg["method"] == "nslite":
        model = fit_coordnet(samples, CoordNetConfig(
            num_features=int(fit_cfg.get("num_features", 128)),
            feature_scale=float(fit_cfg.get("feature_scale", 2.0)),
            ridge_lambda=float(fit_cfg["ridge_lambda"]),
            seed=derive_seed(config["seed"], "nslite")))
    else:
        raise ParameterError(f"unknown fit method {fit_cfg['method']!r}")

    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_fit_artifact(model, out)
    meta = json.loads(out.with_suffix(".json").read_text())
    meta.update({"n_sv": n_sv, "fit_method": fit_cfg["method"],
                 "master_seed": config["seed"]})
    out.with_suffix(".json").write_text(json.dumps(meta, sort_keys=True, indent=1))
    print(f"wrote {out} ({fit_cfg['method']}, {n_sv} measurements)")
    return EXIT_OK


def cmd_simulate(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config["seed"] = args.seed
    params = build_stft_params(config)
    grid = build_grid(config)
    geometry = build_array(config)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    if args.emit_ref_svset:
        field = build_field(config, geometry, grid, params)
        save_svset(field.on_grid(grid), out / "ref.svst")
        print(f"wrote {out / 'ref.svst'}")
    if args.emit_alg_svset:
        save_svset(algebraic_svs(geometry, grid, stft_freqs(params)), out / "alg.svst")
        print(f"wrote {out / 'alg.svst'}")

    base = scenes.scene_from_dict(config["scene"])
    base.seed = config["seed"]
    batch = scene_batch(base, {}, args.count, len(grid))
    for i, spec in enumerate(batch):
        save_scene(spec, out / f"scene_{i:04d}.json")
    if args.dump_spectrograms:
        from .steering import write_svset_raw

        ref = build_field(config, geometry, grid, params).on_grid(grid)
        for i, spec in enumerate(batch):
            sg, _truth = synth_scene(spec, ref, params)
            path = out / f"scene_{i:04d}.spec.svst"
            # debugging dump: payload [M, F, T], channel indices in the
            # azimuth slot and frame times in the frequency slot
            frame_times = np.arange(sg.num_frames) * (params.hop / params.sample_rate)
            write_svset_raw(path, sg.bins, np.arange(sg.num_channels),
                            frame_times, 0.0, 0.0, 0)
            path.with_suffix(".json").write_text(json.dumps({
                "kind": "spectrogram", "channels": sg.num_channels,
                "freq_bins": sg.num_freqs, "frames": sg.num_frames,
                "sample_rate": sg.sample_rate, "frame_size": sg.frame_size,
                "hop": sg.hop}, sort_keys=True, indent=1))
    print(f"wrote {len(batch)} scene specs to {out}")
    return EXIT_OK


def _localize_once(config, spectrogram, svs, truth, method):
    values, tag, info = run_method(method, spectrogram, svs, config)
    pk = config["peaks"]
    peaks = evaluate.pick_peaks(values, float(pk["threshold"]),
                                int(pk["min_sep_cells"]), int(pk["max_peaks"]))
    result = {"values": values, "tag": tag, "info": info, "peaks": peaks}
    if truth is not None and truth.indices.size > 0:
        forced = evaluate.pick_peaks(values, 0.0, int(pk["min_sep_cells"]),
                                     truth.indices.size)
        grid_az = svs.grid.azimuths_deg
        est_az = [grid_az[i] for i, _ in forced]
        errors = evaluate.match_errors(truth.azimuths_deg, est_az)
        result["errors_deg"] = errors.tolist()
        result["acc15"] = evaluate.accuracy_at(errors, 15.0)
    return result


def cmd_localize(args) -> int:
    config = load_config(args.config)
    for key, val in (("method", args.method), ("seed", args.seed)):
        if val is not None:
            config[key] = val
    if args.sv_model is not None:
        config["sv"]["model"] = args.sv_model
    if args.sv_path is not None:
        config["sv"]["path"] = args.sv_path

    params = build_stft_params(config)
    grid = build_grid(config)
    geometry = build_array(config)

    truth = None
    if args.audio is not None:
        audio = read_wav(args.audio)
        spectrogram = stft(audio, params.frame_size, params.hop, params.f_max_hz)
        svs = resolve_svs(config, grid, params, geometry)
    else:
        scene = load_scene(args.scene) if args.scene else scenes.scene_from_dict(config["scene"])
        if args.scene is None:
            scene.seed = config["seed"]
        ref = build_field(config, geometry, grid, params).on_grid(grid)
        spectrogram, truth = synth_scene(scene, ref, params)
        svs = ref if config["sv"]["model"] == "ref" and config["sv"].get("path") is None \
            else resolve_svs(config, grid, params, geometry)

    result = _localize_once(config, spectrogram, svs, truth, config["method"])

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    evaluate.save_spectrum_csv(grid.azimuths_deg, result["values"],
                               out / "spectrum.csv", result["tag"], result["info"])
    doc = {"method": result["tag"], "sv_model": config["sv"]["model"],
           "peaks": [{"index": i, "azimuth_deg": float(grid.azimuths_deg[i]),
                      "value": v} for i, v in result["peaks"]]}
    if "errors_deg" in result:
        doc["errors_deg"] = result["errors_deg"]
        doc["acc15"] = result["acc15"]
    (out / "result.json").write_text(json.dumps(doc, sort_keys=True, indent=1))
    print(f"wrote {out / 'spectrum.csv'} and {out / 'result.json'}")
    return EXIT_OK


def _num_workers() -> int:
    cap = os.environ.get("SHAMANS_THREADS")
    workers = os.cpu_count() or 1
    if cap:
        workers = max(1, min(workers, int(cap)))
    return workers


def _sweep_one(task):
    """Worker: evaluate all (method, sv_model) pairs on one scene."""
    config, scene_doc, axis, value, scene_id, methods, sv_models, artifacts = task
    params = build_stft_params(config)
    grid = build_grid(config)
    geometry = build_array(config)
    field = build_field(config, geometry, grid, params)
    ref = field.on_grid(grid)
    spec = scenes.scene_from_dict(scene_doc)
    spectrogram, truth = synth_scene(spec, ref, params)

    rows = []
    for sv_model in sv_models:
        try:
            if sv_model == "ref":
                svs = ref
            elif sv_model == "alg":
                svs = algebraic_svs(geometry, grid, stft_freqs(params))
            else:
                svs = interp_svs(load_fit_artifact(artifacts[sv_model]), grid,
                                 stft_freqs(params))
        except (ShamansError, OSError) as exc:
            for method in methods:
                rows.append((scene_id, axis, value, method, sv_model, truth.indices.size,
                             0, [], None, f"sv-error: {exc}"))
            continue
        for method in methods:
            try:
                res = _localize_once(config, spectrogram, svs, truth, method)
                rows.append((scene_id, axis, value, method, sv_model,
                             truth.indices.size, len(res["peaks"]),
                             res.get("errors_deg", []), res.get("acc15"), "ok"))
            except (ShamansError, np.linalg.LinAlgError) as exc:
                rows.append((scene_id, axis, value, method, sv_model,
                             truth.indices.size, 0, [], None, f"error: {exc}"))
    return rows


def cmd_sweep(args) -> int:
    config = load_config(args.config)
    if args.seed is not None:
        config["seed"] = args.seed
    methods = args.methods.split(",")
    sv_models = args.sv_models.split(",")
    grid = build_grid(config)

    base = scenes.scene_from_dict(config["scene"])
    base.seed = config["seed"]
    axis = args.axis
    values = [float(v) for v in args.values.split(",")] if args.values else [None]
    sweep = {} if axis is None else {axis: values}
    batch = scene_batch(base, sweep, args.count, len(grid))

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    artifacts = {}
    for sv_model in sv_models:
        if sv_model in ("sh", "nslite"):
            path = config["sv"].get("path")
            if path is None:
                raise ParameterError(f"sv.path needed for sv model {sv_model!r}")
            artifacts[sv_model] = path

    per_point = len(values) if axis else 1
    tasks = []
    for j, spec in enumerate(batch):
        value = values[j // args.count] if axis else ""
        tasks.append((config, scenes.scene_to_dict(spec), axis or "", value,
                      f"scene_{j:05d}", methods, sv_models, artifacts))

    workers = _num_workers()
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            all_rows = list(pool.map(_sweep_one, tasks))
    else:
        all_rows = [_sweep_one(t) for t in tasks]

    flat = [row for rows in all_rows for row in rows]
    flat.sort(key=lambda r: (r[1], r[2], r[0], r[3], r[4]))
    detail = out / "detail.csv"
    with open(detail, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["scene_id", "axis", "value", "method", "sv_model",
                         "n_true", "n_est", "err_mean_deg", "err_deg_per_source",
                         "acc15", "status"])
        for sid, ax, val, method, sv_model, n_true, n_est, errs, acc, status in flat:
            writer.writerow([
                sid, ax, val, method, sv_model, n_true, n_est,
                f"{np.mean(errs):.6f}" if errs else "",
                ";".join(f"{e:.6f}" for e in errs),
                f"{acc:.6f}" if acc is not None else "", status])
    _write_summary(flat, out / "summary.csv")
    print(f"wrote {detail} ({len(flat)} rows)")
    return EXIT_OK


def _write_summary(flat, path) -> None:
    groups: dict = {}
    for sid, ax, val, method, sv_model, n_true, n_est, errs, acc, status in flat:
        if status != "ok":
            continue
        groups.setdefault((ax, val, method, sv_model), []).append((errs, acc))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(["axis", "value", "method", "sv_model", "scenes",
                         "err_mean_deg", "err_std_deg", "acc15_mean"])
        for (ax, val, method, sv_model), grp in sorted(groups.items(),
                                                       key=lambda kv: tuple(map(str, kv[0]))):
            errs = np.concatenate([np.asarray(e) for e, _ in grp if e]) \
                if any(e for e, _ in grp) else np.empty(0)
            accs = [a for _, a in grp if a is not None]
            writer.writerow([
                ax, val, method, sv_model, len(grp),
                f"{errs.mean():.6f}" if errs.size else "",
                f"{errs.std():.6f}" if errs.size else "",
                f"{np.mean(accs):.6f}" if accs else ""])


def cmd_report(args) -> int:
    with open(args.detail, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        flat = []
        for row in reader:
            errs = [float(e) for e in row["err_deg_per_source"].split(";") if e]
            acc = float(row["acc15"]) if row["acc15"] else None
            flat.append((row["scene_id"], row["axis"], row["value"], row["method"],
                         row["sv_model"], int(row["n_true"]), int(row["n_est"]),
                         errs, acc, row["status"]))
    _write_summary(flat, args.out)
    print(f"wrote {args.out}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="shamans",
                                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_fit = sub.add_parser("fit", help="fit an SV interpolator from a measured SVSET")
    p_fit.add_argument("--config")
    p_fit.add_argument("--measurements", required=True)
    p_fit.add_argument("--out", required=True)
    p_fit.add_argument("--n-sv", dest="n_sv", type=int)
    p_fit.add_argument("--method", choices=["sh", "nslite"])
    p_fit.add_argument("--max-degree", dest="max_degree", type=int)
    p_fit.add_argument("--ridge-lambda", dest="ridge_lambda", type=float)
    p_fit.add_argument("--seed", type=int)
    p_fit.set_defaults(func=cmd_fit)

    p_sim = sub.add_parser("simulate", help="emit scene specs and SV sets")
    p_sim.add_argument("--config")
    p_sim.add_argument("--out", required=True)
    p_sim.add_argument("--count", type=int, default=1)
    p_sim.add_argument("--seed", type=int)
    p_sim.add_argument("--emit-ref-svset", action="store_true")
    p_sim.add_argument("--emit-alg-svset", action="store_true")
    p_sim.add_argument("--dump-spectrograms", dest="dump_spectrograms",
                       action="store_true")
    p_sim.set_defaults(func=cmd_simulate)

    p_loc = sub.add_parser("localize", help="run one localizer on a scene or WAV")
    p_loc.add_argument("--config")
    p_loc.add_argument("--scene")
    p_loc.add_argument("--audio")
    p_loc.add_argument("--out", required=True)
    p_loc.add_argument("--method")
    p_loc.add_argument("--sv-model", dest="sv_model")
    p_loc.add_argument("--sv-path", dest="sv_path")
    p_loc.add_argument("--seed", type=int)
    p_loc.set_defaults(func=cmd_localize)

    p_sweep = sub.add_parser("sweep", help="run a parameter sweep over scene batches")
    p_sweep.add_argument("--config")
    p_sweep.add_argument("--out", required=True)
    p_sweep.add_argument("--axis", choices=["snr_db", "t60_s", "n_sources",
                                            "source_alpha"])
    p_sweep.add_argument("--values")
    p_sweep.add_argument("--count", type=int, default=30)
    p_sweep.add_argument("--methods", default="shamans")
    p_sweep.add_argument("--sv-models", dest="sv_models", default="ref")
    p_sweep.add_argument("--seed", type=int)
    p_sweep.set_defaults(func=cmd_sweep)

    p_rep = sub.add_parser("report", help="aggregate a detail CSV into a summary")
    p_rep.add_argument("--detail", required=True)
    p_rep.add_argument("--out", required=True)
    p_rep.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (FileNotFoundError, OSError, FormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (SingularSystemError, EstimationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (ShapeError, SceneSpecError, ParameterError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INCOMPATIBLE


def main_entry() -> None:
    sys.exit(main())


if __name__ == "__main__":
    main_entry()
