"""Study drivers: each reads its inputs from disk and writes into a run directory."""
from __future__ import annotations

import logging
import math
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunConfig
from .constructor import (BlockSpec, count_local_extrema, default_block_spec, extract_knots, build_perfect_fit,
                          random_spline, sample_training_set)
from .experiments import (direction_dot_products, distances_to_reference, jitter_study, neb_batch,
                          pairwise_distances, run_sweep, summarize_fits)
from .neb import midpoint_probe, path_angles
from .net_core import Architecture, ContractError, loss_mse, grad_mse
from .records import (RunDir, load_target, load_weights, read_csv, read_json, sha256_file, target_document,
                      weights_document, write_csv, write_json)
from .spectra import eigenvalues, hessian
from .svgplot import Figure
from .symmetry import canonicalize

log = logging.getLogger(__name__)


class MissingInput(FileNotFoundError):
    pass


class TooManyDivergences(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# construct


def spec_from_dict(d: dict) -> tuple[BlockSpec, dict]:
    """Block spec plus output options from a construct spec file."""
    allowed = {"schema_version", "hidden_layers", "sawtooth_width", "spline_width", "amplitude",
               "spline", "spline_seed", "spline_segments", "points_per_segment", "include_right_endpoint"}
    unknown = set(d) - allowed
    if unknown:
        raise ContractError(f"unknown keys in construct spec: {sorted(unknown)}")
    base = default_block_spec()
    K = int(d.get("hidden_layers", base.hidden_layers))
    n1 = int(d.get("sawtooth_width", base.sawtooth_width))
    n2 = int(d.get("spline_width", base.spline_width))
    amp = float(d.get("amplitude", base.amplitude))
    if d.get("spline") is not None:
        from .constructor import PiecewiseLinear
        spline = PiecewiseLinear.from_dict(d["spline"])
    elif n2 > 0:
        segs = int(d.get("spline_segments", min(3, n2)))
        spline = random_spline(int(d.get("spline_seed", 2019)), segs, grid=max(2, n1) ** K if n1 else 32)
    else:
        spline = None
    opts = {"points_per_segment": int(d.get("points_per_segment", 10)),
            "include_right_endpoint": bool(d.get("include_right_endpoint", False))}
    return BlockSpec(K, n1, n2, spline, amp), opts


def construct(spec: BlockSpec, out, points_per_segment: int = 10, include_right_endpoint: bool = False) -> dict:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    arch, w = build_perfect_fit(spec)
    pl = extract_knots(arch, w, (0.0, 1.0))
    data = sample_training_set(pl, points_per_segment, include_right_endpoint)
    wc = canonicalize(arch, w)
    summary = {
        "param_count": arch.param_count,
        "segment_count": pl.segment_count,
        "local_extrema": count_local_extrema(pl),
        "training_points": len(data),
        "loss_raw": loss_mse(arch, w, data),
        "loss_canonical": loss_mse(arch, wc, data),
        "norm_raw": float(np.linalg.norm(w)),
        "norm_canonical": float(np.linalg.norm(wc)),
    }
    write_json(out / "target.json", target_document(pl, spec))
    write_json(out / "global_min.json", weights_document(arch, wc, canonical=True))
    write_json(out / "global_min_raw.json", weights_document(arch, w, canonical=False))
    lines = [f"{k}: {v!r}" if isinstance(v, float) else f"{k}: {v}" for k, v in summary.items()]
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    return summary


# ---------------------------------------------------------------------------
# shared loading


def _load_target(cfg: RunConfig):
    p = cfg.resolve(cfg.target)
    if not p.exists():
        raise MissingInput(f"target file not found: {p}")
    pl = load_target(p)
    data = sample_training_set(pl, cfg.sweep.points_per_segment, cfg.sweep.include_right_endpoint)
    return pl, data, sha256_file(p)


def _load_global(cfg: RunConfig):
    p = cfg.resolve(cfg.global_min)
    if not p.exists():
        raise MissingInput(f"global minimum file not found: {p}")
    return load_weights(p)


def _rundir(cfg: RunConfig, out=None) -> RunDir:
    return RunDir(Path(out) if out is not None else cfg.resolve(cfg.output))


def _update_manifest(rd: RunDir, cfg: RunConfig, command: str, target_hash: str, **extra) -> None:
    try:
        m = rd.read_manifest()
    except FileNotFoundError:
        m = {}
    commands = sorted(set(m.get("commands", [])) | {command})
    config = cfg.to_dict()
    config["output"] = "."
    for key in ("target", "global_min"):
        config[key] = str(cfg.resolve(config[key]).resolve())
    m.update({"config": config, "target_sha256": target_hash, "package_version": __version__,
              "commands": commands})
    m.update(extra)
    m.pop("manifest_version", None)
    rd.write_manifest(m)


def _fits_by_kind(rd: RunDir, kind: str | None = None):
    fits = rd.load_fits()
    return [f for f in fits if kind is None or f.optimizer.kind == kind]


# ---------------------------------------------------------------------------
# sweep


def sweep(cfg: RunConfig, out=None, jobs: int = 1) -> dict:
    pl, data, thash = _load_target(cfg)
    rd = _rundir(cfg, out).create()
    seed_ranges, excluded = {}, []
    n = cfg.sweep.fit_count
    for k, opt in enumerate(cfg.optimizers):
        base = cfg.sweep.base_seed + k * n
        res = run_sweep(pl, cfg.arch, opt, n, base, data, jobs)
        for rec in res.fits:
            rd.write_fit(rec)
        seed_ranges[opt.kind] = [base, base + n - 1]
        excluded += [{"seed": s, "optimizer": opt.kind, "error": msg} for s, msg in res.excluded]
    _update_manifest(rd, cfg, "sweep", thash, seed_ranges=seed_ranges, excluded=excluded)
    total = n * len(cfg.optimizers)
    if len(excluded) < total:
        report(rd, cfg)
    if len(excluded) > cfg.sweep.max_divergence_fraction * total:
        raise TooManyDivergences(f"{len(excluded)} of {total} fits diverged")
    return {"fits": total - len(excluded), "excluded": len(excluded)}


def write_sweep_stats(rd: RunDir, pl, fits, bins: int = 50) -> dict:
    rows = [(f.seed, f.optimizer.kind, f.final_loss) for f in fits]
    write_csv(rd.stats / "fits.csv", ["seed", "optimizer", "final_loss"], rows)
    out = {}
    for kind in sorted({f.optimizer.kind for f in fits}):
        group = [f for f in fits if f.optimizer.kind == kind]
        hist, tube = summarize_fits(group, pl, bins)
        write_csv(rd.stats / f"loss_histogram_{kind}.csv", ["lo", "hi", "count"], hist.rows())
        target = pl(tube.grid)
        write_csv(rd.stats / f"average_fit_{kind}.csv", ["x", "mean", "std", "target"],
                  zip(tube.grid, tube.mean, tube.std, target))
        best = min(group, key=lambda f: f.final_loss)
        from .net_core import forward_many
        write_csv(rd.stats / f"best_fit_{kind}.csv", ["x", "best", "target"],
                  zip(tube.grid, forward_many(best.arch, best.final_weights_raw, tube.grid), target))
        losses = np.array([f.final_loss for f in group])
        out[kind] = {"count": len(group), "median_loss": float(np.median(losses)),
                     "min_loss": float(losses.min()), "best_seed": best.seed,
                     "mean_tv": tube.total_variation(), "target_tv": pl.total_variation()}
    write_csv(rd.stats / "sweep_summary.csv",
              ["optimizer", "count", "median_loss", "min_loss", "best_seed", "mean_fit_tv", "target_tv"],
              [(k, v["count"], v["median_loss"], v["min_loss"], v["best_seed"], v["mean_tv"], v["target_tv"])
               for k, v in out.items()])
    return out


# ---------------------------------------------------------------------------
# symmetrize / geometry


def symmetrize(cfg: RunConfig, out=None) -> dict:
    pl, data, thash = _load_target(cfg)
    arch, w_global = _load_global(cfg)
    rd = _rundir(cfg, out)
    fits = _fits_by_kind(rd)
    if not fits:
        raise MissingInput(f"no fits in {rd.fits}")
    w_ref = canonicalize(arch, w_global)
    a = cfg.analysis
    rows, hist_rows = [], []
    populations = {"all": fits}
    for kind in sorted({f.optimizer.kind for f in fits}):
        populations[kind] = [f for f in fits if f.optimizer.kind == kind]
    summary = {}
    for name, group in populations.items():
        W = np.array([f.final_weights_canonical for f in group])
        pd = pairwise_distances(W, a.pair_count, a.seed, a.bins) if len(group) > 1 else None
        dr = distances_to_reference(W, w_ref, a.bins)
        dots = direction_dot_products(W, w_ref, a.pair_count, a.seed, a.bins)
        summary[name] = {
            "n": len(group),
            "pair_min": pd.min if pd else math.nan, "pair_max": pd.max if pd else math.nan,
            "ref_min": dr.min, "ref_max": dr.max, "dot_min": dots.min, "dot_max": dots.max,
        }
        rows.append((name, len(group), summary[name]["pair_min"], summary[name]["pair_max"],
                     dr.min, dr.max, dots.min, dots.max))
        for label, st in (("pairwise", pd), ("to_global", dr), ("direction_dot", dots)):
            if st is not None:
                hist_rows += [(name, label, lo, hi, c) for lo, hi, c in st.histogram.rows()]
    write_csv(rd.stats / "geometry_summary.csv",
              ["population", "n", "pair_min", "pair_max", "to_global_min", "to_global_max",
               "dot_min", "dot_max"], rows)
    write_csv(rd.stats / "geometry_histograms.csv", ["population", "quantity", "lo", "hi", "count"], hist_rows)
    write_csv(rd.stats / "distance_to_global.csv", ["seed", "optimizer", "distance", "canonical_norm"],
              [(f.seed, f.optimizer.kind, float(np.linalg.norm(f.final_weights_canonical - w_ref)),
                float(np.linalg.norm(f.final_weights_canonical))) for f in fits])
    _update_manifest(rd, cfg, "symmetrize", thash)
    return summary


# ---------------------------------------------------------------------------
# NEB


def neb(cfg: RunConfig, out=None, jobs: int = 1) -> list:
    pl, data, thash = _load_target(cfg)
    arch, w_global = _load_global(cfg)
    rd = _rundir(cfg, out)
    fits = _fits_by_kind(rd, cfg.neb.optimizer)[: cfg.neb.path_count]
    if not fits:
        raise MissingInput(f"no {cfg.neb.optimizer} fits in {rd.fits}")
    if cfg.neb.canonical_endpoints:
        w_ref = canonicalize(arch, w_global)
        ends = [f.final_weights_canonical for f in fits]
    else:
        w_ref, ends = w_global, [f.final_weights_raw for f in fits]
    summaries = neb_batch(arch, data, w_ref, ends, cfg.neb.config, [str(f.seed) for f in fits], jobs)
    rows, prof = [], []
    for f, s in zip(fits, summaries):
        rows.append((f.seed, s.ref_energy, s.fit_energy, f.final_loss, s.plateau, s.max_energy,
                     s.drop_location, s.converged, s.iterations, s.error or ""))
        if s.path is None:
            continue
        ang = path_angles(s.path)
        mids = midpoint_probe(arch, data, s.path)
        arc = s.path.arc_lengths
        angles = np.concatenate([[math.nan], ang.angles, [math.nan]])
        mids_ = np.concatenate([mids, [math.nan]])
        for i in range(arc.size):
            prof.append((f.seed, i, arc[i], s.path.energies[i], angles[i], mids_[i]))
        doc = {"schema_version": 1, "kind": "neb_path", "seed": f.seed, "config": cfg.neb.config.to_dict(),
               **s.path.to_dict(include_images=False),
               "angles": [repr(float(v)) for v in ang.angles],
               "midpoint_losses": [repr(float(v)) for v in mids]}
        write_json(rd.root / "neb" / f"{f.seed}.json", doc)
    write_csv(rd.stats / "neb_summary.csv",
              ["seed", "ref_energy", "fit_energy", "fit_loss", "plateau", "max_energy", "drop_location",
               "converged", "iterations", "error"], rows)
    write_csv(rd.stats / "neb_profiles.csv", ["seed", "image", "arc_length", "energy", "angle", "midpoint_loss"],
              prof)
    _update_manifest(rd, cfg, "neb", thash)
    return summaries


# ---------------------------------------------------------------------------
# spectra


def spectra(cfg: RunConfig, out=None) -> list[dict]:
    pl, data, thash = _load_target(cfg)
    arch, w_global = _load_global(cfg)
    rd = _rundir(cfg, out)
    points = [("global", canonicalize(arch, w_global))]
    fits = _fits_by_kind(rd, cfg.spectra.optimizer)[: cfg.spectra.fit_count]
    points += [(f"fit{f.seed}", f.final_weights_canonical) for f in fits]
    rows, out_ = [], []
    for label, w in points:
        H = hessian(arch, w, data, cfg.spectra.sharpness)
        spec = eigenvalues(H, {"label": label})
        (rd.root / "spectra").mkdir(parents=True, exist_ok=True)
        (rd.root / "spectra" / f"{label}.csv").write_text(spec.to_csv())
        gnorm = float(np.linalg.norm(grad_mse(arch, w, data)))
        row = (label, spec.eigenvalues[0], spec.eigenvalues[-1], spec.min_ratio(), spec.small_fraction(0.01),
               H.asymmetry, gnorm, float(np.trace(H.matrix)), float(np.sum(spec.eigenvalues)))
        rows.append(row)
        out_.append(dict(zip(["label", "min", "max", "min_ratio", "small_fraction", "asymmetry", "grad_norm",
                              "trace", "eig_sum"], row)))
    write_csv(rd.stats / "spectra_summary.csv",
              ["label", "min_eig", "max_eig", "min_over_max", "frac_below_1pct", "asymmetry", "grad_norm",
               "trace", "eig_sum"], rows)
    _update_manifest(rd, cfg, "spectra", thash)
    return out_


# ---------------------------------------------------------------------------
# jitter


def jitter(cfg: RunConfig, out=None, jobs: int = 1):
    pl, data, thash = _load_target(cfg)
    arch, w_global = _load_global(cfg)
    rd = _rundir(cfg, out).create()
    j = cfg.jitter
    opt = replace(cfg.optimizer(j.optimizer), steps=j.steps)
    w_ref = canonicalize(arch, w_global)
    res = jitter_study(arch, w_ref, data, j.trial_count, j.noise_range, opt, j.return_threshold, j.seed, jobs)
    write_csv(rd.stats / "jitter_trials.csv", ["index", "noise_norm", "final_loss", "returned", "diverged"],
              [(t.index, t.noise_norm, t.final_loss, t.returned, t.diverged) for t in res.trials])
    write_csv(rd.stats / "jitter_binned.csv", ["lo", "hi", "median_loss", "count"],
              zip(res.bin_edges[:-1], res.bin_edges[1:], res.bin_medians, res.bin_counts))
    lg = res.logistic
    write_csv(rd.stats / "jitter_logistic.csv", ["intercept", "slope", "degenerate", "iterations"],
              [(lg.intercept, lg.slope, lg.degenerate, lg.iterations)])
    rates = res.return_rates(5, j.noise_range)
    edges = np.linspace(j.noise_range[0], j.noise_range[1], 6)
    write_csv(rd.stats / "jitter_quintiles.csv", ["lo", "hi", "return_rate"], zip(edges[:-1], edges[1:], rates))
    _update_manifest(rd, cfg, "jitter", thash)
    return res


# ---------------------------------------------------------------------------
# report


def report(rd: RunDir | str | Path, cfg: RunConfig | None = None) -> list[str]:
    """Rebuild CSV statistics from stored fits and draw every available plot."""
    rd = rd if isinstance(rd, RunDir) else RunDir(rd)
    if not rd.root.exists():
        raise MissingInput(f"run directory {rd.root} does not exist")
    manifest = rd.read_manifest() if (rd.root / "manifest.json").exists() else None
    fits = rd.load_fits()
    if not fits and not (rd.stats.exists() and any(rd.stats.glob("*.csv"))):
        raise MissingInput(f"nothing to report in {rd.root}")
    rd.create()
    written = []
    if fits:
        if cfg is None:
            if manifest is None:
                raise MissingInput("fits present but no manifest to locate the target")
            from .config import RunConfig as _RC
            cfg = _RC.from_dict(manifest["config"], base_dir=rd.root)
        pl, _, _ = _load_target(cfg)
        write_sweep_stats(rd, pl, fits, cfg.analysis.bins)
        written.append("stats")
    try:
        written += _plots(rd)
    except Exception as exc:  # plots never gate the science outputs
        log.warning("plotting failed: %s", exc)
    return written


def _col(rows, header, name, conv=float):
    i = header.index(name)
    return np.array([conv(r[i]) for r in rows])


def _plots(rd: RunDir) -> list[str]:
    made = []
    st = rd.stats
    for p in sorted(st.glob("average_fit_*.csv")):
        kind = p.stem[len("average_fit_"):]
        h, rows = read_csv(p)
        x, m, s, t = (_col(rows, h, c) for c in ("x", "mean", "std", "target"))
        fig = Figure(f"average fit ({kind})", xlabel="x", ylabel="output")
        fig.line(x, t, "#1f77b4", 1.0, "target").band(x, m - s, m + s, "#2ca02c").line(x, m, "#2ca02c", 2, "mean fit")
        fig.save(rd.plots / f"average_fit_{kind}.svg")
        made.append(f"average_fit_{kind}.svg")
    for p in sorted(st.glob("best_fit_*.csv")):
        kind = p.stem[len("best_fit_"):]
        h, rows = read_csv(p)
        Figure(f"best fit ({kind})", xlabel="x").line(_col(rows, h, "x"), _col(rows, h, "target"), None, 1,
                                                      "target").line(
            _col(rows, h, "x"), _col(rows, h, "best"), "#2ca02c", 1.5, "best fit").save(rd.plots / f"best_fit_{kind}.svg")
        made.append(f"best_fit_{kind}.svg")
    hists = sorted(st.glob("loss_histogram_*.csv"))
    if hists:
        fig = Figure("final loss", xlabel="mse", ylabel="count")
        for p in hists:
            h, rows = read_csv(p)
            edges = np.concatenate([_col(rows, h, "lo"), _col(rows, h, "hi")[-1:]])
            fig.hist(edges, _col(rows, h, "count"), label=p.stem[len("loss_histogram_"):])
        fig.save(rd.plots / "loss_histograms.svg")
        made.append("loss_histograms.svg")
    if (st / "geometry_histograms.csv").exists():
        h, rows = read_csv(st / "geometry_histograms.csv")
        for q in ("pairwise", "to_global", "direction_dot"):
            fig = Figure(q.replace("_", " "), xlabel="value", ylabel="count")
            for pop in sorted({r[0] for r in rows if r[0] != "all"}):
                sub = [r for r in rows if r[0] == pop and r[1] == q]
                if sub:
                    edges = np.concatenate([_col(sub, h, "lo"), _col(sub, h, "hi")[-1:]])
                    fig.hist(edges, _col(sub, h, "count"), label=pop)
            fig.save(rd.plots / f"{q}.svg")
            made.append(f"{q}.svg")
    if (st / "neb_profiles.csv").exists():
        h, rows = read_csv(st / "neb_profiles.csv")
        if rows:
            fig = Figure("NEB energy profiles", xlabel="arc length from global minimum", ylabel="mse")
            fig_a = Figure("angles between successive differences", xlabel="arc length", ylabel="radians")
            for seed in sorted({r[0] for r in rows}, key=int):
                sub = [r for r in rows if r[0] == seed]
                fig.line(_col(sub, h, "arc_length"), _col(sub, h, "energy"), None, 1.0)
                fig_a.line(_col(sub, h, "arc_length"), _col(sub, h, "angle"), None, 1.0)
            fig.save(rd.plots / "neb_profiles.svg")
            fig_a.save(rd.plots / "neb_angles.svg")
            made += ["neb_profiles.svg", "neb_angles.svg"]
    if (st / "jitter_trials.csv").exists():
        h, rows = read_csv(st / "jitter_trials.csv")
        x, y = _col(rows, h, "noise_norm"), _col(rows, h, "final_loss")
        fig = Figure("jitter: final loss vs noise norm", xlabel="noise norm", ylabel="final mse", logy=True)
        fig.scatter(x, np.maximum(y, 1e-32), "#1f77b4")
        if (st / "jitter_binned.csv").exists():
            hb, rb = read_csv(st / "jitter_binned.csv")
            fig.line(0.5 * (_col(rb, hb, "lo") + _col(rb, hb, "hi")), _col(rb, hb, "median_loss"), "#d62728", 2,
                     "binned median")
        fig.save(rd.plots / "jitter.svg")
        made.append("jitter.svg")
    spec_dir = rd.root / "spectra"
    if spec_dir.exists():
        fig = Figure("Hessian eigenvalues", xlabel="index", ylabel="eigenvalue")
        for p in sorted(spec_dir.glob("*.csv")):
            h, rows = read_csv(p)
            fig.line(_col(rows, h, "index"), _col(rows, h, "eigenvalue"), None, 1.0, p.stem if p.stem == "global" else None)
        fig.save(rd.plots / "eigenvalues.svg")
        made.append("eigenvalues.svg")
    return made
