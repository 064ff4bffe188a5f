"""Command line interface.

Subcommands mirror the pipeline stages so any step can run standalone on
saved volumes; `pipeline` chains them from one config file. Exit codes:
0 success, 1 stage failure, 2 configuration error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np
import yaml

from . import fourier
from .bfr import pdf, vsharp
from .config import default_config_dict, validate_config
from .errors import ConfigError, MsmvQsmError
from .fieldmap import fit_field, fit_r2star
from .inversion import InversionInputs, MediParams, build_gradient_mask, medi_invert
from .io import load_volume, save_volume
from .metrics import MetricsReport, bland_altman, roi_regression, shadow_score, wilcoxon_signed_rank
from .msmv import MsmvParams, msmv_filter
from .phantom import build_phantom, forward_field, synthesize_mgre
from .pipeline import report_to_csv, report_to_text, run_pipeline
from .volume import MaskVolume, ScalarVolume

EXIT_OK = 0
EXIT_STAGE_FAILURE = 1
EXIT_CONFIG_ERROR = 2


def _out_path(args, name):
    os.makedirs(args.out, exist_ok=True)
    return os.path.join(args.out, name)


def cmd_simulate(args):
    cfg = validate_config(args.config) if args.config else validate_config(default_config_dict())
    seed = args.seed if args.seed is not None else cfg.seed
    ph = build_phantom(cfg.phantom_spec)
    fields = forward_field(ph.chi_true, ph.masks["brain"], cfg.acquisition)
    mgre = synthesize_mgre(ph.A, fields["b_total"], ph.r2star_true, cfg.acquisition, seed)
    save_volume(ph.chi_true, _out_path(args, "chi_true.nii"))
    for name, mask in ph.masks.items():
        save_volume(mask, _out_path(args, f"mask_{name}.nii"))
    save_volume(ph.A, _out_path(args, "magnitude_true.nii"))
    save_volume(ph.r2star_true, _out_path(args, "r2star_true.nii"))
    for name in ("b_total", "b_tissue", "b_background"):
        save_volume(fields[name], _out_path(args, f"{name}.nii"))
    save_volume(mgre, _out_path(args, "mgre.nii"))
    print(f"simulate: wrote phantom + signal to {args.out}")
    return EXIT_OK


def cmd_fit(args):
    mgre = load_volume(args.mgre)
    mask = load_volume(args.mask)
    fit = fit_field(mgre, mask)
    r2s = fit_r2star(mgre, mask)
    save_volume(fit.b_total, _out_path(args, "b_total_est.nii"))
    save_volume(fit.W, _out_path(args, "weight.nii"))
    save_volume(fit.residual, _out_path(args, "fit_residual.nii"))
    save_volume(r2s.r2star, _out_path(args, "r2star_est.nii"))
    with open(_out_path(args, "fit_info.json"), "w") as f:
        json.dump({"r2star_method": r2s.method, "effective_snr": fit.effective_snr}, f, indent=2)
    print(f"fit: wrote field/weight/R2* estimates to {args.out}")
    return EXIT_OK


def cmd_bfr(args):
    field = load_volume(args.field)
    mask = load_volume(args.mask)
    if args.bfr == "external":
        if not args.bfr_input:
            print("bfr: --bfr-input PATH is required for method 'external'", file=sys.stderr)
            return EXIT_CONFIG_ERROR
        res_vol = load_volume(args.bfr_input)
        save_volume(res_vol, _out_path(args, "b_local.nii"))
        save_volume(mask, _out_path(args, "mask_out.nii"))
        print("bfr: copied external local field")
        return EXIT_OK
    weight = load_volume(args.weight) if args.weight else ScalarVolume(
        mask.grid, np.ones(mask.grid.dims))
    if args.bfr == "pdf":
        res = pdf(field, mask, weight, iters=args.iters)
    else:
        res = vsharp(field, mask, r_max_mm=args.rmax, r_min_mm=args.rmin,
                     n_radii=args.nradii, tsvd_threshold=args.tsvd)
    save_volume(res.b_local, _out_path(args, "b_local.nii"))
    save_volume(res.mask_out, _out_path(args, "mask_out.nii"))
    print(f"bfr: {args.bfr} done, mask_out {res.mask_out.n_true} voxels")
    return EXIT_OK


def cmd_msmv(args):
    field = load_volume(args.field)
    mask = load_volume(args.mask)
    r2star = load_volume(args.r2star)
    p = MsmvParams(r1_mm=args.r1, t_min_hz=args.tmin, i_max=args.imax,
                   alpha=args.alpha, eps_mm=args.eps)
    b_msmv, trace = msmv_filter(field, mask, r2star, p, args.b0)
    save_volume(b_msmv, _out_path(args, "b_msmv.nii"))
    with open(_out_path(args, "trace.json"), "w") as f:
        json.dump({
            "threshold_hz": trace.threshold_hz,
            "mask_sizes": list(trace.mask_sizes),
            "iterations": trace.iterations,
            "vessel_size": trace.vessel_size,
            "r2_mm": trace.r2_mm,
        }, f, indent=2)
        f.write("\n")
    print(f"msmv: threshold {trace.threshold_hz:.3f} Hz, "
          f"iterations {trace.iterations}, flagged {list(trace.mask_sizes)}")
    return EXIT_OK


def cmd_invert(args):
    field = load_volume(args.field)
    mask = load_volume(args.mask)
    weight = load_volume(args.weight)
    magnitude = load_volume(args.magnitude)
    m_csf = load_volume(args.csf) if args.csf else MaskVolume(
        mask.grid, np.zeros(mask.grid.dims, dtype=bool))
    m_grad = build_gradient_mask(magnitude, mask, args.edge_fraction)
    lambda2 = args.lambda2 if m_csf.data.any() else 0.0
    inputs = InversionInputs(field=field, w=weight, mask=mask, m_grad=m_grad,
                             m_csf=m_csf, b0_tesla=args.b0, dte_s=args.dte,
                             snr_scale=args.snr_scale)
    params = MediParams(variant=args.variant, lambda1=args.lambda1, lambda2=lambda2,
                        r1_mm=args.r1, outer_iters=args.outer_iters,
                        cg_iters=args.cg_iters, edge_fraction=args.edge_fraction)
    chi, diagnostics = medi_invert(inputs, params)
    save_volume(chi, _out_path(args, "chi.nii"))
    rows = ["iter,cost_data,cost_tv,cost_csf,cost_total,step_norm,step_scale,cg_iters"]
    for d in diagnostics:
        rows.append(",".join(str(d[k]) for k in (
            "iter", "cost_data", "cost_tv", "cost_csf", "cost_total",
            "step_norm", "step_scale", "cg_iters")))
    with open(_out_path(args, "diagnostics.csv"), "w") as f:
        f.write("\n".join(rows) + "\n")
    print(f"invert: {args.variant} finished in {len(diagnostics)} outer iterations")
    return EXIT_OK


def cmd_metrics(args):
    with open(args.manifest) as f:
        man = yaml.safe_load(f)
    report = MetricsReport()
    gray = load_volume(man["gray_mask"])
    rois = [load_volume(p) for p in man.get("roi_masks", [])]
    truth = load_volume(man["truth"]) if "truth" in man else None
    chis = {entry["name"]: load_volume(entry["chi"]) for entry in man["methods"]}
    for name, chi in chis.items():
        report.shadow_scores[name] = shadow_score(chi, gray)
        if truth is not None and len(rois) >= 3:
            slope, intercept, r = roi_regression(chi, truth, rois)
            report.regressions.append((f"{name} vs truth", slope, intercept, r, len(rois)))
    names = sorted(chis)
    sample_masks = rois + [gray]
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            means_a = [chis[a].data[m.data].mean() for m in sample_masks]
            means_b = [chis[b].data[m.data].mean() for m in sample_masks]
            if len(means_a) >= 2:
                bias, lo, hi = bland_altman(means_a, means_b)
                report.bland_altman.append((f"{a} vs {b}", bias, lo, hi, len(means_a)))
            try:
                stat, p = wilcoxon_signed_rank(means_a, means_b)
                report.wilcoxon.append((f"{a} vs {b}", stat, p, len(means_a)))
            except ValueError:
                pass
    with open(_out_path(args, "report.csv"), "w") as f:
        f.write(report_to_csv(report))
    with open(_out_path(args, "summary.txt"), "w") as f:
        f.write(report_to_text(report))
    print(report_to_text(report))
    return EXIT_OK


def cmd_pipeline(args):
    cfg = validate_config(args.config)
    if args.out:
        cfg.output_dir = args.out
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.raw["seed"] = args.seed
    if args.threads is not None:
        cfg.threads = args.threads
    manifest = run_pipeline(cfg)
    print(f"pipeline: {'ok' if manifest.success else 'FAILED'}; "
          f"manifest at {os.path.join(cfg.output_dir, 'manifest.json')}")
    return EXIT_OK if manifest.success else EXIT_STAGE_FAILURE


def cmd_validate(args):
    try:
        validate_config(args.config)
    except ConfigError as e:
        for v in e.violations:
            print(f"violation: {v}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    print("config ok")
    return EXIT_OK


def cmd_init_config(args):
    text = yaml.safe_dump(default_config_dict(), sort_keys=False)
    if args.out == "-":
        print(text)
    else:
        with open(args.out, "w") as f:
            f.write(text)
        print(f"wrote default config to {args.out}")
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="msmvqsm",
                                 description="Whole-brain QSM with boundary-preserving "
                                             "residual field filtering")
    ap.add_argument("--threads", type=int, default=None, help="FFT worker count (-1 = all)")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="build the phantom and synthesize the echo data")
    p.add_argument("--config", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("fit", help="estimate field, weight and R2* from echo data")
    p.add_argument("--mgre", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("bfr", help="background field removal")
    p.add_argument("--field", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--weight", default=None)
    p.add_argument("--bfr", choices=["pdf", "vsharp", "external"], default="pdf")
    p.add_argument("--bfr-input", dest="bfr_input", default=None,
                   help="precomputed local field for --bfr external")
    p.add_argument("--iters", type=int, default=100)
    p.add_argument("--rmax", type=float, default=5.0)
    p.add_argument("--rmin", type=float, default=1.0)
    p.add_argument("--nradii", type=int, default=5)
    p.add_argument("--tsvd", type=float, default=0.05)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bfr)

    p = sub.add_parser("msmv", help="boundary residual field filtering")
    p.add_argument("--field", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--r2star", required=True)
    p.add_argument("--r1", type=float, default=5.0)
    p.add_argument("--tmin", type=float, default=0.3)
    p.add_argument("--imax", type=int, default=5)
    p.add_argument("--alpha", type=float, default=1e-6)
    p.add_argument("--eps", type=float, default=0.05)
    p.add_argument("--b0", type=float, default=3.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_msmv)

    p = sub.add_parser("invert", help="regularized dipole inversion")
    p.add_argument("--variant", choices=["medi", "medi-smv", "medi-msmv"], default="medi")
    p.add_argument("--field", required=True)
    p.add_argument("--mask", required=True)
    p.add_argument("--weight", required=True)
    p.add_argument("--magnitude", required=True)
    p.add_argument("--csf", default=None)
    p.add_argument("--lambda1", type=float, default=100.0)
    p.add_argument("--lambda2", type=float, default=100.0)
    p.add_argument("--r1", type=float, default=5.0)
    p.add_argument("--outer-iters", type=int, default=10)
    p.add_argument("--cg-iters", type=int, default=100)
    p.add_argument("--edge-fraction", type=float, default=0.3)
    p.add_argument("--b0", type=float, default=3.0)
    p.add_argument("--dte", type=float, default=2.6e-3)
    p.add_argument("--snr-scale", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_invert)

    p = sub.add_parser("metrics", help="score reconstructions listed in a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("pipeline", help="run the full experiment from a config file")
    p.add_argument("--config", required=True)
    p.add_argument("--out", default=None)
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_pipeline)

    p = sub.add_parser("validate", help="validate a config file")
    p.add_argument("--config", required=True)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("init-config", help="write the default config")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_init_config)
    return ap


def main(argv=None):
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.threads is not None:
        fourier.set_fft_workers(args.threads)
    try:
        return args.func(args)
    except ConfigError as e:
        for v in e.violations:
            print(f"violation: {v}", file=sys.stderr)
        return EXIT_CONFIG_ERROR
    except MsmvQsmError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_STAGE_FAILURE


if __name__ == "__main__":
    sys.exit(main())
