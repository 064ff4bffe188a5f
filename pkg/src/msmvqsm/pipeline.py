"""End-to-end experiment driver: simulate, fit, remove background, boundary
filter, invert, score - with every intermediate volume persisted and a
manifest of content hashes for reproducibility checks."""

from __future__ import annotations

import csv
import hashlib
import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import fourier
from .bfr import BfrResult, pdf, vsharp
from .config import PipelineConfig
from .errors import MsmvQsmError
from .fieldmap import fit_field, fit_r2star
from .inversion import InversionInputs, MediParams, build_gradient_mask, medi_invert
from .io import load_volume, save_volume
from .metrics import MetricsReport, bland_altman, roi_regression, shadow_score, wilcoxon_signed_rank
from .msmv import MsmvParams, initial_filter, msmv_filter
from .phantom import build_phantom, forward_field, roi_masks_from_labels, synthesize_mgre
from .volume import MaskVolume, ScalarVolume, erode_mask

__all__ = ["RunManifest", "run_pipeline"]

VERSION = "0.1.0"


@dataclass
class RunManifest:
    version: str
    config_hash: str
    seed: int
    stages: list = field(default_factory=list)
    success: bool = False

    def add_stage(self, name, params, outputs, wall_time_s, error=None):
        self.stages.append({
            "name": name,
            "params_hash": _hash_obj(params),
            "outputs": outputs,
            "wall_time_s": wall_time_s,
            "error": error,
        })

    def to_dict(self):
        return {
            "version": self.version,
            "config_hash": self.config_hash,
            "seed": self.seed,
            "success": self.success,
            "stages": self.stages,
        }


def _hash_obj(obj):
    return hashlib.sha256(json.dumps(obj, sort_keys=True, default=str).encode()).hexdigest()


def _hash_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for block in iter(lambda: f.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


class _Stage:
    """Context collecting the outputs of one pipeline stage."""

    def __init__(self, manifest, name, params, out_dir):
        self.manifest = manifest
        self.name = name
        self.params = params
        self.out_dir = out_dir
        self.outputs = []
        os.makedirs(out_dir, exist_ok=True)
        self.t0 = time.time()

    def save(self, vol, filename):
        path = os.path.join(self.out_dir, filename)
        save_volume(vol, path)
        self.outputs.append({"path": path, "sha256": _hash_file(path)})
        sidecar = os.path.splitext(path)[0] + ".json"
        if os.path.exists(sidecar):
            self.outputs.append({"path": sidecar, "sha256": _hash_file(sidecar)})
        return path

    def write_text(self, text, filename):
        path = os.path.join(self.out_dir, filename)
        with open(path, "w") as f:
            f.write(text)
        self.outputs.append({"path": path, "sha256": _hash_file(path)})
        return path

    def done(self, error=None):
        self.manifest.add_stage(self.name, self.params, self.outputs,
                                round(time.time() - self.t0, 3), error)


def _combo_name(bfr_method, variant):
    return f"{bfr_method}+{variant}"


def run_pipeline(cfg: PipelineConfig) -> RunManifest:
    """Execute every configured (background-removal x inversion) combination.

    Writes all intermediates below cfg.output_dir and returns the manifest
    (also saved as manifest.json). A stage failure aborts the stages that
    depend on it and is recorded in the manifest.
    """
    fourier.set_fft_workers(cfg.threads)
    out = cfg.output_dir
    os.makedirs(out, exist_ok=True)
    manifest = RunManifest(VERSION, _hash_obj(cfg.raw), cfg.seed)

    try:
        # --- simulate -----------------------------------------------------
        st = _Stage(manifest, "simulate", {"seed": cfg.seed, "acq": vars(cfg.acquisition)},
                    os.path.join(out, "sim"))
        ph = build_phantom(cfg.phantom_spec)
        fields = forward_field(ph.chi_true, ph.masks["brain"], cfg.acquisition)
        mgre = synthesize_mgre(ph.A, fields["b_total"], ph.r2star_true,
                               cfg.acquisition, cfg.seed)
        st.save(ph.chi_true, "chi_true.nii")
        for name, mask in ph.masks.items():
            st.save(mask, f"mask_{name}.nii")
        st.save(ph.A, "magnitude_true.nii")
        st.save(ph.r2star_true, "r2star_true.nii")
        for name in ("b_total", "b_tissue", "b_background"):
            st.save(fields[name], f"{name}.nii")
        st.save(mgre, "mgre.nii")
        st.done()

        # --- field estimation ----------------------------------------------
        st = _Stage(manifest, "fit", {}, os.path.join(out, "fit"))
        brain = ph.masks["brain"]
        fit = fit_field(mgre, brain)
        r2s = fit_r2star(mgre, brain)
        st.save(fit.b_total, "b_total_est.nii")
        st.save(fit.W, "weight.nii")
        st.save(fit.residual, "fit_residual.nii")
        st.save(r2s.r2star, "r2star_est.nii")
        st.write_text(json.dumps({"r2star_method": r2s.method}, indent=2) + "\n",
                      "provenance.json")
        st.done()

        magnitude = ScalarVolume(brain.grid, np.abs(mgre.data).sum(axis=-1))

        # --- background removal ---------------------------------------------
        bfr_results = {}
        for entry in cfg.bfr_entries:
            method = entry["method"]
            st = _Stage(manifest, f"bfr-{method}", entry, os.path.join(out, "bfr", method))
            if method == "pdf":
                res = pdf(fit.b_total, brain, fit.W, iters=entry.get("iters", 100),
                          tol=entry.get("tol", 1e-6))
            elif method == "vsharp":
                res = vsharp(fit.b_total, brain,
                             r_max_mm=entry.get("r_max_mm", 5.0),
                             r_min_mm=entry.get("r_min_mm", 1.0),
                             n_radii=entry.get("n_radii", 5),
                             tsvd_threshold=entry.get("tsvd_threshold", 0.05))
            else:  # external
                vol = load_volume(entry["path"])
                res = BfrResult(vol, brain, "external", {"path": entry["path"]})
            bfr_results[method] = res
            st.save(res.b_local, "b_local.nii")
            st.save(res.mask_out, "mask_out.nii")
            st.done()

        # --- boundary filtering (mSMV) ---------------------------------------
        msmv_fields = {}
        msmv_p = MsmvParams(**cfg.msmv_params)
        if cfg.msmv_enabled:
            for method, res in bfr_results.items():
                if not any(b == method and v == "medi-msmv" for b, v in cfg.pairs):
                    continue
                st = _Stage(manifest, f"msmv-{method}", cfg.msmv_params,
                            os.path.join(out, "msmv", method))
                b_msmv, trace = msmv_filter(res.b_local, res.mask_out, r2s.r2star,
                                            msmv_p, cfg.acquisition.b0_tesla)
                msmv_fields[method] = b_msmv
                st.save(b_msmv, "b_msmv.nii")
                st.write_text(json.dumps({
                    "threshold_hz": trace.threshold_hz,
                    "mask_sizes": list(trace.mask_sizes),
                    "iterations": trace.iterations,
                    "vessel_size": trace.vessel_size,
                    "r2_mm": trace.r2_mm,
                }, indent=2) + "\n", "trace.json")
                st.done()

        # --- dipole inversion --------------------------------------------------
        inv = cfg.inversion
        m_grad = build_gradient_mask(magnitude, brain, inv["edge_fraction"])
        chi_maps = {}
        for bfr_method, variant in cfg.pairs:
            name = _combo_name(bfr_method, variant)
            st = _Stage(manifest, f"invert-{name}", {**inv, "variant": variant},
                        os.path.join(out, "inv", name.replace("+", "_")))
            res = bfr_results[bfr_method]
            if variant == "medi":
                field_v, mask_v = res.b_local, res.mask_out
            elif variant == "medi-msmv":
                field_v, mask_v = msmv_fields[bfr_method], res.mask_out
            else:  # medi-smv: large-kernel high pass on the eroded mask
                mask_v = erode_mask(res.mask_out, inv["r1_mm"])
                b_l0 = initial_filter(res.b_local, res.mask_out, msmv_p)
                field_v = ScalarVolume(brain.grid, b_l0.data * mask_v.data, "Hz")
            w_v = ScalarVolume(brain.grid, fit.W.data * mask_v.data)
            inputs = InversionInputs(
                field=field_v, w=w_v, mask=mask_v, m_grad=m_grad,
                m_csf=ph.masks["CSF"], b0_tesla=cfg.acquisition.b0_tesla,
                dte_s=cfg.acquisition.dte_s, snr_scale=fit.effective_snr,
            )
            params = MediParams(
                variant=variant, lambda1=inv["lambda1"], lambda2=inv["lambda2"],
                r1_mm=inv["r1_mm"], outer_iters=inv["outer_iters"],
                cg_iters=inv["cg_iters"], edge_fraction=inv["edge_fraction"],
            )
            chi, diagnostics = medi_invert(inputs, params)
            chi_maps[name] = chi
            st.save(chi, "chi.nii")
            rows = ["iter,cost_data,cost_tv,cost_csf,cost_total,step_norm,step_scale,cg_iters"]
            for d in diagnostics:
                rows.append(",".join(str(d[k]) for k in (
                    "iter", "cost_data", "cost_tv", "cost_csf", "cost_total",
                    "step_norm", "step_scale", "cg_iters")))
            st.write_text("\n".join(rows) + "\n", "diagnostics.csv")
            st.done()

        # --- metrics ------------------------------------------------------------
        st = _Stage(manifest, "metrics", {"roi_region_indices": list(cfg.roi_region_indices)},
                    os.path.join(out, "metrics"))
        report = compute_report(chi_maps, ph, cfg.roi_region_indices)
        st.write_text(report_to_csv(report), "report.csv")
        st.write_text(report_to_text(report), "summary.txt")
        st.done()

        manifest.success = True
    except MsmvQsmError as e:
        st.done(error=str(e))
    finally:
        with open(os.path.join(out, "manifest.json"), "w") as f:
            json.dump(manifest.to_dict(), f, indent=2)
            f.write("\n")
    return manifest


def compute_report(chi_maps: dict, ph, roi_region_indices) -> MetricsReport:
    """Shadow scores, accuracy regressions vs truth, and pairwise agreement."""
    report = MetricsReport()
    grid = ph.chi_true.grid
    rois = roi_masks_from_labels(ph.labels, grid, roi_region_indices)
    # agreement samples: nuclei plus the labeled structures (n >= 5 pairs)
    agreement_masks = rois + [ph.masks[k] for k in ("gray", "vein", "hemorrhage")
                              if ph.masks[k].data.any()]

    for name, chi in chi_maps.items():
        report.shadow_scores[name] = shadow_score(chi, ph.masks["gray"])
        slope, intercept, r = roi_regression(chi, ph.chi_true, rois)
        report.regressions.append((f"{name} vs truth", slope, intercept, r, len(rois)))

    names = sorted(chi_maps)
    for i, a in enumerate(names):
        for b in names[i + 1:]:
            means_a = [chi_maps[a].data[m.data].mean() for m in agreement_masks]
            means_b = [chi_maps[b].data[m.data].mean() for m in agreement_masks]
            bias, lo, hi = bland_altman(means_a, means_b)
            report.bland_altman.append((f"{a} vs {b}", bias, lo, hi, len(means_a)))
            try:
                stat, p = wilcoxon_signed_rank(means_a, means_b)
                report.wilcoxon.append((f"{a} vs {b}", stat, p, len(means_a)))
            except ValueError:
                pass  # identical maps or too few informative pairs
    return report


def report_to_csv(report: MetricsReport) -> str:
    lines = ["metric,subject,v1,v2,v3,v4"]
    for name, score in sorted(report.shadow_scores.items()):
        lines.append(f"shadow_score_ppm2,{name},{score:.8e},,,")
    for pair, slope, intercept, r, n in report.regressions:
        lines.append(f"roi_regression,{pair},{slope:.6f},{intercept:.6f},{r:.6f},{n}")
    for pair, bias, lo, hi, n in report.bland_altman:
        lines.append(f"bland_altman_ppm,{pair},{bias:.6f},{lo:.6f},{hi:.6f},{n}")
    for pair, stat, p, n in report.wilcoxon:
        lines.append(f"wilcoxon,{pair},{stat:.4f},{p:.6g},{n},")
    return "\n".join(lines) + "\n"


def report_to_text(report: MetricsReport) -> str:
    out = ["Reconstruction quality summary", "=" * 30, ""]
    if report.shadow_scores:
        out.append("Gray-matter susceptibility variance (shadow score, ppm^2):")
        for name, score in sorted(report.shadow_scores.items(), key=lambda kv: kv[1]):
            out.append(f"  {name:24s} {score:.3e}")
        out.append("")
    if report.regressions:
        out.append("ROI-mean linear regression against ground truth:")
        for pair, slope, intercept, r, n in report.regressions:
            out.append(f"  {pair:34s} slope {slope:6.3f}  intercept {intercept:8.4f}  r {r:.4f}  (n={n})")
        out.append("")
    if report.bland_altman:
        out.append("Agreement between reconstructions (bias [LoA] in ppm):")
        for pair, bias, lo, hi, n in report.bland_altman:
            out.append(f"  {pair:34s} {bias:+.4f}  [{lo:+.4f}, {hi:+.4f}]  (n={n})")
        out.append("")
    if report.wilcoxon:
        out.append("Wilcoxon signed-rank on paired region means:")
        for pair, stat, p, n in report.wilcoxon:
            out.append(f"  {pair:34s} W+ {stat:7.2f}  p {p:.4g}  (n={n})")
        out.append("")
    return "\n".join(out)
