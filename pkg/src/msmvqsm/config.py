"""Pipeline configuration: YAML schema, exhaustive validation, defaults."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import yaml

from .errors import ConfigError, PhantomSpecError
from .inversion import VARIANTS
from .phantom import AcquisitionParams, PhantomSpec, Region, default_phantom_spec
from .volume import VoxelGrid

__all__ = ["PipelineConfig", "validate_config", "load_config", "default_config_dict"]

BFR_METHODS = ("pdf", "vsharp", "external")


@dataclass
class PipelineConfig:
    raw: dict
    seed: int
    output_dir: str
    threads: int
    phantom_spec: PhantomSpec
    acquisition: AcquisitionParams
    bfr_entries: list            # list of dicts with "method" plus parameters
    msmv_enabled: bool
    msmv_params: dict
    inversion: dict              # shared MediParams fields + "variants"
    pairs: list                  # (bfr_method, variant) combinations to run
    roi_region_indices: tuple


def default_config_dict():
    return {
        "seed": 7,
        "output_dir": "runs/default",
        "threads": 1,
        "phantom": {"dims": [64, 64, 64], "spacing_mm": [1.0, 1.0, 1.0]},
        "acquisition": {
            "b0_tesla": 3.0,
            "te1_s": 2.6e-3,
            "dte_s": 2.6e-3,
            "n_echoes": 11,
            "snr": 50.0,
        },
        "bfr": [
            {"method": "pdf", "iters": 100},
            {
                "method": "vsharp",
                "r_max_mm": 5.0,
                "r_min_mm": 1.0,
                "n_radii": 5,
                "tsvd_threshold": 0.05,
            },
        ],
        "msmv": {
            "enabled": True,
            "r1_mm": 5.0,
            "t_min_hz": 0.3,
            "i_max": 5,
            "alpha": 1e-6,
            "eps_mm": 0.05,
        },
        "inversion": {
            "variants": ["medi", "medi-msmv"],
            "lambda1": 100.0,
            "lambda2": 100.0,
            "r1_mm": 5.0,
            "outer_iters": 10,
            "cg_iters": 100,
            "edge_fraction": 0.3,
        },
        "pairs": [
            ["pdf", "medi"],
            ["pdf", "medi-msmv"],
            ["vsharp", "medi"],
            ["vsharp", "medi-msmv"],
        ],
        "metrics": {"roi_region_indices": [6, 7, 8, 9]},
    }


def _build_phantom_spec(section, errors):
    dims = section.get("dims", [64, 64, 64])
    spacing = section.get("spacing_mm", [1.0, 1.0, 1.0])
    try:
        grid = VoxelGrid(tuple(dims), tuple(spacing))
    except (ValueError, TypeError) as e:
        errors.append(f"phantom: bad grid: {e}")
        return None
    if "regions" not in section:
        spec = default_phantom_spec(tuple(dims), tuple(spacing))
        if "chi_background_ppm" in section:
            spec = PhantomSpec(spec.grid, spec.regions, float(section["chi_background_ppm"]),
                               spec.a_map, spec.r2star_map)
        return spec
    regions = []
    for i, r in enumerate(section["regions"]):
        try:
            regions.append(Region(
                shape=r["shape"],
                center_mm=tuple(r["center_mm"]),
                chi_ppm=float(r["chi_ppm"]),
                label=r["label"],
                semi_axes_mm=tuple(r["semi_axes_mm"]) if "semi_axes_mm" in r else None,
                radius_mm=r.get("radius_mm"),
                axis=r.get("axis", "z"),
                half_length_mm=r.get("half_length_mm"),
            ))
        except (KeyError, ValueError, TypeError, PhantomSpecError) as e:
            errors.append(f"phantom.regions[{i}]: {e}")
    if not regions:
        errors.append("phantom.regions: empty region list")
        return None
    return PhantomSpec(grid, tuple(regions),
                       float(section.get("chi_background_ppm", 9.4)))


def validate_config(source) -> PipelineConfig:
    """Parse and validate a config mapping or YAML path.

    Collects every violation before failing (no fail-fast); raises
    ConfigError carrying the full list.
    """
    if isinstance(source, dict):
        raw = copy.deepcopy(source)
    else:
        with open(source) as f:
            raw = yaml.safe_load(f)
        if not isinstance(raw, dict):
            raise ConfigError([f"{source}: config must be a mapping"])

    errors = []
    seed = raw.get("seed", 0)
    if not isinstance(seed, int):
        errors.append("seed: must be an integer")
        seed = 0
    output_dir = raw.get("output_dir", "runs/out")
    threads = raw.get("threads", 1)
    if not isinstance(threads, int) or (threads < 1 and threads != -1):
        errors.append("threads: must be a positive integer or -1")
        threads = 1

    phantom_spec = _build_phantom_spec(raw.get("phantom", {}), errors)

    acq_raw = raw.get("acquisition", {})
    acquisition = None
    try:
        acquisition = AcquisitionParams(
            b0_tesla=float(acq_raw.get("b0_tesla", 3.0)),
            te1_s=float(acq_raw.get("te1_s", 2.6e-3)),
            dte_s=float(acq_raw.get("dte_s", 2.6e-3)),
            n_echoes=int(acq_raw.get("n_echoes", 11)),
            snr=float(acq_raw.get("snr", 50.0)),
        )
    except (ValueError, TypeError) as e:
        errors.append(f"acquisition: {e}")

    bfr_entries = raw.get("bfr", [{"method": "pdf"}])
    if isinstance(bfr_entries, dict):
        bfr_entries = [bfr_entries]
    names = []
    for i, entry in enumerate(bfr_entries):
        method = entry.get("method")
        if method not in BFR_METHODS:
            errors.append(f"bfr[{i}].method: must be one of {BFR_METHODS}, got {method!r}")
            continue
        names.append(method)
        if method == "external" and not entry.get("path"):
            errors.append(f"bfr[{i}]: external method requires a 'path' field")
        if method == "vsharp":
            r_max = entry.get("r_max_mm", 5.0)
            r_min = entry.get("r_min_mm", 1.0)
            if not r_max > r_min > 0:
                errors.append(f"bfr[{i}]: need r_max_mm > r_min_mm > 0")
        if method == "pdf" and entry.get("iters", 100) < 1:
            errors.append(f"bfr[{i}].iters: must be >= 1")

    msmv_raw = raw.get("msmv", {})
    msmv_enabled = bool(msmv_raw.get("enabled", True))
    alpha = msmv_raw.get("alpha", 1e-6)
    if not (0 < alpha < 1):
        errors.append("msmv.alpha: alpha must be in (0,1)")
    if msmv_raw.get("i_max", 5) < 1:
        errors.append("msmv.i_max: must be >= 1")
    if msmv_raw.get("t_min_hz", 0.3) <= 0:
        errors.append("msmv.t_min_hz: must be > 0")
    msmv_params = {
        "r1_mm": float(msmv_raw.get("r1_mm", 5.0)),
        "t_min_hz": float(msmv_raw.get("t_min_hz", 0.3)),
        "i_max": int(msmv_raw.get("i_max", 5)),
        "alpha": float(alpha) if 0 < alpha < 1 else 1e-6,
        "eps_mm": float(msmv_raw.get("eps_mm", 0.05)),
    }

    inv_raw = raw.get("inversion", {})
    variants = inv_raw.get("variants", ["medi", "medi-msmv"])
    if not variants:
        errors.append("inversion.variants: must be non-empty")
    for v in variants:
        if v not in VARIANTS:
            errors.append(f"inversion.variants: unknown variant {v!r}")
    for lam in ("lambda1", "lambda2"):
        if inv_raw.get(lam, 100.0) < 0:
            errors.append(f"inversion.{lam}: must be >= 0")
    inversion = {
        "variants": list(variants),
        "lambda1": float(inv_raw.get("lambda1", 100.0)),
        "lambda2": float(inv_raw.get("lambda2", 100.0)),
        "r1_mm": float(inv_raw.get("r1_mm", 5.0)),
        "outer_iters": int(inv_raw.get("outer_iters", 10)),
        "cg_iters": int(inv_raw.get("cg_iters", 100)),
        "edge_fraction": float(inv_raw.get("edge_fraction", 0.3)),
    }

    pairs = raw.get("pairs")
    if pairs is None:
        pairs = [[b, v] for b in names for v in variants]
    checked_pairs = []
    for i, pair in enumerate(pairs):
        if len(pair) != 2:
            errors.append(f"pairs[{i}]: must be [bfr_method, variant]")
            continue
        b, v = pair
        if b not in names:
            errors.append(f"pairs[{i}]: bfr method {b!r} is not configured")
        if v not in VARIANTS:
            errors.append(f"pairs[{i}]: unknown inversion variant {v!r}")
        if v == "medi-msmv" and not msmv_enabled:
            errors.append(f"pairs[{i}]: variant medi-msmv requires msmv.enabled")
        checked_pairs.append((b, v))

    default_rois = list(phantom_spec.roi_region_indices) if phantom_spec else []
    roi_idx = tuple(raw.get("metrics", {}).get("roi_region_indices", default_rois))
    if phantom_spec is not None:
        n_regions = len(phantom_spec.regions)
        for idx in roi_idx:
            if not (0 <= idx < n_regions):
                errors.append(f"metrics.roi_region_indices: index {idx} out of range")
    if len(roi_idx) < 3:
        errors.append("metrics.roi_region_indices: need >= 3 ROIs")

    if errors:
        raise ConfigError(errors)
    return PipelineConfig(
        raw=raw,
        seed=seed,
        output_dir=output_dir,
        threads=threads,
        phantom_spec=phantom_spec,
        acquisition=acquisition,
        bfr_entries=bfr_entries,
        msmv_enabled=msmv_enabled,
        msmv_params=msmv_params,
        inversion=inversion,
        pairs=checked_pairs,
        roi_region_indices=roi_idx,
    )


def load_config(path) -> PipelineConfig:
    return validate_config(path)
