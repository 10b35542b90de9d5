"""Transferable image immunization against differentiable editing models.

Public surface: surrogate model families, the immunization optimizers
(PGD baseline, flat-gradient FDM, prompt-space DPD, full TDAE, and the
sampled TPA-style reference), classical image-quality metrics, and the
evaluation harness.
"""

from tdae.immunize import (
    ImmunizationResult,
    TdaeConfig,
    compute_benign_target,
    dpd_refine,
    fdm_gradient,
    fdm_step,
    mse_loss,
    pgd_immunize,
    pgd_step,
    project_linf,
    tdae_immunize,
    tpa_gradient,
    tpa_immunize,
)
from tdae.metrics import MetricReport, fsim, metric_report, psnr, ssim, vifp
from tdae.models import EditModel, ModelFamilySpec, build_model

__all__ = [
    "EditModel",
    "ImmunizationResult",
    "MetricReport",
    "ModelFamilySpec",
    "TdaeConfig",
    "build_model",
    "compute_benign_target",
    "dpd_refine",
    "fdm_gradient",
    "fdm_step",
    "fsim",
    "metric_report",
    "mse_loss",
    "pgd_immunize",
    "pgd_step",
    "project_linf",
    "psnr",
    "ssim",
    "tdae_immunize",
    "tpa_gradient",
    "tpa_immunize",
    "vifp",
]

__version__ = "0.1.0"
