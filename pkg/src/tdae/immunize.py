"""Immunization optimizers: PGD baseline, FDM, DPD, TDAE, and a TPA-style reference.

The visual perturbation ascends the editing loss under an L-infinity
budget. FDM adds a flatness regularizer whose gradient is the
Hessian-free two-point form

    g = -g1 + (lam / h) * sign(z) * (g2 - g1)

with g1 the loss gradient at delta, g2 the gradient after a step of
length h along the normalized gradient direction, and z the loss
difference between the two points. DPD periodically re-optimizes an
embedding perturbation that re-enables the edit, and the image
perturbation is then hardened against that refined embedding.

Sign convention: sign(0) = 0 everywhere, and the ascent direction is
taken to be 0 when the gradient norm falls below 1e-12.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Callable, List, Optional, Tuple

import numpy as np

from tdae.models import EditModel, InstrumentedModel

ATTACK_TARGETS = ("full-model", "encoder-only")

_STATIONARY_TOL = 1e-12


class ConfigError(ValueError):
    """Invalid immunization hyperparameters."""


@dataclass(frozen=True)
class TdaeConfig:
    """Hyperparameters of one immunization run.

    ``lam / h`` is the flatness-regularization strength; 0.3 is the
    adopted default ratio. ``dpd_period`` (S) and ``dpd_iters`` (M)
    control the embedding refinement; setting ``dpd_iters=0`` or
    ``dpd_period > n_iters`` disables it.
    """

    eps_v: float = 8.0 / 255.0
    alpha: float = 2.0 / 255.0
    n_iters: int = 100
    lam: float = 0.03
    h: float = 0.1
    dpd_period: int = 20
    eps_p: float = 0.1
    eta: float = 0.01
    dpd_iters: int = 10
    seed: int = 0
    attack_target: str = "full-model"

    @property
    def lam_over_h(self) -> float:
        return self.lam / self.h

    def validate(self) -> None:
        if self.eps_v < 0:
            raise ConfigError(f"eps_v must be >= 0, got {self.eps_v}")
        if self.alpha < 0:
            raise ConfigError(f"alpha must be >= 0, got {self.alpha}")
        if self.h <= 0:
            raise ConfigError(f"h must be > 0, got {self.h}")
        if self.lam < 0:
            raise ConfigError(f"lam must be >= 0, got {self.lam}")
        if self.n_iters < 0:
            raise ConfigError(f"n_iters must be >= 0, got {self.n_iters}")
        if self.dpd_period < 1:
            raise ConfigError(f"dpd_period must be >= 1, got {self.dpd_period}")
        if self.eps_p < 0:
            raise ConfigError(f"eps_p must be >= 0, got {self.eps_p}")
        if self.eta < 0:
            raise ConfigError(f"eta must be >= 0, got {self.eta}")
        if self.dpd_iters < 0:
            raise ConfigError(f"dpd_iters must be >= 0, got {self.dpd_iters}")
        if self.attack_target not in ATTACK_TARGETS:
            raise ConfigError(f"attack_target must be one of {ATTACK_TARGETS}, "
                              f"got {self.attack_target!r}")


@dataclass(frozen=True)
class IterationRecord:
    loss: float
    g1_norm: float
    z: float
    dpd_fired: bool


@dataclass(frozen=True)
class ImmunizationResult:
    x_adv: np.ndarray
    delta_v: np.ndarray
    records: Tuple[IterationRecord, ...]
    grad_calls: int
    wall_time_s: float
    # per-iteration post-projection perturbations, only when requested
    trajectory: Optional[Tuple[np.ndarray, ...]] = None

    @property
    def final_loss(self) -> float:
        return self.records[-1].loss if self.records else 0.0


def mse_loss(y: np.ndarray, y0: np.ndarray) -> float:
    """Mean squared error over all elements."""
    if y.shape != y0.shape:
        raise ValueError(f"shape mismatch: {y.shape} vs {y0.shape}")
    d = np.asarray(y, dtype=np.float64) - np.asarray(y0, dtype=np.float64)
    return float(np.mean(d * d))


def project_linf(delta: np.ndarray, eps: float) -> np.ndarray:
    """Elementwise clamp onto the L-infinity ball of radius eps."""
    if eps < 0:
        raise ValueError(f"eps must be >= 0, got {eps}")
    return np.clip(delta, -eps, eps)


def compute_benign_target(model: EditModel, x0: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Benign edited output under the original embedding; frozen per run."""
    return model.forward(x0, c)


# ---------------------------------------------------------------------------
# loss/gradient closures
#
# LossGrad maps a perturbation delta_v to (loss, d loss / d delta_v) and
# charges exactly one gradient call per invocation.

LossGrad = Callable[[np.ndarray], Tuple[float, np.ndarray]]


def _full_model_loss_grad(imodel: InstrumentedModel, x0: np.ndarray,
                          e: np.ndarray, y0: np.ndarray) -> LossGrad:
    def loss_grad(delta_v: np.ndarray) -> Tuple[float, np.ndarray]:
        return imodel.grad_x(x0 + delta_v, e, y0)
    return loss_grad


def _encoder_loss_grad(imodel: InstrumentedModel, x0: np.ndarray,
                       latent0: np.ndarray) -> LossGrad:
    def loss_grad(delta_v: np.ndarray) -> Tuple[float, np.ndarray]:
        return imodel.grad_x_encoder(x0 + delta_v, latent0)
    return loss_grad


# ---------------------------------------------------------------------------
# single steps


def _pgd_step_impl(loss_grad: LossGrad, delta_v: np.ndarray,
                   alpha: float, eps_v: float) -> np.ndarray:
    _, g = loss_grad(delta_v)
    return project_linf(delta_v + alpha * np.sign(g), eps_v)


def pgd_step(imodel: InstrumentedModel, x0: np.ndarray, delta_v: np.ndarray,
             e: np.ndarray, y0: np.ndarray, alpha: float, eps_v: float) -> np.ndarray:
    """One sign-ascent step on the editing loss; exactly one gradient call."""
    return _pgd_step_impl(_full_model_loss_grad(imodel, x0, e, y0), delta_v, alpha, eps_v)


def _fdm_gradient_impl(loss_grad: LossGrad, delta_v: np.ndarray,
                       lam: float, h: float) -> Tuple[np.ndarray, IterationRecord]:
    loss1, g1 = loss_grad(delta_v)
    g1_norm = float(np.linalg.norm(g1))
    if g1_norm < _STATIONARY_TOL:
        # stationary point: direction undefined, regularizer contributes nothing
        return -g1, IterationRecord(loss1, g1_norm, 0.0, False)
    s = g1 / g1_norm
    loss2, g2 = loss_grad(delta_v + h * s)
    z = loss2 - loss1
    g_fdm = -g1 + (lam / h) * np.sign(z) * (g2 - g1)
    return g_fdm, IterationRecord(loss1, g1_norm, z, False)


def fdm_gradient(imodel: InstrumentedModel, x0: np.ndarray, delta_v: np.ndarray,
                 e: np.ndarray, y0: np.ndarray, lam: float, h: float):
    """Flatness-regularized gradient and its diagnostics.

    Two gradient calls (one when the base gradient vanishes). The
    returned record carries the loss at delta_v, ||g1||_2 and the
    directional loss difference z.
    """
    if h <= 0:
        raise ConfigError(f"h must be > 0, got {h}")
    if lam < 0:
        raise ConfigError(f"lam must be >= 0, got {lam}")
    return _fdm_gradient_impl(_full_model_loss_grad(imodel, x0, e, y0), delta_v, lam, h)


def _fdm_step_impl(loss_grad: LossGrad, delta_v: np.ndarray,
                   cfg: TdaeConfig) -> Tuple[np.ndarray, IterationRecord]:
    g_fdm, rec = _fdm_gradient_impl(loss_grad, delta_v, cfg.lam, cfg.h)
    new_delta = project_linf(delta_v - cfg.alpha * np.sign(g_fdm), cfg.eps_v)
    return new_delta, rec


def fdm_step(imodel: InstrumentedModel, x0: np.ndarray, delta_v: np.ndarray,
             e: np.ndarray, y0: np.ndarray, cfg: TdaeConfig) -> np.ndarray:
    """One projected descent step on the FDM objective."""
    new_delta, _ = _fdm_step_impl(_full_model_loss_grad(imodel, x0, e, y0), delta_v, cfg)
    return new_delta


def dpd_refine(imodel: InstrumentedModel, x_imu: np.ndarray, c: np.ndarray,
               y0: np.ndarray, eps_p: float, eta: float, m_iters: int) -> np.ndarray:
    """Embedding perturbation that re-aligns the edit of x_imu with y0.

    Starts from zero and runs ``m_iters`` projected sign-descent steps
    on the editing loss; exactly ``m_iters`` gradient calls.
    """
    delta_p = np.zeros(imodel.spec.embed_dim, dtype=np.float64)
    for _ in range(m_iters):
        _, g_p = imodel.grad_c(x_imu, c + delta_p, y0)
        delta_p = project_linf(delta_p - eta * np.sign(g_p), eps_p)
    return delta_p


# ---------------------------------------------------------------------------
# full runs


def tdae_immunize(model: EditModel, x0: np.ndarray, c: np.ndarray,
                  cfg: TdaeConfig, record_trajectory: bool = False) -> ImmunizationResult:
    """Full immunization run (FDM plus periodic DPD refinement).

    With ``attack_target='encoder-only'`` the objective is the distance
    between encoder latents of the perturbed and clean image (the
    encoder-attack analog) and DPD is disabled.
    """
    cfg.validate()
    t0 = time.perf_counter()
    imodel = model.instrument()
    x0 = np.asarray(x0, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)

    encoder_only = cfg.attack_target == "encoder-only"
    if encoder_only:
        latent0 = model.encoder_output(x0)
        y0 = None
    else:
        y0 = compute_benign_target(model, x0, c)

    delta_v = np.zeros_like(x0)
    delta_p = np.zeros(model.spec.embed_dim, dtype=np.float64)
    x_imu = x0.copy()
    records: List[IterationRecord] = []
    trajectory: List[np.ndarray] = []

    for n in range(1, cfg.n_iters + 1):
        e = c + delta_p
        fired = False
        if not encoder_only and n % cfg.dpd_period == 0:
            delta_p = dpd_refine(imodel, x_imu, c, y0, cfg.eps_p, cfg.eta, cfg.dpd_iters)
            e = c + delta_p
            fired = True

        if encoder_only:
            loss_grad = _encoder_loss_grad(imodel, x0, latent0)
        else:
            loss_grad = _full_model_loss_grad(imodel, x0, e, y0)
        delta_v, rec = _fdm_step_impl(loss_grad, delta_v, cfg)
        x_imu = x0 + delta_v
        records.append(IterationRecord(rec.loss, rec.g1_norm, rec.z, fired))
        if record_trajectory:
            trajectory.append(delta_v.copy())

    return ImmunizationResult(
        x_adv=x0 + delta_v,
        delta_v=delta_v,
        records=tuple(records),
        grad_calls=imodel.grad_calls,
        wall_time_s=time.perf_counter() - t0,
        trajectory=tuple(trajectory) if record_trajectory else None,
    )


def pgd_immunize(model: EditModel, x0: np.ndarray, c: np.ndarray,
                 cfg: TdaeConfig, record_trajectory: bool = False) -> ImmunizationResult:
    """Plain sign-ascent baseline under the same budget and iteration count."""
    cfg.validate()
    t0 = time.perf_counter()
    imodel = model.instrument()
    x0 = np.asarray(x0, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)

    if cfg.attack_target == "encoder-only":
        latent0 = model.encoder_output(x0)
        loss_grad = _encoder_loss_grad(imodel, x0, latent0)
    else:
        y0 = compute_benign_target(model, x0, c)
        loss_grad = _full_model_loss_grad(imodel, x0, c, y0)

    delta_v = np.zeros_like(x0)
    records: List[IterationRecord] = []
    trajectory: List[np.ndarray] = []
    for _ in range(cfg.n_iters):
        loss, g = loss_grad(delta_v)
        delta_v = project_linf(delta_v + cfg.alpha * np.sign(g), cfg.eps_v)
        records.append(IterationRecord(loss, float(np.linalg.norm(g)), 0.0, False))
        if record_trajectory:
            trajectory.append(delta_v.copy())

    return ImmunizationResult(
        x_adv=x0 + delta_v,
        delta_v=delta_v,
        records=tuple(records),
        grad_calls=imodel.grad_calls,
        wall_time_s=time.perf_counter() - t0,
        trajectory=tuple(trajectory) if record_trajectory else None,
    )


def _tpa_gradient_impl(loss_grad: LossGrad, delta_v: np.ndarray, lam: float,
                       k_samples: int, sigma: float, h: float,
                       rng: np.random.Generator) -> Tuple[np.ndarray, float, float]:
    loss1, g1 = loss_grad(delta_v)
    reg = np.zeros_like(g1)
    for _ in range(k_samples):
        u = rng.uniform(-sigma, sigma, size=delta_v.shape)
        _, g1k = loss_grad(delta_v + u)
        nk = float(np.linalg.norm(g1k))
        s_k = g1k / nk if nk >= _STATIONARY_TOL else np.zeros_like(g1k)
        # second call is always made so the 2K+1 accounting stays exact
        _, g2k = loss_grad(delta_v + u + h * s_k)
        reg += (g2k - g1k) / h
    g_tpa = -g1 + lam * reg / k_samples
    return g_tpa, loss1, float(np.linalg.norm(g1))


def tpa_gradient(imodel: InstrumentedModel, x0: np.ndarray, delta_v: np.ndarray,
                 c: np.ndarray, y0: np.ndarray, lam: float, k_samples: int,
                 sigma: float, h: float, rng: np.random.Generator) -> np.ndarray:
    """Sampled-neighborhood flatness gradient (TPA-style reference).

    Penalizes the mean gradient norm over ``k_samples`` uniform draws
    from the L-infinity ball of radius ``sigma`` around the perturbed
    image; each sample's norm-gradient uses the same two-point
    finite-difference evaluation as FDM (without the sign(z)
    robustification). Exactly ``2 * k_samples + 1`` gradient calls.
    """
    if k_samples < 1:
        raise ConfigError(f"k_samples must be >= 1, got {k_samples}")
    if sigma <= 0:
        raise ConfigError(f"sigma must be > 0, got {sigma}")
    loss_grad = _full_model_loss_grad(imodel, x0, c, y0)
    g_tpa, _, _ = _tpa_gradient_impl(loss_grad, delta_v, lam, k_samples, sigma, h, rng)
    return g_tpa


def tpa_immunize(model: EditModel, x0: np.ndarray, c: np.ndarray, cfg: TdaeConfig,
                 k_samples: int = 5, sigma: float = 4.0 / 255.0) -> ImmunizationResult:
    """Immunization run driven by the sampled TPA-style gradient (no DPD)."""
    cfg.validate()
    t0 = time.perf_counter()
    imodel = model.instrument()
    x0 = np.asarray(x0, dtype=np.float64)
    c = np.asarray(c, dtype=np.float64)
    y0 = compute_benign_target(model, x0, c)
    rng = np.random.default_rng(cfg.seed)
    loss_grad = _full_model_loss_grad(imodel, x0, c, y0)

    delta_v = np.zeros_like(x0)
    records: List[IterationRecord] = []
    for _ in range(cfg.n_iters):
        g_tpa, loss, g1_norm = _tpa_gradient_impl(
            loss_grad, delta_v, cfg.lam, k_samples, sigma, cfg.h, rng)
        delta_v = project_linf(delta_v - cfg.alpha * np.sign(g_tpa), cfg.eps_v)
        records.append(IterationRecord(loss, g1_norm, 0.0, False))

    return ImmunizationResult(
        x_adv=x0 + delta_v,
        delta_v=delta_v,
        records=tuple(records),
        grad_calls=imodel.grad_calls,
        wall_time_s=time.perf_counter() - t0,
    )
