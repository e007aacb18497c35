"""Hermite-Gaussian (HG) mode expansion of shifted Gaussian PSFs.

All positions are in PSF units (sigma = 1).  A PSF centred at ``x`` has
HG amplitudes

    c_q(x) = exp(-x^2/8) (x/2)^q / sqrt(q!),

a coherent state of amplitude x/2, so |c_q|^2 is Poisson with mean x^2/4.
Everything is evaluated in log space so that mean occupations of order
10^4 do not overflow.
"""

from __future__ import annotations

import numpy as np
from scipy import special

from .quadrature import integrate_vector

_LINE_RTOL = 1e-11
_LINE_ATOL = 1e-290


def _signed_power_exp(t, orders, log_norm, quad):
    """sign(t)^m * exp(-quad * t^2 + m log|t| - log_norm[m]) for t (k,) and m (M,)."""
    t = np.asarray(t, dtype=float)
    with np.errstate(divide="ignore", invalid="ignore"):
        la = np.log(np.abs(t))[..., None]
        logv = -quad * (t * t)[..., None] + orders * la - log_norm
    logv = np.where(orders == 0, -quad * (t * t)[..., None] - log_norm, logv)
    v = np.exp(logv)
    neg = (t < 0)[..., None] & (orders % 2 == 1)
    return np.where(neg, -v, v)


def hg_coefficients(x, q_max: int) -> np.ndarray:
    """c_q(x) for q = 0..q_max; shape ``x.shape + (q_max + 1,)``."""
    q = np.arange(q_max + 1)
    return _signed_power_exp(np.asarray(x, dtype=float) / 2.0, q, 0.5 * special.gammaln(q + 1), 0.5)


def hg_coefficient_derivatives(x, q_max: int) -> np.ndarray:
    """d c_q / dx = (sqrt(q) c_{q-1} - sqrt(q+1) c_{q+1}) / 2."""
    c = hg_coefficients(x, q_max + 1)
    q = np.arange(q_max + 1)
    lower = np.concatenate([np.zeros(c.shape[:-1] + (1,)), c[..., :q_max]], axis=-1)
    return 0.5 * (np.sqrt(q) * lower - np.sqrt(q + 1.0) * c[..., 1:])


def poisson_weights(mean, q_max: int) -> np.ndarray:
    """exp(-Q) Q^q / q! for q = 0..q_max (mean may be an array)."""
    mean = np.asarray(mean, dtype=float)
    q = np.arange(q_max + 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        lm = np.log(mean)[..., None]
        logv = -mean[..., None] + q * lm - special.gammaln(q + 1)
    logv = np.where(q == 0, -mean[..., None], logv)
    return np.exp(logv)


def poisson_tail(mean, q_max: int):
    """P(X > q_max) for X ~ Poisson(mean)."""
    return special.gammainc(q_max + 1, np.asarray(mean, dtype=float))


def _moment_log_norm(orders):
    # log of max_t |t|^m exp(-t^2) = (m/2) log(m/2) - m/2; keeps integrands <= 1
    m = orders.astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        ln = np.where(m > 0, 0.5 * m * np.log(m / 2.0) - 0.5 * m, 0.0)
    return ln


def line_moments(lo: float, hi: float, orders) -> tuple[np.ndarray, np.ndarray, float]:
    """Scaled moments of the line source over ``[lo, hi]`` (PSF units).

    Returns ``(values, log_scale, error)`` where

        exp(log_scale[m]) * values[m] = (1/(hi-lo)) * int_lo^hi exp(-y^2/4) (y/2)^m dy.
    """
    orders = np.asarray(orders)
    log_norm = _moment_log_norm(orders)

    def f(y):
        return _signed_power_exp(np.asarray(y) / 2.0, orders, log_norm, 1.0)

    # split at the origin (sign change) and at the peaks of the scaled integrands
    peaks = np.sqrt(2.0 * np.unique(orders[orders > 0]))
    step = max(1, len(peaks) // 32)
    pts = np.concatenate([[0.0], peaks[::step], -peaks[::step]])
    values, err = integrate_vector(f, lo, hi, points=pts, rtol=_LINE_RTOL, atol=_LINE_ATOL)
    width = hi - lo
    return values / width, log_norm, err / width


def line_rho(lo: float, hi: float, q_max: int) -> tuple[np.ndarray, float]:
    """(1/theta2) int c_q(y) c_q'(y) dy over the line, plus the quadrature error."""
    q = np.arange(q_max + 1)
    orders = np.arange(2 * q_max + 1)
    vals, log_norm, err = line_moments(lo, hi, orders)
    m = q[:, None] + q[None, :]
    lf = 0.5 * special.gammaln(q + 1)
    scale = np.exp(log_norm[m] - lf[:, None] - lf[None, :])
    return vals[m] * scale, err


def line_mode_probs(lo: float, hi: float, q_max: int) -> tuple[np.ndarray, float]:
    """(1/theta2) int Poisson(q; y^2/4) dy: the diagonal of :func:`line_rho`."""
    q = np.arange(q_max + 1)
    vals, log_norm, err = line_moments(lo, hi, 2 * q)
    return vals * np.exp(log_norm - special.gammaln(q + 1)), err
