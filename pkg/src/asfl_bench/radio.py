"""Link rates, packet error rates and the Rayleigh fading expectation.

Realized channel gains drive the rates; the packet error rate is an
expectation over fast fading conditioned on the current path loss (or the
realized gain when fading is frozen).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .scenario import ScenarioConfig

# Gauss-Legendre rule used on every panel of the fading quadrature
GL_NODES = 48
_GL_X, _GL_W = np.polynomial.legendre.leggauss(GL_NODES)
_START_PANELS = 4
_MAX_PANELS = 512
_QUAD_RTOL = 1e-13


class NoUplink(ValueError):
    """A client with zero resource blocks has no uplink at all."""


@dataclass(frozen=True)
class LinkState:
    gain_sq: float
    path_loss_linear: float
    rb_count: int
    tx_power_w: float


def _check_rbs(k) -> None:
    if np.any(np.asarray(k) < 1):
        raise NoUplink("rb_count = 0: client has no uplink")


def uplink_rates(k, p, gain_sq, cfg: ScenarioConfig) -> np.ndarray:
    """k·B·log2(1 + p|h|²/(B·N0)) elementwise; every k must be >= 1."""
    _check_rbs(k)
    b = cfg.rb_bandwidth_hz
    snr = np.asarray(p, dtype=float) * np.asarray(gain_sq, dtype=float) / (b * cfg.noise_psd_w_per_hz)
    return np.asarray(k, dtype=float) * b * np.log2(1.0 + snr)


def downlink_rates(gain_sq, cfg: ScenarioConfig) -> np.ndarray:
    b = cfg.downlink_bandwidth_hz
    snr = cfg.server_tx_power_w * np.asarray(gain_sq, dtype=float) / (b * cfg.noise_psd_w_per_hz)
    return b * np.log2(1.0 + snr)


def uplink_rate(link: LinkState, cfg: ScenarioConfig) -> float:
    if link.tx_power_w <= 0:
        raise ValueError("tx_power_w must be > 0")
    return float(uplink_rates(link.rb_count, link.tx_power_w, link.gain_sq, cfg))


def downlink_rate(gain_sq: float, cfg: ScenarioConfig) -> float:
    if not gain_sq > 0:
        raise ValueError("gain_sq must be > 0")
    return float(downlink_rates(gain_sq, cfg))


def error_exponent(k, cfg: ScenarioConfig) -> np.ndarray:
    """The constant α·B·N0·k shared by every packet-error expression."""
    return cfg.waterfall_threshold * cfg.rb_bandwidth_hz * cfg.noise_psd_w_per_hz * np.asarray(k, dtype=float)


@lru_cache(maxsize=16)
def _panel_nodes(panels: int) -> np.ndarray:
    """Composite Gauss-Legendre nodes on [0, 1], flattened over panels."""
    left = np.arange(panels)[:, None] / panels
    return (left + (0.5 + 0.5 * _GL_X[None, :]) / panels).ravel()


@lru_cache(maxsize=16)
def _panel_weights(panels: int) -> np.ndarray:
    return np.tile(0.5 * _GL_W / panels, panels)


def _quad(a: np.ndarray, panels: int) -> np.ndarray:
    # substitute t = e^u in int_0^inf exp(-a/t - t) dt; the integrand
    # exp(u - a e^-u - e^u) peaks at e^u = t* and is smooth in u
    tstar = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * a))
    with np.errstate(divide="ignore"):
        lo = np.minimum(np.log(tstar), np.log(np.maximum(a, 1e-300))) - 5.0
    lo = np.maximum(lo, -745.0)
    hi = np.log(3.0 * tstar + 60.0)
    nodes = _panel_nodes(panels)
    span = hi - lo
    u = lo[:, None] + span[:, None] * nodes[None, :]
    f = np.exp(u - a[:, None] * np.exp(-u) - np.exp(u))
    return (f @ _panel_weights(panels)) * span


def fading_expectation(c, theta):
    """E[exp(-c/X)] for X ~ Exp(mean theta).

    Equal to 2√(c/θ)·K1(2√(c/θ)).  Evaluated by composite 48-node
    Gauss-Legendre quadrature in log-space, doubling the panel count from 4
    until the relative change drops below 1e-13 (cap 512 panels).
    Returns 1 where c == 0.
    """
    c_arr = np.asarray(c, dtype=float)
    t_arr = np.asarray(theta, dtype=float)
    if not (np.all(np.isfinite(c_arr)) and np.all(np.isfinite(t_arr))):
        raise ValueError("fading_expectation needs finite inputs")
    if np.any(c_arr < 0) or np.any(t_arr <= 0):
        raise ValueError("fading_expectation needs c >= 0 and theta > 0")
    a, _ = np.broadcast_arrays(c_arr / t_arr, c_arr)
    shape = a.shape
    a = a.ravel()
    out = np.ones_like(a)
    live = a > 0
    if np.any(live):
        av = a[live]
        panels = _START_PANELS
        prev = _quad(av, panels)
        while panels < _MAX_PANELS:
            panels *= 2
            cur = _quad(av, panels)
            diff = np.abs(cur - prev)
            done = diff <= _QUAD_RTOL * np.abs(cur)
            prev = cur
            if np.all(done):
                break
        out[live] = np.minimum(prev, 1.0)
    out = out.reshape(shape)
    return float(out) if out.ndim == 0 else out


def fading_expectation_bessel(c, theta):
    """Closed form 2√a·K1(2√a), a = c/θ (cross-check only)."""
    from scipy.special import k1

    a = np.asarray(c, dtype=float) / np.asarray(theta, dtype=float)
    z = 2.0 * np.sqrt(a)
    with np.errstate(invalid="ignore"):
        val = np.where(a > 0, z * k1(np.where(a > 0, z, 1.0)), 1.0)
    return float(val) if val.ndim == 0 else val


def success_probability(k, p, gain_sq, path_loss, cfg: ScenarioConfig, fading: str | None = None):
    """1 - s: the probability the uplink packet arrives intact.

    ``k`` must be >= 1.  A zero transmit power gives probability 0.
    """
    _check_rbs(k)
    fading = fading or cfg.fading
    c, p, gain_sq, path_loss = np.broadcast_arrays(
        error_exponent(k, cfg), np.asarray(p, dtype=float),
        np.asarray(gain_sq, dtype=float), np.asarray(path_loss, dtype=float))
    on = p > 0
    safe_p = np.where(on, p, 1.0)
    if fading == "frozen":
        val = np.exp(-c / (safe_p * gain_sq))
    else:
        val = np.asarray(fading_expectation(c / safe_p, path_loss))
    val = np.where(on, val, 0.0)
    return float(val) if val.ndim == 0 else val


def packet_error_rates(k, p, gain_sq, path_loss, cfg: ScenarioConfig, fading: str | None = None):
    return 1.0 - success_probability(k, p, gain_sq, path_loss, cfg, fading)


def packet_error_rate(link: LinkState, cfg: ScenarioConfig, fading: str | None = None) -> float:
    if link.tx_power_w <= 0:
        raise ValueError("tx_power_w must be > 0")
    return float(packet_error_rates(link.rb_count, link.tx_power_w, link.gain_sq,
                                    link.path_loss_linear, cfg, fading))


def monte_carlo_fading(c: float, theta: float, draws: int, seed: int = 0, chunk: int = 1_000_000,
                       importance: bool | None = None):
    """Monte Carlo estimate of E[exp(-c/X)], X ~ Exp(theta), with its standard error.

    Plain sampling misses the rare large gains that carry the mean once
    c/theta >> 1.  The importance sampler draws y = X/theta from the defensive
    mixture 0.5 Exp(1) + 0.5 LogNormal(log sqrt(a), s), a = c/theta, centred on
    the integrand's peak; the Exp(1) half bounds every weight by 2.  By
    default it is used only for a > 1.
    """
    g = np.random.default_rng(seed)
    a = c / theta
    if importance is None:
        importance = a > 1.0
    mu = 0.5 * np.log(a) if a > 0 else 0.0
    s = float(np.clip(a ** -0.25 if a > 0 else 1.0, 0.05, 1.0))
    total = 0.0
    total_sq = 0.0
    left = draws
    while left > 0:
        n = min(chunk, left)
        if importance:
            y = np.where(g.random(n) < 0.5, g.exponential(1.0, n), np.exp(mu + s * g.standard_normal(n)))
            ln_pdf = np.exp(-0.5 * ((np.log(y) - mu) / s) ** 2) / (y * s * np.sqrt(2 * np.pi))
            v = np.exp(-a / y - y) / (0.5 * np.exp(-y) + 0.5 * ln_pdf)
        else:
            v = np.exp(-a / g.exponential(1.0, n))
        total += v.sum()
        total_sq += (v * v).sum()
        left -= n
    mean = total / draws
    var = max(total_sq / draws - mean * mean, 0.0)
    return mean, np.sqrt(var / draws)
