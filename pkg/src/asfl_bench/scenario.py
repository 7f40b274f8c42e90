"""Scenario configuration, unit handling and the seeded stochastic environment.

All physical quantities are held in canonical SI units (W, Hz, s, J, bits,
FLOPs, cycles).  Conversions from dB/dBm happen only in :func:`load_config`.

Randomness comes from four named streams (``env``, ``data``, ``model``,
``sampling``).  A draw is keyed by ``(seed, stream id, *tags)`` through
:class:`numpy.random.SeedSequence`, so every draw is a pure function of its
key and any module can be replayed in isolation.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

STREAMS = {"env": 0, "data": 1, "model": 2, "sampling": 3}

# tags used inside the env stream
TAG_POSITIONS = 11
TAG_CPU = 12
TAG_FADING = 13
TAG_BETA = 14
TAG_BASELINE = 15


class ConfigError(ValueError):
    """Invalid configuration value; ``field`` names the offending key."""

    def __init__(self, field: str, message: str):
        super().__init__(message)
        self.field = field


def dbm_to_w(dbm):
    return 10.0 ** ((np.asarray(dbm, dtype=float) - 30.0) / 10.0)


def w_to_dbm(watts):
    return 10.0 * np.log10(np.asarray(watts, dtype=float)) + 30.0


def db_to_linear(db):
    return 10.0 ** (np.asarray(db, dtype=float) / 10.0)


def linear_to_db(lin):
    return 10.0 * np.log10(np.asarray(lin, dtype=float))


@dataclass(frozen=True)
class Seeds:
    env: int = 42
    data: int = 42
    model: int = 42
    sampling: int = 42


@dataclass(frozen=True)
class ScenarioConfig:
    """Every physical, learning and solver parameter of a run.

    Defaults are the reference simulation parameters plus the toy network
    and its cost-profile scaling.
    """

    # system
    n_clients: int = 10
    n_rounds: int = 200
    n_rbs: int = 8
    rb_bandwidth_hz: float = 1e6
    downlink_bandwidth_hz: float = 8e6
    noise_psd_w_per_hz: float = float(dbm_to_w(-173.0))
    waterfall_threshold: float = 1.0
    max_tx_power_w: float = 1.5
    server_tx_power_w: float = 5.0
    server_cpu_hz: float = 1e10
    server_cycles_per_flop: float = 1.0 / 32.0
    client_cycles_per_flop: float = 1.0 / 16.0
    energy_coeff: float = 1e-28
    delay_budget_s: float = 20.0
    energy_budget_j: float = 0.5
    sampling_ratio: float = 0.05
    queue_memory: float = 0.5
    penalty_weight: float = 10.0
    dirichlet_alpha: float = 10.0
    learning_rate: float = 1e-4
    batch_size: int = 64
    solver_tol_outer: float = 0.01
    solver_tol_power: float = 0.01
    coverage_radius_m: float = 500.0
    cpu_freq_range_hz: tuple[float, float] = (1e9, 1.6e9)
    seeds: Seeds = field(default_factory=Seeds)

    # environment switches
    min_distance_m: float = 1.0
    redraw_positions: bool = False
    rayleigh_fading: bool = True
    fading: str = "on"  # "on": expectation over fast fading, "frozen": realized gain

    # toy split network and data
    layer_widths: tuple[int, ...] = (16, 32, 32, 32, 32, 32, 4)
    samples_per_client: int = 500
    test_samples: int = 1000
    class_separation: float = 1.5
    init_scale: float = 1.0
    flops_scale: float = 1000.0
    bits_scale: float = 1.0
    allowed_cuts: tuple[int, ...] | None = None
    initial_cut: int = 1
    # explicit per-layer profile {size_bits, output_bits, flops_fp, flops_bp};
    # None derives it from layer_widths and the two scale knobs
    layer_profile: dict[str, tuple[float, ...]] | None = None

    # solvers
    objective_mode: str = "consistent"
    power_bounds: str = "exact"
    rb_power_caps: bool = True  # RB candidates use powers clipped to each client's energy-feasible maximum
    power_safeguard: bool = True  # keep incumbent powers when the power block would raise g_obj
    max_outer_iters: int = 20
    max_power_iters: int = 50
    rb_exact_budget: int = 1_000_000
    stability_safety: float = 1.05
    snapshot_every: int = 0

    @property
    def n_layers(self) -> int:
        return len(self.layer_widths) - 1

    def cuts(self) -> tuple[int, ...]:
        if self.allowed_cuts is not None:
            return tuple(self.allowed_cuts)
        return tuple(range(1, self.n_layers))

    def replace(self, **changes) -> "ScenarioConfig":
        cfg = dataclasses.replace(self, **changes)
        validate(cfg)
        return cfg

    def to_dict(self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["cpu_freq_range_hz"] = list(self.cpu_freq_range_hz)
        d["layer_widths"] = list(self.layer_widths)
        if self.allowed_cuts is not None:
            d["allowed_cuts"] = list(self.allowed_cuts)
        if self.layer_profile is not None:
            d["layer_profile"] = {k: list(v) for k, v in self.layer_profile.items()}
        return d


_POSITIVE = (
    "rb_bandwidth_hz", "downlink_bandwidth_hz", "noise_psd_w_per_hz",
    "waterfall_threshold", "max_tx_power_w", "server_tx_power_w",
    "server_cpu_hz", "server_cycles_per_flop", "client_cycles_per_flop",
    "delay_budget_s", "energy_budget_j", "dirichlet_alpha", "learning_rate",
    "solver_tol_outer", "solver_tol_power", "coverage_radius_m",
    "min_distance_m", "flops_scale", "bits_scale", "class_separation",
    "init_scale", "stability_safety",
)
_POSITIVE_INT = (
    "n_clients", "n_rounds", "n_rbs", "batch_size", "samples_per_client",
    "test_samples", "max_outer_iters", "max_power_iters", "rb_exact_budget",
)


def validate(cfg: ScenarioConfig) -> None:
    for name in _POSITIVE:
        v = getattr(cfg, name)
        if not (v > 0):
            raise ConfigError(name, f"{name} must be > 0, got {v!r}")
    for name in _POSITIVE_INT:
        v = getattr(cfg, name)
        if int(v) != v or v < 1:
            raise ConfigError(name, f"{name} must be a positive integer, got {v!r}")
    if cfg.energy_coeff < 0:
        raise ConfigError("energy_coeff", "energy_coeff must be >= 0")
    if not 0.0 <= cfg.queue_memory <= 1.0:
        raise ConfigError("queue_memory", "queue_memory out of [0,1]")
    if not 0.0 < cfg.sampling_ratio <= 1.0:
        raise ConfigError("sampling_ratio", "sampling_ratio out of (0,1]")
    if cfg.penalty_weight < 0:
        raise ConfigError("penalty_weight", "penalty_weight must be >= 0")
    lo, hi = cfg.cpu_freq_range_hz
    if not 0 < lo <= hi:
        raise ConfigError("cpu_freq_range_hz", "cpu_freq_range_hz must satisfy 0 < lo <= hi")
    if cfg.fading not in ("on", "frozen"):
        raise ConfigError("fading", "fading must be 'on' or 'frozen'")
    if cfg.objective_mode not in ("consistent", "verbatim"):
        raise ConfigError("objective_mode", "objective_mode must be 'consistent' or 'verbatim'")
    if cfg.power_bounds not in ("exact", "verbatim"):
        raise ConfigError("power_bounds", "power_bounds must be 'exact' or 'verbatim'")
    if len(cfg.layer_widths) < 3 or min(cfg.layer_widths) < 1:
        raise ConfigError("layer_widths", "layer_widths needs >= 3 positive entries")
    m = cfg.n_layers
    cuts = cfg.cuts()
    if not cuts or any(c < 1 or c > m for c in cuts):
        raise ConfigError("allowed_cuts", f"allowed_cuts must lie in 1..{m}")
    if cfg.layer_profile is not None:
        keys = {"size_bits", "output_bits", "flops_fp", "flops_bp"}
        if set(cfg.layer_profile) != keys:
            raise ConfigError("layer_profile", f"layer_profile needs exactly the keys {sorted(keys)}")
        for key, vals in cfg.layer_profile.items():
            if len(vals) != m or any(v < 0 for v in vals):
                raise ConfigError("layer_profile", f"layer_profile.{key} needs {m} non-negative entries")
    if cfg.initial_cut not in cuts:
        raise ConfigError("initial_cut", f"initial_cut {cfg.initial_cut} not in allowed cuts {cuts}")


_TUPLE_FIELDS = ("cpu_freq_range_hz", "layer_widths", "allowed_cuts")


def config_from_dict(raw: dict[str, Any]) -> ScenarioConfig:
    """Build a config from a JSON-like mapping, filling defaults."""
    raw = dict(raw)
    known = {f.name for f in dataclasses.fields(ScenarioConfig)}
    if "noise_psd_dbm_per_hz" in raw:
        if "noise_psd_w_per_hz" in raw:
            raise ConfigError("noise_psd_dbm_per_hz", "give the noise PSD in dBm/Hz or W/Hz, not both")
        raw["noise_psd_w_per_hz"] = float(dbm_to_w(raw.pop("noise_psd_dbm_per_hz")))
    kwargs: dict[str, Any] = {}
    for key, value in raw.items():
        if key not in known:
            raise ConfigError(key, f"unknown configuration key {key!r}")
        if key == "seeds":
            if isinstance(value, int):
                value = Seeds(value, value, value, value)
            else:
                value = Seeds(**value)
        elif key == "layer_profile" and value is not None:
            if not isinstance(value, dict):
                raise ConfigError(key, "layer_profile must be an object of arrays")
            value = {k: tuple(float(x) for x in v) for k, v in value.items()}
        elif key in _TUPLE_FIELDS and value is not None:
            value = tuple(value)
        kwargs[key] = value
    cfg = ScenarioConfig(**kwargs)
    validate(cfg)
    return cfg


def load_config(path: str | Path) -> ScenarioConfig:
    """Read a JSON configuration file; missing keys take their defaults."""
    text = Path(path).read_text()
    if not text.strip():
        return config_from_dict({})
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError("<file>", f"cannot parse {path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError("<file>", "configuration root must be an object")
    return config_from_dict(raw)


def parse_override(text: str) -> tuple[str, Any]:
    """Parse ``key=value`` where value is JSON (bare strings allowed)."""
    if "=" not in text:
        raise ConfigError(text, f"override {text!r} is not key=value")
    key, value = text.split("=", 1)
    try:
        parsed = json.loads(value)
    except json.JSONDecodeError:
        parsed = value
    return key.strip(), parsed


def rng(seed: int, stream: str, *tags: int) -> np.random.Generator:
    """Generator for one keyed draw of a named stream."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), STREAMS[stream], *map(int, tags)]))


def stream_seed(cfg: ScenarioConfig, stream: str) -> int:
    return getattr(cfg.seeds, stream)


@dataclass(frozen=True)
class ClientProfile:
    id: int
    n_samples: int
    cpu_hz: float
    distance_m: float


@dataclass(frozen=True)
class ChannelDraw:
    path_loss_linear: float
    fading_gain_sq: float
    gain_sq: float


def path_loss_linear(distance_m):
    """Path loss -30 - 40 log10(d) dB as a linear power ratio."""
    return db_to_linear(-30.0 - 40.0 * np.log10(np.asarray(distance_m, dtype=float)))


def _distances(cfg: ScenarioConfig, round_idx: int) -> np.ndarray:
    tags = (TAG_POSITIONS, round_idx) if cfg.redraw_positions else (TAG_POSITIONS,)
    g = rng(cfg.seeds.env, "env", *tags)
    # uniform in the disk: radius ~ R sqrt(U)
    r = cfg.coverage_radius_m * np.sqrt(g.random(cfg.n_clients))
    return np.maximum(r, cfg.min_distance_m)


def draw_clients(cfg: ScenarioConfig, round_idx: int = 0) -> list[ClientProfile]:
    d = _distances(cfg, round_idx)
    lo, hi = cfg.cpu_freq_range_hz
    f = rng(cfg.seeds.env, "env", TAG_CPU).uniform(lo, hi, cfg.n_clients)
    return [ClientProfile(i, cfg.samples_per_client, float(f[i]), float(d[i])) for i in range(cfg.n_clients)]


def draw_environment(cfg: ScenarioConfig, round_idx: int) -> tuple[list[ChannelDraw], list[ClientProfile]]:
    """Channel draws and client profiles for one round (pure in seed, round)."""
    if not 0 <= round_idx < cfg.n_rounds:
        raise ValueError(f"round {round_idx} outside 0..{cfg.n_rounds - 1}")
    clients = draw_clients(cfg, round_idx)
    theta = path_loss_linear([c.distance_m for c in clients])
    if cfg.rayleigh_fading:
        # |chi|^2 of a CN(0,1) coefficient is Exp(1)
        chi2 = rng(cfg.seeds.env, "env", TAG_FADING, round_idx).exponential(1.0, cfg.n_clients)
    else:
        chi2 = np.ones(cfg.n_clients)
    draws = [ChannelDraw(float(t), float(x), float(t * x)) for t, x in zip(theta, chi2)]
    return draws, clients


def dirichlet_proportions(cfg: ScenarioConfig, n_classes: int) -> np.ndarray:
    """Row c holds class c's split across clients, drawn from Dir(rho)."""
    g = rng(cfg.seeds.data, "data", 0)
    return g.dirichlet(np.full(cfg.n_clients, cfg.dirichlet_alpha), size=n_classes)


def partition_data(cfg: ScenarioConfig, labels: np.ndarray) -> list[np.ndarray]:
    """Non-IID partition with exactly ``samples_per_client`` samples each.

    Each client's target class mix is its Dirichlet share of every class.
    Quotas are rounded by largest remainder and filled from per-class pools
    in index order; a client whose preferred classes run dry is topped up
    from the remaining pools, again in index order.
    """
    labels = np.asarray(labels)
    if labels.size == 0:
        raise ValueError("dataset is empty")
    n, per = cfg.n_clients, cfg.samples_per_client
    if n * per > labels.size:
        raise ValueError(f"dataset has {labels.size} samples, need n_clients*samples_per_client = {n * per}")
    classes = np.unique(labels)
    counts = np.array([(labels == c).sum() for c in classes], dtype=float)
    props = dirichlet_proportions(cfg, len(classes))
    pools = [list(np.flatnonzero(labels == c)) for c in classes]
    heads = [0] * len(classes)
    out = []
    for i in range(n):
        weight = props[:, i] * counts
        want = per * weight / weight.sum()
        quota = np.floor(want).astype(int)
        short = per - quota.sum()
        order = np.argsort(-(want - quota), kind="stable")
        quota[order[:short]] += 1
        picked: list[int] = []
        for c in range(len(classes)):
            take = min(quota[c], len(pools[c]) - heads[c])
            picked.extend(pools[c][heads[c]:heads[c] + take])
            heads[c] += take
        for c in range(len(classes)):
            if len(picked) == per:
                break
            take = min(per - len(picked), len(pools[c]) - heads[c])
            picked.extend(pools[c][heads[c]:heads[c] + take])
            heads[c] += take
        out.append(np.sort(np.array(picked, dtype=int)))
    return out


def make_dataset(cfg: ScenarioConfig, n_samples: int, split: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Synthetic Gaussian-mixture classification data (one blob per class)."""
    d_in, n_cls = cfg.layer_widths[0], cfg.layer_widths[-1]
    centers = rng(cfg.seeds.data, "data", 1).normal(0.0, 1.0, (n_cls, d_in))
    centers *= cfg.class_separation
    g = rng(cfg.seeds.data, "data", 2, split)
    y = g.integers(0, n_cls, n_samples)
    x = centers[y] + g.normal(0.0, 1.0, (n_samples, d_in))
    return x, y
