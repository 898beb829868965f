"""Network drops: geometry with wrap-around, large-scale fading, blocking and configuration files."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import yaml

from .correlation import CorrelationSet, RisGeometry, scaled_covariances, sinc_correlation_matrix
from .errors import ConfigError, InvalidParameterError
from .estimation import PilotPlan
from .phase import PhaseConfig, equal_phase_design, random_phase_design
from .throughput import FrameConfig, LinkModel

SPEED_OF_LIGHT = 299_792_458.0
REGION_SIZE_KM = 1.0
VARIANTS = ("ris_cellfree", "cellfree", "ris_cellfree_nolos")
RIS_GAIN_MODELS = ("free_space", "three_slope")
CORRELATION_MODELS = ("sinc", "iid")
PHASE_POLICIES = ("equal", "random")


@dataclass(frozen=True)
class NetworkConfig:
    m_aps: int
    k_users: int
    ap_region_km: tuple = (-0.5, -0.25)
    user_region_km: tuple = (0.25, 0.5)
    ap_height_m: float = 15.0
    user_height_m: float = 1.65
    unblocked_probability: float = 1.0


@dataclass(frozen=True)
class RisConfig:
    n_h: int
    n_v: int
    d_h_wavelengths: float = 0.25
    d_v_wavelengths: float = 0.25
    position_km: tuple = (0.0, 0.0)
    height_m: float = 30.0
    gain_model: str = "free_space"
    shadowing: bool = True
    correlation: str = "sinc"


@dataclass(frozen=True)
class PropagationConfig:
    carrier_mhz: float = 1900.0
    shadow_std_db: float = 8.0
    d0_m: float = 10.0
    d1_m: float = 50.0


@dataclass(frozen=True)
class PowerSettings:
    noise_dbm: float = -92.0
    pilot_mw: float = 100.0
    uplink_mw: float = 100.0
    ap_mw: float = 200.0


@dataclass(frozen=True)
class FrameSettings:
    bandwidth_mhz: float = 20.0
    tau_c: int = 200
    tau_p: int = 5
    nu_u: float = 0.5
    nu_d: float = 0.5


@dataclass(frozen=True)
class PhaseSettings:
    policy: str = "equal"
    theta0: float = math.pi / 4


@dataclass(frozen=True)
class ScenarioConfig:
    """Complete, serializable description of an experiment setup."""

    network: NetworkConfig
    ris: RisConfig
    propagation: PropagationConfig = field(default_factory=PropagationConfig)
    power: PowerSettings = field(default_factory=PowerSettings)
    frame: FrameSettings = field(default_factory=FrameSettings)
    phase: PhaseSettings = field(default_factory=PhaseSettings)
    seed: int = 0

    def __post_init__(self):
        validate_config(self)

    def replace(self, **sections) -> "ScenarioConfig":
        """Copy with some fields changed; keys are ``section.field`` or top-level names."""
        top = {}
        nested = {}
        for key, value in sections.items():
            if "." in key or "__" in key:
                sec, name = key.replace("__", ".").split(".", 1)
                nested.setdefault(sec, {})[name] = value
            else:
                top[key] = value
        for sec, changes in nested.items():
            top[sec] = dataclasses.replace(top.get(sec, getattr(self, sec)), **changes)
        return dataclasses.replace(self, **top)

    @property
    def wavelength_m(self) -> float:
        return SPEED_OF_LIGHT / (self.propagation.carrier_mhz * 1e6)

    def ris_geometry(self) -> RisGeometry:
        lam = self.wavelength_m
        return RisGeometry(
            self.ris.n_h, self.ris.n_v, self.ris.d_h_wavelengths * lam, self.ris.d_v_wavelengths * lam, lam
        )

    def frame_config(self) -> FrameConfig:
        f = self.frame
        return FrameConfig(f.bandwidth_mhz, f.tau_c, f.tau_p, f.nu_u, f.nu_d)

    @property
    def pilot_snr(self) -> float:
        return normalized_snr(self.power.pilot_mw, self.power.noise_dbm)

    @property
    def uplink_snr(self) -> float:
        return normalized_snr(self.power.uplink_mw, self.power.noise_dbm)

    @property
    def downlink_snr(self) -> float:
        return normalized_snr(self.power.ap_mw, self.power.noise_dbm)

    def fingerprint(self) -> str:
        """Short hash of the canonical configuration."""
        blob = json.dumps(config_to_dict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def validate_config(cfg: ScenarioConfig) -> None:
    n, r, p, pw, fr, ph = cfg.network, cfg.ris, cfg.propagation, cfg.power, cfg.frame, cfg.phase

    def need(cond, path, msg):
        if not cond:
            raise ConfigError(path, msg)

    need(n.m_aps >= 1, "network.m_aps", "must be >= 1")
    need(n.k_users >= 1, "network.k_users", "must be >= 1")
    for name in ("ap_region_km", "user_region_km"):
        lo, hi = getattr(n, name)
        need(-0.5 <= lo <= hi <= 0.5, f"network.{name}", "must satisfy -0.5 <= lo <= hi <= 0.5")
    need(0.0 <= n.unblocked_probability <= 1.0, "network.unblocked_probability", "must lie in [0, 1]")
    need(n.ap_height_m > 0 and n.user_height_m > 0, "network.ap_height_m", "heights must be positive")
    need(r.n_h >= 1 and r.n_v >= 1, "ris.n_h", "element counts must be >= 1")
    need(r.d_h_wavelengths > 0 and r.d_v_wavelengths > 0, "ris.d_h_wavelengths", "element size must be positive")
    need(r.height_m > 0, "ris.height_m", "must be positive")
    need(r.gain_model in RIS_GAIN_MODELS, "ris.gain_model", f"must be one of {RIS_GAIN_MODELS}")
    need(r.correlation in CORRELATION_MODELS, "ris.correlation", f"must be one of {CORRELATION_MODELS}")
    need(p.carrier_mhz > 0, "propagation.carrier_mhz", "must be positive")
    need(p.shadow_std_db >= 0, "propagation.shadow_std_db", "must be nonnegative")
    need(0 < p.d0_m < p.d1_m, "propagation.d0_m", "need 0 < d0 < d1")
    for name in ("pilot_mw", "uplink_mw", "ap_mw"):
        need(getattr(pw, name) >= 0, f"power.{name}", "must be nonnegative")
    need(0 < fr.tau_p < fr.tau_c, "frame.tau_p", "need 0 < tau_p < tau_c")
    need(fr.bandwidth_mhz > 0, "frame.bandwidth_mhz", "must be positive")
    need(abs(fr.nu_u + fr.nu_d - 1.0) <= 1e-12 and fr.nu_u >= 0 and fr.nu_d >= 0, "frame.nu_u", "nu_u + nu_d must be 1")
    need(ph.policy in PHASE_POLICIES, "phase.policy", f"must be one of {PHASE_POLICIES}")
    need(-math.pi <= ph.theta0 <= math.pi, "phase.theta0", "must lie in [-pi, pi]")


_SECTIONS = {
    "network": NetworkConfig,
    "ris": RisConfig,
    "propagation": PropagationConfig,
    "power": PowerSettings,
    "frame": FrameSettings,
    "phase": PhaseSettings,
}


def config_to_dict(cfg: ScenarioConfig) -> dict:
    out = {}
    for name in _SECTIONS:
        sec = dataclasses.asdict(getattr(cfg, name))
        out[name] = {k: list(v) if isinstance(v, tuple) else v for k, v in sec.items()}
    out["seed"] = cfg.seed
    return out


def _coerce(value, default, path):
    """Check ``value`` against the type of the field default."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(path, f"expected a boolean, got {value!r}")
        return value
    if isinstance(default, int) or default is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(path, f"expected an integer, got {value!r}")
        return value
    if isinstance(default, float) or default is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(path, f"expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str) or default is str:
        if not isinstance(value, str):
            raise ConfigError(path, f"expected a string, got {value!r}")
        return value
    if isinstance(default, tuple) or default is tuple:
        if not isinstance(value, (list, tuple)) or len(value) != 2:
            raise ConfigError(path, f"expected a pair of numbers, got {value!r}")
        return tuple(_coerce(v, 0.0, f"{path}[{i}]") for i, v in enumerate(value))
    return value


_REQUIRED_TYPES = {"m_aps": int, "k_users": int, "n_h": int, "n_v": int}


def config_from_dict(data) -> ScenarioConfig:
    """Build a validated config; errors carry the dotted path of the offending field."""
    if not isinstance(data, dict):
        raise ConfigError("<root>", "configuration must be a mapping")
    unknown = set(data) - set(_SECTIONS) - {"seed"}
    if unknown:
        raise ConfigError(sorted(unknown)[0], "unknown field")
    sections = {}
    for name, cls in _SECTIONS.items():
        raw = data.get(name)
        if raw is None:
            if name in ("network", "ris"):
                raise ConfigError(name, "missing required section")
            raw = {}
        if not isinstance(raw, dict):
            raise ConfigError(name, "section must be a mapping")
        fields = {f.name: f for f in dataclasses.fields(cls)}
        extra = set(raw) - set(fields)
        if extra:
            raise ConfigError(f"{name}.{sorted(extra)[0]}", "unknown field")
        kwargs = {}
        for fname, f in fields.items():
            path = f"{name}.{fname}"
            if fname not in raw:
                if f.default is dataclasses.MISSING:
                    raise ConfigError(path, "missing required field")
                continue
            default = f.default if f.default is not dataclasses.MISSING else _REQUIRED_TYPES[fname]
            kwargs[fname] = _coerce(raw[fname], default, path)
        sections[name] = cls(**kwargs)
    seed = data.get("seed", 0)
    seed = _coerce(seed, 0, "seed")
    if seed < 0:
        raise ConfigError("seed", "must be nonnegative")
    return ScenarioConfig(seed=seed, **sections)


def load_config(path) -> ScenarioConfig:
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError("<root>", f"invalid YAML in {path}: {exc}") from exc
    return config_from_dict(data)


def save_config(cfg: ScenarioConfig, path) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(config_to_dict(cfg), fh, sort_keys=False)


PRESETS = {
    # full-scale deployment
    "full": dict(network=dict(m_aps=100, k_users=10, unblocked_probability=0.2), ris=dict(n_h=30, n_v=30)),
    # halved M and N for desk-scale runs
    "desk": dict(network=dict(m_aps=50, k_users=10, unblocked_probability=0.2), ris=dict(n_h=20, n_v=20)),
    # Monte Carlo versus closed-form comparison setup
    "validation": dict(
        network=dict(m_aps=20, k_users=5, unblocked_probability=1.0), ris=dict(n_h=8, n_v=8), frame=dict(tau_p=2)
    ),
    "tiny": dict(
        network=dict(m_aps=4, k_users=3, unblocked_probability=0.5), ris=dict(n_h=2, n_v=2), frame=dict(tau_p=2)
    ),
}


def preset(name: str, seed: int = 0) -> ScenarioConfig:
    if name not in PRESETS:
        raise ConfigError("preset", f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    data = json.loads(json.dumps(PRESETS[name]))
    data["seed"] = seed
    return config_from_dict(data)


def normalized_snr(power_mw: float, noise_dbm: float) -> float:
    """Transmit power over noise power, both converted to linear milliwatts."""
    return power_mw / 10 ** (noise_dbm / 10)


# ---------------------------------------------------------------------------
# geometry and propagation


@dataclass(frozen=True, eq=False)
class Geometry:
    """Planar positions in km; heights are carried by the config."""

    ap_xy: np.ndarray
    user_xy: np.ndarray
    ris_xy: np.ndarray


def generate_geometry(cfg: ScenarioConfig, rng: np.random.Generator) -> Geometry:
    """APs and users uniform in their square sub-regions, RIS at its fixed position."""
    lo, hi = cfg.network.ap_region_km
    ap = rng.uniform(lo, hi, (cfg.network.m_aps, 2))
    lo, hi = cfg.network.user_region_km
    users = rng.uniform(lo, hi, (cfg.network.k_users, 2))
    return Geometry(ap, users, np.asarray(cfg.ris.position_km, dtype=float))


def wraparound_distance(a, b, height_diff_m=0.0, period_km: float = REGION_SIZE_KM) -> np.ndarray:
    """Distance in km on a torus of side ``period_km``, combined with a height offset.

    ``a`` and ``b`` are ``(..., 2)`` arrays that broadcast against each other.
    """
    d = np.abs(np.asarray(a, dtype=float) - np.asarray(b, dtype=float))
    d = np.minimum(d, period_km - d)
    planar2 = np.sum(d**2, axis=-1)
    return np.sqrt(planar2 + (np.asarray(height_diff_m) / 1000.0) ** 2)


def cost_hata_constant(carrier_mhz: float, h_ap_m: float, h_user_m: float) -> float:
    """Frequency/height term ``L`` (dB) of the COST-Hata model."""
    lf = math.log10(carrier_mhz)
    return (
        46.3
        + 33.9 * lf
        - 13.82 * math.log10(h_ap_m)
        - (1.1 * lf - 0.7) * h_user_m
        + (1.56 * lf - 0.8)
    )


def three_slope_pathloss_db(distance_km, loss_db: float, d0_m: float = 10.0, d1_m: float = 50.0) -> np.ndarray:
    """Path loss (negative dB) of the three-slope model, without shadowing."""
    d = np.asarray(distance_km, dtype=float)
    if np.any(d <= 0):
        raise InvalidParameterError("distances must be positive")
    d0, d1 = d0_m / 1000.0, d1_m / 1000.0
    far = -loss_db - 35 * np.log10(np.maximum(d, d1))
    mid = -loss_db - 15 * np.log10(d1) - 20 * np.log10(np.clip(d, d0, d1))
    return np.where(d > d1, far, mid)


def three_slope_pathloss(distance_km, shadow_sample_db=0.0, loss_db: Optional[float] = None, d0_m=10.0, d1_m=50.0):
    """Linear large-scale gain; shadowing applies only beyond ``d1``."""
    if loss_db is None:
        loss_db = cost_hata_constant(1900.0, 15.0, 1.65)
    d = np.asarray(distance_km, dtype=float)
    pl = three_slope_pathloss_db(d, loss_db, d0_m, d1_m)
    pl = pl + np.where(d > d1_m / 1000.0, shadow_sample_db, 0.0)
    return 10 ** (pl / 10)


def sample_blocking(k_users: int, m_aps: int, unblocked_probability: float, rng: np.random.Generator) -> np.ndarray:
    """I.i.d. Bernoulli indicators ``a_mk``, shape ``(M, K)``; one means unblocked."""
    if not 0.0 <= unblocked_probability <= 1.0:
        raise InvalidParameterError("unblocked probability must lie in [0, 1]")
    return (rng.random((m_aps, k_users)) < unblocked_probability).astype(float)


def ris_link_gains(
    ap_xy,
    user_xy,
    ris_xy,
    ap_height_m=15.0,
    user_height_m=1.65,
    ris_height_m=30.0,
    model: str = "free_space",
    ap_shadow_db=None,
    user_shadow_db=None,
    loss_db: Optional[float] = None,
    d0_m=10.0,
    d1_m=50.0,
):
    """Large-scale gains ``alpha_m`` (AP-RIS) and ``alpha~_mk`` (RIS-user).

    ``free_space`` gives the spherical spreading ``1 / (4 pi d^2)`` in m^-2,
    so ``alpha d_H d_V`` is the fraction of radiated power intercepted by one
    element. ``three_slope`` reuses the direct-link model. Shadow samples,
    if given, are in dB with shapes ``(M,)`` and ``(K,)``; the RIS-user gain
    depends only on the user.
    """
    ap_xy = np.asarray(ap_xy, dtype=float)
    user_xy = np.asarray(user_xy, dtype=float)
    d_ap = wraparound_distance(ap_xy, ris_xy, ris_height_m - ap_height_m)
    d_user = wraparound_distance(user_xy, ris_xy, ris_height_m - user_height_m)
    if model == "free_space":
        g_ap = 1.0 / (4 * np.pi * (d_ap * 1000.0) ** 2)
        g_user = 1.0 / (4 * np.pi * (d_user * 1000.0) ** 2)
    elif model == "three_slope":
        g_ap = three_slope_pathloss(d_ap, 0.0, loss_db, d0_m, d1_m)
        g_user = three_slope_pathloss(d_user, 0.0, loss_db, d0_m, d1_m)
    else:
        raise InvalidParameterError(f"unknown RIS gain model {model!r}")
    if ap_shadow_db is not None:
        g_ap = g_ap * 10 ** (np.asarray(ap_shadow_db) / 10)
    if user_shadow_db is not None:
        g_user = g_user * 10 ** (np.asarray(user_shadow_db) / 10)
    alpha_link = np.broadcast_to(g_user[None, :], (ap_xy.shape[0], user_xy.shape[0])).copy()
    return g_ap, alpha_link


# ---------------------------------------------------------------------------
# scenarios


@dataclass(frozen=True, eq=False)
class Scenario:
    """One network drop together with the configuration that produced it.

    ``blocking_uniforms`` are the uniform draws behind the blocking
    indicators, kept so the same drop can be re-evaluated at another
    unblocked probability. ``correlations`` always describe the deployed
    surface; the variant decides whether it is used.
    """

    config: ScenarioConfig
    geometry: Geometry
    beta_bar: np.ndarray
    blocking_uniforms: np.ndarray
    alpha_ap: np.ndarray
    alpha_link: np.ndarray
    correlations: CorrelationSet
    plan: PilotPlan
    variant: str = "ris_cellfree"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise InvalidParameterError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")

    @property
    def blocking(self) -> np.ndarray:
        """Indicators ``a_mk``; all zero for the variant without direct links."""
        if self.variant == "ris_cellfree_nolos":
            return np.zeros_like(self.beta_bar)
        return (self.blocking_uniforms < self.config.network.unblocked_probability).astype(float)

    @property
    def large_scale(self) -> np.ndarray:
        return self.beta_bar * self.blocking

    @property
    def effective_correlations(self) -> CorrelationSet:
        if self.variant == "cellfree":
            return self.correlations.without_ris()
        return self.correlations

    @property
    def m(self) -> int:
        return self.config.network.m_aps

    @property
    def k(self) -> int:
        return self.config.network.k_users

    @property
    def n(self) -> int:
        return self.correlations.n

    def link_model(self) -> LinkModel:
        c = self.config
        return LinkModel(
            self.large_scale, self.effective_correlations, self.plan, c.pilot_snr, c.uplink_snr, c.downlink_snr
        )

    def phase(self, rng: Optional[np.random.Generator] = None) -> PhaseConfig:
        """Phase configuration of the configured policy; ``random`` needs an rng."""
        ph = self.config.phase
        if ph.policy == "equal":
            return equal_phase_design(self.n, ph.theta0)
        if rng is None:
            raise InvalidParameterError("random phase policy needs an rng")
        return random_phase_design(self.n, rng)

    def as_variant(self, name: str) -> "Scenario":
        """Same drop seen as another system configuration.

        ``cellfree`` removes the surface; ``ris_cellfree_nolos`` blocks every
        direct link.
        """
        return dataclasses.replace(self, variant=name)

    def with_unblocked_probability(self, p: float) -> "Scenario":
        cfg = self.config.replace(**{"network.unblocked_probability": float(p)})
        return dataclasses.replace(self, config=cfg)

    def first_aps(self, m: int) -> "Scenario":
        """The same drop restricted to its first ``m`` access points."""
        if not 1 <= m <= self.m:
            raise InvalidParameterError(f"cannot keep {m} of {self.m} access points")
        c = self.correlations
        cfg = self.config.replace(**{"network.m_aps": int(m)})
        geo = Geometry(self.geometry.ap_xy[:m], self.geometry.user_xy, self.geometry.ris_xy)
        return dataclasses.replace(
            self, config=cfg, geometry=geo, beta_bar=self.beta_bar[:m], blocking_uniforms=self.blocking_uniforms[:m],
            alpha_ap=self.alpha_ap[:m], alpha_link=self.alpha_link[:m],
            correlations=CorrelationSet(c.base, c.ap_scale[:m], c.link_scale[:m]),
        )

    def with_correlation(self, model: str) -> "Scenario":
        """Swap the base correlation between the sinc model and the identity."""
        if model not in CORRELATION_MODELS:
            raise InvalidParameterError(f"unknown correlation model {model!r}")
        c = self.correlations
        base = sinc_correlation_matrix(self.config.ris_geometry()) if model == "sinc" else np.eye(c.n)
        cfg = self.config.replace(**{"ris.correlation": model})
        return dataclasses.replace(self, config=cfg, correlations=CorrelationSet(base, c.ap_scale, c.link_scale))


def build_scenario(cfg: ScenarioConfig, rng=None, variant: str = "ris_cellfree") -> Scenario:
    """Draw a network drop.

    Random draws happen in a fixed order (AP/user positions, direct-link
    shadowing, RIS-link shadowing, blocking uniforms) so that variants and
    sweeps over the blocking probability share the same layout.
    """
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    net, ris, prop = cfg.network, cfg.ris, cfg.propagation
    geo = generate_geometry(cfg, rng)
    loss = cost_hata_constant(prop.carrier_mhz, net.ap_height_m, net.user_height_m)
    d_direct = wraparound_distance(geo.ap_xy[:, None, :], geo.user_xy[None, :, :], net.ap_height_m - net.user_height_m)
    shadow = prop.shadow_std_db * rng.standard_normal(d_direct.shape)
    beta_bar = three_slope_pathloss(d_direct, shadow, loss, prop.d0_m, prop.d1_m)
    ap_sh = prop.shadow_std_db * rng.standard_normal(net.m_aps)
    user_sh = prop.shadow_std_db * rng.standard_normal(net.k_users)
    if not ris.shadowing:
        ap_sh = user_sh = None
    alpha_ap, alpha_link = ris_link_gains(
        geo.ap_xy, geo.user_xy, geo.ris_xy, net.ap_height_m, net.user_height_m, ris.height_m,
        ris.gain_model, ap_sh, user_sh, loss, prop.d0_m, prop.d1_m,
    )
    uniforms = rng.random((net.m_aps, net.k_users))
    rg = cfg.ris_geometry()
    base = sinc_correlation_matrix(rg) if ris.correlation == "sinc" else np.eye(rg.n)
    corr = scaled_covariances(base, alpha_ap, alpha_link, rg.d_h, rg.d_v)
    plan = PilotPlan.round_robin(net.k_users, cfg.frame.tau_p)
    return Scenario(cfg, geo, beta_bar, uniforms, alpha_ap, alpha_link, corr, plan, variant)
