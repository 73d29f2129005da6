"""One structured configuration document covering every module.

The JSON schema mirrors the dataclass fields one-to-one (arrays as
lists); `default_config()` is the single source of defaults and the
shipped configs/default.json is its serialization.  Units are documented
in the README schema table and in each dataclass docstring.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from .building import (BoxBounds, BuildingParameters, default_parameters,
                       default_q_other)
from .datagen import CalendarClock, GeneratorConfig
from .mpc import OcpConfig, make_ocp_config
from .regressors import GbtConfig
from .twin import ExogenousConfig


@dataclass(frozen=True)
class ControlKnobs:
    """Scalar OCP settings exposed in the config file (see OcpConfig)."""

    np_steps: int = 48
    w_comf: float = 0.99
    w_server: float = 1.0
    w_mon: float = 0.01
    ref_comfort: float = 22.0
    server_lo: float = 15.0
    server_hi: float = 21.0
    c_buy: float = 0.30
    c_sell: float = 0.08
    c_gas: float = 0.13
    c_peak: float = 0.05
    eta_boiler: float = 0.9
    eta_chp_el: float = 0.38
    solver_eps: float = 1e-6
    solver_max_iter: int = 60
    solver_reg: float = 0.0


@dataclass(frozen=True)
class WorldConfig:
    """Everything a scenario run needs, bundled and serializable."""

    seed: int = 42
    year_steps: int = 17520
    start_year: int = 2022
    theta0: tuple = (22.0, 22.0, 22.0, 22.0, 22.0, 22.0, 22.0, 20.0, 20.5)
    e_bat0: float = 49.0
    simulate_prior_year: bool = False
    mismatch_rel: float = 0.0
    ridge_lam: float = 1e-6
    building: BuildingParameters = field(default_factory=default_parameters)
    q_other: tuple = tuple(default_q_other())
    gen: GeneratorConfig = field(default_factory=GeneratorConfig)
    exo: ExogenousConfig = field(default_factory=ExogenousConfig)
    control: ControlKnobs = field(default_factory=ControlKnobs)
    gbt: GbtConfig = field(default_factory=GbtConfig)

    @property
    def clock(self) -> CalendarClock:
        return CalendarClock(start_year=self.start_year)

    def ocp_config(self) -> OcpConfig:
        return make_ocp_config(self.building, q_other=np.asarray(self.q_other),
                               **asdict(self.control))

    # deterministic derived seeds, one per stochastic component
    @property
    def seed_frame_study(self) -> int:
        return self.seed

    @property
    def seed_frame_prior(self) -> int:
        return self.seed + 1

    @property
    def seed_exo_study(self) -> int:
        return self.seed + 2

    @property
    def seed_exo_prior(self) -> int:
        return self.seed + 3


def default_config() -> WorldConfig:
    return WorldConfig()


def _plain(value):
    if isinstance(value, np.ndarray):
        return [_plain(v) for v in value.tolist()]
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    return value


def config_to_dict(cfg: WorldConfig) -> dict:
    out = {}
    for f in fields(cfg):
        v = getattr(cfg, f.name)
        if f.name == "building":
            out[f.name] = {
                "cth": _plain(v.cth), "beta": _plain(v.beta), "ha": _plain(v.ha),
                "eps_c": v.eps_c, "c_chp": v.c_chp, "p_chp_max": v.p_chp_max,
                "e_bat_max": v.e_bat_max, "ts": v.ts,
                "bounds": _plain(asdict(v.bounds)),
            }
        elif hasattr(v, "__dataclass_fields__"):
            out[f.name] = _plain(asdict(v))
        else:
            out[f.name] = _plain(v)
    return out


def config_from_dict(data: dict) -> WorldConfig:
    data = dict(data)
    kwargs = {}
    if "building" in data:
        b = dict(data.pop("building"))
        bounds = b.pop("bounds", None)
        if bounds is not None:
            b["bounds"] = BoxBounds(**{k: tuple(v) for k, v in bounds.items()})
        kwargs["building"] = BuildingParameters(**b)
    for name, cls in (("gen", GeneratorConfig), ("exo", ExogenousConfig),
                      ("control", ControlKnobs), ("gbt", GbtConfig)):
        if name in data:
            raw = {k: tuple(v) if isinstance(v, list) else v
                   for k, v in dict(data.pop(name)).items()}
            kwargs[name] = cls(**raw)
    for key, value in data.items():
        kwargs[key] = tuple(value) if isinstance(value, list) else value
    return WorldConfig(**kwargs)


def save_config(cfg: WorldConfig, path) -> None:
    with open(path, "w") as f:
        json.dump(config_to_dict(cfg), f, indent=2, sort_keys=True)
        f.write("\n")


def load_config(path) -> WorldConfig:
    with open(path) as f:
        return config_from_dict(json.load(f))


def fingerprint(cfg: WorldConfig) -> str:
    """Stable digest of the full configuration."""
    blob = json.dumps(config_to_dict(cfg), sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()[:16]
