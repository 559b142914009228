"""JSON experiment configuration.

One document per experiment with sections ``dynamics``, ``safety``,
``certificate``, ``ocp``, ``scenario`` and ``verifier`` (plus an optional
``sweep``). Every key has a default, so ``{}`` is a valid configuration.
Unknown keys are rejected to catch typos early.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Optional

from .errors import ConfigError, InvalidParameterError
from .interval import Box
from .ocp import CertificateParams, OcpConfig
from .safety import ActivationParams, SafetyParams
from .simloop import ScenarioConfig
from .certify import VerifyParams

SECTIONS = ("dynamics", "safety", "certificate", "ocp", "scenario", "verifier", "sweep")

DEFAULTS: dict[str, dict[str, Any]] = {
    "dynamics": {"Ts": 0.1, "agent_length": 4.2, "agent_width": 2.0},
    "safety": {"d0": 5.0, "t_h": 1.0, "m_lf": 10.0, "p0": [0.4, -45.0], "eps_d": 0.0025, "s_lc": -39.5},
    "certificate": {"gamma_v": 0.8, "gamma_d": 0.15, "pN": [0.06, -75.0], "dv_min": 0.01},
    "ocp": {
        "mode": "certified", "N": 15, "Q": [0.0, 10.0, 0.0, 10.0], "Q_N": None, "R": [1.0, 1.0],
        "input_bounds": [[-3.0, 3.0], [-3.0, 3.0]], "v_max": 15.0,
        "tol": 1e-6, "max_iter": 200,
    },
    "scenario": {
        "name": "scenario1", "x0": [-165.0, 13.0, -160.0, 12.5], "v_refs": [13.0, 12.5],
        "duration": 12.0, "seed": 0,
    },
    "verifier": {
        "cert": "qdtcbf", "input_bounds": [[-4.8, 4.8], [-4.8, 4.8]], "v_max": 14.5,
        "s_range": [-250.0, 60.0], "v_range": None, "tol": 1e-6, "budget": 5_000_000,
    },
    "sweep": {
        "kind": "gamma_list", "gammas": [0.05, 0.2, 0.4, 0.6], "horizons": [4, 6],
        "modes": ["qdtcbf", "dtcbf"], "bisection_tol": 0.05, "bracket": [0.5, 10.0],
        "screen_budget": 50_000,
    },
}


def _merge(raw: dict) -> dict:
    if not isinstance(raw, dict):
        raise ConfigError("configuration must be a JSON object")
    unknown = set(raw) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown section(s) {sorted(unknown)}; expected {list(SECTIONS)}")
    out = {}
    for sec in SECTIONS:
        given = raw.get(sec, {})
        if not isinstance(given, dict):
            raise ConfigError(f"section {sec!r} must be an object")
        bad = set(given) - set(DEFAULTS[sec])
        if bad:
            raise ConfigError(f"unknown key(s) {sorted(bad)} in section {sec!r}")
        out[sec] = {**DEFAULTS[sec], **given}
    return out


def _pair(v, what: str) -> tuple:
    try:
        a, b = (float(x) for x in v)
    except (TypeError, ValueError):
        raise ConfigError(f"{what} must be a pair of numbers, got {v!r}") from None
    return a, b


@dataclass
class ExperimentConfig:
    """Resolved configuration; ``raw`` is the full self-contained snapshot."""

    raw: dict
    scenario: ScenarioConfig
    verify: VerifyParams
    domain: Box
    s_lc: float
    verifier_mode: str
    verifier_tol: float
    verifier_budget: int
    solver_tol: float
    solver_max_iter: int
    sweep: dict = field(default_factory=dict)

    @property
    def ocp(self) -> OcpConfig:
        return self.scenario.ocp

    def snapshot(self) -> dict:
        return json.loads(json.dumps(self.raw))


def resolve(raw: dict) -> ExperimentConfig:
    """Validate a configuration dict and build the typed parameter objects."""
    c = _merge(raw)
    dy, sa, ce, oc, sc, ve = (c[k] for k in SECTIONS[:6])
    try:
        safety = SafetyParams(d0=float(sa["d0"]), t_h=float(sa["t_h"]), m_lf=float(sa["m_lf"]),
                              p0=ActivationParams(*_pair(sa["p0"], "safety.p0")),
                              pN=ActivationParams(*_pair(ce["pN"], "certificate.pN")),
                              eps_d=float(sa["eps_d"]), v_max=float(oc["v_max"]))
        cert = CertificateParams(gamma_v=float(ce["gamma_v"]), gamma_d=float(ce["gamma_d"]),
                                 pN=safety.pN, dv_min=float(ce["dv_min"]))
        Q = tuple(map(float, oc["Q"]))
        ocp = OcpConfig(N=int(oc["N"]), Q=Q, Q_N=Q if oc["Q_N"] is None else tuple(map(float, oc["Q_N"])),
                        R=tuple(map(float, oc["R"])), v_refs=_pair(sc["v_refs"], "scenario.v_refs"),
                        input_bounds=tuple(_pair(b, "ocp.input_bounds") for b in oc["input_bounds"]),
                        v_max=float(oc["v_max"]), Ts=float(dy["Ts"]), safety=safety, cert=cert,
                        mode=str(oc["mode"]))
        scenario = ScenarioConfig(x0=tuple(map(float, sc["x0"])), duration=float(sc["duration"]), ocp=ocp,
                                  seed=int(sc["seed"]), name=str(sc["name"]))
        v_max_ver = float(ve["v_max"])
        vp = VerifyParams(safety=SafetyParams(d0=safety.d0, t_h=safety.t_h, m_lf=safety.m_lf, p0=safety.p0,
                                              pN=safety.pN, eps_d=safety.eps_d, v_max=v_max_ver),
                          cert=cert, input_bounds=tuple(_pair(b, "verifier.input_bounds") for b in ve["input_bounds"]),
                          v_max=v_max_ver, Ts=ocp.Ts)
        v_range = (0.0, v_max_ver) if ve["v_range"] is None else _pair(ve["v_range"], "verifier.v_range")
        domain = Box.from_bounds(_pair(ve["s_range"], "verifier.s_range"), v_range)
    except (InvalidParameterError, ValueError, TypeError) as exc:
        raise ConfigError(str(exc)) from exc
    if ve["cert"] not in ("qdtcbf", "dtcbf"):
        raise ConfigError(f"verifier.cert must be qdtcbf or dtcbf, got {ve['cert']!r}")
    if not float(ve["tol"]) > 0 or int(ve["budget"]) < 1:
        raise ConfigError("verifier.tol must be > 0 and verifier.budget >= 1")
    return ExperimentConfig(raw=c, scenario=scenario, verify=vp, domain=domain, s_lc=float(sa["s_lc"]),
                            verifier_mode=ve["cert"], verifier_tol=float(ve["tol"]),
                            verifier_budget=int(ve["budget"]), solver_tol=float(oc["tol"]),
                            solver_max_iter=int(oc["max_iter"]), sweep=dict(c["sweep"]))


def loads(text: str) -> ExperimentConfig:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    return resolve(raw)


def load(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    return loads(text)


def bundled(name: str) -> Path:
    """Path of a configuration shipped with the package (``scenario1``, ``scenario2``)."""
    fname = name if name.endswith(".json") else f"{name}.json"
    p = resources.files("cbfmpc").joinpath("configs", fname)
    if not p.is_file():
        raise ConfigError(f"no bundled configuration named {name!r}")
    return Path(str(p))


def load_bundled(name: str) -> ExperimentConfig:
    return load(bundled(name))


def with_overrides(cfg: ExperimentConfig, **sections: Optional[dict]) -> ExperimentConfig:
    """Re-resolve with some keys replaced, e.g. ``with_overrides(c, certificate={"gamma_d": 0.6})``."""
    raw = cfg.snapshot()
    for sec, upd in sections.items():
        if upd:
            raw[sec] = {**raw.get(sec, {}), **upd}
    return resolve(raw)
