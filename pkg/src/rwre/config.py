"""Experiment configuration: a flat, typed key-value file (YAML or JSON)."""
from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path
from typing import Literal, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .env import EnvironmentSpec, InvalidSpec
from .estimators import delta

KINDS = ("simulate", "pathstats", "regen", "velocity", "heatkernel", "separation", "lemma5", "couple")
SEED_ENV = "RWRE_SEED"


class ConfigError(ValueError):
    """The configuration file is unreadable or invalid."""

    def __init__(self, diagnostics: list[str]):
        self.diagnostics = diagnostics
        super().__init__("; ".join(diagnostics))


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: Literal["simulate", "pathstats", "regen", "velocity", "heatkernel", "separation",
                  "lemma5", "couple"]
    # environment
    dim: int = Field(2, ge=2)
    kappa: float = Field(0.05, gt=0)
    family: Literal["iid", "block", "gibbs"] = "iid"
    drift: list[float] = []
    block_range: int = Field(0, ge=0)
    gamma: float = 1.0
    gibbs_range: int = Field(1, ge=1)
    sweeps: int = Field(50, ge=1)
    box_padding: int = Field(4, ge=0)
    coupling: float = Field(1.9, ge=0)
    levels: int = Field(8, ge=2)
    box_lo: list[int] = []
    box_hi: list[int] = []
    # walk and regeneration
    n_steps: int = Field(1000, ge=0)
    L: int = Field(1, ge=1)
    c5: float = Field(2.0, ge=1.0)
    horizon: Optional[int] = Field(None, ge=0)
    lookahead: int = Field(0, ge=0)
    direction: Literal[1, -1] = 1
    # sampling
    replicas: int = Field(1, ge=1)
    seed: int = Field(0, ge=0)
    # velocity
    tau_block: int = Field(50, ge=1)
    n_boot: int = Field(1000, ge=10)
    # heat kernel
    n_grid: list[int] = [10, 15, 22, 33, 50]
    hk_block: int = Field(50, ge=1)
    hk_sequences: int = Field(100_000, ge=1)
    hk_chunk_steps: int = Field(2_000_000, ge=1)
    min_samples: int = Field(10_000, ge=1)
    # separation
    z_norms: list[float] = [20.0, 40.0, 80.0]
    sep_n: int = Field(5, ge=1)
    backward_drift: list[float] = []
    sep_samples: int = Field(1000, ge=1)
    fwd_steps: int = Field(3000, ge=1)
    bwd_steps: int = Field(3000, ge=1)
    # lemma 5 witness
    a_grid: list[float] = [1.0, 2.0, 4.0, 8.0, 16.0]
    l_grid: list[int] = list(range(1, 21))
    M_grid: list[int] = [50, 100, 200]
    # coupling fixtures
    fixture: Optional[str] = None
    states: int = Field(2, ge=2)
    chain_n: int = Field(3, ge=2)
    c: float = Field(1.0, gt=0)
    split_a: float = Field(0.5, gt=0, lt=1)
    population: int = Field(100_000, ge=1)
    # output
    out: str = "out"

    @model_validator(mode="after")
    def _cross(self):
        problems = cross_checks(self)
        if problems:
            raise ValueError("; ".join(problems))
        return self

    def env_spec(self, seed: int | None = None, drift=None) -> EnvironmentSpec:
        return EnvironmentSpec(
            dim=self.dim, kappa=self.kappa, family=self.family,
            drift=tuple(self.drift if drift is None else drift), range=self.block_range,
            gamma=self.gamma, gibbs_range=self.gibbs_range, sweeps=self.sweeps,
            box_padding=self.box_padding, coupling=self.coupling, levels=self.levels,
            seed=self.seed if seed is None else seed,
        )

    def digest(self) -> str:
        blob = json.dumps(self.model_dump(exclude={"out"}), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


def cross_checks(cfg: ExperimentConfig) -> list[str]:
    out = []
    d = cfg.dim
    if not cfg.kappa < 1.0 / (2 * d):
        out.append(f"kappa must be < 1/(2d) = {1.0 / (2 * d):g}")
    for name, vec in (("drift", cfg.drift), ("backward_drift", cfg.backward_drift)):
        if vec and len(vec) != d:
            out.append(f"{name} must have {d} components")
    if not out:
        try:
            cfg.env_spec()
        except InvalidSpec as exc:
            out.append(str(exc))
    if cfg.family == "gibbs":
        if not cfg.gamma > 0:
            out.append("gamma must be > 0 for the gibbs family")
        if len(cfg.box_lo) != d or len(cfg.box_hi) != d:
            out.append(f"gibbs needs box_lo and box_hi with {d} components")
        elif any(h < l for l, h in zip(cfg.box_lo, cfg.box_hi)):
            out.append("box_hi must be >= box_lo in every coordinate")
    if cfg.horizon is not None and cfg.lookahead > cfg.horizon:
        out.append("lookahead must not exceed horizon")
    if cfg.kind == "separation":
        if d < 5:
            out.append(f"separation needs d >= 5: delta(d) = (d-4)/(8(d-1)) = {delta(d)} <= 0")
        if any(zn <= cfg.L + 1 for zn in cfg.z_norms):
            out.append(f"every |z| must exceed L + 1 = {cfg.L + 1}")
    if cfg.kind == "heatkernel" and max(cfg.n_grid, default=0) > cfg.hk_block:
        out.append("n_grid must not exceed hk_block")
    if cfg.kind == "couple" and cfg.states ** cfg.chain_n > 4096 and cfg.fixture is None:
        out.append("states**chain_n too large for exhaustive enumeration")
    return out


def _format_errors(exc: ValidationError) -> list[str]:
    msgs = []
    for e in exc.errors():
        loc = ".".join(str(p) for p in e["loc"])
        msg = e["msg"].removeprefix("Value error, ")
        msgs.append(f"{loc}: {msg}" if loc else msg)
    return msgs


def read_config_file(path) -> dict:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError([f"cannot read {p}: {exc.strerror}"]) from None
    try:
        raw = json.loads(text) if p.suffix == ".json" else yaml.safe_load(text)
    except (json.JSONDecodeError, yaml.YAMLError) as exc:
        raise ConfigError([f"cannot parse {p}: {exc}"]) from None
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ConfigError([f"{p} must hold a key-value mapping"])
    return raw


def validate(raw: dict) -> list[str]:
    """Static diagnostics for a raw mapping; empty when the config is valid."""
    try:
        ExperimentConfig(**raw)
    except ValidationError as exc:
        return _format_errors(exc)
    except Exception as exc:  # diagnostics are returned, never raised
        return [str(exc)]
    return []


def build_config(raw: dict, kind: str | None = None, seed: int | None = None,
                 out: str | None = None, environ=os.environ) -> ExperimentConfig:
    """Apply overrides (flag > RWRE_SEED > file) and validate."""
    raw = dict(raw)
    if kind is not None:
        if "kind" in raw and raw["kind"] != kind:
            raise ConfigError([f"config kind {raw['kind']!r} does not match subcommand {kind!r}"])
        raw["kind"] = kind
    if seed is not None:
        raw["seed"] = seed
    elif environ.get(SEED_ENV):
        try:
            raw["seed"] = int(environ[SEED_ENV])
        except ValueError:
            raise ConfigError([f"{SEED_ENV} must be an integer"]) from None
    if out is not None:
        raw["out"] = out
    diags = validate(raw)
    if diags:
        raise ConfigError(diags)
    return ExperimentConfig(**raw)
