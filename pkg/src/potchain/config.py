"""Run configuration: INI-style config files for experiments.

A config file has sections [run], [trust], [difficulty], [csc], [sac],
[simulation], [population], and optionally [sensing-experiment] and
[demo]. Every bundled preset under configs/ is a complete example.

Population entries are `kind = count, p_d, p_f, participation, attack_period`,
one line per node kind.
"""

from __future__ import annotations

import configparser
from dataclasses import dataclass
from pathlib import Path

from .consensus import DifficultyParams
from .simnet import (
    NodeKind,
    NodeProfile,
    PopulationGroup,
    SelectionScheme,
    SimConfig,
)
from .trust import TrustParams, check_onoff_resistance

EXPERIMENTS = ("mining-cost", "sensing", "onoff", "demo-round")

KIND_BY_NAME = {
    "rnode": NodeKind.RNODE,
    "oonode": NodeKind.OONODE,
    "lnode": NodeKind.LNODE,
    "uanode": NodeKind.UANODE,
}


class ConfigInvalid(Exception):
    """Names the offending config field in its message."""

    def __init__(self, field_name: str, message: str):
        self.field_name = field_name
        super().__init__(f"{field_name}: {message}")


@dataclass
class RunConfig:
    experiment: str
    sim: SimConfig
    output_dir: str = "out"
    n1_sweep: tuple[int, ...] = (3, 5, 7, 20)
    rounds_per_point: int = 500
    pu_force: str = "idle"          # demo-round only
    recovery_error_round: int | None = None

    def validate(self) -> None:
        if self.experiment not in EXPERIMENTS:
            raise ConfigInvalid("run.experiment",
                                f"must be one of {', '.join(EXPERIMENTS)}")
        if not self.sim.population:
            raise ConfigInvalid("population", "at least one node kind required")
        trust = self.sim.trust
        try:
            trust.validate()
        except ValueError as exc:
            raise ConfigInvalid("trust", str(exc)) from exc
        try:
            self.sim.difficulty.validate()
        except ValueError as exc:
            raise ConfigInvalid("difficulty", str(exc)) from exc
        for group in self.sim.population:
            try:
                group.profile.validate()
            except ValueError as exc:
                raise ConfigInvalid("population", str(exc)) from exc
            if group.count < 1:
                raise ConfigInvalid("population", "count must be >= 1")
        if self.experiment != "demo-round" and not check_onoff_resistance(
                trust.rho, trust.eta):
            raise ConfigInvalid(
                "trust.rho",
                f"on-off resistance requires rho > eta/(1-exp(-eta)) - eta; "
                f"rho={trust.rho} fails the bound for eta={trust.eta}")
        if self.experiment == "sensing" and not self.n1_sweep:
            raise ConfigInvalid("sensing-experiment.n1_sweep", "empty sweep")
        if self.pu_force not in ("none", "idle"):
            raise ConfigInvalid("demo.pu_force", "must be 'none' or 'idle'")
        if self.sim.rounds < 0:
            raise ConfigInvalid("run.rounds", "must be >= 0")
        if self.sim.n1 < 1:
            raise ConfigInvalid("csc.n1", "must be >= 1")
        if not 0.0 <= self.sim.p_active <= 1.0:
            raise ConfigInvalid("simulation.p_active", "outside [0, 1]")


def _get(parser, section, option, conv, default, path=None):
    if not parser.has_option(section, option):
        if default is not None:
            return default
        raise ConfigInvalid(f"{section}.{option}", "missing required option")
    raw = parser.get(section, option).strip()
    if raw == "" and default is not None:
        return default
    try:
        return conv(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigInvalid(f"{section}.{option}", f"bad value {raw!r}") from exc


def _bool(raw: str) -> bool:
    lowered = raw.lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(raw)


def _population(parser) -> tuple[PopulationGroup, ...]:
    if not parser.has_section("population"):
        raise ConfigInvalid("population", "missing section")
    groups = []
    for key, raw in parser.items("population"):
        kind = KIND_BY_NAME.get(key.lower())
        if kind is None:
            raise ConfigInvalid(f"population.{key}", "unknown node kind")
        parts = [p.strip() for p in raw.split(",")]
        if len(parts) not in (3, 4, 5):
            raise ConfigInvalid(f"population.{key}",
                                "expect count, p_d, p_f[, participation[, attack_period]]")
        try:
            count = int(parts[0])
            p_d, p_f = float(parts[1]), float(parts[2])
            participation = float(parts[3]) if len(parts) > 3 else 1.0
            attack = int(parts[4]) if len(parts) > 4 else 0
        except ValueError as exc:
            raise ConfigInvalid(f"population.{key}", f"bad value in {raw!r}") from exc
        profile = NodeProfile(kind=kind, p_d=p_d, p_f=p_f,
                              participation=participation, attack_period=attack)
        groups.append(PopulationGroup(profile=profile, count=count))
    return tuple(groups)


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigInvalid("config", f"file not found: {path}")
    parser = configparser.ConfigParser()
    try:
        parser.read(path)
    except configparser.Error as exc:
        raise ConfigInvalid("config", f"parse error: {exc}") from exc

    trust = TrustParams(
        rho=_get(parser, "trust", "rho", float, 1.0),
        eta=_get(parser, "trust", "eta", float, 1.0),
        window=_get(parser, "trust", "window", int, 10),
        k1=_get(parser, "trust", "k1", int, 5),
        k2=_get(parser, "trust", "k2", int, 20),
        r1=_get(parser, "trust", "r1", float, 0.9),
        r2=_get(parser, "trust", "r2", float, 0.5),
    )
    difficulty = DifficultyParams(
        beta0=_get(parser, "difficulty", "beta0", int, 262144),
        t0_ms=_get(parser, "difficulty", "t0_ms", int, 1000),
        beta_min=_get(parser, "difficulty", "beta_min", int, 1024),
    )
    selection_raw = _get(parser, "simulation", "selection", str, "trust-value")
    try:
        selection = SelectionScheme(selection_raw)
    except ValueError:
        raise ConfigInvalid("simulation.selection",
                            f"unknown scheme {selection_raw!r}")
    warmup = _get(parser, "simulation", "warmup_rounds", int, -1)
    sim = SimConfig(
        seed=_get(parser, "run", "seed", int, 42),
        trust=trust,
        difficulty=difficulty,
        population=_population(parser),
        rounds=_get(parser, "run", "rounds", int, 100),
        warmup_rounds=None if warmup < 0 else warmup,
        selection=selection,
        n1=_get(parser, "csc", "n1", int, 20),
        tv_thr=_get(parser, "csc", "tv_thr", float, 0.0),
        d_s=_get(parser, "csc", "d_s", int, 100),
        reward_sensing=_get(parser, "csc", "reward_sensing", int, 150),
        n2=_get(parser, "sac", "n2", int, 8),
        d_a=_get(parser, "sac", "d_a", int, 100),
        commit_cap=_get(parser, "sac", "commit_cap", int, 8),
        reward_mining=_get(parser, "simulation", "reward_mining", int, 50),
        p_active=_get(parser, "simulation", "p_active", float, 0.5),
        initial_balance=_get(parser, "simulation", "initial_balance", int, 1_000_000),
        chain_beta=_get(parser, "simulation", "chain_beta", int, 16),
        rsa_bits=_get(parser, "simulation", "rsa_bits", int, 512),
        bid_probability=_get(parser, "simulation", "bid_probability", float, 0.5),
        bid_min=_get(parser, "simulation", "bid_min", int, 50),
        bid_max=_get(parser, "simulation", "bid_max", int, 300),
        inject_forks=_get(parser, "simulation", "inject_forks", _bool, False),
        stochastic_mining=_get(parser, "simulation", "stochastic_mining", _bool, False),
    )

    sweep_raw = _get(parser, "sensing-experiment", "n1_sweep", str, "3,5,7,20") \
        if parser.has_section("sensing-experiment") else "3,5,7,20"
    try:
        sweep = tuple(int(x.strip()) for x in sweep_raw.split(",") if x.strip())
    except ValueError:
        raise ConfigInvalid("sensing-experiment.n1_sweep", f"bad list {sweep_raw!r}")

    cfg = RunConfig(
        experiment=_get(parser, "run", "experiment", str, None),
        sim=sim,
        output_dir=_get(parser, "run", "output_dir", str, "out"),
        n1_sweep=sweep,
        rounds_per_point=_get(parser, "sensing-experiment", "rounds_per_point",
                              int, 500)
        if parser.has_section("sensing-experiment") else 500,
        pu_force=_get(parser, "demo", "pu_force", str, "idle")
        if parser.has_section("demo") else "idle",
    )
    cfg.validate()
    return cfg
