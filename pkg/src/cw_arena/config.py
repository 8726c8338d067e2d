"""Scenario configuration: built-in presets for the three experiments and a
YAML loader with line-numbered diagnostics.

Config file schema (schema_version 1)::

    schema_version: 1
    scenario: scenario1          # preset to start from (required)
    profile: desk                # desk | paper
    seed: 0
    methods: [RL, OPT, CP, SP, FI, RF]
    eval_episodes: 200
    mac: {interval_length: 2.0, ...}          # any MacParams field
    env:
      n_nodes: 10
      steps_per_episode: 50
      memory: 1
      action_space: [32, 48, 64, 96, 128]
      process: {kind: markov2, p: 1.0}        # markov2 | zigzag
      discount: 0.9
    agent: {episodes: 1500, lr: 0.001, ...}   # any AgentConfig field
    baselines:
      reward_replications: 500
      cp_episodes: 200
      rf_episodes: 200
      rf_trees: 15
      rf_depth: 5
      fi_threshold: 1.5
      fi_updates: 3
    sweep: {param: memory, values: [1, 2, 3, 4]}   # memory | n_nodes
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from dataclasses import dataclass, field, replace

import yaml

from .env import ActionSpace, EpisodeConfig, ProcessSpec
from .errors import InvalidConfiguration
from .mac import MacParams

SCHEMA_VERSION = 1
METHODS = ("RL", "OPT", "CP", "SP", "FI", "RF")
SEED_ENV = "CW_ARENA_SEED"

SCENARIO1_ACTIONS = (32, 48, 64, 96, 128)
SCENARIO2_ACTIONS = (32, 48, 64, 96, 128, 192, 256, 384, 512)

PROFILES = {
    "desk": {"interval_length": 2.0, "train_episodes": 1500, "eval_episodes": 200},
    "paper": {"interval_length": 20.0, "train_episodes": 5000, "eval_episodes": 500},
}

# lr raised from the Rainbow default 1e-4: at desk scale the agent does not
# leave its initial constant policy within 1500 episodes otherwise
AGENT_DEFAULTS = {"lr": 1e-3}


@dataclass(frozen=True)
class BaselineConfig:
    reward_replications: int = 500
    cp_episodes: int = 200
    rf_episodes: int = 200
    rf_trees: int = 15
    rf_depth: int = 5
    fi_threshold: float = 1.5
    fi_updates: int = 3


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: str
    mac: MacParams
    env: EpisodeConfig
    methods: tuple = METHODS
    agent: dict = field(default_factory=dict)
    eval_episodes: int = 200
    seed: int = 0
    profile: str = "desk"
    baselines: BaselineConfig = field(default_factory=BaselineConfig)
    sweep: dict | None = None

    def __post_init__(self):
        bad = [m for m in self.methods if m not in METHODS]
        if bad:
            raise InvalidConfiguration(f"unknown methods {bad}; choose from {list(METHODS)}")
        if self.eval_episodes < 1:
            raise InvalidConfiguration("eval_episodes must be >= 1")

    def agent_config(self):
        from .rainbow import AgentConfig

        kw = {**AGENT_DEFAULTS, "episodes": PROFILES[self.profile]["train_episodes"], **self.agent}
        if "hidden" in kw:
            kw["hidden"] = tuple(kw["hidden"])
        return AgentConfig(
            feature_dim=3 * self.env.memory,
            n_actions=len(self.env.action_space),
            discount=self.env.discount,
            **kw,
        )

    def with_(self, **changes):
        return replace(self, **changes)

    def with_env(self, **changes):
        return replace(self, env=replace(self.env, **changes))

    def to_dict(self):
        env = self.env
        return {
            "schema_version": SCHEMA_VERSION,
            "scenario": self.scenario,
            "profile": self.profile,
            "seed": self.seed,
            "methods": list(self.methods),
            "eval_episodes": self.eval_episodes,
            "mac": dataclasses.asdict(self.mac),
            "env": {
                "n_nodes": env.n_nodes,
                "steps_per_episode": env.steps_per_episode,
                "memory": env.memory,
                "action_space": list(env.action_space.mcw_values),
                "process": {"kind": env.process.kind, "p": env.process.p},
                "discount": env.discount,
            },
            "agent": dict(self.agent),
            "baselines": dataclasses.asdict(self.baselines),
            "sweep": self.sweep,
        }

    def digest(self, *parts):
        """Short content hash of selected top-level sections (cache keys)."""
        d = self.to_dict()
        blob = json.dumps({p: d[p] for p in parts} if parts else d, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]


def preset(name, profile="desk", p=None, n_nodes=None, memory=None, seed=0):
    """Built-in experiments: scenario1 (two-state Markov, M=1), scenario2
    (five-level zigzag, M=4), scenario3 (two-state Markov p=0.9, N-sweep)."""
    if profile not in PROFILES:
        raise InvalidConfiguration(f"unknown profile {profile!r}")
    prof = PROFILES[profile]
    mac = MacParams(interval_length=prof["interval_length"])
    sweep = None
    if name == "scenario1":
        env = EpisodeConfig(10, 50, 1, ActionSpace(SCENARIO1_ACTIONS), ProcessSpec("markov2", 1.0 if p is None else p))
    elif name == "scenario2":
        env = EpisodeConfig(10, 50, 4, ActionSpace(SCENARIO2_ACTIONS), ProcessSpec("zigzag", 0.75 if p is None else p))
        sweep = {"param": "memory", "values": [1, 2, 3, 4]}
    elif name == "scenario3":
        env = EpisodeConfig(10, 50, 1, ActionSpace(SCENARIO1_ACTIONS), ProcessSpec("markov2", 0.9 if p is None else p))
        sweep = {"param": "n_nodes", "values": [5, 10, 20]}
    else:
        raise InvalidConfiguration(f"unknown scenario {name!r}; expected scenario1, scenario2 or scenario3")
    if n_nodes is not None:
        env = replace(env, n_nodes=n_nodes)
    if memory is not None:
        env = replace(env, memory=memory)
    return ScenarioConfig(name, mac, env, eval_episodes=prof["eval_episodes"], seed=seed, profile=profile, sweep=sweep)


# ---------------------------------------------------------------- loading


class ConfigError(InvalidConfiguration):
    def __init__(self, msg, source="<config>", line=None, path=None):
        self.source, self.line, self.path = source, line, path
        loc = source if line is None else f"{source}:{line}"
        where = f" field '{path}'" if path else ""
        super().__init__(f"{loc}:{where} {msg}")


def _to_python(node, lines, prefix=""):
    """Plain Python value from a composed YAML node, recording key lines."""
    if isinstance(node, yaml.MappingNode):
        out = {}
        for k, v in node.value:
            key = k.value
            path = f"{prefix}.{key}" if prefix else key
            lines[path] = k.start_mark.line + 1
            out[key] = _to_python(v, lines, path)
        return out
    if isinstance(node, yaml.SequenceNode):
        return [_to_python(v, lines, prefix) for v in node.value]
    return yaml.safe_load(yaml.serialize(node))


def _parse(text, source):
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        raise ConfigError(f"YAML syntax error: {getattr(exc, 'problem', exc)}", source,
                          mark.line + 1 if mark else None) from None
    lines = {}
    data = _to_python(node, lines) if node is not None else {}
    if not isinstance(data, dict):
        raise ConfigError("top level must be a mapping", source, 1)
    return data, lines


_TOP = {"schema_version", "scenario", "profile", "seed", "methods", "eval_episodes", "mac", "env", "agent", "baselines", "sweep"}


def config_from_dict(data, source="<config>", lines=None):
    lines = lines or {}

    def fail(path, msg):
        raise ConfigError(msg, source, lines.get(path), path)

    unknown = set(data) - _TOP
    if unknown:
        k = sorted(unknown)[0]
        fail(k, "unknown field")
    if data.get("schema_version") != SCHEMA_VERSION:
        fail("schema_version", f"must be {SCHEMA_VERSION}")
    if "scenario" not in data:
        fail("scenario", "missing required field")
    profile = data.get("profile", "desk")
    try:
        cfg = preset(data["scenario"], profile)
    except InvalidConfiguration as exc:
        fail("scenario" if "scenario" in str(exc) else "profile", str(exc))

    def typed(path, value, kind):
        if kind is float and isinstance(value, int) and not isinstance(value, bool):
            return float(value)
        if not isinstance(value, kind) or isinstance(value, bool) and kind is not bool:
            fail(path, f"expected {kind.__name__}, got {type(value).__name__}")
        return value

    changes = {}
    if "seed" in data:
        changes["seed"] = typed("seed", data["seed"], int)
    if "eval_episodes" in data:
        changes["eval_episodes"] = typed("eval_episodes", data["eval_episodes"], int)
    if "methods" in data:
        methods = data["methods"]
        if isinstance(methods, str):
            methods = [m.strip() for m in methods.split(",")]
        for m in methods:
            if m not in METHODS:
                fail("methods", f"unknown method {m!r}")
        changes["methods"] = tuple(methods)

    mac_fields = {f.name: f.type for f in dataclasses.fields(MacParams)}
    mac_kw = dataclasses.asdict(cfg.mac)
    mac_kw["ack_timeout"] = None
    for k, v in (data.get("mac") or {}).items():
        if k not in mac_fields:
            fail(f"mac.{k}", "unknown field")
        mac_kw[k] = v
    try:
        changes["mac"] = MacParams(**mac_kw)
    except (TypeError, ValueError) as exc:
        fail("mac", str(exc))

    env_kw = {}
    for k, v in (data.get("env") or {}).items():
        path = f"env.{k}"
        if k in ("n_nodes", "steps_per_episode", "memory"):
            env_kw[k] = typed(path, v, int)
        elif k == "discount":
            env_kw[k] = typed(path, v, float)
        elif k == "action_space":
            try:
                env_kw[k] = ActionSpace(tuple(typed(path, x, int) for x in v))
            except (TypeError, ValueError) as exc:
                fail(path, str(exc))
        elif k == "process":
            if not isinstance(v, dict) or set(v) - {"kind", "p"}:
                fail(path, "expected a mapping with keys kind, p")
            try:
                env_kw[k] = ProcessSpec(v.get("kind", cfg.env.process.kind), float(v.get("p", cfg.env.process.p)))
            except (TypeError, ValueError) as exc:
                fail(path, str(exc))
        else:
            fail(path, "unknown field")
    try:
        changes["env"] = replace(cfg.env, **env_kw)
        changes["env"].action_space.check(changes["mac"])
    except ValueError as exc:
        fail("env", str(exc))

    from .rainbow import AgentConfig

    agent_fields = {f.name for f in dataclasses.fields(AgentConfig)} - {"feature_dim", "n_actions", "discount"}
    agent = dict(data.get("agent") or {})
    for k in agent:
        if k not in agent_fields:
            fail(f"agent.{k}", "unknown field")
    changes["agent"] = agent

    base_fields = {f.name for f in dataclasses.fields(BaselineConfig)}
    base = dict(data.get("baselines") or {})
    for k in base:
        if k not in base_fields:
            fail(f"baselines.{k}", "unknown field")
    changes["baselines"] = replace(cfg.baselines, **base)

    if "sweep" in data:
        sw = data["sweep"]
        if sw is not None:
            if not isinstance(sw, dict) or sw.get("param") not in ("memory", "n_nodes") or not isinstance(sw.get("values"), list):
                fail("sweep", "expected {param: memory|n_nodes, values: [...]}")
        changes["sweep"] = sw
    try:
        out = replace(cfg, **changes)
        out.agent_config()
    except (TypeError, ValueError) as exc:
        fail("agent" if "agent" in str(exc).lower() else "", str(exc))
    return out


def load_config(path):
    with open(path) as fh:
        text = fh.read()
    data, lines = _parse(text, os.fspath(path))
    return config_from_dict(data, os.fspath(path), lines)


def dump_config(cfg: ScenarioConfig):
    d = cfg.to_dict()
    d["mac"].pop("ack_timeout", None)
    if d["sweep"] is None:
        d.pop("sweep")
    return yaml.safe_dump(d, sort_keys=False)


def resolve_seed(cfg_seed, cli_seed=None):
    """Precedence: --seed flag, then $CW_ARENA_SEED, then the config file."""
    if cli_seed is not None:
        return int(cli_seed)
    env = os.environ.get(SEED_ENV)
    if env:
        return int(env)
    return cfg_seed
