"""Experiment configuration: TOML ingestion, dotted overrides, validation.

A config file mirrors the dataclasses below section by section:

    [ensemble]
    kind = "powerlaw"          # powerlaw | gridworld | hypercube | file
    n_features = 300
    n_transitions = 50

    [learner]
    gamma = 0.9
    batch_size = 10
    eta0 = 0.08
    n_steps = 400
    seeds = 8

    [run]
    variants = ["sim", "dmft"]
    output = "runs/out"

Every leaf is overridable on the command line with --set section.key=value;
values parse as TOML scalars first and fall back to bare strings. Validation
collects all offending fields before raising so a bad file is reported once.
"""

from __future__ import annotations

import copy
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import ConfigurationError

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

VARIANTS = ("sim", "surrogate", "dmft", "direct", "nongauss", "closedform")
ENSEMBLE_KINDS = ("powerlaw", "gridworld", "hypercube", "file")
SHAPING_MODES = ("none", "scale", "rotate")
W0_POLICIES = ("zeros", "td")


@dataclass
class EnsembleConfig:
    kind: str = "powerlaw"
    n_features: int = 300
    n_transitions: int = 50
    spectral_exponent: float = 1.2
    target_exponent: float = 1.1
    # gridworld fields
    side: int = 17
    bandwidth: float = 0.7
    reward_map: str = "delta"
    reward_site: list[int] | None = None
    reward_width: float = 3.0
    estimation_trajectories: int = 5000
    exact_moments: bool = True
    # file-backed ensembles
    path: str = ""


@dataclass
class ShapingConfig:
    mode: str = "none"
    beta: float = 0.0
    theta: float = 0.0


@dataclass
class LearnerBlock:
    gamma: float = 0.9
    batch_size: int = 10
    eta0: float = 0.1
    chi: float = 0.0
    n_steps: int = 200
    seeds: int = 4
    w0: str | list[float] = "zeros"
    infinite_batch: bool = False
    action_noise: float | list[float] = 0.0
    shaping: ShapingConfig = field(default_factory=ShapingConfig)


@dataclass
class SweepConfig:
    parameter: str = ""
    values: list = field(default_factory=list)
    window_fraction: float = 0.25


@dataclass
class ExperimentConfig:
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    learner: LearnerBlock = field(default_factory=LearnerBlock)
    variants: list[str] = field(default_factory=lambda: ["sim", "dmft"])
    sweep: SweepConfig | None = None
    output: str = "runs/out"
    master_seed: int = 1234
    jobs: int = 1
    empirical_eval: bool = False
    emit_spectral: bool = False

    def to_dict(self) -> dict:
        out = {
            "ensemble": asdict(self.ensemble),
            "learner": asdict(self.learner),
            "run": {
                "variants": list(self.variants),
                "output": self.output,
                "master_seed": self.master_seed,
                "jobs": self.jobs,
                "empirical_eval": self.empirical_eval,
                "emit_spectral": self.emit_spectral,
            },
        }
        if self.sweep is not None:
            out["sweep"] = asdict(self.sweep)
        return out


def _build_section(cls, data: dict, label: str, errors: list[str]):
    known = {f.name for f in cls.__dataclass_fields__.values()}
    kwargs = {}
    for key, value in data.items():
        if key not in known:
            errors.append(f"{label}.{key}: unknown field")
            continue
        kwargs[key] = value
    return kwargs


def config_from_dict(data: dict) -> ExperimentConfig:
    """Build and validate an ExperimentConfig from nested dicts (parsed TOML)."""
    errors: list[str] = []
    data = dict(data)

    ens_data = dict(data.pop("ensemble", {}))
    learner_data = dict(data.pop("learner", {}))
    shaping_data = dict(learner_data.pop("shaping", {}))
    run_data = dict(data.pop("run", {}))
    sweep_data = data.pop("sweep", None)
    for stray in data:
        errors.append(f"{stray}: unknown section")

    ens = EnsembleConfig(**_build_section(EnsembleConfig, ens_data, "ensemble", errors))
    shaping = ShapingConfig(**_build_section(ShapingConfig, shaping_data, "learner.shaping", errors))
    learner_kwargs = _build_section(LearnerBlock, learner_data, "learner", errors)
    learner_kwargs["shaping"] = shaping
    learner = LearnerBlock(**learner_kwargs)

    sweep = None
    if sweep_data is not None:
        sweep = SweepConfig(**_build_section(SweepConfig, dict(sweep_data), "sweep", errors))

    config = ExperimentConfig(
        ensemble=ens,
        learner=learner,
        variants=list(run_data.get("variants", ["sim", "dmft"])),
        sweep=sweep,
        output=str(run_data.get("output", "runs/out")),
        master_seed=int(run_data.get("master_seed", 1234)),
        jobs=int(run_data.get("jobs", 1)),
        empirical_eval=bool(run_data.get("empirical_eval", False)),
        emit_spectral=bool(run_data.get("emit_spectral", False)),
    )
    known_run = ("variants", "output", "master_seed", "jobs", "empirical_eval", "emit_spectral")
    for key in run_data:
        if key not in known_run:
            errors.append(f"run.{key}: unknown field")
    validate_config(config, errors)
    if errors:
        raise ConfigurationError("invalid configuration: " + "; ".join(errors))
    return config


def validate_config(cfg: ExperimentConfig, errors: list[str]) -> None:
    ens, ln = cfg.ensemble, cfg.learner
    if ens.kind not in ENSEMBLE_KINDS:
        errors.append(f"ensemble.kind: {ens.kind!r} not one of {ENSEMBLE_KINDS}")
    if ens.n_transitions < 1:
        errors.append("ensemble.n_transitions: must be >= 1")
    if ens.kind == "powerlaw":
        if ens.n_features < 1:
            errors.append("ensemble.n_features: must be >= 1")
        if ens.spectral_exponent <= 0 or ens.target_exponent <= 0:
            errors.append("ensemble exponents: must be positive")
    if ens.kind == "gridworld":
        if ens.side < 2:
            errors.append("ensemble.side: must be >= 2")
        if ens.bandwidth <= 0:
            errors.append("ensemble.bandwidth: must be positive")
        if ens.reward_map not in ("delta", "bump", "uniform"):
            errors.append(f"ensemble.reward_map: unknown {ens.reward_map!r}")
    if ens.kind == "file" and not ens.path:
        errors.append("ensemble.path: required for kind='file'")

    if not 0.0 <= ln.gamma < 1.0:
        errors.append("learner.gamma: must lie in [0, 1)")
    if ln.batch_size < 1:
        errors.append("learner.batch_size: must be >= 1")
    if ln.eta0 <= 0:
        errors.append("learner.eta0: must be positive")
    if ln.chi < 0:
        errors.append("learner.chi: must be >= 0")
    if ln.n_steps < 1:
        errors.append("learner.n_steps: must be >= 1")
    if ln.seeds < 1:
        errors.append("learner.seeds: must be >= 1")
    if isinstance(ln.w0, str) and ln.w0 not in W0_POLICIES:
        errors.append(f"learner.w0: {ln.w0!r} not one of {W0_POLICIES} or a vector")
    if ln.shaping.mode not in SHAPING_MODES:
        errors.append(f"learner.shaping.mode: unknown {ln.shaping.mode!r}")

    for v in cfg.variants:
        if v not in VARIANTS:
            errors.append(f"run.variants: unknown variant {v!r}")
    if not cfg.variants:
        errors.append("run.variants: need at least one variant")
    if "nongauss" in cfg.variants:
        if ens.kind == "gridworld":
            errors.append("run.variants: nongauss needs zero-mean features; gridworld has none")
        elif ens.kind == "powerlaw" and ens.n_features * (ens.n_transitions + 1) > 256:
            errors.append(
                "run.variants: nongauss on powerlaw requires n_features*(n_transitions+1) <= 256"
            )
    if "closedform" in cfg.variants:
        reasons = []
        if ens.kind != "hypercube":
            reasons.append("hypercube ensemble")
        if ln.gamma != 0.0:
            reasons.append("gamma = 0")
        if ln.chi != 0.0:
            reasons.append("constant learning rate")
        if not (isinstance(ln.w0, str) and ln.w0 == "zeros"):
            reasons.append("w0 = zeros")
        if ln.shaping.mode != "none":
            reasons.append("no shaping")
        if _noise_active(ln.action_noise):
            reasons.append("no action noise")
        if reasons:
            errors.append("run.variants: closedform requires " + ", ".join(reasons))
    if cfg.empirical_eval and ens.kind != "gridworld":
        errors.append("run.empirical_eval: only available for the gridworld ensemble")
    if cfg.jobs < 1:
        errors.append("run.jobs: must be >= 1")

    if cfg.sweep is not None:
        if not cfg.sweep.parameter:
            errors.append("sweep.parameter: required")
        elif resolve_sweep_field(cfg, cfg.sweep.parameter, probe=True) is None:
            errors.append(f"sweep.parameter: {cfg.sweep.parameter!r} does not name a config field")
        if not cfg.sweep.values:
            errors.append("sweep.values: must be nonempty")
        if not 0.0 < cfg.sweep.window_fraction <= 1.0:
            errors.append("sweep.window_fraction: must lie in (0, 1]")


def _noise_active(noise) -> bool:
    if isinstance(noise, (int, float)):
        return noise != 0.0
    return any(x != 0.0 for x in noise)


def load_config(path: str | Path | None, overrides: list[str] = ()) -> ExperimentConfig:
    """Parse a TOML config file (or start from defaults) and apply overrides."""
    data: dict = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigurationError(f"config file not found: {p}")
        try:
            data = tomllib.loads(p.read_text())
        except tomllib.TOMLDecodeError as exc:
            raise ConfigurationError(f"cannot parse {p}: {exc}") from exc
    for item in overrides:
        apply_override(data, item)
    return config_from_dict(data)


def apply_override(data: dict, item: str) -> None:
    """Apply one --set KEY=VALUE override with a dotted key into nested dicts."""
    if "=" not in item:
        raise ConfigurationError(f"--set needs KEY=VALUE, got {item!r}")
    key, raw = item.split("=", 1)
    parts = [p for p in key.strip().split(".") if p]
    if not parts:
        raise ConfigurationError(f"--set has an empty key in {item!r}")
    node = data
    for part in parts[:-1]:
        node = node.setdefault(part, {})
        if not isinstance(node, dict):
            raise ConfigurationError(f"--set key {key!r} descends into a scalar")
    node[parts[-1]] = parse_scalar(raw)


def parse_scalar(raw: str):
    """Interpret an override value: TOML scalar or array, else a bare string."""
    raw = raw.strip()
    try:
        return tomllib.loads(f"v = {raw}")["v"]
    except tomllib.TOMLDecodeError:
        pass
    if "," in raw:
        return [parse_scalar(part) for part in raw.split(",")]
    return raw


def resolve_sweep_field(cfg: ExperimentConfig, dotted: str, probe: bool = False):
    """Map a dotted sweep parameter to (section object, attribute name).

    Returns None when the path names nothing (used by validation when probing).
    """
    parts = dotted.split(".")
    node = {"ensemble": cfg.ensemble, "learner": cfg.learner, "run": cfg}.get(parts[0])
    if node is None or len(parts) < 2:
        return None
    for part in parts[1:-1]:
        if not hasattr(node, part):
            return None
        node = getattr(node, part)
    leaf = parts[-1]
    if not hasattr(node, leaf):
        return None
    if probe:
        return (node, leaf)
    return (node, leaf)


def with_sweep_value(cfg: ExperimentConfig, value) -> ExperimentConfig:
    """A copy of the config with the swept field set to ``value`` and no sweep block."""
    new = copy.deepcopy(cfg)
    target = resolve_sweep_field(new, cfg.sweep.parameter)
    if target is None:
        raise ConfigurationError(f"sweep parameter {cfg.sweep.parameter!r} not found")
    node, leaf = target
    setattr(node, leaf, value)
    new.sweep = None
    errors: list[str] = []
    validate_config(new, errors)
    if errors:
        raise ConfigurationError("invalid sweep point: " + "; ".join(errors))
    return new
