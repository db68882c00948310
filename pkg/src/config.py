"""
Experiment configuration: environment defaults plus sectioned key = value files.

Precedence is CLI flag > config file > environment > built-in default.
"""
import configparser
import os
from dataclasses import dataclass, field, replace

from dotenv import load_dotenv

from src.errors import ConfigError
from src.logger import get_logger
from src.models import LG_PARAM_NAMES, SV_PARAM_NAMES, SV_PRIOR_SUPPORT
from src.rng import MAX_INDEX

logger = get_logger(__name__)

load_dotenv()

DEFAULT_SEED = int(os.getenv("PARTICLESWARM_SEED", "20240101"))
MAX_SEED = MAX_INDEX - 1
DEFAULT_WORKERS = int(os.getenv("PARTICLESWARM_WORKERS", "1"))

MODEL_PARAMS = {"sv": SV_PARAM_NAMES, "lg": LG_PARAM_NAMES}
MODEL_DEFAULTS = {
    "sv": {"phi": 0.91, "beta": 0.5, "sigma": 1.0},
    "lg": {"a": 0.9, "q": 1.0, "c": 1.0, "r": 1.0, "m1": 0.0, "p1": 1.0},
}
# f2_replication_std and convergence_table only label the study a file was written for;
# replicate and converge always write their single table.
OUTPUTS = ("forecast_intervals", "posterior_forecast", "f2_replication_std", "convergence_table", "marginal_lik")

RUN_KEYS = ("n_theta", "n_particles", "seed", "T", "replications", "outputs", "estimator",
            "resampling", "dead_filter_policy", "clamp_variance", "truncate_m")
LADDER_KEYS = ("n_particles", "n_theta", "fixed_n_particles", "fixed_n_theta")


@dataclass(frozen=True)
class ExperimentConfig:
    model: str = "sv"
    model_params: dict = field(default_factory=lambda: dict(MODEL_DEFAULTS["sv"]))
    prior: dict = field(default_factory=lambda: dict(SV_PRIOR_SUPPORT))
    n_theta: int = 100
    n_particles: int = 100
    seed: int = DEFAULT_SEED
    T: int = 1000
    replications: int = 1
    outputs: tuple = ("forecast_intervals",)
    estimator: str = "hat"
    resampling: str = "multinomial"
    dead_filter_policy: str = "abort"
    clamp_variance: bool = False
    truncate_m: float = None
    ladder_n_particles: tuple = (250, 1000, 4000)
    ladder_n_theta: tuple = (100, 400, 1600)
    ladder_fixed_n_particles: int = 100
    ladder_fixed_n_theta: int = 1
    workers: int = DEFAULT_WORKERS

    def with_overrides(self, **overrides):
        """Apply CLI overrides; None means the flag was not given."""
        return replace(self, **{k: v for k, v in overrides.items() if v is not None})


def _int(section, key, raw, minimum=None, maximum=None):
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"expected an integer, got {raw!r}", key=f"{section}.{key}")
    if minimum is not None and value < minimum:
        raise ConfigError(f"must be at least {minimum}, got {value}", key=f"{section}.{key}")
    if maximum is not None and value > maximum:
        raise ConfigError(f"must be at most {maximum}, got {value}", key=f"{section}.{key}")
    return value


def _float(section, key, raw):
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"expected a number, got {raw!r}", key=f"{section}.{key}")


def _list(raw):
    return [item.strip() for item in raw.split(",") if item.strip()]


def _choice(section, key, raw, choices):
    if raw not in choices:
        raise ConfigError(f"must be one of {', '.join(choices)}, got {raw!r}", key=f"{section}.{key}")
    return raw


def _bool(section, key, raw):
    lowered = raw.lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ConfigError(f"expected true or false, got {raw!r}", key=f"{section}.{key}")


def parse_config(text: str) -> ExperimentConfig:
    parser = configparser.RawConfigParser(comment_prefixes=("#",), inline_comment_prefixes=("#",),
                                          delimiters=("=",))
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as e:
        raise ConfigError(f"malformed config: {e}")

    unknown_sections = set(parser.sections()) - {"model", "prior", "run", "ladder"}
    if unknown_sections:
        raise ConfigError("unknown section", key=sorted(unknown_sections)[0])

    values = {}
    model = parser.get("model", "name", fallback="sv").strip()
    model = _choice("model", "name", model, tuple(MODEL_PARAMS))
    names = MODEL_PARAMS[model]
    values["model"] = model

    model_params = dict(MODEL_DEFAULTS[model])
    if parser.has_section("model"):
        for key, raw in parser.items("model"):
            if key == "name":
                continue
            if key not in names:
                raise ConfigError(f"not a parameter of the {model} model", key=f"model.{key}")
            model_params[key] = _float("model", key, raw)
    values["model_params"] = model_params

    prior = dict(SV_PRIOR_SUPPORT) if model == "sv" else {}
    if parser.has_section("prior"):
        for key, raw in parser.items("prior"):
            if key not in names:
                raise ConfigError(f"not a parameter of the {model} model", key=f"prior.{key}")
            bounds = _list(raw)
            if len(bounds) != 2:
                raise ConfigError(f"expected 'lo, hi', got {raw!r}", key=f"prior.{key}")
            lo, hi = (_float("prior", key, b) for b in bounds)
            if hi < lo:
                raise ConfigError(f"upper bound {hi} is below lower bound {lo}", key=f"prior.{key}")
            prior[key] = (lo, hi)
    values["prior"] = prior

    if parser.has_section("run"):
        for key, raw in parser.items("run"):
            if key not in RUN_KEYS:
                raise ConfigError("unknown key", key=f"run.{key}")
            if key in ("n_theta", "n_particles", "T", "replications"):
                values[key] = _int("run", key, raw, minimum=1)
            elif key == "seed":
                values[key] = _int("run", key, raw, minimum=0, maximum=MAX_SEED)
            elif key == "outputs":
                values[key] = tuple(_choice("run", key, item, OUTPUTS) for item in _list(raw))
            elif key == "estimator":
                values[key] = _choice("run", key, raw, ("hat", "check"))
            elif key == "resampling":
                values[key] = _choice("run", key, raw, ("multinomial", "systematic"))
            elif key == "dead_filter_policy":
                values[key] = _choice("run", key, raw, ("abort", "drop"))
            elif key == "clamp_variance":
                values[key] = _bool("run", key, raw)
            elif key == "truncate_m":
                values[key] = _float("run", key, raw)

    if parser.has_section("ladder"):
        for key, raw in parser.items("ladder"):
            if key not in LADDER_KEYS:
                raise ConfigError("unknown key", key=f"ladder.{key}")
            if key in ("n_particles", "n_theta"):
                rungs = tuple(_int("ladder", key, item, minimum=1) for item in _list(raw))
                if not rungs:
                    raise ConfigError("needs at least one rung", key=f"ladder.{key}")
                values[f"ladder_{key}"] = rungs
            else:
                values[f"ladder_{key}"] = _int("ladder", key, raw, minimum=1)

    return ExperimentConfig(**values)


def load_config(path) -> ExperimentConfig:
    """Read an experiment config file."""
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as e:
        raise ConfigError(f"cannot read config file: {e}", key="--config")
    config = parse_config(text)
    logger.info(f"Loaded {config.model} config from {path}")
    return config
