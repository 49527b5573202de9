"""
paneitz/config.py

Experiment settings for the command-line entry point.
- Defaults < INI file (configparser) < PANEITZ_<KEY> environment variables (python-dotenv)
  < command-line flags
- Unknown sections or keys fail fast with ConfigError
- config_hash: sha256 of the canonical JSON of the resolved settings, output directory excluded
"""
import os
import logging
import configparser
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

from dotenv import load_dotenv

from paneitz.common import payload_hash
from paneitz.errors import ConfigError
from paneitz.sphere_core import DEFAULT_BUDGET, check_dim

logger = logging.getLogger(__name__)

# ============================================================================
# CONFIGURATION
# ============================================================================
ENV_PREFIX = "PANEITZ_"
SECTIONS = ("experiment", "tolerances", "flow", "morse", "perturb", "solve")
DEFAULT_K = "1+0.1*x6"
DEFAULT_OUT = "out"


def _opt_int(text: str) -> Optional[int]:
    return None if text.strip().lower() in ("", "none", "auto") else int(text)


def _opt_float(text: str) -> Optional[float]:
    return None if text.strip().lower() in ("", "none", "auto") else float(text)


def _setting(section: str, default: Any, convert=str):
    return field(default=default, metadata={"section": section, "convert": convert})


@dataclass(frozen=True)
class ExperimentConfig:
    """
    Resolved settings of one run. Keys in the INI file are the field names, grouped
    in the sections given by each field's metadata.
    """
    # [experiment]
    n: int = _setting("experiment", 5, int)
    K: str = _setting("experiment", DEFAULT_K)
    seed: int = _setting("experiment", 0, int)
    out: str = _setting("experiment", DEFAULT_OUT)
    budget: int = _setting("experiment", DEFAULT_BUDGET, int)
    n_jobs: int = _setting("experiment", 1, int)
    # [tolerances]
    eta: float = _setting("tolerances", 1.0, float)
    cbar: float = _setting("tolerances", 1.0, float)
    c0: float = _setting("tolerances", 0.1, float)
    eps: float = _setting("tolerances", 0.1, float)
    # [flow]
    mu: Optional[float] = _setting("flow", None, _opt_float)
    m1: float = _setting("flow", 0.1, float)
    lambda_min: float = _setting("flow", 1.0, float)
    lambda_max: float = _setting("flow", 1e6, float)
    lambda0: float = _setting("flow", 10.0, float)
    trajectories: int = _setting("flow", 100, int)
    t_max: float = _setting("flow", 400.0, float)
    # [morse]
    l: Optional[int] = _setting("morse", None, _opt_int)
    seeds: int = _setting("morse", 64, int)
    sphere_samples: int = _setting("morse", 256, int)
    # [perturb]
    targets: str = _setting("perturb", "auto")
    rho: float = _setting("perturb", 0.3, float)
    c1_tol: float = _setting("perturb", 0.2, float)
    # [solve]
    nodes: int = _setting("solve", 201, int)
    warm_lambda: float = _setting("solve", 2.0, float)
    pole: str = _setting("solve", "north")
    solve_tol: float = _setting("solve", 1e-8, float)
    max_iter: int = _setting("solve", 60, int)

    def __post_init__(self):
        check_dim(self.n)
        positive = ("budget", "n_jobs", "eta", "cbar", "c0", "eps", "m1", "lambda_min", "lambda0",
                    "trajectories", "t_max", "seeds", "sphere_samples", "rho", "c1_tol", "nodes",
                    "warm_lambda", "solve_tol", "max_iter")
        for name in positive:
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive; got {getattr(self, name)!r}")
        if self.mu is not None and not self.mu > 0:
            raise ConfigError(f"mu must be positive; got {self.mu!r}")
        if not self.lambda_min < self.lambda0 < self.lambda_max:
            raise ConfigError(f"need lambda_min < lambda0 < lambda_max; got "
                              f"{self.lambda_min}, {self.lambda0}, {self.lambda_max}")
        if self.pole not in ("north", "south"):
            raise ConfigError(f"pole must be 'north' or 'south'; got {self.pole!r}")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    def config_hash(self) -> str:
        payload = self.to_dict()
        payload.pop("out")
        return payload_hash(payload)

    @property
    def out_dir(self) -> Path:
        return Path(self.out)


FIELD_MAP = {f.name: f for f in fields(ExperimentConfig)}


def _convert(name: str, raw: str, where: str) -> Any:
    conv = FIELD_MAP[name].metadata["convert"]
    try:
        return conv(raw)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid value {raw!r} for {where}: {e}") from e


def read_ini(path: Path) -> Dict[str, Any]:
    """Values from an INI file; unknown sections and keys raise ConfigError."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    try:
        parser.read(path, encoding="utf-8")
    except configparser.Error as e:
        raise ConfigError(f"cannot parse {path}: {e}") from e
    values = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}] in {path}")
        for key, raw in parser.items(section):
            f = FIELD_MAP.get(key)
            if f is None or f.metadata["section"] != section:
                raise ConfigError(f"unknown key {key!r} in section [{section}] of {path}")
            values[key] = _convert(key, raw, f"[{section}] {key}")
    return values


def read_env(environ: Optional[Mapping[str, str]] = None) -> Dict[str, Any]:
    """PANEITZ_<KEY> overrides; an unknown PANEITZ_ variable is an error."""
    if environ is None:
        load_dotenv()
        environ = os.environ
    values = {}
    for var, raw in environ.items():
        if not var.startswith(ENV_PREFIX):
            continue
        key = var[len(ENV_PREFIX):]
        name = next((f for f in FIELD_MAP if f.lower() == key.lower()), None)
        if name is None:
            raise ConfigError(f"unknown environment override {var}")
        values[name] = _convert(name, raw, var)
    return values


def load_config(path: Optional[Path] = None, overrides: Optional[Mapping[str, Any]] = None,
                environ: Optional[Mapping[str, str]] = None) -> ExperimentConfig:
    """
    Resolve settings from every source in precedence order.

    Args:
        path: Optional INI file
        overrides: Command-line values; None entries are ignored
        environ: Environment mapping (os.environ after load_dotenv when omitted)
    """
    values: Dict[str, Any] = {}
    if path is not None:
        values.update(read_ini(path))
    values.update(read_env(environ))
    for key, val in (overrides or {}).items():
        if key not in FIELD_MAP:
            raise ConfigError(f"unknown setting {key!r}")
        if val is not None:
            values[key] = val
    cfg = ExperimentConfig(**values)
    logger.debug(f"Config resolved | hash={cfg.config_hash()[:12]} | sources={'ini' if path else 'defaults'}")
    return cfg

