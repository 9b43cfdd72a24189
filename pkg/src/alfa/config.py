"""Engine configuration: flat key=value file, overridden by CLI flags."""

from __future__ import annotations

import os
from dataclasses import dataclass, field

from .prompts import LlmConfig
from .rtp import RtpConfig
from .scoring import ScoringConfig


class ConfigError(Exception):
    pass


@dataclass
class EngineConfig:
    k: float = 1.0
    epsilon: float = 1e-6
    tau: float = 1.0
    scales: tuple[int, ...] = (2, 3)
    sigma: float = 4.0
    pro_fpr: float = 0.3
    memory_weight: float = 0.5
    class_aliases_path: str = ""
    grammar_path: str = ""
    llm_endpoint: str = ""
    llm_model: str = "gpt-3.5-turbo-instruct"
    llm_count: int = 100
    llm_cache_path: str = ""
    extras: dict[str, str] = field(default_factory=dict)

    def rtp(self) -> RtpConfig:
        return RtpConfig(k=self.k, epsilon=self.epsilon)

    def scoring(self) -> ScoringConfig:
        return ScoringConfig(tau=self.tau, scales=tuple(self.scales),
                             sigma=self.sigma, memory_weight=self.memory_weight)

    def llm(self) -> LlmConfig:
        return LlmConfig(endpoint=self.llm_endpoint, model=self.llm_model,
                         count=self.llm_count,
                         cache_path=self.llm_cache_path or None)


_FLOAT_KEYS = {"k", "epsilon", "tau", "sigma", "pro_fpr", "memory_weight"}
_INT_KEYS = {"llm_count"}
_PATH_KEYS = {"class_aliases_path", "grammar_path", "llm_cache_path"}
_STR_KEYS = {"llm_endpoint", "llm_model"} | _PATH_KEYS


def parse_scales(text: str) -> tuple[int, ...]:
    try:
        scales = tuple(int(p) for p in str(text).split(",") if p.strip())
    except ValueError:
        raise ConfigError(f"bad scales value {text!r}") from None
    if not scales or any(s < 1 for s in scales):
        raise ConfigError(f"scales must be positive integers, got {text!r}")
    return scales


def load_config(path: str | None) -> EngineConfig:
    cfg = EngineConfig()
    if not path:
        return cfg
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, value = (part.strip() for part in line.split("=", 1))
            if key == "scales":
                cfg.scales = parse_scales(value)
            elif key in _FLOAT_KEYS:
                try:
                    setattr(cfg, key, float(value))
                except ValueError:
                    raise ConfigError(f"{path}:{lineno}: {key} must be a number") from None
            elif key in _INT_KEYS:
                try:
                    setattr(cfg, key, int(value))
                except ValueError:
                    raise ConfigError(f"{path}:{lineno}: {key} must be an integer") from None
            elif key in _STR_KEYS:
                setattr(cfg, key, value)
            else:
                cfg.extras[key] = value
    for key in _PATH_KEYS:
        p = getattr(cfg, key)
        if p and not os.path.exists(p):
            raise ConfigError(f"referenced path does not exist: {key}={p}")
    return cfg
