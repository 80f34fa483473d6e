"""Pipeline configuration: a YAML file plus environment overrides.

Relative paths resolve against the config file's directory. Secrets never
live in the file: the API key comes from SYMPTOMRANK_API_KEY, and
SYMPTOMRANK_ENDPOINT overrides the configured oracle endpoint.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path

import yaml

ENV_API_KEY = "SYMPTOMRANK_API_KEY"
ENV_ENDPOINT = "SYMPTOMRANK_ENDPOINT"


class ConfigError(ValueError):
    """Invalid or incomplete pipeline configuration."""


@dataclass
class OracleSettings:
    k: int = 5
    include_context: bool = False
    backend: str = "mock"  # "mock" | "http"
    mock_script: Path | None = None
    mock_mode: str = "sequence"  # "sequence" | "hash"
    endpoint: str | None = None
    model: str = "gpt-4o-mini"
    requests_per_second: float | None = None
    concurrency: int = 1
    max_retries: int = 3
    targets: str = "intersection"  # "intersection" | path to a TSV of (symptom, doc) pairs


@dataclass
class PipelineConfig:
    output_dir: Path
    corpus: Path | None = None
    labels: Path | None = None
    embeddings: Path | None = None
    questionnaire: Path | None = None  # None -> bundled BDI-II file
    synthetic: Path | None = None
    score_tables: dict[str, Path] = field(default_factory=dict)
    val_f1: Path | None = None
    qrels_majority: Path | None = None
    qrels_unanimity: Path | None = None
    seed: int = 0
    train_fraction: float = 0.8
    scoring_parallel: bool = True
    run_cap: int = 1000
    oracle: OracleSettings = field(default_factory=OracleSettings)

    def require(self, *names: str) -> None:
        """Check the named input paths are configured and exist."""
        missing = []
        for name in names:
            path = getattr(self, name)
            if path is None:
                raise ConfigError(f"config is missing required path {name!r}")
            if isinstance(path, dict):
                for tag, p in path.items():
                    if not Path(p).exists():
                        missing.append(f"{name}[{tag}]: {p}")
            elif not Path(path).exists():
                missing.append(f"{name}: {path}")
        if missing:
            raise ConfigError("missing input files: " + "; ".join(missing))

    @property
    def questionnaire_path(self) -> Path:
        if self.questionnaire is not None:
            return self.questionnaire
        from symptomrank.corpus import default_questionnaire_path

        return default_questionnaire_path()

    def api_key(self) -> str | None:
        return os.environ.get(ENV_API_KEY)


def _resolve(base: Path, value) -> Path:
    path = Path(value)
    return path if path.is_absolute() else (base / path)


def load_config(path: str | Path) -> PipelineConfig:
    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from None
    base = path.parent

    paths = raw.get("paths", {})
    if "output_dir" not in paths:
        raise ConfigError("config must set paths.output_dir")
    cfg = PipelineConfig(output_dir=_resolve(base, paths["output_dir"]))
    for name in ("corpus", "labels", "embeddings", "questionnaire", "synthetic",
                 "val_f1", "qrels_majority", "qrels_unanimity"):
        if paths.get(name) is not None:
            setattr(cfg, name, _resolve(base, paths[name]))
    for tag, p in (paths.get("score_tables") or {}).items():
        cfg.score_tables[str(tag)] = _resolve(base, p)

    split = raw.get("split", {})
    cfg.seed = int(split.get("seed", cfg.seed))
    cfg.train_fraction = float(split.get("train_fraction", cfg.train_fraction))

    scoring = raw.get("scoring", {})
    cfg.scoring_parallel = bool(scoring.get("parallel", cfg.scoring_parallel))

    runs = raw.get("runs", {})
    cfg.run_cap = int(runs.get("cap", cfg.run_cap))

    oracle = raw.get("oracle", {})
    settings = cfg.oracle
    settings.k = int(oracle.get("k", settings.k))
    settings.include_context = bool(oracle.get("include_context", settings.include_context))
    settings.backend = str(oracle.get("backend", settings.backend))
    if settings.backend not in ("mock", "http"):
        raise ConfigError(f"oracle.backend must be 'mock' or 'http', got {settings.backend!r}")
    if oracle.get("mock_script") is not None:
        settings.mock_script = _resolve(base, oracle["mock_script"])
    settings.mock_mode = str(oracle.get("mock_mode", settings.mock_mode))
    settings.endpoint = oracle.get("endpoint", settings.endpoint)
    settings.model = str(oracle.get("model", settings.model))
    if oracle.get("requests_per_second") is not None:
        settings.requests_per_second = float(oracle["requests_per_second"])
    settings.concurrency = int(oracle.get("concurrency", settings.concurrency))
    settings.max_retries = int(oracle.get("max_retries", settings.max_retries))
    targets = oracle.get("targets", settings.targets)
    settings.targets = targets if targets == "intersection" else str(_resolve(base, targets))

    endpoint_override = os.environ.get(ENV_ENDPOINT)
    if endpoint_override:
        settings.endpoint = endpoint_override
    return cfg
