"""Run configuration: one declarative document, env interpolation, builders.

Secrets never live in the file; ``${VAR}`` and ``${VAR:-default}`` are
substituted from the environment at load time. Flags override file values,
file values override defaults.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from .alignment import AlignmentConfig, FeaturizerMode, SchemaAligner, ScorerKind
from .curation import HttpMetadataResolver, MetadataResolver, StaticResolver
from .errors import ValidationError
from .gateway import HttpChatProvider, HttpEmbedProvider, ModelGateway
from .generation import ModelRoles, TableGenerator
from .stubs import DeterministicTaskStub, EchoChatProvider, SeededStubEmbedder

ENV_CHAT_KEY = "DIGESTTAB_CHAT_API_KEY"
ENV_EMBED_KEY = "DIGESTTAB_EMBED_API_KEY"
ENV_S2_KEY = "DIGESTTAB_S2_API_KEY"
ENV_CACHE_DIR = "DIGESTTAB_CACHE_DIR"

_ENV_RE = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_]*)(?::-([^}]*))?\}")


@dataclass
class ProviderConfig:
    kind: str = "stub"  # http | stub | echo | none
    base_url: str | None = None
    api_key: str | None = None
    model: str | None = None


@dataclass
class ResolverConfig:
    kind: str = "none"  # http | fixture | none
    base_url: str | None = None
    api_key: str | None = None
    fixture: str | None = None


@dataclass
class AlignmentDefaults:
    featurizer: str = FeaturizerMode.DECONTEXT.value
    scorer: str = ScorerKind.EMBED.value
    threshold: float = 0.7


@dataclass
class RunConfig:
    chat: ProviderConfig = field(default_factory=ProviderConfig)
    embed: ProviderConfig = field(default_factory=ProviderConfig)
    resolver: ResolverConfig = field(default_factory=ResolverConfig)
    models: ModelRoles = field(default_factory=ModelRoles)
    alignment: AlignmentDefaults = field(default_factory=AlignmentDefaults)
    cache_dir: str | None = None
    batch_size: int = 20
    retry_budget: int = 5
    seed: int = 0
    offline: bool = False
    max_workers: int = 1
    max_tokens: int = 2048
    max_in_flight: int = 4

    def validate(self) -> None:
        if not 0.0 <= self.alignment.threshold <= 1.0:
            raise ValidationError(
                f"alignment.threshold must be in [0, 1], got {self.alignment.threshold}"
            )
        if self.batch_size < 1:
            raise ValidationError("batch_size must be >= 1")
        if self.retry_budget < 0:
            raise ValidationError("retry_budget must be >= 0")

    def digest(self) -> str:
        payload = json.dumps(asdict(self), sort_keys=True, ensure_ascii=False)
        return hashlib.sha256(payload.encode("utf-8")).hexdigest()


def _interpolate(value: Any) -> Any:
    if isinstance(value, str):

        def sub(match: re.Match) -> str:
            return os.environ.get(match.group(1), match.group(2) or "")

        return _ENV_RE.sub(sub, value)
    if isinstance(value, Mapping):
        return {k: _interpolate(v) for k, v in value.items()}
    if isinstance(value, list):
        return [_interpolate(v) for v in value]
    return value


def load_config(path: str | Path | None = None, overrides: Mapping[str, Any] | None = None) -> RunConfig:
    raw: dict[str, Any] = {}
    if path is not None:
        raw = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
        if not isinstance(raw, dict):
            raise ValidationError(f"config file {path} must hold a mapping")
    raw = _interpolate(raw)
    if overrides:
        raw = _deep_merge(raw, dict(overrides))

    config = RunConfig()
    config.chat = _provider(raw.get("chat"), default_key_env=ENV_CHAT_KEY)
    config.embed = _provider(raw.get("embed"), default_key_env=ENV_EMBED_KEY)
    config.resolver = _resolver(raw.get("resolver"))
    models = raw.get("models") or {}
    config.models = ModelRoles(
        schema=models.get("schema", ModelRoles.schema),
        value=models.get("value", ModelRoles.value),
        rewrite=models.get("rewrite", ModelRoles.rewrite),
        describe=models.get("describe", ModelRoles.describe),
        decontext=models.get("decontext", ModelRoles.decontext),
        caption=models.get("caption", ModelRoles.caption),
    )
    align = raw.get("alignment") or {}
    config.alignment = AlignmentDefaults(
        featurizer=align.get("featurizer", AlignmentDefaults.featurizer),
        scorer=align.get("scorer", AlignmentDefaults.scorer),
        threshold=float(align.get("threshold", AlignmentDefaults.threshold)),
    )
    config.cache_dir = raw.get("cache_dir") or os.environ.get(ENV_CACHE_DIR) or None
    config.batch_size = int(raw.get("batch_size", config.batch_size))
    config.retry_budget = int(raw.get("retry_budget", config.retry_budget))
    config.seed = int(raw.get("seed", config.seed))
    config.offline = bool(raw.get("offline", config.offline))
    config.max_workers = int(raw.get("max_workers", config.max_workers))
    config.max_tokens = int(raw.get("max_tokens", config.max_tokens))
    config.max_in_flight = int(raw.get("max_in_flight", config.max_in_flight))
    config.validate()
    return config


def _provider(raw: Mapping[str, Any] | None, default_key_env: str) -> ProviderConfig:
    raw = raw or {}
    return ProviderConfig(
        kind=raw.get("kind", "stub"),
        base_url=raw.get("base_url"),
        api_key=raw.get("api_key") or os.environ.get(default_key_env),
        model=raw.get("model"),
    )


def _resolver(raw: Mapping[str, Any] | None) -> ResolverConfig:
    raw = raw or {}
    return ResolverConfig(
        kind=raw.get("kind", "none"),
        base_url=raw.get("base_url"),
        api_key=raw.get("api_key") or os.environ.get(ENV_S2_KEY),
        fixture=raw.get("fixture"),
    )


def _deep_merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for key, value in extra.items():
        if isinstance(value, Mapping) and isinstance(out.get(key), Mapping):
            out[key] = _deep_merge(dict(out[key]), dict(value))
        elif value is not None:
            out[key] = value
    return out


# -- builders -----------------------------------------------------------------


def build_gateway(config: RunConfig) -> ModelGateway:
    chat = None
    if config.chat.kind == "http":
        if not config.chat.base_url:
            raise ValidationError("chat.kind=http needs chat.base_url")
        chat = HttpChatProvider(config.chat.base_url, config.chat.api_key)
    elif config.chat.kind == "stub":
        chat = DeterministicTaskStub()
    elif config.chat.kind == "echo":
        chat = EchoChatProvider()
    elif config.chat.kind != "none":
        raise ValidationError(f"unknown chat provider kind {config.chat.kind!r}")

    embed = None
    if config.embed.kind == "http":
        if not config.embed.base_url or not config.embed.model:
            raise ValidationError("embed.kind=http needs embed.base_url and embed.model")
        embed = HttpEmbedProvider(config.embed.base_url, config.embed.model, config.embed.api_key)
    elif config.embed.kind == "stub":
        embed = SeededStubEmbedder(seed=config.seed, model_id=config.embed.model or "stub-embed-16")
    elif config.embed.kind != "none":
        raise ValidationError(f"unknown embed provider kind {config.embed.kind!r}")

    return ModelGateway(
        chat_provider=chat,
        embed_provider=embed,
        cache_dir=config.cache_dir,
        max_in_flight=config.max_in_flight,
        offline=config.offline,
    )


def build_resolver(config: RunConfig, spec: str | None = None) -> MetadataResolver:
    """``spec`` (from the command line) overrides the config file:
    "http" or "fixture:/path/to/records.json"."""
    kind = config.resolver.kind
    fixture = config.resolver.fixture
    if spec:
        if spec == "http":
            kind = "http"
        elif spec.startswith("fixture:"):
            kind, fixture = "fixture", spec.split(":", 1)[1]
        else:
            raise ValidationError(f"unknown resolver spec {spec!r}")
    if kind == "http":
        base = config.resolver.base_url or "https://api.semanticscholar.org/graph/v1"
        return HttpMetadataResolver(base, config.resolver.api_key)
    if kind == "fixture":
        if not fixture:
            raise ValidationError("fixture resolver needs a records file")
        records = json.loads(Path(fixture).read_text(encoding="utf-8"))
        return StaticResolver(records)
    raise ValidationError("no metadata resolver configured (set resolver.kind or --resolver)")


def build_generator(config: RunConfig, gateway: ModelGateway) -> TableGenerator:
    return TableGenerator(
        gateway,
        config.models,
        batch_size=config.batch_size,
        retry_budget=config.retry_budget,
        max_tokens=config.max_tokens,
        max_workers=config.max_workers,
    )


def build_aligner(config: RunConfig, gateway: ModelGateway) -> SchemaAligner:
    return SchemaAligner(
        gateway,
        decontext_model=config.models.decontext,
        aligner_model=config.models.schema,
        max_tokens=config.max_tokens,
    )


def alignment_config_from(config: RunConfig, featurizer: str | None, scorer: str | None, threshold: float | None) -> AlignmentConfig:
    return AlignmentConfig(
        featurizer=FeaturizerMode(featurizer or config.alignment.featurizer),
        scorer=ScorerKind(scorer or config.alignment.scorer),
        threshold=config.alignment.threshold if threshold is None else threshold,
    )
