"""Declarative run configuration (YAML).

Schema (every key optional; relative paths resolve against the file)::

    providers:
      default: stub                 # used for any capability not listed
      caption: stub                 # or a mapping of ProviderConfig fields:
      generate:                     #   endpoint_url, api_key_ref, model_id,
        endpoint_url: https://...   #   timeout, max_retries,
        api_key_ref: GEN_API_KEY    #   max_concurrent_requests
        model_id: my-model
    match: {time_window: 15, location_threshold: 0.75}
    retrieval: {k: 5, mode: image-audio, caption_only_query: false}
    paths: {corpus: ..., index: ..., images: ..., audio: ..., output: ...}
    parallelism: 1
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Mapping

import yaml

from siteinspect.errors import ConfigError
from siteinspect.matcher import MatchConfig
from siteinspect.pipeline import MODES, BatchConfig, Providers
from siteinspect.providers.base import ProviderConfig

CAPABILITIES = ("caption", "transcribe", "embed_text", "embed_page", "generate")
PATH_KEYS = ("corpus", "index", "images", "audio", "output")
_TOP_KEYS = {"providers", "match", "retrieval", "paths", "parallelism"}


def _provider(value: Any, where: str) -> ProviderConfig:
    if value is None or value == "stub":
        return ProviderConfig.stub()
    if isinstance(value, Mapping):
        fields_ = dict(value)
        fields_.setdefault("kind", "http")
        try:
            return ProviderConfig(**fields_)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"providers.{where}: {exc}") from exc
    raise ConfigError(f"providers.{where}: expected 'stub' or a mapping, got {value!r}")


@dataclass(frozen=True)
class RunConfig:
    providers: dict[str, ProviderConfig] = field(
        default_factory=lambda: {c: ProviderConfig.stub() for c in CAPABILITIES}
    )
    match: MatchConfig = field(default_factory=MatchConfig)
    k: int = 5
    mode: str = "image-audio"
    caption_only_query: bool = False
    paths: dict[str, Path | None] = field(default_factory=lambda: dict.fromkeys(PATH_KEYS))
    parallelism: int = 1

    @classmethod
    def from_dict(cls, data: Mapping | None, base_dir: Path | None = None) -> "RunConfig":
        data = dict(data or {})
        unknown = set(data) - _TOP_KEYS
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        prov_raw = dict(data.get("providers") or {})
        default = prov_raw.pop("default", "stub")
        bad = set(prov_raw) - set(CAPABILITIES)
        if bad:
            raise ConfigError(f"unknown provider capabilities: {sorted(bad)}")
        providers = {c: _provider(prov_raw.get(c, default), c) for c in CAPABILITIES}
        m = dict(data.get("match") or {})
        try:
            match = MatchConfig(
                time_window=float(m.pop("time_window", 15.0)),
                location_threshold=float(m.pop("location_threshold", 0.75)),
            )
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"match: {exc}") from exc
        if m:
            raise ConfigError(f"unknown match keys: {sorted(m)}")
        r = dict(data.get("retrieval") or {})
        k = r.pop("k", 5)
        mode = r.pop("mode", "image-audio")
        caption_only = bool(r.pop("caption_only_query", False))
        if r:
            raise ConfigError(f"unknown retrieval keys: {sorted(r)}")
        raw_paths = dict(data.get("paths") or {})
        bad = set(raw_paths) - set(PATH_KEYS)
        if bad:
            raise ConfigError(f"unknown path keys: {sorted(bad)}")
        paths: dict[str, Path | None] = {}
        for key in PATH_KEYS:
            v = raw_paths.get(key)
            if v is None:
                paths[key] = None
            else:
                p = Path(os.path.expanduser(str(v)))
                paths[key] = p if p.is_absolute() or base_dir is None else base_dir / p
        cfg = cls(providers, match, k, mode, caption_only, paths, data.get("parallelism", 1))
        cfg.check_values()
        return cfg

    @classmethod
    def load(cls, path: str | os.PathLike | None) -> "RunConfig":
        if path is None:
            return cls()
        path = Path(path)
        try:
            data = yaml.safe_load(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML: {exc}") from exc
        if data is not None and not isinstance(data, Mapping):
            raise ConfigError("config root must be a mapping")
        return cls.from_dict(data, path.parent)

    def check_values(self) -> None:
        if self.mode not in MODES:
            raise ConfigError(f"retrieval.mode must be one of {MODES}, got {self.mode!r}")
        if isinstance(self.k, bool) or not isinstance(self.k, int) or self.k < 1:
            raise ConfigError(f"retrieval.k must be a positive integer, got {self.k!r}")
        if isinstance(self.parallelism, bool) or not isinstance(self.parallelism, int) or self.parallelism < 1:
            raise ConfigError(f"parallelism must be a positive integer, got {self.parallelism!r}")

    def override(self, **kw: Any) -> "RunConfig":
        """Apply CLI overrides; ``None`` values are ignored."""
        kw = {k: v for k, v in kw.items() if v is not None}
        paths = dict(self.paths)
        for key in PATH_KEYS:
            if key in kw:
                paths[key] = Path(kw.pop(key))
        match = self.match
        if "time_window" in kw or "location_threshold" in kw:
            try:
                match = MatchConfig(
                    float(kw.pop("time_window", match.time_window)),
                    float(kw.pop("location_threshold", match.location_threshold)),
                )
            except ValueError as exc:
                raise ConfigError(f"match: {exc}") from exc
        cfg = replace(self, paths=paths, match=match, **kw)
        cfg.check_values()
        return cfg

    def check_credentials(self, capabilities=CAPABILITIES) -> None:
        for cap in capabilities:
            pc = self.providers[cap]
            if pc.kind == "http" and pc.api_key_ref and not os.environ.get(pc.api_key_ref):
                raise ConfigError(f"providers.{cap}: environment variable {pc.api_key_ref} is not set")

    def require_dir(self, key: str) -> Path:
        p = self.paths.get(key)
        if p is None:
            raise ConfigError(f"paths.{key} is required")
        if not p.is_dir():
            raise ConfigError(f"paths.{key}: {p} is not a directory")
        return p

    def batch_config(self) -> BatchConfig:
        return BatchConfig(self.mode, self.k, self.match, self.caption_only_query, self.parallelism)

    def make_providers(self) -> Providers:
        return Providers(*(self.providers[c] for c in CAPABILITIES))

    def snapshot(self) -> dict:
        return {
            "providers": {
                c: {"kind": p.kind, "model_id": p.model_id, "endpoint_url": p.endpoint_url or None}
                for c, p in self.providers.items()
            },
        }
