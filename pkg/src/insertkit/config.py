"""Layered runtime configuration.

One config file (TOML or JSON, picked by extension) carries backend
endpoints, generator choice, and service limits; command-line flags override
file values, and ``ERASEDRAW_<ROLE>_ENDPOINT`` / ``ERASEDRAW_<ROLE>_API_KEY``
environment variables override endpoints per backend role.  Secrets never
appear in config files — only the *names* of the environment variables that
hold them.

Schema (all sections optional):

    [backends]
    kind = "mock"            # "mock" | "http"
    scenario = "shapes-small"  # mock: registered scenario name

    [backends.http.captioner]     # one table per role for kind = "http"
    endpoint = "http://host:port"
    api_key_env = "MY_KEY_VAR"
    timeout = 30.0
    max_retries = 2
    temperature = 0.2

    [generator]
    kind = "suite"           # "suite" (backend suite's generator) | "checkpoint"
    checkpoint = "runs/checkpoint.zip"
    steps = 18               # sampler overrides, checkpoint kind only
    image_guidance = 1.5
    text_guidance = 7.5
    eta = 1.0

    [service]
    max_side = 1024
    max_candidates = 8
    ttl_seconds = 86400
    sweep_interval = 300
    media_dir = "..."
    persist_dir = "..."
    cors_origins = ["*"]
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import tomli

from insertkit.backends.base import BackendConfig, BackendSuite, Generator
from insertkit.backends.http import (
    HttpCaptioner,
    HttpEmbedder,
    HttpEraser,
    HttpGenerator,
    HttpGroundingDetector,
    HttpSegmenter,
    endpoint_env_var,
    resolve_config,
)
from insertkit.backends.mock import mock_suite
from insertkit.errors import InvalidArgument

_HTTP_ROLES = ("captioner", "detector", "segmenter", "eraser", "embedder", "generator")


def load_config_file(path: str | Path) -> dict:
    """Parses a TOML (.toml) or JSON (.json) config file into a dict."""
    path = Path(path)
    if not path.exists():
        raise InvalidArgument(f"config file not found: {path}")
    suffix = path.suffix.lower()
    if suffix == ".toml":
        with path.open("rb") as fh:
            return tomli.load(fh)
    if suffix == ".json":
        return json.loads(path.read_text(encoding="utf-8"))
    raise InvalidArgument(
        f"config file must end in .toml or .json, got {path.name!r}"
    )


def _http_role_config(doc: dict, role: str) -> BackendConfig:
    table = doc.get("backends", {}).get("http", {}).get(role, {})
    endpoint = os.environ.get(endpoint_env_var(role), table.get("endpoint", ""))
    if not endpoint:
        raise InvalidArgument(
            f"no endpoint for backend role {role!r}: set backends.http.{role}."
            f"endpoint or the {endpoint_env_var(role)} environment variable"
        )
    base = BackendConfig(
        endpoint=endpoint,
        api_key_env=table.get("api_key_env", ""),
        timeout=float(table.get("timeout", 30.0)),
        max_retries=int(table.get("max_retries", 2)),
        temperature=float(table.get("temperature", 0.2)),
    )
    return resolve_config(role, base)


def build_suite(doc: dict | None = None) -> BackendSuite:
    """Builds the full backend suite described by the config document."""
    doc = doc or {}
    backends = doc.get("backends", {})
    kind = backends.get("kind", "mock")
    if kind == "mock":
        return mock_suite(backends.get("scenario", "shapes-small"))
    if kind == "http":
        return BackendSuite(
            captioner=HttpCaptioner(_http_role_config(doc, "captioner")),
            detector=HttpGroundingDetector(_http_role_config(doc, "detector")),
            segmenter=HttpSegmenter(_http_role_config(doc, "segmenter")),
            eraser=HttpEraser(_http_role_config(doc, "eraser")),
            embedder=HttpEmbedder(_http_role_config(doc, "embedder")),
            generator=HttpGenerator(_http_role_config(doc, "generator")),
        )
    raise InvalidArgument(f'backends.kind must be "mock" or "http", got {kind!r}')


def build_generator(
    doc: dict | None,
    suite: BackendSuite,
    checkpoint: str | None = None,
    seed: int = 0,
) -> Generator:
    """Resolves the generator: an explicit checkpoint path wins, then the
    config's [generator] section, then the suite's own generator."""
    doc = doc or {}
    section = dict(doc.get("generator", {}))
    if checkpoint is not None:
        section["kind"] = "checkpoint"
        section["checkpoint"] = checkpoint
    kind = section.get("kind", "suite")

    if kind == "suite":
        if suite.generator is None:
            raise InvalidArgument("backend suite has no generator role configured")
        return suite.generator
    if kind == "checkpoint":
        path = section.get("checkpoint")
        if not path:
            raise InvalidArgument("generator.kind = 'checkpoint' requires generator.checkpoint")
        # Imported here so mock-only commands never pay the torch import.
        from insertkit.diffusion import DiffusionGenerator, SamplerConfig

        sampler = SamplerConfig(
            steps=int(section.get("steps", 18)),
            image_guidance=float(section.get("image_guidance", 1.5)),
            text_guidance=float(section.get("text_guidance", 7.5)),
            eta=float(section.get("eta", 1.0)),
            seed=seed,
        )
        return DiffusionGenerator.from_checkpoint(
            path, embedder=suite.embedder, sampler=sampler
        )
    raise InvalidArgument(
        f'generator.kind must be "suite" or "checkpoint", got {kind!r}'
    )


def build_service_config(doc: dict | None = None, **overrides):
    """Merges the [service] section with keyword overrides (flags win)."""
    from insertkit.service.app import ServiceConfig

    doc = doc or {}
    section = dict(doc.get("service", {}))
    section.update({k: v for k, v in overrides.items() if v is not None})
    known = {
        "max_side",
        "max_candidates",
        "default_candidates",
        "ttl_seconds",
        "sweep_interval",
        "media_dir",
        "persist_dir",
        "cors_origins",
    }
    unknown = set(section) - known
    if unknown:
        raise InvalidArgument(f"unknown service config keys: {sorted(unknown)}")
    if "cors_origins" in section:
        section["cors_origins"] = tuple(section["cors_origins"])
    return ServiceConfig(**section)
