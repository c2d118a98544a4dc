from .settings import (
    RunConfig,
    build_config,
    dump_config,
    load_config,
    parse_config_text,
    parse_overrides,
)

__all__ = [
    "RunConfig",
    "build_config",
    "dump_config",
    "load_config",
    "parse_config_text",
    "parse_overrides",
]
