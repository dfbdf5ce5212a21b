from .config import RunConfig, apply_overrides, dump_config, load_config

__all__ = [
    "SlamRuntime",
    "build_runtime",
    "RunConfig",
    "apply_overrides",
    "dump_config",
    "load_config",
]


def __getattr__(name):
    # core modules import RunConfig from here; bootstrap imports core, so load it on first use
    if name in ("SlamRuntime", "build_runtime"):
        from . import bootstrap

        return getattr(bootstrap, name)
    raise AttributeError(f"module {__name__!r} has no attribute {name!r}")
