"""Ready-to-run example bundles (network and estimation spec files).

Each bundle is a directory of JSON files: a `network.json` and/or
`model-set.json` plus estimation specs, usable directly with the CLI.
"""

from importlib.resources import files
from pathlib import Path

__all__ = ["available", "bundle_dir", "bundle_file"]


def _root() -> Path:
    return Path(str(files(__package__)))


def available() -> list[str]:
    """Names of the shipped bundles."""
    return sorted(p.name for p in _root().iterdir() if p.is_dir() and not p.name.startswith("_"))


def bundle_dir(name: str) -> Path:
    path = _root() / name
    if not path.is_dir():
        raise KeyError(f"no bundle named {name!r}; available: {available()}")
    return path


def bundle_file(name: str, filename: str) -> Path:
    path = bundle_dir(name) / filename
    if not path.is_file():
        raise KeyError(f"bundle {name!r} has no file {filename!r}")
    return path
