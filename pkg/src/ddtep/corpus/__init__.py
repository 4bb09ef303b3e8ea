"""Example programs shipped with the package."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

PROGRAMS = (
    "car",
    "cake",
    "cake_people",
    "cake_likes",
    "cake_likes_expensive_ask",
    "burning_room",
    "archives",
    "archives_learn",
)
DATASETS = ("impact_evidence",)


def path(name: str) -> Path:
    """Location of a corpus file; the ``.ddtep`` suffix is optional."""
    if not name.endswith(".ddtep"):
        name += ".ddtep"
    p = Path(str(resources.files(__name__).joinpath(name)))
    if not p.is_file():
        raise FileNotFoundError(f"no corpus file named {name}")
    return p


def read(name: str) -> str:
    return path(name).read_text(encoding="utf-8")
