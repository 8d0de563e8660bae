"""Semantic category taxonomy for road-scene segmentation masks.

The 66 urban object categories are shipped as a versioned JSON data file.
Everything downstream depends only on index order (0..65), never on the
names, so a renamed taxonomy file does not change any numeric result.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from importlib import resources

from .errors import DataError

NUM_CATEGORIES = 66
VOID_INDEX = 255

_DEFAULT_RESOURCE = "mapillary_vistas_v1_2.json"


@dataclass(frozen=True)
class CategoryTaxonomy:
    """Ordered list of the 66 category names, plus the void (unlabeled) index."""

    version: str
    names: tuple[str, ...]
    void_index: int = VOID_INDEX

    def __post_init__(self):
        if len(self.names) != NUM_CATEGORIES:
            raise DataError(
                f"taxonomy must have exactly {NUM_CATEGORIES} categories, "
                f"got {len(self.names)}"
            )
        if len(set(self.names)) != len(self.names):
            raise DataError("taxonomy category names must be unique")
        if 0 <= self.void_index < NUM_CATEGORIES:
            raise DataError("void index must lie outside the category range")

    def __len__(self) -> int:
        return NUM_CATEGORIES

    def index_of(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise DataError(f"unknown category name: {name!r}") from None

    def name_of(self, index: int) -> str:
        if not 0 <= index < NUM_CATEGORIES:
            raise DataError(f"category index {index} out of range 0..65")
        return self.names[index]


def load_taxonomy(path=None) -> CategoryTaxonomy:
    """Load a taxonomy from ``path``, or the bundled Mapillary Vistas one."""
    if path is None:
        raw = resources.files("roadstress.data").joinpath(_DEFAULT_RESOURCE).read_text()
    else:
        with open(path, encoding="utf-8") as fh:
            raw = fh.read()
    doc = json.loads(raw)
    return CategoryTaxonomy(
        version=doc["version"],
        names=tuple(doc["categories"]),
        void_index=int(doc.get("void_index", VOID_INDEX)),
    )


DEFAULT_TAXONOMY = load_taxonomy()
