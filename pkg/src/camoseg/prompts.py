"""Text prompt chains for the grounding detector.

Stages are cumulative: every stage keeps the prompts of the stages before
it and adds its own. The texts live in ``prompt_catalog.json`` next to this
module so new wording can be added without touching code.
"""

from __future__ import annotations

import enum
import hashlib
import json
import logging
from dataclasses import dataclass, field
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Callable, Sequence

logger = logging.getLogger(__name__)

PARAPHRASE_POOL = "paraphrase"
SOURCES = ("method", "catalog-extension")


class PromptStage(enum.IntEnum):
    BASELINE = 1
    PHYSICAL_ATTR = 2
    DYNAMIC_ATTR = 3
    POLYSEMY = 4
    DIVERSE = 5

    @property
    def key(self) -> str:
        return self.name.lower()

    @classmethod
    def parse(cls, value: "str | int | PromptStage") -> "PromptStage":
        if isinstance(value, PromptStage):
            return value
        if isinstance(value, int):
            return cls(value)
        norm = value.strip().lower().replace("-", "_")
        aliases = {"pa": "physical_attr", "da": "dynamic_attr", "physical": "physical_attr",
                   "dynamic": "dynamic_attr", "diversity": "diverse"}
        norm = aliases.get(norm, norm)
        for stage in cls:
            if stage.key == norm:
                return stage
        raise ValueError(f"unknown prompt stage {value!r}")


@dataclass(frozen=True)
class CatalogEntry:
    stage: str
    text: str
    source: str


@dataclass(frozen=True)
class PromptCatalog:
    version: int
    entries: tuple[CatalogEntry, ...]

    def stage_texts(self, stage: PromptStage) -> list[str]:
        return [e.text for e in self.entries if e.stage == stage.key]

    def paraphrase_pool(self) -> list[str]:
        """Static diversity variants: the diverse-stage prompts, then the extension pool."""
        return self.stage_texts(PromptStage.DIVERSE) + [
            e.text for e in self.entries if e.stage == PARAPHRASE_POOL
        ]


def parse_catalog(doc: dict) -> PromptCatalog:
    valid_stages = {s.key for s in PromptStage} | {PARAPHRASE_POOL}
    entries = []
    seen = set()
    for raw in doc["prompts"]:
        entry = CatalogEntry(stage=raw["stage"], text=raw["text"], source=raw["source"])
        if entry.stage not in valid_stages:
            raise ValueError(f"catalog entry has unknown stage {entry.stage!r}")
        if entry.source not in SOURCES:
            raise ValueError(f"catalog entry has unknown source {entry.source!r}")
        if not entry.text.strip():
            raise ValueError("catalog entry has empty text")
        if entry.text in seen:
            raise ValueError(f"duplicate catalog text: {entry.text!r}")
        seen.add(entry.text)
        entries.append(entry)
    return PromptCatalog(version=int(doc.get("version", 1)), entries=tuple(entries))


def load_catalog(path: str | Path | None = None) -> PromptCatalog:
    if path is None:
        return default_catalog()
    return parse_catalog(json.loads(Path(path).read_text(encoding="utf-8")))


@lru_cache(maxsize=None)
def default_catalog() -> PromptCatalog:
    text = resources.files("camoseg").joinpath("prompt_catalog.json").read_text(encoding="utf-8")
    return parse_catalog(json.loads(text))


def chain_hash(texts: Sequence[str]) -> str:
    h = hashlib.sha256()
    for t in texts:
        h.update(t.encode("utf-8"))
        h.update(b"\x00")
    return h.hexdigest()[:16]


@dataclass(frozen=True)
class PromptChain:
    entries: tuple[tuple[PromptStage, str], ...]
    stage: PromptStage
    provenance: tuple[str, ...] = field(default=(), compare=False)

    def __post_init__(self):
        if not self.entries:
            raise ValueError("prompt chain is empty")
        texts = self.texts
        if len(set(texts)) != len(texts):
            raise ValueError("prompt chain contains duplicate texts")
        if any(s > self.stage for s, _ in self.entries):
            raise ValueError("entry stage exceeds the chain's configured stage")

    @property
    def texts(self) -> list[str]:
        return [t for _, t in self.entries]

    @property
    def chain_id(self) -> str:
        return chain_hash(self.texts)

    def __len__(self):
        return len(self.entries)


def build_chain(stage: PromptStage | str | int, catalog: PromptCatalog | None = None) -> PromptChain:
    stage = PromptStage.parse(stage)
    catalog = catalog or default_catalog()
    entries = []
    for s in PromptStage:
        if s > stage:
            break
        entries.extend((s, t) for t in catalog.stage_texts(s))
    return PromptChain(entries=tuple(entries), stage=stage)


# A paraphraser takes the current prompt texts and a count and returns
# candidate rewordings. Any exception it raises triggers the static fallback.
Paraphraser = Callable[[Sequence[str], int], Sequence[str]]


def paraphrase_expand(
    chain: PromptChain,
    n: int,
    paraphraser: Paraphraser | None = None,
    catalog: PromptCatalog | None = None,
) -> PromptChain:
    """Append up to ``n`` new diverse-stage prompts to ``chain``.

    Service-generated paraphrases are sorted by text before they are
    appended, so concurrent generation cannot change the chain id. Any shortfall
    is topped up from the static catalog pool.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    if n == 0:
        return chain
    catalog = catalog or default_catalog()
    existing = set(chain.texts)
    provenance = list(chain.provenance)
    added: list[str] = []

    if paraphraser is not None:
        try:
            generated = [str(t).strip() for t in paraphraser(chain.texts, n)]
        except Exception as exc:  # any service failure degrades to the catalog
            msg = f"paraphraser failed ({type(exc).__name__}: {exc}); used static catalog"
            logger.warning(msg)
            provenance.append(msg)
            generated = []
        for text in sorted(set(generated)):
            if text and text not in existing and len(added) < n:
                added.append(text)
                existing.add(text)
        if added:
            provenance.append(f"paraphraser added {len(added)}")

    static = 0
    for text in catalog.paraphrase_pool():
        if len(added) >= n:
            break
        if text not in existing:
            added.append(text)
            existing.add(text)
            static += 1
    if static:
        provenance.append(f"static catalog added {static}")

    entries = chain.entries + tuple((PromptStage.DIVERSE, t) for t in added)
    return PromptChain(entries=entries, stage=PromptStage.DIVERSE, provenance=tuple(provenance))
