"""Bundled hand-labeled query corpus used by the support and selection experiments."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

from .mechanisms import MECHANISMS

CORPUS_PATH = Path(__file__).with_name("data") / "corpus.json"


@dataclass(frozen=True)
class CorpusQuery:
    id: str
    sql: str
    category: str
    labels: dict
    bins: tuple | None = None

    def supported_by(self) -> tuple:
        return tuple(m for m in MECHANISMS if self.labels[m])


def load_corpus(path=CORPUS_PATH) -> list[CorpusQuery]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    out, seen = [], set()
    for e in doc:
        if e["id"] in seen:
            raise ValueError(f"duplicate corpus id {e['id']!r}")
        seen.add(e["id"])
        if set(e["labels"]) != set(MECHANISMS):
            raise ValueError(f"{e['id']}: labels must cover {MECHANISMS}")
        bins = tuple(e["bins"]) if e.get("bins") is not None else None
        out.append(CorpusQuery(e["id"], e["sql"], e["category"], dict(e["labels"]), bins))
    return out
