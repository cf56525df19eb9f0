"""Table schemas plus the privacy metadata the analyses consume."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from .algebra import SCALAR_TYPES, Schema


class CatalogError(Exception):
    pass


MANY = math.inf


@dataclass(frozen=True)
class ColumnInfo:
    name: str
    type: str
    max_frequency: int | None = None
    # rows of this table that can share one value of the column; inf = many
    join_cap: float = MANY
    domain_source: tuple[str, str] | None = None


@dataclass(frozen=True)
class TableInfo:
    name: str
    columns: tuple[ColumnInfo, ...]
    primary_key: tuple[str, ...] = ()
    protected: bool = False
    row_count: int | None = None

    @property
    def schema(self) -> Schema:
        return Schema([(c.name, c.type) for c in self.columns])

    def column(self, name: str) -> ColumnInfo:
        for c in self.columns:
            if c.name == name:
                return c
        raise KeyError(name)


@dataclass(frozen=True)
class Catalog:
    tables: dict = field(default_factory=dict)

    def __post_init__(self):
        protected = [t.name for t in self.tables.values() if t.protected]
        if len(protected) != 1:
            raise CatalogError(
                f"exactly one table must be protected, found {len(protected)}: {protected}"
            )
        for t in self.tables.values():
            for c in t.columns:
                if c.domain_source is not None:
                    dt, dc = c.domain_source
                    if dt not in self.tables or dc not in t_names(self.tables[dt]):
                        raise CatalogError(
                            f"{t.name}.{c.name}: domainSource {dt}.{dc} does not exist"
                        )

    def __hash__(self):
        return id(self)

    @property
    def protected_table(self) -> str:
        return next(t.name for t in self.tables.values() if t.protected)

    def table(self, name: str) -> TableInfo:
        return self.tables[name]

    def table_schema(self, name: str) -> Schema:
        return self.tables[name].schema

    def column(self, table: str, col: str) -> ColumnInfo:
        return self.tables[table].column(col)

    def db_size(self) -> int | None:
        return self.tables[self.protected_table].row_count


def t_names(t: TableInfo) -> list[str]:
    return [c.name for c in t.columns]


_TABLE_KEYS = {"name", "columns", "primaryKey", "protected", "rowCount"}
_COLUMN_KEYS = {"name", "type", "maxFrequency", "joinMultiplicityCap", "domainSource"}


def _parse_cap(value, where: str) -> float:
    if value == "one":
        return 1
    if value == "many":
        return MANY
    if isinstance(value, dict) and set(value) == {"capped"}:
        value = value["capped"]
    if isinstance(value, int) and not isinstance(value, bool) and value >= 1:
        return value
    raise CatalogError(f"{where}: joinMultiplicityCap must be 'one', 'many' or {{'capped': k}}")


def _parse_domain(value, where: str) -> tuple[str, str]:
    if isinstance(value, str) and value.count(".") == 1:
        return tuple(value.split("."))
    if isinstance(value, dict) and set(value) == {"table", "column"}:
        return (value["table"], value["column"])
    if isinstance(value, (list, tuple)) and len(value) == 2:
        return (value[0], value[1])
    raise CatalogError(f"{where}: domainSource must be 'table.column'")


def catalog_from_dict(doc: dict) -> Catalog:
    if not isinstance(doc, dict) or set(doc) != {"tables"}:
        extra = sorted(set(doc) - {"tables"}) if isinstance(doc, dict) else doc
        raise CatalogError(f"catalog must have exactly one key 'tables' (got extra {extra})")
    tables = {}
    for t in doc["tables"]:
        unknown = set(t) - _TABLE_KEYS
        if unknown:
            raise CatalogError(f"table {t.get('name')!r}: unknown keys {sorted(unknown)}")
        name = t.get("name")
        if not name or "columns" not in t:
            raise CatalogError("every table needs a name and columns")
        pk = tuple(t.get("primaryKey", ()))
        cols = []
        for c in t["columns"]:
            where = f"{name}.{c.get('name')}"
            unknown = set(c) - _COLUMN_KEYS
            if unknown:
                raise CatalogError(f"column {where}: unknown keys {sorted(unknown)}")
            if c.get("type") not in SCALAR_TYPES:
                raise CatalogError(f"column {where}: type must be one of {SCALAR_TYPES}")
            mf = c.get("maxFrequency")
            if mf is not None and (not isinstance(mf, int) or mf < 1):
                raise CatalogError(f"column {where}: maxFrequency must be a positive integer")
            in_pk = pk == (c["name"],)
            if in_pk:
                if mf not in (None, 1):
                    raise CatalogError(f"column {where}: primary key must have maxFrequency 1")
                mf = 1
            cap = _parse_cap(c["joinMultiplicityCap"], where) if "joinMultiplicityCap" in c else (
                1 if in_pk else MANY
            )
            dom = _parse_domain(c["domainSource"], where) if "domainSource" in c else None
            cols.append(ColumnInfo(c["name"], c["type"], mf, cap, dom))
        names = [c.name for c in cols]
        if len(set(names)) != len(names):
            raise CatalogError(f"table {name}: duplicate column names")
        for k in pk:
            if k not in names:
                raise CatalogError(f"table {name}: primary key column {k!r} missing")
        rc = t.get("rowCount")
        if rc is not None and (not isinstance(rc, int) or rc < 0):
            raise CatalogError(f"table {name}: rowCount must be a non-negative integer")
        if name in tables:
            raise CatalogError(f"duplicate table {name!r}")
        tables[name] = TableInfo(name, tuple(cols), pk, bool(t.get("protected", False)), rc)
    return Catalog(tables)


def load_catalog(path) -> Catalog:
    try:
        doc = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise CatalogError(f"cannot read catalog {path}: {e}") from e
    return catalog_from_dict(doc)


def catalog_to_dict(cat: Catalog) -> dict:
    def cap(c):
        if c.join_cap == MANY:
            return "many"
        return "one" if c.join_cap == 1 else {"capped": int(c.join_cap)}

    out = []
    for t in cat.tables.values():
        cols = []
        for c in t.columns:
            d = {"name": c.name, "type": c.type, "joinMultiplicityCap": cap(c)}
            if c.max_frequency is not None:
                d["maxFrequency"] = c.max_frequency
            if c.domain_source:
                d["domainSource"] = ".".join(c.domain_source)
            cols.append(d)
        td = {"name": t.name, "columns": cols, "primaryKey": list(t.primary_key),
              "protected": t.protected}
        if t.row_count is not None:
            td["rowCount"] = t.row_count
        out.append(td)
    return {"tables": out}


def with_row_count(cat: Catalog, table: str, n: int) -> Catalog:
    from dataclasses import replace

    tables = dict(cat.tables)
    tables[table] = replace(tables[table], row_count=n)
    return Catalog(tables)
