"""SQL dialect registry used when rendering step scripts."""
from __future__ import annotations

import re
from dataclasses import dataclass, field

LEVELS = {
    "ser": "SERIALIZABLE",
    "rr": "REPEATABLE READ",
    "rc": "READ COMMITTED",
    "ru": "READ UNCOMMITTED",
}
_ALIASES = {
    "serializable": "ser", "si": "ser", "repeatable-read": "rr", "repeatable_read": "rr",
    "read-committed": "rc", "read_committed": "rc", "read-uncommitted": "ru",
    "read_uncommitted": "ru",
}


def normalize_level(level: str) -> str:
    key = level.strip().lower().replace(" ", "-")
    key = _ALIASES.get(key, key)
    if key not in LEVELS:
        raise ValueError(f"unknown isolation level {level!r} (use one of {', '.join(LEVELS)})")
    return key


@dataclass(frozen=True)
class SqlDialect:
    name: str
    begin: str
    commit: str
    rollback: str
    isolation: str              # formatted with {level}
    ddl: str                    # formatted with {table}
    partition: str              # formatted with {table}; "tables" means one table per partition
    rule_error: str
    deadlock_error: str
    timeout_error: str
    isolation_before_begin: bool = True
    level_names: dict = field(default_factory=lambda: dict(LEVELS))

    def __post_init__(self):
        for f in ("begin", "commit", "rollback", "isolation", "ddl", "partition",
                  "rule_error", "deadlock_error", "timeout_error"):
            if not getattr(self, f):
                raise ValueError(f"dialect {self.name}: {f} is empty")

    def set_isolation(self, level: str) -> str:
        return self.isolation.format(level=self.level_names[normalize_level(level)])

    def start(self, level: str) -> list[str]:
        iso = self.set_isolation(level)
        return [iso, self.begin] if self.isolation_before_begin else [self.begin, iso]

    def create_table(self, table: str) -> str:
        return self.ddl.format(table=table)

    def error_class(self, message: str) -> str:
        """rule, deadlock, timeout or other."""
        for cls, pat in (("deadlock", self.deadlock_error), ("timeout", self.timeout_error),
                         ("rule", self.rule_error)):
            if re.search(pat, message, re.IGNORECASE):
                return cls
        return "other"


_REGISTRY: dict[str, SqlDialect] = {}


def register(d: SqlDialect) -> SqlDialect:
    _REGISTRY[d.name] = d
    return d


def get_dialect(name: str) -> SqlDialect:
    try:
        return _REGISTRY[name.lower()]
    except KeyError:
        raise KeyError(f"unregistered dialect {name!r}; known: {', '.join(sorted(_REGISTRY))}") from None


def dialect_names() -> list[str]:
    return sorted(_REGISTRY)


ANSI = register(SqlDialect(
    "ansi", "START TRANSACTION", "COMMIT", "ROLLBACK",
    "SET TRANSACTION ISOLATION LEVEL {level}",
    "CREATE TABLE {table} (k INT PRIMARY KEY, v INT)",
    "PARTITION BY RANGE (k)",
    r"serializ|could not|rule|conflict|first.updater|pivot",
    r"deadlock",
    r"time.?out|timed out|lock wait",
))

register(SqlDialect(
    "postgresql", "BEGIN", "COMMIT", "ROLLBACK",
    "SET TRANSACTION ISOLATION LEVEL {level}",
    "CREATE TABLE {table} (k INT PRIMARY KEY, v INT)",
    "PARTITION BY RANGE (k)",
    r"could not serialize|serialization failure|40001",
    r"deadlock detected|40P01",
    r"lock timeout|statement timeout|canceling statement|55P03",
    isolation_before_begin=False,
))

register(SqlDialect(
    "mysql", "START TRANSACTION", "COMMIT", "ROLLBACK",
    "SET SESSION TRANSACTION ISOLATION LEVEL {level}",
    "CREATE TABLE {table} (k INT PRIMARY KEY, v INT)",
    "PARTITION BY RANGE (k)",
    r"record has changed|serializ|1020",
    r"deadlock found|1213",
    r"lock wait timeout|1205",
))

# SQLite has no per-transaction isolation levels; read_uncommitted only
# matters in shared-cache mode.  It has no partitioning either, so
# distributed plans fall back to one table per partition.
register(SqlDialect(
    "sqlite", "BEGIN", "COMMIT", "ROLLBACK",
    "PRAGMA read_uncommitted = {level}",
    "CREATE TABLE {table} (k INT PRIMARY KEY, v INT)",
    "tables",
    r"busy_snapshot|cannot commit",
    r"deadlock",
    r"database is locked|database table is locked|busy",
    level_names={"ser": "0", "rr": "0", "rc": "0", "ru": "1"},
))
