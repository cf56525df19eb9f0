"""Privacy budget ledger with standard or advanced composition.

The ledger is an immutable value; ``charge`` returns a new ledger or
raises without touching the old one. ``LedgerStore`` persists ledgers
atomically (temp file + rename under a file lock) and refuses writes
based on a stale version.
"""
from __future__ import annotations

import hashlib
import json
import math
import os
import tempfile
import time
from dataclasses import dataclass, field, replace
from pathlib import Path

from filelock import FileLock


class BudgetError(Exception):
    pass


class BudgetExhausted(BudgetError):
    def __init__(self, requested: float, remaining: float, detail: str = ""):
        msg = f"privacy budget exhausted: requested epsilon {requested:g}, remaining {remaining:g}"
        super().__init__(f"{msg} ({detail})" if detail else msg)
        self.requested = requested
        self.remaining = remaining


class CorruptLedger(BudgetError):
    pass


class VersionConflict(BudgetError):
    pass


@dataclass(frozen=True)
class Entry:
    fingerprint: str
    epsilon: float
    delta: float
    timestamp: float


@dataclass(frozen=True)
class BudgetLedger:
    total_epsilon: float
    total_delta: float = 0.0
    mode: str = "standard"  # or "advanced"
    delta_prime: float | None = None
    entries: tuple = ()
    version: int = 0

    def __post_init__(self):
        if not self.total_epsilon > 0 or math.isinf(self.total_epsilon):
            raise ValueError("totalEpsilon must be positive and finite")
        if not 0 <= self.total_delta < 1:
            raise ValueError("totalDelta must lie in [0, 1)")
        if self.mode not in ("standard", "advanced"):
            raise ValueError(f"unknown composition mode {self.mode!r}")
        if self.mode == "advanced" and not (self.delta_prime and 0 < self.delta_prime < 1):
            raise ValueError("advanced composition needs delta' in (0, 1)")
        object.__setattr__(self, "entries", tuple(self.entries))

    def spent(self) -> tuple[float, float]:
        """Composed (epsilon, delta) of all entries under the ledger's mode."""
        if self.mode == "advanced":
            return advanced_total(self.entries, self.delta_prime)
        return (math.fsum(e.epsilon for e in self.entries),
                math.fsum(e.delta for e in self.entries))

    def remaining(self) -> float:
        return max(0.0, self.total_epsilon - self.spent()[0])

    def remaining_delta(self) -> float:
        return max(0.0, self.total_delta - self.spent()[1])


def advanced_total(entries, delta_prime: float) -> tuple[float, float]:
    """Composed (epsilon', delta) for k charges of equal epsilon.

    epsilon' = eps * sqrt(2k ln(1/delta')) + k eps (e^eps - 1), delta = k delta + delta'.
    Mixed epsilons fall back to the plain sums. No entries compose to (0, 0).
    """
    entries = list(entries)
    k = len(entries)
    if k == 0:
        return 0.0, 0.0
    eps = {e.epsilon for e in entries}
    dsum = math.fsum(e.delta for e in entries)
    if len(eps) != 1:
        return math.fsum(e.epsilon for e in entries), dsum
    (e,) = eps
    total = e * math.sqrt(2 * k * math.log(1 / delta_prime)) + k * e * math.expm1(e)
    return total, dsum + delta_prime


def fingerprint(sql: str) -> str:
    return hashlib.sha256(sql.encode("utf-8")).hexdigest()


def charge(ledger: BudgetLedger, epsilon: float, delta: float, fp: str,
           now: float | None = None) -> BudgetLedger:
    """New ledger with the charge appended, or BudgetExhausted."""
    if not epsilon > 0 or math.isinf(epsilon):
        raise ValueError("charged epsilon must be positive and finite")
    if not 0 <= delta < 1:
        raise ValueError("charged delta must lie in [0, 1)")
    entry = Entry(fp, float(epsilon), float(delta), time.time() if now is None else now)
    new = replace(ledger, entries=ledger.entries + (entry,), version=ledger.version + 1)
    eps, dlt = new.spent()
    # tolerance absorbs float drift in repeated sums such as 20 x 0.1
    slack = 1e-9 * max(1.0, ledger.total_epsilon)
    if eps > ledger.total_epsilon + slack:
        raise BudgetExhausted(epsilon, ledger.remaining())
    if dlt > ledger.total_delta + 1e-15:
        raise BudgetExhausted(epsilon, ledger.remaining(),
                              f"delta {dlt:g} would exceed totalDelta {ledger.total_delta:g}")
    return new


# ---------------------------------------------------------------------------
# persistence


def ledger_to_dict(ledger: BudgetLedger) -> dict:
    d = {
        "totalEpsilon": ledger.total_epsilon,
        "totalDelta": ledger.total_delta,
        "mode": ledger.mode,
        "entries": [{"fingerprint": e.fingerprint, "epsilon": e.epsilon, "delta": e.delta,
                     "timestamp": e.timestamp} for e in ledger.entries],
        "version": ledger.version,
    }
    if ledger.delta_prime is not None:
        d["deltaPrime"] = ledger.delta_prime
    return d


def ledger_from_dict(d: dict) -> BudgetLedger:
    try:
        entries = tuple(Entry(str(e["fingerprint"]), float(e["epsilon"]), float(e["delta"]),
                              float(e["timestamp"])) for e in d["entries"])
        ledger = BudgetLedger(float(d["totalEpsilon"]), float(d["totalDelta"]), d["mode"],
                              d.get("deltaPrime"), entries, int(d["version"]))
    except (KeyError, TypeError, ValueError) as e:
        raise CorruptLedger(f"malformed ledger: {e}") from e
    if ledger.version < len(entries):
        raise CorruptLedger("ledger version is behind its entry count")
    return ledger


def load_ledger(path) -> BudgetLedger:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as e:
        raise CorruptLedger(f"cannot read ledger {path}: {e}") from e
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise CorruptLedger(f"ledger {path} is not valid JSON: {e}") from e
    if not isinstance(doc, dict):
        raise CorruptLedger("ledger must be a JSON object")
    return ledger_from_dict(doc)


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def store_ledger(ledger: BudgetLedger, path, expected_version: int | None = None) -> None:
    """Write ``ledger`` atomically.

    With ``expected_version``, the file on disk must still be at that
    version (or absent when it is 0), otherwise VersionConflict.
    """
    path = Path(path)
    with FileLock(str(path) + ".lock"):
        if expected_version is not None:
            on_disk = load_ledger(path).version if path.exists() else 0
            if on_disk != expected_version:
                raise VersionConflict(
                    f"ledger on disk is at version {on_disk}, expected {expected_version}")
        _atomic_write(path, json.dumps(ledger_to_dict(ledger), indent=2) + "\n")


@dataclass
class LedgerStore:
    """Serialized check-charge-store against one ledger file."""

    path: Path
    lock_timeout: float = 30.0
    _lock: FileLock = field(init=False, repr=False)

    def __post_init__(self):
        self.path = Path(self.path)
        self._lock = FileLock(str(self.path) + ".lock", timeout=self.lock_timeout)

    def load(self) -> BudgetLedger:
        return load_ledger(self.path)

    def charge(self, epsilon: float, delta: float, fp: str) -> BudgetLedger:
        with self._lock:
            current = load_ledger(self.path)
            new = charge(current, epsilon, delta, fp)
            _atomic_write(self.path, json.dumps(ledger_to_dict(new), indent=2) + "\n")
            return new

    def init(self, ledger: BudgetLedger, overwrite: bool = False) -> None:
        with self._lock:
            if self.path.exists() and not overwrite:
                raise BudgetError(f"ledger {self.path} already exists")
            _atomic_write(self.path, json.dumps(ledger_to_dict(ledger), indent=2) + "\n")
