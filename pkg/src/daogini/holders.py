"""Token-holder ingestion: explorer client, contract classification, snapshots.

Balances stay Python ints (base units) end to end; token supplies routinely
exceed the 64-bit range, so nothing here touches floats.
"""

from __future__ import annotations

import csv
import fcntl
import gc
import json
import logging
import operator
import os
import re
import threading
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from datetime import datetime, timezone
from itertools import compress, count, islice, repeat
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple

import requests

logger = logging.getLogger(__name__)

ADDRESS_RE = re.compile(r"\A0x[0-9a-f]{40}\Z")
_DIGITS_RE = re.compile(r"\A[0-9]+\Z")
_HEX_X = b"0123456789abcdefx"


def _all_addresses(addrs: list) -> bool:
    """Bulk ``ADDRESS_RE`` check: str.join and bytes.translate instead of 10^5 regex calls."""
    if set(map(type, addrs)) - {str}:
        return False
    n = len(addrs)
    joined = "".join(addrs)
    if len(joined) != 42 * n or not joined.isascii() or set(map(len, addrs)) - {42}:
        return False
    # every char is hex or "x", exactly n "x" and each sits at offset 1
    raw = joined.encode("ascii")
    return (not raw.translate(None, _HEX_X) and raw.count(b"x") == n
            and raw[1::42].count(b"x") == n and raw[0::42].count(b"0") == n)


def _all_digit_strings(qtys: list) -> bool:
    if set(map(type, qtys)) - {str} or not all(qtys):
        return False
    joined = "".join(qtys)
    return joined.isascii() and (not joined or joined.isdigit())
SCHEMA_VERSION = 1


class IngestError(Exception):
    """Base class for holder-ingestion failures."""


class ExplorerError(IngestError):
    """Explorer answered with an HTTP error or an error payload. Not retried."""


class NetworkError(IngestError):
    """Transport failure that survived every retry."""


class PaginationError(IngestError):
    pass


class ClassificationError(IngestError):
    pass


class SnapshotValidationError(IngestError, ValueError):
    pass


class SnapshotParseError(IngestError, ValueError):
    pass


def normalize_address(address: str) -> str:
    addr = address.strip().lower()
    if not ADDRESS_RE.match(addr):
        raise ValueError(f"malformed address: {address!r}")
    return addr


@dataclass(frozen=True)
class ExplorerTarget:
    """An Etherscan-compatible explorer endpoint (Etherscan, Arbiscan, BscScan, ...)."""

    chain_id: int
    base_url: str
    api_key_ref: str = "DAOGINI_API_KEY"
    rate_limit: float = 5.0
    page_size: int = 1000
    timeout: float = 30.0
    max_attempts: int = 5
    backoff_base: float = 0.5

    def __post_init__(self):
        if not self.rate_limit > 0:
            raise ValueError("rate_limit must be > 0")
        if self.page_size < 1:
            raise ValueError("page_size must be >= 1")
        if not re.match(r"^https?://[^/]+", self.base_url):
            raise ValueError(f"base_url must be absolute: {self.base_url!r}")

    @property
    def api_key(self) -> str:
        # unset is treated like empty: keyless endpoints and local mocks
        return os.environ.get(self.api_key_ref, "")


class HolderRecord(NamedTuple):
    """One holder: lowercase 0x address and balance in token base units.

    Plain tuple for speed (snapshots hold 10^5+ of these). Field checks run
    in bulk when a :class:`HolderSnapshot` is built; use :meth:`checked` to
    validate a single record up front.
    """

    address: str
    balance: int

    @classmethod
    def checked(cls, address: str, balance: int) -> "HolderRecord":
        if not ADDRESS_RE.match(address):
            raise ValueError(f"malformed address: {address!r}")
        if type(balance) is not int or balance < 0:
            raise ValueError(f"balance must be a non-negative int, got {balance!r}")
        return cls(address, balance)


@dataclass(frozen=True)
class AddressClassification:
    address: str
    kind: str  # "contract" | "external"
    source: str  # "lookup" | "cache" | "file"

    @property
    def is_contract(self) -> bool:
        return self.kind == "contract"


@dataclass(frozen=True)
class SnapshotMeta:
    token_symbol: str
    token_contract: str
    chain_id: int
    captured_at: datetime
    decimals: int = 18


def _sort_key(rec: HolderRecord):
    return (-rec[1], rec[0])


@dataclass(frozen=True)
class HolderSnapshot:
    token_symbol: str
    token_contract: str
    chain_id: int
    captured_at: datetime
    decimals: int
    records: tuple[HolderRecord, ...]
    contracts_removed: bool
    total_balance: int = field(default=-1)

    def __post_init__(self):
        object.__setattr__(self, "records", tuple(self.records))
        if self.total_balance == -1:
            object.__setattr__(self, "total_balance", sum(map(operator.itemgetter(1), self.records)))
        self.validate()

    def validate(self) -> None:
        addrs = list(map(operator.itemgetter(0), self.records))
        bals = list(map(operator.itemgetter(1), self.records))
        self._check_header()
        self._check_fields(addrs, bals)
        self._check_columns(addrs, bals)

    def _check_header(self) -> None:
        if self.captured_at.tzinfo is None:
            raise SnapshotValidationError("captured_at must be timezone-aware")
        if self.decimals < 0:
            raise SnapshotValidationError("decimals must be non-negative")
        if not ADDRESS_RE.match(self.token_contract):
            raise SnapshotValidationError(f"malformed token_contract: {self.token_contract!r}")

    @staticmethod
    def _check_fields(addrs: list, bals: list) -> None:
        if not _all_addresses(addrs):
            i = next(i for i, a in enumerate(addrs)
                     if not (isinstance(a, str) and ADDRESS_RE.match(a)))
            raise SnapshotValidationError(f"malformed address {addrs[i]!r} at records[{i}]")
        if set(map(type, bals)) - {int} or (bals and min(bals) < 0):
            i = next(i for i, b in enumerate(bals) if type(b) is not int or b < 0)
            raise SnapshotValidationError(f"bad balance {bals[i]!r} at records[{i}]")

    def _check_columns(self, addrs: list, bals: list) -> None:
        """Uniqueness, (balance desc, address asc) order and the stored total."""
        if len(set(addrs)) != len(addrs):
            seen: set[str] = set()
            for i, a in enumerate(addrs):
                if a in seen:
                    raise SnapshotValidationError(f"duplicate address {a} at records[{i}]")
                seen.add(a)
        ordered = all(map(operator.ge, bals, islice(bals, 1, None)))
        ties = compress(count(), map(operator.eq, bals, islice(bals, 1, None)))
        if not ordered or any(addrs[i] > addrs[i + 1] for i in ties):
            i = next(i for i in range(1, len(bals))
                     if _sort_key(self.records[i - 1]) > _sort_key(self.records[i]))
            raise SnapshotValidationError(
                f"records not sorted (balance desc, address asc) at records[{i}]"
            )
        total = sum(bals)
        if total != self.total_balance:
            raise SnapshotValidationError(
                f"total_balance {self.total_balance} != sum of records {total}"
            )

    @classmethod
    def _from_checked_columns(cls, addrs: list, bals: list, **header) -> "HolderSnapshot":
        # Loader fast path: addresses and balances were already checked in bulk,
        # so only the header, order, uniqueness and total checks run here.
        snap = object.__new__(cls)
        for name, value in header.items():
            object.__setattr__(snap, name, value)
        records = tuple(map(tuple.__new__, repeat(HolderRecord), zip(addrs, bals)))
        object.__setattr__(snap, "records", records)
        snap._check_header()
        snap._check_columns(addrs, bals)
        return snap

    @property
    def balances(self) -> list[int]:
        return list(map(operator.itemgetter(1), self.records))

    @property
    def meta(self) -> SnapshotMeta:
        return SnapshotMeta(
            self.token_symbol, self.token_contract, self.chain_id, self.captured_at, self.decimals
        )


class RateLimiter:
    """Spaces request starts at least ``1/rate`` seconds apart. Thread-safe."""

    def __init__(self, rate: float, clock=time.monotonic, sleep=time.sleep):
        self.interval = 1.0 / rate
        self._clock = clock
        self._sleep = sleep
        self._lock = threading.Lock()
        self._next = None

    def wait(self) -> None:
        with self._lock:
            now = self._clock()
            if self._next is not None and now < self._next:
                self._sleep(self._next - now)
                now = self._clock()
            self._next = max(now, self._next or now) + self.interval


class ClassificationCache:
    """Append-only JSONL file of ``{chain_id, address, kind}`` lines.

    Writers take an exclusive ``flock`` for each append, so several processes
    may share one file; readers load it once at construction.
    """

    def __init__(self, path: str | os.PathLike | None = None):
        self.path = Path(path) if path is not None else None
        self._entries: dict[tuple[int, str], str] = {}
        self._lock = threading.Lock()
        if self.path is not None and self.path.exists():
            with open(self.path, encoding="utf-8") as fh:
                for lineno, line in enumerate(fh, 1):
                    line = line.strip()
                    if not line:
                        continue
                    try:
                        obj = json.loads(line)
                        self._entries[(int(obj["chain_id"]), obj["address"])] = obj["kind"]
                    except (ValueError, KeyError) as exc:
                        logger.warning("skipping bad cache line %s:%d (%s)", self.path, lineno, exc)

    def get(self, chain_id: int, address: str) -> str | None:
        return self._entries.get((chain_id, address))

    def put(self, chain_id: int, address: str, kind: str) -> None:
        with self._lock:
            self._entries[(chain_id, address)] = kind
            if self.path is None:
                return
            self.path.parent.mkdir(parents=True, exist_ok=True)
            line = json.dumps({"chain_id": chain_id, "address": address, "kind": kind})
            with open(self.path, "a", encoding="utf-8") as fh:
                fcntl.flock(fh, fcntl.LOCK_EX)
                try:
                    fh.write(line + "\n")
                    fh.flush()
                finally:
                    fcntl.flock(fh, fcntl.LOCK_UN)

    def __len__(self):
        return len(self._entries)


def default_cache_path() -> Path:
    root = os.environ.get("DAOGINI_CACHE_DIR") or os.path.join(
        os.path.expanduser("~"), ".cache", "daogini"
    )
    return Path(root) / "classifications.jsonl"


class ExplorerClient:
    """Thin Etherscan-style API client with rate limiting and retry."""

    def __init__(self, target: ExplorerTarget, session: requests.Session | None = None,
                 sleep=time.sleep):
        self.target = target
        self.session = session or requests.Session()
        self.limiter = RateLimiter(target.rate_limit, sleep=sleep)
        self._sleep = sleep
        self.request_count = 0

    def get(self, params: dict) -> dict:
        params = dict(params)
        params.setdefault("chainid", self.target.chain_id)
        key = self.target.api_key
        if key:
            params["apikey"] = key
        last_exc: Exception | None = None
        for attempt in range(self.target.max_attempts):
            if attempt:
                delay = self.target.backoff_base * 2 ** (attempt - 1)
                logger.info("retrying %s in %.2fs (%s)", params.get("action"), delay, last_exc)
                self._sleep(delay)
            self.limiter.wait()
            self.request_count += 1
            try:
                resp = self.session.get(self.target.base_url, params=params,
                                        timeout=self.target.timeout)
            except (requests.ConnectionError, requests.Timeout) as exc:
                last_exc = exc
                continue
            if resp.status_code >= 400:
                raise ExplorerError(
                    f"HTTP {resp.status_code} from {self.target.base_url}: {resp.text[:200]}"
                )
            try:
                return resp.json()
            except ValueError as exc:
                raise ExplorerError(f"non-JSON response: {resp.text[:200]}") from exc
        raise NetworkError(f"gave up after {self.target.max_attempts} attempts: {last_exc}")


def _is_empty_result(payload: dict) -> bool:
    msg = str(payload.get("message", "")).lower()
    return payload.get("result") in ([], None, "") and "no" in msg and "found" in msg


def fetch_holders(target: ExplorerTarget, token_contract: str,
                  client: ExplorerClient | None = None) -> list[HolderRecord]:
    """Fetch every page of the token-holder list for ``token_contract``.

    Paging stops at the first short (or empty) page. An address showing up on
    two pages means the explorer's ordering shifted underneath us, and the
    whole fetch is aborted.
    """
    client = client or ExplorerClient(target)
    token_contract = normalize_address(token_contract)
    seen: dict[str, int] = {}
    page = 1
    while True:
        payload = client.get({
            "module": "token",
            "action": "tokenholderlist",
            "contractaddress": token_contract,
            "page": page,
            "offset": target.page_size,
        })
        if str(payload.get("status", "1")) != "1":
            if _is_empty_result(payload):
                break
            raise ExplorerError(
                f"explorer error: {payload.get('message')}: {payload.get('result')}"
            )
        rows = payload.get("result") or []
        if not isinstance(rows, list):
            raise ExplorerError(f"unexpected result payload: {rows!r}")
        for row in rows:
            addr = normalize_address(row["TokenHolderAddress"])
            qty = str(row["TokenHolderQuantity"])
            if not _DIGITS_RE.match(qty):
                raise ExplorerError(f"non-integer balance {qty!r} for {addr}")
            if addr in seen:
                raise PaginationError(
                    f"inconsistent pagination: {addr} repeated on page {page}"
                )
            seen[addr] = int(qty)
        if len(rows) < target.page_size:
            break
        page += 1
    return [HolderRecord(a, b) for a, b in seen.items()]


def classify_address(target: ExplorerTarget, address: str, cache: ClassificationCache,
                     client: ExplorerClient | None = None) -> AddressClassification:
    address = normalize_address(address)
    kind = cache.get(target.chain_id, address)
    if kind is not None:
        return AddressClassification(address, kind, "cache")
    client = client or ExplorerClient(target)
    payload = client.get({"module": "proxy", "action": "eth_getCode",
                          "address": address, "tag": "latest"})
    code = payload.get("result")
    if "error" in payload or not isinstance(code, str) or not code.startswith("0x"):
        detail = payload.get("error") or payload.get("message") or code
        raise ClassificationError(f"code lookup failed for {address}: {detail}")
    kind = "external" if code in ("0x", "0x0") else "contract"
    cache.put(target.chain_id, address, kind)
    return AddressClassification(address, kind, "lookup")


def build_snapshot(records: Iterable[HolderRecord],
                   classifications: Mapping[str, AddressClassification] | None,
                   drop_contracts: bool, meta: SnapshotMeta) -> HolderSnapshot:
    records = list(records)
    addrs = [r.address for r in records]
    if len(set(addrs)) != len(addrs):
        dupes = sorted({a for a in addrs if addrs.count(a) > 1})
        raise SnapshotValidationError(f"duplicate addresses: {dupes}")
    if drop_contracts:
        classifications = classifications or {}
        missing = [a for a in addrs if a not in classifications]
        if missing:
            raise ClassificationError(
                f"classification unavailable for {len(missing)} address(es): {missing[:10]}"
            )
        records = [r for r in records if not classifications[r.address].is_contract]
    kept = sorted((r for r in records if r.balance > 0), key=_sort_key)
    return HolderSnapshot(
        token_symbol=meta.token_symbol,
        token_contract=normalize_address(meta.token_contract),
        chain_id=meta.chain_id,
        captured_at=meta.captured_at,
        decimals=meta.decimals,
        records=tuple(kept),
        contracts_removed=drop_contracts,
    )


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).isoformat().replace("+00:00", "Z")


def parse_timestamp(text: str) -> datetime:
    if text.endswith(("Z", "z")):
        text = text[:-1] + "+00:00"
    ts = datetime.fromisoformat(text)
    if ts.tzinfo is None:
        raise ValueError("timestamp lacks a UTC offset")
    return ts.astimezone(timezone.utc)


def _snapshot_header(snap: HolderSnapshot) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "token_symbol": snap.token_symbol,
        "token_contract": snap.token_contract,
        "chain_id": snap.chain_id,
        "captured_at": format_timestamp(snap.captured_at),
        "decimals": snap.decimals,
        "contracts_removed": snap.contracts_removed,
        "total_balance": str(snap.total_balance),
    }


def snapshot_to_dict(snap: HolderSnapshot) -> dict:
    obj = _snapshot_header(snap)
    obj["records"] = [{"address": a, "balance": str(b)} for a, b in snap.records]
    return obj


def save_snapshot(snap: HolderSnapshot, path: str | os.PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "w", encoding="utf-8") as fh:
        fh.write(dumps_snapshot(snap))
    os.replace(tmp, path)


def dumps_snapshot(snap: HolderSnapshot) -> str:
    """Same bytes as ``json.dumps(snapshot_to_dict(snap), indent=1) + "\\n"``.

    The indented encoder is pure Python; records are hex addresses and digit
    strings (nothing to escape), so they are formatted directly.
    """
    head = _snapshot_header(snap)
    head["records"] = []
    text = json.dumps(head, indent=1)
    if snap.records:
        body = ",\n".join(
            f'  {{\n   "address": "{a}",\n   "balance": "{b}"\n  }}' for a, b in snap.records
        )
        # "records" is the last key, so its empty list closes the document
        assert text.endswith('"records": []\n}')
        text = text[:-4] + "[\n" + body + "\n ]\n}"
    return text + "\n"


def _decimal_int(value, where: str) -> int:
    if not isinstance(value, str) or not _DIGITS_RE.match(value):
        raise SnapshotParseError(f"{where}: expected decimal-digit string, got {value!r}")
    return int(value)


def _field(obj: dict, name: str, kind, where: str):
    if name not in obj:
        raise SnapshotParseError(f"{where}: missing field {name!r}")
    value = obj[name]
    if kind is int and (isinstance(value, bool) or not isinstance(value, int)):
        raise SnapshotParseError(f"{where}.{name}: expected integer, got {value!r}")
    if kind is not int and not isinstance(value, kind):
        raise SnapshotParseError(f"{where}.{name}: expected {kind.__name__}, got {value!r}")
    return value


def _parse_record(item, i: int) -> HolderRecord:
    where = f"records[{i}]"
    if not isinstance(item, dict):
        raise SnapshotParseError(f"{where}: expected an object")
    addr = _field(item, "address", str, where)
    if not ADDRESS_RE.match(addr):
        raise SnapshotParseError(f"{where}.address: malformed {addr!r}")
    return HolderRecord(addr, _decimal_int(item.get("balance"), f"{where}.balance"))


def snapshot_from_dict(obj: dict) -> HolderSnapshot:
    if not isinstance(obj, dict):
        raise SnapshotParseError("top level: expected a JSON object")
    version = _field(obj, "schema_version", int, "snapshot")
    if version != SCHEMA_VERSION:
        raise SnapshotParseError(f"snapshot.schema_version: unsupported {version}")
    try:
        captured = parse_timestamp(_field(obj, "captured_at", str, "snapshot"))
    except ValueError as exc:
        raise SnapshotParseError(f"snapshot.captured_at: {exc}") from exc
    raw_records = _field(obj, "records", list, "snapshot")
    try:
        addrs = [item["address"] for item in raw_records]
        qtys = [item["balance"] for item in raw_records]
        fast = _all_addresses(addrs) and _all_digit_strings(qtys)
    except (KeyError, TypeError):
        fast = False
    header = dict(
        token_symbol=_field(obj, "token_symbol", str, "snapshot"),
        token_contract=_field(obj, "token_contract", str, "snapshot"),
        chain_id=_field(obj, "chain_id", int, "snapshot"),
        captured_at=captured,
        decimals=_field(obj, "decimals", int, "snapshot"),
        contracts_removed=_field(obj, "contracts_removed", bool, "snapshot"),
        total_balance=_decimal_int(obj.get("total_balance"), "snapshot.total_balance"),
    )
    if fast:
        return HolderSnapshot._from_checked_columns(addrs, list(map(int, qtys)), **header)
    records = [_parse_record(item, i) for i, item in enumerate(raw_records)]
    return HolderSnapshot(records=tuple(records), **header)


@contextmanager
def _gc_paused():
    # A snapshot is 10^5+ acyclic dicts/tuples; cyclic GC passes triggered by
    # the allocations cost about as much as the parse itself.
    was_enabled = gc.isenabled()
    gc.disable()
    try:
        yield
    finally:
        if was_enabled:
            gc.enable()


def load_snapshot(path: str | os.PathLike) -> HolderSnapshot:
    text = Path(path).read_text(encoding="utf-8")
    with _gc_paused():
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise SnapshotParseError(
                f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}"
            ) from exc
        try:
            return snapshot_from_dict(obj)
        except SnapshotParseError as exc:
            raise SnapshotParseError(f"{path}: {exc}") from exc


_BOOLS = {"true": True, "false": False, "1": True, "0": False, "yes": True, "no": False}


def import_csv(path: str | os.PathLike, meta: SnapshotMeta,
               drop_contracts: bool = True) -> HolderSnapshot:
    """Build a snapshot from an ``address,balance[,is_contract]`` CSV."""
    records: list[HolderRecord] = []
    classes: dict[str, AddressClassification] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = [h.strip() for h in (reader.fieldnames or [])]
        for col in ("address", "balance"):
            if col not in header:
                raise SnapshotParseError(f"{path}: missing required column {col!r}")
        has_flag = "is_contract" in header
        for lineno, row in enumerate(reader, 2):
            row = {k.strip(): (v or "").strip() for k, v in row.items() if k}
            try:
                addr = normalize_address(row["address"])
            except ValueError as exc:
                raise SnapshotParseError(f"{path}:{lineno}: address: {exc}") from exc
            bal = row["balance"]
            if not _DIGITS_RE.match(bal):
                raise SnapshotParseError(f"{path}:{lineno}: balance: not an integer {bal!r}")
            records.append(HolderRecord(addr, int(bal)))
            if has_flag:
                flag = row.get("is_contract", "").lower()
                if flag not in _BOOLS:
                    raise SnapshotParseError(f"{path}:{lineno}: is_contract: bad boolean {flag!r}")
                kind = "contract" if _BOOLS[flag] else "external"
                classes[addr] = AddressClassification(addr, kind, "file")
    if drop_contracts and not has_flag and records:
        raise ClassificationError(f"{path}: classification unavailable (no is_contract column)")
    return build_snapshot(records, classes, drop_contracts, meta)
