"""Manifest-driven batch stages: ingest -> gini -> panel -> regress."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import math
import os
from dataclasses import dataclass, field
from datetime import datetime, timezone
from importlib import resources
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import requests

from . import __version__
from .econometrics import (EstimationError, FitResult, ModelSpec, ObservationTable,
                           TransformError, TransformSpec, fit_ols)
from .gini import GiniBundle, compute_bundle
from .holders import (ClassificationCache, ExplorerClient, ExplorerTarget, HolderSnapshot,
                      IngestError, SnapshotMeta, build_snapshot, classify_address,
                      default_cache_path, fetch_holders, format_timestamp, import_csv,
                      load_snapshot, normalize_address, save_snapshot)
from .report import BUNDLE_FIELDS

logger = logging.getLogger(__name__)

DEFAULT_EXPLORER_URL = "https://api.etherscan.io/v2/api"
PANEL_HEADER = ("company", "token", "roi", "g_all", "g_c", "g_d", "g_e", "g_f")
GINI_COLUMNS = {"g_all": "LnG", "g_c": "LnGC", "g_d": "LnGD", "g_e": "LnGE", "g_f": "LnGF"}
# the four nested specifications, widest first
DEFAULT_MODELS = (
    ("g_c", "g_d", "g_e", "g_f"),
    ("g_d", "g_e", "g_f"),
    ("g_d", "g_e"),
    ("g_d",),
)


class ManifestError(ValueError):
    pass


def parse_bool(text) -> bool:
    if isinstance(text, bool):
        return text
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "y", "t"):
        return True
    if value in ("0", "false", "no", "n", "f", ""):
        return False
    raise ValueError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class ManifestEntry:
    company: str
    token_symbol: str
    token_contract: str
    chain_id: int = 1
    roi: float | None = None
    dao_verified: bool = False
    decimals: int = 18
    holders_csv: str | None = None


@dataclass
class Manifest:
    entries: list[ManifestEntry]
    drop_contracts: bool = True
    transform_dep: str = "ln"
    gini_floor: float = 0.0
    se: str = "hc1"
    explorers: dict[int, dict] = field(default_factory=dict)
    sha256: str = ""

    def __post_init__(self):
        seen = set()
        for e in self.entries:
            key = (e.chain_id, e.token_contract)
            if key in seen:
                raise ManifestError(f"duplicate manifest entry for chain {e.chain_id} {e.token_contract}")
            seen.add(key)


def _entry_from_mapping(row: dict, where: str, base: Path) -> ManifestEntry:
    try:
        roi_raw = row.get("roi")
        roi = None if roi_raw in (None, "") else float(roi_raw)
        holders_csv = row.get("holders_csv") or None
        if holders_csv and not os.path.isabs(holders_csv):
            holders_csv = str(base / holders_csv)
        return ManifestEntry(
            company=str(row["company"]),
            token_symbol=str(row["token_symbol"]),
            token_contract=normalize_address(str(row["token_contract"])),
            chain_id=int(row.get("chain_id") or 1),
            roi=roi,
            dao_verified=parse_bool(row.get("dao_verified", False)),
            decimals=int(row.get("decimals") or 18),
            holders_csv=holders_csv,
        )
    except KeyError as exc:
        raise ManifestError(f"{where}: missing field {exc.args[0]!r}") from None
    except ValueError as exc:
        raise ManifestError(f"{where}: {exc}") from None


def load_manifest(path: str | os.PathLike) -> Manifest:
    """Read a manifest from CSV (one entry per row) or JSON (``entries`` + ``defaults``)."""
    path = Path(path)
    raw = path.read_bytes()
    digest = hashlib.sha256(raw).hexdigest()
    text = raw.decode("utf-8")
    base = path.parent
    if path.suffix.lower() == ".json":
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ManifestError(f"{path}: line {exc.lineno}: {exc.msg}") from None
        entries = [_entry_from_mapping(e, f"{path}: entries[{i}]", base)
                   for i, e in enumerate(obj.get("entries", []))]
        d = obj.get("defaults", {})
        return Manifest(
            entries,
            drop_contracts=parse_bool(d.get("drop_contracts", True)),
            transform_dep=d.get("transform_dep", "ln"),
            gini_floor=float(d.get("gini_floor", 0.0)),
            se=d.get("se", "hc1"),
            explorers={int(k): v for k, v in obj.get("explorers", {}).items()},
            sha256=digest,
        )
    reader = csv.DictReader(io.StringIO(text))
    required = {"company", "token_symbol", "token_contract"}
    missing = required - set(reader.fieldnames or [])
    if missing:
        raise ManifestError(f"{path}: missing columns {sorted(missing)}")
    entries = [_entry_from_mapping(row, f"{path}:{i}", base) for i, row in enumerate(reader, 2)]
    return Manifest(entries, sha256=digest)


@dataclass
class IngestConfig:
    out_dir: Path
    drop_contracts: bool = True
    force: bool = False
    explorer_url: str | None = None
    rate_limit: float | None = None
    api_key_ref: str = "DAOGINI_API_KEY"
    page_size: int = 1000
    cache_path: Path | None = None
    backoff_base: float = 0.5


@dataclass
class StageResult:
    written: list[Path] = field(default_factory=list)
    skipped: list[Path] = field(default_factory=list)
    errors: list[tuple[str, str]] = field(default_factory=list)

    @property
    def exit_code(self) -> int:
        return 2 if self.errors else 0


def snapshot_filename(entry: ManifestEntry) -> str:
    return f"{entry.token_symbol}_{entry.chain_id}_{entry.token_contract}.json"


def target_for(manifest: Manifest, config: IngestConfig, chain_id: int) -> ExplorerTarget:
    opts = dict(manifest.explorers.get(chain_id, {}))
    if config.explorer_url:
        opts["base_url"] = config.explorer_url
    if config.rate_limit:
        opts["rate_limit"] = config.rate_limit
    opts.setdefault("base_url", DEFAULT_EXPLORER_URL)
    opts.setdefault("api_key_ref", config.api_key_ref)
    opts.setdefault("page_size", config.page_size)
    opts.setdefault("backoff_base", config.backoff_base)
    return ExplorerTarget(chain_id=chain_id, **opts)


def _fresh(path: Path) -> bool:
    if not path.exists():
        return False
    try:
        load_snapshot(path)
    except (IngestError, ValueError) as exc:
        logger.warning("existing snapshot %s is unusable, refetching (%s)", path, exc)
        return False
    return True


def ingest_entry(entry: ManifestEntry, target: ExplorerTarget | None, client: ExplorerClient | None,
                 cache: ClassificationCache, drop_contracts: bool,
                 now: Callable[[], datetime]) -> HolderSnapshot:
    meta = SnapshotMeta(entry.token_symbol, entry.token_contract, entry.chain_id,
                        now(), entry.decimals)
    if entry.holders_csv:
        return import_csv(entry.holders_csv, meta, drop_contracts=drop_contracts)
    records = fetch_holders(target, entry.token_contract, client=client)
    classes = None
    if drop_contracts:
        classes = {r.address: classify_address(target, r.address, cache, client=client)
                   for r in records}
    return build_snapshot(records, classes, drop_contracts, meta)


def cmd_ingest(manifest: Manifest, config: IngestConfig,
               session: requests.Session | None = None,
               now: Callable[[], datetime] = lambda: datetime.now(timezone.utc)) -> StageResult:
    """Write one snapshot file per manifest entry; failures are collected, not raised."""
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cache = ClassificationCache(config.cache_path or default_cache_path())
    clients: dict[int, tuple[ExplorerTarget, ExplorerClient]] = {}
    result = StageResult()
    for entry in manifest.entries:
        path = out / snapshot_filename(entry)
        if not config.force and _fresh(path):
            result.skipped.append(path)
            continue
        try:
            target = client = None
            if not entry.holders_csv:
                if entry.chain_id not in clients:
                    t = target_for(manifest, config, entry.chain_id)
                    clients[entry.chain_id] = (t, ExplorerClient(t, session=session))
                target, client = clients[entry.chain_id]
            snap = ingest_entry(entry, target, client, cache, config.drop_contracts, now)
        except (IngestError, ValueError, OSError) as exc:
            logger.error("ingest failed for %s: %s", entry.token_symbol, exc)
            result.errors.append((entry.token_symbol, str(exc)))
            continue
        save_snapshot(snap, path)
        result.written.append(path)
    return result


@dataclass
class BundleRow:
    symbol: str
    company: str
    chain_id: int | None = None
    token_contract: str | None = None
    captured_at: str | None = None
    holders: int | None = None
    bundle: GiniBundle | None = None
    error: str | None = None

    def as_dict(self) -> dict:
        d = {"symbol": self.symbol, "company": self.company, "chain_id": self.chain_id,
             "token_contract": self.token_contract, "captured_at": self.captured_at,
             "holders": self.holders, "error": self.error}
        for f in BUNDLE_FIELDS:
            d[f] = getattr(self.bundle, f) if self.bundle else None
        return d


def bundle_row(path: Path, company: str | None = None, symbol: str | None = None) -> BundleRow:
    try:
        snap = load_snapshot(path)
    except (IngestError, ValueError, OSError) as exc:
        return BundleRow(symbol or Path(path).stem, company or symbol or "", error=str(exc))
    row = BundleRow(snap.token_symbol, company or snap.token_symbol, snap.chain_id,
                    snap.token_contract, format_timestamp(snap.captured_at), len(snap.records))
    try:
        row.bundle = compute_bundle(snap)
    except ValueError as exc:
        row.error = str(exc)
    return row


def cmd_gini(paths: Sequence[Path] | None = None, manifest: Manifest | None = None,
             snapshot_dir: Path | None = None) -> list[BundleRow]:
    """Bundles in manifest order (or argument order when given explicit paths)."""
    if manifest is not None:
        snapshot_dir = Path(snapshot_dir or ".")
        rows = []
        for e in manifest.entries:
            path = snapshot_dir / snapshot_filename(e)
            if not path.exists():
                rows.append(BundleRow(e.token_symbol, e.company, e.chain_id, e.token_contract,
                                      error=f"snapshot not found: {path}"))
            else:
                rows.append(bundle_row(path, e.company, e.token_symbol))
        return rows
    return [bundle_row(Path(p)) for p in (paths or [])]


def gini_artifact(rows: Sequence[BundleRow], manifest: Manifest | None = None) -> dict:
    return {
        "kind": "gini_bundles",
        "provenance": {
            "tool_version": __version__,
            "manifest_sha256": manifest.sha256 if manifest else None,
            "captured_at": {r.symbol: r.captured_at for r in rows},
        },
        "rows": [r.as_dict() for r in rows],
    }


def panel_rows(rows: Sequence[BundleRow], manifest: Manifest | None = None) -> list[dict]:
    roi = {}
    if manifest is not None:
        roi = {e.token_symbol: e.roi for e in manifest.entries}
    out = []
    for r in rows:
        if r.error:
            continue
        d = {"company": r.company, "token": r.symbol, "roi": roi.get(r.symbol)}
        d.update({f: getattr(r.bundle, f) for f in BUNDLE_FIELDS})
        out.append(d)
    return out


def _fmt_cell(value) -> str:
    return "" if value is None else repr(float(value))


def write_panel_csv(rows: Sequence[dict], path: str | os.PathLike) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(PANEL_HEADER)
        for r in rows:
            w.writerow([r["company"], r["token"]] + [_fmt_cell(r.get(c)) for c in PANEL_HEADER[2:]])


def read_panel_csv(path: str | os.PathLike) -> tuple[list[str], list[dict]]:
    """Returns (header, rows); numeric cells become floats, blanks None.

    A comma inside a numeric cell is read as a decimal separator.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = list(reader.fieldnames or [])
        rows = []
        for lineno, raw in enumerate(reader, 2):
            row = {}
            for k, v in raw.items():
                v = (v or "").strip()
                if k in ("company", "token"):
                    row[k] = v
                elif v == "":
                    row[k] = None
                else:
                    try:
                        row[k] = float(v.replace(",", "."))
                    except ValueError:
                        raise ValueError(f"{path}:{lineno}: column {k}: not a number {v!r}") from None
            rows.append(row)
    return header, rows


def fixture_rows() -> list[dict]:
    """Bundled 32-company Gini fixture (C, D, E, F only; ROI and G are not published)."""
    ref = resources.files("daogini") / "data" / "company_ginis.csv"
    with resources.as_file(ref) as p:
        return read_panel_csv(p)[1]


def fixture_printed() -> list[list[str]]:
    """The table exactly as printed: tab-separated, comma decimals."""
    text = (resources.files("daogini") / "data" / "company_ginis_printed.tsv").read_text("utf-8")
    return [line.split("\t") for line in text.splitlines() if line.strip()]


def normalize_printed(rows: Sequence[Sequence[str]]) -> list[dict]:
    out = []
    for r in rows[1:]:
        d = {"company": r[0], "token": r[1], "roi": None, "g_all": None}
        for name, cell in zip(("g_c", "g_d", "g_e", "g_f"), r[2:6]):
            d[name] = float(cell.replace(",", "."))
        out.append(d)
    return out


def parse_models(text: str | None) -> tuple[tuple[str, ...], ...]:
    """``"g_c,g_d,g_e,g_f;g_d"`` -> (("g_c", ...), ("g_d",)). Empty -> default nested set."""
    if not text:
        return DEFAULT_MODELS
    models = []
    for chunk in text.split(";"):
        cols = tuple(c.strip() for c in chunk.split(",") if c.strip())
        for c in cols:
            if c not in GINI_COLUMNS:
                raise ValueError(f"unknown regressor {c!r}; choose from {sorted(GINI_COLUMNS)}")
        if cols:
            models.append(cols)
    if not models:
        raise ValueError("no models given")
    return tuple(models)


@dataclass(frozen=True)
class RegressionConfig:
    transform_dep: str = "ln"
    gini_floor: float = 0.0
    se: str = "hc1"
    models: tuple[tuple[str, ...], ...] = DEFAULT_MODELS


def build_observation_table(rows: Sequence[dict], header: Sequence[str],
                            cfg: RegressionConfig) -> ObservationTable:
    if "roi" not in header:
        raise EstimationError("dependent column not found: 'roi'")
    needed = sorted({c for m in cfg.models for c in m})
    for c in needed:
        if c not in header:
            raise EstimationError(f"regressor column not found: {c!r}")
    missing = [r["company"] for r in rows if r.get("roi") is None]
    if missing:
        raise TransformError(f"roi missing for rows {missing}")
    for c in needed:
        gaps = [r["company"] for r in rows if r.get(c) is None]
        if gaps:
            raise TransformError(f"{c} missing for rows {gaps}")
    cols = {"roi": [r["roi"] for r in rows]}
    cols.update({c: [r[c] for r in rows] for c in needed})
    table = ObservationTable([r["company"] for r in rows], cols)
    table = table.with_transformed("roi", "LnROI", TransformSpec(cfg.transform_dep))
    reg_spec = TransformSpec("ln", cfg.gini_floor)
    for c in needed:
        table = table.with_transformed(c, GINI_COLUMNS[c], reg_spec)
    return table


def cmd_regress(rows: Sequence[dict], header: Sequence[str],
                cfg: RegressionConfig = RegressionConfig()) -> list[FitResult]:
    table = build_observation_table(rows, header, cfg)
    fits = []
    for model in cfg.models:
        spec = ModelSpec("LnROI", tuple(GINI_COLUMNS[c] for c in model), se_flavor=cfg.se.upper())
        fits.append(fit_ols(table, spec))
    return fits


def regression_artifact(fits: Sequence[FitResult], cfg: RegressionConfig,
                        panel_sha256: str | None = None) -> dict:
    return {
        "kind": "regression",
        "provenance": {
            "tool_version": __version__,
            "panel_sha256": panel_sha256,
            "transform_dep": cfg.transform_dep,
            "gini_floor": cfg.gini_floor,
            "se": cfg.se.upper(),
            "models": [list(m) for m in cfg.models],
        },
        "fits": [f.to_dict() for f in fits],
    }


def fits_from_artifact(obj: dict) -> list[FitResult]:
    fits = []
    for d in obj["fits"]:
        fits.append(FitResult(
            names=tuple(d["names"]), beta=np.array(d["beta"]), residuals=np.array([]),
            robust_cov=np.array(d["robust_cov"]), se=np.array(d["se"]), n=d["n"], k=d["k"],
            se_flavor=d["se_flavor"], log_log=d["log_log"], dependent=d["dependent"],
            t=None if d["t"] is None else np.array(d["t"]),
            p=None if d["p"] is None else np.array(d["p"]),
            stars=None if d["stars"] is None else list(d["stars"]),
        ))
    return fits


def synthetic_roi(rows: Sequence[dict], seed: int, slope_d: float = -0.117077,
                  intercept: float = -0.4456323, noise: float = 0.3,
                  floor: float = 1e-6) -> list[dict]:
    """Attach a made-up positive ROI column driven by g_d, for exercising the
    regression path on panels whose real returns are unavailable."""
    rng = np.random.default_rng(seed)
    out = []
    for r in rows:
        ln_gd = math.log(max(r["g_d"], floor))
        ln_roi = intercept + slope_d * ln_gd + rng.normal(0.0, noise)
        out.append(dict(r, roi=math.exp(ln_roi)))
    return out


def file_sha256(path: str | os.PathLike) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()
