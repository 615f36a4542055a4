"""``daogini`` command line.

Exit codes: 0 success, 2 partial failure (some entries failed), 1 usage,
configuration, or whole-run error. Settings resolve as CLI flag, then
environment variable, then manifest default.
"""

from __future__ import annotations

import csv
import json
import logging
import sys
from pathlib import Path

import click

from . import __version__
from .econometrics import EstimationError, TransformError
from .pipeline import (PANEL_HEADER, IngestConfig, ManifestError, RegressionConfig,
                       fixture_rows, cmd_gini, cmd_ingest, cmd_regress, file_sha256,
                       fits_from_artifact, gini_artifact, load_manifest, panel_rows, parse_models,
                       read_panel_csv, regression_artifact, synthetic_roi, write_panel_csv)
from .report import BUNDLE_FIELDS, bundles_csv, bundles_markdown, dumps_json, fits_csv, fits_markdown


class Failure(click.ClickException):
    exit_code = 1


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_text(text, encoding="utf-8")
    else:
        click.echo(text, nl=False)


@click.group()
@click.version_option(__version__, prog_name="daogini")
@click.option("-v", "--verbose", is_flag=True)
def cli(verbose):
    """Token-holder Gini metrics and robust log-log regressions."""
    logging.basicConfig(level=logging.INFO if verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")


@cli.command()
@click.option("--manifest", "manifest_path", required=True, type=click.Path(exists=True, dir_okay=False))
@click.option("--out", "out_dir", required=True, type=click.Path(file_okay=False))
@click.option("--force", is_flag=True, help="Refetch even when a valid snapshot exists.")
@click.option("--drop-contracts", type=click.BOOL, default=None, envvar="DAOGINI_DROP_CONTRACTS")
@click.option("--explorer-url", envvar="DAOGINI_EXPLORER_URL", default=None)
@click.option("--rate-limit", type=float, default=None, help="Requests per second.")
@click.option("--api-key-env", default="DAOGINI_API_KEY", show_default=True,
              help="Name of the environment variable holding the explorer key.")
@click.option("--page-size", type=click.IntRange(min=1), default=1000, show_default=True)
@click.option("--cache", "cache_path", type=click.Path(dir_okay=False), default=None,
              help="Classification cache file (default $DAOGINI_CACHE_DIR/classifications.jsonl).")
def ingest(manifest_path, out_dir, force, drop_contracts, explorer_url, rate_limit,
           api_key_env, page_size, cache_path):
    """Fetch holder lists (or import per-entry CSVs) into snapshot files."""
    manifest = _load_manifest(manifest_path)
    config = IngestConfig(
        out_dir=Path(out_dir),
        drop_contracts=manifest.drop_contracts if drop_contracts is None else drop_contracts,
        force=force, explorer_url=explorer_url, rate_limit=rate_limit,
        api_key_ref=api_key_env, page_size=page_size,
        cache_path=Path(cache_path) if cache_path else None,
    )
    result = cmd_ingest(manifest, config)
    click.echo(f"written {len(result.written)}, skipped {len(result.skipped)}, "
               f"failed {len(result.errors)}")
    for symbol, err in result.errors:
        click.echo(f"  FAILED {symbol}: {err}", err=True)
    sys.exit(result.exit_code)


@cli.command()
@click.argument("snapshots", nargs=-1, type=click.Path(dir_okay=False))
@click.option("--manifest", "manifest_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--snapshots", "snapshot_dir", type=click.Path(file_okay=False),
              help="Directory holding the manifest's snapshot files.")
@click.option("--out", required=True, type=click.Path(dir_okay=False),
              help="Bundle CSV; a full-precision JSON is written next to it.")
@click.option("--panel", "panel_out", type=click.Path(dir_okay=False),
              help="Also write a regression panel CSV (ROI taken from the manifest).")
def gini(snapshots, manifest_path, snapshot_dir, out, panel_out):
    """Compute the five Gini values for each snapshot."""
    if not snapshots and not manifest_path:
        raise click.UsageError("give snapshot files or --manifest")
    manifest = _load_manifest(manifest_path) if manifest_path else None
    if manifest is not None:
        rows = cmd_gini(manifest=manifest, snapshot_dir=Path(snapshot_dir or "."))
    else:
        rows = cmd_gini(paths=[Path(p) for p in snapshots])
    dicts = [r.as_dict() for r in rows]
    out = Path(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(bundles_csv(dicts), encoding="utf-8")
    out.with_suffix(".json").write_text(dumps_json(gini_artifact(rows, manifest)), encoding="utf-8")
    if panel_out:
        write_panel_csv(panel_rows(rows, manifest), panel_out)
    failed = [r for r in rows if r.error]
    for r in failed:
        click.echo(f"  ERROR {r.symbol}: {r.error}", err=True)
    click.echo(f"bundles {len(rows) - len(failed)}, errors {len(failed)}")
    sys.exit(2 if failed else 0)


@cli.command()
@click.option("--panel", "panel_path", type=click.Path(exists=True, dir_okay=False))
@click.option("--fixture", "use_fixture", is_flag=True, help="Use the bundled 32-company Gini fixture as the panel.")
@click.option("--synthetic-roi", "roi_seed", type=int, default=None, metavar="SEED",
              help="Replace the roi column with synthetic values (structural checks only).")
@click.option("--manifest", "manifest_path", type=click.Path(exists=True, dir_okay=False),
              help="Only used for default transform/SE settings.")
@click.option("--models", default=None, help='e.g. "g_c,g_d,g_e,g_f;g_d"; default: four nested models.')
@click.option("--transform-dep", type=click.Choice(["ln", "ln1p"]), default=None,
              envvar="DAOGINI_TRANSFORM_DEP")
@click.option("--gini-floor", type=click.FloatRange(min=0), default=None, envvar="DAOGINI_GINI_FLOOR")
@click.option("--se", type=click.Choice(["hc0", "hc1"], case_sensitive=False), default=None,
              envvar="DAOGINI_SE")
@click.option("--format", "fmt", type=click.Choice(["md", "csv", "json"]), default="md")
@click.option("--out", type=click.Path(dir_okay=False), help="Full-precision JSON artifact.")
def regress(panel_path, use_fixture, roi_seed, manifest_path, models, transform_dep, gini_floor,
            se, fmt, out):
    """Fit the log-log OLS models and render the regression table."""
    manifest = _load_manifest(manifest_path) if manifest_path else None
    if bool(panel_path) == bool(use_fixture):
        raise click.UsageError("give exactly one of --panel or --fixture")
    if use_fixture:
        header, rows, sha = list(PANEL_HEADER), fixture_rows(), None
    else:
        try:
            header, rows = read_panel_csv(panel_path)
        except ValueError as exc:
            raise Failure(str(exc))
        sha = file_sha256(panel_path)
    if roi_seed is not None:
        rows = synthetic_roi(rows, roi_seed)
        header = header if "roi" in header else header + ["roi"]
    try:
        cfg = RegressionConfig(
            transform_dep=transform_dep or (manifest.transform_dep if manifest else "ln"),
            gini_floor=gini_floor if gini_floor is not None else (manifest.gini_floor if manifest else 0.0),
            se=(se or (manifest.se if manifest else "hc1")).lower(),
            models=parse_models(models),
        )
        fits = cmd_regress(rows, header, cfg)
    except (EstimationError, TransformError, ValueError) as exc:
        raise Failure(str(exc))
    artifact = regression_artifact(fits, cfg, sha)
    if out:
        _emit(dumps_json(artifact), out)
    if fmt == "md":
        click.echo(fits_markdown(fits), nl=False)
    elif fmt == "csv":
        click.echo(fits_csv(fits), nl=False)
    else:
        click.echo(dumps_json(artifact), nl=False)


@cli.command()
@click.option("--bundles", "bundles_path", type=click.Path(exists=True, dir_okay=False),
              help="Bundle JSON/CSV from `gini`, or a panel CSV.")
@click.option("--fits", "fits_path", type=click.Path(exists=True, dir_okay=False),
              help="Regression JSON from `regress --out`.")
@click.option("--fixture", "use_fixture", is_flag=True, help="Render the bundled 32-company Gini fixture.")
@click.option("--format", "fmt", type=click.Choice(["md", "csv", "json"]), default="md")
@click.option("--out", type=click.Path(dir_okay=False))
def report(bundles_path, fits_path, use_fixture, fmt, out):
    """Render stored artifacts."""
    bundles = None
    if use_fixture:
        bundles = [_panel_to_bundle(r) for r in fixture_rows()]
    elif bundles_path:
        bundles = _read_bundles(bundles_path)
    fits = None
    if fits_path:
        fits_obj = json.loads(Path(fits_path).read_text(encoding="utf-8"))
        fits = fits_from_artifact(fits_obj)
    if bundles is None and fits is None:
        raise Failure("nothing to report: give --bundles, --fits or --fixture")
    parts = []
    if fmt == "md":
        if bundles is not None:
            parts.append(bundles_markdown(bundles))
        if fits is not None:
            parts.append(fits_markdown(fits))
        _emit("\n".join(parts), out)
    elif fmt == "csv":
        if bundles is not None:
            parts.append(bundles_csv(bundles))
        if fits is not None:
            parts.append(fits_csv(fits))
        _emit("\n".join(parts), out)
    else:
        obj = {}
        if bundles is not None:
            obj["bundles"] = bundles
        if fits is not None:
            obj["fits"] = [f.to_dict() for f in fits]
        _emit(dumps_json(obj), out)


def _panel_to_bundle(row: dict) -> dict:
    d = {k: row.get(k) for k in BUNDLE_FIELDS}
    d.update(symbol=row["token"], company=row["company"])
    return d


def _read_bundles(path: str) -> list[dict]:
    p = Path(path)
    if p.suffix.lower() == ".json":
        obj = json.loads(p.read_text(encoding="utf-8"))
        if obj.get("kind") != "gini_bundles":
            raise Failure(f"{path}: not a gini bundle artifact")
        return obj["rows"]
    with open(p, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        if "symbol" in header:
            # bundle CSV from `gini`
            return [{"symbol": r["symbol"], "company": r["symbol"],
                     **{k: float(r[k]) if r.get(k) else None for k in BUNDLE_FIELDS}}
                    for r in reader]
    if "token" in header:
        try:
            return [_panel_to_bundle(r) for r in read_panel_csv(p)[1]]
        except ValueError as exc:
            raise Failure(str(exc))
    raise Failure(f"{path}: unrecognized CSV header {header}")


def _load_manifest(path):
    try:
        return load_manifest(path)
    except (ManifestError, OSError) as exc:
        raise Failure(str(exc))


def main(argv=None) -> int:
    try:
        cli.main(args=argv, prog_name="daogini", standalone_mode=False)
    except click.exceptions.Exit as exc:
        return exc.exit_code
    except click.ClickException as exc:
        exc.show()
        return 1
    except click.Abort:
        click.echo("aborted", err=True)
        return 1
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
