import csv
import json
import math

import numpy as np
import pytest

from daogini.cli import main
from daogini.econometrics import EstimationError
from daogini.pipeline import (DEFAULT_MODELS, RegressionConfig, fixture_printed, fixture_rows,
                              cmd_regress, load_manifest, normalize_printed, parse_models,
                              read_panel_csv, synthetic_roi)
from daogini.report import bundles_markdown, fits_markdown, round_half_up
from e2e_support import TOKENS, hand_bundle, populate, write_manifest
from mock_explorer import addr

@pytest.fixture
def mock_run(explorer, tmp_path):
    populate(explorer)
    manifest = write_manifest(tmp_path / "manifest.csv")
    snaps = tmp_path / "snaps"

    def ingest(*extra):
        return main(["ingest", "--manifest", str(manifest), "--out", str(snaps),
                     "--explorer-url", explorer.url, "--rate-limit", "500", "--page-size", "3",
                     "--cache", str(tmp_path / "cache.jsonl"), *extra])

    def gini(out):
        return main(["gini", "--manifest", str(manifest), "--snapshots", str(snaps),
                     "--out", str(out), "--panel", str(out.with_name(out.stem + "_panel.csv"))])

    return ingest, gini, snaps


def test_ingest_then_gini_hand_values(mock_run, explorer, tmp_path):
    ingest, gini, snaps = mock_run
    assert ingest() == 0
    assert len(list(snaps.glob("*.json"))) == 3
    assert gini(tmp_path / "b.csv") == 0
    with open(tmp_path / "b.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert [r["symbol"] for r in rows] == list(TOKENS)
    for r in rows:
        want = hand_bundle(TOKENS[r["symbol"]][1])
        got = [float(r[f]) for f in ("g_all", "g_c", "g_d", "g_e", "g_f")]
        assert got == pytest.approx(want, abs=5e-7)  # 6-decimal CSV
    full = json.loads((tmp_path / "b.json").read_text())
    for r in full["rows"]:
        want = hand_bundle(TOKENS[r["symbol"]][1])
        assert [r[f] for f in ("g_all", "g_c", "g_d", "g_e", "g_f")] == pytest.approx(want, abs=1e-12)


def test_rerun_skips_and_is_byte_identical(mock_run, explorer, tmp_path):
    ingest, gini, snaps = mock_run
    assert ingest() == 0
    gini(tmp_path / "one.csv")
    before = {p.name: p.read_bytes() for p in snaps.glob("*.json")}
    fetches = explorer.count("tokenholderlist")
    assert ingest() == 0
    assert explorer.count("tokenholderlist") == fetches
    assert {p.name: p.read_bytes() for p in snaps.glob("*.json")} == before
    gini(tmp_path / "two.csv")
    for suffix in (".csv", ".json", "_panel.csv"):
        assert (tmp_path / f"one{suffix}").read_bytes() == (tmp_path / f"two{suffix}").read_bytes()


def test_force_refetches(mock_run, explorer):
    ingest, _, _ = mock_run
    ingest()
    n = explorer.count("tokenholderlist")
    assert ingest("--force") == 0
    assert explorer.count("tokenholderlist") > n
    # classification served from cache on the second pass
    assert explorer.count("eth_getCode") == sum(len(v[1]) + len(v[2]) for v in TOKENS.values())


def test_partial_failure_exit_2(mock_run, explorer, capsys):
    ingest, _, snaps = mock_run
    explorer.missing_tokens.add(TOKENS["BBB"][0])
    assert ingest() == 2
    names = [p.name for p in snaps.glob("*.json")]
    assert len(names) == 2 and not any(n.startswith("BBB") for n in names)
    assert "BBB" in capsys.readouterr().err


def test_keep_contracts_flag(mock_run, tmp_path):
    ingest, gini, snaps = mock_run
    assert ingest("--drop-contracts=false") == 0
    snap = json.loads(next(snaps.glob("CCC*.json")).read_text())
    assert not snap["contracts_removed"]
    assert [r["balance"] for r in snap["records"]] == ["77", "7", "1", "1", "1"]


def test_drop_contracts_env_var(mock_run, monkeypatch):
    ingest, _, snaps = mock_run
    monkeypatch.setenv("DAOGINI_DROP_CONTRACTS", "false")
    assert ingest() == 0
    snap = json.loads(next(snaps.glob("AAA*.json")).read_text())
    assert not snap["contracts_removed"]


def test_gini_row_error_continues(tmp_path):
    from daogini.holders import SnapshotMeta, build_snapshot, save_snapshot, HolderRecord
    from datetime import datetime, timezone
    meta = SnapshotMeta("EMPTY", addr(1), 1, datetime(2024, 1, 1, tzinfo=timezone.utc))
    save_snapshot(build_snapshot([], None, False, meta), tmp_path / "empty.json")
    meta = SnapshotMeta("OK", addr(2), 1, datetime(2024, 1, 1, tzinfo=timezone.utc))
    recs = [HolderRecord(addr(10 + i), b) for i, b in enumerate([16, 8, 4, 2, 1, 1])]
    save_snapshot(build_snapshot(recs, None, False, meta), tmp_path / "ok.json")
    code = main(["gini", str(tmp_path / "empty.json"), str(tmp_path / "ok.json"),
                 "--out", str(tmp_path / "b.csv")])
    assert code == 2
    lines = (tmp_path / "b.csv").read_text().splitlines()
    assert lines[0] == "symbol,g_all,g_c,g_d,g_e,g_f"
    assert lines[1] == "OK,0.510417,0.285714,0.166667,0.000000,0.166667"
    errs = [r for r in json.loads((tmp_path / "b.json").read_text())["rows"] if r["error"]]
    assert errs[0]["symbol"] == "EMPTY" and "too few records" in errs[0]["error"]


def test_holders_csv_manifest_entry(tmp_path):
    (tmp_path / "h.csv").write_text(
        "address,balance,is_contract\n" + "".join(
            f"{addr(i)},{b},{'true' if b == 99 else 'false'}\n"
            for i, b in enumerate([16, 8, 4, 2, 1, 1, 0, 3, 99])))
    (tmp_path / "m.json").write_text(json.dumps({
        "entries": [{"company": "X", "token_symbol": "X", "token_contract": addr(0xF00),
                     "chain_id": 1, "roi": 0.5, "dao_verified": True, "holders_csv": "h.csv"}],
        "defaults": {"drop_contracts": True}}))
    assert main(["ingest", "--manifest", str(tmp_path / "m.json"), "--out", str(tmp_path / "s")]) == 0
    snap = json.loads(next((tmp_path / "s").glob("*.json")).read_text())
    assert [r["balance"] for r in snap["records"]] == ["16", "8", "4", "3", "2", "1", "1"]


def test_manifest_duplicates_rejected(tmp_path):
    p = tmp_path / "m.csv"
    p.write_text("company,token_symbol,token_contract,chain_id,roi,dao_verified\n"
                 f"A,A,{addr(1)},1,,true\nB,B,{addr(1)},1,,true\n")
    with pytest.raises(ValueError, match="duplicate"):
        load_manifest(p)
    assert main(["ingest", "--manifest", str(p), "--out", str(tmp_path / "o")]) == 1


def test_usage_error_exit_1(capsys):
    assert main(["report", "--format", "xml"]) == 1
    assert main(["gini", "--out", "x.csv"]) == 1


# bundled 32-company fixture

def test_fixture_matches_printed_table():
    printed = fixture_printed()
    assert len(printed) == 33
    rows = fixture_rows()
    assert len(rows) == 32
    assert rows == normalize_printed(printed)
    for row, raw in zip(rows, printed[1:]):
        rendered = [round_half_up(row[g]).replace(".", ",") for g in ("g_c", "g_d", "g_e", "g_f")]
        assert rendered == raw[2:6]


def test_fixture_md_rendering():
    rows = [dict(symbol=r["token"], company=r["company"], **{k: r[k] for k in ("g_all", "g_c", "g_d", "g_e", "g_f")})
            for r in fixture_rows()]
    md = bundles_markdown(rows)
    assert "| Uniswap | UNI | 0.98 | 0.19 | 0.27 | 0.96 |" in md
    assert "| GMX | GMX | 1.00 | 0.01 | 0.51 | 0.99 |" in md
    assert md.count("\n|") == 33 + 1  # header, rule, 32 rows


@pytest.mark.parametrize("value, shown", [(0.125, "0.13"), (0.135, "0.14"), (0.994999, "0.99"),
                                          (0.995, "1.00"), (0.0, "0.00"), (0.284999999, "0.28")])
def test_half_up(value, shown):
    assert round_half_up(value) == shown


def test_report_fixture_cli(capsys):
    assert main(["report", "--fixture", "--format", "md"]) == 0
    out = capsys.readouterr().out
    assert "| Trader Joe | JOE | 0.99 | 0.26 | 0.00 | 0.99 |" in out


def test_report_empty_is_error():
    assert main(["report", "--format", "md"]) == 1


# regression stage

def _fixture_with_roi(seed=7):
    return synthetic_roi(fixture_rows(), seed)


def test_regress_layout_matches_nested_pattern():
    rows = _fixture_with_roi()
    header = list(rows[0])
    fits = cmd_regress(rows, header, RegressionConfig(gini_floor=1e-6))
    assert [f.names[:-1] for f in fits] == [("LnGC", "LnGD", "LnGE", "LnGF"),
                                            ("LnGD", "LnGE", "LnGF"), ("LnGD", "LnGE"), ("LnGD",)]
    md = fits_markdown(fits)
    table = [l for l in md.splitlines() if l.startswith("|")]
    cells = [[c.strip() for c in l.strip("|").split("|")] for l in table[2:]]
    labels = [c[0] for c in cells if c[0]]
    assert labels == ["LnGC", "LnGD", "LnGE", "LnGF", "Constant", "Observations"]
    dash = {c[0]: [v == "-" for v in c[1:]] for c in cells if c[0]}
    assert dash["LnGC"] == [False, True, True, True]
    assert dash["LnGD"] == [False, False, False, False]
    assert dash["LnGE"] == [False, False, False, True]
    assert dash["LnGF"] == [False, False, True, True]
    assert dash["Constant"] == [False] * 4
    assert cells[-1] == ["Observations", "32", "32", "32", "32"]
    assert "* p ≤ 0.05, ** p ≤ 0.01, *** p ≤ 0.001" in md


def test_regress_zero_gini_needs_floor():
    rows = _fixture_with_roi()
    with pytest.raises(ValueError, match="Trader Joe"):
        cmd_regress(rows, list(rows[0]), RegressionConfig())


def test_regress_missing_roi_column(tmp_path):
    p = tmp_path / "panel.csv"
    p.write_text("company,token,g_c,g_d,g_e,g_f\nA,A,0.9,0.2,0.3,0.8\n")
    header, rows = read_panel_csv(p)
    with pytest.raises(EstimationError, match="dependent column not found"):
        cmd_regress(rows, header)
    assert main(["regress", "--panel", str(p)]) == 1


def test_regress_cli_hc0_vs_hc1(tmp_path, capsys):
    args = ["regress", "--fixture", "--synthetic-roi", "7", "--gini-floor", "1e-6"]
    assert main(args + ["--se", "hc0", "--out", str(tmp_path / "hc0.json")]) == 0
    assert main(args + ["--se", "hc1", "--out", str(tmp_path / "hc1.json")]) == 0
    f0 = json.loads((tmp_path / "hc0.json").read_text())["fits"]
    f1 = json.loads((tmp_path / "hc1.json").read_text())["fits"]
    for a, b in zip(f0, f1):
        assert a["beta"] == b["beta"]
        ratio = np.array(b["se"]) / np.array(a["se"])
        assert np.allclose(ratio, math.sqrt(a["n"] / (a["n"] - a["k"])), rtol=1e-12, atol=0)


def test_regress_json_precision_and_report_roundtrip(tmp_path, capsys):
    out = tmp_path / "fits.json"
    assert main(["regress", "--fixture", "--synthetic-roi", "7", "--gini-floor", "1e-6",
                 "--out", str(out), "--format", "json"]) == 0
    obj = json.loads(out.read_text())
    beta = obj["fits"][3]["beta"][0]
    assert len(repr(beta).lstrip("-0.").replace(".", "")) >= 15
    capsys.readouterr()
    assert main(["report", "--fits", str(out), "--format", "md"]) == 0
    assert "OLS (4)" in capsys.readouterr().out
    assert main(["report", "--fits", str(out), "--format", "csv"]) == 0
    assert capsys.readouterr().out.startswith("model,term,beta,se,t,p,stars,n")


def test_regress_ln1p_and_env_precedence(tmp_path, monkeypatch, capsys):
    monkeypatch.setenv("DAOGINI_SE", "hc0")
    out = tmp_path / "f.json"
    assert main(["regress", "--fixture", "--synthetic-roi", "7", "--gini-floor", "1e-6",
                 "--transform-dep", "ln1p", "--out", str(out)]) == 0
    prov = json.loads(out.read_text())["provenance"]
    assert prov["se"] == "HC0" and prov["transform_dep"] == "ln1p"
    assert main(["regress", "--fixture", "--synthetic-roi", "7", "--gini-floor", "1e-6",
                 "--se", "hc1", "--out", str(out)]) == 0
    assert json.loads(out.read_text())["provenance"]["se"] == "HC1"


def test_parse_models():
    assert parse_models(None) == DEFAULT_MODELS
    assert parse_models("g_d,g_e; g_d") == (("g_d", "g_e"), ("g_d",))
    with pytest.raises(ValueError):
        parse_models("g_x")


def test_panel_from_gini_stage_regresses(mock_run, tmp_path):
    ingest, gini, snaps = mock_run
    ingest()
    gini(tmp_path / "b.csv")
    header, rows = read_panel_csv(tmp_path / "b_panel.csv")
    assert header == ["company", "token", "roi", "g_all", "g_c", "g_d", "g_e", "g_f"]
    assert [r["token"] for r in rows] == list(TOKENS)
    assert all(r["roi"] is None for r in rows)
