"""Markdown / CSV / JSON renderers for Gini bundles and regression fits."""

from __future__ import annotations

import csv
import io
import json
from decimal import ROUND_HALF_UP, Decimal
from typing import Sequence

from .econometrics import CONSTANT, STAR_LEGEND, FitResult

BUNDLE_FIELDS = ("g_all", "g_c", "g_d", "g_e", "g_f")
GROUP_TABLE_HEADER = (
    "Company",
    "Governance token",
    "Gini for first group (C)",
    "Gini for second group (D)",
    "Gini for top 50% of first group (E)",
    "Gini for bottom 50% of first group (F)",
)
DISPLAY_NAMES = {"g_all": "LnG", "g_c": "LnGC", "g_d": "LnGD", "g_e": "LnGE", "g_f": "LnGF",
                 "roi": "LnROI"}


def round_half_up(value: float, places: int = 2) -> str:
    q = Decimal(1).scaleb(-places)
    return str(Decimal(repr(float(value))).quantize(q, rounding=ROUND_HALF_UP))


def fmt6(value) -> str:
    return "" if value is None else f"{value:.6f}"


def fmt_coef(value: float) -> str:
    # 7 significant digits, the precision regression tables are usually printed at
    return f"{value:.7g}"


def display_name(column: str) -> str:
    return DISPLAY_NAMES.get(column, column)


def _md_table(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    lines = ["| " + " | ".join(header) + " |", "|" + "|".join("---" for _ in header) + "|"]
    lines += ["| " + " | ".join(r) + " |" for r in rows]
    return "\n".join(lines)


def bundles_markdown(rows: Sequence[dict]) -> str:
    """Two-decimal Gini table, one row per company.

    ``rows`` are dicts with company, symbol, g_all..g_f (floats or None) and
    an optional error. A whole-distribution column is added only when some
    row carries ``g_all``.
    """
    with_g = any(r.get("g_all") is not None for r in rows)
    header = list(GROUP_TABLE_HEADER[:2]) + (["Gini (G)"] if with_g else []) + list(GROUP_TABLE_HEADER[2:])
    fields = (("g_all",) if with_g else ()) + BUNDLE_FIELDS[1:]
    body, errors = [], []
    for r in rows:
        if r.get("error"):
            errors.append(f"- {r['symbol']}: {r['error']}")
            continue
        cells = [r.get("company") or r["symbol"], r["symbol"]]
        cells += ["" if r.get(f) is None else round_half_up(r[f]) for f in fields]
        body.append(cells)
    out = "Gini coefficients by holder group\n\n" + _md_table(header, body) + "\n"
    if errors:
        out += "\nErrors:\n" + "\n".join(errors) + "\n"
    return out


def bundles_csv(rows: Sequence[dict]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("symbol",) + BUNDLE_FIELDS)
    for r in rows:
        if r.get("error"):
            continue
        w.writerow([r["symbol"]] + [fmt6(r.get(f)) for f in BUNDLE_FIELDS])
    return buf.getvalue()


def _term_order(fits: Sequence[FitResult]) -> list[str]:
    order: list[str] = []
    for fit in fits:
        for name in fit.names:
            if name != CONSTANT and name not in order:
                order.append(name)
    return order + [CONSTANT]


def fits_markdown(fits: Sequence[FitResult], labels: Sequence[str] | None = None,
                  title: str | None = None) -> str:
    """Regression table: coefficient with stars, standard error in parentheses
    on the line below, "-" where a term is not in the model."""
    labels = list(labels or [f"OLS ({i + 1})" for i in range(len(fits))])
    dep = display_name(fits[0].dependent) if fits else ""
    regs = [display_name(n) for n in _term_order(fits) if n != CONSTANT]
    title = title or f"Regression of {dep} on {', '.join(regs)}"
    rows = []
    for term in _term_order(fits):
        coef_row, se_row = [display_name(term)], [""]
        for fit in fits:
            if term in fit.names:
                i = fit.names.index(term)
                coef_row.append(fmt_coef(fit.beta[i]) + (fit.stars[i] if fit.stars else ""))
                se_row.append(f"({fmt_coef(fit.se[i])})")
            else:
                coef_row.append("-")
                se_row.append("")
        rows += [coef_row, se_row]
    rows.append(["Observations"] + [str(f.n) for f in fits])
    flavors = sorted({f.se_flavor for f in fits})
    notes = (f"OLS point estimates; {'/'.join(flavors)} heteroskedasticity-robust standard errors "
             f"in parentheses; two-sided t-test with n - k degrees of freedom.")
    return f"{title}\n\n" + _md_table([""] + labels, rows) + f"\n\n{notes}\n\n{STAR_LEGEND}\n"


def fits_csv(fits: Sequence[FitResult], labels: Sequence[str] | None = None) -> str:
    labels = list(labels or [f"OLS ({i + 1})" for i in range(len(fits))])
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["model", "term", "beta", "se", "t", "p", "stars", "n"])
    for label, fit in zip(labels, fits):
        for i, name in enumerate(fit.names):
            inference = ([repr(float(fit.t[i])), repr(float(fit.p[i])), fit.stars[i]]
                         if fit.t is not None else ["", "", ""])
            w.writerow([label, display_name(name), repr(float(fit.beta[i])), repr(float(fit.se[i]))]
                       + inference + [fit.n])
    return buf.getvalue()


def dumps_json(obj) -> str:
    # floats go through repr, i.e. shortest round-trip (up to 17 significant digits)
    return json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n"
