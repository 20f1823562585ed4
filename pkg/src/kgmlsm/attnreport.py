"""Attention interpretability reports: raw per-token weight extraction,
per-year max-normalization, category averages over the season, and
drought vs. non-drought distribution statistics.

Everything emitted downstream is recomputable from attention_raw.csv
alone; the writers here hold no hidden state.
"""

import csv

import numpy as np

from . import ingest, model

CATEGORIES = ("Weather", "VIs", "SM")

# 16-day windows (1-indexed) roughly covering each mid-season month,
# counting from the April 1 season start.
MONTH_WINDOWS = {"june": (4, 5), "july": (6, 7), "august": (8, 9)}


def extract(bundle, dataset):
    """Per-sample attention weights keyed by (id, year, channel, timestep).

    Read-only with respect to the model. Returns a dict with the raw
    (N, n_tokens) matrix, token labels, sample keys, years and drought
    flags.
    """
    pred = bundle.predict(dataset)
    labels = model.token_labels(bundle.config)
    return {
        "alpha": pred["alpha"],
        "labels": labels,
        "keys": [(s.sid, s.year) for s in dataset.samples],
        "years": np.array([s.year for s in dataset.samples]),
        "drought": np.array([s.drought_flag for s in dataset.samples], dtype=bool),
    }


def normalize_by_year(years, values):
    """Divide each value by the maximum within its year.

    The per-year maximum maps to exactly 1; ratios across years are not
    preserved and must not be compared.
    """
    years = np.asarray(years)
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ValueError("normalize_by_year: empty input")
    out = np.empty_like(values)
    for year in np.unique(years):
        mask = years == year
        peak = values[mask].max()
        if peak <= 0:
            raise ValueError(f"normalize_by_year: year {year} has no positive value")
        out[mask] = values[mask] / peak
    return out


def category_average(alpha_row, labels, categories=None):
    """Per-category, per-timestep mean of one sample's attention weights.

    Every series channel must belong to exactly one category; auxiliary
    tokens (timestep -1) have no category and are excluded.
    """
    categories = categories or ingest.CHANNEL_CATEGORY
    sums = {}
    counts = {}
    for a, (channel, t) in zip(alpha_row, labels):
        if t < 0:
            continue
        if channel not in categories:
            raise ValueError(f"channel {channel!r} has no category assignment")
        cat = categories[channel]
        key = (cat, t)
        sums[key] = sums.get(key, 0.0) + float(a)
        counts[key] = counts.get(key, 0) + 1
    return {key: sums[key] / counts[key] for key in sums}


def category_report(extraction):
    """Mean category attention per (year, category, timestep) over samples."""
    acc = {}
    n_by_year = {}
    for row, (sid, year) in zip(extraction["alpha"], extraction["keys"]):
        n_by_year[year] = n_by_year.get(year, 0) + 1
        for (cat, t), v in category_average(row, extraction["labels"]).items():
            key = (year, cat, t)
            acc[key] = acc.get(key, 0.0) + v
    rows = []
    for (year, cat, t) in sorted(acc):
        rows.append({"year": year, "category": cat, "timestep": t,
                     "alpha_mean": acc[(year, cat, t)] / n_by_year[year]})
    return rows


def sm_attention_scalar(extraction):
    """Per-sample soil-moisture attention: mean over the SM tokens."""
    idx = [i for i, (ch, t) in enumerate(extraction["labels"]) if ch in ingest.SM_CHANNELS]
    if not idx:
        raise ValueError("no soil-moisture tokens in this model variant")
    return extraction["alpha"][:, idx].mean(axis=1)


def drought_distribution_stats(values, flags):
    """Box statistics (median, quartiles, Tukey-fence outlier count) per
    drought class. Quartiles use linear interpolation."""
    values = np.asarray(values, dtype=np.float64)
    flags = np.asarray(flags, dtype=bool)
    out = {}
    for name, mask in (("drought", flags), ("non_drought", ~flags)):
        if not mask.any():
            raise ValueError(f"drought_distribution_stats: empty class {name!r}")
        v = values[mask]
        q1, med, q3 = np.percentile(v, [25, 50, 75])
        iqr = q3 - q1
        lo, hi = q1 - 1.5 * iqr, q3 + 1.5 * iqr
        out[name] = {"median": float(med), "q1": float(q1), "q3": float(q3),
                     "n": int(mask.sum()), "outliers": int(((v < lo) | (v > hi)).sum())}
    return out


# ---------------------------------------------------------------------------
# CSV / SVG emitters


def write_raw_csv(path, extraction):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["id", "year", "channel", "timestep", "alpha"])
        for row, (sid, year) in zip(extraction["alpha"], extraction["keys"]):
            for a, (channel, t) in zip(row, extraction["labels"]):
                w.writerow([sid, str(year), channel, str(t), repr(float(a))])


def read_raw_csv(path):
    rows = []
    with open(path, newline="", encoding="utf-8") as f:
        r = csv.reader(f)
        header = next(r, None)
        if header != ["id", "year", "channel", "timestep", "alpha"]:
            raise ValueError(f"unexpected header in {path}")
        for row in r:
            rows.append({"id": row[0], "year": int(row[1]), "channel": row[2],
                         "timestep": int(row[3]), "alpha": float(row[4])})
    return rows


def write_category_csv(path, rows):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["year", "category", "timestep", "alpha_mean"])
        for r in rows:
            w.writerow([str(r["year"]), r["category"], str(r["timestep"]), repr(r["alpha_mean"])])


def write_box_csv(path, stats_by_year):
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["year", "class", "median", "q1", "q3", "n", "outliers"])
        for year in sorted(stats_by_year):
            for cls, st in sorted(stats_by_year[year].items()):
                w.writerow([str(year), cls, repr(st["median"]), repr(st["q1"]),
                            repr(st["q3"]), str(st["n"]), str(st["outliers"])])


_SVG_COLORS = {"Weather": "#1f77b4", "VIs": "#2ca02c", "SM": "#d62728"}


def render_category_svg(path, rows, width=640, panel_height=120):
    """Static line chart: one panel per year, one line per category."""
    years = sorted({r["year"] for r in rows})
    t_max = max(r["timestep"] for r in rows) + 1
    v_max = max(r["alpha_mean"] for r in rows) or 1.0
    margin = 36
    height = panel_height * len(years) + margin
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">']
    for pi, year in enumerate(years):
        y0 = pi * panel_height + 18
        parts.append(f'<text x="4" y="{y0}" font-size="11">{year}</text>')
        for cat in CATEGORIES:
            pts = [(r["timestep"], r["alpha_mean"]) for r in rows
                   if r["year"] == year and r["category"] == cat]
            if not pts:
                continue
            pts.sort()
            coords = " ".join(
                f"{margin + (width - margin - 8) * t / max(t_max - 1, 1):.1f},"
                f"{y0 + (panel_height - 30) * (1 - v / v_max):.1f}"
                for t, v in pts)
            color = _SVG_COLORS.get(cat, "#333")
            parts.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{coords}"/>')
    legend = " ".join(f"{cat}={_SVG_COLORS[cat]}" for cat in CATEGORIES)
    parts.append(f'<text x="4" y="{height - 6}" font-size="10">{legend}</text>')
    parts.append("</svg>")
    with open(path, "w", encoding="utf-8") as f:
        f.write("\n".join(parts) + "\n")
