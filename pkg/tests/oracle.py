"""Slow, loop-based reference implementation of the feature pipeline.

Works straight from the CSV files with the csv module and datetime, sharing
no code with the package beyond reading the manifest JSON.
"""
import csv
import datetime as dt
import json
from collections import defaultdict


def read_raw(directory, m):
    man = json.loads((directory / "manifest.json").read_text())
    start = dt.date.fromisoformat(man["study_start"])
    bmi = defaultdict(dict)
    with open(directory / "milestones.csv") as fh:
        for row in csv.DictReader(fh):
            bmi[row["participant_id"]][row["milestone"]] = float(row["bmi"])
    events = defaultdict(list)
    with open(directory / "events.csv") as fh:
        for row in csv.DictReader(fh):
            events[row["participant_id"]].append(
                (dt.datetime.fromisoformat(row["timestamp"]), int(row["step_count"])))
    with open(directory / "demographics.csv") as fh:
        pids = sorted(row["participant_id"] for row in csv.DictReader(fh))

    grids = {}
    for pid in pids:
        for p in man["periods"]:
            if p["start_milestone"] not in bmi[pid] or p["end_milestone"] not in bmi[pid]:
                continue
            p_start = start + dt.timedelta(days=p["offset_days"])
            n = p["n_days"]
            cells = {}
            for ts, steps in events[pid]:
                day = (ts.date() - p_start).days
                if 0 <= day < n:
                    slot = (ts.hour * 60 + ts.minute) * m // 1440
                    cells[day, slot] = cells.get((day, slot), 0) + steps
            if cells:
                grids[f"{pid}/{p['name']}"] = (n, cells)
    return grids


def impute_all(grids, m):
    sums, counts = [0.0] * m, [0] * m
    for n, cells in grids.values():
        for (_, slot), v in cells.items():
            sums[slot] += v
            counts[slot] += 1
    means = [s / c if c else 0.0 for s, c in zip(sums, counts)]
    out = {}
    for key, (n, cells) in grids.items():
        out[key] = [[float(cells[d, j]) if (d, j) in cells else means[j] for j in range(m)]
                    for d in range(n)]
    return out


def _daily(rows):
    return [sum(r) for r in rows]


def participant_stats(rows):
    daily = _daily(rows)
    dmean = sum(daily) / len(daily)
    weeks = [sum(daily[w * 7:(w + 1) * 7]) for w in range(len(daily) // 7)]
    wmean = sum(weeks) / len(weeks) if weeks else dmean * 7
    return dmean, wmean


def cohort_stats(all_rows):
    dm, wm, low = [], [], []
    for rows in all_rows:
        d, w = participant_stats(rows)
        dm.append(d)
        wm.append(w / 7)
        low.append(min(_daily(rows)))
    return sum(dm) / len(dm), sum(wm) / len(wm), sum(low) / len(low)


def _above(values, threshold):
    # same tie convention as the package: strictly above by a 1e-9 relative margin
    return sum(1 for v in values if v > threshold + 1e-9 * max(1.0, abs(threshold)))


def window_features(rows, w, k, cstats):
    m = len(rows[0])
    win = rows[w * k:(w + 1) * k]
    daily = _daily(win)
    slot_means = [sum(r[j] for r in win) / k for j in range(m)]
    weeks = [sum(daily[i * 7:(i + 1) * 7]) for i in range(k // 7)]
    total = sum(daily)
    own_d, own_w = participant_stats(rows)
    c_daily, c_weekly, c_low = cstats
    return slot_means + [
        total / k,
        max(daily),
        min(daily),
        max(weeks) if weeks else total,
        min(weeks) if weeks else total,
        total,
        _above(daily, 2 * c_low),
        _above(daily, own_d),
        _above(daily, own_w / 7),
        _above(daily, c_daily),
        _above(daily, c_weekly),
    ]
