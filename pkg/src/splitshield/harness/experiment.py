"""End-to-end runs: optional alignment, filling, training, attacks, summaries."""
from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass

import numpy as np

from ..metrics import ace
from ..numerics import child_seed, make_rng
from ..psu import UidMap, get_group, run_pair
from ..splitnn import Dataset, SplitModel, TrainReport, evaluate, train
from ..synthdata import FeatureStrategy, LabelStrategy, UnionFiller, parse_strategy, union_dataset
from .config import ExperimentConfig, from_dict, set_path
from .data import gen_dataset, read_csv
from .transport import WireLink

UTILITY_COLUMNS = ["test_auc", "test_loss", "ace"]
REPORT_COLUMNS = ["param", "leak_auc", "test_auc", "test_loss", "ace"]


@dataclass
class RunResult:
    report: TrainReport
    summary: dict
    steps_path: str | None = None


def load_data(cfg: ExperimentConfig) -> tuple[Dataset, Dataset]:
    if cfg.train_csv:
        train_set = read_csv(cfg.train_csv)
        if cfg.test_csv:
            return train_set, read_csv(cfg.test_csv)
        n = len(train_set)
        cut = n - max(1, int(round(n * cfg.dataset.test_fraction)))
        return (Dataset(train_set.X[:cut], train_set.y[:cut], train_set.ids[:cut]),
                Dataset(train_set.X[cut:], train_set.y[cut:], train_set.ids[cut:]))
    return gen_dataset(cfg.dataset)


def split_ownership(n: int, overlap: float, rng: np.random.Generator):
    """Masks ``(has_label, has_features)``; every row is held by at least one party."""
    u = rng.random(n)
    both = u < overlap
    label_only = (~both) & (rng.random(n) < 0.5)
    return both | label_only, both | ~label_only


def align(cfg: ExperimentConfig, data: Dataset) -> Dataset:
    """Run set union on the two parties' ids and return rows in uid order."""
    rng = make_rng(child_seed(cfg.seed, "ownership"))
    has_l, has_f = split_ownership(len(data), cfg.psu.overlap, rng)
    ids = [str(i) for i in data.ids]
    ids_a = [i for i, m in zip(ids, has_l) if m]
    ids_p = [i for i, m in zip(ids, has_f) if m]
    if cfg.psu.run_protocol:
        run = run_pair(ids_a, ids_p, get_group(cfg.psu.group),
                       make_rng(child_seed(cfg.seed, "psu", "active")), make_rng(child_seed(cfg.seed, "psu", "passive")))
        map_a, map_p = run.active, run.passive
    else:
        # plaintext stand-in: uid = id, for quick sweeps that do not study alignment
        uids = sorted({i.encode() for i in ids_a} | {i.encode() for i in ids_p})
        map_a = UidMap(uids, {i: i.encode() for i in ids_a})
        map_p = UidMap(uids, {i: i.encode() for i in ids_p})
    out, _ = union_dataset(map_a, map_p, ids, data.X, data.y)
    return out


def make_filler(cfg: ExperimentConfig, data: Dataset) -> UnionFiller | None:
    sc = cfg.synth
    lab = feat = None
    if sc is not None:
        for name in (sc.label, sc.feature):
            if name is None:
                continue
            st = parse_strategy(name)
            if isinstance(st, LabelStrategy):
                lab = LabelStrategy(st.kind, sc.sample_times, sc.k)
            else:
                feat = FeatureStrategy(st.kind, sc.s)
    missing_l = data.has_label is not None and not np.all(data.has_label)
    missing_f = data.has_features is not None and not np.all(data.has_features)
    if missing_l and lab is None:
        raise ValueError("some union rows lack labels; set [synth] label")
    if missing_f and feat is None:
        raise ValueError("some union rows lack features; set [synth] feature")
    if lab is None and feat is None:
        return None
    cal = UnionFiller.calibration_for(data, sc.calibration if sc else "none", lab, feat)
    return UnionFiller(lab, feat, cal, make_rng(child_seed(cfg.seed, "synth")))


def summarize(report: TrainReport, test_prob, test: Dataset) -> dict:
    last = report.last_eval()
    row = {"test_auc": last.get("test_auc"), "test_loss": last.get("test_loss"), "ace": ace(test_prob, test.y)}
    for name in report.attack_names:
        row[f"leak_auc_{name}"] = report.late_mean(f"leak_auc_{name}")
    return row


def run_experiment(cfg: ExperimentConfig, out_dir: str | None = None, steps_name: str = "steps.csv") -> RunResult:
    """One training run. Writes the step CSV into ``out_dir`` when given."""
    train_set, test_set = load_data(cfg)
    if cfg.psu is not None:
        train_set = align(cfg, train_set)
    filler = make_filler(cfg, train_set)
    model = SplitModel.init(train_set.X.shape[1], d=cfg.model.d, hidden=tuple(cfg.model.hidden), seed=child_seed(cfg.seed, "model"))
    link = WireLink.in_process() if cfg.wire else None
    report = train(model, train_set, cfg.train, cfg.attacks, test_set, synth=filler, link=link)
    _, _, prob = evaluate(model, test_set, filler.report_map() if filler else None)
    summary = summarize(report, prob, test_set)
    path = None
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        path = os.path.join(out_dir, steps_name)
        report.to_csv(path)
    return RunResult(report, summary, path)


def sweep_points(cfg: ExperimentConfig):
    """``(value, seed, config)`` for every sweep point, in file order."""
    sw = cfg.sweep
    if sw is None or not sw.values:
        raise ValueError("config has no [sweep] values")
    base = {k: v for k, v in cfg.raw.items() if k != "sweep"}
    for value in sw.values:
        for seed in sw.seeds:
            raw = set_path(set_path(base, sw.param, value), "seed", int(seed))
            yield value, int(seed), from_dict(raw)


def _slug(value) -> str:
    return str(value).replace(".", "p").replace("-", "m").replace("/", "_")


def run_sweep(cfg: ExperimentConfig, out_dir: str | None = None) -> list:
    """One summary row per (value, seed); each point is an independent run."""
    rows = []
    for value, seed, point in sweep_points(cfg):
        name = f"steps_{_slug(value)}_seed{seed}.csv"
        res = run_experiment(point, out_dir, name)
        rows.append({"param": value, "seed": seed, **res.summary})
    if out_dir is not None:
        write_rows(rows, os.path.join(out_dir, "summary.csv"))
    return rows


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def write_rows(rows: list, path=None) -> str:
    cols = []
    for r in rows:
        cols += [c for c in r if c not in cols]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for r in rows:
        w.writerow([_cell(r.get(c)) for c in cols])
    text = buf.getvalue()
    if path is not None:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    return text


def read_rows(path) -> list:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def _num(x):
    try:
        return float(x)
    except (TypeError, ValueError):
        return float("nan")


def report_table(rows: list, attack: str | None = None) -> list:
    """Median over seeds per parameter value, sorted by parameter."""
    if not rows:
        return []
    leak_cols = [c for c in rows[0] if c.startswith("leak_auc_")]
    if attack is not None:
        leak_col = f"leak_auc_{attack}"
        if leak_col not in rows[0]:
            raise ValueError(f"no column {leak_col} in the summaries")
    else:
        leak_col = leak_cols[0] if leak_cols else None
    groups: dict = {}
    for r in rows:
        groups.setdefault(r.get("param", ""), []).append(r)

    def key(p):
        v = _num(p)
        return (0, v, "") if np.isfinite(v) else (1, 0.0, str(p))

    out = []
    for p in sorted(groups, key=key):
        g = groups[p]
        med = lambda c: float(np.median([_num(r.get(c)) for r in g])) if c else None  # noqa: E731
        out.append({"param": p, "leak_auc": med(leak_col), "test_auc": med("test_auc"),
                    "test_loss": med("test_loss"), "ace": med("ace")})
    return out
