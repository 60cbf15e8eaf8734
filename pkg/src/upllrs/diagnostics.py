"""Pilot diagnostics: loss-decile composition, purity trajectory, CSV export."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import AuditUnavailableError, DataFormatError, ShapeError
from .separation import rank_by_loss


@dataclass
class DecileHistogram:
    # section boundaries in ranked order: section k covers ranks [edges[k], edges[k+1])
    section_edges: list[int]
    reliable: list[int]
    unreliable: list[int]

    @property
    def n(self) -> int:
        return self.section_edges[-1]


@dataclass
class PurityCurve:
    steps: list[int]
    purity: list[float]
    reliable_size: list[int]
    val_acc: list[float | None]


def loss_decile_histogram(per_sample_losses, reliability_flags, sections: int = 10) -> DecileHistogram:
    """Rank by descending loss and count reliable/unreliable in equal-count sections.

    When n is not a multiple of ``sections`` the earliest sections get one extra.
    """
    losses = np.asarray(per_sample_losses, dtype=np.float64)
    flags = np.asarray(reliability_flags, dtype=bool)
    if losses.shape != flags.shape or losses.ndim != 1:
        raise ShapeError(f"losses {losses.shape} and flags {flags.shape} differ")
    n = len(losses)
    base, extra = divmod(n, sections)
    sizes = [base + (1 if k < extra else 0) for k in range(sections)]
    edges = np.concatenate([[0], np.cumsum(sizes)]).astype(int).tolist()
    ranked_flags = flags[rank_by_loss(losses)]
    rel, unrel = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        r = int(ranked_flags[a:b].sum())
        rel.append(r)
        unrel.append(b - a - r)
    return DecileHistogram(edges, rel, unrel)


def purity_curve(history) -> PurityCurve:
    if any(h.get("audited_purity") is None for h in history):
        raise AuditUnavailableError("separation history was not audited")
    rows = sorted(history, key=lambda h: h["step"])
    return PurityCurve(
        [int(h["step"]) for h in rows],
        [float(h["audited_purity"]) for h in rows],
        [int(h["reliable_size"]) for h in rows],
        [h.get("val_accuracy") for h in rows],
    )


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def decile_csv(hist: DecileHistogram | None) -> str:
    rows = [] if hist is None else [
        [k + 1, r, u] for k, (r, u) in enumerate(zip(hist.reliable, hist.unreliable))]
    return _csv_text(["section", "reliable", "unreliable"], rows)


def parse_decile_csv(text: str) -> DecileHistogram:
    rows = list(csv.DictReader(io.StringIO(text)))
    try:
        rel = [int(r["reliable"]) for r in rows]
        unrel = [int(r["unreliable"]) for r in rows]
    except (KeyError, ValueError) as exc:
        raise DataFormatError(f"bad decile table: {exc}") from exc
    edges = np.concatenate([[0], np.cumsum(np.add(rel, unrel))]).astype(int).tolist()
    return DecileHistogram(edges, rel, unrel)


def purity_csv(curve: PurityCurve | None) -> str:
    rows = [] if curve is None else [
        [s, repr(p), size, "" if a is None else repr(a)]
        for s, p, size, a in zip(curve.steps, curve.purity, curve.reliable_size, curve.val_acc)]
    return _csv_text(["step", "purity", "reliable_size", "val_acc"], rows)


EPOCH_COLUMNS = ["epoch", "lr", "train_loss", "val_acc", "test_acc", "promotions", "reliable_size", "unreliable_size"]


def epochs_csv(metrics) -> str:
    return _csv_text(EPOCH_COLUMNS, [[m.get(c, "") for c in EPOCH_COLUMNS] for m in metrics or []])


def summary_text(summary: dict | None, audit: dict | None = None, separation: dict | None = None) -> str:
    lines = ["UPLL run summary", "================"]
    if audit:
        lines.append(f"training set: n={audit['n']}, unreliable rate={audit['empirical_unreliable_rate']:.4f}, "
                     f"mean candidate size={audit['mean_candidate_size']:.3f}")
    if separation:
        lines.append(f"separation: {separation['steps']} steps, stop={separation['stop_reason']}, "
                     f"reliable={separation['reliable_size']}, unreliable={separation['unreliable_size']}")
        if separation.get("final_purity") is not None:
            lines.append(f"reliable-subset purity: {separation['initial_purity']:.4f} -> {separation['final_purity']:.4f}")
    if summary:
        lines.append(f"training ({summary.get('mode', '?')}): best epoch {summary['best_epoch']}, "
                     f"val acc {summary['best_val_acc']:.4f}, test acc at best val {summary['test_acc_at_best_val']:.4f}")
    if len(lines) == 2:
        lines.append("no artifacts")
    return "\n".join(lines) + "\n"


def export_report(out_dir, decile: DecileHistogram | None = None, curve: PurityCurve | None = None,
                  metrics=None, summary: dict | None = None, audit: dict | None = None,
                  separation: dict | None = None) -> list[Path]:
    """Write decile.csv, purity.csv, epochs.csv, summary.csv and summary.txt under ``out_dir``."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        files = {
            "decile.csv": decile_csv(decile),
            "purity.csv": purity_csv(curve),
            "epochs.csv": epochs_csv(metrics),
            "summary.csv": _summary_csv(summary),
            "summary.txt": summary_text(summary, audit, separation),
        }
        paths = []
        for name, text in files.items():
            p = out / name
            p.write_text(text, encoding="utf-8")
            paths.append(p)
    except OSError as exc:
        raise OSError(f"cannot write report to {out}: {exc}") from exc
    return paths


_SUMMARY_COLUMNS = ["mode", "best_epoch", "best_val_acc", "test_acc_at_best_val"]


def _summary_csv(summary) -> str:
    rows = [] if not summary else [[summary.get(c, "") for c in _SUMMARY_COLUMNS]]
    return _csv_text(_SUMMARY_COLUMNS, rows)


def load_json(path):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise DataFormatError(f"{path}: {exc}") from exc
