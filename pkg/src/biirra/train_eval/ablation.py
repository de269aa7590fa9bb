"""Ablation grids: each variant is a config delta trained and evaluated with the base seed."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

from ..encoders import Model
from .loop import model_config_for, train
from .retrieval import evaluate

METRIC_COLUMNS = ("R@1", "R@5", "R@10", "mAP")
NOT_IMPLEMENTED = "not implemented"


@dataclass
class Variant:
    label: str
    changes: dict
    flags: dict = field(default_factory=dict)
    implemented: bool = True


def _components():
    # flags: bi-lingual MLM, cross-lingual D-MIM, Md-GA, SDM, ID
    def row(no, mlm, dmim, mdga, sdm=False, ident=False, implemented=True):
        flags = {"MLM": mlm, "D-MIM": dmim, "Md-GA": mdga, "SDM": sdm, "ID": ident}
        return Variant(str(no), {"enable_mlm": mlm, "enable_dmim": dmim}, flags, implemented)

    return [
        row(1, False, False, True),
        row(2, False, True, True),
        row(3, True, False, True),
        row(4, True, True, False, sdm=True, implemented=False),
        row(5, True, True, True, ident=True, implemented=False),
        row(6, True, True, True),
    ]


def _masking():
    return [Variant(name.capitalize(), {"image_mask_strategy": name})
            for name in ("random", "gridwise", "blockwise")]


def _itm_inputs():
    # (source image, source text, target image, target text) masked?
    grid = [
        (False, False, False, False),
        (True, False, False, False),
        (False, False, True, False),
        (True, False, True, False),
        (False, True, False, False),
        (False, False, False, True),
        (False, True, False, True),
    ]
    out = []
    for no, (si, st, ti, tt) in enumerate(grid, 1):
        flags = {"I (src)": si, "T^s": st, "I (tgt)": ti, "T^t": tt}
        out.append(Variant(str(no), {"itm_mask_source_image": si, "itm_mask_source_text": st,
                                     "enable_asym_mask": ti, "itm_mask_target_text": tt}, flags))
    return out


HYPER_GRID = {
    "p_txt": (0.2, 0.4, 0.6),
    "p_img": (0.3, 0.5, 0.7),
    "lambda1": (1.0, 4.0, 8.0),
    "lambda2": (1.0, 4.0, 8.0),
}


def _hyper(grid=None):
    grid = HYPER_GRID if grid is None else grid
    return [Variant(f"{k}={v:g}", {k: v}) for k, values in grid.items() for v in values]


AXES = {"components": _components, "masking": _masking, "itm_inputs": _itm_inputs, "hyper": _hyper}


def variants_for(axis, grid=None):
    if axis not in AXES:
        raise ValueError(f"unknown ablation axis {axis!r}; expected one of {sorted(AXES)}")
    return _hyper(grid) if axis == "hyper" else AXES[axis]()


@dataclass
class AblationRow:
    variant: Variant
    report: object = None


@dataclass
class AblationTable:
    axis: str
    rows: list
    languages: tuple = ("source", "target")

    def header(self):
        flags = list(self.rows[0].variant.flags) if self.rows else []
        metrics = [f"{lang}:{m}" for lang in self.languages for m in METRIC_COLUMNS]
        return ["No." if flags else "Variant", *flags, *metrics]

    def records(self):
        for row in self.rows:
            v = row.variant
            cells = [v.label] + ["x" if on else "" for on in v.flags.values()]
            for lang in self.languages:
                if row.report is None:
                    cells += [NOT_IMPLEMENTED if v.implemented is False else ""] * len(METRIC_COLUMNS)
                    continue
                s = row.report.languages[lang]
                cells += [f"{100 * s.r1:.2f}", f"{100 * s.r5:.2f}", f"{100 * s.r10:.2f}", f"{100 * s.map:.2f}"]
            yield cells

    def to_markdown(self):
        head = self.header()
        lines = ["| " + " | ".join(head) + " |", "|" + "---|" * len(head)]
        lines += ["| " + " | ".join(cells) + " |" for cells in self.records()]
        return "\n".join(lines) + "\n"

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(self.header())
        w.writerows(self.records())
        return buf.getvalue()


def run_ablation(base_config, axis, train_triplets, test_triplets, vocab_size,
                 only=None, grid=None, on_variant=None):
    """Train and evaluate every variant of ``axis`` (or those labelled in ``only``)."""
    rows = []
    for v in variants_for(axis, grid):
        if only is not None and v.label not in only:
            continue
        if not v.implemented:
            rows.append(AblationRow(v, None))
            continue
        cfg = base_config.replace(**v.changes)
        model = Model(model_config_for(cfg, train_triplets, vocab_size))
        train(model, train_triplets, cfg)
        report = evaluate(model, test_triplets, cfg.rerank_k, cfg.rerank_blend)
        rows.append(AblationRow(v, report))
        if on_variant is not None:
            on_variant(v, report)
    return AblationTable(axis, rows)
