import json
import logging
import math
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd
from jinja2 import Environment, FileSystemLoader, StrictUndefined
from pydantic import BaseModel

logger = logging.getLogger(__name__)

TEMPLATE_DIR = Path(__file__).resolve().parent.parent / "templates"
PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"]

_env = Environment(loader=FileSystemLoader(str(TEMPLATE_DIR)), undefined=StrictUndefined, autoescape=True)


def export_to_csv(data: Union[pd.DataFrame, List[dict]], path: Path) -> Path:
    df = data if isinstance(data, pd.DataFrame) else pd.DataFrame(data)
    path = Path(path)
    # fixed float format keeps replayed runs byte-identical
    df.to_csv(path, index=False, float_format="%.17g", encoding="utf-8", lineterminator="\n")
    logger.debug("wrote %s (%d rows)", path, len(df))
    return path


def export_to_json(record: Union[BaseModel, dict, list], path: Path) -> Path:
    path = Path(path)
    if isinstance(record, BaseModel):
        text = record.model_dump_json(indent=2)
    else:
        text = json.dumps(record, indent=2, default=_json_default)
    path.write_text(text + "\n", encoding="utf-8")
    return path


def _json_default(value):
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    raise TypeError(f"cannot serialize {type(value).__name__}")


# ───── SVG ─────


def _ticks(lo: float, hi: float, count: int = 5) -> List[float]:
    if hi <= lo:
        return [lo]
    return list(np.linspace(lo, hi, count))


def export_line_chart(
    series: Dict[str, Sequence[Sequence[float]]],
    path: Path,
    title: str,
    x_label: str,
    y_label: str,
    log_y: bool = True,
    reference: Optional[float] = None,
    markers: Sequence[str] = (),
    width: int = 720,
    height: int = 440,
) -> Path:
    """
    Line chart of named (x, y) series. With log_y the vertical axis is log10;
    nonpositive points are dropped. Series named in ``markers`` are drawn as dots,
    and ``reference`` adds a dashed horizontal line.
    """
    margin = {"left": 80, "right": 20, "top": 40, "bottom": 50}
    plot_w = width - margin["left"] - margin["right"]
    plot_h = height - margin["top"] - margin["bottom"]

    cleaned = {}
    for name, (xs, ys) in series.items():
        xs = np.asarray(xs, dtype=float)
        ys = np.asarray(ys, dtype=float)
        ok = np.isfinite(xs) & np.isfinite(ys)
        if log_y:
            ok &= ys > 0
            ys = np.where(ok, np.log10(np.where(ok, ys, 1.0)), 0.0)
        cleaned[name] = (xs[ok], ys[ok])
    ref = None
    if reference is not None:
        ref = math.log10(reference) if log_y else reference

    all_x = np.concatenate([xs for xs, _ in cleaned.values()] or [np.zeros(1)])
    all_y = np.concatenate([ys for _, ys in cleaned.values()] + ([np.array([ref])] if ref is not None else []))
    if all_x.size == 0 or all_y.size == 0:
        all_x, all_y = np.zeros(1), np.zeros(1)
    x_lo, x_hi = float(all_x.min()), float(all_x.max())
    y_lo, y_hi = float(all_y.min()), float(all_y.max())
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0

    def sx(x):
        return margin["left"] + (x - x_lo) / (x_hi - x_lo) * plot_w

    def sy(y):
        return margin["top"] + (1.0 - (y - y_lo) / (y_hi - y_lo)) * plot_h

    lines = []
    for i, (name, (xs, ys)) in enumerate(cleaned.items()):
        lines.append(
            {
                "name": name,
                "color": PALETTE[i % len(PALETTE)],
                "dots": name in markers,
                "points": [(round(sx(x), 2), round(sy(y), 2)) for x, y in zip(xs, ys)],
            }
        )
    x_ticks = [(round(sx(v), 2), f"{v:.4g}") for v in _ticks(x_lo, x_hi)]
    y_ticks = [(round(sy(v), 2), f"1e{v:.1f}" if log_y else f"{v:.4g}") for v in _ticks(y_lo, y_hi)]

    svg = _env.get_template("line_chart.svg.j2").render(
        width=width,
        height=height,
        margin=margin,
        plot_w=plot_w,
        plot_h=plot_h,
        title=title,
        x_label=x_label,
        y_label=y_label + (" (log10)" if log_y else ""),
        lines=lines,
        x_ticks=x_ticks,
        y_ticks=y_ticks,
        reference=None if ref is None else round(sy(ref), 2),
    )
    path = Path(path)
    path.write_text(svg, encoding="utf-8")
    return path
