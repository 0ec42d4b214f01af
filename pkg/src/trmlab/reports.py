"""Report writers and the published-reference delta table.

Every experiment writes CSV + JSON + markdown with the full resolved
config and seeds embedded. All writers produce byte-stable output: keys
sorted, floats formatted at fixed precision, no timestamps. Timings belong
in training logs, never in result reports.
"""

from __future__ import annotations

import json
from importlib import resources
from pathlib import Path

_REFERENCE = None


def load_reference() -> dict:
    """Bundled published reference values (Tables of the original study)."""
    global _REFERENCE
    if _REFERENCE is None:
        text = resources.files("trmlab").joinpath("data/paper_reference.json").read_text()
        _REFERENCE = json.loads(text)
    return _REFERENCE


def write_json(path, obj) -> None:
    Path(path).write_text(json.dumps(obj, sort_keys=True, indent=2) + "\n")


def write_csv(path, header, rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        lines.append(",".join(str(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def markdown_table(header, rows) -> str:
    out = ["| " + " | ".join(header) + " |"]
    out.append("|" + "|".join(" --- " for _ in header) + "|")
    for row in rows:
        out.append("| " + " | ".join(str(v) for v in row) + " |")
    return "\n".join(out) + "\n"


def fmt_pct(value: float) -> str:
    return f"{value:.2f}%"


def delta_lines(title: str, pairs) -> list:
    """Human-readable ours-vs-reference deltas.

    ``pairs`` is (label, ours_percent, reference_percent) triples; reference
    values are printed for comparison only, never asserted.
    """
    lines = [f"reference deltas ({title}; published values are for the original checkpoint):"]
    for label, ours, ref in pairs:
        lines.append(
            f"  {label}: ours {ours:.2f}% vs reference {ref:.2f}% (delta {ours - ref:+.2f} pts)"
        )
    return lines
