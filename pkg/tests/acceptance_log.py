"""Collects one status line per acceptance criterion for the terminal summary."""

LINES = {}


def record(number: int, ok: bool, title: str, detail: str = "") -> None:
    line = f"criterion {number} {'PASS' if ok else 'FAIL'}: {title}"
    if detail:
        line += f" ({detail})"
    LINES[number] = line
    print(line)
