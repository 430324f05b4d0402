"""Collects one PASS/FAIL line per acceptance criterion for the summary."""

LINES: list[str] = []


def record(tag: str, ok: bool, detail: str) -> bool:
    line = f"[{'PASS' if ok else 'FAIL'}] {tag}: {detail}"
    LINES.append(line)
    print(line, flush=True)
    return ok
