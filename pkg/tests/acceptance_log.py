"""Collects one verdict per acceptance criterion for the end-of-run summary."""

RESULTS = {}


def record(criterion: int, passed: bool, detail: str) -> None:
    RESULTS[criterion] = (bool(passed), detail)


def lines():
    out = []
    for n in sorted(RESULTS):
        ok, detail = RESULTS[n]
        out.append(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
    return out
