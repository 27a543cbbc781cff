"""Shared record of acceptance outcomes, printed by the terminal summary hook."""

ACCEPTANCE_LINES: dict[int, str] = {}


def record(n: int, passed: bool, detail: str) -> None:
    line = f"criterion {n:2d}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[n] = line
    print(line)
