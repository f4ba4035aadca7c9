LINES = []


def record(n: int, passed: bool, detail: str):
    line = f"criterion {n}: {'PASS' if passed else 'FAIL'} {detail}"
    LINES.append(line)
    print(line)
    return passed
