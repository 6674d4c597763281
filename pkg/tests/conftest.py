import pytest


@pytest.fixture
def criterion(capsys):
    """Print one PASS/FAIL line per acceptance criterion, then assert."""

    def check(num: int, ok: bool, detail: str):
        status = "PASS" if ok else "FAIL"
        with capsys.disabled():
            print(f"\nacceptance {num:2d}: {status} - {detail}")
        assert ok, f"acceptance {num} failed: {detail}"

    return check
