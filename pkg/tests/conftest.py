import numpy as np
import pytest

from debias_rec.types import Interaction, SplitDataset


def random_dataset(num_users=12, num_items=15, density=0.3, seed=0) -> SplitDataset:
    """Random disjoint train/validation/test over a small grid."""
    rng = np.random.default_rng(seed)
    mask = rng.random((num_users, num_items)) < density
    pairs = np.argwhere(mask)
    part = rng.integers(0, 4, size=len(pairs))  # 0,1 train; 2 validation; 3 test
    rows = lambda sel: [Interaction(int(u), int(i), 1, k) for k, (u, i) in enumerate(pairs[sel])]
    return SplitDataset.build(num_users, num_items, rows(part <= 1), rows(part == 2), rows(part == 3))


@pytest.fixture
def small_ds():
    return random_dataset()


ACCEPTANCE_LINES: list[str] = []


def record_criterion(number: int, ok: bool, detail: str) -> str:
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
