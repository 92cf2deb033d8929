import numpy as np
import pytest

from camoseg.mocklab import MockWorld, gen_scene


def random_pair(rng: np.random.Generator, size: int = 32):
    """Soft prediction plus a nonempty, non-full binary mask of mixed texture."""
    kind = rng.integers(3)
    if kind == 0:
        gt = rng.random((size, size)) < rng.uniform(0.1, 0.6)
    else:
        yy, xx = np.mgrid[0:size, 0:size]
        cy, cx = rng.uniform(4, size - 4, 2)
        r = rng.uniform(3, size / 3)
        gt = (yy - cy) ** 2 + (xx - cx) ** 2 <= r * r
        if kind == 2:
            gt ^= rng.random((size, size)) < 0.05
    gt[0, 0], gt[-1, -1] = True, False
    pred = rng.random((size, size))
    if rng.random() < 0.5:
        pred = np.clip(gt * rng.uniform(0.5, 1.0) + rng.normal(0, 0.2, gt.shape), 0, 1)
    return pred, gt


@pytest.fixture(scope="session")
def scene():
    return gen_scene(7, size_frac=0.1)


@pytest.fixture(scope="session")
def world(scene):
    return MockWorld([scene])


_ACCEPTANCE: list[str] = []


@pytest.fixture
def acceptance():
    """Record one verdict line per acceptance criterion; shown in the terminal summary."""

    def record(cid: str, title: str, ok: bool, detail: str, elapsed: float, budget: float | None):
        timing = f"{elapsed:.2f}s" + (f" / budget {budget:g}s" if budget else "")
        verdict = "PASS" if ok else "FAIL"
        _ACCEPTANCE.append(f"[{verdict}] {cid} {title}: {detail} ({timing})")
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE, key=lambda s: int(s.split()[1][1:])):
            terminalreporter.write_line(line)
