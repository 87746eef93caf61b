import pytest

ACCEPTANCE_TITLES = {
    1: "analytic gradient vs finite differences",
    2: "rejected gradient variants are caught",
    3: "code solver is monotone and column-locally optimal",
    4: "exhaustive 3x4 code oracle",
    5: "loss (gamma=0) equals code-solver objective",
    6: "Hamming identities",
    7: "metric oracles",
    8: "end-to-end synthetic retrieval MAP",
    9: "lambda / gamma trend on noisy data",
    10: "top-50 over 100k codes latency",
    11: "byte-identical pipeline reruns",
}

_results = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_results] = {}


@pytest.fixture
def criterion(request):
    """Record ``(ok, detail)`` for an acceptance criterion; several tests may feed one criterion."""
    store = request.config.stash[_results]

    def record(number, ok, detail):
        store.setdefault(number, []).append((bool(ok), detail))

    return record


def pytest_terminal_summary(terminalreporter, config):
    store = config.stash[_results]
    if not store:
        return
    terminalreporter.section("acceptance criteria")
    for number, title in ACCEPTANCE_TITLES.items():
        parts = store.get(number)
        if parts is None:
            terminalreporter.write_line(f"criterion {number:2d} NOT RUN  {title}")
            continue
        status = "PASS" if all(ok for ok, _ in parts) else "FAIL"
        detail = "; ".join(d for _, d in parts)
        terminalreporter.write_line(f"criterion {number:2d} {status}  {title}: {detail}")
