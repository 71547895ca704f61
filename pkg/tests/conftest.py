import pytest

from evisteer import harness


@pytest.fixture(scope="session")
def default_config():
    return harness.ExperimentConfig()


@pytest.fixture
def aligned_backbone(default_config):
    """Fresh copy of the seed-0 pre-aligned backbone (pretrained once per session)."""
    return harness.backbone(default_config, 0)


@pytest.fixture(scope="session")
def fewshot_records(default_config):
    """Zero-shot and K in {4, 8, 16} runs over seeds {0, 1, 2} on the default task."""
    return harness.run_fewshot(default_config)


_LINES = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_LINES] = []


@pytest.fixture
def acceptance(pytestconfig):
    """Record one PASS/FAIL line for a criterion, then assert it."""
    lines = pytestconfig.stash[_LINES]

    def record(label: str, passed: bool, detail: str) -> None:
        line = f"[{label}] {'PASS' if passed else 'FAIL'}  {detail}"
        lines.append(line)
        print(line)
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s[1:s.index("]")])):
            terminalreporter.write_line(line)
