import pytest

from raec.experiments import DeskConfig

# small enough for an end-to-end run in a few seconds
TINY = DeskConfig(
    clip_s=1.0,
    train_size=40,
    dev_size=20,
    test_size=20,
    n_positions=5,
    grid_events=2,
    grid_backgrounds=2,
    units=8,
    n_epochs=2,
    n_trials=2,
    batch_size=10,
)


@pytest.fixture(scope="session")
def tiny_cfg():
    return TINY


@pytest.fixture(scope="session")
def tiny_config_file(tmp_path_factory, tiny_cfg):
    from raec.trainer import write_flat_config

    path = tmp_path_factory.mktemp("cfg") / "tiny.txt"
    write_flat_config(path, tiny_cfg.to_flat())
    return path


# one line per acceptance criterion, repeated at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
