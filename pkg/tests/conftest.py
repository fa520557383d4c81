import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from molex import forge  # noqa: E402


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """Echo one line per acceptance criterion after the run (capture-proof)."""
    try:
        import test_acceptance
    except ImportError:
        return
    if test_acceptance.VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in test_acceptance.VERDICTS:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """Small train/val/test tree shared by the trainer tests."""
    root = tmp_path_factory.mktemp("tiny_corpus")
    spec = forge.SyntheticSpec(image_size=16, channels=3)
    paths = forge.build_corpus(
        str(root), spec,
        [forge.parse_generator("grid4"), forge.parse_generator("lowfreq2")],
        [forge.parse_generator("checker2"), forge.parse_generator("ring4")],
        train_size=160, val_size=48, test_size=96, seed=5)
    return {split: forge.load_split(path) for split, path in paths.items()}, paths
