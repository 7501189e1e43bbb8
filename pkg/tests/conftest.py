import sys
import pathlib

import pytest

# Put src/ on sys.path so `import gifguard` works without an editable install.
SRC = pathlib.Path(__file__).resolve().parents[1] / "src"
src_str = str(SRC)
if src_str not in sys.path:
    sys.path.insert(0, src_str)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    """Six 4x16x16 synthetic clips (4 train / 1 val / 1 test) shared across the session."""
    from gifguard.data_pipeline import build_dataset

    out = tmp_path_factory.mktemp("dataset")
    return build_dataset(4, 1, 1, out, seed=3, frames=4, height=16, width=16)
