import numpy as np
import pytest

from tryon_lab.config import ExperimentConfig
from tryon_lab.synthetic import SyntheticSpec, generate_synthetic


@pytest.fixture(scope="session")
def small_root(tmp_path_factory):
    """4 train videos x 6 frames and 2 test videos x 4 frames at 64x48."""
    root = tmp_path_factory.mktemp("syn_small")
    generate_synthetic(root, SyntheticSpec(4, 6, (64, 48), seed=3, split="train"))
    generate_synthetic(root, SyntheticSpec(2, 4, (64, 48), seed=3, split="test"))
    return root


@pytest.fixture(scope="session")
def small_manifest(small_root):
    from tryon_lab.dataset import scan_manifest

    return scan_manifest(small_root, "train", kinds=("garment_mask", "pose_coco", "pose_dense", "flow"))


@pytest.fixture
def tiny_cfg(small_root, tmp_path):
    """Fast training config: narrow two-level network, float32."""
    return ExperimentConfig(
        dataset=str(small_root), out_dir=str(tmp_path / "run"), epochs=2, accumulated_batch=8,
        micro_batch=4, base_width=8, depth=2, mixed_precision=False, attention=True,
    )


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def verdict(request):
    """``verdict(n, ok, detail)`` records one acceptance line, printed in the terminal summary."""
    lines = request.config.stash.setdefault(_STASH_KEY, [])

    def record(n, ok, detail=""):
        lines.append((n, "PASS" if ok else "FAIL", detail))
        return ok

    return record


_STASH_KEY = pytest.StashKey[list]()


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_STASH_KEY, [])
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for n, status, detail in sorted(lines):
        terminalreporter.write_line(f"criterion {n:2d}: {status}  {detail}")
