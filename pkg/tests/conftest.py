import numpy as np
import pytest
from PIL import Image

from gully_vqa.backend import ChatClient, MockScript, MockTransport, SendPolicy
from gully_vqa.dataset import ingest
from gully_vqa.pipeline import ModelHandle
from gully_vqa.synthetic import make_fixture


@pytest.fixture
def fixture_root(tmp_path):
    """Synthetic 10 dev / 11 test tree on disk."""
    root = tmp_path / "data"
    manifest = make_fixture(root, dev=10, test=11, size=16)
    return root, manifest


@pytest.fixture
def dataset(fixture_root):
    root, manifest = fixture_root
    return ingest(root, manifest)


def write_location(root, split, location_id, count=6, size=(8, 8), ext="png", seed=0):
    rng = np.random.default_rng(seed)
    folder = root / split / location_id
    folder.mkdir(parents=True, exist_ok=True)
    for k in range(count):
        pixels = rng.integers(0, 256, size=(size[1], size[0], 3), dtype=np.uint8)
        Image.fromarray(pixels).save(folder / f"t{k}.{ext}")
    return folder


def write_manifest(path, rows, header="location_id,split,label"):
    lines = [header] + [",".join(r) for r in rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def mock_handle(script=None, model_id="mock-model", policy=None, **transport_kwargs):
    transport = MockTransport(script or MockScript(), **transport_kwargs)
    client = ChatClient(transport, policy or SendPolicy(retries=1), sleep=lambda s: None)
    return ModelHandle(client, model_id)
