import numpy as np
import pytest

from splatfuse.checkpoint import from_bytes, load_checkpoint, save_checkpoint, to_bytes
from splatfuse.config import TrainConfig
from splatfuse.errors import CheckpointError
from splatfuse.synthetic import moving_world
from splatfuse.trainer import Trainer, render_checkpoint


@pytest.fixture(scope="module")
def trained():
    w = moving_world(views=3, size=24)
    tr = Trainer(w.scene(), TrainConfig(hash_levels=2, hash_table_size=2**10,
                                        decoder_hidden=[8, 8]))
    tr.train_joint_phase(5)
    return w, tr


def test_bytes_roundtrip(trained):
    _, tr = trained
    ck = tr.checkpoint()
    data = to_bytes(ck)
    assert data.startswith(b"SPFCKPT1")
    assert to_bytes(from_bytes(data)) == data


def test_file_roundtrip_renders_identically(trained, tmp_path):
    w, tr = trained
    ck = tr.checkpoint()
    save_checkpoint(tmp_path / "c.bin", ck)
    back = load_checkpoint(tmp_path / "c.bin")
    assert back == ck and back.iteration == 5
    cam = w.cameras[1]
    a = render_checkpoint(ck, cam, 0.4)
    b = render_checkpoint(back, cam, 0.4)
    assert np.array_equal(a.color, b.color) and np.array_equal(a.mask_value, b.mask_value)


def test_resume_matches_state(trained):
    w, tr = trained
    ck = tr.checkpoint()
    tr2 = Trainer.from_checkpoint(ck, w.scene(), tr.config)
    assert to_bytes(tr2.checkpoint()) == to_bytes(ck)


def test_corrupt_input(tmp_path, trained):
    with pytest.raises(CheckpointError):
        from_bytes(b"NOTACKPT" + bytes(20))
    data = to_bytes(trained[1].checkpoint())
    with pytest.raises(CheckpointError):
        from_bytes(data[:len(data) // 2])
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.bin")
