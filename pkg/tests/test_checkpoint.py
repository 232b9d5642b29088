import numpy as np
import pytest
import torch

from sasssl.checkpoint import load_classifier, load_pretrain, save_classifier, save_pretrain
from sasssl.errors import FormatError
from sasssl.probe import ProbeConfig, predict, train_probe
from sasssl.nncore import build_encoder
from sasssl.ssl import pretrain

from test_probe import two_class_set
from test_ssl import SMALL, SMALL_HEAD, SMALL_HYPER, as_dataset, blob_images


def module_bytes(result):
    from sasssl.ssl import _modules

    return [{k: v.numpy().tobytes() for k, v in m.state_dict().items()} for m in _modules(result.state)]


@pytest.mark.parametrize("kind", ["moco", "byol"])
def test_pretrain_checkpoint_round_trip_is_bit_exact(kind, tmp_path):
    data = as_dataset(blob_images(32, 0))
    result = pretrain(kind, data, data, SMALL_HYPER, epochs=1, seed=2, enc_cfg=SMALL, head_cfg=SMALL_HEAD)
    path = tmp_path / "ck.ssbn"
    save_pretrain(path, result, SMALL, SMALL_HEAD, SMALL_HYPER, 2)
    back, enc, head, hyper, seed = load_pretrain(path)
    assert (enc, head, hyper, seed) == (SMALL, SMALL_HEAD, SMALL_HYPER, 2)
    assert module_bytes(back) == module_bytes(result)
    assert back.log == result.log and back.epoch == 1 and back.optim.step == result.optim.step
    for k, v in result.optim.exp_avg_sq.items():
        assert torch.equal(back.optim.exp_avg_sq[k], v)
    if kind == "moco":
        assert torch.equal(back.state.queue, result.state.queue) and back.state.queue_ptr == result.state.queue_ptr
    save_pretrain(tmp_path / "again.ssbn", back, enc, head, hyper, seed)
    assert (tmp_path / "again.ssbn").read_bytes() == path.read_bytes()


def test_resume_matches_uninterrupted_run(tmp_path):
    data = as_dataset(blob_images(32, 0))
    full = pretrain("moco", data, data, SMALL_HYPER, epochs=2, seed=3, enc_cfg=SMALL, head_cfg=SMALL_HEAD)
    # total_steps fixes the cosine schedule, so the first leg runs with the full
    # two-epoch horizon and checkpoints after each epoch.
    first = pretrain("moco", data, data, SMALL_HYPER, epochs=2, seed=3, enc_cfg=SMALL, head_cfg=SMALL_HEAD,
                          on_epoch=lambda r: save_pretrain(tmp_path / f"e{r.epoch}.ssbn", r, SMALL, SMALL_HEAD, SMALL_HYPER, 3))
    back, *_ = load_pretrain(tmp_path / "e1.ssbn")
    resumed = pretrain("moco", data, data, SMALL_HYPER, epochs=1, seed=3, enc_cfg=SMALL, head_cfg=SMALL_HEAD, resume=back)
    assert [row["epoch"] for row in resumed.log] == [1, 2]
    assert resumed.log == first.log == full.log
    assert module_bytes(resumed) == module_bytes(full)


def test_classifier_round_trip(tmp_path):
    result = train_probe(build_encoder(SMALL, 0), two_class_set(16, 0), two_class_set(8, 1, "validation"), ProbeConfig(max_epochs=3))
    path = tmp_path / "probe.ssbn"
    save_classifier(path, result, SMALL, {"label_fraction": 0.05})
    model, meta = load_classifier(path)
    images = two_class_set(8, 2, "test").images
    np.testing.assert_array_equal(predict(model, images), predict(result.model, images))
    assert meta["label_fraction"] == 0.05 and meta["best_epoch"] == result.best_epoch


def test_wrong_checkpoint_kind(tmp_path):
    result = train_probe(build_encoder(SMALL, 0), two_class_set(8, 0), two_class_set(8, 1, "validation"), ProbeConfig(max_epochs=1))
    save_classifier(tmp_path / "p.ssbn", result, SMALL, {})
    with pytest.raises(FormatError):
        load_pretrain(tmp_path / "p.ssbn")
