import csv
from dataclasses import replace

import pytest
import torch

from platerec import trainer as tr
from platerec.charset import DEFAULT_CHARSET, Charset
from platerec.datagen import synthetic_set


@pytest.fixture(scope="module")
def tiny():
    return synthetic_set(8, seed=5)


def _fast(plan, n, epochs=1):
    return replace(plan.stage(n), epochs=epochs, batch_size=4)


def test_parse_config_accepts_table_style_keys():
    cfg = tr.parse_config("""
        # training
        Learning Rate = 0.001 and 0.0005
        Batch Size: 64
        Epoch = 3
        Momentum = 0.9
        Optimizer = Adam
    """)
    plan = tr.plan_from_config(cfg)
    assert [s.lr for s in plan.stages] == [0.001, 0.001, 0.0005]
    assert all(s.batch_size == 64 and s.epochs == 3 and s.beta1 == 0.9 for s in plan.stages)


def test_plan_structure():
    plan = tr.default_plan()
    assert plan.stage(1).frozen == ("rectifier",) and plan.stage(1).source == "strips"
    assert set(plan.stage(2).frozen) == set(tr.RECOGNIZER_GROUPS) and plan.stage(2).source == "crops"
    assert plan.stage(3).frozen == () and plan.stage(3).lr == 5e-4
    with pytest.raises(tr.ConfigError):
        plan.stage(4)


@pytest.mark.parametrize("text", ["no separator here", "optimizer = sgd", "lr = fast", "epochs = 1,2"])
def test_config_errors(text):
    with pytest.raises(tr.ConfigError):
        tr.plan_from_config(tr.parse_config(text))


def test_stage1_keeps_rectifier(tiny):
    model = tr.PlateModel()
    before = tr.group_checksum(model, ("rectifier",))
    rec_before = tr.group_checksum(model)
    tr.train_stage(model, _fast(tr.default_plan(), 1), tiny)
    assert tr.group_checksum(model, ("rectifier",)) == before
    assert tr.group_checksum(model) != rec_before


def test_stage2_keeps_recognizer_including_bn_buffers(tiny):
    model = tr.PlateModel()
    torch.nn.init.normal_(model.ptr.regressor.fc[-1].weight, std=0.01)
    before = tr.group_checksum(model)
    ptr_before = tr.group_checksum(model, ("rectifier",))
    tr.train_stage(model, _fast(tr.default_plan(), 2), tiny)
    assert tr.group_checksum(model) == before
    assert tr.group_checksum(model, ("rectifier",)) != ptr_before


def test_baseline_without_ptr_resizes(tiny):
    model = tr.PlateModel(use_ptr=False)
    from platerec import geometry as geo
    x = tiny.crops[:2]
    assert torch.equal(model.rectify(x), geo.resize(x, 94, 24))


def test_divergence_guard(tiny, monkeypatch):
    monkeypatch.setattr(tr, "sequence_loss", lambda *a, **k: torch.tensor(float("nan"), requires_grad=True))
    with pytest.raises(tr.DivergenceGuard):
        tr.train_stage(tr.PlateModel(), _fast(tr.default_plan(), 1), tiny)


def test_unknown_loss():
    with pytest.raises(tr.ConfigError):
        tr.sequence_loss(torch.zeros(1, 73, 18), [[1]], "mse", tr.FocalConfig())


def test_checkpoint_roundtrip_bitwise(tmp_path, tiny):
    torch.manual_seed(3)
    model = tr.PlateModel()
    tr.train_stage(model, _fast(tr.default_plan(), 1), tiny)
    ckpt = tr.Checkpoint.from_model(model, stage="stage1")
    path = tmp_path / "m.ckpt"
    tr.save_checkpoint(path, ckpt)
    loaded = tr.load_checkpoint(path, DEFAULT_CHARSET)
    again = loaded.build_model()
    model.eval()
    with torch.no_grad():
        assert torch.equal(model(tiny.crops), again(tiny.crops))
    assert loaded.stage == "stage1"


def test_checkpoint_rejections(tmp_path):
    path = tmp_path / "m.ckpt"
    tr.save_checkpoint(path, tr.Checkpoint.from_model(tr.PlateModel()))
    other = Charset(DEFAULT_CHARSET.symbols[1:-1] + (DEFAULT_CHARSET.symbols[0], "-"))
    with pytest.raises(tr.CharsetMismatch):
        tr.load_checkpoint(path, other)
    payload = torch.load(path, weights_only=True)
    payload["version"] = 99
    torch.save(payload, tmp_path / "v.ckpt")
    with pytest.raises(tr.VersionMismatch):
        tr.load_checkpoint(tmp_path / "v.ckpt")
    (tmp_path / "junk.ckpt").write_bytes(b"not a checkpoint")
    with pytest.raises(tr.CorruptFile):
        tr.load_checkpoint(tmp_path / "junk.ckpt")
    torch.save({"a": 1}, tmp_path / "dict.ckpt")
    with pytest.raises(tr.CorruptFile):
        tr.load_checkpoint(tmp_path / "dict.ckpt")


def test_train_full_writes_outputs(tmp_path, tiny):
    plan = tr.default_plan(epochs=(1, 1, 1), batch_size=4)
    ckpt, model, metrics = tr.train_full(plan, tiny, out_dir=tmp_path)
    assert [m["stage"] for m in metrics] == ["stage1", "stage2", "stage3"]
    assert {p.name for p in tmp_path.iterdir()} >= {"stage1.ckpt", "stage2.ckpt", "stage3.ckpt", "metrics.csv"}
    with open(tmp_path / "metrics.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert list(rows[0]) == ["epoch", "stage", "loss", "seq_acc"]


def test_lightweight():
    model = tr.PlateModel()
    assert tr.total_parameters(model) < 1_500_000
