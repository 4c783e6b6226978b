import numpy as np
import pytest
import torch

from radiomap.checkpoint import (
    MAGIC,
    config_hash,
    load_checkpoint,
    load_module_arrays,
    module_arrays,
    params_fingerprint,
    save_checkpoint,
)
from radiomap.errors import SchemaVersionMismatch


def test_round_trip_config_and_arrays(tmp_path):
    path = tmp_path / "ck.rmck"
    rng = np.random.default_rng(0)
    arrays = {
        "a.weight": rng.standard_normal((3, 4)).astype(np.float32),
        "b.bias": rng.standard_normal(7),
        "count": np.array(3, dtype=np.int64),
    }
    config = {"kind": "test", "nested": {"x": 1, "y": [1, 2, 3]}}
    save_checkpoint(path, config, arrays)
    loaded_config, loaded = load_checkpoint(path)
    assert loaded_config == config
    for name, arr in arrays.items():
        assert loaded[name].dtype == arr.dtype
        assert (loaded[name] == arr).all()


def test_bad_magic_rejected(tmp_path):
    path = tmp_path / "ck.rmck"
    path.write_bytes(b"NOTMAGIC" + b"\x00" * 16)
    with pytest.raises(SchemaVersionMismatch):
        load_checkpoint(path)


def test_wrong_version_rejected(tmp_path):
    path = tmp_path / "ck.rmck"
    save_checkpoint(path, {}, {"x": np.zeros(2)})
    raw = bytearray(path.read_bytes())
    # bump the version integer inside the JSON header
    idx = raw.find(b'"format_version": 1')
    raw[idx : idx + len(b'"format_version": 1')] = b'"format_version": 9'
    path.write_bytes(bytes(raw))
    with pytest.raises(SchemaVersionMismatch):
        load_checkpoint(path)


def test_magic_prefix_stable(tmp_path):
    path = tmp_path / "ck.rmck"
    save_checkpoint(path, {}, {})
    assert path.read_bytes()[:8] == MAGIC


def test_module_arrays_round_trip(tmp_path):
    torch.manual_seed(0)
    a = torch.nn.Sequential(torch.nn.Linear(4, 8), torch.nn.SiLU(), torch.nn.Linear(8, 2))
    torch.manual_seed(1)
    b = torch.nn.Sequential(torch.nn.Linear(4, 8), torch.nn.SiLU(), torch.nn.Linear(8, 2))
    assert params_fingerprint(a) != params_fingerprint(b)
    path = tmp_path / "m.rmck"
    save_checkpoint(path, {}, module_arrays(a, "model."))
    _, arrays = load_checkpoint(path)
    load_module_arrays(b, arrays, "model.")
    assert params_fingerprint(a) == params_fingerprint(b)


def test_missing_array_rejected(tmp_path):
    torch.manual_seed(0)
    module = torch.nn.Linear(2, 2)
    path = tmp_path / "m.rmck"
    save_checkpoint(path, {}, {"model.weight": module.weight.detach().numpy()})
    _, arrays = load_checkpoint(path)
    with pytest.raises(SchemaVersionMismatch, match="bias"):
        load_module_arrays(module, arrays, "model.")


def test_config_hash_order_insensitive():
    assert config_hash({"a": 1, "b": 2}) == config_hash({"b": 2, "a": 1})
    assert config_hash({"a": 1}) != config_hash({"a": 2})
