import pytest

from deterra.errors import ArtifactError, ConfigError
from deterra.storage import FSStorage, get_storage, scratch_path
from deterra.util import load_json, store_json


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for var in ("STORAGE_TYPE", "DETERRA_DATA_DIR", "AWS_BUCKET", "S3_BUCKET"):
        monkeypatch.delenv(var, raising=False)


def test_fs_storage_save_list_require(storage):
    store_json(storage, "policies/a.json", {"x": 1})
    store_json(storage, "policies/b.json", {"x": 2})
    store_json(storage, "reports/eval.json", {"x": 3})
    assert storage.list("policies/") == ["policies/a.json", "policies/b.json"]
    assert load_json(storage.require("policies/b.json")) == {"x": 2}
    with pytest.raises(ArtifactError):
        storage.require("policies/c.json")


def test_save_moves_scratch_file(storage):
    tmp = scratch_path("datasets/transitions.bin")
    with open(tmp, "wb") as f:
        f.write(b"abc")
    storage.save(tmp, "datasets/transitions.bin")
    with open(storage.get_path("datasets/transitions.bin"), "rb") as f:
        assert f.read() == b"abc"


def test_get_storage_prefers_out_dir(tmp_path):
    out = tmp_path / "flag"
    st = get_storage({"type": "fs", "base_dir": str(tmp_path / "cfg")}, str(out))
    assert isinstance(st, FSStorage)
    assert st.base_dir == str(out)
    assert out.is_dir()


def test_get_storage_env_dir(tmp_path, monkeypatch):
    monkeypatch.setenv("DETERRA_DATA_DIR", str(tmp_path / "env"))
    assert get_storage({"base_dir": str(tmp_path / "cfg")}).base_dir == str(tmp_path / "env")


def test_get_storage_s3_needs_bucket():
    with pytest.raises(ConfigError):
        get_storage({"type": "s3"})


def test_get_storage_unknown_type(monkeypatch):
    monkeypatch.setenv("STORAGE_TYPE", "ftp")
    with pytest.raises(ConfigError):
        get_storage({})
