import os
import shutil
import tempfile
from abc import ABC, abstractmethod
from typing import Any, Dict, List

import boto3

from .errors import ArtifactError, ConfigError
from .logs import get_logger

logger = get_logger(__name__)


def get_storage(storage_cfg: Dict[str, Any] | None, out_dir: str | None = None):
    """Initialize the artifact storage backend from config."""
    storage_cfg = storage_cfg or {}
    stype = os.getenv("STORAGE_TYPE", None) or storage_cfg.get("type", "fs")

    if stype == "fs":
        base_dir = out_dir or os.getenv("DETERRA_DATA_DIR", None)
        if base_dir:
            logger.info(f"Using {base_dir} (flag/env) for artifacts")
        else:
            base_dir = storage_cfg.get("base_dir", None)
            if base_dir:
                logger.info(f"Using {base_dir} (config) for artifacts")
            else:
                base_dir = "./runs"
                logger.info(f"Using {base_dir} (default) for artifacts")

        return FSStorage(base_dir=base_dir)

    elif stype == "s3":
        bucket = (
            os.getenv("AWS_BUCKET")
            or os.getenv("S3_BUCKET")
            or storage_cfg.get("bucket")
        )
        if not bucket:
            raise ConfigError(
                "`bucket` is missing. Add to config or via envs AWS_BUCKET or S3_BUCKET"
            )
        endpoint = storage_cfg.get("endpoint_url")
        prefix = out_dir or storage_cfg.get("prefix", "")
        return S3Storage(bucket=bucket, endpoint_url=endpoint, prefix=prefix)

    else:
        raise ConfigError(f"Unknown storage type: {stype}")


def scratch_path(name: str) -> str:
    """Local temp file to build an artifact in before handing it to storage."""
    tmpdir = os.getenv("DETERRA_TMPDIR") or tempfile.gettempdir()
    os.makedirs(tmpdir, exist_ok=True)
    fd, path = tempfile.mkstemp(prefix="deterra-", suffix=f"-{os.path.basename(name)}", dir=tmpdir)
    os.close(fd)
    return path


class Storage(ABC):
    """Abstract base class for artifact storage backends."""

    @abstractmethod
    def exists(self, key: str) -> bool:
        pass

    @abstractmethod
    def save(self, local_path: str, key: str) -> None:
        pass

    @abstractmethod
    def list(self, prefix: str = "") -> List[str]:
        pass

    @abstractmethod
    def get_path(self, key: str) -> str:
        """Return a usable local path (download or direct)."""
        pass

    def require(self, key: str) -> str:
        if not self.exists(key):
            raise ArtifactError(f"Missing artifact {key}")
        return self.get_path(key)


class FSStorage(Storage):
    """Filesystem-based storage."""

    def __init__(self, base_dir: str = "./runs"):
        self.base_dir = base_dir
        os.makedirs(self.base_dir, exist_ok=True)

    def _full_path(self, key: str) -> str:
        return os.path.join(self.base_dir, key)

    def exists(self, key: str) -> bool:
        return os.path.exists(self._full_path(key))

    def save(self, local_path: str, key: str) -> None:
        target = self._full_path(key)
        os.makedirs(os.path.dirname(target) or ".", exist_ok=True)
        # temp files may live on another device, os.replace would fail there
        shutil.move(local_path, target)
        logger.debug(f"Stored {key}")

    def list(self, prefix: str = "") -> List[str]:
        results = []
        for root, _, files in os.walk(self.base_dir):
            for f in files:
                rel = os.path.relpath(os.path.join(root, f), self.base_dir)
                if rel.startswith(prefix):
                    results.append(rel)
        return sorted(results)

    def get_path(self, key: str) -> str:
        return self._full_path(key)


class S3Storage(Storage):
    """S3/Minio-based storage."""

    def __init__(self, bucket: str, endpoint_url: str | None = None, prefix: str = ""):
        self.bucket = bucket
        self.prefix = prefix.strip("/")
        self.s3 = boto3.client(
            "s3",
            endpoint_url=(
                os.getenv("AWS_ENDPOINT_URL")
                or os.getenv("S3_ENDPOINT_URL")
                or endpoint_url
            ),
            aws_access_key_id=os.getenv("AWS_ACCESS_KEY_ID")
            or os.getenv("S3_ACCESS_KEY_ID"),
            aws_secret_access_key=os.getenv("AWS_SECRET_ACCESS_KEY")
            or os.getenv("S3_SECRET_ACCESS_KEY"),
        )

    def _key(self, key: str) -> str:
        return f"{self.prefix}/{key}" if self.prefix else key

    def exists(self, key: str) -> bool:
        try:
            self.s3.head_object(Bucket=self.bucket, Key=self._key(key))
            return True
        except self.s3.exceptions.ClientError:
            return False

    def save(self, local_path: str, key: str) -> None:
        self.s3.upload_file(local_path, self.bucket, self._key(key))
        os.remove(local_path)

    def list(self, prefix: str = "") -> List[str]:
        resp = self.s3.list_objects_v2(Bucket=self.bucket, Prefix=self._key(prefix))
        strip = len(self.prefix) + 1 if self.prefix else 0
        return sorted(obj["Key"][strip:] for obj in resp.get("Contents", []))

    def get_path(self, key: str) -> str:
        """Download to a temp dir and return local path."""
        local_path = scratch_path(key)
        self.s3.download_file(self.bucket, self._key(key), local_path)
        return local_path
