import io
import logging
import zipfile
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import httpx

from driftguard.errors import ConfigError, DataError
from driftguard.models import DEFAULT_DATA_FILES
from driftguard.settings import get_settings
from driftguard.utils.hashing import bytes_sha256, file_sha256

logger = logging.getLogger(__name__)

DEFAULT_URLS = {
    "air_quality": "https://archive.ics.uci.edu/static/public/360/air+quality.zip",
    "tetouan": "https://archive.ics.uci.edu/static/public/849/power+consumption+of+tetouan+city.zip",
}
DOWNLOAD_TIMEOUT_S = 120


@dataclass(frozen=True)
class FetchResult:
    dataset: str
    url: str
    path: Optional[Path]
    sha256: Optional[str]
    verified: bool = False


def dataset_url(dataset: str) -> str:
    if dataset not in DEFAULT_URLS:
        raise ConfigError(f"unknown dataset '{dataset}'; choose one of {sorted(DEFAULT_URLS)}")
    settings = get_settings()
    override = settings.air_quality_url if dataset == "air_quality" else settings.tetouan_url
    return override or DEFAULT_URLS[dataset]


def _extract_csv(payload: bytes, member_name: str) -> bytes:
    """The UCI archives wrap the CSV (sometimes next to an .xlsx); plain CSV bodies pass through."""
    if not zipfile.is_zipfile(io.BytesIO(payload)):
        return payload
    with zipfile.ZipFile(io.BytesIO(payload)) as archive:
        for name in archive.namelist():
            if Path(name).name == member_name:
                return archive.read(name)
    raise DataError(f"archive does not contain {member_name}")


def describe(dataset: str, out_dir: Path | str) -> FetchResult:
    """Where the dataset comes from and, if it is already on disk, its content hash."""
    target = Path(out_dir) / DEFAULT_DATA_FILES[dataset]
    url = dataset_url(dataset)
    if target.is_file():
        return FetchResult(dataset, url, target, file_sha256(target))
    return FetchResult(dataset, url, None, None)


def download(dataset: str, out_dir: Path | str, expect_sha256: Optional[str] = None) -> FetchResult:
    """
    Download one UCI dataset and write its CSV under out_dir.
    The checksum is of the extracted CSV; a mismatch with expect_sha256 leaves nothing on disk.
    No published hashes ship with the package, so without expect_sha256 the file is unverified.
    """
    url = dataset_url(dataset)
    member = DEFAULT_DATA_FILES[dataset]
    try:
        with httpx.Client(timeout=DOWNLOAD_TIMEOUT_S, follow_redirects=True) as client:
            response = client.get(url)
            response.raise_for_status()
    except httpx.HTTPError as exc:
        raise DataError(f"download of {dataset} from {url} failed: {exc}") from exc

    body = _extract_csv(response.content, member)
    digest = bytes_sha256(body)
    if expect_sha256 and digest != expect_sha256.lower():
        raise DataError(f"{dataset}: checksum {digest} does not match expected {expect_sha256}")
    if not expect_sha256:
        logger.warning("%s checksum not verified (no expected sha256 given); recorded sha256 %s", dataset, digest)

    target = Path(out_dir) / member
    target.parent.mkdir(parents=True, exist_ok=True)
    target.write_bytes(body)
    return FetchResult(dataset, url, target, digest, verified=bool(expect_sha256))
