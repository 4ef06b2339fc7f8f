"""Download and unpack the event-camera digit recordings.

The download URLs point at the long-standing public mirrors; both the
URLs and the archive checksums can be overridden if the hosting moves.
Everything but the network call (checksums, extraction, tree validation)
is also reachable offline, and file:// URLs work for local archives.
"""

from __future__ import annotations

import hashlib
import shutil
import urllib.request
import zipfile
from pathlib import Path

from .data import NUM_DIGITS
from .errors import ChecksumError, DatasetError

ARCHIVES = {
    "train": {
        "url": "https://www.dropbox.com/sh/tg2ljlbmtzigrag/"
               "AABlMOuR15ugeOxMCX0Pvoxga/Train.zip?dl=1",
        "md5": "20959b8e626244a1b502305a9e6e2031",
        "name": "Train.zip",
    },
    "test": {
        "url": "https://www.dropbox.com/sh/tg2ljlbmtzigrag/"
               "AADSKgJ2CjaBWh75HnTNZyhca/Test.zip?dl=1",
        "md5": "69ca8762b2fe404d9b9bad1103e97832",
        "name": "Test.zip",
    },
}


def md5_of(path, chunk=1 << 20) -> str:
    h = hashlib.md5()
    with open(path, "rb") as f:
        while True:
            block = f.read(chunk)
            if not block:
                return h.hexdigest()
            h.update(block)


def download_file(url: str, dest, md5: str | None = None) -> Path:
    dest = Path(dest)
    dest.parent.mkdir(parents=True, exist_ok=True)
    tmp = dest.with_suffix(dest.suffix + ".part")
    with urllib.request.urlopen(url) as resp, open(tmp, "wb") as out:
        shutil.copyfileobj(resp, out)
    if md5 is not None:
        got = md5_of(tmp)
        if got != md5:
            tmp.unlink()
            raise ChecksumError(f"md5 mismatch for {url}: got {got}, want {md5}")
    tmp.replace(dest)
    return dest


def extract_zip(archive, dest) -> None:
    dest = Path(dest)
    dest.mkdir(parents=True, exist_ok=True)
    try:
        with zipfile.ZipFile(archive) as z:
            z.extractall(dest)
    except zipfile.BadZipFile as e:
        raise DatasetError(f"{archive} is not a readable zip archive: {e}") from e


def verify_tree(root, split: str) -> dict[int, int]:
    """Count .bin files per digit; raises if the layout is incomplete."""
    root = Path(root)
    base = None
    for name in (split, split.capitalize()):
        if (root / name).is_dir():
            base = root / name
            break
    if base is None:
        raise DatasetError(f"no '{split}' directory under {root}")
    counts = {}
    for digit in range(NUM_DIGITS):
        d = base / str(digit)
        if not d.is_dir():
            raise DatasetError(f"missing digit directory {d}")
        n = sum(1 for _ in d.glob("*.bin"))
        if n == 0:
            raise DatasetError(f"no recordings under {d}")
        counts[digit] = n
    return counts


def fetch_nmnist(root, splits=("train", "test"), verify_only: bool = False,
                 url_overrides: dict | None = None,
                 md5_overrides: dict | None = None) -> dict[str, dict[int, int]]:
    """Fetch and unpack the requested splits under root; returns file counts.

    verify_only skips all downloading and just validates an existing tree.
    """
    root = Path(root)
    report = {}
    for split in splits:
        if split not in ARCHIVES:
            raise DatasetError(f"unknown split {split!r}")
        if not verify_only:
            try:
                verify_tree(root, split)
            except DatasetError:
                info = ARCHIVES[split]
                url = (url_overrides or {}).get(split, info["url"])
                md5 = (md5_overrides or {}).get(split, info["md5"])
                archive = root / info["name"]
                if not archive.is_file():
                    download_file(url, archive, md5=md5)
                extract_zip(archive, root)
        report[split] = verify_tree(root, split)
    return report
