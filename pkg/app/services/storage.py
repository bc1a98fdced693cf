import os
import tempfile
from contextlib import contextmanager
from pathlib import Path
from typing import Iterator, List, Union

import structlog

from app.core.exceptions import StorageError

logger = structlog.get_logger()

PathLike = Union[str, Path]


class LocalStorage:
    """Service for handling file storage operations with atomic writes"""

    def __init__(self, root: PathLike = "."):
        self.root = Path(root)

    def resolve(self, relative: PathLike) -> Path:
        path = Path(relative)
        return path if path.is_absolute() else self.root / path

    def ensure_dir(self, relative: PathLike = ".") -> Path:
        path = self.resolve(relative)
        try:
            path.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            logger.error("Failed to create directory", path=str(path), error=str(e))
            raise StorageError("cannot create directory", str(path)) from e
        return path

    @contextmanager
    def atomic_path(self, relative: PathLike, suffix: str = "") -> Iterator[Path]:
        """
        Yield a temporary path next to the destination; rename it into place on success.

        Args:
            relative: Destination path
            suffix: Suffix for the temporary file (some writers infer format from it)
        """
        target = self.resolve(relative)
        self.ensure_dir(target.parent)
        fd, tmp_name = tempfile.mkstemp(dir=target.parent, prefix=f".{target.name}.", suffix=suffix or target.suffix)
        os.close(fd)
        tmp = Path(tmp_name)
        try:
            yield tmp
            os.replace(tmp, target)
            logger.debug("File saved", path=str(target))
        except OSError as e:
            logger.error("Failed to save file", path=str(target), error=str(e))
            raise StorageError("cannot write file", str(target)) from e
        finally:
            if tmp.exists():
                tmp.unlink()

    def write_text(self, relative: PathLike, content: str) -> Path:
        target = self.resolve(relative)
        with self.atomic_path(target) as tmp:
            tmp.write_text(content, encoding="utf-8", newline="\n")
        return target

    def read_text(self, relative: PathLike) -> str:
        path = self.resolve(relative)
        try:
            return path.read_text(encoding="utf-8")
        except OSError as e:
            logger.error("Failed to read file", path=str(path), error=str(e))
            raise StorageError("cannot read file", str(path)) from e

    def list_files(self, relative: PathLike, pattern: str) -> List[Path]:
        path = self.resolve(relative)
        if not path.is_dir():
            raise StorageError("not a directory", str(path))
        return sorted(p for p in path.glob(pattern) if p.is_file())

