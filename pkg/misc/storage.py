import logging as log

from pathlib import Path
from typing import Callable, TypeVar
from zipfile import BadZipFile

from decorators import timer

T = TypeVar("T")


class ArtifactStorage:

    def __init__(self, root: str | Path) -> None:
        """
        Initializes an ArtifactStorage instance over a cache directory.

        Args:
            root (str | Path): Directory holding the cached stage artifacts.
        """

        self.root = Path(root)

    def path(self, stage: str, key: str, suffix: str = ".npz") -> Path:
        return self.root / f"{stage}-{key}{suffix}"

    @timer
    def get(self, stage: str, key: str, loader: Callable[[Path], T], suffix: str = ".npz") -> T | None:
        """
        Loads the cached artifact of a stage.

        Args:
            stage (str): Stage name.
            key (str): Key of the inputs the artifact was built from.
            loader (Callable[[Path], T]): Reads the artifact file.
            suffix (str): File suffix.

        Returns:
            T | None: The artifact, or None if it is not cached or cannot be read
            (an unreadable entry is deleted).
        """

        path = self.path(stage, key, suffix)
        if not path.is_file():
            log.info(f"Cache miss for {stage} ({key})")
            return None

        try:
            value = loader(path)
        except (OSError, ValueError, KeyError, BadZipFile) as e:
            log.warning(f"Dropping unreadable cache entry {path.name}: {e}")
            self.forget(stage, key, suffix)
            return None

        log.info(f"Cache hit for {stage} ({key})")
        return value

    @timer
    def set(self, stage: str, key: str, saver: Callable[[Path], None], suffix: str = ".npz") -> Path:
        """
        Stores an artifact through ``saver``. The file is written under a temporary
        name and renamed, so an interrupted write never leaves a cache entry.

        Args:
            stage (str): Stage name.
            key (str): Key of the inputs the artifact was built from.
            saver (Callable[[Path], None]): Writes the artifact file.
            suffix (str): File suffix.

        Returns:
            Path: Where the artifact was stored.
        """

        self.root.mkdir(parents=True, exist_ok=True)
        path = self.path(stage, key, suffix)
        partial = path.with_name(f"partial-{path.name}")

        saver(partial)
        partial.replace(path)
        return path

    def forget(self, stage: str, key: str, suffix: str = ".npz") -> bool:
        """
        Deletes a cached artifact.

        Returns:
            bool: True if a file was removed.
        """

        path = self.path(stage, key, suffix)
        if path.is_file():
            path.unlink()
            return True
        return False

    def clear(self) -> int:
        """
        Deletes every cached artifact.

        Returns:
            int: Number of files removed.
        """

        if not self.root.is_dir():
            return 0

        removed = 0
        for path in self.root.iterdir():
            if path.is_file():
                path.unlink()
                removed += 1
        return removed
