import hashlib

from pathlib import Path

import ujson


class Other:

    @staticmethod
    def content_hash(data: bytes | str) -> str:
        """
        Git-style blob hash: sha1 over ``blob <length>\\0`` followed by the content.

        Args:
            data (bytes | str): Content; strings are encoded as UTF-8.

        Returns:
            str: The hexadecimal digest.
        """

        if isinstance(data, str):
            data = data.encode("utf-8")

        return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()

    @staticmethod
    def file_hash(path: str | Path) -> str:
        with open(path, "rb") as file:
            return Other.content_hash(file.read())

    @staticmethod
    def key(*parts) -> str:
        """
        Short stable key for a set of JSON-serializable values.

        Returns:
            str: The first 16 hex digits of the content hash of the parts.
        """

        return Other.content_hash(ujson.dumps(parts, sort_keys=True))[:16]

    @staticmethod
    def parse_override(text: str) -> tuple[list[str], object]:
        """
        Splits a ``section.key=value`` override into its key path and decoded value.

        The value is read as JSON when it parses (numbers, booleans, null, lists),
        otherwise it is kept as a plain string.

        Args:
            text (str): The override, e.g. ``train.lr=0.01``.

        Returns:
            tuple[list[str], object]: Key path and value.
        """

        key, sep, raw = text.partition("=")
        if not sep or not key.strip():
            raise ValueError(f"override must look like section.key=value, got {text!r}")

        try:
            value = ujson.loads(raw)
        except ValueError:
            value = raw

        return key.strip().split("."), value

    @staticmethod
    def parse_int_list(text: str) -> list[int]:
        """
        Parses a comma separated list of integers such as ``1,10,100``.
        """

        values = [part.strip() for part in text.split(",") if part.strip()]
        if not values:
            raise ValueError(f"expected a comma separated list of integers, got {text!r}")
        return [int(v) for v in values]
