"""FIB1 image bundles: many encoded images packed into one file.

Layout (all integers little-endian)::

    header   "FIB1" | u16 version | u32 entry_count | u64 index_offset
    payloads original encoded image bytes, in input order
    index    entry_count records of
             u32 index | u8 name_len | name | u8 format | u32 width |
             u32 height | u8 channels | u64 payload_offset | u64 payload_length

The index sits at the end so a bundle can be written in one streaming pass;
the header is patched once the index offset is known.
"""

from __future__ import annotations

import hashlib
import os
import struct
from dataclasses import dataclass
from typing import Iterable

from difet.errors import (
    BundleCorruptionError,
    BundleFormatError,
    ImageDecodeError,
    InvalidParameterError,
    UnsupportedVersionError,
)
from difet.netpbm import ImageFormat, decode_image, sniff_format
from difet.raster import PixelImage

MAGIC = b"FIB1"
VERSION = 1
HEADER = struct.Struct("<4sHIQ")
_RECORD_HEAD = struct.Struct("<IB")
_RECORD_TAIL = struct.Struct("<BIIBQQ")


@dataclass(frozen=True)
class BundleHeader:
    magic: bytes
    version: int
    entry_count: int
    index_offset: int


@dataclass(frozen=True)
class EntryMeta:
    index: int
    name: str
    format: ImageFormat
    width: int
    height: int
    channels: int
    payload_offset: int
    payload_length: int


@dataclass(frozen=True)
class Split:
    start_index: int
    end_index: int

    def __len__(self):
        return self.end_index - self.start_index


def bundle_create(sources: Iterable[tuple[str, bytes]], path) -> BundleHeader:
    """Write a bundle holding ``sources`` (name, encoded bytes) to ``path``."""
    sources = list(sources)
    seen = set()
    metas = []
    for name, data in sources:
        raw_name = name.encode("utf-8")
        if len(raw_name) > 255:
            raise InvalidParameterError(f"entry name longer than 255 bytes: {name!r}")
        if name in seen:
            raise InvalidParameterError(f"duplicate entry name {name!r}")
        seen.add(name)
        try:
            fmt = sniff_format(data)
            img = decode_image(data, fmt)
        except ImageDecodeError as exc:
            raise ImageDecodeError(f"{name}: {exc}") from None
        metas.append((raw_name, fmt, img))

    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(b"\0" * HEADER.size)
        offsets = []
        for _, data in sources:
            offsets.append(fh.tell())
            fh.write(data)
        index_offset = fh.tell()
        for i, ((raw_name, fmt, img), (_, data), off) in enumerate(zip(metas, sources, offsets)):
            fh.write(_RECORD_HEAD.pack(i, len(raw_name)))
            fh.write(raw_name)
            fh.write(_RECORD_TAIL.pack(int(fmt), img.width, img.height, img.channels, off, len(data)))
        fh.seek(0)
        header = BundleHeader(MAGIC, VERSION, len(sources), index_offset)
        fh.write(HEADER.pack(header.magic, header.version, header.entry_count, header.index_offset))
    os.replace(tmp, path)
    return header


def _parse_index(blob: bytes, count: int, index_offset: int) -> list[EntryMeta]:
    entries = []
    pos = 0
    prev_end = HEADER.size
    for expected in range(count):
        if pos + _RECORD_HEAD.size > len(blob):
            raise BundleCorruptionError(f"index truncated at record {expected}")
        idx, name_len = _RECORD_HEAD.unpack_from(blob, pos)
        pos += _RECORD_HEAD.size
        if pos + name_len + _RECORD_TAIL.size > len(blob):
            raise BundleCorruptionError(f"index truncated at record {expected}")
        try:
            name = blob[pos : pos + name_len].decode("utf-8")
        except UnicodeDecodeError:
            raise BundleCorruptionError(f"record {expected}: name is not UTF-8") from None
        pos += name_len
        fmt_code, width, height, channels, off, length = _RECORD_TAIL.unpack_from(blob, pos)
        pos += _RECORD_TAIL.size
        if idx != expected:
            raise BundleCorruptionError(f"record {expected} carries index {idx}")
        try:
            fmt = ImageFormat(fmt_code)
        except ValueError:
            raise BundleCorruptionError(f"record {expected}: unknown format code {fmt_code}") from None
        if off < prev_end or off + length > index_offset:
            raise BundleCorruptionError(f"record {expected}: payload range overlaps or escapes")
        prev_end = off + length
        entries.append(EntryMeta(idx, name, fmt, width, height, channels, off, length))
    if pos != len(blob):
        raise BundleCorruptionError(f"{len(blob) - pos} trailing bytes after index")
    return entries


def bundle_read(path) -> tuple[BundleHeader, list[EntryMeta]]:
    """Read the header and index; payload bytes are never touched."""
    with open(path, "rb") as fh:
        raw = fh.read(HEADER.size)
        if len(raw) < 4 or raw[:4] != MAGIC:
            raise BundleFormatError(f"{os.fspath(path)}: not a FIB bundle (bad magic)")
        if len(raw) < HEADER.size:
            raise BundleCorruptionError("header truncated")
        header = BundleHeader(*HEADER.unpack(raw))
        if header.version != VERSION:
            raise UnsupportedVersionError(f"bundle version {header.version} is not supported")
        file_size = fh.seek(0, os.SEEK_END)
        if not HEADER.size <= header.index_offset <= file_size:
            raise BundleCorruptionError(f"index offset {header.index_offset} outside file")
        fh.seek(header.index_offset)
        blob = fh.read()
    return header, _parse_index(blob, header.entry_count, header.index_offset)


def bundle_id(path) -> bytes:
    """SHA-256 digest of the whole bundle file."""
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.digest()


class Bundle:
    """An opened bundle: parsed index plus random access to payloads."""

    def __init__(self, path):
        self.path = os.fspath(path)
        self.header, self.entries = bundle_read(self.path)

    def __len__(self):
        return len(self.entries)

    def payload(self, index: int) -> bytes:
        entry = self._entry(index)
        with open(self.path, "rb") as fh:
            fh.seek(entry.payload_offset)
            data = fh.read(entry.payload_length)
        if len(data) != entry.payload_length:
            raise BundleCorruptionError(f"entry {index}: payload truncated")
        return data

    def fetch(self, index: int) -> PixelImage:
        entry = self._entry(index)
        try:
            img = decode_image(self.payload(index), entry.format)
        except ImageDecodeError as exc:
            raise BundleCorruptionError(f"entry {index} ({entry.name}): {exc}") from None
        if (img.width, img.height, img.channels) != (entry.width, entry.height, entry.channels):
            raise BundleCorruptionError(f"entry {index}: decoded dims disagree with index")
        return img

    def _entry(self, index: int) -> EntryMeta:
        if not 0 <= index < len(self.entries):
            raise IndexError(f"entry {index} out of range for bundle of {len(self.entries)}")
        return self.entries[index]


def bundle_fetch(path, index: int) -> PixelImage:
    return Bundle(path).fetch(index)


def plan_splits(entry_count: int, n_splits: int) -> list[Split]:
    """Contiguous, near-equal splits; remainder entries go to the earliest splits."""
    if n_splits < 1:
        raise InvalidParameterError(f"n_splits must be >= 1, got {n_splits}")
    k = min(n_splits, entry_count)
    if k == 0:
        return []
    base, extra = divmod(entry_count, k)
    splits = []
    start = 0
    for i in range(k):
        end = start + base + (1 if i < extra else 0)
        splits.append(Split(start, end))
        start = end
    return splits

