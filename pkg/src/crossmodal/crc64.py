"""CRC-64 checksums (CRC-64/XZ parameters: reflected, poly 0x42F0E1EBA9EA3693).

Used as the integrity trailer of the embedding-bundle and checkpoint file
formats and as the config hash. check value: crc64(b"123456789") ==
0x995DC9BBDF1939FA.
"""

from __future__ import annotations

_POLY_REFLECTED = 0xC96C5795D7870F42
_MASK = 0xFFFFFFFFFFFFFFFF


def _build_table() -> list[int]:
    table = []
    for byte in range(256):
        crc = byte
        for _ in range(8):
            if crc & 1:
                crc = (crc >> 1) ^ _POLY_REFLECTED
            else:
                crc >>= 1
        table.append(crc)
    return table


_TABLE = _build_table()


def crc64(data: bytes, crc: int = 0) -> int:
    """Return the CRC-64 of `data`, optionally continuing from a prior value.

    Streaming use: crc64(b, crc64(a)) == crc64(a + b).
    """
    crc = (crc ^ _MASK) & _MASK
    for byte in data:
        crc = _TABLE[(crc ^ byte) & 0xFF] ^ (crc >> 8)
    return (crc ^ _MASK) & _MASK


def crc64_hex(data: bytes) -> str:
    """CRC-64 as a fixed-width lowercase hex string."""
    return f"{crc64(data):016x}"
