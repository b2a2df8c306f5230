"""Canonical byte encoding, digests, and simulated keyed-digest signatures.

Every hashed structure in the package is serialized through these helpers:
fixed field order, fixed-width big-endian integers, length-prefixed byte
fields. This keeps digests reproducible across runs and platforms.
"""

from __future__ import annotations

import hashlib

DIGEST_SIZE = 32
ZERO_DIGEST = b"\x00" * DIGEST_SIZE


def sha256(*chunks: bytes) -> bytes:
    h = hashlib.sha256()
    for chunk in chunks:
        h.update(chunk)
    return h.digest()


def pack_u8(value: int) -> bytes:
    if not 0 <= value < 1 << 8:
        raise ValueError(f"u8 out of range: {value}")
    return value.to_bytes(1, "big")


def pack_u32(value: int) -> bytes:
    if not 0 <= value < 1 << 32:
        raise ValueError(f"u32 out of range: {value}")
    return value.to_bytes(4, "big")


def pack_u64(value: int) -> bytes:
    if not 0 <= value < 1 << 64:
        raise ValueError(f"u64 out of range: {value}")
    return value.to_bytes(8, "big")


def pack_bytes(data: bytes) -> bytes:
    return pack_u32(len(data)) + data


def pack_str(text: str) -> bytes:
    return pack_bytes(text.encode("utf-8"))


class DecodeError(ValueError):
    """Raised when a byte sequence does not parse as the expected structure."""


class Cursor:
    """Sequential reader over a canonical byte string."""

    def __init__(self, data: bytes):
        self._data = data
        self._pos = 0

    def take(self, n: int) -> bytes:
        if self._pos + n > len(self._data):
            raise DecodeError("unexpected end of data")
        out = self._data[self._pos : self._pos + n]
        self._pos += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return int.from_bytes(self.take(4), "big")

    def u64(self) -> int:
        return int.from_bytes(self.take(8), "big")

    def bytes_(self) -> bytes:
        return self.take(self.u32())

    def str_(self) -> str:
        raw = self.bytes_()
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise DecodeError("invalid utf-8 in string field") from exc

    def expect_end(self) -> None:
        if self._pos != len(self._data):
            raise DecodeError(f"{len(self._data) - self._pos} trailing bytes")


# --- identities ---------------------------------------------------------
#
# Addresses are 20-byte hex strings derived from a label. Signing keys are
# derived from the address, so a "signature" is a keyed digest anyone in the
# simulation can recompute: the scheme models signing, it is not cryptography.

_ADDRESS_TAG = b"roamchain/address:"
_SECRET_TAG = b"roamchain/secret:"


def derive_address(label: str) -> str:
    return sha256(_ADDRESS_TAG, label.encode("utf-8"))[:20].hex()


def secret_for(address: str) -> bytes:
    return sha256(_SECRET_TAG, address.encode("utf-8"))


def sign_payload(payload: bytes, signer: str) -> bytes:
    return sha256(pack_bytes(secret_for(signer)), pack_bytes(payload), pack_str(signer))


def verify_payload(payload: bytes, signer: str, signature: bytes) -> bool:
    return signature == sign_payload(payload, signer)
