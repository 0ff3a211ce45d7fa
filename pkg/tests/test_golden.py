from __future__ import annotations

import hashlib
import json
import struct

import pytest

from pcn.access.abe import AttributeSecretKey
from pcn.access.envelope import SecureEnvelope
from pcn.identity import DelegationCert, IdentityCert, KeyPair
from pcn.replica_mgmt import CommandFile
from pcn.router.packets import decode_packet
from pcn.sync.delta import DeltaDoc
from pcn.sync.directory import DirectoryDoc
from pcn.sync.vv import VersionVector

from golden.gen_vectors import HERE, build

FROZEN = json.loads((HERE / "vectors.json").read_text())

DECODERS = {
    "identity_cert": IdentityCert.decode,
    "delegation": DelegationCert.decode,
    "interest": decode_packet,
    "data": decode_packet,
    "announcement": decode_packet,
    "version_vector": VersionVector.decode,
    "envelope": SecureEnvelope.decode,
    "attribute_key": AttributeSecretKey.decode,
    "directory": DirectoryDoc.decode,
    "delta": DeltaDoc.decode,
    "command_file": CommandFile.decode,
}


def test_vectors_unchanged():
    assert build() == FROZEN


@pytest.mark.parametrize("key", sorted(DECODERS))
def test_decode_reencode(key):
    raw = bytes.fromhex(FROZEN[key])
    assert DECODERS[key](raw).encode() == raw


def test_name_layout_by_hand():
    keys = KeyPair.from_seed(b"golden-alice".ljust(32, b"\0"))
    digest = hashlib.sha256(keys.public_key).digest()
    comps = ("music", "Incubus", "Drive.mp3")
    body = digest + struct.pack(">H", len(comps))
    for c in comps:
        body += struct.pack(">H", len(c)) + c.encode()
    assert bytes.fromhex(FROZEN["name_unversioned"]) == body + b"\x00"
    assert bytes.fromhex(FROZEN["name_versioned"]) == body + b"\x03" + struct.pack(">qI", 3, 0)
