"""Build the frozen wire vectors.  Run as a script to rewrite vectors.json."""

from __future__ import annotations

import json
import random
import sys
from pathlib import Path

from pcn.access.abe import abe_keygen, abe_setup
from pcn.access.envelope import envelope_encrypt
from pcn.access.policy import Attribute, parse_policy
from pcn.identity import KeyPair, PublicKey, issue_delegation, issue_identity_cert
from pcn.naming import Name, Prefix, canonical_encode
from pcn.replica_mgmt import CommandOp, device_name, issue_command
from pcn.router.engine import regular
from pcn.router.packets import DataPacket, Interest
from pcn.sync.delta import make_delta
from pcn.sync.directory import DirectoryDoc
from pcn.sync.vv import VersionVector

HERE = Path(__file__).parent
NOW = 1_700_000_000_000


def build() -> dict[str, str]:
    alice_keys = KeyPair.from_seed(b"golden-alice".ljust(32, b"\0"))
    bob_keys = KeyPair.from_seed(b"golden-bob".ljust(32, b"\0"))
    alice, bob = alice_keys.principal("Alice"), bob_keys.principal("Bob")
    song = Name(alice, ("music", "Incubus", "Drive.mp3"), 3, 0)
    music = Prefix(alice, ("music",))
    vv = VersionVector({"Alice.laptop": 2, "Alice.ipod": 1})

    out = {
        "name_unversioned": canonical_encode(song.unversioned()),
        "name_versioned": canonical_encode(song),
        "prefix": canonical_encode(music),
        "identity_cert": issue_identity_cert(alice_keys, "Bob", PublicKey.of(bob_keys), NOW).encode(),
        "delegation": issue_delegation(alice_keys, music, bob, NOW + 86_400_000).encode(),
        "interest": Interest(song, 0x1234).encode(),
        "data": DataPacket.create(song, b"riff", alice_keys, version_vector=vv).encode(),
        "announcement": regular(music, alice_keys, NOW, nonce=42).encode(),
        "version_vector": vv.encode(),
    }

    keyring = abe_setup(alice, 7, attributes=[Attribute("friends", alice)])
    read = parse_policy("friends", alice)
    env = envelope_encrypt(keyring.public_key, b"hello", read, read, alice_keys, rng=random.Random(5))
    out["envelope"] = env.encode()
    out["attribute_key"] = abe_keygen(keyring, [Attribute("friends", alice)], bob).encode()

    doc = DirectoryDoc().put("Drive.mp3", song, "Alice.laptop", now=NOW)
    out["directory"] = doc.encode()
    out["delta"] = make_delta(b"a" * 100 + b"b" * 100, b"a" * 100 + b"c" * 100, base_version=1).encode()
    out["command_file"] = issue_command(alice_keys, device_name(alice, "ipad"), CommandOp.REPLICATE,
                                        music, NOW).encode()
    return {k: v.hex() for k, v in out.items()}


if __name__ == "__main__":
    path = HERE / "vectors.json"
    path.write_text(json.dumps(build(), indent=2, sort_keys=True) + "\n")
    sys.stdout.write(f"wrote {path}\n")
