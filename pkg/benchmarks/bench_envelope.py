"""Envelope encrypt/decrypt latency against payload size.

Not part of the test gate; numbers depend on the machine.  Run with
``python benchmarks/bench_envelope.py [--repeat N] [--json]``.
"""

from __future__ import annotations

import argparse
import json
import os
import statistics
import time

from pcn.access.abe import abe_keygen, abe_setup
from pcn.access.envelope import envelope_decrypt, envelope_encrypt
from pcn.access.policy import Attribute, parse_policy
from pcn.identity import KeyPair

SIZES = [1 << 10, 10 << 10, 100 << 10, 1 << 20, 10 << 20]
POLICY = '"college friends" or ("CS219 team" and coworkers)'


def bench(repeat: int) -> list[dict]:
    owner_keys = KeyPair.from_seed(b"bench-owner".ljust(32, b"\0"))
    owner = owner_keys.principal("Alice")
    attrs = [Attribute(n, owner) for n in ("college friends", "CS219 team", "coworkers")]
    keyring = abe_setup(owner, 1, attributes=attrs)
    policy = parse_policy(POLICY, owner)
    sk = abe_keygen(keyring, attrs[:1], owner)
    rows = []
    for size in SIZES:
        payload = os.urandom(size)
        enc, dec = [], []
        for _ in range(repeat):
            t0 = time.perf_counter()
            env = envelope_encrypt(keyring.public_key, payload, policy, None, owner_keys)
            t1 = time.perf_counter()
            envelope_decrypt(env, sk)
            t2 = time.perf_counter()
            enc.append(t1 - t0)
            dec.append(t2 - t1)
        rows.append({"bytes": size, "encrypt_ms": 1e3 * statistics.median(enc),
                     "decrypt_ms": 1e3 * statistics.median(dec), "envelope_bytes": len(env.encode())})
    return rows


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--json", action="store_true")
    args = parser.parse_args()
    rows = bench(args.repeat)
    if args.json:
        print(json.dumps(rows, indent=2))
        return
    print(f"{'payload':>10} {'encrypt ms':>11} {'decrypt ms':>11} {'overhead B':>11}")
    for r in rows:
        print(f"{r['bytes']:>10} {r['encrypt_ms']:>11.2f} {r['decrypt_ms']:>11.2f} "
              f"{r['envelope_bytes'] - r['bytes']:>11}")


if __name__ == "__main__":
    main()
