"""Owner-signed command files under ``/<principal>/dev/<device>/.cmd``.

Only the namespace owner may write a device's command file.  Commands carry
an issue time and an expiry; a device executes the live ones in
``(issued_at, command hash)`` order and remembers what it has already run,
so re-reading the same file is a no-op.
"""

from __future__ import annotations

import enum
import hashlib
from collections.abc import Iterable
from dataclasses import dataclass, replace
from typing import Protocol

from .errors import BadSignature, DecodeError, NotDeviceName, NotOwner
from .identity import KeyPair, PublicKey
from .naming import Name, Prefix, Principal, read_name, write_name
from .wire import Reader, Writer

TAG_COMMAND_FILE = 0x40
COMMAND_EXPIRY_MS = 10 * 60 * 1000
DEV = "dev"
CMD_LEAF = ".cmd"


class CommandOp(enum.IntEnum):
    REPLICATE = 1
    UNREPLICATE = 2
    REKEY = 3


@dataclass(frozen=True)
class Command:
    op: CommandOp
    target: Prefix
    issued_at: int
    expires_at: int

    def write(self, w: Writer) -> None:
        w.u8(self.op)
        write_name(w, self.target)
        w.i64(self.issued_at).i64(self.expires_at)

    @classmethod
    def read(cls, r: Reader) -> Command:
        try:
            op = CommandOp(r.u8())
        except ValueError:
            raise DecodeError("unknown command op") from None
        target = read_name(r)
        if target.version is not None:
            raise DecodeError("command target carries a version")
        return cls(op, target.prefix, r.i64(), r.i64())

    @property
    def command_id(self) -> bytes:
        w = Writer()
        self.write(w)
        return hashlib.sha256(w.getvalue()).digest()


def device_name(principal: Principal, device: str) -> Name:
    return Name(principal, (DEV, device))


def is_device_name(name: Name) -> bool:
    return len(name.components) == 2 and name.components[0] == DEV and name.version is None


def command_file_name(device: Name) -> Name:
    return device.child(CMD_LEAF)


def execution_order(commands: Iterable[Command]) -> list[Command]:
    return sorted(commands, key=lambda c: (c.issued_at, c.command_id))


@dataclass(frozen=True)
class CommandFile:
    device: Name
    commands: tuple[Command, ...]
    owner_key: PublicKey
    owner_signature: bytes = b""

    def signed_bytes(self) -> bytes:
        w = Writer().u8(TAG_COMMAND_FILE)
        write_name(w, self.device)
        w.u32(len(self.commands))
        for c in self.commands:
            c.write(w)
        self.owner_key.write(w)
        return w.getvalue()

    def encode(self) -> bytes:
        return Writer().raw(self.signed_bytes()).bytes16(self.owner_signature).getvalue()

    @classmethod
    def decode(cls, data: bytes) -> CommandFile:
        r = Reader(data)
        if r.u8() != TAG_COMMAND_FILE:
            raise DecodeError("not a command file")
        device = read_name(r)
        commands = tuple(Command.read(r) for _ in range(r.u32()))
        key = PublicKey.read(r)
        sig = r.bytes16()
        r.expect_end()
        return cls(device, commands, key, sig)

    def verify(self) -> bool:
        if self.owner_key.key_hash != self.device.principal.public_key_hash:
            return False
        return self.owner_key.verify(self.signed_bytes(), self.owner_signature)


def issue_command(owner: KeyPair, device: Name, op: CommandOp, target: Prefix, now: int, *,
                  existing: CommandFile | None = None,
                  expiry_ms: int = COMMAND_EXPIRY_MS) -> CommandFile:
    """Append a command (dropping expired ones) and re-sign the file."""
    if not is_device_name(device):
        raise NotDeviceName(f"{device} is not under the /{DEV} namespace")
    if owner.key_hash != device.principal.public_key_hash:
        raise NotOwner(f"only the owner of {device.principal.render()} may command its devices")
    kept = tuple(c for c in (existing.commands if existing else ()) if c.expires_at >= now)
    cmd = Command(op, target, now, now + expiry_ms)
    unsigned = CommandFile(device, tuple(execution_order(kept + (cmd,))), PublicKey.of(owner))
    return replace(unsigned, owner_signature=owner.sign(unsigned.signed_bytes()))


class CommandExecutor(Protocol):
    def replicate(self, prefix: Prefix) -> None: ...
    def unreplicate(self, prefix: Prefix) -> None: ...
    def rekey(self) -> None: ...


@dataclass(frozen=True)
class Skipped:
    command: Command
    reason: str


def execute_commands(executor: CommandExecutor, cmd_file: CommandFile, now: int, *,
                     executed_ids: set[bytes] | None = None) -> tuple[list[Command], list[Skipped]]:
    """Run live commands in deterministic order; expired ones are reported, not run.

    ``executed_ids`` is the device's memory of commands already carried out;
    it is updated in place.
    """
    if not cmd_file.verify():
        raise BadSignature("command file is not signed by the namespace owner")
    done = executed_ids if executed_ids is not None else set()
    executed: list[Command] = []
    skipped: list[Skipped] = []
    for cmd in execution_order(cmd_file.commands):
        if cmd.command_id in done:
            skipped.append(Skipped(cmd, "already executed"))
            continue
        if cmd.expires_at < now:
            skipped.append(Skipped(cmd, "expired"))
            continue
        if cmd.op is CommandOp.REPLICATE:
            executor.replicate(cmd.target)
        elif cmd.op is CommandOp.UNREPLICATE:
            executor.unreplicate(cmd.target)
        else:
            executor.rekey()
        done.add(cmd.command_id)
        executed.append(cmd)
    return executed, skipped
