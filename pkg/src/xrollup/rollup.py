"""The L2 state machine: contract registry, storage, dispatch, digests.

There is no bytecode VM. Contracts are native handlers registered per
(address, selector); a handler mutates storage through its context and
may trigger the system contract or call other contracts. Handlers are
deterministic, so a call description fully determines its effect.

Transaction semantics:

- Any failure inside a transaction (a contract require, a system-contract
  require, an unknown selector, or a handler bug) rolls the whole
  transaction back and yields a failure status; the simulator never
  crashes on adversarial input.
- Trigger events are collected per transaction and discarded on failure.
- Each successful transaction records its storage writes (including the
  system-contract attribute changes), so an accepted batch can be
  replayed independently of this dispatcher.

The state digest is the root of a key-value trie over all contract
storage plus the system contract's scalar attributes and tree roots,
mirrored under reserved keys at digest time. Attribute membership proofs
against the digest are ordinary trie proofs.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

from .commitment import MembershipProof, StateTrie
from .gsc import (
    CHAIN,
    DAG,
    GSC_ADDR,
    SVS,
    GscRevert,
    GscState,
    InsertRecord,
    TriggerEvent,
)
from .model import (
    ActionTx,
    CallTx,
    ChainSourceTx,
    DagActionTx,
    DagSourceTx,
    TriggerSourceTx,
    Tx,
    decode_call,
)


class HandlerRevert(Exception):
    """A require failure inside an application handler."""


def storage_key(addr: str, key: bytes) -> bytes:
    a = addr.encode()
    return len(a).to_bytes(2, "big") + a + key


# Attribute names provable against the state digest.
PROVABLE_ATTRIBUTES = (
    "trig_root",
    "act_root",
    "session_nonce",
    "entry_nonce",
    "session_active",
)

_GSC_ATTR_PREFIX = b"attr:"


def _u64(n: int) -> bytes:
    return n.to_bytes(8, "big")


def attribute_key(name: str) -> bytes:
    return storage_key(GSC_ADDR, _GSC_ATTR_PREFIX + name.encode())


def encode_attribute_value(name: str, gsc: GscState) -> bytes:
    if name == "trig_root":
        return gsc.trig_tree.root
    if name == "act_root":
        return gsc.act_tree.root
    if name == "t_nonce":
        return _u64(gsc.t_nonce)
    if name == "a_nonce":
        return _u64(gsc.a_nonce)
    if name == "session_nonce":
        return _u64(gsc.session_nonce)
    if name == "entry_nonce":
        return _u64(gsc.entry_nonce)
    if name == "session_active":
        return b"\x01" if gsc.session_active else b"\x00"
    raise KeyError(name)


_ALL_MIRRORED = (
    "trig_root",
    "act_root",
    "t_nonce",
    "a_nonce",
    "session_nonce",
    "entry_nonce",
    "session_active",
)


def gsc_mirror(gsc: GscState) -> dict[bytes, bytes]:
    return {attribute_key(n): encode_attribute_value(n, gsc) for n in _ALL_MIRRORED}


@dataclass(frozen=True)
class TxResult:
    status: bool
    events: tuple[TriggerEvent, ...]
    writes: tuple[tuple[bytes, bytes], ...]
    inserts: tuple[InsertRecord, ...]
    error: str | None = None


@dataclass(frozen=True)
class Checkpoint:
    store: dict[bytes, bytes]
    gsc: GscState


@dataclass(frozen=True)
class RollupSnapshot:
    """Serializable-enough state capture; handlers are shared by reference."""

    rollup_id: int
    store: dict[bytes, bytes]
    gsc: GscState
    registry: dict[tuple[str, str], "Handler"]


class HandlerContext:
    """What a handler sees: its own identity, caller, storage, and calls."""

    def __init__(self, rollup: "RollupState", contract: str, caller: str):
        self._rollup = rollup
        self.contract = contract
        self.caller = caller

    @property
    def rollup_id(self) -> int:
        return self._rollup.id

    @property
    def x_sender(self) -> str | None:
        """Cross-rollup sender, set while executing a triggered sub-action."""
        return self._rollup._x_sender

    def require(self, condition: bool, reason: str) -> None:
        if not condition:
            raise HandlerRevert(reason)

    def get(self, key: bytes, contract: str | None = None) -> bytes | None:
        """Read storage; public state of other contracts is readable."""
        return self._rollup.store.get(storage_key(contract or self.contract, key))

    def set(self, key: bytes, value: bytes) -> None:
        self._rollup._write(storage_key(self.contract, key), value)

    def call(self, addr: str, cdata: bytes) -> None:
        """Synchronous call to another contract; failure reverts the tx."""
        self._rollup._dispatch(self.contract, addr, cdata)

    def trigger(self, addr: str, cdata: bytes) -> None:
        """Invoke the system contract's trigger on behalf of this contract."""
        gsc = self._rollup.gsc
        gsc.do_trigger(self.contract, addr, cdata, self._rollup._gsc_ctx)


Handler = Callable[[HandlerContext, tuple], None]


class _GscCtx:
    def __init__(self, rollup: "RollupState"):
        self._rollup = rollup

    def gsc_call(self, addr: str, cdata: bytes, x_sender: str | None) -> None:
        r = self._rollup
        r._x_sender = x_sender
        try:
            r._dispatch(GSC_ADDR, addr, cdata)
        finally:
            r._x_sender = None

    def emit_trigger(self, event: TriggerEvent) -> None:
        self._rollup._events.append(event)


class RollupState:
    def __init__(self, rollup_id: int, variant: str):
        self.id = rollup_id
        self.variant = variant
        self.store: dict[bytes, bytes] = {}
        self.gsc = GscState(variant)
        self.registry: dict[tuple[str, str], Handler] = {}
        self._gsc_ctx = _GscCtx(self)
        self._x_sender: str | None = None
        self._events: list[TriggerEvent] = []
        self._writes: list[tuple[bytes, bytes]] = []

    # -- registry ------------------------------------------------------------

    def register(self, addr: str, selector: str, handler: Handler) -> None:
        if addr == GSC_ADDR:
            raise ValueError("the system contract address is reserved")
        self.registry[(addr, selector)] = handler

    # -- execution -------------------------------------------------------------

    def _write(self, key: bytes, value: bytes) -> None:
        self.store[key] = value
        self._writes.append((key, value))

    def _dispatch(self, caller: str, addr: str, cdata: bytes) -> None:
        selector, args = decode_call(cdata)
        handler = self.registry.get((addr, selector))
        if handler is None:
            raise HandlerRevert(f"unknown call {addr}.{selector}")
        handler(HandlerContext(self, addr, caller), args)

    def execute_tx(self, tx: Tx, is_executor: bool = False) -> TxResult:
        """Run one top-level transaction; roll back all effects on failure."""
        cp = self.checkpoint()
        self.gsc.begin_tx()
        self._events = []
        self._writes = []
        insert_mark = (len(self.gsc.trig_log), len(self.gsc.act_log))
        mirror_before = gsc_mirror(self.gsc)
        try:
            self._run(tx, is_executor)
        except Exception as e:  # noqa: BLE001 — adversarial input must not crash the sim
            self.restore(cp)
            return TxResult(False, (), (), (), error=f"{type(e).__name__}: {e}")
        writes = list(self._writes)
        mirror_after = gsc_mirror(self.gsc)
        for key, value in mirror_after.items():
            if mirror_before.get(key) != value:
                writes.append((key, value))
        inserts = tuple(self.gsc.trig_log[insert_mark[0] :]) + tuple(
            self.gsc.act_log[insert_mark[1] :]
        )
        return TxResult(True, tuple(self._events), tuple(writes), inserts)

    def _run(self, tx: Tx, is_executor: bool) -> None:
        gsc = self.gsc
        if isinstance(tx, CallTx):
            self._dispatch(tx.sender, tx.addr, tx.cdata)
        elif isinstance(tx, ChainSourceTx):
            if self.variant != CHAIN:
                raise HandlerRevert("session entry not available on this variant")
            self._dispatch(tx.sender, tx.addr, tx.cdata)
            gsc.start_session(tx.addr, tx.next_addr, tx.next_cdata, self._gsc_ctx)
        elif isinstance(tx, TriggerSourceTx):
            self._dispatch(tx.sender, tx.addr, tx.cdata)
            gsc.do_trigger(tx.addr, tx.next_addr, tx.next_cdata, self._gsc_ctx)
        elif isinstance(tx, DagSourceTx):
            if self.variant != DAG:
                raise HandlerRevert("entry-point routing requires the DAG variant")
            gsc.dag_start_session(tx.sender, tx.addr, tx.cdata, self._gsc_ctx)
        elif isinstance(tx, ActionTx):
            if not is_executor:
                raise GscRevert("action may only be called by the executor")
            if self.variant == SVS:
                gsc.svs_action(tx.sender, tx.addr, tx.cdata, self._gsc_ctx)
            elif self.variant == CHAIN:
                if tx.sid is None:
                    raise GscRevert("session id required")
                gsc.action(tx.sender, tx.addr, tx.cdata, tx.sid, self._gsc_ctx)
            else:
                raise GscRevert("single-action call not available on the DAG variant")
        elif isinstance(tx, DagActionTx):
            if not is_executor:
                raise GscRevert("action may only be called by the executor")
            if self.variant != DAG:
                raise GscRevert("bundled action requires the DAG variant")
            gsc.dag_action(tx.trig_data, tx.sid, self._gsc_ctx)
        else:
            raise HandlerRevert(f"unknown transaction kind {type(tx).__name__}")

    # -- checkpointing ------------------------------------------------------------

    def checkpoint(self) -> Checkpoint:
        return Checkpoint(store=dict(self.store), gsc=self.gsc.copy())

    def restore(self, cp: Checkpoint) -> None:
        self.store = dict(cp.store)
        self.gsc = cp.gsc.copy()

    def snapshot(self) -> RollupSnapshot:
        return RollupSnapshot(
            rollup_id=self.id,
            store=dict(self.store),
            gsc=self.gsc.copy(),
            registry=self.registry,
        )

    @classmethod
    def from_snapshot(cls, snap: RollupSnapshot) -> "RollupState":
        r = cls(snap.rollup_id, snap.gsc.variant)
        r.store = dict(snap.store)
        r.gsc = snap.gsc.copy()
        r.registry = snap.registry
        return r

    # -- digests and proofs -----------------------------------------------------------

    def _full_trie(self) -> StateTrie:
        trie = StateTrie(self.store)
        for key, value in gsc_mirror(self.gsc).items():
            trie.set(key, value)
        return trie

    def compute_digest(self) -> bytes:
        return self._full_trie().root()

    def prove_attribute(self, name: str) -> tuple[bytes, MembershipProof]:
        """Value and membership proof of a system-contract attribute."""
        if name not in PROVABLE_ATTRIBUTES:
            raise KeyError(f"unknown attribute {name!r}")
        proof = self._full_trie().prove(attribute_key(name))
        return proof.value, proof


def replay_digest(
    pre_store: dict[bytes, bytes],
    pre_mirror: dict[bytes, bytes],
    writes: Sequence[tuple[bytes, bytes]],
) -> bytes:
    """Digest after applying recorded writes to a pre-state, using only the
    commitment layer (no dispatcher involved)."""
    state = dict(pre_store)
    state.update(pre_mirror)
    for key, value in writes:
        state[key] = value
    return StateTrie(state).root()
