"""The per-rollup system contract maintaining trigger/action trees.

Three variants share one state object:

- ``svs``: the baseline. Trigger inserts H(sender, addr, cdata, tNonce)
  into the trigger tree; the action call executes the wrapped call and
  inserts the same 4-tuple shape into the action tree. No sessions.
- ``chain``: adds session tracking. A source transaction opens a session
  through ``start_session`` (bumping the entry and session nonces); every
  leaf hash additionally carries the session id; the action call verifies
  the session id matches the current or next session nonce and closes the
  session when its callee does not trigger. One trigger per transaction.
- ``dag``: the action call takes an array of triggered sub-actions; all
  triggers (resp. sub-action inserts) of one parent transaction share one
  trigger (resp. action) nonce. ``start_session`` becomes the entry point
  that runs the source call itself and requires it to trigger.

Rules that hold in every variant:

- A failed requirement reverts the whole enclosing transaction (the
  rollup restores its pre-transaction state).
- ``trigger_called`` / ``action_called`` / ``x_sender`` are transaction
  scoped; the rollup resets them at each top-level transaction boundary.
- The action call may only be issued by the executor; the rollup gates it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Protocol

from .commitment import AppendTree, hash_tuple

GSC_ADDR = "gsc"

SVS = "svs"
CHAIN = "chain"
DAG = "dag"
VARIANTS = (SVS, CHAIN, DAG)


class GscRevert(Exception):
    """A require failure inside the system contract."""


def _require(condition: bool, reason: str) -> None:
    if not condition:
        raise GscRevert(reason)


@dataclass(frozen=True)
class TriggerEvent:
    sender: str
    addr: str
    cdata: bytes
    t_nonce: int


@dataclass(frozen=True)
class InsertRecord:
    """One tree insertion with its preimage fields (trace/oracle visibility)."""

    tree: str  # "trig" | "act"
    sender: str
    addr: str
    cdata: bytes
    nonce: int
    sid: int | None
    leaf: bytes


class GscContext(Protocol):
    """Execution services the hosting rollup provides to the contract."""

    def gsc_call(self, addr: str, cdata: bytes, x_sender: str | None) -> None:
        """Dispatch (addr, cdata) with the contract as caller; raise on failure.

        ``x_sender`` is exposed to the callee for the duration of the call
        and cleared afterwards.
        """

    def emit_trigger(self, event: TriggerEvent) -> None: ...


def _encode_fields(sender: str, addr: str, cdata: bytes, nonce: int, sid: int | None):
    fields = [sender.encode(), addr.encode(), cdata, nonce.to_bytes(8, "big")]
    if sid is not None:
        fields.append(sid.to_bytes(8, "big"))
    return fields


class GscState:
    """Mutable contract state; one instance per rollup."""

    __slots__ = (
        "variant",
        "trig_tree",
        "act_tree",
        "trig_log",
        "act_log",
        "t_nonce",
        "a_nonce",
        "session_nonce",
        "entry_nonce",
        "session_active",
        "trigger_called",
        "action_called",
        "session_id",
    )

    def __init__(self, variant: str):
        if variant not in VARIANTS:
            raise ValueError(f"unknown variant {variant!r}")
        self.variant = variant
        self.trig_tree = AppendTree()
        self.act_tree = AppendTree()
        self.trig_log: list[InsertRecord] = []
        self.act_log: list[InsertRecord] = []
        self.t_nonce = 0
        self.a_nonce = 0
        self.session_nonce = 0
        self.entry_nonce = 0
        self.session_active = False
        # transaction-scoped
        self.trigger_called = False
        self.action_called = False
        self.session_id = 0

    # -- lifecycle ---------------------------------------------------------

    def begin_tx(self) -> None:
        """Reset transaction-scoped flags at a top-level transaction boundary."""
        self.trigger_called = False
        self.action_called = False
        self.session_id = 0

    def copy(self) -> "GscState":
        g = GscState(self.variant)
        g.trig_tree = self.trig_tree.copy()
        g.act_tree = self.act_tree.copy()
        g.trig_log = list(self.trig_log)
        g.act_log = list(self.act_log)
        g.t_nonce = self.t_nonce
        g.a_nonce = self.a_nonce
        g.session_nonce = self.session_nonce
        g.entry_nonce = self.entry_nonce
        g.session_active = self.session_active
        g.trigger_called = self.trigger_called
        g.action_called = self.action_called
        g.session_id = self.session_id
        return g

    # -- internals ----------------------------------------------------------

    def _insert_trig(self, sender: str, addr: str, cdata: bytes, sid: int | None,
                     ctx: GscContext) -> None:
        leaf = hash_tuple(_encode_fields(sender, addr, cdata, self.t_nonce, sid))
        self.trig_tree.insert(leaf)
        self.trig_log.append(
            InsertRecord("trig", sender, addr, cdata, self.t_nonce, sid, leaf)
        )
        ctx.emit_trigger(TriggerEvent(sender, addr, cdata, self.t_nonce))

    def _insert_act(self, sender: str, addr: str, cdata: bytes, sid: int | None) -> None:
        leaf = hash_tuple(_encode_fields(sender, addr, cdata, self.a_nonce, sid))
        self.act_tree.insert(leaf)
        self.act_log.append(
            InsertRecord("act", sender, addr, cdata, self.a_nonce, sid, leaf)
        )

    def _check_session_id(self, sid: int) -> None:
        if sid == self.session_nonce:
            _require(self.session_active, "session id names an inactive session")
        elif sid == self.session_nonce + 1:
            self.session_active = True
            self.session_nonce += 1
        else:
            raise GscRevert("bad session id")

    # -- baseline variant ----------------------------------------------------

    def svs_trigger(self, caller: str, addr: str, cdata: bytes, ctx: GscContext) -> None:
        self.t_nonce += 1
        self._insert_trig(caller, addr, cdata, None, ctx)

    def svs_action(self, sender: str, addr: str, cdata: bytes, ctx: GscContext) -> None:
        ctx.gsc_call(addr, cdata, x_sender=sender)
        self.a_nonce += 1
        self._insert_act(sender, addr, cdata, None)

    # -- chain variant ---------------------------------------------------------

    def start_session(self, caller: str, addr: str, cdata: bytes, ctx: GscContext) -> None:
        _require(not self.action_called, "no session entry inside an action")
        self.entry_nonce += 1
        self.session_nonce += 1
        self.session_active = True
        self.trigger_called = False
        self._trigger_internal(caller, addr, cdata, ctx)

    def _trigger_internal(self, sender: str, addr: str, cdata: bytes, ctx: GscContext) -> None:
        _require(not self.trigger_called, "only one trigger per tx")
        self.trigger_called = True
        self.session_id = self.session_nonce
        self.t_nonce += 1
        self._insert_trig(sender, addr, cdata, self.session_id, ctx)

    def trigger(self, caller: str, addr: str, cdata: bytes, ctx: GscContext) -> None:
        self._trigger_internal(caller, addr, cdata, ctx)

    def action(self, sender: str, addr: str, cdata: bytes, sid: int, ctx: GscContext) -> None:
        self.action_called = True
        self._check_session_id(sid)
        self.trigger_called = False
        ctx.gsc_call(addr, cdata, x_sender=sender)
        self.a_nonce += 1
        self._insert_act(sender, addr, cdata, sid)
        if not self.trigger_called:
            self.session_active = False
        self.action_called = False

    # -- DAG variant -----------------------------------------------------------

    def dag_start_session(self, caller: str, addr: str, cdata: bytes, ctx: GscContext) -> None:
        _require(not self.action_called, "no session entry inside an action")
        self.entry_nonce += 1
        self.session_nonce += 1
        self.session_active = True
        self.trigger_called = False
        ctx.gsc_call(addr, cdata, x_sender=None)
        _require(self.trigger_called, "entry call must trigger")

    def dag_trigger(self, caller: str, addr: str, cdata: bytes, ctx: GscContext) -> None:
        if not self.trigger_called:
            # All triggers of one parent transaction share one nonce.
            self.t_nonce += 1
        self.trigger_called = True
        self.session_id = self.session_nonce
        self._insert_trig(caller, addr, cdata, self.session_id, ctx)

    def dag_action(
        self,
        trig_data: tuple[tuple[str, str, bytes], ...],
        sid: int,
        ctx: GscContext,
    ) -> None:
        self._check_session_id(sid)
        self.action_called = True
        self.trigger_called = False
        _require(len(trig_data) > 0, "empty sub-action bundle")
        self.a_nonce += 1
        for sender, addr, cdata in trig_data:
            ctx.gsc_call(addr, cdata, x_sender=sender)
            self._insert_act(sender, addr, cdata, sid)
        if not self.trigger_called:
            self.session_active = False
        self.action_called = False

    # -- variant dispatch helpers ------------------------------------------------

    def do_trigger(self, caller: str, addr: str, cdata: bytes, ctx: GscContext) -> None:
        """Variant-correct trigger entry for application handlers."""
        if self.variant == SVS:
            self.svs_trigger(caller, addr, cdata, ctx)
        elif self.variant == CHAIN:
            self.trigger(caller, addr, cdata, ctx)
        else:
            self.dag_trigger(caller, addr, cdata, ctx)
