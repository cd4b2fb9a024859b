"""Domain model: actions, chain/DAG cross-rollup transactions, compilation.

Two rollups, ids 1 and 2. A cross-rollup transaction (CRT) is an ordered
action sequence that strictly alternates rollups; each action either
hands off to the next one (chain form: exactly one successor) or to an
array of successor sub-actions (DAG form).

An action's effect is a deterministic handler keyed by (contract address,
selector), so its description fully determines both its trace and its
successors; nothing besides the description is serialized.

Compilation produces the single user-signed source transaction:

- chain form: a transaction that dispatches the first action's own call
  and then enters the session contract, passing the (augmented)
  description of the second action. Intermediate actions carry their
  successor embedded in calldata as a trailing (address, calldata)
  continuation pair; terminal actions carry an empty continuation.
- DAG form: a transaction routed through the session contract's entry
  point, which runs the first action and collects its trigger calls. A
  single-action DAG with no successors degenerates to a plain local call.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence, Union

ROLLUP_IDS = (1, 2)


def other_rollup(rollup_id: int) -> int:
    return 3 - rollup_id


class CrtValidationError(ValueError):
    """Raised when compiling a structurally invalid CRT."""


# ---------------------------------------------------------------------------
# Calldata codec: selector + length-delimited typed args.
# ---------------------------------------------------------------------------

_TAG_INT = b"\x01"
_TAG_STR = b"\x02"
_TAG_BYTES = b"\x03"

Arg = Union[int, str, bytes]


def encode_call(selector: str, args: Sequence[Arg] = ()) -> bytes:
    """Encode a call payload; decode_call inverts it exactly."""
    sel = selector.encode()
    out = [len(sel).to_bytes(2, "big"), sel, len(args).to_bytes(2, "big")]
    for a in args:
        if isinstance(a, bool):
            raise TypeError("bool is not a calldata arg type")
        if isinstance(a, int):
            out.append(_TAG_INT + a.to_bytes(8, "big", signed=True))
        elif isinstance(a, str):
            b = a.encode()
            out.append(_TAG_STR + len(b).to_bytes(4, "big") + b)
        elif isinstance(a, bytes):
            out.append(_TAG_BYTES + len(a).to_bytes(4, "big") + a)
        else:
            raise TypeError(f"unsupported calldata arg type: {type(a)!r}")
    return b"".join(out)


def decode_call(cdata: bytes) -> tuple[str, tuple[Arg, ...]]:
    try:
        sel_len = int.from_bytes(cdata[:2], "big")
        pos = 2
        selector = cdata[pos : pos + sel_len].decode()
        pos += sel_len
        n = int.from_bytes(cdata[pos : pos + 2], "big")
        pos += 2
        args: list[Arg] = []
        for _ in range(n):
            tag = cdata[pos : pos + 1]
            pos += 1
            if tag == _TAG_INT:
                args.append(int.from_bytes(cdata[pos : pos + 8], "big", signed=True))
                pos += 8
            elif tag in (_TAG_STR, _TAG_BYTES):
                size = int.from_bytes(cdata[pos : pos + 4], "big")
                pos += 4
                raw = cdata[pos : pos + size]
                pos += size
                args.append(raw.decode() if tag == _TAG_STR else raw)
            else:
                raise ValueError("bad arg tag")
        if pos != len(cdata):
            raise ValueError("trailing bytes")
        return selector, tuple(args)
    except (IndexError, UnicodeDecodeError, ValueError) as e:
        raise ValueError(f"malformed calldata: {e}") from None


# ---------------------------------------------------------------------------
# Actions and CRTs
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ActionDesc:
    rollup_id: int
    addr: str
    cdata: bytes


@dataclass(frozen=True)
class ChainAction:
    desc: ActionDesc
    desc_next: ActionDesc | None = None


@dataclass(frozen=True)
class DagAction:
    descs: tuple[ActionDesc, ...]
    descs_next: tuple[ActionDesc, ...] = ()


@dataclass(frozen=True)
class ChainCrt:
    actions: tuple[ChainAction, ...]

    def __len__(self) -> int:
        return len(self.actions)


@dataclass(frozen=True)
class DagCrt:
    actions: tuple[DagAction, ...]

    def __len__(self) -> int:
        return len(self.actions)


def validate_crt(crt: ChainCrt | DagCrt) -> str | None:
    """Return a description of the first structural violation, or None.

    Checks linkage (each action's successor descriptions equal the next
    action's descriptions), terminality of the last action, and strict
    rollup alternation. Reports, never raises.
    """
    if isinstance(crt, ChainCrt):
        return _validate_chain(crt)
    return _validate_dag(crt)


def _validate_chain(crt: ChainCrt) -> str | None:
    if not crt.actions:
        return "empty CRT"
    for i, act in enumerate(crt.actions):
        if act.desc.rollup_id not in ROLLUP_IDS:
            return f"action {i}: unknown rollup {act.desc.rollup_id}"
        last = i == len(crt.actions) - 1
        if last:
            if act.desc_next is not None:
                return f"action {i}: last action must not have a successor"
            continue
        nxt = crt.actions[i + 1]
        if act.desc_next is None:
            return f"action {i}: missing successor description"
        if act.desc_next != nxt.desc:
            return f"action {i}: successor description does not match action {i + 1}"
        if act.desc_next.rollup_id != other_rollup(act.desc.rollup_id):
            return f"action {i}: successor must be on the other rollup"
    return None


def _validate_dag(crt: DagCrt) -> str | None:
    if not crt.actions:
        return "empty CRT"
    for i, act in enumerate(crt.actions):
        if not act.descs:
            return f"action {i}: empty sub-action list"
        rids = {d.rollup_id for d in act.descs}
        if len(rids) != 1:
            return f"action {i}: sub-actions span multiple rollups"
        rid = act.descs[0].rollup_id
        if rid not in ROLLUP_IDS:
            return f"action {i}: unknown rollup {rid}"
        last = i == len(crt.actions) - 1
        if last:
            if act.descs_next:
                return f"action {i}: last action must not trigger successors"
            continue
        if not act.descs_next:
            return f"action {i}: non-terminal action triggers nothing"
        if act.descs_next != crt.actions[i + 1].descs:
            return f"action {i}: triggered array does not match action {i + 1}"
        if any(d.rollup_id != other_rollup(rid) for d in act.descs_next):
            return f"action {i}: triggered sub-actions must be on the other rollup"
    return None


# ---------------------------------------------------------------------------
# Transactions (what the executor dispatches on a rollup)
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CallTx:
    """Plain local call from a user account."""

    rollup_id: int
    sender: str
    addr: str
    cdata: bytes


@dataclass(frozen=True)
class ChainSourceTx:
    """Compiled chain-CRT source: dispatch the first action, then open a
    session passing the next action's description."""

    rollup_id: int
    sender: str
    addr: str
    cdata: bytes
    next_addr: str
    next_cdata: bytes


@dataclass(frozen=True)
class TriggerSourceTx:
    """Source that calls the trigger function directly after its own call.

    This is the original single-validator-sequencer source shape, and on
    the session-tracking contract it is the improper entry that skips the
    entry-nonce accounting.
    """

    rollup_id: int
    sender: str
    addr: str
    cdata: bytes
    next_addr: str
    next_cdata: bytes


@dataclass(frozen=True)
class DagSourceTx:
    """Compiled DAG-CRT source, routed through the session entry point."""

    rollup_id: int
    sender: str
    addr: str
    cdata: bytes


@dataclass(frozen=True)
class ActionTx:
    """Executor-built wrapper invoking the system contract's action call."""

    rollup_id: int
    sender: str
    addr: str
    cdata: bytes
    sid: int | None  # None on the baseline variant (no sessions)


@dataclass(frozen=True)
class DagActionTx:
    """Executor-built wrapper carrying a bundle of triggered sub-actions."""

    rollup_id: int
    trig_data: tuple[tuple[str, str, bytes], ...]  # (sender, addr, cdata)
    sid: int


Tx = Union[CallTx, ChainSourceTx, TriggerSourceTx, DagSourceTx, ActionTx, DagActionTx]


# ---------------------------------------------------------------------------
# Compilation
# ---------------------------------------------------------------------------

NO_CONTINUATION = ("", b"")


def augment_with_continuation(cdata: bytes, next_addr: str, next_cdata: bytes) -> bytes:
    """Append a (next address, next calldata) continuation to a call payload.

    Continuation-aware handlers pop the trailing pair and trigger it after
    their own effect; an empty address means no successor.
    """
    selector, args = decode_call(cdata)
    return encode_call(selector, tuple(args) + (next_addr, next_cdata))


def split_continuation(args: Sequence[Arg]) -> tuple[tuple[Arg, ...], str, bytes]:
    if len(args) < 2 or not isinstance(args[-2], str) or not isinstance(args[-1], bytes):
        raise ValueError("call payload lacks a continuation pair")
    return tuple(args[:-2]), args[-2], args[-1]


@dataclass(frozen=True)
class CompiledChainCrt:
    """Executable form of a chain CRT.

    ``actions`` is the augmented sequence: every description carries its
    continuation inline, so it alone determines the rest of the chain.
    ``source_tx`` is the single user transaction that starts it.
    """

    actions: tuple[ChainAction, ...]
    source_tx: Union[ChainSourceTx, TriggerSourceTx]


def compile_chain_crt(
    crt: ChainCrt,
    user: str = "user",
    improper_source: bool = False,
) -> CompiledChainCrt:
    """Bundle a chain CRT into one source transaction.

    ``improper_source`` compiles the first action to call the trigger
    function directly instead of the session entry point (adversarial /
    baseline shape).
    """
    violation = validate_crt(crt)
    if violation is not None:
        raise CrtValidationError(violation)
    if len(crt.actions) < 2:
        raise CrtValidationError("chain CRT needs at least 2 actions")

    # Build augmented descriptions back to front: each non-terminal action
    # (after the first) embeds its successor as a continuation.
    n = len(crt.actions)
    aug: list[ActionDesc] = [None] * n  # type: ignore[list-item]
    for i in range(n - 1, -1, -1):
        d = crt.actions[i].desc
        if i == n - 1 or i == 0:
            # Terminal action has no successor; the source action's
            # successor is passed through the session entry point instead.
            cdata = augment_with_continuation(d.cdata, *NO_CONTINUATION)
        else:
            nxt = aug[i + 1]
            cdata = augment_with_continuation(d.cdata, nxt.addr, nxt.cdata)
        aug[i] = ActionDesc(d.rollup_id, d.addr, cdata)

    actions = tuple(
        ChainAction(desc=aug[i], desc_next=aug[i + 1] if i < n - 1 else None)
        for i in range(n)
    )
    first = aug[0]
    tx_cls = TriggerSourceTx if improper_source else ChainSourceTx
    source = tx_cls(
        rollup_id=first.rollup_id,
        sender=user,
        addr=first.addr,
        cdata=first.cdata,
        next_addr=aug[1].addr,
        next_cdata=aug[1].cdata,
    )
    return CompiledChainCrt(actions=actions, source_tx=source)


@dataclass(frozen=True)
class CompiledDagCrt:
    crt: DagCrt
    source_tx: Union[DagSourceTx, CallTx]


def compile_dag_crt(crt: DagCrt, user: str = "user") -> CompiledDagCrt:
    """Bundle a DAG CRT into one source transaction.

    The entry action must be a single sub-action (it is the one user call
    the entry point runs). A one-action DAG with no triggers compiles to a
    plain local call, since the entry point rejects non-triggering calls.
    """
    violation = validate_crt(crt)
    if violation is not None:
        raise CrtValidationError(violation)
    entry = crt.actions[0]
    if len(entry.descs) != 1:
        raise CrtValidationError("entry action must have exactly one sub-action")
    d = entry.descs[0]
    if len(crt.actions) == 1:
        return CompiledDagCrt(
            crt=crt, source_tx=CallTx(d.rollup_id, user, d.addr, d.cdata)
        )
    return CompiledDagCrt(
        crt=crt, source_tx=DagSourceTx(d.rollup_id, user, d.addr, d.cdata)
    )
