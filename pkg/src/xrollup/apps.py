"""Demo contracts registered on the simulated rollups.

Chain-variant contracts embed their successor as a trailing calldata
continuation (see ``model.augment_with_continuation``); the ``chainable``
wrapper pops it and forwards it to the system contract's trigger after
the handler's own effect.

DAG-variant contracts call the trigger directly, Solidity-style:

- ``xtoken``: transfer / burn-then-mint token. Mint is callable only via
  the system contract's action dispatch and only when the cross-rollup
  sender is the counterpart token.
- ``xfl``: flash-loan pool. ``init`` lends and triggers ``react`` on the
  far rollup, which triggers ``complete`` back; ``complete`` requires the
  pool balance restored and clears the busy flag.
- ``xuser``: user-side flash-loan logic (borrow, burn across, arbitrage,
  burn back, repay).
- ``arb``: pluggable arbitrage stub; returns the funds it received plus a
  configured delta out of its own reserve.
- ``relay``/``ping``: generic fan-out contracts for synthetic DAG CRTs.
"""

from __future__ import annotations

from typing import Sequence

from .gsc import GSC_ADDR
from .model import (
    ActionDesc,
    DagAction,
    DagCrt,
    encode_call,
    other_rollup,
    split_continuation,
)
from .rollup import HandlerContext, RollupState

TOKEN = "xtoken"
FLASH_LOAN = "xfl"
USER_FL = "xuser"
ARB = "arb"
RELAY = "relay"
CHAIN_TOKEN = "ctoken"
DEMO = "demo"


def _get_int(ctx: HandlerContext, key: bytes, contract: str | None = None) -> int:
    raw = ctx.get(key, contract)
    return int.from_bytes(raw, "big", signed=True) if raw else 0


def _set_int(ctx: HandlerContext, key: bytes, value: int) -> None:
    ctx.set(key, value.to_bytes(16, "big", signed=True))


def _bal_key(account: str) -> bytes:
    return b"bal:" + account.encode()


def chainable(fn):
    """Continuation-aware handler: run the effect, then trigger the successor."""

    def wrapped(ctx: HandlerContext, args: tuple) -> None:
        own, cont_addr, cont_cdata = split_continuation(args)
        fn(ctx, own)
        if cont_addr:
            ctx.trigger(cont_addr, cont_cdata)

    return wrapped


# ---------------------------------------------------------------------------
# Shared token bookkeeping
# ---------------------------------------------------------------------------


def _token_transfer(ctx: HandlerContext, sender: str, recipient: str, amount: int) -> None:
    ctx.require(amount >= 0, "negative amount")
    bal = _get_int(ctx, _bal_key(sender))
    ctx.require(bal >= amount, "insufficient balance")
    _set_int(ctx, _bal_key(sender), bal - amount)
    _set_int(ctx, _bal_key(recipient), _get_int(ctx, _bal_key(recipient)) + amount)


def _token_mint(ctx: HandlerContext, to: str, amount: int) -> None:
    _set_int(ctx, _bal_key(to), _get_int(ctx, _bal_key(to)) + amount)
    _set_int(ctx, b"supply", _get_int(ctx, b"supply") + amount)


def _token_burn(ctx: HandlerContext, holder: str, amount: int) -> None:
    bal = _get_int(ctx, _bal_key(holder))
    ctx.require(bal >= amount, "insufficient balance")
    _set_int(ctx, _bal_key(holder), bal - amount)
    _set_int(ctx, b"supply", _get_int(ctx, b"supply") - amount)


def token_balance(rollup: RollupState, token_addr: str, account: str) -> int:
    from .rollup import storage_key

    raw = rollup.store.get(storage_key(token_addr, _bal_key(account)))
    return int.from_bytes(raw, "big", signed=True) if raw else 0


def token_supply(rollup: RollupState, token_addr: str) -> int:
    from .rollup import storage_key

    raw = rollup.store.get(storage_key(token_addr, b"supply"))
    return int.from_bytes(raw, "big", signed=True) if raw else 0


# ---------------------------------------------------------------------------
# DAG-variant contracts (direct triggers)
# ---------------------------------------------------------------------------


def _xtoken_transfer(ctx: HandlerContext, args: tuple) -> None:
    recipient, amount = args
    _token_transfer(ctx, ctx.caller, recipient, amount)


def _xtoken_mint(ctx: HandlerContext, args: tuple) -> None:
    to, amount = args
    ctx.require(ctx.caller == GSC_ADDR, "only GSC")
    other = (ctx.get(b"cfg:other_token") or b"").decode()
    ctx.require(ctx.x_sender == other, "only the counterpart token can trigger mint")
    _token_mint(ctx, to, amount)


def _xtoken_burn(ctx: HandlerContext, args: tuple) -> None:
    to, amount = args
    _token_burn(ctx, ctx.caller, amount)
    other = (ctx.get(b"cfg:other_token") or b"").decode()
    ctx.trigger(other, encode_call("mint", [to, amount]))


def _fl_init(ctx: HandlerContext, args: tuple) -> None:
    amount, target, cd_target = args
    borrower = ctx.caller
    ctx.require(_get_int(ctx, b"busy") == 0, "loan in progress")
    _set_int(ctx, b"busy", 1)
    token = (ctx.get(b"cfg:token") or b"").decode()
    bal_before = _get_int(ctx, _bal_key(ctx.contract), contract=token)
    ctx.call(token, encode_call("transfer", [borrower, amount]))
    ctx.call(target, cd_target)
    other_fl = (ctx.get(b"cfg:other_fl") or b"").decode()
    ctx.trigger(other_fl, encode_call("react", [ctx.contract, borrower, bal_before]))


def _fl_react(ctx: HandlerContext, args: tuple) -> None:
    o_fl_addr, borrower, bal_before = args
    ctx.require(ctx.caller == GSC_ADDR, "only GSC")
    other_fl = (ctx.get(b"cfg:other_fl") or b"").decode()
    ctx.require(ctx.x_sender == other_fl, "react: bad cross sender")
    ctx.require(_get_int(ctx, b"busy") == 0, "loan in progress")
    ctx.trigger(o_fl_addr, encode_call("complete", [borrower, bal_before]))


def _fl_complete(ctx: HandlerContext, args: tuple) -> None:
    borrower, bal_before = args
    ctx.require(ctx.caller == GSC_ADDR, "only GSC")
    other_fl = (ctx.get(b"cfg:other_fl") or b"").decode()
    ctx.require(ctx.x_sender == other_fl, "complete: bad cross sender")
    ctx.require(_get_int(ctx, b"busy") == 1, "no loan in progress")
    token = (ctx.get(b"cfg:token") or b"").decode()
    bal_after = _get_int(ctx, _bal_key(ctx.contract), contract=token)
    ctx.require(bal_after >= bal_before, "loan not repaid")
    _set_int(ctx, b"busy", 0)


def _user_simple_xfl(ctx: HandlerContext, args: tuple) -> None:
    amount, arb_addr, cd_arb = args
    fl = (ctx.get(b"cfg:fl") or b"").decode()
    cd_step1 = encode_call("step1", [amount, arb_addr, cd_arb])
    ctx.call(fl, encode_call("init", [amount, ctx.contract, cd_step1]))


def _user_step1(ctx: HandlerContext, args: tuple) -> None:
    amount, arb_addr, cd_arb = args
    token = (ctx.get(b"cfg:token") or b"").decode()
    other_user = (ctx.get(b"cfg:other_user") or b"").decode()
    ctx.call(token, encode_call("burn", [other_user, amount]))
    ctx.trigger(other_user, encode_call("step2", [amount, arb_addr, cd_arb]))


def _user_step2(ctx: HandlerContext, args: tuple) -> None:
    amount, arb_addr, cd_arb = args
    ctx.require(ctx.caller == GSC_ADDR, "only GSC")
    other_user = (ctx.get(b"cfg:other_user") or b"").decode()
    ctx.require(ctx.x_sender == other_user, "step2: bad cross sender")
    token = (ctx.get(b"cfg:token") or b"").decode()
    ctx.call(arb_addr, cd_arb)
    # Burn back whatever the arbitrage left us (the post-arbitrage amount).
    post_bal = _get_int(ctx, _bal_key(ctx.contract), contract=token)
    ctx.call(token, encode_call("burn", [other_user, post_bal]))
    ctx.trigger(other_user, encode_call("step3", [amount]))


def _user_step3(ctx: HandlerContext, args: tuple) -> None:
    (amount,) = args
    ctx.require(ctx.caller == GSC_ADDR, "only GSC")
    other_user = (ctx.get(b"cfg:other_user") or b"").decode()
    ctx.require(ctx.x_sender == other_user, "step3: bad cross sender")
    token = (ctx.get(b"cfg:token") or b"").decode()
    fl = (ctx.get(b"cfg:fl") or b"").decode()
    bal = _get_int(ctx, _bal_key(ctx.contract), contract=token)
    # Return the borrowed amount; keep any profit. A shortfall repays what
    # is left and the pool check in complete() rejects the loan.
    ctx.call(token, encode_call("transfer", [fl, min(amount, bal)]))


def _arb_trade(ctx: HandlerContext, args: tuple) -> None:
    # The caller has transferred `received` to us; send back received+delta
    # from our own reserve. Opaque stand-in for real arbitrage logic.
    received, delta = args
    token = (ctx.get(b"cfg:token") or b"").decode()
    ctx.call(token, encode_call("transfer", [ctx.caller, received + delta]))


def _relay_hop(ctx: HandlerContext, args: tuple) -> None:
    tag = args[0]
    n = args[1]
    key = b"count:" + tag.encode()
    _set_int(ctx, key, _get_int(ctx, key) + 1)
    for i in range(n):
        addr = args[2 + 2 * i]
        cdata = args[3 + 2 * i]
        ctx.trigger(addr, cdata)


def _ping(ctx: HandlerContext, args: tuple) -> None:
    tag = args[0] if args else "ping"
    key = b"count:" + str(tag).encode()
    _set_int(ctx, key, _get_int(ctx, key) + 1)


# ---------------------------------------------------------------------------
# Chain-variant contracts (continuation driven)
# ---------------------------------------------------------------------------


def _demo_mark(ctx: HandlerContext, args: tuple) -> None:
    (tag,) = args
    key = b"count:" + tag.encode()
    _set_int(ctx, key, _get_int(ctx, key) + 1)


def _demo_fail(ctx: HandlerContext, args: tuple) -> None:
    ctx.require(False, "configured to fail")


def _ctoken_transfer(ctx: HandlerContext, args: tuple) -> None:
    recipient, amount = args
    _token_transfer(ctx, ctx.caller, recipient, amount)


def _ctoken_burn(ctx: HandlerContext, args: tuple) -> None:
    # Chain variant: the successor mint travels via the session entry point
    # or the calldata continuation, never via a direct trigger here.
    _to, amount = args
    _token_burn(ctx, ctx.caller, amount)


def _ctoken_mint(ctx: HandlerContext, args: tuple) -> None:
    to, amount = args
    ctx.require(ctx.caller == GSC_ADDR, "only GSC")
    other = (ctx.get(b"cfg:other_token") or b"").decode()
    ctx.require(ctx.x_sender == other, "only the counterpart token can trigger mint")
    _token_mint(ctx, to, amount)


# ---------------------------------------------------------------------------
# Deployment
# ---------------------------------------------------------------------------


def _set_config(rollup: RollupState, addr: str, key: bytes, value: str) -> None:
    from .rollup import storage_key

    rollup.store[storage_key(addr, key)] = value.encode()


def _seed_balance(rollup: RollupState, token_addr: str, account: str, amount: int) -> None:
    from .rollup import storage_key

    rollup.store[storage_key(token_addr, _bal_key(account))] = amount.to_bytes(
        16, "big", signed=True
    )
    key = storage_key(token_addr, b"supply")
    cur = int.from_bytes(rollup.store.get(key, b"\x00"), "big", signed=True)
    rollup.store[key] = (cur + amount).to_bytes(16, "big", signed=True)


def deploy_dag_apps(rollup: RollupState, balances: dict[str, int] | None = None) -> None:
    """Register the token / flash loan / user / arbitrage contracts."""
    rollup.register(TOKEN, "transfer", _xtoken_transfer)
    rollup.register(TOKEN, "mint", _xtoken_mint)
    rollup.register(TOKEN, "burn", _xtoken_burn)
    rollup.register(FLASH_LOAN, "init", _fl_init)
    rollup.register(FLASH_LOAN, "react", _fl_react)
    rollup.register(FLASH_LOAN, "complete", _fl_complete)
    rollup.register(USER_FL, "simple_xfl", _user_simple_xfl)
    rollup.register(USER_FL, "step1", _user_step1)
    rollup.register(USER_FL, "step2", _user_step2)
    rollup.register(USER_FL, "step3", _user_step3)
    rollup.register(ARB, "trade", _arb_trade)
    # One-time setup: each contract knows its counterpart and collaborators.
    _set_config(rollup, TOKEN, b"cfg:other_token", TOKEN)
    _set_config(rollup, FLASH_LOAN, b"cfg:other_fl", FLASH_LOAN)
    _set_config(rollup, FLASH_LOAN, b"cfg:token", TOKEN)
    _set_config(rollup, USER_FL, b"cfg:other_user", USER_FL)
    _set_config(rollup, USER_FL, b"cfg:token", TOKEN)
    _set_config(rollup, USER_FL, b"cfg:fl", FLASH_LOAN)
    _set_config(rollup, ARB, b"cfg:token", TOKEN)
    for account, amount in (balances or {}).items():
        _seed_balance(rollup, TOKEN, account, amount)


def deploy_relay(rollup: RollupState) -> None:
    rollup.register(RELAY, "hop", _relay_hop)
    rollup.register(RELAY, "ping", _ping)


def deploy_chain_demo(rollup: RollupState) -> None:
    rollup.register(DEMO, "mark", chainable(_demo_mark))
    rollup.register(DEMO, "fail", chainable(_demo_fail))
    rollup.register(DEMO, "mark_local", _demo_mark)


def deploy_chain_token(rollup: RollupState, balances: dict[str, int] | None = None) -> None:
    rollup.register(CHAIN_TOKEN, "transfer", _ctoken_transfer)
    rollup.register(CHAIN_TOKEN, "burn", chainable(_ctoken_burn))
    rollup.register(CHAIN_TOKEN, "mint", chainable(_ctoken_mint))
    _set_config(rollup, CHAIN_TOKEN, b"cfg:other_token", CHAIN_TOKEN)
    for account, amount in (balances or {}).items():
        _seed_balance(rollup, CHAIN_TOKEN, account, amount)


def mark_count(rollup: RollupState, contract: str, tag: str) -> int:
    from .rollup import storage_key

    raw = rollup.store.get(storage_key(contract, b"count:" + tag.encode()))
    return int.from_bytes(raw, "big", signed=True) if raw else 0


# ---------------------------------------------------------------------------
# Expected flash-loan CRT (the DAG the honest execution realizes)
# ---------------------------------------------------------------------------


def build_flash_loan_crt(
    amount: int,
    delta: int,
    pool_before: int,
    source_rollup: int = 1,
) -> DagCrt:
    """DAG CRT realized by ``xuser.simple_xfl(amount, arb, trade(amount, delta))``.

    The borrow transaction emits three triggers (the token's mint, the
    user's next step, the pool's react); the triggered bundle on the far
    rollup emits three more back (mint, repay step, pool check).
    """
    r1 = source_rollup
    r2 = other_rollup(source_rollup)
    cd_arb = encode_call("trade", [amount, delta])
    post_bal = amount + delta

    a1 = DagAction(
        descs=(
            ActionDesc(r1, USER_FL, encode_call("simple_xfl", [amount, ARB, cd_arb])),
        ),
        descs_next=(
            ActionDesc(r2, TOKEN, encode_call("mint", [USER_FL, amount])),
            ActionDesc(r2, USER_FL, encode_call("step2", [amount, ARB, cd_arb])),
            ActionDesc(r2, FLASH_LOAN, encode_call("react", [FLASH_LOAN, USER_FL, pool_before])),
        ),
    )
    a2 = DagAction(
        descs=a1.descs_next,
        descs_next=(
            ActionDesc(r1, TOKEN, encode_call("mint", [USER_FL, post_bal])),
            ActionDesc(r1, USER_FL, encode_call("step3", [amount])),
            ActionDesc(r1, FLASH_LOAN, encode_call("complete", [USER_FL, pool_before])),
        ),
    )
    a3 = DagAction(descs=a2.descs_next, descs_next=())
    return DagCrt(actions=(a1, a2, a3))


def build_relay_dag_crt(
    shape: Sequence[Sequence[int]],
    tag: str,
    source_rollup: int = 1,
) -> DagCrt:
    """Synthetic DAG CRT over the relay contract.

    ``shape[i][j]`` is the number of successors triggered by sub-action j
    of action i; the entry action has exactly one sub-action and row sums
    must match the next row's width.
    """
    n = len(shape)
    if n == 0 or len(shape[0]) != 1:
        raise ValueError("entry action must have exactly one sub-action")
    for i in range(n - 1):
        if sum(shape[i]) != len(shape[i + 1]):
            raise ValueError(f"row {i} fan-out does not match row {i + 1} width")
    if any(k != 0 for k in shape[-1]):
        raise ValueError("last action must not trigger")

    rid = source_rollup if n % 2 == 1 else other_rollup(source_rollup)
    # Build back to front: each sub-action embeds its successors' calls.
    rows: list[tuple[ActionDesc, ...]] = []
    next_row: tuple[ActionDesc, ...] = ()
    for i in range(n - 1, -1, -1):
        row: list[ActionDesc] = []
        consumed = 0
        for j, fanout in enumerate(shape[i]):
            succ = next_row[consumed : consumed + fanout]
            consumed += fanout
            args: list = [f"{tag}-{i}-{j}", fanout]
            for d in succ:
                args.extend([d.addr, d.cdata])
            row.append(ActionDesc(rid, RELAY, encode_call("hop", args)))
        rows.append(tuple(row))
        next_row = tuple(row)
        rid = other_rollup(rid)
    rows.reverse()
    actions = tuple(
        DagAction(descs=rows[i], descs_next=rows[i + 1] if i < n - 1 else ())
        for i in range(n)
    )
    return DagCrt(actions=actions)
