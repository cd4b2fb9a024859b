"""The shared executor: off-chain recursive execution, batch assembly,
adversarial strategies, and the client side of the L1 two-phase commit.

Off-chain execution (honest path): a user transaction enters through
``entry_point``, which checkpoints both rollups, runs the recursive
execution, and restores both checkpoints if anything fails. The recursion
executes a transaction, reads its trigger events, wraps them into the
other rollup's system-contract action call (one event per call in the
chain model; the whole bundle in one call in the DAG model), and recurses
until a transaction triggers nothing.

Adversarial strategies never alter user-signed content; they only
reorder, drop, split, or substitute the executor-controlled dispatches:

- ``fig2_reorder``      run the last action of a 3-action chain first
- ``full_reverse``      run all pieces in fully reversed order
- ``drop_action``       omit one piece, forging the rest
- ``nonce_forgery``     reversed order with the source entering through
                        the raw trigger instead of the session entry
- ``split_action_dag``  split one triggered bundle across two action calls
- ``cross_pair_2pc``    execute honestly but mis-pair digests in the 2PC

The 2PC driver submits: leader update, follower update, leader commit,
follower commit (4 rounds end to end with the default bridge delay), or
the abort sequence when a commit is impossible. On a revert it retries
once with refreshed bridge evidence, then aborts. When L1 rejects a
batch, the executor re-syncs its rollups to the accepted digests.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

from .bridge import Bridge, build_attribute_proofs
from .l1vsm import (
    CEvd,
    L1System,
    LocEvd,
    PcEvd,
    Status,
    VProof,
    Vsm,
    decision_key,
    get_index,
    get_leader,
    vsm_attr_key,
)
from .model import (
    ActionTx,
    CallTx,
    ChainSourceTx,
    CompiledChainCrt,
    CompiledDagCrt,
    DagActionTx,
    DagSourceTx,
    ROLLUP_IDS,
    TriggerSourceTx,
    Tx,
    other_rollup,
)
from .rollup import RollupSnapshot, RollupState, TxResult
from .trace import TraceLog

# Strategy kinds
HONEST = "honest"
FIG2_REORDER = "fig2_reorder"
FULL_REVERSE = "full_reverse"
DROP_ACTION = "drop_action"
NONCE_FORGERY = "nonce_forgery"
SPLIT_ACTION_DAG = "split_action_dag"
CROSS_PAIR_2PC = "cross_pair_2pc"

STRATEGY_KINDS = (
    HONEST,
    FIG2_REORDER,
    FULL_REVERSE,
    DROP_ACTION,
    NONCE_FORGERY,
    SPLIT_ACTION_DAG,
    CROSS_PAIR_2PC,
)


class StrategyError(Exception):
    """The strategy does not apply to the workload shape."""


@dataclass(frozen=True)
class Strategy:
    kind: str = HONEST
    index: int | None = None  # drop target / split depth, where applicable


WorkItem = Union[CallTx, CompiledChainCrt, CompiledDagCrt]


@dataclass
class TxRecord:
    position: int
    tx: Tx
    result: TxResult
    rolled_back: bool = False


@dataclass
class PendingBatch:
    rollup_id: int
    pre_digest: bytes
    pre_snapshot: RollupSnapshot
    txs: tuple[Tx, ...] = ()
    results: tuple[TxResult, ...] = ()
    post_digest: bytes = b""
    records: tuple[TxRecord, ...] = ()


@dataclass(frozen=True)
class InstanceReport:
    """Terminal record of one digest-pair submission."""

    outcome: str  # committed | aborted | local | stalled | failed
    leader: int | None
    start_round: int
    precommit_round: int | None
    end_round: int
    reverts: tuple[str, ...] = ()
    per_chain_rounds: dict[int, int] | None = None

    @property
    def rounds_used(self) -> int:
        return self.end_round - self.start_round + 1


def verify_validity(current_digest: bytes, vproof: VProof, new_digest: bytes) -> bool:
    """Reference replay standing in for the rollup validity proof."""
    sim = RollupState.from_snapshot(vproof.pre_snapshot)
    if sim.compute_digest() != current_digest:
        return False
    for tx in vproof.txs:
        res = sim.execute_tx(tx, is_executor=isinstance(tx, (ActionTx, DagActionTx)))
        if not res.status:
            return False
    return sim.compute_digest() == new_digest


def build_l1(
    rollups: dict[int, RollupState], finality_delay: int = 1, trace: TraceLog | None = None
) -> L1System:
    """L1 chains plus VSMs initialized from the rollups' genesis state."""
    vsms = {}
    for rid, rollup in rollups.items():
        vsms[rid] = Vsm(
            vsm_id=rid,
            other_id=other_rollup(rid),
            genesis_digest=rollup.compute_digest(),
            genesis_trig_root=rollup.gsc.trig_tree.root,
            genesis_act_root=rollup.gsc.act_tree.root,
            validity_checker=verify_validity,
        )
    return L1System(vsms, Bridge(finality_delay), trace)


def _describe_tx(tx: Tx) -> dict:
    info: dict = {"kind": type(tx).__name__, "rollup": tx.rollup_id}
    if isinstance(tx, DagActionTx):
        info["bundle"] = [(s, a) for s, a, _ in tx.trig_data]
        info["sid"] = tx.sid
    else:
        info["addr"] = tx.addr
        if isinstance(tx, ActionTx):
            info["sid"] = tx.sid
    return info


class Executor:
    def __init__(
        self,
        rollups: dict[int, RollupState],
        variant: str,
        trace: TraceLog | None = None,
    ):
        self.rollups = rollups
        self.variant = variant
        self.trace = trace
        self._batch_txs: dict[int, list[tuple[Tx, TxResult]]] = {}
        self._records: dict[int, list[TxRecord]] = {}
        self._pre: dict[int, tuple[bytes, RollupSnapshot]] = {}
        self._touched: set[int] = set()

    # -- batch lifecycle -----------------------------------------------------

    def begin_batch(self) -> None:
        self._batch_txs = {rid: [] for rid in self.rollups}
        self._records = {rid: [] for rid in self.rollups}
        self._pre = {
            rid: (r.compute_digest(), r.snapshot()) for rid, r in self.rollups.items()
        }

    def seal_batch(self) -> dict[int, PendingBatch]:
        batches = {}
        for rid, rollup in self.rollups.items():
            pre_digest, pre_snapshot = self._pre[rid]
            txs = tuple(tx for tx, _ in self._batch_txs[rid])
            results = tuple(res for _, res in self._batch_txs[rid])
            batches[rid] = PendingBatch(
                rollup_id=rid,
                pre_digest=pre_digest,
                pre_snapshot=pre_snapshot,
                txs=txs,
                results=results,
                post_digest=rollup.compute_digest(),
                records=tuple(self._records[rid]),
            )
            if self.trace is not None:
                self.trace.emit(
                    "batch_sealed",
                    rollup=rid,
                    n_txs=len(txs),
                    pre_digest=pre_digest,
                    post_digest=batches[rid].post_digest,
                )
        return batches

    # -- execution and recording ------------------------------------------------

    def _execute_and_record(self, tx: Tx) -> TxResult:
        rollup = self.rollups[tx.rollup_id]
        res = rollup.execute_tx(tx, is_executor=isinstance(tx, (ActionTx, DagActionTx)))
        rec = TxRecord(position=len(self._records[tx.rollup_id]), tx=tx, result=res)
        self._records[tx.rollup_id].append(rec)
        if res.status:
            self._batch_txs[tx.rollup_id].append((tx, res))
        if self.trace is not None:
            self.trace.emit(
                "tx_executed",
                status=res.status,
                error=res.error,
                n_events=len(res.events),
                **_describe_tx(tx),
            )
            for rec_i in res.inserts:
                self.trace.emit(
                    "tree_insert",
                    rollup=tx.rollup_id,
                    tree=rec_i.tree,
                    addr=rec_i.addr,
                    nonce=rec_i.nonce,
                    sid=rec_i.sid,
                    leaf=rec_i.leaf,
                )
        return res

    # -- honest recursive execution ------------------------------------------------

    def entry_point(self, tx: Tx) -> bool:
        """Checkpoint all rollups, execute recursively, restore all on failure."""
        checkpoints = {rid: r.checkpoint() for rid, r in self.rollups.items()}
        marks = {rid: len(self._batch_txs[rid]) for rid in self.rollups}
        rec_marks = {rid: len(self._records[rid]) for rid in self.rollups}
        self._touched = {tx.rollup_id}
        ok = self.xevm(tx)
        if not ok:
            for rid, rollup in self.rollups.items():
                rollup.restore(checkpoints[rid])
                del self._batch_txs[rid][marks[rid] :]
                for rec in self._records[rid][rec_marks[rid] :]:
                    rec.rolled_back = True
            if self.trace is not None:
                self.trace.emit("entry_point_rolled_back", rollup=tx.rollup_id)
        return ok

    def xevm(self, tx: Tx) -> bool:
        """Execute a transaction, then recursively its triggered successor(s)."""
        res = self._execute_and_record(tx)
        if not res.status:
            return False
        if not res.events:
            return True
        target = other_rollup(tx.rollup_id)
        assert target in ROLLUP_IDS and target != tx.rollup_id
        if self.variant == "dag":
            wrap: Tx = DagActionTx(
                rollup_id=target,
                trig_data=tuple((e.sender, e.addr, e.cdata) for e in res.events),
                sid=self._sid_for(target),
            )
        else:
            if len(res.events) != 1:
                return False  # the chain contract enforces one trigger per tx
            event = res.events[0]
            wrap = ActionTx(
                rollup_id=target,
                sender=event.sender,
                addr=event.addr,
                cdata=event.cdata,
                sid=self._sid_for(target),
            )
        return self.xevm(wrap)

    def _sid_for(self, target: int) -> int | None:
        """Session id for the next action call: a new session on first touch
        of the target contract, the current one afterwards."""
        if self.variant == "svs":
            return None
        gsc = self.rollups[target].gsc
        if target in self._touched:
            return gsc.session_nonce
        self._touched.add(target)
        return gsc.session_nonce + 1

    def _greedy_sid(self, target: int) -> int | None:
        """Best valid session id available to an adversarial dispatch."""
        if self.variant == "svs":
            return None
        gsc = self.rollups[target].gsc
        return gsc.session_nonce if gsc.session_active else gsc.session_nonce + 1

    # -- strategies ------------------------------------------------------------

    def apply_strategy(self, strategy: Strategy, workload: Sequence[WorkItem]) -> dict[int, PendingBatch]:
        """Execute the workload under a strategy and seal the pending batches."""
        if strategy.kind not in STRATEGY_KINDS:
            raise StrategyError(f"unknown strategy {strategy.kind!r}")
        self.begin_batch()
        manipulated = False
        for item in workload:
            if isinstance(item, CallTx):
                self._execute_and_record(item)
                continue
            if strategy.kind in (HONEST, CROSS_PAIR_2PC):
                self.entry_point(item.source_tx)
                continue
            if isinstance(item, CompiledChainCrt) and not manipulated:
                manipulated = True
                self._apply_chain_strategy(strategy, item)
            elif isinstance(item, CompiledDagCrt) and not manipulated:
                if strategy.kind != SPLIT_ACTION_DAG:
                    raise StrategyError(
                        f"{strategy.kind} applies to chain CRTs, got a DAG CRT"
                    )
                manipulated = True
                self._split_dag(item, strategy.index)
            else:
                self.entry_point(item.source_tx)
        if strategy.kind not in (HONEST, CROSS_PAIR_2PC) and not manipulated:
            raise StrategyError(f"no CRT in the workload for {strategy.kind}")
        return self.seal_batch()

    def _apply_chain_strategy(self, strategy: Strategy, item: CompiledChainCrt) -> None:
        n = len(item.actions)
        if strategy.kind == FIG2_REORDER:
            if n != 3:
                raise StrategyError("the reorder attack needs a 3-action chain")
            self._dispatch_pieces(item, [3, 1, 2])
        elif strategy.kind == FULL_REVERSE:
            self._dispatch_pieces(item, list(range(n, 0, -1)))
        elif strategy.kind == DROP_ACTION:
            if strategy.index is None or not 1 <= strategy.index <= n:
                raise StrategyError("drop_action needs an index in 1..n")
            order = [i for i in range(1, n + 1) if i != strategy.index]
            self._dispatch_pieces(item, order)
        elif strategy.kind == NONCE_FORGERY:
            if n < 3:
                raise StrategyError("nonce forgery needs a chain of length >= 3")
            self._dispatch_pieces(item, list(range(n, 0, -1)), improper_source=True)
        else:
            raise StrategyError(f"{strategy.kind} does not apply to chain CRTs")

    def _dispatch_pieces(
        self,
        item: CompiledChainCrt,
        order: Sequence[int],
        improper_source: bool = False,
    ) -> None:
        """Dispatch CRT pieces in a chosen order, forging action wrappers from
        CRT knowledge and ignoring emitted events (contents are never altered)."""
        for i in order:
            if i == 1:
                src = item.source_tx
                if improper_source and isinstance(src, ChainSourceTx):
                    src = TriggerSourceTx(
                        rollup_id=src.rollup_id,
                        sender=src.sender,
                        addr=src.addr,
                        cdata=src.cdata,
                        next_addr=src.next_addr,
                        next_cdata=src.next_cdata,
                    )
                self._execute_and_record(src)
            else:
                action = item.actions[i - 1]
                sender = item.actions[i - 2].desc.addr
                self._execute_and_record(
                    ActionTx(
                        rollup_id=action.desc.rollup_id,
                        sender=sender,
                        addr=action.desc.addr,
                        cdata=action.desc.cdata,
                        sid=self._greedy_sid(action.desc.rollup_id),
                    )
                )

    def _split_dag(self, item: CompiledDagCrt, split_at: int | None) -> None:
        """Honest-order DAG execution, but one triggered bundle is split
        across two consecutive action calls."""
        if self.variant != "dag":
            raise StrategyError("split_action_dag needs the DAG variant")
        sizes = [len(a.descs) for a in item.crt.actions]
        eligible = [i + 1 for i, size in enumerate(sizes) if i >= 1 and size >= 2]
        if split_at is None:
            if not eligible:
                raise StrategyError("no splittable bundle in the CRT")
            split_at = eligible[0]
        elif split_at not in eligible:
            raise StrategyError(f"action {split_at} has no splittable bundle")

        res = self._execute_and_record(item.source_tx)
        events = res.events if res.status else ()
        rollup_id = item.source_tx.rollup_id
        depth = 2
        while events:
            target = other_rollup(rollup_id)
            trig = tuple((e.sender, e.addr, e.cdata) for e in events)
            if depth == split_at:
                mid = len(trig) // 2
                first = self._execute_and_record(
                    DagActionTx(target, trig[:mid], self._greedy_sid(target))
                )
                second = self._execute_and_record(
                    DagActionTx(target, trig[mid:], self._greedy_sid(target))
                )
                events = (first.events if first.status else ()) + (
                    second.events if second.status else ()
                )
            else:
                res = self._execute_and_record(
                    DagActionTx(target, trig, self._greedy_sid(target))
                )
                events = res.events if res.status else ()
            rollup_id = target
            depth += 1

    # -- 2PC driving ---------------------------------------------------------------

    def _build_vproof(self, batch: PendingBatch) -> VProof:
        return VProof(pre_snapshot=batch.pre_snapshot, txs=batch.txs)

    def _build_loc_evd(self, rid: int) -> LocEvd:
        proofs = {}
        for name in ("trig_root", "act_root", "session_nonce", "entry_nonce"):
            _, proof = self.rollups[rid].prove_attribute(name)
            proofs[name] = proof
        return LocEvd(proofs=proofs)

    def _ovsm_evidence(
        self, l1: L1System, source_cid: int, header_round: int, include_decision: bytes | None
    ) -> tuple[dict[bytes, bytes], dict]:
        attrs = l1.bridge.header_attrs(source_cid, header_round)
        keys = [
            vsm_attr_key(n)
            for n in (
                "id",
                "status",
                "digest",
                "temp_digest",
                "index",
                "trig_root_p",
                "act_root_p",
                "session_nonce_p",
                "entry_nonce_p",
            )
        ]
        if include_decision is not None and decision_key(include_decision) in attrs:
            keys.append(decision_key(include_decision))
        claimed = {k: attrs[k] for k in keys}
        proofs = build_attribute_proofs(attrs, keys)
        return claimed, proofs

    def _wait_relayable(self, l1: L1System, header_round: int) -> None:
        # The next submission runs at round l1.round + 1.
        while header_round > (l1.round + 1) - l1.bridge.finality_delay:
            l1.idle_round()

    def _is_local_batch(self, batch: PendingBatch) -> bool:
        gsc_now = self.rollups[batch.rollup_id].gsc
        gsc_pre = batch.pre_snapshot.gsc
        return (
            gsc_now.trig_tree.root == gsc_pre.trig_tree.root
            and gsc_now.act_tree.root == gsc_pre.act_tree.root
        )

    def _resync_rejected(self, l1: L1System, batches: dict[int, PendingBatch]) -> None:
        """Re-sync rollups whose batch L1 did not accept back to the accepted state."""
        for rid, batch in batches.items():
            if l1.vsms[rid].digest != batch.post_digest:
                rollup = self.rollups[rid]
                rollup.store = dict(batch.pre_snapshot.store)
                rollup.gsc = batch.pre_snapshot.gsc.copy()

    def drive_2pc(
        self,
        l1: L1System,
        batches: dict[int, PendingBatch],
        strategy: Strategy | None = None,
    ) -> InstanceReport:
        reverts: list[str] = []
        start_round = l1.round + 1
        d_new = {rid: batches[rid].post_digest for rid in batches}
        local = {rid: self._is_local_batch(batches[rid]) for rid in batches}
        cross_pair = strategy is not None and strategy.kind == CROSS_PAIR_2PC

        def finish(outcome, leader=None, precommit=None, per_chain=None) -> InstanceReport:
            report = InstanceReport(
                outcome=outcome,
                leader=leader,
                start_round=start_round,
                precommit_round=precommit,
                end_round=l1.round,
                reverts=tuple(reverts),
                per_chain_rounds=per_chain,
            )
            if outcome != "committed":
                self._resync_rejected(l1, batches)
            if self.trace is not None:
                self.trace.emit(
                    "instance",
                    outcome=outcome,
                    leader=leader,
                    start_round=start_round,
                    precommit_round=precommit,
                    end_round=l1.round,
                )
            return report

        # Local digests are accepted independently, one round per chain.
        per_chain: dict[int, int] = {}
        for rid in sorted(batches):
            if local[rid]:
                res = l1.submit(
                    rid,
                    "update_digest",
                    d_new[rid],
                    self._build_vproof(batches[rid]),
                    self._build_loc_evd(rid),
                    None,
                )
                if not res.accepted:
                    reverts.append(f"local update on chain {rid}: {res.error}")
                    return finish("failed")
                per_chain[rid] = 1
        non_local = [rid for rid in sorted(batches) if not local[rid]]
        if not non_local:
            return finish("local", per_chain=per_chain)

        # Pair the non-local digest(s): leader pre-commits and decides first.
        vsm1, vsm2 = l1.vsms[1], l1.vsms[2]
        index = get_index(vsm1.digest, d_new[1], vsm2.digest, d_new[2])
        leader = get_leader(index, 1, 2)
        follower = other_rollup(leader)

        def submit_update(cid: int, other_cid: int, lie: bool) -> bool:
            if local[cid]:
                return True  # already accepted on the local path
            for _ in range(2):  # one retry with refreshed evidence
                header_round = l1.last_change_round[other_cid]
                self._wait_relayable(l1, header_round)
                other_new = d_new[other_cid] if not lie else b"\x00" * 32
                claimed, proofs = self._ovsm_evidence(l1, other_cid, header_round, None)
                res = l1.submit(
                    cid,
                    "update_digest",
                    d_new[cid],
                    self._build_vproof(batches[cid]),
                    self._build_loc_evd(cid),
                    PcEvd(claimed, proofs, header_round, other_new),
                )
                if res.accepted:
                    return True
                reverts.append(f"update on chain {cid}: {res.error}")
            return False

        def submit_decide(cid: int, other_cid: int, fn: str, decision_index: bytes) -> bool:
            for _ in range(2):
                header_round = l1.last_change_round[other_cid]
                self._wait_relayable(l1, header_round)
                claimed, proofs = self._ovsm_evidence(
                    l1, other_cid, header_round, decision_index
                )
                res = l1.submit(cid, fn, CEvd(claimed, proofs, header_round))
                if res.accepted:
                    return True
                reverts.append(f"{fn} on chain {cid}: {res.error}")
            return False

        def abort_sequence(precommit) -> InstanceReport:
            instance = l1.vsms[leader].index or index
            if l1.vsms[leader].status == Status.PAIRED:
                if not submit_decide(leader, follower, "abort", instance):
                    return finish("failed", leader, precommit)
            if l1.vsms[follower].status == Status.PAIRED:
                if not submit_decide(follower, leader, "abort", instance):
                    return finish("failed", leader, precommit)
            return finish("aborted", leader, precommit)

        if not submit_update(leader, follower, lie=False):
            return finish("stalled", leader)
        precommit_round = l1.round if not local[leader] else None

        if not submit_update(follower, leader, lie=cross_pair):
            # The follower never paired; the leader may abort unconditionally.
            return abort_sequence(precommit_round)
        if precommit_round is None:
            precommit_round = l1.round

        instance_index = l1.vsms[leader].index or index
        if not submit_decide(leader, follower, "commit", instance_index):
            return abort_sequence(precommit_round)
        if not submit_decide(follower, leader, "commit", instance_index):
            return finish("failed", leader, precommit_round)
        return finish("committed", leader, precommit_round)
