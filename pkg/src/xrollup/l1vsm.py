"""Simulated L1 chains hosting the validator state machines (VSMs).

Each rollup is controlled by one VSM on its own L1 chain. A VSM holds
the rollup's accepted state digest and accepts a successor digest either
immediately (local digest: both system-contract tree roots unchanged) or
through a leader-based two-phase commit with the other chain's VSM:

  update_digest   Free -> Paired   (non-local; leader pre-commits first,
                                    the follower only after seeing the
                                    leader paired under the same index)
  commit          Paired -> Free   (leader checks the cross-matching tree
                                    roots and the nonce equation, records
                                    its decision; the follower follows the
                                    recorded decision)
  abort           Paired -> Free   (leader may abort only instances that
                                    are not committable; follower follows)

Every VSM call is one L1 transaction and consumes one global round; both
chains finalize a header per round. A revert leaves the VSM state exactly
as before the call (the round is still consumed). Evidence about the
other VSM is verified against bridge-relayed finalized headers only.

The 2PC instance index is the hash of the lexicographically sorted four
digests (old and new, both chains), so both VSMs derive the same index;
the leader is the lower VSM id when the index's first byte is even, else
the higher id. Decisions are recorded write-once per index.

Validity proofs are modeled as replay: the proof carries the pre-state
and the batch, and a trusted reference replay from the VSM's current
digest must reproduce the submitted digest.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

from .bridge import Bridge, HeaderUnavailable, verify_attributes_with_bridge
from .commitment import MembershipProof, hash_tuple, verify_member
from .model import Tx
from .rollup import RollupSnapshot, attribute_key


class VsmRevert(Exception):
    """A require failure inside a VSM call; the L1 transaction rolls back."""


def _require(condition: bool, reason: str) -> None:
    if not condition:
        raise VsmRevert(reason)


class Status(str, Enum):
    FREE = "free"
    PAIRED = "paired"


class Decision(str, Enum):
    COMMIT = "commit"
    ABORT = "abort"


def get_index(d1: bytes, d1_new: bytes, d2: bytes, d2_new: bytes) -> bytes:
    """2PC instance id: order-insensitive across the two VSMs' viewpoints."""
    return hash_tuple(sorted([d1, d1_new, d2, d2_new]))


def get_leader(index: bytes, id_a: int, id_b: int) -> int:
    lo, hi = min(id_a, id_b), max(id_a, id_b)
    return lo if index[0] & 1 == 0 else hi


# ---------------------------------------------------------------------------
# Evidence bundles
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class VProof:
    """Validity proof stand-in: pre-state plus the batch that produced the
    new digest."""

    pre_snapshot: RollupSnapshot
    txs: tuple[Tx, ...]


@dataclass(frozen=True)
class LocEvd:
    """Membership proofs for the four session attributes under the new digest."""

    proofs: dict[str, MembershipProof]  # trig_root, act_root, session_nonce, entry_nonce


@dataclass(frozen=True)
class PcEvd:
    ovsm: dict[bytes, bytes]
    proofs: dict[bytes, MembershipProof]
    header_round: int
    other_new_digest: bytes


@dataclass(frozen=True)
class CEvd:
    ovsm: dict[bytes, bytes]
    proofs: dict[bytes, MembershipProof]
    header_round: int


AbEvd = CEvd

ValidityChecker = Callable[[bytes, VProof, bytes], bool]


# ---------------------------------------------------------------------------
# VSM attribute serialization (what the hosting L1 chain commits to)
# ---------------------------------------------------------------------------

_STATUS_BYTES = {Status.FREE: b"F", Status.PAIRED: b"P"}
_DECISION_BYTES = {Decision.COMMIT: b"C", Decision.ABORT: b"A"}


def vsm_attr_key(name: str) -> bytes:
    return b"vsm:" + name.encode()


def decision_key(index: bytes) -> bytes:
    return b"vsm:decision:" + index.hex().encode()


def _u64(n: int) -> bytes:
    return n.to_bytes(8, "big")


@dataclass(frozen=True)
class OvsmView:
    """Typed view over a bridge-verified attribute set of the other VSM."""

    status: Optional[Status]
    digest: Optional[bytes]
    index: Optional[bytes]
    trig_root_p: Optional[bytes]
    act_root_p: Optional[bytes]
    session_nonce_p: Optional[int]
    entry_nonce_p: Optional[int]
    decisions: dict[bytes, Decision]

    @classmethod
    def from_claims(cls, claimed: dict[bytes, bytes]) -> "OvsmView":
        def get(name: str) -> Optional[bytes]:
            return claimed.get(vsm_attr_key(name))

        status_raw = get("status")
        status = {b"F": Status.FREE, b"P": Status.PAIRED}.get(status_raw or b"")
        index = get("index")
        nonce = get("session_nonce_p")
        entry = get("entry_nonce_p")
        decisions: dict[bytes, Decision] = {}
        for key, value in claimed.items():
            if key.startswith(b"vsm:decision:"):
                idx = bytes.fromhex(key[len(b"vsm:decision:") :].decode())
                decisions[idx] = Decision.COMMIT if value == b"C" else Decision.ABORT
        return cls(
            status=status,
            digest=get("digest"),
            index=index if index else None,
            trig_root_p=get("trig_root_p"),
            act_root_p=get("act_root_p"),
            session_nonce_p=int.from_bytes(nonce, "big") if nonce else None,
            entry_nonce_p=int.from_bytes(entry, "big") if entry else None,
            decisions=decisions,
        )


class Vsm:
    """Validator state machine; one per rollup, hosted on its own L1 chain."""

    def __init__(
        self,
        vsm_id: int,
        other_id: int,
        genesis_digest: bytes,
        genesis_trig_root: bytes,
        genesis_act_root: bytes,
        validity_checker: ValidityChecker,
    ):
        self.id = vsm_id
        self.other_id = other_id
        self.digest = genesis_digest
        self.temp_digest: bytes | None = None
        self.status = Status.FREE
        self.index: bytes | None = None
        # Current tree roots under the accepted digest (from setup, then
        # maintained on every accepted digest).
        self.trig_root = genesis_trig_root
        self.act_root = genesis_act_root
        # Attributes of the pending digest, stored while verifying evidence.
        self.trig_root_p = genesis_trig_root
        self.act_root_p = genesis_act_root
        self.session_nonce_p = 0
        self.entry_nonce_p = 0
        self.decisions: dict[bytes, Decision] = {}
        self._validity_checker = validity_checker

    # -- state capture ------------------------------------------------------

    def snapshot(self) -> dict:
        return {
            "digest": self.digest,
            "temp_digest": self.temp_digest,
            "status": self.status,
            "index": self.index,
            "trig_root": self.trig_root,
            "act_root": self.act_root,
            "trig_root_p": self.trig_root_p,
            "act_root_p": self.act_root_p,
            "session_nonce_p": self.session_nonce_p,
            "entry_nonce_p": self.entry_nonce_p,
            "decisions": dict(self.decisions),
        }

    def restore(self, snap: dict) -> None:
        self.digest = snap["digest"]
        self.temp_digest = snap["temp_digest"]
        self.status = snap["status"]
        self.index = snap["index"]
        self.trig_root = snap["trig_root"]
        self.act_root = snap["act_root"]
        self.trig_root_p = snap["trig_root_p"]
        self.act_root_p = snap["act_root_p"]
        self.session_nonce_p = snap["session_nonce_p"]
        self.entry_nonce_p = snap["entry_nonce_p"]
        self.decisions = dict(snap["decisions"])

    def attrs(self) -> dict[bytes, bytes]:
        """Attribute map the hosting chain's header commits to."""
        out = {
            vsm_attr_key("id"): _u64(self.id),
            vsm_attr_key("status"): _STATUS_BYTES[self.status],
            vsm_attr_key("digest"): self.digest,
            vsm_attr_key("temp_digest"): self.temp_digest or b"",
            vsm_attr_key("index"): self.index or b"",
            vsm_attr_key("trig_root_p"): self.trig_root_p,
            vsm_attr_key("act_root_p"): self.act_root_p,
            vsm_attr_key("session_nonce_p"): _u64(self.session_nonce_p),
            vsm_attr_key("entry_nonce_p"): _u64(self.entry_nonce_p),
        }
        for idx, decision in self.decisions.items():
            out[decision_key(idx)] = _DECISION_BYTES[decision]
        return out

    # -- protocol ------------------------------------------------------------

    def _leader(self) -> int:
        _require(self.index is not None, "no 2PC instance")
        return get_leader(self.index, self.id, self.other_id)

    def _verify_loc_evd(self, new_digest: bytes, loc_evd: LocEvd, env: "VsmEnv") -> None:
        """Verify and store the new digest's session attributes."""
        values: dict[str, bytes] = {}
        for name in ("trig_root", "act_root", "session_nonce", "entry_nonce"):
            proof = loc_evd.proofs.get(name)
            _require(proof is not None, f"missing proof for {name}")
            _require(proof.key == attribute_key(name), f"wrong key for {name}")
            ok = verify_member(new_digest, proof)
            env.count_rollup_proof()
            _require(ok, f"bad membership proof for {name}")
            values[name] = proof.value
        self.trig_root_p = values["trig_root"]
        self.act_root_p = values["act_root"]
        self.session_nonce_p = int.from_bytes(values["session_nonce"], "big")
        self.entry_nonce_p = int.from_bytes(values["entry_nonce"], "big")

    def update_digest(
        self,
        new_digest: bytes,
        vproof: VProof,
        loc_evd: LocEvd,
        pc_evd: PcEvd | None,
        env: "VsmEnv",
    ) -> str:
        _require(self.status == Status.FREE, "not free")
        _require(
            self._validity_checker(self.digest, vproof, new_digest),
            "validity proof rejected",
        )
        self._verify_loc_evd(new_digest, loc_evd, env)
        if self.trig_root_p == self.trig_root and self.act_root_p == self.act_root:
            # Local digest: accepted with single-round finality.
            self.digest = new_digest
            return "local"
        _require(pc_evd is not None, "non-local digest needs pre-commit evidence")
        self._ver_precom_evd(new_digest, pc_evd, env)
        self.temp_digest = new_digest
        self.status = Status.PAIRED
        return "paired"

    def _ver_precom_evd(self, new_digest: bytes, pc_evd: PcEvd, env: "VsmEnv") -> None:
        view = env.verify_ovsm(self.other_id, pc_evd.header_round, pc_evd.ovsm, pc_evd.proofs)
        _require(view.digest is not None, "snapshot lacks the other digest")
        self.index = get_index(self.digest, new_digest, view.digest, pc_evd.other_new_digest)
        if self._leader() == self.id:
            _require(view.status == Status.FREE, "other VSM is not free")
        else:
            _require(view.status == Status.PAIRED, "leader has not pre-committed")
            _require(view.index == self.index, "leader paired under a different index")

    def _commit_checks_pass(self, view: OvsmView) -> bool:
        return (
            view.status == Status.PAIRED
            and view.index == self.index
            and self.trig_root_p == view.act_root_p
            and self.act_root_p == view.trig_root_p
            and view.session_nonce_p == self.session_nonce_p
            and view.entry_nonce_p is not None
            and self.entry_nonce_p + view.entry_nonce_p == self.session_nonce_p
        )

    def commit(self, c_evd: CEvd, env: "VsmEnv") -> str:
        _require(self.status == Status.PAIRED, "not paired")
        view = env.verify_ovsm(self.other_id, c_evd.header_round, c_evd.ovsm, c_evd.proofs)
        if self._leader() == self.id:
            _require(view.status == Status.PAIRED, "other VSM is not paired")
            _require(view.index == self.index, "other VSM paired under a different index")
            _require(self.trig_root_p == view.act_root_p, "trigger/action roots do not match")
            _require(self.act_root_p == view.trig_root_p, "action/trigger roots do not match")
            _require(
                view.session_nonce_p == self.session_nonce_p,
                "session nonces disagree",
            )
            _require(
                view.entry_nonce_p is not None
                and self.entry_nonce_p + view.entry_nonce_p == self.session_nonce_p,
                "entry nonce sum does not equal the session nonce",
            )
            _require(self.index not in self.decisions, "instance already decided")
            self.decisions[self.index] = Decision.COMMIT
        else:
            _require(
                view.decisions.get(self.index) == Decision.COMMIT,
                "leader has not recorded a commit decision",
            )
        self.digest = self.temp_digest
        self.temp_digest = None
        self.trig_root = self.trig_root_p
        self.act_root = self.act_root_p
        self.status = Status.FREE
        return "committed"

    def abort(self, ab_evd: AbEvd, env: "VsmEnv") -> str:
        _require(self.status == Status.PAIRED, "not paired")
        view = env.verify_ovsm(self.other_id, ab_evd.header_round, ab_evd.ovsm, ab_evd.proofs)
        if self._leader() == self.id:
            prior = self.decisions.get(self.index)
            _require(prior != Decision.COMMIT, "instance already committed")
            if prior is None:
                # An abort must be justified: only instances whose commit
                # checks cannot pass may be aborted.
                _require(not self._commit_checks_pass(view), "instance is committable")
                self.decisions[self.index] = Decision.ABORT
        else:
            _require(
                view.decisions.get(self.index) == Decision.ABORT,
                "leader has not recorded an abort decision",
            )
        # Roll back to the original digest.
        self.temp_digest = None
        self.status = Status.FREE
        return "aborted"


# ---------------------------------------------------------------------------
# Round-based L1 scheduler
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SubmitResult:
    accepted: bool
    info: str | None = None
    error: str | None = None
    round: int = 0
    rollup_proofs: int = 0
    bridge_proofs: int = 0


class VsmEnv:
    """Per-call environment: bridge access and proof accounting."""

    def __init__(self, system: "L1System", chain_id: int):
        self._system = system
        self.chain_id = chain_id
        self.rollup_proofs = 0
        self.bridge_proofs = 0

    @property
    def current_round(self) -> int:
        return self._system.round

    def count_rollup_proof(self) -> None:
        self.rollup_proofs += 1

    def _count_bridge_proof(self) -> None:
        self.bridge_proofs += 1

    def verify_ovsm(
        self,
        source_chain: int,
        header_round: int,
        claimed: dict[bytes, bytes],
        proofs: dict[bytes, MembershipProof],
    ) -> OvsmView:
        try:
            header = self._system.bridge.relay(source_chain, header_round, self.current_round)
        except HeaderUnavailable as e:
            raise VsmRevert(f"header not available: {e}") from None
        ok = verify_attributes_with_bridge(header, claimed, proofs, self._count_bridge_proof)
        _require(ok, "bridge attribute verification failed")
        return OvsmView.from_claims(claimed)


class L1System:
    """Two L1 chains in lockstep under one global round clock.

    One VSM call consumes one round; both chains finalize a header every
    round. Reverted calls consume their round but leave the VSM unchanged.
    """

    def __init__(self, vsms: dict[int, Vsm], bridge: Bridge, trace=None):
        self.vsms = vsms
        self.bridge = bridge
        self.trace = trace
        self.round = 0
        self.last_change_round: dict[int, int] = {cid: 0 for cid in vsms}
        self._finalize_round()

    def _finalize_round(self) -> None:
        for cid, vsm in self.vsms.items():
            self.bridge.add_header(cid, self.round, vsm.attrs())

    def idle_round(self) -> None:
        self.round += 1
        self._finalize_round()
        if self.trace is not None:
            self.trace.emit("idle_round", round=self.round)

    def submit(self, chain_id: int, fn: str, *args) -> SubmitResult:
        self.round += 1
        vsm = self.vsms[chain_id]
        env = VsmEnv(self, chain_id)
        snap = vsm.snapshot()
        accepted, info, error = True, None, None
        try:
            info = getattr(vsm, fn)(*args, env=env)
            self.last_change_round[chain_id] = self.round
        except VsmRevert as e:
            vsm.restore(snap)
            accepted, error = False, str(e)
        self._finalize_round()
        result = SubmitResult(
            accepted=accepted,
            info=info,
            error=error,
            round=self.round,
            rollup_proofs=env.rollup_proofs,
            bridge_proofs=env.bridge_proofs,
        )
        if self.trace is not None:
            self.trace.emit(
                "vsm_call",
                round=self.round,
                chain=chain_id,
                fn=fn,
                accepted=accepted,
                info=info,
                error=error,
                rollup_proofs=env.rollup_proofs,
                bridge_proofs=env.bridge_proofs,
            )
        return result
