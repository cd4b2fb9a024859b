"""Trustless bridge between the two simulated L1 chains.

The bridge relays finalized L1 block headers (here: the digest of the
chain's hosted contract state) to the other chain. A header finalized in
round r becomes available to the destination only once the global clock
reaches r + finality_delay; headers never expire. Relayed content always
equals the true source header (trustless bridge, liveness assumed).

Cross-chain evidence is a set of claimed (attribute key, value) pairs
plus one membership proof each, verified against a relayed header.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

from .commitment import MembershipProof, StateTrie, verify_member


class HeaderUnavailable(Exception):
    """Requested header round is not final yet (or unknown chain/round)."""


@dataclass(frozen=True)
class RelayedHeader:
    chain_id: int
    round: int
    digest: bytes


@dataclass
class Bridge:
    finality_delay: int = 1
    # per chain: round -> (header digest, attribute map at that round)
    _headers: dict[int, dict[int, tuple[bytes, dict[bytes, bytes]]]] = field(
        default_factory=dict
    )

    def add_header(self, chain_id: int, round_no: int, attrs: dict[bytes, bytes]) -> bytes:
        digest = StateTrie(attrs).root()
        self._headers.setdefault(chain_id, {})[round_no] = (digest, dict(attrs))
        return digest

    def relay(self, chain_id: int, round_no: int, current_round: int) -> RelayedHeader:
        """Relayed header of a source chain; only final rounds are available."""
        if round_no > current_round - self.finality_delay:
            raise HeaderUnavailable(
                f"round {round_no} of chain {chain_id} is not final at round {current_round}"
            )
        per_chain = self._headers.get(chain_id, {})
        if round_no not in per_chain:
            raise HeaderUnavailable(f"no header for chain {chain_id} round {round_no}")
        return RelayedHeader(chain_id, round_no, per_chain[round_no][0])

    def latest_final_round(self, chain_id: int, current_round: int) -> int:
        candidates = [
            r
            for r in self._headers.get(chain_id, {})
            if r <= current_round - self.finality_delay
        ]
        if not candidates:
            raise HeaderUnavailable(f"no final header for chain {chain_id}")
        return max(candidates)

    def header_attrs(self, chain_id: int, round_no: int) -> dict[bytes, bytes]:
        """Historical attribute map (simulation-side helper for proof building)."""
        return dict(self._headers[chain_id][round_no][1])


def verify_attributes_with_bridge(
    header: RelayedHeader,
    claimed: dict[bytes, bytes],
    proofs: dict[bytes, MembershipProof],
    count: Callable[[], None] | None = None,
) -> bool:
    """Every claimed attribute must verify as a membership proof against the
    relayed header digest. Returns False on the first failure."""
    for key, value in claimed.items():
        proof = proofs.get(key)
        if proof is None or proof.key != key or proof.value != value:
            return False
        if not verify_member(header.digest, proof):
            return False
        if count is not None:
            count()
    return True


def build_attribute_proofs(
    attrs: dict[bytes, bytes], keys: list[bytes]
) -> dict[bytes, MembershipProof]:
    trie = StateTrie(attrs)
    return {key: trie.prove(key) for key in keys}
