"""Trust authority: setup, registration of CSs, ESs and devices, and tracing.

The TA is the only holder of the master secret ``s``.  It is never contacted
during authentication; ``operations`` counts every public call so tests can
assert that.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass, field

from . import store
from .crypto import (
    Clock, Digest, Rng, SystemClock, acting_as, hash, make_rng, random_nonce, xor,
)
from .errors import DuplicateRegistration, InvalidCount, NotFound, UnknownCs, UnknownEs
from .store import hx, unhx
from .wire import ts, var

DEFAULT_POOL_SIZE = 16


@dataclass(frozen=True)
class KeyPairStub:
    """Stand-in for a distributed-keygen key pair; only h(pk) is ever used."""
    sk: bytes
    pk: bytes

    @property
    def pk_digest(self) -> Digest:
        return hash([self.pk])

    @classmethod
    def generate(cls, rng: Rng) -> "KeyPairStub":
        return cls(sk=random_nonce(rng), pk=random_nonce(rng))


@dataclass(frozen=True)
class CsCredentials:
    cid: str
    sc: Digest
    keypair: KeyPairStub


@dataclass(frozen=True)
class E2CEntry:
    cid: str
    pid: Digest
    c: Digest


@dataclass(frozen=True)
class EsCredentials:
    eid: str
    se: Digest
    keypair: KeyPairStub
    e2c: tuple[E2CEntry, ...]


@dataclass(frozen=True)
class EsBundle:
    """Per-ES pseudonym pool as issued to a device: positional (pid, b) pairs."""
    es: Digest
    pids: tuple[Digest, ...]
    bs: tuple[Digest, ...]


@dataclass(frozen=True)
class DeviceCredentials:
    did: Digest
    keypair: KeyPairStub
    bundles: tuple[EsBundle, ...]


@dataclass
class CsRecord:
    pk: bytes
    pk_digest: Digest


@dataclass
class EsRecord:
    pk: bytes
    pk_digest: Digest
    pids: dict[str, Digest] = field(default_factory=dict)


@dataclass
class DeviceRecord:
    uid: str
    device_id: str
    pk: bytes
    pids: dict[str, list[Digest]] = field(default_factory=dict)  # hex(h(PK_j)) -> pool


@dataclass(frozen=True)
class Identity:
    did: Digest
    uid: str
    device_id: str


class TrustAuthority:
    label = "ta"

    def __init__(self, s: Digest, rng: Rng, clock: Clock | None = None):
        self.s = s
        self.rng = rng
        self.clock = clock or SystemClock()
        self.list_cs: dict[str, CsRecord] = {}
        self.list_es: dict[str, EsRecord] = {}
        self.list_did: dict[Digest, DeviceRecord] = {}
        self._trace_index: dict[Digest, Digest] = {}
        self.operations = 0
        self._lock = threading.RLock()

    @classmethod
    def setup(cls, seed: int | str | None = None, clock: Clock | None = None) -> "TrustAuthority":
        rng = make_rng(seed)
        return cls(random_nonce(rng), rng, clock)

    def _credential(self, pk_digest: Digest) -> Digest:
        return hash([self.s, pk_digest])

    def register_cs(self, cid: str) -> CsCredentials:
        with self._lock, acting_as(self.label):
            self.operations += 1
            if cid in self.list_cs:
                raise DuplicateRegistration(f"CS {cid!r} already registered")
            kp = KeyPairStub.generate(self.rng)
            pk_digest = kp.pk_digest
            self.list_cs[cid] = CsRecord(kp.pk, pk_digest)
            return CsCredentials(cid, self._credential(pk_digest), kp)

    def register_es(self, eid: str, target_cs: list[str] | tuple[str, ...] = ()) -> EsCredentials:
        with self._lock, acting_as(self.label):
            self.operations += 1
            if eid in self.list_es:
                raise DuplicateRegistration(f"ES {eid!r} already registered")
            missing = [c for c in target_cs if c not in self.list_cs]
            if missing:
                raise UnknownCs(f"unregistered CS: {', '.join(missing)}")
            kp = KeyPairStub.generate(self.rng)
            rec = EsRecord(kp.pk, kp.pk_digest)
            entries = []
            for cid in dict.fromkeys(target_cs):
                cs_pk_digest = self.list_cs[cid].pk_digest
                pid = hash([var(eid), cs_pk_digest])
                c = hash([pid, self._credential(cs_pk_digest)])
                rec.pids[cid] = pid
                entries.append(E2CEntry(cid, pid, c))
            self.list_es[eid] = rec
            return EsCredentials(eid, self._credential(rec.pk_digest), kp, tuple(entries))

    def derive_did(self, uid: str, device_id: str) -> Digest:
        return hash([var(uid), var(device_id), self.s])

    def register_device(self, uid: str, device_id: str, epw: Digest,
                        target_es: list[str] | tuple[str, ...],
                        n: int = DEFAULT_POOL_SIZE) -> DeviceCredentials:
        with self._lock, acting_as(self.label):
            self.operations += 1
            if n < 1:
                raise InvalidCount(f"pseudonym count must be >= 1, got {n}")
            did = self.derive_did(uid, device_id)
            if did in self.list_did:
                raise DuplicateRegistration(f"device ({uid!r}, {device_id!r}) already registered")
            missing = [e for e in target_es if e not in self.list_es]
            if missing:
                raise UnknownEs(f"unregistered ES: {', '.join(missing)}")
            kp = KeyPairStub.generate(self.rng)
            rec = DeviceRecord(uid, device_id, kp.pk)
            t0 = self.clock.now()
            bundles = []
            for eid in dict.fromkeys(target_es):
                es_pk_digest = self.list_es[eid].pk_digest
                se = self._credential(es_pk_digest)
                pids, bs = [], []
                for x in range(n):
                    pid = hash([did, es_pk_digest, ts((t0 + x) & 0xFFFFFFFF)])
                    a = hash([pid, se])
                    pids.append(pid)
                    bs.append(xor(epw, a))
                rec.pids[hx(es_pk_digest)] = pids
                bundles.append(EsBundle(es_pk_digest, tuple(pids), tuple(bs)))
            self.list_did[did] = rec
            for pool in rec.pids.values():
                for pid in pool:
                    self._trace_index[pid] = did
            return DeviceCredentials(did, kp, tuple(bundles))

    def trace(self, pid: Digest) -> Identity:
        with self._lock:
            self.operations += 1
            did = self._trace_index.get(pid)
            if did is None:
                raise NotFound("pseudonym was never issued to a device")
            rec = self.list_did[did]
            return Identity(did, rec.uid, rec.device_id)

    def es_public_id(self, eid: str) -> Digest:
        """The h(PK_j) an ES broadcasts to devices in range."""
        return self.list_es[eid].pk_digest

    # --- persistence ------------------------------------------------------

    def to_records(self) -> list[dict]:
        recs = [{"kind": "ta", "s": hx(self.s)}]
        for cid, r in self.list_cs.items():
            recs.append({"kind": "cs", "cid": cid, "pk": hx(r.pk), "pk_digest": hx(r.pk_digest)})
        for eid, r in self.list_es.items():
            recs.append({"kind": "es", "eid": eid, "pk": hx(r.pk), "pk_digest": hx(r.pk_digest),
                         "pids": {c: hx(p) for c, p in r.pids.items()}})
        for did, r in self.list_did.items():
            recs.append({"kind": "did", "did": hx(did), "uid": r.uid, "id": r.device_id,
                         "pk": hx(r.pk),
                         "pids": {es: [hx(p) for p in pool] for es, pool in r.pids.items()}})
        return recs

    @classmethod
    def from_records(cls, records: list[dict], rng: Rng, clock: Clock | None = None) -> "TrustAuthority":
        ta = cls(unhx(store.one(records, "ta")["s"]), rng, clock)
        for r in records:
            if r["kind"] == "cs":
                ta.list_cs[r["cid"]] = CsRecord(unhx(r["pk"]), unhx(r["pk_digest"]))
            elif r["kind"] == "es":
                ta.list_es[r["eid"]] = EsRecord(unhx(r["pk"]), unhx(r["pk_digest"]),
                                                {c: unhx(p) for c, p in r["pids"].items()})
            elif r["kind"] == "did":
                did = unhx(r["did"])
                rec = DeviceRecord(r["uid"], r["id"], unhx(r["pk"]),
                                   {es: [unhx(p) for p in pool] for es, pool in r["pids"].items()})
                ta.list_did[did] = rec
                for pool in rec.pids.values():
                    for pid in pool:
                        ta._trace_index[pid] = did
        return ta
