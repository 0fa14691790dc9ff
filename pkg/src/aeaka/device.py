"""Device role: login gate, AKA initiation/completion, password update."""
from __future__ import annotations

import hmac
import itertools
import threading
from dataclasses import dataclass, field
from typing import TYPE_CHECKING

from . import store
from .crypto import (
    Clock, Digest, Rng, SystemClock, acting_as, fresh, hash, make_rng, random_nonce, xor,
)
from .errors import (
    AuthFailure, BadCredentials, EmptyPseudonymPool, LockedOut, StaleTimestamp,
    UnexpectedMessage, UnknownEs, UnknownSession,
)
from .store import hx, unhx
from .wire import Message, Msg1, Msg2, Msg5, ts, var

if TYPE_CHECKING:
    from .authority import TrustAuthority

DEFAULT_WINDOW = 5
DEFAULT_LOCKOUT = 3
POOL_MODES = ("reuse", "single-use")


def password_digest(uid: str, pw: str) -> Digest:
    """EPW = h(UID || PW)."""
    return hash([var(uid), var(pw)])


def login_verifier(uid: str, device_id: str, pw: str) -> Digest:
    """Q = h(UID || ID || PW)."""
    return hash([var(uid), var(device_id), var(pw)])


@dataclass
class Pool:
    pids: list[Digest]
    bs: list[Digest]


@dataclass(frozen=True)
class LoginToken:
    """Proof of a passed login; lives in memory only.

    The password is carried rather than EPW because deriving EPW is the first
    step of every authentication run.
    """
    device: "Device" = field(repr=False, compare=False)
    uid: str
    pw: str = field(repr=False)


@dataclass
class DeviceAuthSession:
    sid: int
    es: Digest
    pid: Digest
    a: Digest = field(repr=False)
    x1: Digest = field(repr=False)
    ser_req: bytes
    t: int
    mode: str = "pending"  # becomes "case1" / "case2" on completion
    key: Digest | None = field(default=None, repr=False)


class Device:
    def __init__(self, q: Digest, did: Digest, sk: bytes, pools: dict[Digest, Pool], *,
                 label: str = "device", clock: Clock | None = None, rng: Rng | None = None,
                 window: int = DEFAULT_WINDOW, lockout: int = DEFAULT_LOCKOUT,
                 pool_mode: str = "reuse", login_attempts: int = 0):
        if pool_mode not in POOL_MODES:
            raise ValueError(f"pool_mode must be one of {POOL_MODES}")
        self.q = q
        self.did = did
        self.sk = sk
        self.pools = pools
        self.label = label
        self.clock = clock or SystemClock()
        self.rng = rng or make_rng()
        self.window = window
        self.lockout = lockout
        self.pool_mode = pool_mode
        self.login_attempts = login_attempts
        self.sessions: dict[int, DeviceAuthSession] = {}
        self.session_keys: dict[str, Digest] = {}
        self._sids = itertools.count(1)
        self._lock = threading.RLock()

    @classmethod
    def register(cls, ta: "TrustAuthority", uid: str, device_id: str, pw: str,
                 target_es: list[str], n: int | None = None, **kwargs) -> "Device":
        """Run the device side of registration against ``ta``."""
        with acting_as(kwargs.get("label", "device")):
            epw = password_digest(uid, pw)
            creds = (ta.register_device(uid, device_id, epw, target_es)
                     if n is None else ta.register_device(uid, device_id, epw, target_es, n))
            q = login_verifier(uid, device_id, pw)
        pools = {b.es: Pool(list(b.pids), list(b.bs)) for b in creds.bundles}
        return cls(q, creds.did, creds.keypair.sk, pools, **kwargs)

    # --- login ------------------------------------------------------------

    def _check(self, uid: str, device_id: str, pw: str) -> None:
        if self.login_attempts >= self.lockout:
            raise LockedOut(f"{self.login_attempts} failed attempts, device locked")
        with acting_as(self.label):
            q = login_verifier(uid, device_id, pw)
        if not hmac.compare_digest(q, self.q):
            self.login_attempts += 1
            raise BadCredentials("login verifier mismatch")
        self.login_attempts = 0

    def login(self, uid: str, device_id: str, pw: str) -> LoginToken:
        with self._lock:
            self._check(uid, device_id, pw)
        return LoginToken(self, uid, pw)

    # --- authentication ---------------------------------------------------

    def begin_auth(self, token: LoginToken, es: Digest, ser_req: bytes = b"") -> tuple[Msg1, DeviceAuthSession]:
        if token.device is not self:
            raise BadCredentials("login token was issued by another device")
        with self._lock, acting_as(self.label):
            pool = self.pools.get(es)
            if pool is None:
                raise UnknownEs("no pseudonym pool for this ES")
            if not pool.pids:
                raise EmptyPseudonymPool("pseudonym pool exhausted; re-register with the TA")
            epw = password_digest(token.uid, token.pw)
            r = self.rng.randrange(len(pool.pids))
            pid, b = pool.pids[r], pool.bs[r]
            if self.pool_mode == "single-use":
                del pool.pids[r], pool.bs[r]
            a = xor(epw, b)
            x1 = random_nonce(self.rng)
            t = self.clock.now()
            alpha = hash([var(ser_req), pid, x1, ts(t)])
            session = DeviceAuthSession(next(self._sids), es, pid, a, x1, ser_req, t)
            self.sessions[session.sid] = session
            return Msg1(pid, xor(a, x1), alpha, t, ser_req), session

    def _claim(self, session: DeviceAuthSession | int) -> DeviceAuthSession:
        sid = session if isinstance(session, int) else session.sid
        with self._lock:
            live = self.sessions.pop(sid, None)
        if live is None:
            raise UnknownSession(f"no live session {sid}")
        return live

    def _fresh(self, t: int) -> None:
        if not fresh(t, self.clock.now(), self.window):
            raise StaleTimestamp(f"timestamp {t} outside window at {self.clock.now()}")

    def complete_case1(self, session: DeviceAuthSession | int, msg2: Msg2) -> Digest:
        s = self._claim(session)
        self._fresh(msg2.t)
        with acting_as(self.label):
            x2 = xor(msg2.m2, s.a)
            sk = hash([s.a, s.x1, x2])
            beta = hash([sk, x2, ts(msg2.t)])
        if not hmac.compare_digest(beta, msg2.beta):
            raise AuthFailure("beta mismatch: ES failed authentication")
        s.mode, s.key = "case1", sk
        self.session_keys[f"es:{hx(s.es)}"] = sk
        return sk

    def complete_case2(self, session: DeviceAuthSession | int, msg5: Msg5) -> Digest:
        s = self._claim(session)
        self._fresh(msg5.t)
        with acting_as(self.label):
            s_ij = hash([s.a, s.x1])
            s_jk = xor(msg5.m5, s.a)
            sk = hash([s_ij, s_jk])
            eps = hash([sk, s_jk, ts(msg5.t)])
        if not hmac.compare_digest(eps, msg5.epsilon):
            raise AuthFailure("epsilon mismatch: ES/CS chain failed authentication")
        s.mode, s.key = "case2", sk
        self.session_keys[f"cs@{hx(s.es)}"] = sk
        return sk

    def complete(self, session: DeviceAuthSession | int, msg: Message) -> Digest:
        """Finish whichever case the ES chose, judged by the response variant."""
        if isinstance(msg, Msg2):
            return self.complete_case1(session, msg)
        if isinstance(msg, Msg5):
            return self.complete_case2(session, msg)
        raise UnexpectedMessage(f"device does not accept {type(msg).__name__}")

    # --- password update --------------------------------------------------

    def update_password(self, uid: str, device_id: str, old_pw: str, new_pw: str) -> None:
        with self._lock:
            self._check(uid, device_id, old_pw)
            with acting_as(self.label):
                mask = xor(password_digest(uid, old_pw), password_digest(uid, new_pw))
                q = login_verifier(uid, device_id, new_pw)
            pools = {es: Pool(list(p.pids), [xor(b, mask) for b in p.bs])
                     for es, p in self.pools.items()}
            self.pools, self.q = pools, q

    # --- persistence ------------------------------------------------------

    def to_records(self) -> list[dict]:
        recs = [{"kind": "device", "label": self.label, "q": hx(self.q), "did": hx(self.did),
                 "sk": hx(self.sk), "login_attempts": self.login_attempts,
                 "lockout": self.lockout, "pool_mode": self.pool_mode, "window": self.window}]
        for es, pool in self.pools.items():
            recs.append({"kind": "bundle", "es": hx(es),
                         "pids": [hx(p) for p in pool.pids], "bs": [hx(b) for b in pool.bs]})
        return recs

    @classmethod
    def from_records(cls, records: list[dict], **kwargs) -> "Device":
        d = store.one(records, "device")
        pools = {unhx(r["es"]): Pool([unhx(p) for p in r["pids"]], [unhx(b) for b in r["bs"]])
                 for r in records if r["kind"] == "bundle"}
        opts = dict(label=d["label"], lockout=d["lockout"], pool_mode=d["pool_mode"],
                    window=d["window"], login_attempts=d["login_attempts"])
        opts.update(kwargs)
        return cls(unhx(d["q"]), unhx(d["did"]), unhx(d["sk"]), pools, **opts)
