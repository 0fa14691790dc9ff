"""Edge server role: serves Case 1 directly, relays Case 2 to a cloud server."""
from __future__ import annotations

import hmac
import json
import os
import threading
from dataclasses import dataclass, field
from typing import Any, Hashable, Mapping

from . import store
from .authority import E2CEntry, EsCredentials, KeyPairStub
from .crypto import Clock, Digest, Rng, SystemClock, acting_as, fresh, hash, make_rng, random_nonce, xor
from .device import DEFAULT_WINDOW
from .errors import (
    AuthFailure, NoCapableCs, ReplayDetected, StaleTimestamp, StoreError, UnknownSession,
)
from .store import hx, unhx
from .wire import Msg1, Msg2, Msg3, Msg4, Msg5, ts, var

LOCAL = "local"


def service_tag(ser_req: bytes) -> str:
    """Service tag of a request: the text before the first ``;``."""
    return ser_req.split(b";", 1)[0].decode("utf-8", errors="replace")


class Capabilities:
    """Service tag -> ``"local"`` or an ordered list of CIDs able to serve it."""

    def __init__(self, routes: Mapping[str, Any] | None = None):
        self.routes: dict[str, str | tuple[str, ...]] = {}
        for tag, target in (routes or {}).items():
            if target == LOCAL:
                self.routes[tag] = LOCAL
            elif isinstance(target, (list, tuple)) and all(isinstance(c, str) for c in target):
                self.routes[tag] = tuple(target)
            else:
                raise ValueError(f"tag {tag!r}: route must be 'local' or a list of CIDs")

    def serves_locally(self, ser_req: bytes) -> bool:
        return self.routes.get(service_tag(ser_req)) == LOCAL

    def candidates(self, ser_req: bytes) -> tuple[str, ...]:
        route = self.routes.get(service_tag(ser_req), ())
        return () if route == LOCAL else route

    def to_json(self) -> dict:
        return {t: (r if r == LOCAL else list(r)) for t, r in self.routes.items()}

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Capabilities":
        try:
            with open(path) as f:
                data = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise StoreError(f"cannot read capability file {path}: {e}") from e
        if not isinstance(data, dict):
            raise StoreError(f"{path}: expected a JSON object of tag -> route")
        return cls(data)


class ReplayCache:
    """Accepted messages, keyed by (pseudonym, timestamp, verified tag).

    The tag (alpha or theta) is bound to the sender's fresh secret, so two
    honest runs sharing a pseudonym in the same second do not collide while an
    exact replay still does.  Entries expire after one freshness window.
    """

    def __init__(self, window: int):
        self.window = window
        self._seen: dict[tuple, int] = {}
        self._lock = threading.Lock()

    def _expire(self, now: int) -> None:
        stale = [k for k in self._seen if now - k[1] > self.window]
        for k in stale:
            del self._seen[k]

    def __contains__(self, key: tuple) -> bool:
        return key in self._seen

    def add(self, key: tuple, now: int) -> None:
        """Atomic check-and-insert; raises if ``key`` was already accepted."""
        with self._lock:
            self._expire(now)
            if key in self._seen:
                raise ReplayDetected("message already accepted within the freshness window")
            self._seen[key] = now

    def __len__(self) -> int:
        return len(self._seen)

    def keys(self) -> list[tuple]:
        return list(self._seen)


@dataclass
class RelaySession:
    corr: int
    cid: str
    entry: E2CEntry = field(repr=False)
    a: Digest = field(repr=False)
    s_ij: Digest = field(repr=False)
    reply_to: Hashable = None
    created: int = 0
    sk: Digest | None = field(default=None, repr=False)


@dataclass
class Relay:
    """Case 2 outcome of ``handle_msg1``: Msg3 bound for CS ``cid``."""
    msg3: Msg3
    session: RelaySession

    @property
    def cid(self) -> str:
        return self.session.cid

    @property
    def corr(self) -> int:
        return self.session.corr


class EdgeServer:
    def __init__(self, creds: EsCredentials, capabilities: Capabilities | None = None, *,
                 clock: Clock | None = None, rng: Rng | None = None,
                 window: int = DEFAULT_WINDOW, label: str | None = None):
        self.eid = creds.eid
        self.se = creds.se
        self.keypair = creds.keypair
        self.e2c: dict[str, E2CEntry] = {e.cid: e for e in creds.e2c}
        self.capabilities = capabilities or Capabilities()
        self.clock = clock or SystemClock()
        self.rng = rng or make_rng()
        self.window = window
        self.label = label or creds.eid
        self.public_id = creds.keypair.pk_digest
        self.replay_cache = ReplayCache(window)
        self.session_table: dict[int, RelaySession] = {}
        self.session_keys: dict[tuple, Digest] = {}
        self._lock = threading.Lock()

    def _fresh(self, t: int) -> None:
        now = self.clock.now()
        if not fresh(t, now, self.window):
            raise StaleTimestamp(f"timestamp {t} outside window at {now}")

    def pick_cs(self, ser_req: bytes) -> E2CEntry:
        wanted = self.capabilities.candidates(ser_req)
        for cid, entry in self.e2c.items():
            if cid in wanted:
                return entry
        raise NoCapableCs(f"no registered CS serves {service_tag(ser_req)!r}")

    def handle_msg1(self, msg1: Msg1, reply_to: Hashable = None) -> Msg2 | Relay:
        self._fresh(msg1.t)
        key = (msg1.pid, msg1.t, msg1.alpha)
        with acting_as(self.label):
            a = hash([msg1.pid, self.se])
            x1 = xor(a, msg1.m1)
            alpha = hash([var(msg1.ser_req), msg1.pid, x1, ts(msg1.t)])
            if not hmac.compare_digest(alpha, msg1.alpha):
                raise AuthFailure("alpha mismatch: device failed authentication")
            self.replay_cache.add(key, self.clock.now())

            if self.capabilities.serves_locally(msg1.ser_req):
                x2 = random_nonce(self.rng)
                sk = hash([a, x1, x2])
                t = self.clock.now()
                beta = hash([sk, x2, ts(t)])
                self.session_keys[key] = sk
                return Msg2(xor(a, x2), beta, t)

            entry = self.pick_cs(msg1.ser_req)
            s_ij = hash([a, x1])
            t = self.clock.now()
            theta = hash([var(msg1.ser_req), entry.pid, s_ij, ts(t)])
            msg3 = Msg3(entry.pid, xor(s_ij, entry.c), theta, t, msg1.ser_req)
        with self._lock:
            corr = self.rng.getrandbits(64)
            while corr in self.session_table:
                corr = self.rng.getrandbits(64)
            session = RelaySession(corr, entry.cid, entry, a, s_ij, reply_to, t)
            self.session_table[corr] = session
        return Relay(msg3, session)

    def handle_msg4(self, msg4: Msg4, corr: int) -> tuple[Msg5, RelaySession]:
        now = self.clock.now()
        with self._lock:
            for c in [c for c, r in self.session_table.items() if now - r.created > self.window]:
                del self.session_table[c]
            relay = self.session_table.pop(corr, None)
        if relay is None:
            raise UnknownSession(f"no live relay session {corr}")
        self._fresh(msg4.t)
        with acting_as(self.label):
            s_jk = xor(msg4.m4, relay.entry.c)
            sk = hash([relay.s_ij, s_jk])
            nu = hash([sk, s_jk, ts(msg4.t)])
            if not hmac.compare_digest(nu, msg4.nu):
                raise AuthFailure("nu mismatch: CS failed authentication")
            t = self.clock.now()
            eps = hash([sk, s_jk, ts(t)])
        relay.sk = sk
        return Msg5(xor(s_jk, relay.a), eps, t), relay

    # --- persistence ------------------------------------------------------

    def to_records(self) -> list[dict]:
        recs = [{"kind": "es", "eid": self.eid, "label": self.label, "se": hx(self.se),
                 "sk": hx(self.keypair.sk), "pk": hx(self.keypair.pk), "window": self.window,
                 "capabilities": self.capabilities.to_json()}]
        for e in self.e2c.values():
            recs.append({"kind": "e2c", "cid": e.cid, "pid": hx(e.pid), "c": hx(e.c)})
        return recs

    @classmethod
    def from_records(cls, records: list[dict], **kwargs) -> "EdgeServer":
        r = store.one(records, "es")
        entries = tuple(E2CEntry(e["cid"], unhx(e["pid"]), unhx(e["c"]))
                        for e in records if e["kind"] == "e2c")
        creds = EsCredentials(r["eid"], unhx(r["se"]), KeyPairStub(unhx(r["sk"]), unhx(r["pk"])), entries)
        opts = dict(label=r["label"], window=r["window"])
        opts.update(kwargs)
        caps = opts.pop("capabilities", None) or Capabilities(r["capabilities"])
        return cls(creds, caps, **opts)
