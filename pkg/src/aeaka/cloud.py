"""Cloud server role: verifies the relayed device credential, answers with Msg4."""
from __future__ import annotations

import hmac
import threading

from . import store
from .authority import CsCredentials, KeyPairStub
from .crypto import Clock, Digest, Rng, SystemClock, acting_as, fresh, hash, make_rng, random_nonce, xor
from .device import DEFAULT_WINDOW
from .edge import ReplayCache
from .errors import AuthFailure, StaleTimestamp
from .store import hx, unhx
from .wire import Msg3, Msg4, ts, var


class CloudServer:
    def __init__(self, creds: CsCredentials, services: set[str] | frozenset[str] = frozenset(), *,
                 clock: Clock | None = None, rng: Rng | None = None,
                 window: int = DEFAULT_WINDOW, label: str | None = None):
        self.cid = creds.cid
        self.sc = creds.sc
        self.keypair = creds.keypair
        self.services = set(services)
        self.clock = clock or SystemClock()
        self.rng = rng or make_rng()
        self.window = window
        self.label = label or creds.cid
        self.replay_cache = ReplayCache(window)
        # keyed by S'_ij, the only handle the CS has on the anonymous device
        self.session_keys: dict[Digest, Digest] = {}
        self._lock = threading.Lock()

    def handle_msg3(self, msg3: Msg3) -> Msg4:
        now = self.clock.now()
        if not fresh(msg3.t, now, self.window):
            raise StaleTimestamp(f"timestamp {msg3.t} outside window at {now}")
        key = (msg3.pid, msg3.t, msg3.theta)
        with acting_as(self.label):
            a = hash([msg3.pid, self.sc])
            s_ij = xor(msg3.m3, a)
            theta = hash([var(msg3.ser_req), msg3.pid, s_ij, ts(msg3.t)])
            if not hmac.compare_digest(theta, msg3.theta):
                raise AuthFailure("theta mismatch: ES failed authentication")
            self.replay_cache.add(key, now)
            x3 = random_nonce(self.rng)
            s_jk = hash([a, x3])
            sk = hash([s_ij, s_jk])
            t = self.clock.now()
            nu = hash([sk, s_jk, ts(t)])
        with self._lock:
            self.session_keys[s_ij] = sk
        return Msg4(xor(s_jk, a), nu, t)

    def to_records(self) -> list[dict]:
        return [{"kind": "cs", "cid": self.cid, "label": self.label, "sc": hx(self.sc),
                 "sk": hx(self.keypair.sk), "pk": hx(self.keypair.pk), "window": self.window,
                 "services": sorted(self.services)}]

    @classmethod
    def from_records(cls, records: list[dict], **kwargs) -> "CloudServer":
        r = store.one(records, "cs")
        creds = CsCredentials(r["cid"], unhx(r["sc"]), KeyPairStub(unhx(r["sk"]), unhx(r["pk"])))
        opts = dict(label=r["label"], window=r["window"])
        opts.update(kwargs)
        services = opts.pop("services", None) or r["services"]
        return cls(creds, services, **opts)
