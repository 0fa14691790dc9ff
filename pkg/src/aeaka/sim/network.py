"""In-process network: entities, a Dolev-Yao channel, and the transcript.

Everything an honest party emits goes through :meth:`Network.send`, which
records it and hands it to the interceptors.  An interceptor sees each
envelope before delivery and returns ``None`` to let it pass, or a list of
envelopes to deliver instead (empty list drops it).  Every drop and
injection ends up in the transcript.
"""
from __future__ import annotations

import logging
import threading
import time
from collections import deque
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable

from ..authority import TrustAuthority
from ..cloud import CloudServer
from ..crypto import SimClock, count_hashes, make_rng
from ..device import DEFAULT_LOCKOUT, DEFAULT_WINDOW, Device
from ..edge import LOCAL, Capabilities, EdgeServer, RelaySession
from ..errors import ProtocolError, ScenarioError, UnexpectedMessage
from ..wire import AKA_TYPES, Message, Msg1, Msg2, Msg3, Msg4, Msg5, accounted_bits, decode, encode
from .cost import CostReport

log = logging.getLogger(__name__)

DEFAULT_START = 1_700_000_000


@dataclass(frozen=True)
class Envelope:
    src: str
    dst: str
    data: bytes
    corr: int = 0
    origin: str = "honest"


@dataclass
class Record:
    index: int
    time: int
    src: str
    dst: str
    corr: int
    variant: str
    origin: str
    outcome: str
    data: bytes

    def to_line(self) -> str:
        return (f"{self.index} {self.time} {self.src} {self.dst} {self.corr:016x} "
                f"{self.variant} {self.origin} {self.outcome} {self.data.hex()}")


Interceptor = Callable[[Envelope], "list[Envelope] | None"]


@dataclass
class Exchange:
    """State of one message flow (an auth run or a standalone injection)."""
    interceptors: list[Interceptor] = field(default_factory=list)
    queue: deque = field(default_factory=deque)
    records: list[int] = field(default_factory=list)
    rejections: list[tuple[str, str]] = field(default_factory=list)  # (receiver, error)
    honest_msgs: list[Message] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)
    device_key: bytes | None = None
    es_key: bytes | None = None
    relay: RelaySession | None = None
    cs_name: str | None = None
    accepted_by: list[str] = field(default_factory=list)


@dataclass
class AuthRun:
    device: str
    es: str
    ser_req: bytes
    case: str | None = None
    error: str | None = None
    rejected_by: str | None = None
    keys: dict[str, bytes] = field(default_factory=dict, repr=False)
    cost: CostReport | None = None
    records: list[int] = field(default_factory=list)

    @property
    def accepted(self) -> bool:
        return self.case is not None and self.error is None

    @property
    def keys_agree(self) -> bool:
        vals = set(self.keys.values())
        expected = 2 if self.case == "case1" else 3
        return self.accepted and len(self.keys) == expected and len(vals) == 1

    @property
    def outcome(self) -> str:
        if self.error:
            return self.error
        if self.case is None:
            return "incomplete"
        return self.case if self.keys_agree else "key-mismatch"


@dataclass
class DeviceProfile:
    uid: str
    device_id: str
    pw: str


class Network:
    def __init__(self, seed: int | str = 0, *, window: int = DEFAULT_WINDOW, pool: int = 16,
                 pool_mode: str = "reuse", lockout: int = DEFAULT_LOCKOUT,
                 start_time: int = DEFAULT_START, with_ta: bool = True):
        self.seed = seed
        self.window = window
        self.pool = pool
        self.pool_mode = pool_mode
        self.lockout = lockout
        self.clock = SimClock(start_time)
        self._clocks: dict[str, object] = {}
        self.ta = TrustAuthority.setup(seed=self._seed("ta"), clock=self.clock) if with_ta else None
        self.devices: dict[str, Device] = {}
        self.profiles: dict[str, DeviceProfile] = {}
        self.ess: dict[str, EdgeServer] = {}
        self.css: dict[str, CloudServer] = {}
        self.transcript: list[Record] = []
        self.interceptors: list[Interceptor] = []
        self._lock = threading.Lock()

    def _seed(self, name: str) -> str:
        return f"{self.seed}:{name}"

    def rng(self, name: str):
        return make_rng(self._seed(name))

    def entity_clock(self, name: str):
        if name not in self._clocks:
            self._clocks[name] = self.clock.skewed(0)
        return self._clocks[name]

    def set_skew(self, name: str, seconds: int) -> None:
        self.entity_clock(name).skew = seconds

    def roles(self) -> dict[str, str]:
        out = {n: "device" for n in self.devices}
        out.update({n: "es" for n in self.ess})
        out.update({n: "cs" for n in self.css})
        return out

    # --- topology ---------------------------------------------------------

    def _claim_name(self, name: str) -> None:
        if name in self.devices or name in self.ess or name in self.css:
            raise ScenarioError(f"entity name {name!r} already in use")

    def attach_cs(self, cs: CloudServer) -> CloudServer:
        self._claim_name(cs.label)
        cs.clock = self.entity_clock(cs.label)
        self.css[cs.label] = cs
        return cs

    def attach_es(self, es: EdgeServer) -> EdgeServer:
        self._claim_name(es.label)
        es.clock = self.entity_clock(es.label)
        self.ess[es.label] = es
        return es

    def attach_device(self, dev: Device, uid: str, device_id: str, pw: str = "") -> Device:
        self._claim_name(dev.label)
        dev.clock = self.entity_clock(dev.label)
        self.devices[dev.label] = dev
        self.profiles[dev.label] = DeviceProfile(uid, device_id, pw)
        return dev

    def add_cs(self, cid: str, services: Iterable[str] = ()) -> CloudServer:
        self._claim_name(cid)
        creds = self.ta.register_cs(cid)
        cs = CloudServer(creds, set(services), clock=self.entity_clock(cid),
                         rng=self.rng(f"cs:{cid}"), window=self.window)
        self.css[cid] = cs
        return cs

    def add_es(self, eid: str, cs: Iterable[str] = (), local: Iterable[str] = (),
               routes: dict | None = None) -> EdgeServer:
        self._claim_name(eid)
        cs = list(cs)
        creds = self.ta.register_es(eid, cs)
        if routes is None:
            routes = {}
            for cid in cs:
                for tag in sorted(self.css[cid].services) if cid in self.css else ():
                    routes.setdefault(tag, []).append(cid)
            for tag in local:
                routes[tag] = LOCAL
        es = EdgeServer(creds, Capabilities(routes), clock=self.entity_clock(eid),
                        rng=self.rng(f"es:{eid}"), window=self.window)
        self.ess[eid] = es
        return es

    def add_device(self, name: str, uid: str, device_id: str, pw: str, es: Iterable[str],
                   n: int | None = None) -> Device:
        self._claim_name(name)
        dev = Device.register(self.ta, uid, device_id, pw, list(es), self.pool if n is None else n,
                              label=name, clock=self.entity_clock(name),
                              rng=self.rng(f"device:{name}"), window=self.window,
                              lockout=self.lockout, pool_mode=self.pool_mode)
        self.devices[name] = dev
        self.profiles[name] = DeviceProfile(uid, device_id, pw)
        return dev

    # --- channel ----------------------------------------------------------

    def _record(self, env: Envelope, outcome: str, variant: str | None = None) -> Record:
        if variant is None:
            variant = _variant_name(env.data)
        with self._lock:
            rec = Record(len(self.transcript), self.clock.now(), env.src, env.dst, env.corr,
                         variant, env.origin, outcome, env.data)
            self.transcript.append(rec)
        return rec

    def send(self, ex: Exchange, env: Envelope) -> None:
        ex.queue.append(env)

    def pump(self, ex: Exchange) -> None:
        while ex.queue:
            env = ex.queue.popleft()
            outs = [env]
            for hook in [*self.interceptors, *ex.interceptors]:
                nxt = []
                for e in outs:
                    res = hook(e)
                    nxt.extend([e] if res is None else res)
                outs = nxt
            if env not in outs:
                rec = self._record(env, "dropped")
                ex.records.append(rec.index)
            for e in outs:
                self._deliver(ex, e)

    def inject(self, env: Envelope, interceptors: list[Interceptor] = ()) -> Exchange:
        """Deliver adversary-built bytes and let any replies flow to completion."""
        ex = Exchange(interceptors=list(interceptors))
        self.send(ex, env)
        self.pump(ex)
        return ex

    def _deliver(self, ex: Exchange, env: Envelope) -> None:
        try:
            msg = decode(env.data)
        except ProtocolError as e:
            self._reject(ex, env, e)
            return
        try:
            t0 = time.perf_counter()
            out = self._dispatch(ex, env, msg)
            ex.timings[env.dst] = ex.timings.get(env.dst, 0.0) + time.perf_counter() - t0
        except ProtocolError as e:
            self._reject(ex, env, e)
            return
        rec = self._record(env, "accepted")
        ex.records.append(rec.index)
        ex.accepted_by.append(env.dst)
        for reply in out:
            ex.honest_msgs.append(decode(reply.data))
            self.send(ex, reply)

    def _reject(self, ex: Exchange, env: Envelope, err: ProtocolError) -> None:
        name = type(err).__name__
        rec = self._record(env, f"rejected:{name}")
        ex.records.append(rec.index)
        ex.rejections.append((env.dst, name))
        log.debug("%s rejected %s from %s: %s", env.dst, rec.variant, env.src, err)

    def _dispatch(self, ex: Exchange, env: Envelope, msg: Message) -> list[Envelope]:
        dst = env.dst
        if dst in self.devices:
            if not isinstance(msg, (Msg2, Msg5)):
                raise UnexpectedMessage(f"device does not accept {type(msg).__name__}")
            ex.device_key = self.devices[dst].complete(env.corr, msg)
            return []
        if dst in self.ess:
            es = self.ess[dst]
            if isinstance(msg, Msg1):
                res = es.handle_msg1(msg, reply_to=(env.src, env.corr))
                if isinstance(res, Msg2):
                    ex.es_key = es.session_keys[(msg.pid, msg.t, msg.alpha)]
                    return [Envelope(dst, env.src, encode(res), env.corr)]
                ex.relay = res.session
                return [Envelope(dst, res.cid, encode(res.msg3), res.corr)]
            if isinstance(msg, Msg4):
                msg5, relay = es.handle_msg4(msg, env.corr)
                ex.relay = relay
                dev, sid = relay.reply_to
                return [Envelope(dst, dev, encode(msg5), sid)]
            raise UnexpectedMessage(f"ES does not accept {type(msg).__name__}")
        if dst in self.css:
            if not isinstance(msg, Msg3):
                raise UnexpectedMessage(f"CS does not accept {type(msg).__name__}")
            ex.cs_name = dst
            return [Envelope(dst, env.src, encode(self.css[dst].handle_msg3(msg)), env.corr)]
        raise UnexpectedMessage(f"no entity named {dst!r}")

    # --- protocol runs ----------------------------------------------------

    def login(self, device: str, pw: str | None = None):
        p = self.profiles[device]
        return self.devices[device].login(p.uid, p.device_id, p.pw if pw is None else pw)

    def authenticate(self, device: str, es: str, ser_req: bytes | str = b"", *,
                     pw: str | None = None, token=None, target: str | None = None,
                     interceptors: list[Interceptor] = ()) -> AuthRun:
        """Login, then one full AKA run from ``device`` toward ``es``.

        ``target`` delivers Msg1 to a different ES than the one whose pool was
        used (cross-ES impersonation).  Only the AKA phase is metered.
        """
        if device not in self.devices or es not in self.ess:
            raise ScenarioError(f"unknown device {device!r} or ES {es!r}")
        if isinstance(ser_req, str):
            ser_req = ser_req.encode()
        run = AuthRun(device, es, ser_req)
        dev = self.devices[device]
        if token is None:
            try:
                token = self.login(device, pw)
            except ProtocolError as e:
                run.error, run.rejected_by = type(e).__name__, device
                return run
        ex = Exchange(interceptors=list(interceptors))
        with count_hashes() as meter:
            t0 = time.perf_counter()
            try:
                msg1, session = dev.begin_auth(token, self.ess[es].public_id, ser_req)
            except ProtocolError as e:
                run.error, run.rejected_by = type(e).__name__, device
                return run
            ex.timings[device] = time.perf_counter() - t0
            ex.honest_msgs.append(msg1)
            self.send(ex, Envelope(device, target or es, encode(msg1), session.sid))
            self.pump(ex)
        run.records = ex.records
        if ex.rejections:
            run.rejected_by, run.error = ex.rejections[0]
        elif ex.device_key is not None:
            run.case = session.mode
        run.keys["device"] = ex.device_key
        if run.case == "case1":
            run.keys["es"] = ex.es_key
        elif run.case == "case2" and ex.relay is not None:
            run.keys["es_relay"] = ex.relay.sk
            cs = self.css.get(ex.relay.cid)
            run.keys["cs"] = cs.session_keys.get(ex.relay.s_ij) if cs else None
        run.keys = {k: v for k, v in run.keys.items() if v is not None}
        run.cost = CostReport(run.case, dict(meter), self.roles(),
                              [(m.NAME, accounted_bits(m)) for m in ex.honest_msgs],
                              ex.timings)
        return run

    def dump_transcript(self) -> str:
        return "".join(r.to_line() + "\n" for r in self.transcript)


def _variant_name(data: bytes) -> str:
    if not data:
        return "empty"
    for cls in AKA_TYPES:
        if data[0] == cls.TAG:
            return cls.NAME
    return f"tag{data[0]:02x}"


def mutate(data: bytes, offset: int, mask: int) -> bytes:
    if not 0 <= offset < len(data):
        raise ScenarioError(f"offset {offset} outside message of {len(data)} bytes")
    b = bytearray(data)
    b[offset] ^= mask & 0xFF
    return bytes(b)


def tamper_hook(variant: str, offset: int, mask: int, once: bool = True) -> Interceptor:
    """Flip bits of the first in-flight message of ``variant``."""
    fired = []

    def hook(env: Envelope) -> list[Envelope] | None:
        if (once and fired) or env.origin != "honest" or _variant_name(env.data) != variant:
            return None
        fired.append(env)
        return [replace(env, data=mutate(env.data, offset, mask), origin="adversary:tamper")]
    return hook


def drop_hook(variant: str) -> Interceptor:
    def hook(env: Envelope) -> list[Envelope] | None:
        return [] if _variant_name(env.data) == variant and env.origin == "honest" else None
    return hook
