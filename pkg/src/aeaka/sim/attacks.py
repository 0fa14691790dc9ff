"""Dolev-Yao adversary actions and the attack batteries built from them.

An attempt counts as *accepted* if any honest party that the forged or
replayed traffic was aimed at accepts it: the targeted receiver finished
processing without a rejection, or a device ended the run holding a key.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field, replace

from .. import store
from ..crypto import hash, random_nonce, xor
from ..device import Device, password_digest
from ..errors import ScenarioError
from ..wire import Msg1, Msg2, Msg4, decode, encode, field_spans, ts, var
from .network import Envelope, Exchange, Network, mutate, tamper_hook

ATTACKS = ("replay", "tamper", "impersonate-device", "impersonate-es", "impersonate-cs",
           "steal-device")


@dataclass
class AttackOutcome:
    name: str
    attempts: int = 0
    accepted: int = 0
    rejections: Counter = field(default_factory=Counter)
    notes: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.attempts > 0 and self.accepted == 0

    def add(self, accepted: bool, reason: str | None = None, note: str | None = None) -> None:
        self.attempts += 1
        if accepted:
            self.accepted += 1
            if note:
                self.notes.append(note)
        else:
            self.rejections[reason or "rejected"] += 1

    def merge(self, other: "AttackOutcome") -> None:
        self.attempts += other.attempts
        self.accepted += other.accepted
        self.rejections.update(other.rejections)
        self.notes.extend(other.notes)

    def summary(self) -> str:
        why = ", ".join(f"{k}={v}" for k, v in sorted(self.rejections.items()))
        status = "PASS" if self.ok else "FAIL"
        return f"{status} {self.name}: {self.attempts} attempts, {self.accepted} accepted ({why})"


# --- single adversary actions ---------------------------------------------

def adversary_replay(net: Network, index: int) -> Exchange:
    """Re-deliver captured transcript entry ``index`` verbatim."""
    rec = _captured(net, index)
    return net.inject(Envelope(rec.src, rec.dst, rec.data, rec.corr, "adversary:replay"))


def adversary_tamper(net: Network, index: int, offset: int, mask: int) -> Exchange:
    """Re-deliver transcript entry ``index`` with ``mask`` xored into one byte."""
    rec = _captured(net, index)
    return net.inject(Envelope(rec.src, rec.dst, mutate(rec.data, offset, mask), rec.corr,
                               "adversary:tamper"))


def adversary_steal_device(net: Network, device: str) -> bytes:
    """Everything at rest on the device: its serialized credential store."""
    if device not in net.devices:
        raise ScenarioError(f"unknown device {device!r}")
    return store.dumps(net.devices[device].to_records())


def _captured(net: Network, index: int):
    if not 0 <= index < len(net.transcript):
        raise ScenarioError(f"transcript has no entry {index}")
    return net.transcript[index]


def _target_accepted(ex: Exchange, target: str) -> bool:
    return target in ex.accepted_by


def forge_msg1(rng, pid: bytes, a: bytes, t: int, ser_req: bytes) -> Msg1:
    """Msg1 an attacker builds from a guessed device credential ``a``."""
    x1 = random_nonce(rng)
    return Msg1(pid, xor(a, x1), hash([var(ser_req), pid, x1, ts(t)]), t, ser_req)


# --- batteries -------------------------------------------------------------

def replay_battery(net: Network, device: str, es: str, tags: list[str]) -> AttackOutcome:
    """Replay every message of honest runs, inside and after the window."""
    out = AttackOutcome("replay")
    captured: list[int] = []
    for tag in tags:
        net.clock.advance(1)
        run = net.authenticate(device, es, tag)
        if not run.accepted:
            raise ScenarioError(f"honest run for {tag!r} failed: {run.outcome}")
        captured.extend(i for i in run.records if net.transcript[i].outcome == "accepted")
    for when in ("in-window", "post-window"):
        if when == "post-window":
            net.clock.advance(net.window + 1)
        for i in captured:
            ex = adversary_replay(net, i)
            rec = net.transcript[i]
            reason = ex.rejections[0][1] if ex.rejections else None
            out.add(_target_accepted(ex, rec.dst), reason,
                    f"{when} replay of {rec.variant} #{i} accepted by {rec.dst}")
    return out


def tamper_battery(net: Network, device: str, es: str, tags: list[str],
                   masks: tuple[int, ...] = (0x01, 0x80)) -> AttackOutcome:
    """In-flight bit flips at every byte of every message variant of each flow."""
    out = AttackOutcome("tamper")
    for tag in tags:
        net.clock.advance(1)
        ref = net.authenticate(device, es, tag)
        if not ref.accepted:
            raise ScenarioError(f"honest run for {tag!r} failed: {ref.outcome}")
        sent = [net.transcript[i] for i in ref.records if net.transcript[i].origin == "honest"]
        for rec in sent:
            msg = decode(rec.data)
            for fname, start, end in field_spans(msg):
                for offset in range(start, end):
                    for mask in masks:
                        net.clock.advance(1)
                        run = net.authenticate(device, es, tag,
                                               interceptors=[tamper_hook(rec.variant, offset, mask)])
                        out.add(run.accepted, run.error or run.outcome,
                                f"{rec.variant}.{fname} byte {offset} ^ {mask:#04x}: {run.outcome}")
    return out


def impersonate_device(net: Network, es: str, ser_req: str, attempts: int = 50,
                       cross: tuple[str, str] | None = None) -> AttackOutcome:
    """Forged Msg1s: random credentials, captured pseudonyms, and cross-ES pools.

    ``cross`` is ``(device, other_es)``: that device's pool for ``other_es``
    is used, with the right password, against ``es``.
    """
    out = AttackOutcome("impersonate-device")
    rng = net.rng("adversary:device")
    req = ser_req.encode()
    seen_pids = [decode(r.data).pid for r in net.transcript
                 if r.variant == "Msg1" and r.dst == es and r.origin == "honest"]
    for k in range(attempts):
        net.clock.advance(1)
        pid = seen_pids[k % len(seen_pids)] if seen_pids and k % 2 else random_nonce(rng)
        msg = forge_msg1(rng, pid, random_nonce(rng), net.clock.now(), req)
        ex = net.inject(Envelope("adversary", es, encode(msg), k, "adversary:forge"))
        out.add(_target_accepted(ex, es), ex.rejections[0][1] if ex.rejections else None,
                f"forged Msg1 #{k} accepted")
    if cross is not None:
        dev, other = cross
        for _ in range(min(attempts, 10)):
            net.clock.advance(1)
            run = net.authenticate(dev, other, ser_req, target=es)
            out.add(run.accepted, run.error, "cross-ES Msg1 accepted")
    return out


def impersonate_es(net: Network, device: str, es: str, local_tag: str, cloud_tag: str | None = None,
                   rogue_es: str | None = None, attempts: int = 20) -> AttackOutcome:
    """Answer the device in the ES's place, and forge ES->CS requests."""
    out = AttackOutcome("impersonate-es")
    rng = net.rng("adversary:es")

    def random_reply(env: Envelope):
        if env.origin != "honest" or decode(env.data).__class__ is not Msg1:
            return None
        forged = Msg2(random_nonce(rng), random_nonce(rng), net.clock.now())
        return [Envelope(env.dst, env.src, encode(forged), env.corr, "adversary:forge")]

    def rogue_reply(env: Envelope):
        if env.origin != "honest" or decode(env.data).__class__ is not Msg1:
            return None
        m = decode(env.data)
        rogue = net.ess[rogue_es]
        a = hash([m.pid, rogue.se])
        x1, x2 = xor(a, m.m1), random_nonce(rng)
        sk = hash([a, x1, x2])
        t = net.clock.now()
        forged = Msg2(xor(a, x2), hash([sk, x2, ts(t)]), t)
        return [Envelope(env.dst, env.src, encode(forged), env.corr, "adversary:rogue-es")]

    hooks = [random_reply] + ([rogue_reply] if rogue_es else [])
    for hook in hooks:
        for _ in range(attempts):
            net.clock.advance(1)
            run = net.authenticate(device, es, local_tag, interceptors=[hook])
            out.add("device" in run.keys, run.error, f"device accepted forged Msg2 via {hook.__name__}")

    if cloud_tag is not None:
        net.clock.advance(1)
        ref = net.authenticate(device, es, cloud_tag)
        msg3s = [net.transcript[i] for i in ref.records if net.transcript[i].variant == "Msg3"]
        for k in range(attempts):
            net.clock.advance(1)
            for rec in msg3s:
                m = decode(rec.data)
                pid = m.pid if k % 2 else random_nonce(rng)
                s_ij, c = random_nonce(rng), random_nonce(rng)
                t = net.clock.now()
                theta = hash([var(m.ser_req), pid, s_ij, ts(t)])
                forged = replace(m, pid=pid, m3=xor(s_ij, c), theta=theta, t=t)
                ex = net.inject(Envelope("adversary", rec.dst, encode(forged), k, "adversary:forge"))
                out.add(_target_accepted(ex, rec.dst), ex.rejections[0][1] if ex.rejections else None,
                        "CS accepted forged Msg3")
    return out


def impersonate_cs(net: Network, device: str, es: str, cloud_tag: str, rogue_cs: str | None = None,
                   attempts: int = 20) -> AttackOutcome:
    """Intercept Msg3 and answer the ES with a forged Msg4."""
    out = AttackOutcome("impersonate-cs")
    rng = net.rng("adversary:cs")

    def forged_reply(env: Envelope, rogue: bool):
        if env.origin != "honest" or env.data[:1] != b"\x03":
            return None
        t = net.clock.now()
        if rogue:
            m = decode(env.data)
            a = hash([m.pid, net.css[rogue_cs].sc])
            s_ij, s_jk = xor(m.m3, a), hash([a, random_nonce(rng)])
            sk = hash([s_ij, s_jk])
            msg = Msg4(xor(s_jk, a), hash([sk, s_jk, ts(t)]), t)
        else:
            msg = Msg4(random_nonce(rng), random_nonce(rng), t)
        return [Envelope(env.dst, env.src, encode(msg), env.corr, "adversary:forge")]

    modes = [False] + ([True] if rogue_cs else [])
    for rogue in modes:
        for _ in range(attempts):
            net.clock.advance(1)
            run = net.authenticate(device, es, cloud_tag,
                                   interceptors=[lambda env, r=rogue: forged_reply(env, r)])
            es_accepted = any(net.transcript[i].variant == "Msg4" and net.transcript[i].outcome == "accepted"
                              for i in run.records)
            out.add(es_accepted or run.accepted, run.error,
                    f"forged Msg4 accepted (rogue={rogue})")
    return out


def steal_device(net: Network, device: str, es: str, ser_req: str, guesses: int = 100,
                 password: str | None = None) -> AttackOutcome:
    """Authenticate from a stolen store without the password.

    Tries every stored b as if it were the unmasked credential, then
    ``guesses`` random passwords (assuming the attacker knows the user name).
    With ``password`` set, runs the insider control that must be accepted.
    """
    out = AttackOutcome("steal-device" if password is None else "steal-device+password")
    blob = adversary_steal_device(net, device)
    thief = Device.from_records(store.loads(blob))
    uid = net.profiles[device].uid
    pool = thief.pools[net.ess[es].public_id]
    rng = net.rng(f"adversary:thief:{device}")
    req = ser_req.encode()

    def attempt(pid: bytes, a: bytes, note: str) -> None:
        net.clock.advance(1)
        msg = forge_msg1(rng, pid, a, net.clock.now(), req)
        ex = net.inject(Envelope("thief", es, encode(msg), out.attempts, "adversary:stolen"))
        out.add(_target_accepted(ex, es), ex.rejections[0][1] if ex.rejections else None, note)

    if password is not None:
        for pid, b in zip(pool.pids, pool.bs):
            attempt(pid, xor(password_digest(uid, password), b), "insider control")
        return out
    for pid, b in zip(pool.pids, pool.bs):
        attempt(pid, b, "b used as a accepted")
    for k in range(guesses):
        guess = rng.randbytes(12).hex()
        r = rng.randrange(len(pool.pids))
        attempt(pool.pids[r], xor(password_digest(uid, guess), pool.bs[r]),
                f"password guess {guess!r} accepted")
    return out


def run_battery(name: str, net: Network, device: str, es: str, local_tag: str, cloud_tag: str,
                **kw) -> AttackOutcome:
    """Dispatch one named battery against a prepared network."""
    if name == "replay":
        return replay_battery(net, device, es, [local_tag, cloud_tag])
    if name == "tamper":
        return tamper_battery(net, device, es, [local_tag, cloud_tag])
    if name == "impersonate-device":
        return impersonate_device(net, es, local_tag, cross=kw.get("cross"))
    if name == "impersonate-es":
        return impersonate_es(net, device, es, local_tag, cloud_tag, rogue_es=kw.get("rogue_es"))
    if name == "impersonate-cs":
        return impersonate_cs(net, device, es, cloud_tag, rogue_cs=kw.get("rogue_cs"))
    if name == "steal-device":
        return steal_device(net, device, es, local_tag, guesses=kw.get("guesses", 100))
    raise ScenarioError(f"unknown attack {name!r}; choose from {', '.join(ATTACKS)}")


def attack_network(seed: int | str = 0, **kw) -> Network:
    """Two ESs and two CSs, so rogue-peer and cross-ES attacks have someone to use."""
    net = Network(seed, **kw)
    net.add_cs("CS1", ["storage"])
    net.add_cs("CS2", ["storage"])
    net.add_es("ES1", ["CS1"], local=["video"])
    net.add_es("ES2", ["CS2"], local=["video"])
    net.add_device("D1", "alice", "dev-1", "correct horse", ["ES1", "ES2"])
    return net


def run_attack(name: str, seed: int | str = 0, **net_kw) -> AttackOutcome:
    net = attack_network(seed, **net_kw)
    return run_battery(name, net, "D1", "ES1", "video", "storage",
                       cross=("D1", "ES2"), rogue_es="ES2", rogue_cs="CS2")
