"""Acceptance gate: one PASS/FAIL line per criterion.

Lines are printed as each test runs and repeated in the terminal summary.
"""
import dataclasses
import logging
import random
import time

import oracle
from conftest import ACCEPTANCE_LINES, PW, build_net
from aeaka.crypto import xor
from aeaka.device import password_digest
from aeaka.errors import NotFound
from aeaka.sim.attacks import ATTACKS, attack_network, run_battery
from aeaka.sim.cost import emit_cost_table, summarize
from aeaka.sim.network import Network
from aeaka.wire import decode


def report(name: str, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'}  {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def mixed_network(seed, n_dev=4, n=8) -> Network:
    net = Network(seed)
    net.add_cs("CS1", ["storage"])
    net.add_cs("CS2", ["storage", "ml"])
    net.add_es("ES1", ["CS1", "CS2"], local=["video"])
    net.add_es("ES2", ["CS2"], local=["video", "audio"])
    for i in range(n_dev):
        net.add_device(f"D{i}", f"user{i}", f"dev-{i}", f"{PW} {i}", ["ES1", "ES2"], n=n)
    return net


def test_case1_communication_cost():
    t0 = time.perf_counter()
    run = build_net(seed=1).authenticate("D1", "ES1", "video")
    elapsed = time.perf_counter() - t0
    bits = run.cost.total_bits
    report("case1-bits", run.case == "case1" and bits == 1344 and elapsed < 1.0,
           f"{' + '.join(f'{m}={b}' for m, b in run.cost.messages)} = {bits} (want 1344), {elapsed:.3f}s")


def test_case2_communication_cost():
    run = build_net(seed=1).authenticate("D1", "ES1", "storage")
    bits = run.cost.total_bits
    names = [m for m, _ in run.cost.messages]
    report("case2-bits", run.case == "case2" and names == ["Msg1", "Msg3", "Msg4", "Msg5"] and bits == 2688,
           f"{' + '.join(f'{m}={b}' for m, b in run.cost.messages)} = {bits} (want 2688)")


def test_hash_counts_200_runs():
    net = build_net(seed=2)
    got = {}
    for tag, case in (("video", "case1"), ("storage", "case2")):
        seen = set()
        for _ in range(200):
            net.clock.advance(1)
            run = net.authenticate("D1", "ES1", tag)
            assert run.case == case
            seen.add(tuple(sorted(run.cost.per_role().items())))
        got[case] = seen
    want = {"case1": {(("device", 4), ("es", 4))},
            "case2": {(("cs", 5), ("device", 5), ("es", 7))}}
    report("hash-counts", got == want,
           f"case1 {sorted(got['case1'])} case2 {sorted(got['case2'])} over 200 runs each")


def test_timing_is_informational():
    net = build_net(seed=3)
    reports = []
    for tag in ("video", "storage"):
        for _ in range(50):
            net.clock.advance(1)
            reports.append(net.authenticate("D1", "ES1", tag).cost)
    table = emit_cost_table(reports)
    ms = {s.case: s.mean_ms for s in summarize(reports)}
    ok = "informational" in table and all(set(v) >= {"device", "es"} for v in ms.values())
    detail = "; ".join(f"{c} " + " ".join(f"{r}={v:.4f}ms" for r, v in sorted(t.items()))
                       for c, t in sorted(ms.items()))
    report("timing-informational", ok, f"hash counts substitute for ms figures; measured {detail}")


def test_key_agreement_1000_runs():
    t0 = time.perf_counter()
    rng = random.Random(2024)
    runs = []
    for seed in range(5):
        net = mixed_network(seed)
        for _ in range(210):
            dev = rng.choice(sorted(net.devices))
            es = rng.choice(["ES1", "ES2"])
            tag = rng.choice(sorted(net.ess[es].capabilities.routes))
            net.clock.advance(rng.randint(0, 2))
            runs.append(net.authenticate(dev, es, f"{tag};req={rng.getrandbits(32)}"))
    elapsed = time.perf_counter() - t0
    agree = sum(r.keys_agree for r in runs)
    cases = {c: sum(r.case == c for r in runs) for c in ("case1", "case2")}
    report("key-agreement", agree == len(runs) >= 1000 and min(cases.values()) > 0 and elapsed < 10,
           f"{agree}/{len(runs)} runs agree ({cases['case1']} case1, {cases['case2']} case2) in {elapsed:.2f}s")


def test_adversary_suite():
    parts = []
    ok = True
    for name in ATTACKS:
        net = attack_network(seed=11)
        out = run_battery(name, net, "D1", "ES1", "video", "storage",
                          cross=("D1", "ES2"), rogue_es="ES2", rogue_cs="CS2")
        if name == "tamper":
            tampered = {r.variant for r in net.transcript if r.origin == "adversary:tamper"}
            ok &= tampered >= {"Msg1", "Msg2", "Msg3", "Msg4", "Msg5"}
        if name == "replay":
            ok &= {"ReplayDetected", "StaleTimestamp"} <= set(out.rejections)
        if name == "steal-device":
            ok &= out.attempts >= 100
        ok &= out.ok
        parts.append(f"{name} {out.accepted}/{out.attempts}")
    report("adversary-suite", ok, "accepted/attempts: " + ", ".join(parts))


def _state_bytes(obj, out, seen):
    """Every byte string and text reachable from an entity's state."""
    if id(obj) in seen:
        return
    seen.add(id(obj))
    if isinstance(obj, (bytes, bytearray)):
        out.append(bytes(obj))
    elif isinstance(obj, str):
        out.append(obj.encode())
    elif isinstance(obj, dict):
        for k, v in obj.items():
            _state_bytes(k, out, seen)
            _state_bytes(v, out, seen)
    elif isinstance(obj, (list, tuple, set, frozenset)):
        for v in obj:
            _state_bytes(v, out, seen)
    elif dataclasses.is_dataclass(obj) or hasattr(obj, "__dict__"):
        if isinstance(obj, random.Random):
            return
        for v in vars(obj).values():
            _state_bytes(v, out, seen)
    elif hasattr(obj, "keys") and hasattr(obj, "_seen"):
        _state_bytes(obj._seen, out, seen)


def test_semi_trusted_server_scan(caplog):
    caplog.set_level(logging.DEBUG, logger="aeaka")
    net = mixed_network(21, n_dev=3)
    rng = random.Random(5)
    for _ in range(50):
        dev = rng.choice(sorted(net.devices))
        es = rng.choice(["ES1", "ES2"])
        net.clock.advance(1)
        assert net.authenticate(dev, es, rng.choice(["video", "storage"])).keys_agree
    # a rejected run too, so the rejection log path is exercised
    net.authenticate("D0", "ES1", "video", interceptors=[lambda e: None], pw="wrong")
    secrets = []
    for name, p in net.profiles.items():
        dev = net.devices[name]
        epw = password_digest(p.uid, p.pw)
        secrets += [p.pw.encode(), epw, dev.did]
        secrets += [xor(epw, b) for pool in dev.pools.values() for b in pool.bs]

    def dump():
        blobs = []
        for ent in [*net.ess.values(), *net.css.values()]:
            parts = []
            _state_bytes(ent, parts, set())
            blobs.append(b"\x00".join(parts))
            blobs.append(repr(ent.to_records()).encode())
        blobs.append(caplog.text.encode())
        return b"\x00".join(blobs)

    def hits(blob):
        return [s for s in secrets if s in blob or s.hex().encode() in blob]

    clean = dump()
    found = hits(clean)
    # positive control: a planted a-value must be seen by the same scan
    net.css["CS1"].session_keys[b"planted"] = secrets[-1]
    control = hits(dump()) == [secrets[-1]]
    del net.css["CS1"].session_keys[b"planted"]
    report("semi-trusted-scan", not found and control and len(secrets) == 3 * (3 + 2 * 8),
           f"{len(secrets)} secret patterns, {len(clean)} bytes of ES/CS state and logs, "
           f"{len(found)} hits, planted control detected: {control}")


def test_password_update():
    net = build_net(seed=31)
    dev = net.devices["D1"]
    old_epw = password_digest("alice", PW)
    before = [xor(old_epw, b) for pool in dev.pools.values() for b in pool.bs]
    dev.update_password("alice", "dev-1", PW, "new secret")
    new_epw = password_digest("alice", "new secret")
    after = [xor(new_epw, b) for pool in dev.pools.values() for b in pool.bs]
    net.profiles["D1"].pw = "new secret"
    ops = net.ta.operations
    old = net.authenticate("D1", "ES1", "video", pw=PW)
    c1 = net.authenticate("D1", "ES1", "video")
    c2 = net.authenticate("D1", "ES1", "storage")
    ta_ops = net.ta.operations - ops
    ok = (before == after and old.error == "BadCredentials" and c1.case == "case1"
          and c2.case == "case2" and c1.keys_agree and c2.keys_agree and ta_ops == 0)
    report("password-update", ok,
           f"{len(after)} a-values preserved, old pw -> {old.error}, case1 {c1.outcome}, "
           f"case2 {c2.outcome}, TA operations during auth {ta_ops}")


def test_traceability():
    net = mixed_network(41, n_dev=5, n=10)
    issued = []
    for name, p in net.profiles.items():
        for pool in net.devices[name].pools.values():
            issued += [(pid, net.devices[name].did, p.uid, p.device_id) for pid in pool.pids[:10]]
    issued = issued[:100]
    good = 0
    for pid, did, uid, device_id in issued:
        ident = net.ta.trace(pid)
        good += (ident.did, ident.uid, ident.device_id) == (did, uid, device_id)
    rng = random.Random(42)
    missing = 0
    for _ in range(100):
        try:
            net.ta.trace(rng.randbytes(32))
        except NotFound:
            missing += 1
    report("traceability", len(issued) == 100 and good == 100 and missing == 100,
           f"{good}/100 pseudonyms traced, {missing}/100 random digests NotFound")


def _instance(k: int) -> int:
    """One randomized run of both cases, every derivation checked against the oracle."""
    r = random.Random(f"oracle:{k}")
    word = lambda: "".join(r.choice("abcdefghij0123456789 ") for _ in range(r.randint(1, 12)))  # noqa: E731
    uid, did_str, pw = word(), word(), word()
    net = Network(r.getrandbits(32), start_time=r.randint(10**6, 2**31))
    net.add_cs("CS", ["storage"])
    net.add_es("ES", ["CS"], local=["video"])
    net.add_device("D", uid, did_str, pw, ["ES"], n=r.randint(1, 6))
    dev, es, cs, ta = net.devices["D"], net.ess["ES"], net.css["CS"], net.ta
    for ent in (dev, es, cs):
        ent.rng = oracle.RecordingRandom(r.getrandbits(64))
    checks = 0

    def eq(a, b):
        nonlocal checks
        assert a == b
        checks += 1

    s, cs_pk, es_pk = ta.s, cs.keypair.pk, es.keypair.pk
    eq(cs.sc, oracle.sc(s, cs_pk))
    eq(es.se, oracle.se(s, es_pk))
    entry = es.e2c["CS"]
    eq(entry.pid, oracle.pid_jk("ES", cs_pk))
    eq(entry.c, oracle.c_jk(s, "ES", cs_pk))
    eq(dev.did, oracle.did(uid, did_str, s))
    epw = oracle.epw(uid, pw)
    pool = dev.pools[es.public_id]
    for x, (pid, b) in enumerate(zip(pool.pids, pool.bs)):
        eq(pid, oracle.pid_x(dev.did, es_pk, net.clock.now() + x))
        eq(b, oracle.X(epw, oracle.a_x(pid, s, es_pk)))

    net.clock.advance(r.randint(1, 3))
    req1 = f"video;{word()}".encode()
    run = net.authenticate("D", "ES", req1)
    assert run.case == "case1"
    m1, m2 = (decode(net.transcript[i].data) for i in run.records)
    x1, x2 = dev.rng.draws[-1], es.rng.draws[-1]
    a = oracle.a_x(m1.pid, s, es_pk)
    want = oracle.case1(a, m1.pid, x1, x2, req1, m1.t, m2.t)
    for key, got in (("M1", m1.m1), ("alpha", m1.alpha), ("M2", m2.m2), ("beta", m2.beta),
                     ("sk", run.keys["device"]), ("sk", run.keys["es"])):
        eq(got, want[key])

    net.clock.advance(r.randint(1, 3))
    req2 = f"storage;{word()}".encode()
    run = net.authenticate("D", "ES", req2)
    assert run.case == "case2"
    m1, m3, m4, m5 = (decode(net.transcript[i].data) for i in run.records)
    x1, x3 = dev.rng.draws[-1], cs.rng.draws[-1]
    a = oracle.a_x(m1.pid, s, es_pk)
    want = oracle.case2(a, m1.pid, x1, x3, req2, m1.t, entry.pid, entry.c, oracle.sc(s, cs_pk),
                        m3.t, m4.t, m5.t)
    for key, got in (("M1", m1.m1), ("alpha", m1.alpha), ("M3", m3.m3), ("theta", m3.theta),
                     ("M4", m4.m4), ("nu", m4.nu), ("M5", m5.m5), ("epsilon", m5.epsilon),
                     ("sk", run.keys["device"]), ("sk", run.keys["es_relay"]), ("sk", run.keys["cs"]),
                     ("S_ij", next(iter(cs.session_keys.keys()))), ("A_jk", entry.c)):
        eq(got, want[key])
    eq(xor(m4.m4, want["A_jk"]), want["S_jk"])
    return checks


def test_oracle_equivalence():
    checks = sum(_instance(k) for k in range(100))
    report("oracle-equivalence", checks > 100 * 25,
           f"100 randomized instances, {checks} byte-exact comparisons "
           "(SC, SE, pid_jk, C_jk, DID, pid_x, a, b, A, S, sk, alpha, beta, theta, nu, epsilon)")
