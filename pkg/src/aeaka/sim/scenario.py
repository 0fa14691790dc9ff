"""JSON scenarios: a seeded topology plus a script of actions with expectations.

A scenario document::

    {
      "name": "case1", "seed": 7, "window": 5, "pool": 16, "tick": 1,
      "topology": {
        "cs": [{"cid": "CS1", "services": ["storage"]}],
        "es": [{"eid": "ES1", "cs": ["CS1"], "local": ["video"]}],
        "devices": [{"name": "D1", "uid": "alice", "id": "dev-1", "pw": "pw", "es": ["ES1"]}]
      },
      "script": [
        {"action": "auth", "device": "D1", "es": "ES1", "service": "video", "expect": "case1"}
      ]
    }

``expect`` is ``accept`` (any success), ``reject`` (any rejection), ``case1``,
``case2``, or an exception name such as ``ReplayDetected``.
"""
from __future__ import annotations

import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from typing import Any

from ..errors import AeakaError, ProtocolError, ScenarioError
from .attacks import (
    AttackOutcome, adversary_replay, adversary_tamper, impersonate_cs, impersonate_device,
    impersonate_es, steal_device,
)
from .cost import CostReport
from .network import AuthRun, Network, drop_hook, tamper_hook

NETWORK_KEYS = ("window", "pool", "pool_mode", "lockout", "start_time")
ADVERSARY_ACTIONS = {"replay", "tamper", "steal_device", "impersonate"}
SUCCESS = {"accept", "case1", "case2"}


@dataclass
class Scenario:
    name: str
    seed: int | str
    topology: dict
    script: list[dict]
    settings: dict = field(default_factory=dict)
    tick: int = 1

    @classmethod
    def from_dict(cls, doc: dict) -> "Scenario":
        if not isinstance(doc, dict) or not isinstance(doc.get("script"), list):
            raise ScenarioError("scenario must be an object with a 'script' list")
        for i, step in enumerate(doc["script"]):
            if not isinstance(step, dict) or "action" not in step:
                raise ScenarioError(f"step {i}: missing 'action'")
        return cls(name=doc.get("name", "scenario"), seed=doc.get("seed", 0),
                   topology=doc.get("topology", {}), script=doc["script"],
                   settings={k: doc[k] for k in NETWORK_KEYS if k in doc},
                   tick=doc.get("tick", 1))

    @classmethod
    def load(cls, path: str | os.PathLike) -> "Scenario":
        try:
            with open(path) as f:
                return cls.from_dict(json.load(f))
        except (OSError, json.JSONDecodeError) as e:
            raise ScenarioError(f"cannot load scenario {path}: {e}") from e

    @property
    def is_adversarial(self) -> bool:
        return any(s["action"] in ADVERSARY_ACTIONS or "tamper" in s or "drop" in s
                   or "target" in s for s in self.script)


@dataclass
class ActionOutcome:
    step: int
    action: str
    result: str
    expect: str | None
    detail: str = ""

    @property
    def ok(self) -> bool:
        return self.expect is None or matches(self.expect, self.result)

    def line(self) -> str:
        mark = "  " if self.expect is None else ("ok" if self.ok else "XX")
        exp = f" (expected {self.expect})" if self.expect else ""
        det = f" - {self.detail}" if self.detail else ""
        return f"[{mark}] {self.step:>3} {self.action:<16} {self.result}{exp}{det}"


@dataclass
class ScenarioResult:
    scenario: Scenario
    network: Network
    outcomes: list[ActionOutcome]
    costs: list[CostReport]
    runs: list[AuthRun]

    @property
    def passed(self) -> bool:
        return all(o.ok for o in self.outcomes)

    @property
    def transcript(self) -> str:
        return self.network.dump_transcript()


def matches(expect: str, result: str) -> bool:
    if expect == result:
        return True
    if expect == "accept":
        return result in SUCCESS
    if expect == "reject":
        return result not in SUCCESS
    return False


def _attack_result(out: AttackOutcome, want_accept: bool = False) -> tuple[str, str]:
    if want_accept:
        res = "accept" if out.attempts and out.accepted == out.attempts else "reject"
    else:
        res = "reject" if out.ok else "accept"
    return res, out.summary()


class Runner:
    def __init__(self, scenario: Scenario):
        self.sc = scenario
        self.net = Network(scenario.seed, **scenario.settings)
        self.outcomes: list[ActionOutcome] = []
        self.costs: list[CostReport] = []
        self.runs: list[AuthRun] = []

    def _need(self, table: dict, name: Any, what: str) -> str:
        if name not in table:
            raise ScenarioError(f"undeclared {what} {name!r}")
        return name

    def register(self, step: dict) -> None:
        role = step.get("role")
        net = self.net
        if role == "cs":
            net.add_cs(step["cid"], step.get("services", []))
        elif role == "es":
            net.add_es(step["eid"], step.get("cs", []), step.get("local", []), step.get("routes"))
        elif role == "device":
            net.add_device(step["name"], step["uid"], step["id"], step["pw"], step.get("es", []),
                           step.get("n"))
        else:
            raise ScenarioError(f"register: unknown role {role!r}")

    def build(self) -> None:
        topo = self.sc.topology
        for cs in topo.get("cs", []):
            self.register({"role": "cs", **cs})
        for es in topo.get("es", []):
            self.register({"role": "es", **es})
        for dev in topo.get("devices", []):
            self.register({"role": "device", **dev})

    def _select(self, step: dict) -> int:
        if "index" in step:
            return step["index"]
        variant = step.get("variant")
        hits = [r.index for r in self.net.transcript
                if r.variant == variant and r.origin == "honest" and r.outcome == "accepted"]
        if not hits:
            raise ScenarioError(f"no captured {variant!r} message to select")
        return hits[step.get("nth", -1)]

    def step(self, i: int, step: dict) -> ActionOutcome:
        net, act = self.net, step["action"]
        detail = ""
        try:
            if act == "register":
                self.register(step)
                result = "accept"
            elif act == "advance":
                net.clock.advance(int(step["seconds"]))
                result = "ok"
            elif act == "skew":
                net.set_skew(step["entity"], int(step["seconds"]))
                result = "ok"
            elif act == "login":
                self._need(net.devices, step.get("device"), "device")
                net.login(step["device"], step.get("pw"))
                result = "accept"
            elif act == "auth":
                self._need(net.devices, step.get("device"), "device")
                self._need(net.ess, step.get("es"), "ES")
                if step.get("target") is not None:
                    self._need(net.ess, step["target"], "ES")
                hooks = []
                if "tamper" in step:
                    t = step["tamper"]
                    hooks.append(tamper_hook(t["variant"], t["offset"], t.get("mask", 1)))
                if "drop" in step:
                    hooks.append(drop_hook(step["drop"]))
                net.clock.advance(self.sc.tick)
                run = net.authenticate(step["device"], step["es"], step.get("service", ""),
                                       pw=step.get("pw"), target=step.get("target"),
                                       interceptors=hooks)
                self.runs.append(run)
                if run.cost is not None and run.accepted:
                    self.costs.append(run.cost)
                result = run.outcome
                if run.rejected_by:
                    detail = f"rejected by {run.rejected_by}"
                elif run.cost is not None:
                    detail = f"hashes {run.cost.per_role()} bits {run.cost.total_bits}"
            elif act in ("replay", "tamper"):
                idx = self._select(step)
                rec = net.transcript[idx]
                ex = (adversary_replay(net, idx) if act == "replay"
                      else adversary_tamper(net, idx, step["offset"], step.get("mask", 1)))
                accepted = rec.dst in ex.accepted_by
                result = "accept" if accepted else (ex.rejections[0][1] if ex.rejections else "reject")
                detail = f"{rec.variant} #{idx} -> {rec.dst}"
            elif act == "update_password":
                dev = self._need(net.devices, step.get("device"), "device")
                p = net.profiles[dev]
                net.devices[dev].update_password(p.uid, p.device_id, step["old"], step["new"])
                p.pw = step["new"]
                result = "accept"
            elif act == "steal_device":
                dev = self._need(net.devices, step.get("device"), "device")
                es = self._need(net.ess, step.get("es"), "ES")
                out = steal_device(net, dev, es, step.get("service", ""), step.get("guesses", 100),
                                   step.get("password"))
                result, detail = _attack_result(out, want_accept=step.get("password") is not None)
            elif act == "impersonate":
                result, detail = self._impersonate(step)
            else:
                raise ScenarioError(f"step {i}: unknown action {act!r}")
        except ProtocolError as e:
            result, detail = type(e).__name__, str(e)
        except KeyError as e:
            raise ScenarioError(f"step {i} ({act}): missing field {e}") from e
        except AeakaError as e:
            if isinstance(e, ScenarioError):
                raise
            result, detail = type(e).__name__, str(e)
        return ActionOutcome(i, act, result, step.get("expect"), detail)

    def _impersonate(self, step: dict) -> tuple[str, str]:
        net = self.net
        role = step.get("role")
        es = self._need(net.ess, step.get("es"), "ES")
        n = step.get("attempts", 20)
        if role == "device":
            cross = None
            if "device" in step:
                cross = (self._need(net.devices, step["device"], "device"),
                         self._need(net.ess, step["via"], "ES"))
            out = impersonate_device(net, es, step.get("service", ""), n, cross)
        elif role == "es":
            dev = self._need(net.devices, step.get("device"), "device")
            out = impersonate_es(net, dev, es, step["service"], step.get("cloud_service"),
                                 step.get("rogue"), n)
        elif role == "cs":
            dev = self._need(net.devices, step.get("device"), "device")
            out = impersonate_cs(net, dev, es, step["service"], step.get("rogue"), n)
        else:
            raise ScenarioError(f"impersonate: unknown role {role!r}")
        return _attack_result(out)

    def run(self) -> ScenarioResult:
        self.build()
        for i, step in enumerate(self.sc.script):
            self.outcomes.append(self.step(i, step))
        return ScenarioResult(self.sc, self.net, self.outcomes, self.costs, self.runs)


def run(scenario: Scenario | dict | str | os.PathLike) -> ScenarioResult:
    if isinstance(scenario, dict):
        scenario = Scenario.from_dict(scenario)
    elif not isinstance(scenario, Scenario):
        scenario = Scenario.load(scenario)
    return Runner(scenario).run()


def shipped() -> dict[str, Scenario]:
    """Scenarios bundled with the package, by file stem."""
    out = {}
    for entry in sorted(resources.files("aeaka.scenarios").iterdir(), key=lambda p: p.name):
        if entry.name.endswith(".json"):
            out[entry.name[:-5]] = Scenario.from_dict(json.loads(entry.read_text()))
    return out


def stress(net: Network, jobs: list[tuple[str, str, str]], workers: int = 8) -> list[AuthRun]:
    """Run auth jobs ``(device, es, service)`` concurrently over one network.

    Transcript order is not deterministic here; only per-run invariants are.
    """
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(lambda j: net.authenticate(*j), jobs))
