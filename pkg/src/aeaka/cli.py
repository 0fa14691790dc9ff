"""``aeaka`` command line: setup, register, auth, attack, bench, update-password.

Exit codes: 0 success, 1 protocol or authentication failure, 2 usage or
configuration error.

Store directory layout::

    <dir>/ta.jsonl                  trust authority (master secret, lists)
    <dir>/cs/<cid>.jsonl            cloud server credentials
    <dir>/es/<eid>.jsonl            edge server credentials and routes
    <dir>/devices/<name>.jsonl      device credential store
    <dir>/devices/<name>.profile.json   user and device identifiers
"""
from __future__ import annotations

import json
import sys
import time
from dataclasses import asdict, dataclass
from pathlib import Path

import click

from . import store
from .authority import TrustAuthority
from .cloud import CloudServer
from .crypto import hash, make_rng
from .device import DEFAULT_LOCKOUT, DEFAULT_WINDOW, POOL_MODES, Device
from .edge import LOCAL, Capabilities, EdgeServer
from .errors import (
    AeakaError, ProtocolError, RegistrationError, ScenarioError, StoreError, UnknownEs,
)
from .sim.attacks import ATTACKS, run_attack
from .sim.cost import cost_csv, emit_cost_table, summarize
from .sim.network import Network
from .sim.scenario import Scenario, run as run_scenario, shipped

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2

# values the cost bench must reproduce exactly
EXPECTED = {
    "case1": ({"device": 4, "es": 4}, 1344),
    "case2": ({"device": 5, "es": 7, "cs": 5}, 2688),
}


@dataclass
class CliConfig:
    dir: Path
    seed: int | None
    window: int
    pool: int
    pool_mode: str
    lockout: int
    show_secrets: bool
    json: bool

    def rng(self, *scope: str):
        return make_rng(None if self.seed is None else ":".join([str(self.seed), *scope]))

    @property
    def ta_path(self) -> Path:
        return self.dir / "ta.jsonl"

    def cs_path(self, cid: str) -> Path:
        return self.dir / "cs" / f"{cid}.jsonl"

    def es_path(self, eid: str) -> Path:
        return self.dir / "es" / f"{eid}.jsonl"

    def device_path(self, name: str) -> Path:
        return self.dir / "devices" / f"{name}.jsonl"

    def profile_path(self, name: str) -> Path:
        return self.dir / "devices" / f"{name}.profile.json"


class Fail(click.ClickException):
    """Protocol-level failure: exit 1."""
    exit_code = EXIT_FAIL


class ConfigError(click.ClickException):
    exit_code = EXIT_USAGE


def emit(cfg: CliConfig, text: str, data: dict) -> None:
    if cfg.json:
        click.echo(json.dumps(data, sort_keys=True))
    else:
        click.echo(text)


def fingerprint(key: bytes) -> str:
    return hash([key]).hex()[:16]


def _load(path: Path) -> list[dict]:
    if not path.exists():
        raise ConfigError(f"no snapshot at {path}")
    try:
        return store.read_records(path)
    except StoreError as e:
        raise ConfigError(str(e)) from e


def load_ta(cfg: CliConfig, scope: str) -> TrustAuthority:
    return TrustAuthority.from_records(_load(cfg.ta_path), cfg.rng("ta", scope))


def _password(pw: str | None, prompt: str) -> str:
    return pw if pw is not None else click.prompt(prompt, hide_input=True)


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.option("--dir", "dir_", type=click.Path(file_okay=False, path_type=Path), default=Path("aeaka-store"),
              show_default=True, help="Store directory.")
@click.option("--seed", type=int, default=None, help="Seed all randomness (reproducible runs).")
@click.option("--window", type=click.IntRange(min=1), default=DEFAULT_WINDOW, show_default=True,
              help="Timestamp freshness window, seconds.")
@click.option("--pool", type=click.IntRange(min=1), default=16, show_default=True,
              help="Pseudonyms issued per ES at device registration.")
@click.option("--pool-mode", type=click.Choice(POOL_MODES), default="reuse", show_default=True)
@click.option("--lockout", type=click.IntRange(min=1), default=DEFAULT_LOCKOUT, show_default=True,
              help="Failed logins before the device locks.")
@click.option("--show-secrets", is_flag=True, help="Print credentials and keys.")
@click.option("--json", "as_json", is_flag=True, help="Machine-readable output.")
@click.pass_context
def main(ctx, dir_, seed, window, pool, pool_mode, lockout, show_secrets, as_json):
    """Cloud-edge-device authentication and key agreement toolkit."""
    ctx.obj = CliConfig(dir_, seed, window, pool, pool_mode, lockout, show_secrets, as_json)


@main.command()
@click.option("--force", is_flag=True, help="Overwrite an existing store.")
@click.pass_obj
def setup(cfg: CliConfig, force: bool):
    """Initialize the trust authority in the store directory."""
    if cfg.ta_path.exists() and not force:
        raise ConfigError(f"AlreadyInitialized: {cfg.ta_path} exists (use --force)")
    ta = TrustAuthority(make_rng(None if cfg.seed is None else f"{cfg.seed}:ta").randbytes(32),
                        cfg.rng("ta", "setup"))
    try:
        store.write_records(cfg.ta_path, ta.to_records())
    except OSError as e:
        raise ConfigError(f"IoError: {e}") from e
    data = {"store": str(cfg.dir)}
    if cfg.show_secrets:
        data["s"] = ta.s.hex()
    emit(cfg, f"initialized trust authority in {cfg.dir}" + (f"\ns = {ta.s.hex()}" if cfg.show_secrets else ""),
         data)


@main.group()
def register():
    """Register a cloud server, edge server, or device with the TA."""


def _registration(fn):
    def wrapper(*a, **kw):
        try:
            return fn(*a, **kw)
        except (RegistrationError, UnknownEs) as e:
            raise ConfigError(f"{type(e).__name__}: {e}") from e
    wrapper.__name__ = fn.__name__
    wrapper.__doc__ = fn.__doc__
    return wrapper


@register.command("cs")
@click.option("--cid", required=True)
@click.option("--service", "services", multiple=True, help="Service tag this CS offers (repeatable).")
@click.pass_obj
@_registration
def register_cs(cfg: CliConfig, cid: str, services: tuple[str, ...]):
    ta = load_ta(cfg, f"cs:{cid}")
    creds = ta.register_cs(cid)
    cs = CloudServer(creds, set(services), window=cfg.window)
    store.write_records(cfg.cs_path(cid), cs.to_records())
    store.write_records(cfg.ta_path, ta.to_records())
    data = {"role": "cs", "cid": cid, "pk_digest": creds.keypair.pk_digest.hex(), "services": sorted(services)}
    if cfg.show_secrets:
        data["sc"] = creds.sc.hex()
    emit(cfg, "\n".join(f"{k}: {v}" for k, v in data.items()), data)


@register.command("es")
@click.option("--eid", required=True)
@click.option("--cs", "cs_list", multiple=True, help="CS to obtain a pseudonym for (repeatable, ordered).")
@click.option("--local", "local_tags", multiple=True, help="Service tag served by the ES itself.")
@click.option("--capabilities", type=click.Path(dir_okay=False, exists=True),
              help="JSON file of tag -> 'local' | [CID, ...]; overrides --local and CS services.")
@click.pass_obj
@_registration
def register_es(cfg: CliConfig, eid: str, cs_list, local_tags, capabilities):
    ta = load_ta(cfg, f"es:{eid}")
    creds = ta.register_es(eid, list(cs_list))
    if capabilities:
        try:
            caps = Capabilities.load(capabilities)
        except (StoreError, ValueError) as e:
            raise ConfigError(str(e)) from e
    else:
        routes: dict = {}
        for cid in cs_list:
            path = cfg.cs_path(cid)
            services = store.one(_load(path), "cs")["services"] if path.exists() else []
            for tag in services:
                routes.setdefault(tag, []).append(cid)
        for tag in local_tags:
            routes[tag] = LOCAL
        caps = Capabilities(routes)
    es = EdgeServer(creds, caps, window=cfg.window)
    store.write_records(cfg.es_path(eid), es.to_records())
    store.write_records(cfg.ta_path, ta.to_records())
    data = {"role": "es", "eid": eid, "pk_digest": creds.keypair.pk_digest.hex(),
            "cs": [e.cid for e in creds.e2c], "capabilities": caps.to_json()}
    if cfg.show_secrets:
        data["se"] = creds.se.hex()
        data["e2c"] = {e.cid: {"pid": e.pid.hex(), "c": e.c.hex()} for e in creds.e2c}
    emit(cfg, "\n".join(f"{k}: {v}" for k, v in data.items()), data)


@register.command("device")
@click.option("--name", required=True, help="Local name of the device store.")
@click.option("--uid", required=True)
@click.option("--id", "device_id", required=True)
@click.option("--pw", default=None, help="Password (prompted if omitted).")
@click.option("--es", "es_list", multiple=True, required=True, help="ES to get pseudonyms for (repeatable).")
@click.option("--n", type=click.IntRange(min=1), default=None, help="Pool size (default: --pool).")
@click.pass_obj
@_registration
def register_device(cfg: CliConfig, name, uid, device_id, pw, es_list, n):
    pw = _password(pw, "Password")
    ta = load_ta(cfg, f"device:{name}")
    dev = Device.register(ta, uid, device_id, pw, list(es_list), n or cfg.pool, label=name,
                          window=cfg.window, lockout=cfg.lockout, pool_mode=cfg.pool_mode)
    store.write_records(cfg.device_path(name), dev.to_records())
    cfg.profile_path(name).write_text(json.dumps({"uid": uid, "id": device_id, "es": list(es_list)}) + "\n")
    store.write_records(cfg.ta_path, ta.to_records())
    data = {"role": "device", "name": name, "bundles": len(dev.pools),
            "pseudonyms_per_es": n or cfg.pool}
    if cfg.show_secrets:
        data["did"] = dev.did.hex()
    emit(cfg, "\n".join(f"{k}: {v}" for k, v in data.items()), data)


def _load_device(cfg: CliConfig, name: str) -> tuple[Device, dict]:
    dev = Device.from_records(_load(cfg.device_path(name)), rng=cfg.rng("device", name, "run"))
    path = cfg.profile_path(name)
    if not path.exists():
        raise ConfigError(f"no profile at {path}")
    return dev, json.loads(path.read_text())


@main.command()
@click.option("--device", required=True)
@click.option("--es", required=True)
@click.option("--service", required=True, help="Service request; its tag picks Case 1 or Case 2.")
@click.option("--pw", default=None, help="Password (prompted if omitted).")
@click.option("--transcript", type=click.Path(dir_okay=False, writable=True),
              help="Write the hex transcript here.")
@click.pass_obj
def auth(cfg: CliConfig, device, es, service, pw, transcript):
    """Log in and run one authentication; prints case, outcome and costs."""
    dev, profile = _load_device(cfg, device)
    es_srv = EdgeServer.from_records(_load(cfg.es_path(es)), rng=cfg.rng("es", es, "run"))
    net = Network(cfg.seed or 0, window=cfg.window, start_time=int(time.time()), with_ta=False)
    net.attach_device(dev, profile["uid"], profile["id"])
    net.attach_es(es_srv)
    for cid in es_srv.e2c:
        if cfg.cs_path(cid).exists():
            net.attach_cs(CloudServer.from_records(_load(cfg.cs_path(cid)), rng=cfg.rng("cs", cid, "run")))
    run = net.authenticate(device, es, service, pw=_password(pw, "Password"))
    store.write_records(cfg.device_path(device), dev.to_records())
    if transcript:
        Path(transcript).write_text(net.dump_transcript())

    data = {"device": device, "es": es, "service": service, "outcome": run.outcome,
            "case": run.case, "rejected_by": run.rejected_by}
    lines = []
    if run.accepted:
        key = run.keys["device"]
        per_role = run.cost.per_role()
        data.update(fingerprint=fingerprint(key), keys_agree=run.keys_agree, hashes=per_role,
                    total_hashes=run.cost.total_hashes, messages=dict(run.cost.messages),
                    total_bits=run.cost.total_bits)
        case = "Case 1" if run.case == "case1" else "Case 2"
        lines.append(f"{case}: accepted, {run.cost.total_hashes} hashes, {run.cost.total_bits} bits")
        lines.append(f"session key fingerprint: {data['fingerprint']} "
                     f"(all parties agree: {'yes' if run.keys_agree else 'NO'})")
        lines.append("hashes: " + " ".join(f"{r}={n}" for r, n in per_role.items()))
        lines.append("bits: " + " + ".join(f"{m}={b}" for m, b in run.cost.messages)
                     + f" = {run.cost.total_bits}")
        if cfg.show_secrets:
            data["session_key"] = key.hex()
            lines.append(f"session key: {key.hex()}")
    else:
        lines.append(f"rejected: {run.outcome}" + (f" by {run.rejected_by}" if run.rejected_by else ""))
    emit(cfg, "\n".join(lines), data)
    if not (run.accepted and run.keys_agree):
        sys.exit(EXIT_FAIL)


@main.command("update-password")
@click.option("--device", required=True)
@click.option("--old", "old_pw", default=None)
@click.option("--new", "new_pw", default=None)
@click.pass_obj
def update_password(cfg: CliConfig, device, old_pw, new_pw):
    """Re-mask the device's stored credentials under a new password."""
    dev, profile = _load_device(cfg, device)
    old_pw = _password(old_pw, "Current password")
    new_pw = _password(new_pw, "New password")
    try:
        dev.update_password(profile["uid"], profile["id"], old_pw, new_pw)
    except ProtocolError as e:
        # store left byte-identical on failure
        raise Fail(f"{type(e).__name__}: {e}") from e
    store.write_records(cfg.device_path(device), dev.to_records())
    emit(cfg, f"password updated for {device}", {"device": device, "updated": True})


@main.command()
@click.argument("name")
@click.pass_obj
def attack(cfg: CliConfig, name: str):
    """Run an attack battery (or 'all', or a scenario JSON file); exit 0 iff every attack is rejected.

    Batteries: replay, tamper, impersonate-device, impersonate-es, impersonate-cs, steal-device.
    """
    bundled = shipped()
    if name.endswith(".json") or name in bundled:
        try:
            result = run_scenario(bundled.get(name) or Scenario.load(name))
        except ScenarioError as e:
            raise ConfigError(str(e)) from e
        lines = [o.line() for o in result.outcomes]
        emit(cfg, "\n".join(lines), {"scenario": result.scenario.name, "passed": result.passed,
                                     "outcomes": [asdict(o) for o in result.outcomes]})
        sys.exit(EXIT_OK if result.passed else EXIT_FAIL)
    names = ATTACKS if name == "all" else (name,)
    if any(n not in ATTACKS for n in names):
        raise ConfigError(f"unknown attack {name!r}; choose from all, {', '.join(ATTACKS)}, "
                          f"or a scenario ({', '.join(bundled)})")
    outcomes = [run_attack(n, seed=cfg.seed or 0, window=cfg.window, pool=cfg.pool,
                           pool_mode=cfg.pool_mode, lockout=cfg.lockout) for n in names]
    emit(cfg, "\n".join(o.summary() for o in outcomes),
         {o.name: {"attempts": o.attempts, "accepted": o.accepted, "rejections": dict(o.rejections)}
          for o in outcomes})
    sys.exit(EXIT_OK if all(o.ok for o in outcomes) else EXIT_FAIL)


def bench_network(seed: int | str = 0, **kw) -> Network:
    net = Network(seed, **kw)
    net.add_cs("CS1", ["storage"])
    net.add_es("ES1", ["CS1"], local=["video"])
    net.add_device("D1", "alice", "dev-1", "correct horse", ["ES1"])
    return net


@main.command()
@click.option("--runs", type=click.IntRange(min=1), default=200, show_default=True)
@click.option("--csv", "csv_path", type=click.Path(dir_okay=False, allow_dash=True),
              help="Also write the table as CSV ('-' for stdout).")
@click.pass_obj
def bench(cfg: CliConfig, runs: int, csv_path):
    """Repeat Case 1 and Case 2 runs and print the cost table."""
    net = bench_network(cfg.seed or 0, window=cfg.window, pool=cfg.pool, pool_mode="reuse")
    reports = []
    for tag in ("video", "storage"):
        for _ in range(runs):
            net.clock.advance(1)
            run = net.authenticate("D1", "ES1", tag)
            if not run.keys_agree:
                raise Fail(f"bench run failed: {run.outcome}")
            reports.append(run.cost)
    try:
        summaries = summarize(reports)
    except ValueError as e:
        raise Fail(str(e)) from e
    mismatches = [f"{s.case}: hashes {s.hashes} bits {s.total_bits}"
                  for s in summaries if (s.hashes, s.total_bits) != EXPECTED[s.case]]
    table = emit_cost_table(reports)
    if csv_path:
        click.open_file(csv_path, "w").write(cost_csv(reports))
    emit(cfg, table.rstrip("\n"),
         {s.case: {"runs": s.runs, "hashes": s.hashes, "total_hashes": s.total_hashes,
                   "messages": dict(s.messages), "total_bits": s.total_bits, "mean_ms": s.mean_ms}
          for s in summaries})
    if mismatches:
        raise Fail("cost mismatch: " + "; ".join(mismatches))


@main.command()
@click.argument("pid")
@click.pass_obj
def trace(cfg: CliConfig, pid: str):
    """TA-only: map a device pseudonym (hex) back to its registered identity."""
    ta = load_ta(cfg, "trace")
    try:
        ident = ta.trace(bytes.fromhex(pid))
    except ValueError as e:
        raise ConfigError(f"pseudonym must be hex: {e}") from e
    except AeakaError as e:
        raise Fail(f"{type(e).__name__}: {e}") from e
    data = {"uid": ident.uid, "id": ident.device_id, "did": ident.did.hex()}
    emit(cfg, f"uid: {ident.uid}\nid: {ident.device_id}\ndid: {ident.did.hex()}", data)


if __name__ == "__main__":
    main()
