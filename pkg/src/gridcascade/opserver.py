"""Interactive session service over newline-delimited JSON (ops-v1).

One TCP connection carries both directions: clients send single-line JSON
requests, the server answers every request with exactly one reply line
(type "ack" on success, "error" otherwise, both echoing the request id),
and pushes unsolicited broadcast lines (snapshots, events, terminal) to
subscribed connections. Broadcast lines carry a per-session monotone
sequence number.

Sessions wrap a SimSession, so a finished session's trace is exactly what
the batch runner would produce for the same case and committed event log.
The simulation clock is logical: sessions start paused at t=0 and move
only on explicit step requests or at a client-set pace.

Client message types: create, start, pause, step, inject, preview,
subscribe. Read-only extras: list, fetch_trace, fetch_log. The connection
that created a session is its single controller; every other connection
may subscribe and query but not mutate.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import logging
from typing import Optional

from . import __version__
from .case39 import CaseConfig, build_case39
from .measures import verify_margin
from .netmodel import GridCase, canonical_dumps, fingerprint_of
from .simengine import ScenarioEvent, SimConfig, SimSession
from .simengine import _execute_action

PROTOCOL = "ops-v1"
DEFAULT_PACE = 100.0  # steps per second when start names no pace

log = logging.getLogger("gridcascade.opserver")

_builtin_case_cache: Optional[GridCase] = None


def _builtin_case() -> GridCase:
    global _builtin_case_cache
    if _builtin_case_cache is None:
        _builtin_case_cache = build_case39(CaseConfig())
    return _builtin_case_cache.copy()


def state_hash(sim: SimSession) -> str:
    """Deterministic digest of everything a step can change."""
    st = sim.state
    return fingerprint_of(
        {
            "t": st.t,
            "v": [float(x) for x in st.v],
            "theta": [float(x) for x in st.theta],
            "delta": [float(x) for x in st.delta],
            "domega": [float(x) for x in st.domega],
            "q_avr": [float(x) for x in st.q_avr],
            "hvdc_p": [float(x) for x in st.hvdc_p],
            "q_lost_mvar": st.q_lost_mvar,
            "relays": [[r.relay, r.timer, r.tripped] for r in st.relays],
            "ufls": list(st.ufls_fired),
            "case": sim.case.fingerprint(),
            "n_events": len(sim.trace.events),
        }
    )


def collector_margins(sim: SimSession) -> dict[str, Optional[float]]:
    """Per collector: relay threshold minus current voltage; null once gone."""
    idx = sim.case.index()
    thr = {r.id: r.threshold for r in sim.case.relays}
    out: dict[str, Optional[float]] = {}
    for c in sim.case.collectors:
        if c.tripped:
            out[c.id] = None
        else:
            out[c.id] = thr[c.relay] - float(sim.state.v[idx[c.bus]])
    return out


class OpsSession:
    def __init__(self, sid: str, sim: SimSession, controller: int):
        self.id = sid
        self.sim = sim
        self.controller = controller  # connection id that may mutate
        self.seq = 0
        self.lock = asyncio.Lock()
        self.subscribers: dict[int, asyncio.Queue] = {}
        self.pace_task: Optional[asyncio.Task] = None

    @property
    def status(self) -> str:
        if self.sim.finished:
            return self.sim.trace.status
        if self.pace_task is not None and not self.pace_task.done():
            return "running"
        return "paused"

    def next_seq(self) -> int:
        self.seq += 1
        return self.seq


class OpsServer:
    def __init__(self):
        self.sessions: dict[str, OpsSession] = {}
        self._session_counter = 0
        self._conn_counter = 0
        self._server: Optional[asyncio.base_events.Server] = None

    # ---- lifecycle ----

    async def start(self, host: str = "127.0.0.1", port: int = 0) -> tuple[str, int]:
        self._server = await asyncio.start_server(
            self._handle_conn, host, port, limit=4 * 1024 * 1024
        )
        sock = self._server.sockets[0].getsockname()
        log.info("ops server listening on %s:%s", sock[0], sock[1])
        return sock[0], sock[1]

    async def close(self) -> None:
        for s in self.sessions.values():
            if s.pace_task is not None:
                s.pace_task.cancel()
        if self._server is not None:
            self._server.close()
            await self._server.wait_closed()

    # ---- connection plumbing ----

    async def _handle_conn(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
        self._conn_counter += 1
        conn_id = self._conn_counter
        out_q: asyncio.Queue = asyncio.Queue()

        async def pump():
            while True:
                line = await out_q.get()
                if line is None:
                    break
                writer.write(line.encode() + b"\n")
                await writer.drain()

        pump_task = asyncio.create_task(pump())
        try:
            while True:
                raw = await reader.readline()
                if not raw:
                    break
                try:
                    msg = json.loads(raw)
                    if not isinstance(msg, dict):
                        raise ValueError("message must be an object")
                except (json.JSONDecodeError, ValueError) as e:
                    await out_q.put(canonical_dumps(
                        {"type": "error", "ack": None, "error": f"bad message: {e}"}
                    ))
                    continue
                reply = await self._dispatch(conn_id, out_q, msg)
                await out_q.put(canonical_dumps(reply))
        except (ConnectionResetError, asyncio.IncompleteReadError):
            pass
        finally:
            for s in self.sessions.values():
                s.subscribers.pop(conn_id, None)
            await out_q.put(None)
            await pump_task
            writer.close()
            try:
                await writer.wait_closed()
            except (ConnectionResetError, BrokenPipeError):
                pass

    def _broadcast(self, sess: OpsSession, payload: dict) -> None:
        line = canonical_dumps(payload)
        for q in sess.subscribers.values():
            q.put_nowait(line)

    def _snapshot_payload(self, sess: OpsSession) -> dict:
        return {
            "type": "snapshot",
            "session": sess.id,
            "seq": sess.next_seq(),
            "status": sess.status,
            "record": sess.sim.record(),
            "collector_margins": collector_margins(sess.sim),
        }

    def _emit_step_results(self, sess: OpsSession, emitted: list[dict]) -> None:
        for e in emitted:
            self._broadcast(
                sess,
                {"type": "event", "session": sess.id, "seq": sess.next_seq(), "event": e},
            )
        self._broadcast(sess, self._snapshot_payload(sess))
        if sess.sim.finished:
            tr = sess.sim.trace
            self._broadcast(
                sess,
                {
                    "type": "terminal",
                    "session": sess.id,
                    "seq": sess.next_seq(),
                    "terminal": tr.status,
                    "t": tr.terminal_t,
                    "reason": tr.terminal_reason,
                },
            )

    # ---- request dispatch ----

    async def _dispatch(self, conn_id: int, out_q: asyncio.Queue, msg: dict) -> dict:
        mid = msg.get("id")
        mtype = msg.get("type")
        try:
            handler = {
                "create": self._h_create,
                "start": self._h_start,
                "pause": self._h_pause,
                "step": self._h_step,
                "inject": self._h_inject,
                "preview": self._h_preview,
                "subscribe": self._h_subscribe,
                "list": self._h_list,
                "fetch_trace": self._h_fetch_trace,
                "fetch_log": self._h_fetch_log,
            }.get(mtype)
            if handler is None:
                raise ValueError(f"unknown message type {mtype!r}")
            payload = await handler(conn_id, out_q, msg)
            return {"type": "ack", "ack": mid, "v": PROTOCOL, **payload}
        except (ValueError, KeyError, TypeError) as e:
            return {"type": "error", "ack": mid, "v": PROTOCOL, "error": str(e)}

    def _session(self, msg: dict) -> OpsSession:
        sid = msg.get("session")
        sess = self.sessions.get(sid)
        if sess is None:
            raise ValueError(f"no session {sid!r}")
        return sess

    def _check_controller(self, sess: OpsSession, conn_id: int) -> None:
        if conn_id != sess.controller:
            raise ValueError("read-only client: only the creating connection may mutate")

    # ---- handlers ----

    async def _h_create(self, conn_id, out_q, msg) -> dict:
        ref = msg.get("case", "iberian")
        if ref == "iberian":
            case = _builtin_case()
        elif isinstance(ref, dict):
            case = GridCase.from_dict(ref)
        else:
            raise ValueError(f"unknown case ref {ref!r}")
        cfg_d = msg.get("config", {})
        known = set(SimConfig.__dataclass_fields__)
        extra = set(cfg_d) - known
        if extra:
            raise ValueError(f"unknown config fields: {sorted(extra)}")
        config = SimConfig(**cfg_d)
        sim = SimSession(case, [], config)
        self._session_counter += 1
        sid = f"s{self._session_counter:04d}"
        self.sessions[sid] = OpsSession(sid, sim, controller=conn_id)
        log.info("session %s created (conn %d)", sid, conn_id)
        return {
            "session": sid,
            "status": "paused",
            "t": sim.state.t,
            "state_hash": state_hash(sim),
        }

    async def _h_step(self, conn_id, out_q, msg) -> dict:
        sess = self._session(msg)
        self._check_controller(sess, conn_id)
        n = msg.get("n", 1)
        if not isinstance(n, int) or n < 1:
            raise ValueError("n must be a positive integer")
        if sess.status == "running":
            raise ValueError("session is running; pause before stepping")
        async with sess.lock:
            for _ in range(n):
                if sess.sim.finished:
                    break
                emitted = sess.sim.advance(1)
                self._emit_step_results(sess, emitted)
        return {
            "session": sess.id,
            "t": sess.sim.state.t,
            "status": sess.status,
            "state_hash": state_hash(sess.sim),
        }

    async def _h_start(self, conn_id, out_q, msg) -> dict:
        sess = self._session(msg)
        self._check_controller(sess, conn_id)
        if sess.sim.finished:
            raise ValueError("session already finished")
        pace = float(msg.get("pace", DEFAULT_PACE))
        if not 0.01 <= pace <= 100000.0:
            raise ValueError("pace out of range")
        if sess.pace_task is not None and not sess.pace_task.done():
            sess.pace_task.cancel()

        async def run():
            try:
                while not sess.sim.finished:
                    async with sess.lock:
                        emitted = sess.sim.advance(1)
                        self._emit_step_results(sess, emitted)
                    await asyncio.sleep(1.0 / pace)
            except asyncio.CancelledError:
                pass

        sess.pace_task = asyncio.create_task(run())
        return {"session": sess.id, "status": "running", "pace": pace}

    async def _h_pause(self, conn_id, out_q, msg) -> dict:
        sess = self._session(msg)
        self._check_controller(sess, conn_id)
        if sess.pace_task is not None:
            sess.pace_task.cancel()
            try:
                await sess.pace_task
            except asyncio.CancelledError:
                pass
            sess.pace_task = None
        return {
            "session": sess.id,
            "status": sess.status,
            "t": sess.sim.state.t,
            "state_hash": state_hash(sess.sim),
        }

    async def _h_inject(self, conn_id, out_q, msg) -> dict:
        sess = self._session(msg)
        self._check_controller(sess, conn_id)
        action = msg.get("action")
        if not isinstance(action, dict):
            raise ValueError("inject needs an action object")
        ev = ScenarioEvent(
            t=float(action.get("t", sess.sim.state.t)),
            action=action.get("action"),
            params=action.get("params", {}),
        )
        async with sess.lock:
            # dry-run against current topology plus any not-yet-applied
            # committed events that will execute before this one
            work = sess.sim.case.copy()
            stc = sess.sim.state.copy()
            for pend in sess.sim.events[sess.sim.cursor:]:
                if pend.t <= ev.t + 1e-9:
                    _execute_action(work, stc, pend)
            _execute_action(work, stc, ev)  # raises ValueError when invalid
            sess.sim.insert_event(ev)
        committed = {"t": ev.t, "action": ev.action, "params": ev.params}
        self._broadcast(
            sess,
            {
                "type": "event",
                "session": sess.id,
                "seq": sess.next_seq(),
                "event": {"type": "committed", **committed},
            },
        )
        return {"session": sess.id, "committed": committed}

    async def _h_preview(self, conn_id, out_q, msg) -> dict:
        sess = self._session(msg)
        raw = msg.get("action")
        if raw is None:
            actions = None
        else:
            items = raw if isinstance(raw, list) else [raw]
            actions = [
                ScenarioEvent(
                    t=float(a.get("t", 0.0)),
                    action=a.get("action"),
                    params=a.get("params", {}),
                )
                for a in items
            ]
        disturbances = []
        for d in msg.get("disturbances", []):
            if not isinstance(d, dict):
                raise ValueError("each disturbance must be an object of bus: mvar")
            disturbances.append({int(k): float(v) for k, v in d.items()})
        async with sess.lock:
            loop = asyncio.get_running_loop()
            verdict = await loop.run_in_executor(
                None,
                lambda: verify_margin(sess.sim.case, actions, disturbances),
            )
        return {
            "session": sess.id,
            "verdict": verdict.to_dict(),
            "state_hash": state_hash(sess.sim),
        }

    async def _h_subscribe(self, conn_id, out_q, msg) -> dict:
        sess = self._session(msg)
        sess.subscribers[conn_id] = out_q
        # catch-up snapshot so late subscribers render immediately
        out_q.put_nowait(canonical_dumps(self._snapshot_payload(sess)))
        return {
            "session": sess.id,
            "status": sess.status,
            "t": sess.sim.state.t,
            "state_hash": state_hash(sess.sim),
        }

    async def _h_list(self, conn_id, out_q, msg) -> dict:
        return {
            "server": f"gridcascade {__version__}",
            "sessions": [
                {
                    "session": s.id,
                    "status": s.status,
                    "t": s.sim.state.t,
                    "finished": s.sim.finished,
                }
                for s in self.sessions.values()
            ],
        }

    async def _h_fetch_trace(self, conn_id, out_q, msg) -> dict:
        sess = self._session(msg)
        if not sess.sim.finished:
            raise ValueError("session not finished; trace download is for finished runs")
        return {"session": sess.id, "trace_jsonl": sess.sim.trace.to_jsonl()}

    async def _h_fetch_log(self, conn_id, out_q, msg) -> dict:
        sess = self._session(msg)
        return {
            "session": sess.id,
            "log": [canonical_dumps(a) for a in sess.sim.trace.actions()],
        }


class OpsClient:
    """Minimal scripted client for tests and tools.

    request() sends one message and returns its matching reply; broadcast
    lines that arrive while waiting are buffered and available through
    next_broadcast().
    """

    def __init__(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter):
        self.reader = reader
        self.writer = writer
        self._mid = 0
        self.broadcasts: asyncio.Queue = asyncio.Queue()

    @classmethod
    async def connect(cls, host: str, port: int) -> "OpsClient":
        reader, writer = await asyncio.open_connection(host, port, limit=64 * 1024 * 1024)
        return cls(reader, writer)

    async def close(self) -> None:
        self.writer.close()
        try:
            await self.writer.wait_closed()
        except (ConnectionResetError, BrokenPipeError):
            pass

    async def request(self, mtype: str, **fields) -> dict:
        self._mid += 1
        mid = f"m{self._mid}"
        line = canonical_dumps({"type": mtype, "id": mid, **fields})
        self.writer.write(line.encode() + b"\n")
        await self.writer.drain()
        while True:
            raw = await self.reader.readline()
            if not raw:
                raise ConnectionError("server closed the stream")
            msg = json.loads(raw)
            if msg.get("ack") == mid:
                return msg
            self.broadcasts.put_nowait(msg)

    async def next_broadcast(self, timeout: float = 5.0) -> dict:
        return await asyncio.wait_for(self.broadcasts.get(), timeout)


async def serve_forever(host: str, port: int) -> None:
    server = OpsServer()
    bound_host, bound_port = await server.start(host, port)
    print(f"ops-v1 listening on {bound_host}:{bound_port}", flush=True)
    try:
        await asyncio.Event().wait()
    finally:
        await server.close()


def main(argv: Optional[list[str]] = None) -> int:
    import os

    level = os.environ.get("GRIDCASCADE_LOG")
    if level:
        logging.basicConfig(level=getattr(logging, level.upper(), logging.INFO))
    ap = argparse.ArgumentParser(prog="gridcascade-ops", description=__doc__)
    ap.add_argument("--host", default="127.0.0.1")
    ap.add_argument("--port", type=int, default=8472)
    args = ap.parse_args(argv)
    try:
        asyncio.run(serve_forever(args.host, args.port))
    except KeyboardInterrupt:
        pass
    return 0


if __name__ == "__main__":
    import sys

    sys.exit(main())
