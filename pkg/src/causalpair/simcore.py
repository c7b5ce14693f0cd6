"""Deterministic discrete-event simulator of closed-loop request/response traffic.

Clients talk to servers over an asymmetric path: requests (and the client's
pure ACKs for response data) cross the vantage point, responses return on a
path the vantage point never sees. The run yields the vantage-point packet
trace plus ground-truth req-to-res and req-to-req records per request.

Client model, per connection: a request tree starts with a root request;
each completed response (after client processing, the think time) spawns
``fanout`` children while the tree is shallower than ``tree_levels``; the
client keeps at most ``pipeline_depth`` requests outstanding and starts a new
root whenever it goes idle. Responses are processed one at a time per
connection, so bunched responses queue behind each other's think time.

All per-request randomness is drawn from a per-connection generator when the
request is created, so two runs that differ only in server assignment see the
same request sizes, think times and service-time draws.
"""

from __future__ import annotations

import heapq
import itertools
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Callable, Deque, Dict, List, Optional, Sequence, Tuple

import numpy as np

from .dists import Dist, const
from .ingest import FlowKey, PacketObservation

MS = 1_000_000
US = 1_000
HEADER_BYTES = 40


class ConfigError(ValueError):
    pass


@dataclass
class WorkloadSpec:
    num_connections: int = 1
    pipeline_depth: int = 4
    request_size: Dist = field(default_factory=lambda: const(200))
    response_size: Dist = field(default_factory=lambda: const(1000))
    think_time: Dist = field(default_factory=lambda: const(0))
    fanout: Dist = field(default_factory=lambda: const(0))
    tree_levels: int = 1
    duration_ns: int = 2_000 * MS
    requests_per_connection: Optional[int] = None
    start_spread_ns: int = 1 * MS
    seed: int = 0

    def validate(self) -> None:
        if self.num_connections < 1:
            raise ConfigError("num_connections must be at least 1")
        if self.pipeline_depth < 1:
            raise ConfigError("pipeline_depth must be at least 1")
        if self.duration_ns <= 0:
            raise ConfigError("duration must be positive")
        if self.tree_levels < 0:
            raise ConfigError("tree_levels must be non-negative")
        if self.requests_per_connection is not None and self.requests_per_connection < 1:
            raise ConfigError("requests_per_connection must be positive")


@dataclass
class NetworkSpec:
    fwd_owd: Dist = field(default_factory=lambda: const(100 * US))
    rev_owd: Dist = field(default_factory=lambda: const(100 * US))
    fwd_loss_rate: float = 0.0
    fwd_reorder_rate: float = 0.0
    link_rate_bps: float = 10e9
    mtu: int = 1500
    ack_every: int = 2
    retx_timeout_ns: int = 200 * MS

    def validate(self) -> None:
        for name in ("fwd_loss_rate", "fwd_reorder_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}")
        if self.fwd_loss_rate >= 1.0:
            raise ConfigError("fwd_loss_rate of 1 never delivers a request")
        if self.mtu <= HEADER_BYTES:
            raise ConfigError("mtu must exceed the 40-byte header")
        if self.link_rate_bps < 0 or self.ack_every < 0 or self.retx_timeout_ns <= 0:
            raise ConfigError("link rate, ack_every and retx timeout must be non-negative")

    @property
    def mss(self) -> int:
        return self.mtu - HEADER_BYTES

    def serialization_ns(self, wire_bytes: int) -> int:
        if not self.link_rate_bps:
            return 0
        return int(round(wire_bytes * 8 * 1e9 / self.link_rate_bps))


@dataclass
class ServerSpec:
    service_time: Dist = field(default_factory=lambda: const(1 * MS))
    workers: Optional[int] = None
    # (start_ns, rate factor) steps; service time is divided by the factor
    capacity_schedule: Tuple[Tuple[int, float], ...] = ()

    def validate(self) -> None:
        if self.workers is not None and self.workers < 1:
            raise ConfigError("workers must be positive (or None for unlimited)")
        if any(f <= 0 for _, f in self.capacity_schedule):
            raise ConfigError("capacity factors must be positive")

    def capacity_at(self, t: int) -> float:
        factor = 1.0
        for start, f in self.capacity_schedule:
            if t >= start:
                factor = f
            else:
                break
        return factor


@dataclass(frozen=True)
class GroundTruthRecord:
    conn_id: int
    req_id: int
    req_sent_ns: int
    last_response_byte_ns: int
    triggered_req_sent_ns: Optional[int] = None
    server: int = 0

    @property
    def req_to_res_ns(self) -> int:
        return self.last_response_byte_ns - self.req_sent_ns

    @property
    def req_to_req_ns(self) -> Optional[int]:
        if self.triggered_req_sent_ns is None:
            return None
        return self.triggered_req_sent_ns - self.req_sent_ns


@dataclass(frozen=True)
class PacketMeta:
    conn_id: int
    req_id: Optional[int]
    is_ack: bool
    client_tx_ns: int


@dataclass
class SimResult:
    observations: List[PacketObservation]
    meta: List[PacketMeta]
    truth: List[GroundTruthRecord]
    forward_sent: int
    forward_lost: int
    max_outstanding: Dict[int, int]


def conn_flow(conn_id: int) -> FlowKey:
    return FlowKey.label(f"c{conn_id}")


def flow_conn(flow: FlowKey) -> Optional[int]:
    s = str(flow)
    if s.startswith("c") and s[1:].isdigit():
        return int(s[1:])
    return None


@dataclass
class _Request:
    conn: "_Conn"
    req_id: int
    level: int
    size: int
    resp_size: int
    service_ns: float
    think_ns: int
    fanout: int
    sent_ns: int = -1
    pending_pkts: int = 0
    last_resp_ns: int = -1
    triggered_ns: Optional[int] = None


@dataclass
class _Conn:
    conn_id: int
    server: int
    rng: np.random.Generator
    start_ns: int
    budget: Optional[int]
    issued: int = 0
    outstanding: int = 0
    max_outstanding: int = 0
    ready: Deque[_Request] = field(default_factory=deque)
    cpu_free: int = 0
    fwd_free: int = 0
    fwd_last_arrival: int = 0
    rev_free: int = 0
    rev_last_arrival: int = 0
    closed: bool = False


@dataclass
class _Server:
    spec: ServerSpec
    busy: int = 0
    queue: Deque[_Request] = field(default_factory=deque)


PacketHook = Callable[[PacketObservation, PacketMeta], None]


class Simulation:
    """Event engine shared by the accuracy simulator and the load-balancer harness.

    ``assign(conn_id, u)`` maps a new connection to a server index given a
    uniform draw ``u`` (defaults to round-robin). ``on_packet`` sees every
    vantage observation in time order; ``on_open``/``on_close`` track
    connection lifetimes. Timers registered with :meth:`every` run
    periodically until the simulation drains.
    """

    def __init__(self, workload: WorkloadSpec, net: NetworkSpec, servers: Sequence[ServerSpec],
                 assign: Optional[Callable[[int, float], int]] = None,
                 on_packet: Optional[PacketHook] = None,
                 on_open: Optional[Callable[[int, int, int], None]] = None,
                 on_close: Optional[Callable[[int, int, int], None]] = None):
        workload.validate()
        net.validate()
        if not servers:
            raise ConfigError("at least one server required")
        for s in servers:
            s.validate()
        self.wl, self.net = workload, net
        self.servers = [_Server(s) for s in servers]
        self.assign = assign or (lambda cid, u: cid % len(self.servers))
        self.on_packet, self.on_open, self.on_close = on_packet, on_open, on_close

        root = np.random.SeedSequence(workload.seed)
        net_seq, self._conn_seq = root.spawn(2)
        self.net_rng = np.random.default_rng(net_seq)
        self._heap: list = []
        self._work = 0
        self._seq = itertools.count()
        self.now = 0
        self.conns: List[_Conn] = []
        self.obs: List[PacketObservation] = []
        self.meta: List[PacketMeta] = []
        self.truth: List[GroundTruthRecord] = []
        self.forward_sent = 0
        self.forward_lost = 0

    # -- engine -------------------------------------------------------------

    def at(self, t: int, fn, *args) -> None:
        self._work += 1
        heapq.heappush(self._heap, (int(t), next(self._seq), False, fn, args))

    def every(self, period_ns: int, fn: Callable[[int], None], start_ns: Optional[int] = None):
        """Call ``fn(t)`` every ``period_ns`` while any traffic event is pending."""
        def tick(t):
            fn(t)
            if self._work:
                heapq.heappush(self._heap, (t + period_ns, next(self._seq), True, tick, ()))
        first = period_ns if start_ns is None else start_ns
        heapq.heappush(self._heap, (first, next(self._seq), True, tick, ()))

    def run(self) -> SimResult:
        while self._heap:
            t, _, is_timer, fn, args = heapq.heappop(self._heap)
            if not is_timer:
                self._work -= 1
            self.now = t
            fn(t, *args)
        return SimResult(self.obs, self.meta, self.truth, self.forward_sent,
                         self.forward_lost, {c.conn_id: c.max_outstanding for c in self.conns})

    # -- connections --------------------------------------------------------

    def open_connection(self, t: int, budget: Optional[int] = None) -> _Conn:
        cid = len(self.conns)
        rng = np.random.default_rng(self._conn_seq.spawn(1)[0])
        u = rng.random()
        server = self.assign(cid, u)
        if not 0 <= server < len(self.servers):
            raise ConfigError(f"assign returned invalid server {server}")
        conn = _Conn(cid, server, rng, t, budget if budget is not None
                     else self.wl.requests_per_connection, cpu_free=t)
        self.conns.append(conn)
        if self.on_open:
            self.on_open(t, cid, server)
        self.at(t, self._start_conn, conn)
        return conn

    def _start_conn(self, t: int, conn: _Conn) -> None:
        root = self._new_request(conn, 0)
        if root is None:
            self._close(t, conn)
            return
        conn.ready.append(root)
        self._pump(t, conn, None)

    def _app_active(self, conn: _Conn, t: int) -> bool:
        if t >= self.wl.duration_ns:
            return False
        return conn.budget is None or conn.issued < conn.budget

    def _new_request(self, conn: _Conn, level: int) -> Optional[_Request]:
        if not self._app_active(conn, self.now):
            return None
        rng, wl = conn.rng, self.wl
        # fixed draw order per request keeps paired runs aligned
        size = max(1, int(round(wl.request_size.sample(rng))))
        resp = max(0, int(round(wl.response_size.sample(rng))))
        service = self.servers[conn.server].spec.service_time.sample(rng)
        think = int(round(wl.think_time.sample(rng)))
        fanout = int(round(wl.fanout.sample(rng)))
        req = _Request(conn, conn.issued, level, size, resp, service, think, fanout)
        conn.issued += 1
        return req

    def _pump(self, t: int, conn: _Conn, trigger: Optional[_Request]) -> None:
        while conn.ready and conn.outstanding < self.wl.pipeline_depth:
            req = conn.ready.popleft()
            if trigger is not None:
                trigger.triggered_ns = t
                trigger = None
            self._send_request(t, req)

    def _close(self, t: int, conn: _Conn) -> None:
        if not conn.closed:
            conn.closed = True
            if self.on_close:
                self.on_close(t, conn.conn_id, conn.server)

    # -- forward path -------------------------------------------------------

    def _send_request(self, t: int, req: _Request) -> None:
        conn = req.conn
        req.sent_ns = t
        conn.outstanding += 1
        conn.max_outstanding = max(conn.max_outstanding, conn.outstanding)
        mss = self.net.mss
        n = max(1, math.ceil(req.size / mss))
        req.pending_pkts = n
        remaining = req.size
        for _ in range(n):
            payload = min(mss, remaining)
            remaining -= payload
            self._transmit(t, conn, payload, req)

    def _transmit(self, t: int, conn: _Conn, payload: int, req: Optional[_Request]) -> None:
        net = self.net
        tx_end = max(t, conn.fwd_free) + net.serialization_ns(payload + HEADER_BYTES)
        conn.fwd_free = tx_end
        self.forward_sent += 1
        if net.fwd_loss_rate and self.net_rng.random() < net.fwd_loss_rate:
            self.forward_lost += 1
            if req is not None:
                self.at(tx_end + net.retx_timeout_ns, self._retransmit, conn, payload, req)
            return
        arrival = max(tx_end + int(round(net.fwd_owd.sample(self.net_rng))), conn.fwd_last_arrival)
        conn.fwd_last_arrival = arrival
        self.at(arrival, self._vantage, conn, payload, req, tx_end)

    def _retransmit(self, t: int, conn: _Conn, payload: int, req: _Request) -> None:
        self._transmit(t, conn, payload, req)

    def _vantage(self, t: int, conn: _Conn, payload: int, req: Optional[_Request], tx: int) -> None:
        wire = payload + HEADER_BYTES
        obs = PacketObservation(conn_flow(conn.conn_id), t, payload,
                                is_pure_ack=req is None, is_full_mtu=wire == self.net.mtu)
        meta = PacketMeta(conn.conn_id, None if req is None else req.req_id, req is None, tx)
        self.obs.append(obs)
        self.meta.append(meta)
        if self.on_packet:
            self.on_packet(obs, meta)
        if req is not None:
            req.pending_pkts -= 1
            if req.pending_pkts == 0:
                self._server_arrive(t, req)

    # -- server -------------------------------------------------------------

    def _server_arrive(self, t: int, req: _Request) -> None:
        srv = self.servers[req.conn.server]
        if srv.spec.workers is None or srv.busy < srv.spec.workers:
            self._start_service(t, srv, req)
        else:
            srv.queue.append(req)

    def _start_service(self, t: int, srv: _Server, req: _Request) -> None:
        srv.busy += 1
        dur = int(round(req.service_ns / srv.spec.capacity_at(t)))
        self.at(t + dur, self._service_done, srv, req)

    def _service_done(self, t: int, srv: _Server, req: _Request) -> None:
        srv.busy -= 1
        if srv.queue:
            self._start_service(t, srv, srv.queue.popleft())
        self._respond(t, req)

    # -- reverse path -------------------------------------------------------

    def _respond(self, t: int, req: _Request) -> None:
        conn, net = req.conn, self.net
        mss = net.mss
        n = max(1, math.ceil(req.resp_size / mss))
        start = max(t, conn.rev_free)
        owd = int(round(net.rev_owd.sample(self.net_rng)))
        remaining = req.resp_size
        clock = start
        last = start
        for j in range(n):
            payload = min(mss, remaining) if req.resp_size else 0
            remaining -= payload
            clock += net.serialization_ns(payload + HEADER_BYTES)
            last = max(clock + owd, conn.rev_last_arrival)
            conn.rev_last_arrival = last
            if net.ack_every and j < n - 1 and (j + 1) % net.ack_every == 0:
                self.at(last, self._send_ack, conn)
        conn.rev_free = clock
        self.at(last, self._client_receive, req)

    def _send_ack(self, t: int, conn: _Conn) -> None:
        self._transmit(t, conn, 0, None)

    # -- client -------------------------------------------------------------

    def _client_receive(self, t: int, req: _Request) -> None:
        conn = req.conn
        req.last_resp_ns = t
        done = max(t, conn.cpu_free) + req.think_ns
        conn.cpu_free = done
        self.at(done, self._complete, req)

    def _complete(self, t: int, req: _Request) -> None:
        conn = req.conn
        conn.outstanding -= 1
        if req.level < self.wl.tree_levels:
            for _ in range(req.fanout):
                child = self._new_request(conn, req.level + 1)
                if child is None:
                    break
                conn.ready.append(child)
        if conn.outstanding == 0 and not conn.ready:
            root = self._new_request(conn, 0)
            if root is not None:
                conn.ready.append(root)
        self._pump(t, conn, req)
        self.truth.append(GroundTruthRecord(conn.conn_id, req.req_id, req.sent_ns,
                                            req.last_resp_ns, req.triggered_ns, conn.server))
        if conn.outstanding == 0 and not conn.ready:
            self._close(t, conn)


def apply_reordering(result: SimResult, rate: float, rng: np.random.Generator) -> None:
    """Swap a packet's vantage arrival slot with its successor on the same connection.

    A swap needs both packets in flight together: the successor must have left
    the client before the first packet reached the vantage point. Only the
    observed trace changes; server-side timing is untouched.
    """
    if rate <= 0:
        return
    by_conn: Dict[int, List[int]] = {}
    for i, m in enumerate(result.meta):
        by_conn.setdefault(m.conn_id, []).append(i)
    obs, meta = result.observations, result.meta
    for idx in by_conn.values():
        k = 0
        while k + 1 < len(idx):
            a, b = idx[k], idx[k + 1]
            if meta[b].client_tx_ns < obs[a].timestamp_ns and rng.random() < rate:
                oa, ob = obs[a], obs[b]
                obs[a] = PacketObservation(oa.flow, oa.timestamp_ns, ob.payload_len,
                                           ob.is_pure_ack, ob.is_full_mtu)
                obs[b] = PacketObservation(ob.flow, ob.timestamp_ns, oa.payload_len,
                                           oa.is_pure_ack, oa.is_full_mtu)
                meta[a], meta[b] = meta[b], meta[a]
                k += 2
            else:
                k += 1


def run_sim(workload: WorkloadSpec, net: NetworkSpec, server: ServerSpec) -> SimResult:
    """Run one closed-loop simulation against a single server."""
    sim = Simulation(workload, net, [server])
    spread_rng = np.random.default_rng(np.random.SeedSequence([workload.seed, 1]))
    for _ in range(workload.num_connections):
        offset = int(spread_rng.uniform(0, workload.start_spread_ns)) if workload.num_connections > 1 else 0
        sim.open_connection(offset)
    result = sim.run()
    apply_reordering(result, net.fwd_reorder_rate,
                     np.random.default_rng(np.random.SeedSequence([workload.seed, 2])))
    result.truth.sort(key=lambda r: (r.conn_id, r.req_id))
    return result


def truth_csv_rows(truth: Sequence[GroundTruthRecord]) -> List[list]:
    rows = [["conn_id", "req_id", "req_sent_ns", "last_resp_ns", "trig_req_ns",
             "req_to_res_ns", "req_to_req_ns"]]
    for r in truth:
        rows.append([r.conn_id, r.req_id, r.req_sent_ns, r.last_response_byte_ns,
                     "" if r.triggered_req_sent_ns is None else r.triggered_req_sent_ns,
                     r.req_to_res_ns, "" if r.req_to_req_ns is None else r.req_to_req_ns])
    return rows


def read_truth_csv(rows: Sequence[Sequence[str]]) -> List[GroundTruthRecord]:
    it = iter(rows)
    header = next(it, None)
    if header is None or list(header)[:5] != ["conn_id", "req_id", "req_sent_ns",
                                               "last_resp_ns", "trig_req_ns"]:
        raise ValueError("not a ground-truth CSV")
    out = []
    for row in it:
        if not row:
            continue
        trig = int(row[4]) if row[4] != "" else None
        out.append(GroundTruthRecord(int(row[0]), int(row[1]), int(row[2]), int(row[3]), trig))
    return out
