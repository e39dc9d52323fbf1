"""TCP fault-injection proxy for local processes.

Stream-level, not packet-level: it can delay, throttle, refuse, and kill
TCP streams, but deliberately does not offer packet loss (TCP retransmission
would mask it). Latency and bandwidth shaping apply per transferred chunk on
the upstream-bound direction only; the reply path is untouched. Shaping
updates are atomic with respect to chunk boundaries.
"""

from __future__ import annotations

import random
import socket
import struct
import threading
import time
from dataclasses import dataclass, replace

from .errors import BindError, ChaosError, UnknownRoute

_CHUNK = 4096
_REFILL_MS = 100  # token bucket granularity


@dataclass(frozen=True)
class LinkShaping:
    latency_us: int = 0
    jitter_us: int = 0
    bytes_per_sec: int = 0  # 0 = unlimited
    refuse_new: bool = False
    kill_active: bool = False  # one-shot; consumed on apply

    def neutral(self) -> bool:
        return (
            self.latency_us == 0
            and self.jitter_us == 0
            and self.bytes_per_sec == 0
            and not self.refuse_new
        )


NEUTRAL = LinkShaping()


@dataclass(frozen=True)
class ProxyRoute:
    name: str
    listen: tuple[str, int]
    upstream: tuple[str, int]


def _rst_close(sock: socket.socket) -> None:
    # Linger-0 turns close into RST so the peer sees a hard TCP failure.
    try:
        sock.setsockopt(socket.SOL_SOCKET, socket.SO_LINGER, struct.pack("ii", 1, 0))
    except OSError:
        pass
    try:
        sock.close()
    except OSError:
        pass


class _TokenBucket:
    """Shared per-route budget; take() blocks until bytes are granted."""

    def __init__(self, rate_bytes_per_sec: int):
        self.rate = rate_bytes_per_sec
        self.capacity = max(1, rate_bytes_per_sec * _REFILL_MS // 1000)
        self.tokens = self.capacity
        self.updated = time.monotonic()
        self.lock = threading.Lock()

    def take(self, n: int) -> None:
        while n > 0:
            with self.lock:
                now = time.monotonic()
                refill = int((now - self.updated) * self.rate)
                if refill > 0:
                    self.tokens = min(self.capacity, self.tokens + refill)
                    self.updated = now
                grant = min(n, self.tokens)
                self.tokens -= grant
                n -= grant
            if n > 0:
                time.sleep(_REFILL_MS / 1000)


class _Conn:
    def __init__(self, client: socket.socket, upstream: socket.socket, opened_at_us: int):
        self.client = client
        self.upstream = upstream
        self.opened_at_us = opened_at_us
        self.killed = False
        self.closed = threading.Event()

    def kill(self) -> None:
        self.killed = True
        _rst_close(self.client)
        _rst_close(self.upstream)


class _RouteState:
    def __init__(self, route: ProxyRoute):
        self.route = route
        self.shaping = NEUTRAL
        self.lock = threading.Lock()
        self.bucket: _TokenBucket | None = None
        self.listener: socket.socket | None = None
        self.conns: list[_Conn] = []
        self.events: list[tuple[int, str, int]] = []  # (t_us, kind, duration_us)
        self.threads: list[threading.Thread] = []


class ProxyInstance:
    """Forwards byte streams bidirectionally per route with live shaping."""

    def __init__(self, routes: list[ProxyRoute]):
        names = [r.name for r in routes]
        if len(set(names)) != len(names):
            raise ChaosError("duplicate route name")
        for r in routes:
            if r.listen == r.upstream:
                raise ChaosError(f"route {r.name!r}: listen equals upstream")
        self._routes: dict[str, _RouteState] = {r.name: _RouteState(r) for r in routes}
        self._stop = threading.Event()
        self._epoch_us = time.monotonic_ns() // 1000

    def now_us(self) -> int:
        return time.monotonic_ns() // 1000 - self._epoch_us

    def start(self) -> "ProxyInstance":
        for state in self._routes.values():
            sock = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            sock.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
            try:
                sock.bind(state.route.listen)
            except OSError as exc:
                sock.close()
                self.stop()
                raise BindError(f"route {state.route.name!r}: cannot bind {state.route.listen}: {exc}") from exc
            sock.listen(32)
            sock.settimeout(0.2)
            state.listener = sock
            t = threading.Thread(target=self._accept_loop, args=(state,), daemon=True)
            state.threads.append(t)
            t.start()
        return self

    def stop(self) -> None:
        self._stop.set()
        for state in self._routes.values():
            if state.listener is not None:
                try:
                    state.listener.close()
                except OSError:
                    pass
            with state.lock:
                conns = list(state.conns)
            for conn in conns:
                conn.kill()
        for state in self._routes.values():
            for t in state.threads:
                t.join(timeout=2.0)

    def listen_port(self, name: str) -> int:
        state = self._route(name)
        return state.listener.getsockname()[1]

    def _route(self, name: str) -> _RouteState:
        if name not in self._routes:
            raise UnknownRoute(f"no route named {name!r}")
        return self._routes[name]

    def route_names(self) -> list[str]:
        return list(self._routes)

    def shaping(self, name: str) -> LinkShaping:
        state = self._route(name)
        with state.lock:
            return state.shaping

    def apply_shaping(self, name: str, shaping: LinkShaping) -> LinkShaping:
        """Swap in new shaping; returns the previous value. kill_active is
        consumed immediately and never persists."""
        state = self._route(name)
        kill = shaping.kill_active
        shaping = replace(shaping, kill_active=False)
        with state.lock:
            previous = state.shaping
            state.shaping = shaping
            if shaping.bytes_per_sec > 0:
                if state.bucket is None or state.bucket.rate != shaping.bytes_per_sec:
                    state.bucket = _TokenBucket(shaping.bytes_per_sec)
            else:
                state.bucket = None
            victims = list(state.conns) if kill else []
        for conn in victims:
            conn.kill()  # the pump threads record the kill as they unwind
        return previous

    def neutral_everywhere(self) -> bool:
        return all(self.shaping(n).neutral() for n in self._routes)

    # -- data path ----------------------------------------------------------

    def _record(self, state: _RouteState, kind: str, opened_at_us: int | None) -> None:
        now = self.now_us()
        duration = now - opened_at_us if opened_at_us is not None else 0
        with state.lock:
            state.events.append((now, kind, duration))

    def events_snapshot(self, name: str) -> list[tuple[int, str, int]]:
        state = self._route(name)
        with state.lock:
            return list(state.events)

    def _accept_loop(self, state: _RouteState) -> None:
        while not self._stop.is_set():
            try:
                client, _ = state.listener.accept()
            except socket.timeout:
                continue
            except OSError:
                return
            client.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            with state.lock:
                refusing = state.shaping.refuse_new
            if refusing:
                _rst_close(client)
                self._record(state, "refused", None)
                continue
            upstream = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
            upstream.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
            try:
                upstream.settimeout(5.0)
                upstream.connect(state.route.upstream)
                upstream.settimeout(None)
            except OSError:
                upstream.close()
                _rst_close(client)
                self._record(state, "upstream_fail", None)
                continue
            conn = _Conn(client, upstream, self.now_us())
            with state.lock:
                state.conns.append(conn)
            t1 = threading.Thread(target=self._pump_up, args=(state, conn), daemon=True)
            t2 = threading.Thread(target=self._pump_down, args=(state, conn), daemon=True)
            state.threads.extend([t1, t2])
            t1.start()
            t2.start()

    def _finish_conn(self, state: _RouteState, conn: _Conn) -> None:
        if conn.closed.is_set():
            return
        conn.closed.set()
        with state.lock:
            if conn in state.conns:
                state.conns.remove(conn)
        for sock in (conn.client, conn.upstream):
            try:
                sock.close()
            except OSError:
                pass
        self._record(state, "killed" if conn.killed else "ok", conn.opened_at_us)

    def _pump_up(self, state: _RouteState, conn: _Conn) -> None:
        """Client-to-upstream direction: the shaped one."""
        try:
            while True:
                data = conn.client.recv(_CHUNK)
                if not data:
                    break
                with state.lock:
                    shaping = state.shaping
                    bucket = state.bucket
                if shaping.latency_us > 0 or shaping.jitter_us > 0:
                    delay = shaping.latency_us + (
                        random.randint(0, shaping.jitter_us) if shaping.jitter_us > 0 else 0
                    )
                    time.sleep(delay / 1_000_000)
                if bucket is not None:
                    bucket.take(len(data))
                conn.upstream.sendall(data)
        except OSError:
            pass
        finally:
            self._finish_conn(state, conn)

    def _pump_down(self, state: _RouteState, conn: _Conn) -> None:
        try:
            while True:
                data = conn.upstream.recv(_CHUNK)
                if not data:
                    break
                conn.client.sendall(data)
        except OSError:
            pass
        finally:
            self._finish_conn(state, conn)


def start_proxy(routes: list[ProxyRoute]) -> ProxyInstance:
    """Bind all routes and begin forwarding with neutral shaping."""
    return ProxyInstance(routes).start()
