"""Blocking, per-direction FIFO transports carrying framed messages."""
from __future__ import annotations

import queue
import socket

from ..errors import ProtocolAbortError
from ..psu.wire import HEADER, Tag, decode_matrix, encode_matrix, frame, unframe


class Transport:
    """One endpoint. Subclasses move whole frames; this class adds the codec."""

    def send_frame(self, data: bytes) -> None:
        raise NotImplementedError

    def recv_frame(self) -> bytes:
        raise NotImplementedError

    def close(self) -> None:
        pass

    def send(self, tag: Tag, payload: bytes) -> None:
        self.send_frame(frame(tag, payload))

    def recv(self) -> tuple[Tag, bytes]:
        return unframe(self.recv_frame())

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class InProcessTransport(Transport):
    def __init__(self, inbox: queue.Queue, outbox: queue.Queue, timeout: float | None = 60.0):
        self._in, self._out, self.timeout = inbox, outbox, timeout
        self.closed = False

    @classmethod
    def pair(cls, timeout: float | None = 60.0):
        a_to_b, b_to_a = queue.Queue(), queue.Queue()
        return cls(b_to_a, a_to_b, timeout), cls(a_to_b, b_to_a, timeout)

    def send_frame(self, data: bytes) -> None:
        if self.closed:
            raise ProtocolAbortError("transport closed")
        self._out.put(bytes(data))

    def recv_frame(self) -> bytes:
        try:
            data = self._in.get(timeout=self.timeout)
        except queue.Empty:
            raise ProtocolAbortError("timed out waiting for peer") from None
        if data is None:
            raise ProtocolAbortError("peer closed the transport")
        return data

    def close(self) -> None:
        if not self.closed:
            self.closed = True
            self._out.put(None)


class TcpTransport(Transport):
    def __init__(self, sock: socket.socket, timeout: float | None = 60.0):
        self.sock = sock
        sock.settimeout(timeout)
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)

    @classmethod
    def connect(cls, host: str, port: int, timeout: float | None = 60.0, retry_for: float = 10.0):
        import time

        deadline = time.monotonic() + retry_for
        while True:
            try:
                return cls(socket.create_connection((host, port), timeout=timeout), timeout)
            except OSError as err:
                if time.monotonic() > deadline:
                    raise ProtocolAbortError(f"cannot connect to {host}:{port}: {err}") from err
                time.sleep(0.05)

    @classmethod
    def listen(cls, host: str, port: int, timeout: float | None = 60.0, ready=None):
        """Accept exactly one peer. ``ready`` (callable) receives the bound port."""
        srv = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        srv.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        try:
            srv.bind((host, port))
            srv.listen(1)
            srv.settimeout(timeout)
            if ready is not None:
                ready(srv.getsockname()[1])
            conn, _ = srv.accept()
        except OSError as err:
            raise ProtocolAbortError(f"listen on {host}:{port} failed: {err}") from err
        finally:
            srv.close()
        return cls(conn, timeout)

    def _read_exact(self, n: int) -> bytes:
        buf = bytearray()
        while len(buf) < n:
            try:
                chunk = self.sock.recv(n - len(buf))
            except OSError as err:
                raise ProtocolAbortError(f"receive failed: {err}") from err
            if not chunk:
                raise ProtocolAbortError("peer closed the connection")
            buf += chunk
        return bytes(buf)

    def send_frame(self, data: bytes) -> None:
        try:
            self.sock.sendall(data)
        except OSError as err:
            raise ProtocolAbortError(f"send failed: {err}") from err

    def recv_frame(self) -> bytes:
        head = self._read_exact(HEADER.size)
        n, _ = HEADER.unpack(head)
        return head + self._read_exact(n)

    def close(self) -> None:
        try:
            self.sock.close()
        except OSError:
            pass


def parse_address(text: str) -> tuple[str, int]:
    host, _, port = text.rpartition(":")
    if not host or not port.isdigit():
        raise ValueError(f"expected host:port, got {text!r}")
    return host, int(port)


class WireLink:
    """Routes cut-layer traffic through a transport pair, byte-exact.

    Used in a single process: the feature-party end sends embeddings, the
    label-party end receives them, and the reverse for gradients.
    """

    def __init__(self, passive_end: Transport, active_end: Transport):
        self.passive, self.active = passive_end, active_end
        self.bytes_sent = 0

    @classmethod
    def in_process(cls):
        return cls(*InProcessTransport.pair())

    def _hop(self, src: Transport, dst: Transport, tag: Tag, M):
        payload = encode_matrix(M)
        self.bytes_sent += len(payload) + HEADER.size
        src.send(tag, payload)
        got, body = dst.recv()
        if got != tag:
            raise ProtocolAbortError(f"expected {tag.name}, got {got.name}")
        return decode_matrix(body)

    def send_embeddings(self, emb):
        return self._hop(self.passive, self.active, Tag.EMBEDDINGS, emb)

    def send_gradients(self, grads):
        return self._hop(self.active, self.passive, Tag.GRADIENTS, grads)
