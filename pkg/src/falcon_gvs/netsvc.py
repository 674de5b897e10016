"""TCP search service and client.

Wire format (all integers little-endian)::

    request   = header, batch_size * dim float32
    header    = "FALC", version, k, l, algorithm, mg, mc, batch_size, dim   (u32 each)
    response  = per query: query_index u32, status u32, count u32,
                count * (id u32, distance f32)

The server starts searching query ``i`` as soon as its payload has arrived
and writes responses in arrival order, so a client streaming a batch
receives its first answers before it has finished sending.
"""

from __future__ import annotations

import asyncio
import enum
import logging
import socket
import struct
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .graph_index import GraphIndex
from .parallel_exec import EngineConfig, search_intra
from .traversal import Algorithm, SearchParams, search

__all__ = [
    "MAGIC",
    "VERSION",
    "Status",
    "RequestHeader",
    "QueryResponse",
    "ServiceError",
    "TransportError",
    "encode_request",
    "decode_request",
    "encode_response",
    "decode_responses",
    "SearchServer",
    "serve",
    "client_query",
]

logger = logging.getLogger(__name__)

MAGIC = b"FALC"
VERSION = 1
HEADER = struct.Struct("<4s8I")
RECORD = struct.Struct("<III")
PAIR = np.dtype([("id", "<u4"), ("dist", "<f4")])
NO_QUERY = 0xFFFFFFFF


class Status(enum.IntEnum):
    OK = 0
    BAD_MAGIC = 1
    BAD_VERSION = 2
    DIM_MISMATCH = 3
    BAD_PARAMS = 4
    INTERNAL_ERROR = 5


class ServiceError(RuntimeError):
    """The server rejected a request."""

    def __init__(self, status: Status, message: str = ""):
        super().__init__(f"{Status(status).name}: {message}" if message else Status(status).name)
        self.status = Status(status)


class TransportError(ConnectionError):
    """The connection dropped mid-batch; ``partial`` holds what arrived."""

    def __init__(self, message: str, partial=None):
        super().__init__(message)
        self.partial = partial or []


@dataclass(frozen=True)
class RequestHeader:
    k: int
    l: int
    algorithm: int
    mg: int
    mc: int
    batch_size: int
    dim: int
    version: int = VERSION
    magic: bytes = MAGIC

    def to_params(self, defaults: SearchParams = SearchParams()) -> SearchParams:
        return defaults.replace(k=self.k, l=self.l, algorithm=Algorithm.from_code(self.algorithm),
                                mg=self.mg, mc=self.mc, trace=False)


@dataclass
class QueryResponse:
    query_index: int
    status: Status
    neighbors: List[Tuple[int, float]] = field(default_factory=list)

    @property
    def ids(self) -> List[int]:
        return [i for i, _ in self.neighbors]


def encode_request(params: SearchParams, queries) -> bytes:
    q = np.ascontiguousarray(np.atleast_2d(np.asarray(queries, dtype="<f4")))
    head = HEADER.pack(MAGIC, VERSION, params.k, params.l, params.algorithm.code, params.mg,
                       params.mc, q.shape[0], q.shape[1])
    return head + q.tobytes()


def decode_request(blob: bytes) -> Tuple[RequestHeader, np.ndarray]:
    magic, version, k, l, algo, mg, mc, batch, dim = HEADER.unpack_from(blob)
    header = RequestHeader(k, l, algo, mg, mc, batch, dim, version, magic)
    body = np.frombuffer(blob, dtype="<f4", offset=HEADER.size, count=batch * dim)
    return header, body.reshape(batch, dim).astype(np.float32)


def encode_response(resp: QueryResponse) -> bytes:
    pairs = np.zeros(len(resp.neighbors), dtype=PAIR)
    if resp.neighbors:
        pairs["id"] = [i for i, _ in resp.neighbors]
        pairs["dist"] = [d for _, d in resp.neighbors]
    return RECORD.pack(resp.query_index, int(resp.status), len(pairs)) + pairs.tobytes()


def decode_responses(blob: bytes) -> List[QueryResponse]:
    out, pos = [], 0
    while pos < len(blob):
        idx, status, count = RECORD.unpack_from(blob, pos)
        pos += RECORD.size
        pairs = np.frombuffer(blob, dtype=PAIR, offset=pos, count=count)
        pos += count * PAIR.itemsize
        out.append(QueryResponse(idx, Status(status),
                                 [(int(i), float(d)) for i, d in zip(pairs["id"], pairs["dist"])]))
    return out


def _validate_header(header: RequestHeader, index: GraphIndex) -> Optional[Status]:
    if header.magic != MAGIC:
        return Status.BAD_MAGIC
    if header.version != VERSION:
        return Status.BAD_VERSION
    if header.batch_size < 1 or header.algorithm > 2:
        return Status.BAD_PARAMS
    try:
        params = header.to_params()
    except ValueError:
        return Status.BAD_PARAMS
    if params.k > index.count:
        return Status.BAD_PARAMS
    return None


class SearchServer:
    """Asyncio TCP front end over one shared search engine."""

    def __init__(self, index: GraphIndex, params_defaults: SearchParams = SearchParams(),
                 config: EngineConfig = EngineConfig(), host: str = "127.0.0.1", port: int = 0):
        self.index = index
        self.defaults = params_defaults
        self.config = config
        self.host = host
        self.port = port
        workers = config.pipelines if config.mode == "across_query" else 1
        self._pool = ThreadPoolExecutor(max_workers=max(workers, 1), thread_name_prefix="qpp")
        self._units = (ThreadPoolExecutor(max_workers=config.units, thread_name_prefix="bfc")
                       if config.mode == "intra_query" else None)
        self._loop: Optional[asyncio.AbstractEventLoop] = None
        self._server = None
        self._thread: Optional[threading.Thread] = None
        self._ready = threading.Event()

    # engine ---------------------------------------------------------------------

    def _search(self, q: np.ndarray, params: SearchParams):
        if self._units is not None:
            return search_intra(self.index, q, params, EngineConfig(mode="intra_query",
                                                                     units=self.config.units),
                                executor=self._units)
        return search(self.index, q, params)

    # connection handling --------------------------------------------------------------

    async def _writer(self, outbox: asyncio.Queue, writer: asyncio.StreamWriter) -> None:
        while True:
            item = await outbox.get()
            if item is None:
                return
            idx, job = item
            if isinstance(job, Status):
                writer.write(encode_response(QueryResponse(idx, job)))
            else:
                try:
                    result = await job
                    writer.write(encode_response(QueryResponse(idx, Status.OK, result.neighbors)))
                except Exception:  # engine failure for this query only
                    logger.exception("query %d failed", idx)
                    writer.write(encode_response(QueryResponse(idx, Status.INTERNAL_ERROR)))
            await writer.drain()

    async def _handle(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        loop = asyncio.get_running_loop()
        outbox: asyncio.Queue = asyncio.Queue()
        writer_task = loop.create_task(self._writer(outbox, writer))
        try:
            while True:
                try:
                    raw = await reader.readexactly(HEADER.size)
                except asyncio.IncompleteReadError:
                    break
                magic, version, k, l, algo, mg, mc, batch, dim = HEADER.unpack(raw)
                header = RequestHeader(k, l, algo, mg, mc, batch, dim, version, magic)
                bad = _validate_header(header, self.index)
                if bad is not None:
                    await outbox.put((NO_QUERY, bad))
                    break
                params = header.to_params(self.defaults)
                mismatch = dim != self.index.dim
                for i in range(batch):
                    payload = await reader.readexactly(dim * 4)
                    if mismatch:
                        await outbox.put((i, Status.DIM_MISMATCH))
                        continue
                    q = np.frombuffer(payload, dtype="<f4").astype(np.float32)
                    fut = loop.run_in_executor(self._pool, self._search, q, params)
                    await outbox.put((i, fut))
        except (asyncio.IncompleteReadError, ConnectionError):
            pass
        finally:
            await outbox.put(None)
            try:
                await writer_task
                writer.close()
                await writer.wait_closed()
            except ConnectionError:
                pass

    # lifecycle ---------------------------------------------------------------------------

    async def _main(self) -> None:
        self._server = await asyncio.start_server(self._handle, self.host, self.port,
                                                  backlog=512)
        sock = self._server.sockets[0]
        self.host, self.port = sock.getsockname()[:2]
        self._ready.set()
        async with self._server:
            await self._server.serve_forever()

    def start(self) -> Tuple[str, int]:
        """Serve from a background thread; returns the bound (host, port)."""
        def run():
            self._loop = asyncio.new_event_loop()
            try:
                self._loop.run_until_complete(self._main())
            except asyncio.CancelledError:
                pass
            finally:
                self._loop.close()

        self._thread = threading.Thread(target=run, name="falcon-server", daemon=True)
        self._thread.start()
        if not self._ready.wait(10):
            raise RuntimeError("server failed to start")
        return self.host, self.port

    def stop(self) -> None:
        if self._loop is not None and self._server is not None:
            self._loop.call_soon_threadsafe(self._server.close)
            for task in asyncio.all_tasks(self._loop):
                self._loop.call_soon_threadsafe(task.cancel)
        if self._thread is not None:
            self._thread.join(10)
        self._pool.shutdown(wait=False, cancel_futures=True)
        if self._units is not None:
            self._units.shutdown(wait=False, cancel_futures=True)

    def __enter__(self):
        self.start()
        return self

    def __exit__(self, *exc):
        self.stop()


def serve(index: GraphIndex, params_defaults: SearchParams = SearchParams(),
          config: EngineConfig = EngineConfig(), port: int = 7878, host: str = "0.0.0.0") -> None:
    """Blocking server entry point."""
    server = SearchServer(index, params_defaults, config, host, port)
    logger.info("serving %d-node index on %s:%d", index.count, host, port)
    try:
        asyncio.run(server._main())
    except KeyboardInterrupt:
        pass


def _recv_exact(sock: socket.socket, n: int) -> bytes:
    buf = bytearray()
    while len(buf) < n:
        chunk = sock.recv(n - len(buf))
        if not chunk:
            raise EOFError(len(buf))
        buf += chunk
    return bytes(buf)


def client_query(host: str, port: int, queries, params: SearchParams, *, timeout: float = 60.0,
                 inter_query_gap: float = 0.0, timings: Optional[dict] = None
                 ) -> List[QueryResponse]:
    """Send one batch and collect every response.

    With ``inter_query_gap > 0`` the queries are streamed one by one with a
    pause in between; ``timings`` (if given) receives ``last_send`` and
    ``first_recv`` timestamps from ``time.perf_counter``.
    """
    q = np.atleast_2d(np.asarray(queries, dtype="<f4"))
    blob = encode_request(params, q)
    head, body = blob[: HEADER.size], blob[HEADER.size:]
    qbytes = q.shape[1] * 4
    try:
        sock = socket.create_connection((host, port), timeout=timeout)
    except ConnectionRefusedError:
        raise
    responses: List[QueryResponse] = []
    failure: List[BaseException] = []
    stamps = {}

    def read_all():
        try:
            while len(responses) < q.shape[0]:
                idx, status, count = RECORD.unpack(_recv_exact(sock, RECORD.size))
                stamps.setdefault("first_recv", time.perf_counter())
                pairs = np.frombuffer(_recv_exact(sock, count * PAIR.itemsize), dtype=PAIR)
                resp = QueryResponse(idx, Status(status),
                                     [(int(i), float(d)) for i, d in zip(pairs["id"], pairs["dist"])])
                if idx == NO_QUERY:
                    failure.append(ServiceError(resp.status, "request rejected"))
                    return
                responses.append(resp)
        except (EOFError, OSError) as exc:
            failure.append(exc)

    reader = threading.Thread(target=read_all, daemon=True)
    reader.start()
    try:
        if inter_query_gap > 0:
            sock.sendall(head)
            for i in range(q.shape[0]):
                sock.sendall(body[i * qbytes:(i + 1) * qbytes])
                if i + 1 < q.shape[0]:
                    time.sleep(inter_query_gap)
        else:
            sock.sendall(blob)
        stamps["last_send"] = time.perf_counter()
    except OSError as exc:
        failure.append(exc)
    reader.join(timeout)
    sock.close()
    if timings is not None:
        timings.update(stamps)
    if failure and isinstance(failure[0], ServiceError):
        raise failure[0]
    if len(responses) < q.shape[0]:
        raise TransportError(
            f"connection closed after {len(responses)} of {q.shape[0]} responses", responses)
    return responses
