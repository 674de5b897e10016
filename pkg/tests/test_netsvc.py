import socket
import struct
import threading
import time

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from falcon_gvs.netsvc import (
    HEADER,
    NO_QUERY,
    QueryResponse,
    SearchServer,
    ServiceError,
    Status,
    TransportError,
    client_query,
    decode_request,
    decode_responses,
    encode_request,
    encode_response,
)
from falcon_gvs.parallel_exec import EngineConfig
from falcon_gvs.traversal import SearchParams, search

P = SearchParams(k=10, l=32, algorithm="DST", mg=2, mc=2)


@pytest.fixture(scope="module")
def server(small_graph):
    srv = SearchServer(small_graph, config=EngineConfig(pipelines=4))
    srv.start()
    yield srv
    srv.stop()


def f32(x):
    return float(np.float32(x))


def local(graph, q, p=P):
    return [(i, f32(d)) for i, d in search(graph, q, p).neighbors]


@given(st.integers(1, 64), st.integers(1, 64), st.integers(0, 2), st.integers(1, 8),
       st.integers(1, 8), arrays(np.float32, st.tuples(st.integers(1, 5), st.integers(1, 7)),
                                 elements=st.floats(-1e9, 1e9, width=32)))
def test_request_round_trip(k, extra, algo, mg, mc, queries):
    algo_name = ["BFS", "MCS", "DST"][algo]
    mg = mg if algo == 2 else 1
    mc = 1 if algo == 0 else mc
    p = SearchParams(k=k, l=k + extra, algorithm=algo_name, mg=mg, mc=mc)
    header, body = decode_request(encode_request(p, queries))
    assert header.to_params() == p
    assert (header.batch_size, header.dim) == queries.shape
    assert np.array_equal(body, queries)


pairs = st.lists(st.tuples(st.integers(0, 2**32 - 1),
                           st.floats(width=32, allow_nan=False)), max_size=20)


@given(st.lists(st.tuples(st.integers(0, 2**32 - 1), st.sampled_from(list(Status)), pairs),
                max_size=5))
def test_response_round_trip(records):
    resp = [QueryResponse(i, s, n) for i, s, n in records]
    blob = b"".join(encode_response(r) for r in resp)
    assert decode_responses(blob) == resp


def test_loopback_equals_local(server, small_graph, small_queries):
    one = client_query(server.host, server.port, small_queries[:1], P)
    assert len(one) == 1 and one[0].status is Status.OK
    assert one[0].neighbors == local(small_graph, small_queries[0])
    many = client_query(server.host, server.port, small_queries[:32], P)
    assert [r.query_index for r in many] == list(range(32))
    for r, q in zip(many, small_queries[:32]):
        assert r.neighbors == local(small_graph, q)


def raw_exchange(server, payload, expect_close=True):
    with socket.create_connection((server.host, server.port), timeout=10) as s:
        s.sendall(payload)
        data = b""
        while True:
            chunk = s.recv(4096)
            if not chunk:
                break
            data += chunk
            if not expect_close and len(data) >= 12:
                break
    return decode_responses(data)


def test_bad_magic_and_version(server, small_queries):
    good = encode_request(P, small_queries[:1])
    bad = raw_exchange(server, b"NOPE" + good[4:])
    assert bad == [QueryResponse(NO_QUERY, Status.BAD_MAGIC)]
    ver = raw_exchange(server, good[:4] + struct.pack("<I", 7) + good[8:])
    assert ver[0].status is Status.BAD_VERSION
    k_gt_l = HEADER.pack(b"FALC", 1, 50, 10, 0, 1, 1, 1, 8)
    assert raw_exchange(server, k_gt_l)[0].status is Status.BAD_PARAMS
    # the server survives
    assert client_query(server.host, server.port, small_queries[:1], P)[0].status is Status.OK


def test_dim_mismatch(server):
    res = client_query(server.host, server.port, np.zeros((2, 5), np.float32), P)
    assert [r.status for r in res] == [Status.DIM_MISMATCH] * 2
    assert [r.query_index for r in res] == [0, 1]


def test_refused_is_distinct():
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    with pytest.raises(ConnectionRefusedError):
        client_query("127.0.0.1", port, np.zeros((1, 8), np.float32), P)


def test_close_mid_batch_gives_partial_results(small_queries):
    """A server that answers two of four queries and hangs up."""
    lsock = socket.socket()
    lsock.bind(("127.0.0.1", 0))
    lsock.listen(1)

    def fake():
        conn, _ = lsock.accept()
        conn.recv(65536)
        for i in range(2):
            conn.sendall(encode_response(QueryResponse(i, Status.OK, [(i, 0.5)])))
        conn.close()

    t = threading.Thread(target=fake)
    t.start()
    with pytest.raises(TransportError) as err:
        client_query("127.0.0.1", lsock.getsockname()[1], small_queries[:4], P)
    t.join()
    lsock.close()
    assert [r.query_index for r in err.value.partial] == [0, 1]


def test_rejected_header_raises(small_queries):
    lsock = socket.socket()
    lsock.bind(("127.0.0.1", 0))
    lsock.listen(1)

    def fake():
        conn, _ = lsock.accept()
        conn.recv(65536)
        conn.sendall(encode_response(QueryResponse(NO_QUERY, Status.BAD_VERSION)))
        conn.close()

    t = threading.Thread(target=fake)
    t.start()
    with pytest.raises(ServiceError) as err:
        client_query("127.0.0.1", lsock.getsockname()[1], small_queries[:1], P)
    t.join()
    lsock.close()
    assert err.value.status is Status.BAD_VERSION


def test_streamed_batch_overlaps(server, small_graph, small_queries):
    timings = {}
    res = client_query(server.host, server.port, small_queries[:16], P,
                       inter_query_gap=0.001, timings=timings)
    assert len(res) == 16
    assert timings["first_recv"] < timings["last_send"]


def test_hundred_concurrent_clients(server, small_graph, small_queries):
    out = [None] * 100
    errors = []

    def worker(i):
        try:
            out[i] = client_query(server.host, server.port, small_queries[i:i + 1], P)
        except Exception as exc:  # surfaced below
            errors.append(exc)

    threads = [threading.Thread(target=worker, args=(i,)) for i in range(100)]
    for t in threads:
        t.start()
    for t in threads:
        t.join(60)
    assert not errors
    for i in range(100):
        assert out[i][0].neighbors == local(small_graph, small_queries[i])


def test_intra_query_server(small_graph, small_queries):
    with SearchServer(small_graph, config=EngineConfig(mode="intra_query", units=4)) as srv:
        res = client_query(srv.host, srv.port, small_queries[:4], P)
    for r, q in zip(res, small_queries[:4]):
        assert r.neighbors == local(small_graph, q)
