import json
import math
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest

from scenesense.cooccurrence import CooccurrenceTable
from scenesense.errors import AuthError, BackendError, ProtocolError, ValidationError
from scenesense.lm_backend import (
    HashEmbedder,
    HashScorer,
    HttpEmbedder,
    HttpScorer,
    LengthNormalizedScorer,
    ShiftedScorer,
    TableEmbedder,
    TableScorer,
    mock_scorer_from_conditionals,
    parse_zero_shot_query,
)
from scenesense.query import zero_shot_query
from scenesense.scene_graph import LabelSpace

from conftest import make_space


class StubServer:
    """Local HTTP stub with a scriptable status sequence and call tracking."""

    def __init__(self, statuses=(), delay=0.0, score_fn=None, embed_fn=None):
        self.statuses = list(statuses)
        self.delay = delay
        self.score_fn = score_fn or (lambda prompts: [float(len(p)) for p in prompts])
        self.embed_fn = embed_fn or (lambda texts, call: [[float(len(t)), 1.0, 0.0] for t in texts])
        self.lock = threading.Lock()
        self.active = 0
        self.max_active = 0
        self.requests = []  # (path, body, headers)
        self.calls = 0

    def __enter__(self):
        stub = self

        class Handler(BaseHTTPRequestHandler):
            def log_message(self, *args):
                pass

            def do_POST(self):
                # count a request as active only until just before the
                # response is written; the client cannot move on while we
                # still count it, so max_active measures true concurrency
                with stub.lock:
                    stub.active += 1
                    stub.max_active = max(stub.max_active, stub.active)
                    call_index = stub.calls
                    stub.calls += 1
                    status = stub.statuses.pop(0) if stub.statuses else 200
                if stub.delay:
                    time.sleep(stub.delay)
                length = int(self.headers.get("Content-Length", 0))
                body = json.loads(self.rfile.read(length)) if length else {}
                with stub.lock:
                    stub.requests.append((self.path, body, dict(self.headers)))
                if status != 200:
                    with stub.lock:
                        stub.active -= 1
                    self.send_response(status)
                    self.end_headers()
                    return
                if self.path == "/score":
                    payload = {"scores": stub.score_fn(body.get("prompts", []))}
                else:
                    payload = {"embeddings": stub.embed_fn(body.get("texts", []), call_index)}
                data = json.dumps(payload).encode()
                with stub.lock:
                    stub.active -= 1
                self.send_response(200)
                self.send_header("Content-Type", "application/json")
                self.send_header("Content-Length", str(len(data)))
                self.end_headers()
                self.wfile.write(data)

        self.server = ThreadingHTTPServer(("127.0.0.1", 0), Handler)
        self.thread = threading.Thread(target=self.server.serve_forever, daemon=True)
        self.thread.start()
        self.url = f"http://127.0.0.1:{self.server.server_address[1]}"
        return self

    def __exit__(self, *exc):
        self.server.shutdown()
        self.server.server_close()


class TestParseQuery:
    def test_single(self):
        assert parse_zero_shot_query("A room containing toilet is called a bathroom.") == (
            ["toilet"],
            "bathroom",
        )

    def test_pair(self):
        assert parse_zero_shot_query("A room containing bed and dresser is called a bedroom.") == (
            ["bed", "dresser"],
            "bedroom",
        )

    def test_oxford_list_with_multiword_labels(self):
        text = "A room containing washing machine, sink, and towel is called a laundry room."
        assert parse_zero_shot_query(text) == (["washing machine", "sink", "towel"], "laundry room")

    def test_roundtrip_with_renderer(self):
        labels = ["chest of drawers", "tv monitor", "bed", "plant"]
        for k in (1, 2, 3, 4):
            text = zero_shot_query(labels[:k], "living room")
            assert parse_zero_shot_query(text) == (labels[:k], "living room")

    def test_non_template(self):
        assert parse_zero_shot_query("This room contains bed.") is None


class TestConditionalMock:
    def _table(self):
        space = LabelSpace(
            name="two",
            object_labels=("toilet", "sink"),
            room_labels=("bathroom", "kitchen"),
        )
        probs = np.array([[0.9, 0.1], [0.3, 0.7]])
        return CooccurrenceTable(label_space=space, source="proxy", probs=probs)

    def test_single_object_log(self):
        scorer = mock_scorer_from_conditionals(self._table())
        got = scorer.score("A room containing toilet is called a bathroom.")
        assert got == pytest.approx(math.log(0.9), abs=1e-12)

    def test_two_object_sum_of_logs(self):
        scorer = mock_scorer_from_conditionals(self._table())
        got = scorer.score("A room containing toilet and sink is called a bathroom.")
        assert got == pytest.approx(math.log(0.9) + math.log(0.3), abs=1e-12)

    def test_lenient_default_for_non_template(self):
        scorer = mock_scorer_from_conditionals(self._table(), default_score=-55.0)
        assert scorer.score("What is this room?") == -55.0

    def test_strict_mode_raises_naming_string(self):
        scorer = mock_scorer_from_conditionals(self._table(), strict=True)
        with pytest.raises(ValidationError, match="What is this room"):
            scorer.score("What is this room?")

    def test_strict_mode_unknown_room(self):
        scorer = mock_scorer_from_conditionals(self._table(), strict=True)
        with pytest.raises(ValidationError, match="spaceship"):
            scorer.score("A room containing toilet is called a spaceship.")

    def test_batch_matches_single(self):
        scorer = mock_scorer_from_conditionals(self._table())
        texts = [
            "A room containing sink is called a kitchen.",
            "A room containing toilet is called a bathroom.",
        ]
        assert scorer.batch_score(texts) == [scorer.score(t) for t in texts]


class TestWrappers:
    def test_shifted_scorer(self):
        base = TableScorer({"a": 1.0}, default_score=0.0)
        shifted = ShiftedScorer(base, 10.0)
        assert shifted.score("a") == 11.0
        assert shifted.batch_score(["a", "b"]) == [11.0, 10.0]

    def test_length_normalized(self):
        base = TableScorer({"one two three four": -8.0}, default_score=-8.0)
        norm = LengthNormalizedScorer(base)
        assert norm.score("one two three four") == -2.0
        assert norm.metadata.semantics == "mean_token_logprob_per_word"


class TestHashBackends:
    def test_scorer_deterministic(self):
        a, b = HashScorer(seed=4), HashScorer(seed=4)
        assert a.score("hello") == b.score("hello")
        assert -10.0 <= a.score("hello") <= 0.0
        assert HashScorer(seed=5).score("hello") != a.score("hello")

    def test_embedder_deterministic(self):
        e = HashEmbedder(dimension=64, seed=0)
        np.testing.assert_array_equal(e.embed("This room contains bed."), e.embed("This room contains bed."))

    def test_embedder_unit_norm(self):
        e = HashEmbedder(dimension=128, seed=0)
        assert np.linalg.norm(e.embed("some words here")) == pytest.approx(1.0, abs=1e-9)

    def test_shared_tokens_closer_in_cosine(self):
        e = HashEmbedder(dimension=256, seed=0)
        base = e.embed("This room contains bed.")
        near = e.embed("This room contains bed and dresser.")
        far = e.embed("This room contains stove.")
        assert float(base @ near) > float(base @ far)

    def test_batch_matches_single(self):
        e = HashEmbedder(dimension=32, seed=1)
        texts = ["a", "b c", "d e f"]
        batch = e.embed_batch(texts)
        for text, vec in zip(texts, batch):
            np.testing.assert_array_equal(vec, e.embed(text))

    def test_table_embedder(self):
        e = TableEmbedder({"x": [1.0, 0.0]}, dimension=2)
        np.testing.assert_array_equal(e.embed("x"), [1.0, 0.0])
        np.testing.assert_array_equal(e.embed("unknown"), [0.0, 0.0])


class TestHttpScorer:
    def test_batch_order_preserved(self):
        with StubServer() as stub:
            scorer = HttpScorer(stub.url, "test-model", backoff=0.01)
            prompts = [f"prompt {'x' * i}" for i in range(23)]
            scores = scorer.batch_score(prompts)
            assert scores == [float(len(p)) for p in prompts]

    def test_chunking_respects_batch_size_and_order(self):
        with StubServer() as stub:
            scorer = HttpScorer(stub.url, "m", batch_size=32, backoff=0.01)
            prompts = [f"p{'y' * (i % 57)}" for i in range(80)]
            scores = scorer.batch_score(prompts)
            assert scores == [float(len(p)) for p in prompts]
            # chunks may arrive in any order; sizes must still be <= 32
            sizes = [len(body["prompts"]) for _, body, _ in stub.requests]
            assert sorted(sizes) == [16, 32, 32]

    def test_retry_on_503_then_success(self):
        with StubServer(statuses=[503, 200]) as stub:
            scorer = HttpScorer(stub.url, "m", backoff=0.01)
            assert scorer.batch_score(["abc"]) == [3.0]
            assert stub.calls == 2

    def test_no_retry_on_401(self):
        with StubServer(statuses=[401]) as stub:
            scorer = HttpScorer(stub.url, "m", backoff=0.01)
            with pytest.raises(AuthError):
                scorer.score("abc")
            assert stub.calls == 1

    def test_exhausted_retries_raise_backend_error(self):
        with StubServer(statuses=[503, 503, 503]) as stub:
            scorer = HttpScorer(stub.url, "m", max_attempts=3, backoff=0.01)
            with pytest.raises(BackendError) as err:
                scorer.score("abc")
            assert not isinstance(err.value, AuthError)
            assert stub.calls == 3

    def test_unexpected_4xx_no_retry(self):
        with StubServer(statuses=[418]) as stub:
            scorer = HttpScorer(stub.url, "m", backoff=0.01)
            with pytest.raises(BackendError):
                scorer.score("abc")
            assert stub.calls == 1

    def test_protocol_error_on_wrong_count(self):
        with StubServer(score_fn=lambda prompts: [1.0]) as stub:
            scorer = HttpScorer(stub.url, "m", backoff=0.01)
            with pytest.raises(ProtocolError):
                scorer.batch_score(["a", "b"])

    def test_concurrency_bound_never_exceeded(self):
        with StubServer(delay=0.03) as stub:
            scorer = HttpScorer(stub.url, "m", batch_size=4, max_in_flight=3, backoff=0.01)
            prompts = [f"p{i}" for i in range(48)]
            scorer.batch_score(prompts)
            assert stub.max_active <= 3
            assert stub.calls == 12

    def test_bearer_token_from_env(self, monkeypatch):
        monkeypatch.setenv("SCENESENSE_API_KEY", "sekret")
        with StubServer() as stub:
            HttpScorer(stub.url, "m", backoff=0.01).score("a")
            _, _, headers = stub.requests[0]
            assert headers.get("Authorization") == "Bearer sekret"

    def test_request_id_in_error(self):
        with StubServer(statuses=[401]) as stub:
            scorer = HttpScorer(stub.url, "m", backoff=0.01)
            with pytest.raises(AuthError, match="request_id="):
                scorer.score("a")


class TestHttpEmbedder:
    def test_batch_returns_n_vectors(self):
        with StubServer() as stub:
            embedder = HttpEmbedder(stub.url, "m", backoff=0.01)
            vectors = embedder.embed_batch(["a", "bb", "ccc"])
            assert len(vectors) == 3
            assert embedder.dimension == 3

    def test_dimension_discovered_then_enforced(self):
        def embed_fn(texts, call):
            dim = 4 if call == 0 else 5
            return [[0.0] * dim for _ in texts]

        with StubServer(embed_fn=embed_fn) as stub:
            embedder = HttpEmbedder(stub.url, "m", backoff=0.01)
            embedder.embed("first")
            assert embedder.dimension == 4
            with pytest.raises(ProtocolError, match="dimension"):
                embedder.embed("second")

    def test_deterministic_server_gives_identical_vectors(self):
        with StubServer() as stub:
            embedder = HttpEmbedder(stub.url, "m", backoff=0.01)
            v1 = embedder.embed("same text")
            v2 = embedder.embed("same text")
            np.testing.assert_array_equal(v1, v2)

    def test_wire_format(self):
        with StubServer() as stub:
            HttpEmbedder(stub.url, "modelname", backoff=0.01).embed("hi")
            path, body, _ = stub.requests[0]
            assert path == "/embed"
            assert body == {"model": "modelname", "texts": ["hi"]}
