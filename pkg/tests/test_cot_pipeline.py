from __future__ import annotations

import json
import threading
from http.server import BaseHTTPRequestHandler, HTTPServer

import pytest

from pathforge.cot_pipeline import (
    CoTRecord,
    DecodeOptions,
    HTTPClient,
    MockClient,
    NO_PATHS_MARKER,
    PromptTemplate,
    build_generation_prompt,
    build_pruning_prompt,
    curate_item,
    export_sft_records,
    generate_cot,
    load_template,
    prune_cot,
    read_sft_records,
    render_generation_prompt,
    run_pipeline,
    serialize_paths_block,
)
from pathforge.config import packaged_data
from pathforge.errors import ClientError, ContentError, PromptError
from pathforge.path_engine import PathTemplate, TemplateKind, instantiate, serialize_path
from pathforge.qa_forge import default_category_specs, generate_qa

OPTS = DecodeOptions()


def default_templates():
    gen = load_template(packaged_data("prompt_generation.txt"), "generation")
    prune = load_template(packaged_data("prompt_pruning.txt"), "pruning")
    return gen, prune


def dalfampridine_item(graph, with_paths=True):
    spec = next(s for s in default_category_specs() if s.category == "Indication")
    items = generate_qa(graph, spec, 100, seed=3).items
    dal = graph.find_nodes("Dalfampridine")[0]
    ms = graph.find_nodes("multiple sclerosis")[0]
    item = next(it for it in items if it.head == dal and it.answer == ms)
    if with_paths:
        paths = instantiate(graph, PathTemplate(TemplateKind.LINEAR, (1,)), dal, ms).paths
        paths += instantiate(graph, PathTemplate(TemplateKind.DIVERGENT, (1, 1)),
                             dal, ms).paths[:1]
        from dataclasses import replace
        item = replace(item, paths=tuple(paths))
    return item


# ----------------------------------------------------------------- templates


def test_template_requires_role_placeholders():
    with pytest.raises(PromptError, match="missing placeholders"):
        PromptTemplate(name="bad", body="only {question}", role="generation")
    with pytest.raises(PromptError, match="unknown template role"):
        PromptTemplate(name="bad", body="{question}", role="other")


def test_default_generation_template_instructs_grounded_steps():
    gen, _ = default_templates()
    assert "step-by-step" in gen.body
    assert "Reasoning paths:" in gen.body
    assert "{question}" in gen.body and "{answer}" in gen.body and "{paths}" in gen.body


def test_default_pruning_template_keeps_essential_chain():
    _, prune = default_templates()
    assert "essential" in prune.body
    assert "answer" in prune.body
    assert "{chain}" in prune.body


def test_generation_prompt_with_empty_paths_has_marker(fixture_graph):
    gen, _ = default_templates()
    item = dalfampridine_item(fixture_graph, with_paths=False)
    prompt = build_generation_prompt(item, gen, fixture_graph)
    assert NO_PATHS_MARKER in prompt
    assert item.question in prompt


def test_generation_prompt_embeds_path_lines_in_order(fixture_graph):
    gen, _ = default_templates()
    item = dalfampridine_item(fixture_graph)
    assert len(item.paths) == 2
    prompt = build_generation_prompt(item, gen, fixture_graph)
    lines = [serialize_path(p, fixture_graph) for p in item.paths]
    assert "\n".join(lines) in prompt
    for line in lines:
        assert prompt.count(line) == 1


def test_unresolved_placeholder_raises():
    bad = PromptTemplate(name="bad", role="generation",
                         body="{question} {answer} {paths} {bogus}")
    with pytest.raises(PromptError, match="bogus"):
        render_generation_prompt(bad, "q", "a", "p")


def test_pruning_prompt_embeds_chain_once(fixture_graph):
    _, prune = default_templates()
    chain = "Step 1: a\nStep 2: b\nConclusion: c"
    prompt = build_pruning_prompt("why?", chain, prune)
    assert prompt.count(chain) == 1


def test_pruning_prompt_rejects_empty_chain():
    _, prune = default_templates()
    with pytest.raises(PromptError, match="empty chain"):
        build_pruning_prompt("why?", "   \n", prune)


# ----------------------------------------------------------------- mock client


def test_mock_table_returns_canned_response():
    client = MockClient(table={"p1": "canned one", "p2": "canned two"})
    assert generate_cot(client, "p1", OPTS) == "canned one"
    assert generate_cot(client, "p2", OPTS) == "canned two"


def test_mock_empty_completion_is_content_error():
    client = MockClient(table={"p": "   "})
    with pytest.raises(ContentError):
        generate_cot(client, "p", OPTS)


def test_identity_pruning_mock():
    chain = "Step 1: x\nConclusion: y"
    _, prune = default_templates()
    prompt = build_pruning_prompt("q?", chain, prune)
    client = MockClient(fallback=lambda p: chain)
    assert prune_cot(client, prompt, OPTS) == chain


def test_default_mock_prune_strips_additional_knowledge_lines():
    chain = ("Step 1: follow the path.\n"
             "Additional knowledge: something out of scope.\n"
             "Conclusion: the answer is X.")
    _, prune = default_templates()
    prompt = build_pruning_prompt("q?", chain, prune)
    pruned = MockClient().complete(prompt, OPTS)
    # line-filter oracle
    expected = "\n".join(l for l in chain.splitlines()
                         if not l.startswith("Additional knowledge"))
    assert pruned == expected


def test_default_mock_chain_is_grounded_in_paths(fixture_graph):
    gen, _ = default_templates()
    item = dalfampridine_item(fixture_graph)
    prompt = build_generation_prompt(item, gen, fixture_graph)
    chain = MockClient().complete(prompt, OPTS)
    for path_line in serialize_paths_block(item, fixture_graph).splitlines():
        assert path_line in chain
    assert "multiple sclerosis" in chain.splitlines()[-1]


def test_mock_is_pure():
    client = MockClient()
    assert client.complete("anything", OPTS) == client.complete("anything", OPTS)
    assert client.provenance_stamp() == client.provenance_stamp()


# ----------------------------------------------------------------- HTTP client


class _StubHandler(BaseHTTPRequestHandler):
    payload = {"text": "stub response"}
    status = 200
    requests_seen = []
    auth_seen = []

    def do_POST(self):
        length = int(self.headers.get("Content-Length", 0))
        body = json.loads(self.rfile.read(length))
        type(self).requests_seen.append(body)
        type(self).auth_seen.append(self.headers.get("Authorization"))
        self.send_response(self.status)
        self.send_header("Content-Type", "application/json")
        self.end_headers()
        self.wfile.write(json.dumps(self.payload).encode())

    def log_message(self, *args):
        pass


@pytest.fixture
def stub_server():
    _StubHandler.payload = {"text": "stub response"}
    _StubHandler.status = 200
    _StubHandler.requests_seen = []
    _StubHandler.auth_seen = []
    server = HTTPServer(("127.0.0.1", 0), _StubHandler)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield f"http://127.0.0.1:{server.server_address[1]}/complete"
    server.shutdown()


def test_http_client_roundtrips_stub_body(stub_server, monkeypatch):
    monkeypatch.setenv("PATHFORGE_TOKEN", "sekrit")
    client = HTTPClient(url=stub_server)
    text = generate_cot(client, "hello", DecodeOptions(temperature=0.5, max_tokens=64))
    assert text == "stub response"
    sent = _StubHandler.requests_seen[-1]
    assert sent == {"prompt": "hello", "max_tokens": 64, "temperature": 0.5}
    assert _StubHandler.auth_seen[-1] == "Bearer sekrit"


def test_http_client_retries_then_fails(stub_server):
    _StubHandler.status = 500
    client = HTTPClient(url=stub_server, retries=3, backoff=0.01)
    with pytest.raises(ClientError) as err:
        client.complete("hello", OPTS)
    assert err.value.attempts == 3
    assert len(_StubHandler.requests_seen) == 3


def test_http_client_missing_text_field(stub_server):
    _StubHandler.payload = {"nope": "x"}
    client = HTTPClient(url=stub_server, retries=2, backoff=0.01)
    with pytest.raises(ClientError):
        client.complete("hello", OPTS)


# ----------------------------------------------------------------- export


def _record(i, chain="Step 1: ok\nConclusion: fine"):
    return CoTRecord(
        item_id=f"item-{i:03d}", question=f"q{i}?", answer=f"a{i}",
        paths_text="linear\t1\tx -[r]-> y", chain_raw=chain,
        chain_pruned=chain, provenance={"client": "mock", "temperature": 0.0,
                                        "max_tokens": 512,
                                        "generated_at": "1970-01-01T00:00:00+00:00"},
    )


def test_export_empty_list(tmp_path):
    dest = tmp_path / "records.jsonl"
    assert export_sft_records([], dest) == 0
    assert dest.read_bytes() == b""


def test_export_roundtrip(tmp_path):
    records = [_record(i) for i in range(3)]
    dest = tmp_path / "records.jsonl"
    assert export_sft_records(records, dest) == 3
    assert read_sft_records(dest) == records
    first_bytes = dest.read_bytes()
    export_sft_records(read_sft_records(dest), dest)
    assert dest.read_bytes() == first_bytes


def test_export_escapes_embedded_newlines(tmp_path):
    record = _record(0, chain="line one\nline two\r\nline three")
    dest = tmp_path / "records.jsonl"
    export_sft_records([record], dest)
    assert len(dest.read_text(encoding="utf-8").rstrip("\n").split("\n")) == 1
    assert read_sft_records(dest) == [record]


def test_failed_export_leaves_no_torn_file(tmp_path):
    class Exploding:
        def to_json(self):
            raise RuntimeError("boom")

    dest = tmp_path / "records.jsonl"
    with pytest.raises(RuntimeError):
        export_sft_records([_record(0), Exploding()], dest)
    assert not dest.exists()
    assert list(tmp_path.iterdir()) == []


# ----------------------------------------------------------------- pipeline


def test_pipeline_is_deterministic(fixture_graph, tmp_path):
    gen, prune = default_templates()
    items = []
    for spec in default_category_specs()[:2]:
        items.extend(generate_qa(fixture_graph, spec, 5, seed=7).items)
    out1, out2 = tmp_path / "r1.jsonl", tmp_path / "r2.jsonl"
    for dest in (out1, out2):
        records, failures = run_pipeline(items, fixture_graph, gen, prune, MockClient())
        assert failures == []
        export_sft_records(records, dest)
    assert out1.read_bytes() == out2.read_bytes()


def test_pipeline_records_follow_item_id_order(fixture_graph):
    gen, prune = default_templates()
    items = generate_qa(fixture_graph, next(
        s for s in default_category_specs() if s.category == "SideEffect"), 5, seed=7).items
    records, _ = run_pipeline(list(reversed(items)), fixture_graph, gen, prune, MockClient())
    assert [r.item_id for r in records] == sorted(r.item_id for r in records)


def test_provenance_is_complete(fixture_graph):
    gen, prune = default_templates()
    item = dalfampridine_item(fixture_graph)
    record = curate_item(item, fixture_graph, gen, prune, MockClient(), OPTS)
    assert record.provenance["client"] == "mock"
    assert "temperature" in record.provenance
    assert "max_tokens" in record.provenance
    assert record.provenance["generated_at"]
    assert record.chain_pruned.strip()


def test_pipeline_continues_past_record_failures(fixture_graph):
    gen, prune = default_templates()
    items = generate_qa(fixture_graph, next(
        s for s in default_category_specs() if s.category == "Indication"), 4, seed=7).items
    # make one item's generation come back empty; its record fails, the rest pass
    bad_id = sorted(it.id for it in items)[1]
    target = next(it for it in items if it.id == bad_id)
    flaky = MockClient()
    flaky.table[build_generation_prompt(target, gen, fixture_graph)] = ""
    records, failures = run_pipeline(items, fixture_graph, gen, prune, flaky)
    assert len(records) == len(items) - 1
    assert [f[0] for f in failures] == [bad_id]
