import json
import random

import httpx
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sagr.areagraph import AreaGraph, RoomNode, serialize
from sagr.frontier import FrontierCluster
from sagr.planner import (
    FREE_EXPLORE,
    SUMMARY_LIMIT,
    Ablation,
    EndpointConfig,
    LLMPlanner,
    PlannerInput,
    PlannerUnavailable,
    RoomAssignment,
    RulePlanner,
    ScriptTransport,
    build_prompt,
    llm_plan,
    pair_by_distance,
    parse_response,
    prompt_text,
    rank_rooms,
    rule_plan,
    validate_assignment,
)
from sagr.world import Task

ROBOTS = ["r0", "r1"]


def room(rid, rtype, frontier_size, base):
    cells = tuple(range(base, base + frontier_size))
    return RoomNode(rid, rtype, frozenset(range(base, base + 20)), (FrontierCluster(cells, cells[0], rid),))


def graph_of(*nodes):
    return AreaGraph({n.room_id: n for n in nodes})


def search_input(graph, robots=ROBOTS, target="bedroom", ablation=Ablation()):
    target = None if ablation.no_target else target
    return PlannerInput(serialize(graph, robots), "", Task.SEARCH, target, list(robots), list(graph.nodes), ablation)


def explore_input(graph, robots=ROBOTS):
    return PlannerInput(serialize(graph, robots), "", Task.EXPLORE, None, list(robots), list(graph.nodes))


def test_search_capacity_rule():
    g = graph_of(room("R1", "kitchen", 3, 0), room("R2", "bedroom", 1, 100), room("R3", "closet", 7, 200))
    out = rule_plan(search_input(g), g)
    assert out.mapping == {"r0": "R2", "r1": "R3"}
    assert out.summary.startswith("targets=R2")


def test_explore_one_robot_per_room_larger_first():
    g = graph_of(room("R1", "kitchen", 2, 0), room("R2", "bedroom", 10, 100))
    assert rule_plan(explore_input(g), g).mapping == {"r0": "R2", "r1": "R1"}


def test_insertion_order_irrelevant():
    nodes = [room("R1", "kitchen", 3, 0), room("R2", "bedroom", 3, 100), room("R3", "bedroom", 5, 200)]
    g1 = graph_of(*nodes)
    g2 = graph_of(*reversed(nodes))
    robots = ["r0", "r1", "r2"]
    assert rule_plan(search_input(g1, robots), g1).mapping == rule_plan(search_input(g2, robots), g2).mapping


def test_no_target_ranking_is_type_blind():
    g = graph_of(room("R1", "kitchen", 9, 0), room("R2", "bedroom", 1, 100))
    inp = search_input(g, ablation=Ablation(no_target=True))
    planner = RulePlanner()
    out = planner.plan(inp, g)
    assert out.mapping["r0"] == "R1"
    assert all(len(key) == 2 for _, key in planner.telemetry.ranking)
    assert rank_rooms(g, "bedroom")[0][1] == "R2"


def test_reachability_restriction():
    g = graph_of(room("R1", "bedroom", 5, 0), room("R2", "kitchen", 1, 100))
    components = [0] * 200
    for c in range(0, 20):
        components[c] = 1
    for c in range(100, 120):
        components[c] = 2
    inp = search_input(g, robots=["r0"])
    out = rule_plan(inp, g, robot_cells={"r0": 105}, components=components)
    assert out.mapping == {"r0": "R2"}


def test_distance_pairing_keeps_room_multiset():
    mapping = {"r0": "R1", "r1": "R2"}
    costs = {("r0", "R1"): 10, ("r0", "R2"): 1, ("r1", "R1"): 1, ("r1", "R2"): 10}
    assert pair_by_distance(["r0", "r1"], mapping, costs) == {"r0": "R2", "r1": "R1"}


def test_empty_graph_gives_free_explore():
    g = AreaGraph()
    inp = PlannerInput(serialize(g), "", Task.EXPLORE, None, ROBOTS, [])
    assert RulePlanner().plan(inp, g).free_explore
    assert LLMPlanner(EndpointConfig(api_key=None), transport=ScriptTransport([{"content": ""}])).plan(inp, g).summary \
        == FREE_EXPLORE


def test_single_room_gets_everyone():
    g = graph_of(room("R4", "kitchen", 2, 0))
    assert set(rule_plan(explore_input(g), g).mapping.values()) == {"R4"}


room_types = st.sampled_from(["bedroom", "kitchen", "closet", "hallway"])


@st.composite
def graphs(draw):
    n = draw(st.integers(1, 8))
    nodes = [room(f"R{i + 1}", draw(room_types), draw(st.integers(1, 12)), 100 * i) for i in range(n)]
    random.Random(draw(st.integers(0, 1000))).shuffle(nodes)
    return graph_of(*nodes)


@given(graphs(), st.integers(1, 6), st.booleans(), st.booleans())
def test_rule_plan_output_invariants(graph, m, search, no_target):
    robots = [f"r{i}" for i in range(m)]
    if search:
        inp = search_input(graph, robots, ablation=Ablation(no_target=no_target))
    else:
        inp = explore_input(graph, robots)
    out = rule_plan(inp, graph)
    assert set(out.mapping) == set(robots)
    assert set(out.mapping.values()) <= set(graph.nodes)
    cap = -(-m // len(graph.nodes))
    counts = {}
    for r in out.mapping.values():
        counts[r] = counts.get(r, 0) + 1
    assert max(counts.values()) <= cap
    assert isinstance(validate_assignment(list(out.mapping.items()), graph, robots), RoomAssignment)
    assert rule_plan(inp, graph).mapping == out.mapping


def test_validation_messages():
    g = graph_of(room("R1", "kitchen", 2, 0))
    assert isinstance(validate_assignment([("r0", "R1"), ("r1", "R1")], g, ROBOTS), RoomAssignment)
    dup = validate_assignment([("r0", "R1"), ("r1", "R1"), ("r1", "R1")], g, ROBOTS)
    assert "robot r1 assigned twice" in [str(v) for v in dup]
    bad = validate_assignment([("r0", "R9"), ("r1", "R1")], g, ROBOTS)
    assert any("R9" in str(v) for v in bad)
    missing = validate_assignment([("r0", "R1")], g, ROBOTS)
    assert [str(v) for v in missing] == ["robot r1 not assigned"]


def test_parse_response_prefers_fenced_block():
    text = "thinking: ASSIGN r9 R9\n```\nASSIGN r0 R1\nASSIGN r1 R2\n```\nSUMMARY: split up"
    pairs, summary = parse_response(text)
    assert pairs == [("r0", "R1"), ("r1", "R2")]
    assert summary == "split up"


def test_summary_truncated():
    assert len(RoomAssignment({}, "x" * 1000).summary) == SUMMARY_LIMIT


def _endpoint():
    return EndpointConfig(base_url="http://mock.local/v1", api_key="k", retries=2)


def test_llm_plan_returns_valid_reply_verbatim():
    g = graph_of(room("R1", "kitchen", 2, 0), room("R2", "bedroom", 4, 100))
    transport = ScriptTransport([{"content": "ASSIGN r0 R2\nASSIGN r1 R1\nSUMMARY: r0 searches R2"}])
    out = llm_plan(search_input(g), _endpoint(), transport)
    assert out.mapping == {"r0": "R2", "r1": "R1"}
    assert out.summary == "r0 searches R2"
    body = transport.requests[0]
    assert body["temperature"] == 0.2 and body["max_tokens"] == 1000
    assert [m["role"] for m in body["messages"]] == ["system", "user"]


def test_llm_retry_after_malformed_reply():
    g = graph_of(room("R1", "kitchen", 2, 0))
    transport = ScriptTransport([{"fault": "malformed"}, {"content": "ASSIGN r0 R1\nASSIGN r1 R1\nSUMMARY: ok"}])
    planner = LLMPlanner(_endpoint(), transport)
    out = planner.plan(search_input(g), g)
    assert out.mapping == {"r0": "R1", "r1": "R1"}
    assert planner.telemetry.retries == 1
    # the correction turn quotes the rejected reply
    assert transport.requests[1]["messages"][-1]["content"].startswith("Your reply was rejected")


def test_llm_invalid_room_exhausts_retries():
    g = graph_of(room("R1", "kitchen", 2, 0))
    transport = ScriptTransport([{"content": "ASSIGN r0 R7\nASSIGN r1 R7\nSUMMARY: no"}])
    planner = LLMPlanner(_endpoint(), transport)
    with pytest.raises(PlannerUnavailable):
        planner.plan(search_input(g), g)
    assert len(transport.requests) == 3
    assert all("unknown room R7" in e for e in planner.telemetry.errors)


@pytest.mark.parametrize("fault", ["timeout", "http_500"])
def test_transport_faults_become_unavailable(fault):
    g = graph_of(room("R1", "kitchen", 2, 0))
    planner = LLMPlanner(_endpoint(), ScriptTransport([{"fault": fault}]))
    with pytest.raises(PlannerUnavailable):
        planner.plan(search_input(g), g)
    assert len(planner.telemetry.errors) == 3


def test_http_shape_and_auth_header():
    seen = {}

    def handler(request: httpx.Request) -> httpx.Response:
        seen["url"] = str(request.url)
        seen["auth"] = request.headers.get("authorization")
        return httpx.Response(200, json={"choices": [{"message": {"content": "ASSIGN r0 R1\nSUMMARY: s"}}]})

    g = graph_of(room("R1", "kitchen", 2, 0))
    out = llm_plan(search_input(g, robots=["r0"]), _endpoint(), httpx.MockTransport(handler))
    assert out.mapping == {"r0": "R1"}
    assert seen["url"] == "http://mock.local/v1/chat/completions"
    assert seen["auth"] == "Bearer k"


def test_env_configures_endpoint(monkeypatch):
    monkeypatch.setenv("SAGR_API_KEY", "secret")
    monkeypatch.setenv("SAGR_BASE_URL", "http://example.test/v1")
    cfg = EndpointConfig()
    assert cfg.api_key == "secret" and cfg.base_url == "http://example.test/v1"
    assert "secret" not in repr(cfg)


def test_prompt_respects_ablations():
    g = graph_of(room("R1", "kitchen", 2, 0), room("R2", "bedroom", 4, 100))
    full = prompt_text(build_prompt(search_input(g)))
    assert "target room type: bedroom" in full and "previous plan:" in full
    no_target = prompt_text(build_prompt(search_input(g, ablation=Ablation(no_target=True))))
    assert "target room type" not in no_target
    inp = search_input(g, ablation=Ablation(no_summary=True))
    assert "previous plan" not in prompt_text(build_prompt(inp))


def test_input_invariant():
    with pytest.raises(ValueError):
        PlannerInput("", "", Task.SEARCH, None, ROBOTS)
    with pytest.raises(ValueError):
        PlannerInput("", "", Task.EXPLORE, "bedroom", ROBOTS)


def test_script_file_round_trip(tmp_path):
    path = tmp_path / "script.jsonl"
    path.write_text("\n".join(json.dumps(e) for e in [{"fault": "timeout"}, {"content": "x"}]) + "\n")
    assert ScriptTransport.from_file(path).entries[1] == {"content": "x"}


def test_ablation_parse():
    assert Ablation.parse("full") == Ablation()
    assert Ablation.parse("no_target+no_summary").label == "no_summary+no_target"
    with pytest.raises(ValueError):
        Ablation.parse("no_magic")
