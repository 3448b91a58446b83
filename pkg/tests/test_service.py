import json
import os
import signal
import subprocess
import sys
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

from lqdetect import checkpoint as ckio
from lqdetect import dataset as D
from lqdetect import scoring, service
from conftest import TOY_CONFIG


SCORE_CFG = scoring.ScoreConfig(k1=0, k2=1, threshold=0.3, n_samples=1, seed=2)


@pytest.fixture(scope="module")
def served(tmp_path_factory, toy_checkpoint):
    root = tmp_path_factory.mktemp("srv")
    corpus = D.gen_clean_corpus(12, seed=17, shape=(1, 8, 8))
    items = [{"id": i, "image": img, "label": "clean", "spec": None}
             for i, img in corpus]
    data_dir = root / "data"
    D.write_dataset(data_dir, items)
    ckpt_path = root / "model.hvae"
    ckio.save(toy_checkpoint, ckpt_path)
    manifest = root / "review.json"
    app = service.build_app(ckpt_path, data_dir, SCORE_CFG, manifest)
    return {"app": app, "client": TestClient(app), "manifest": manifest,
            "ckpt": ckpt_path, "data": data_dir}


def test_images_sorted_by_score_desc(served):
    r = served["client"].get("/api/images")
    assert r.status_code == 200
    records = r.json()["records"]
    scores = [rec["score"] for rec in records]
    assert scores == sorted(scores, reverse=True)
    assert len(records) == 12


def test_min_score_filter_exact(served):
    client = served["client"]
    all_records = client.get("/api/images").json()["records"]
    t = all_records[5]["score"]
    got = client.get("/api/images", params={"min_score": t}).json()["records"]
    assert {r["image_id"] for r in got} == {
        r["image_id"] for r in all_records if r["score"] >= t}


def test_pagination(served):
    client = served["client"]
    page = client.get("/api/images", params={"limit": 4, "offset": 2}).json()
    assert len(page["records"]) == 4
    full = client.get("/api/images").json()["records"]
    assert [r["image_id"] for r in page["records"]] == \
        [r["image_id"] for r in full[2:6]]


def test_get_single_record_fields(served):
    client = served["client"]
    rid = client.get("/api/images").json()["records"][0]["image_id"]
    rec = client.get(f"/api/images/{rid}").json()
    assert set(rec) >= {"image_id", "score", "k_used", "m", "contributions",
                        "decision", "history"}
    assert len(rec["contributions"]) == TOY_CONFIG.num_layers
    assert rec["k_used"] in (SCORE_CFG.k1, SCORE_CFG.k2)


def test_unknown_image_404(served):
    assert served["client"].get("/api/images/nope").status_code == 404


def test_decision_roundtrip_and_history(served):
    client = served["client"]
    rid = client.get("/api/images").json()["records"][1]["image_id"]
    r1 = client.post(f"/api/images/{rid}/decision",
                     json={"decision": "accept"})
    assert r1.status_code == 200 and r1.json()["decision"] == "accept"
    r2 = client.post(f"/api/images/{rid}/decision",
                     json={"decision": "reject", "note": "blocky"})
    assert r2.json()["decision"] == "reject"
    assert len(r2.json()["history"]) == 2
    times = [h["decided_at"] for h in r2.json()["history"]]
    assert times[0] < times[1]


def test_decision_invalid_rejected(served):
    client = served["client"]
    rid = client.get("/api/images").json()["records"][2]["image_id"]
    assert client.post(f"/api/images/{rid}/decision",
                       json={"decision": "maybe"}).status_code == 422


def test_decision_persists_across_restart(served):
    client = served["client"]
    rid = client.get("/api/images").json()["records"][3]["image_id"]
    client.post(f"/api/images/{rid}/decision", json={"decision": "accept"})
    app2 = service.build_app(served["ckpt"], served["data"], SCORE_CFG,
                             served["manifest"])
    rec = TestClient(app2).get(f"/api/images/{rid}").json()
    assert rec["decision"] == "accept"


def test_scores_match_recompute_under_stored_config(served, toy_checkpoint):
    client = served["client"]
    layout = D.load_dataset(served["data"])
    rec = client.get("/api/images").json()["records"][0]
    again = scoring.score(toy_checkpoint, layout.image(rec["image_id"]),
                          SCORE_CFG, image_id=rec["image_id"])
    assert rec["score"] == again.score
    assert rec["k_used"] == again.k_used


def test_threshold_roundtrip_and_summary(served):
    client = served["client"]
    assert client.put("/api/session/threshold",
                      json={"threshold": 0.5}).json()["threshold"] == 0.5
    assert client.get("/api/session/threshold").json()["threshold"] == 0.5
    summary = client.get("/api/session/summary").json()
    assert summary["threshold"] == 0.5
    counts = summary["counts"]
    assert counts["pending"] + counts["accept"] + counts["reject"] == 12
    pending_above = sum(
        1 for r in client.get("/api/images").json()["records"]
        if r["decision"] == "pending" and r["score"] >= 0.5)
    assert summary["pending_above_threshold"] == pending_above


def test_png_endpoints(served):
    client = served["client"]
    rid = client.get("/api/images").json()["records"][0]["image_id"]
    for name, width_tiles in (("original", 1), ("clue", 1), ("strip", 4)):
        r = client.get(f"/api/images/{rid}/{name}.png")
        assert r.status_code == 200
        assert r.headers["content-type"] == "image/png"
        import io
        from PIL import Image
        img = Image.open(io.BytesIO(r.content))
        assert img.size == (8 * width_tiles, 8)


def test_clue_matches_scored_reconstruction(served, toy_checkpoint):
    from lqdetect import hvae
    from lqdetect.util import make_rng
    client = served["client"]
    rec = client.get("/api/images").json()["records"][4]
    layout = D.load_dataset(served["data"])
    rng = make_rng(SCORE_CFG.seed, rec["image_id"], "skl")
    state = hvae.partial_reconstruct(toy_checkpoint, layout.image(rec["image_id"]),
                                     rec["k_used"], rng, SCORE_CFG.n_samples)
    got = client.get(f"/api/images/{rec['image_id']}/clue.png").content
    assert got == D.png_bytes(state.mean)


def test_mismatched_config_refused(served):
    other = scoring.ScoreConfig(k1=0, k2=2, threshold=0.1, seed=2)
    with pytest.raises(service.ServiceError):
        service.build_app(served["ckpt"], served["data"], other, served["manifest"])


def test_corrupt_manifest_refused(served, tmp_path):
    bad = tmp_path / "broken.json"
    bad.write_text('{"version": 1, "records": [')
    with pytest.raises(service.ServiceError):
        service.build_app(served["ckpt"], served["data"], SCORE_CFG, bad)


def test_score_cache_reused(served, tmp_path):
    # a fresh manifest path with the same checkpoint+config hits the cache
    t0 = time.time()
    service.build_app(served["ckpt"], served["data"], SCORE_CFG,
                      served["manifest"].parent / "review2.json")
    assert time.time() - t0 < 5.0
    caches = list(served["manifest"].parent.glob("scorecache-*.json"))
    assert len(caches) == 1


KILL_SCRIPT = """
import sys, time
from lqdetect import service

store = service.ReviewStore(
    sys.argv[1], "ck", __import__("lqdetect.scoring", fromlist=["x"]).ScoreConfig(0, 1, 0.3),
    [{"image_id": f"img{i}", "score": float(-i), "k_used": 0, "m": 0.0,
      "contributions": [0.0], "decision": "pending", "decided_at": None,
      "note": None, "history": []} for i in range(50)])
store.persist()
print("ready", flush=True)
i = 0
while True:
    store.decide(f"img{i % 50}", "accept" if i % 2 else "reject", "x" * 200)
    i += 1
"""


def test_kill_injection_never_corrupts_manifest(tmp_path):
    env = dict(os.environ)
    env["PYTHONPATH"] = os.pathsep.join(
        [os.path.join(os.path.dirname(os.path.dirname(__file__)), "src"),
         env.get("PYTHONPATH", "")])
    for trial in range(4):
        manifest = tmp_path / f"m{trial}.json"
        proc = subprocess.Popen([sys.executable, "-c", KILL_SCRIPT, str(manifest)],
                                stdout=subprocess.PIPE, env=env)
        assert proc.stdout.readline().strip() == b"ready"
        time.sleep(0.05 + 0.1 * trial)
        proc.send_signal(signal.SIGKILL)
        proc.wait()
        manifest_data = service.ReviewStore.load_manifest(manifest)
        assert isinstance(manifest_data["records"], list)
        json.dumps(manifest_data)  # fully serializable, not truncated
