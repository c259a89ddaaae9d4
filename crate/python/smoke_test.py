"""Smoke test for the descrec extension module.

Build and install first:
    maturin build --release -m crates/python/Cargo.toml
    pip install --force-reinstall target/wheels/descrec-*.whl
"""

import json
import math
import pathlib
import random
import tempfile

import descrec


def check_prompts():
    p1 = descrec.item_prompt("Baby")
    assert "Baby" in p1 and "{dataset name}" not in p1
    p2 = descrec.preference_prompt(["red rattle", "soft blanket"])
    assert '1. "red rattle"; 2. "soft blanket"' in p2
    assert descrec.fuse_descriptions("Rattle", "A red toy") == "Rattle. A red toy"


def check_encoder():
    a = descrec.stub_encode(["x", "y", "x"], dim=16, seed=3)
    assert len(a) == 3 and len(a[0]) == 16
    assert a[0] == a[2] and a[0] != a[1]
    assert abs(math.fsum(v * v for v in a[0]) - 1.0) < 1e-12


def check_kcore():
    records = [(f"u{u}", f"i{i}", None) for u in range(3) for i in range(3)]
    records.append(("u9", "i0", None))
    kept = descrec.kcore_filter(records, k=3)
    assert len(kept) == 9 and all(u != "u9" for u, _, _ in kept)


def check_metrics():
    ranked = [[0, 1, 2], [2, 1, 0]]
    truth = [[0], [0]]
    assert descrec.recall_at_k(ranked, truth, 1) == 0.5
    expected = (1.0 + 1.0 / math.log2(4)) / 2
    assert abs(descrec.ndcg_at_k(ranked, truth, 3) - expected) < 1e-12


def check_graph(tmp):
    rng = random.Random(0)
    n_users, n_items = 12, 8
    pairs = [(u, i) for u in range(n_users) for i in range(n_items) if rng.random() < 0.4]
    items = descrec.stub_encode([f"item {i}" for i in range(n_items)], dim=8)
    g = descrec.ItemGraph.build(items, pairs, n_users, k_semantic=3, alpha=0.0, k_cooccur=2)
    assert g.n_items == n_items
    semantic = g.edges("semantic")
    assert all(w == 1.0 for _, _, w in semantic)
    assert all(src != dst for src, dst, _ in g.edges("merged"))
    assert len(g.features()) == n_items and len(g.degrees()) == n_items
    path = tmp / "g.graph"
    g.export(str(path))
    assert descrec.import_graph(str(path)) == g.edges()
    bare = descrec.ItemGraph.build(items, pairs, n_users, convolve=False)
    assert bare.features() == items


def check_pipeline(tmp):
    raw = tmp / "raw"
    raw.mkdir()
    rows = []
    meta = []
    for i in range(20):
        meta.append({"item_key": f"i{i:02}", "text_meta": f"product {i}", "image_ref": f"img/{i}.jpg"})
    for u in range(30):
        group = u % 2
        for i in range(group * 10, group * 10 + 10):
            rows.append(f"u{u:02}\ti{i:02}\t{1000 + u * 20 + i}")
    (raw / "interactions.tsv").write_text("\n".join(rows) + "\n")
    (raw / "items.jsonl").write_text("".join(json.dumps(m) + "\n" for m in meta))
    cfg = tmp / "run.toml"
    cfg.write_text(
        'dataset = "Baby"\n'
        'interactions = "raw/interactions.tsv"\n'
        'item_metadata = "raw/items.jsonl"\n'
        'workdir = "work"\n'
        "max_epochs = 5\nembed_dim = 8\nhidden_dim = 16\n"
    )
    with descrec.Pipeline(str(cfg), stub=True) as p:
        try:
            p.run("evaluate")
        except descrec.StageMissingError:
            pass
        else:
            raise AssertionError("evaluate ran before prepare")
        for stage in ["prepare", "describe", "encode", "build-graph", "train", "evaluate"]:
            status, summary = p.run(stage)
            assert status == "completed", (stage, status)
        assert json.loads(summary)["recall"]["20"] >= 0.0
        assert p.run("train")[0] == "up-to-date"
    # the lock is released on exit
    descrec.Pipeline(str(cfg), stub=True).close()


def main():
    with tempfile.TemporaryDirectory() as d:
        tmp = pathlib.Path(d)
        check_prompts()
        check_encoder()
        check_kcore()
        check_metrics()
        check_graph(tmp)
        check_pipeline(tmp)
    print("descrec smoke test: ok")


if __name__ == "__main__":
    main()
