"""Acceptance checks for the primary components.

Each test prints one ``PASS`` or ``FAIL`` line and then asserts.  Run with
``pytest tests/test_acceptance.py -v -s`` or directly as a script.
"""

import json
import sys
import time

import numpy as np
import pytest

from owleyes import numcore as nc
from owleyes.checkpoint import dumps, load_checkpoint, save_checkpoint
from owleyes.corpus import make_toy_corpus
from owleyes.explorer import explore, load_app_graph
from owleyes.imaging import load_image
from owleyes.localize import Region, grad_cam, heatmap_peak
from owleyes.manifest import DatasetManifest
from owleyes.model import CANONICAL, DESK, TrainHyper, build_model, evaluate, train
from owleyes.report import emit_report_html, emit_report_json, run_detect_batch
from owleyes.synth import IssueCategory, generate_dataset
from oracles import (
    GapLinearToy,
    bfs_distances,
    conv2d_reference,
    maxpool_reference,
    sampled_model_gradcheck,
)


def verdict(capsys, number, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {detail}"
    with capsys.disabled():
        print("\n" + line)
    assert ok, line


def max_rel(a, b):
    return float(np.max(nc.relative_error(a, b, floor=1e-6)))


def snapshot(d):
    return {p.relative_to(d).as_posix(): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}


# ------------------------------------------------------------ 1 gradients


def layer_errors(seed):
    """Worst relative error of each analytic layer gradient vs central differences."""
    rng = np.random.default_rng(seed)
    out = {}

    x = rng.standard_normal((2, 3, 4, 5))
    p = nc.ConvParams(rng.standard_normal((2, 3, 3, 3)), rng.standard_normal(2))
    r = rng.standard_normal((2, 2, 4, 5))
    dx, dk, db = nc.conv2d_grad(x, p, r)
    out["conv"] = max(
        max_rel(dx, nc.finite_difference_oracle(lambda v: np.sum(nc.conv2d(v, p) * r), x)),
        max_rel(dk, nc.finite_difference_oracle(lambda k: np.sum(nc.conv2d(x, nc.ConvParams(k, p.bias)) * r), p.kernels)),
        max_rel(db, nc.finite_difference_oracle(lambda b: np.sum(nc.conv2d(x, nc.ConvParams(p.kernels, b)) * r), p.bias)),
    )

    x = rng.standard_normal((3, 2, 3, 2))
    bp = nc.BNParams(rng.uniform(0.5, 1.5, 2), rng.standard_normal(2), rng.standard_normal(2), rng.uniform(0.5, 2, 2))
    r = rng.standard_normal(x.shape)
    for mode in ("train", "infer"):
        def f(v, g=bp.gamma, b=bp.beta):
            return np.sum(nc.batchnorm(v, nc.BNParams(g, b, bp.running_mean, bp.running_var), mode)[0] * r)

        dx, dg, db = nc.batchnorm_grad(x, bp, r, mode)
        out[f"bn_{mode}"] = max(
            max_rel(dx, nc.finite_difference_oracle(f, x)),
            max_rel(dg, nc.finite_difference_oracle(lambda g: f(x, g=g), bp.gamma)),
            max_rel(db, nc.finite_difference_oracle(lambda b: f(x, b=b), bp.beta)),
        )

    x = rng.standard_normal((2, 2, 3, 3))
    x = np.where(np.abs(x) < 1e-4, 1e-3, x)
    r = rng.standard_normal(x.shape)
    out["relu"] = max_rel(nc.relu_grad(x, r), nc.finite_difference_oracle(lambda v: np.sum(nc.relu(v) * r), x))

    x = rng.standard_normal((2, 2, 4, 6))
    r = rng.standard_normal((2, 2, 2, 3))
    _, ctx = nc.maxpool2x2(x)
    out["pool"] = max_rel(nc.maxpool2x2_grad(ctx, r),
                          nc.finite_difference_oracle(lambda v: np.sum(nc.maxpool2x2(v)[0] * r), x))

    x = rng.standard_normal(5)
    fp = nc.FCParams(rng.standard_normal((3, 5)), rng.standard_normal(3))
    r = rng.standard_normal(3)
    dx, dw, db = nc.fully_connected_grad(x, fp, r)
    out["fc"] = max(
        max_rel(dx, nc.finite_difference_oracle(lambda v: np.sum(nc.fully_connected(v, fp) * r), x)),
        max_rel(dw, nc.finite_difference_oracle(lambda w: np.sum(nc.fully_connected(x, nc.FCParams(w, fp.bias)) * r), fp.weights)),
        max_rel(db, nc.finite_difference_oracle(lambda b: np.sum(nc.fully_connected(x, nc.FCParams(fp.weights, b)) * r), fp.bias)),
    )

    z = rng.standard_normal(3)
    y = int(rng.integers(0, 3))
    _, _, dz = nc.softmax_cross_entropy(z, y)
    out["softmax_ce"] = max_rel(dz, nc.finite_difference_oracle(lambda v: nc.softmax_cross_entropy(v, y)[1], z))
    return out


def test_criterion_1_gradients(capsys):
    start = time.perf_counter()
    worst = {}
    for seed in range(20):
        for k, v in layer_errors(seed).items():
            worst[k] = max(worst.get(k, 0.0), v)
    layers_ok = all(v <= 1e-4 for v in worst.values())

    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, (2,) + DESK.input_dims)
    conv_biases = tuple(f"conv{i}.bias" for i in range(1, 13))
    m = build_model(DESK, 7, np.float64)
    e_train, _ = sampled_model_gradcheck(m, x, np.array([0, 1]), count=120, seed=2, skip=conv_biases)
    m = build_model(DESK, 8, np.float64)
    for bp in m.bns:
        bp.running_mean[...] = rng.normal(0, 0.3, bp.channels)
        bp.running_var[...] = rng.uniform(0.5, 2.0, bp.channels)
    e_infer, names = sampled_model_gradcheck(m, x, np.array([1, 0]), count=120, seed=5, mode="infer")
    elapsed = time.perf_counter() - start
    covered = len({n.split(".")[0] for n in names})
    e2e_ok = len(e_train) >= 100 and len(e_infer) >= 100 and covered == 28 \
        and max(e_train.max(), e_infer.max()) <= 1e-3

    detail = (", ".join(f"{k} {v:.1e}" for k, v in worst.items())
              + f"; end-to-end {len(e_train)}+{len(e_infer)} params over {covered} layers, worst {max(e_train.max(), e_infer.max()):.1e}"
              + f"; {elapsed:.0f}s")
    verdict(capsys, 1, layers_ok and e2e_ok and elapsed < 120, detail)


# ------------------------------------------------------------ 2 architecture


def test_criterion_2_architecture(capsys):
    m = build_model(CANONICAL, 0)
    convs = [cp.kernels.shape for cp in m.convs]
    pools = sum(n.startswith("pool") for n in m.layer_names())
    fcs = [fp.out_dim for fp in m.fcs]
    flat = m.fcs[0].weights.shape[1]
    ok = (len(convs) == 12 and all(s[2:] == (3, 3) for s in convs) and pools == 6
          and fcs == [4096, 1024, 128, 2] and flat == 10752)
    verdict(capsys, 2, ok, f"{len(convs)} conv 3x3, {pools} pools, fc {fcs}, flatten {flat}")


# ------------------------------------------------------------ 3 conv/pool vs loops


def test_criterion_3_reference_loops(capsys):
    rng = np.random.default_rng(33)
    worst_conv = worst_pool = 0.0
    argmax_ok = True
    trials = 100
    for _ in range(trials):
        n, c, o = (int(v) for v in rng.integers(1, 4, 3))
        h, w = 2 * int(rng.integers(1, 5)), 2 * int(rng.integers(1, 5))
        x = rng.standard_normal((n, c, h, w))
        k, b = rng.standard_normal((o, c, 3, 3)), rng.standard_normal(o)
        worst_conv = max(worst_conv, float(np.abs(nc.conv2d(x, nc.ConvParams(k, b)) - conv2d_reference(x, k, b)).max()))
        y, ctx = nc.maxpool2x2(x)
        ref, idx = maxpool_reference(x)
        worst_pool = max(worst_pool, float(np.abs(y - ref).max()))
        argmax_ok &= np.array_equal(ctx.argmax_index, idx)
    ok = worst_conv <= 1e-12 and worst_pool <= 1e-12 and argmax_ok
    verdict(capsys, 3, ok, f"{trials} tensors, conv max diff {worst_conv:.1e}, pool max diff {worst_pool:.1e}")


# ------------------------------------------------------------ 4 synthesis


def test_criterion_4_synthesis(capsys, tmp_path):
    corpus = tmp_path / "corpus"
    make_toy_corpus(corpus, 40, seed=4)
    a = generate_dataset(corpus, tmp_path / "a", 500, master_seed=17, workers=1)
    b = generate_dataset(corpus, tmp_path / "b", 500, master_seed=17, workers=4)
    again = generate_dataset(corpus, tmp_path / "c", 500, master_seed=17, workers=1)

    bugs = [r for r in a.rows if r.label == "bug"]
    cats = {r.category for r in bugs}
    contract_ok = bounds_ok = True
    for r in bugs:
        src = load_image(corpus / r.source)
        out = load_image(a.resolve(r))
        h, w = src.shape[:2]
        l, t, rr, bb = r.region
        bounds_ok &= 0 <= l < rr <= w and 0 <= t < bb <= h
        if r.category != IssueCategory.BLURRED_SCREEN.value:
            mask = np.ones((h, w), dtype=bool)
            mask[t:bb, l:rr] = False
            contract_ok &= np.array_equal(src[mask], out[mask])
    parallel_ok = snapshot(tmp_path / "a") == snapshot(tmp_path / "b")
    repeat_ok = snapshot(tmp_path / "a") == snapshot(tmp_path / "c")
    ok = len(bugs) == 500 and cats == {c.value for c in IssueCategory} and contract_ok and bounds_ok \
        and parallel_ok and repeat_ok
    verdict(capsys, 4, ok, f"{len(bugs)} samples over {len(cats)} categories, outside-region intact {contract_ok}, "
                           f"regions in bounds {bounds_ok}, repeat identical {repeat_ok}, parallel identical {parallel_ok}")


# ------------------------------------------------------------ 5 training


def test_criterion_5_training(capsys, tmp_path):
    make_toy_corpus(tmp_path / "corpus", 40, seed=21)
    data = generate_dataset(tmp_path / "corpus", tmp_path / "data", 100, ["BlurredScreen"], master_seed=5, workers=1)
    start = time.perf_counter()
    model, hist = train(build_model(DESK, 0), data, TrainHyper(epochs=30, seed=0),
                        on_epoch=lambda epoch, h: h.accuracy[-1] >= 0.95)
    elapsed = time.perf_counter() - start
    acc = evaluate(model, data).accuracy
    loss = np.asarray(hist.loss)
    finite = bool(np.all(np.isfinite(loss)))
    slope = np.polyfit(np.arange(len(loss)), loss, 1)[0] if len(loss) > 1 else -1.0
    ok = (len(data) == 200 and finite and loss[-1] < loss[0] and slope < 0 and acc >= 0.95
          and len(loss) <= 30 and elapsed < 600)
    verdict(capsys, 5, ok, f"{len(data)} samples, {len(loss)} epochs, train accuracy {acc:.3f}, "
                           f"loss {loss[0]:.3f}->{loss[-1]:.3f}, {elapsed:.0f}s")


# ------------------------------------------------------------ 6 localization


def test_criterion_6_localization(capsys, tmp_path):
    worst = 0.0
    for seed in range(5):
        toy = GapLinearToy(12, 9, seed=seed)
        img = np.random.default_rng(seed).integers(0, 256, (12, 9, 3), dtype=np.uint8)
        for target in (0, 1):
            ref = toy.analytic_map(img, target)
            worst = max(worst, float(np.abs(grad_cam(toy, img, target).values - ref / ref.max()).max()))

    make_toy_corpus(tmp_path / "corpus", 60, seed=11)
    train_set = generate_dataset(tmp_path / "corpus", tmp_path / "train", 150, ["MissingImage"],
                                 master_seed=1, workers=1)
    test_set = generate_dataset(tmp_path / "corpus", tmp_path / "test", 60, ["MissingImage"],
                                master_seed=2, workers=1)
    model, _ = train(build_model(DESK, 0), train_set, TrainHyper(epochs=20, lr=0.01, seed=0))
    bugs = [r for r in test_set.rows if r.label == "bug"]
    hits = 0
    for r in bugs:
        hm = grad_cam(model, load_image(test_set.resolve(r)))
        hits += (not hm.zero_saliency) and Region(*r.region, empty=False).contains(*heatmap_peak(hm))
    pointing = hits / len(bugs)
    ok = worst <= 1e-6 and len(bugs) >= 50 and pointing >= 0.70
    verdict(capsys, 6, ok, f"GAP-linear max diff {worst:.1e}; pointing accuracy {pointing:.2f} on {len(bugs)} samples")


# ------------------------------------------------------------ 7 exploration


def graph_json(edges, start):
    ids = sorted(set(edges) | {d for outs in edges.values() for d in outs} | {start})
    return json.dumps({
        "start": start,
        "screens": {s: {"screenshot": f"{s}.png"} for s in ids},
        "edges": {s: [{"action": f"tap_{d}", "to": d} for d in outs] for s, outs in edges.items()},
    })


def test_criterion_7_exploration(capsys):
    fixtures = [
        ({"A": ["B", "C"], "B": ["D"]}, "A", 4, ["A", "B", "C", "D"], ["A", "B", "D", "C"]),
        ({"A": ["B", "C"], "B": ["A", "D"], "C": ["D", "E"], "D": ["F"], "E": ["F"], "F": ["A"]}, "A", 10,
         ["A", "B", "C", "D", "E", "F"], ["A", "B", "D", "F", "C", "E"]),
        ({"S": ["X", "Y", "Z"], "X": ["X1", "X2"], "Y": ["Y1"], "U": ["S"]}, "S", 10,
         ["S", "X", "Y", "Z", "X1", "X2", "Y1"], ["S", "X", "X1", "X2", "Y", "Y1", "Z"]),
    ]
    fixtures_ok = all(
        explore(load_app_graph(graph_json(e, s)), "bfs", n).visited == bfs
        and explore(load_app_graph(graph_json(e, s)), "dfs", n).visited == dfs
        for e, s, n, bfs, dfs in fixtures)

    rng = np.random.default_rng(77)
    graphs = 100
    monotone_ok = True
    for _ in range(graphs):
        n = int(rng.integers(1, 30))
        ids = [f"s{i}" for i in range(n)]
        edges = {s: [ids[int(j)] for j in rng.integers(0, n, int(rng.integers(0, 4)))] for s in ids}
        dist = bfs_distances(edges, ids[0])
        visited = explore(load_app_graph(graph_json(edges, ids[0])), "bfs", n).visited
        d = [dist[s] for s in visited]
        monotone_ok &= d == sorted(d) and set(visited) == set(dist)
    verdict(capsys, 7, fixtures_ok and monotone_ok,
            f"{len(fixtures)} hand-traced fixtures {fixtures_ok}, BFS monotone on {graphs} random graphs {monotone_ok}")


# ------------------------------------------------------------ 8 serialization


def test_criterion_8_serialization(capsys, tmp_path):
    model = build_model(DESK, 3)
    rng = np.random.default_rng(3)
    for bp in model.bns:
        bp.running_mean[...] = rng.standard_normal(bp.channels)
        bp.running_var[...] = rng.uniform(0.5, 2, bp.channels)
    path = save_checkpoint(model, tmp_path / "m.owl")
    back = load_checkpoint(path)
    ckpt_ok = dumps(back) == path.read_bytes() and all(
        na == nb and a.tobytes() == b.tobytes() for (na, a), (nb, b) in zip(model.named_arrays(), back.named_arrays()))

    make_toy_corpus(tmp_path / "corpus", 6, seed=8)
    data = generate_dataset(tmp_path / "corpus", tmp_path / "data", 6, master_seed=9, workers=1)
    manifest_path = tmp_path / "data/manifest.jsonl"
    read = DatasetManifest.read(manifest_path)
    manifest_ok = read.rows == data.rows and read.header == data.header \
        and read.dumps() == manifest_path.read_text(encoding="utf-8")

    outs = []
    for run in ("x", "y"):
        doc = run_detect_batch(path, tmp_path / "data", threshold=0.5)
        outs.append((emit_report_json(doc, tmp_path / run / "r.json").read_bytes(),
                     emit_report_html(doc, tmp_path / run / "r.html").read_bytes()))
    report_ok = outs[0] == outs[1] and json.loads(outs[0][0])["num_screens"] == len(data)
    verdict(capsys, 8, ckpt_ok and manifest_ok and report_ok,
            f"checkpoint bit-identical {ckpt_ok}, manifest lossless {manifest_ok}, report bytes stable {report_ok}")


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-s", "-p", "no:cacheprovider"]))
