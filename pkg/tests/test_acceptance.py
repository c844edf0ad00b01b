"""Acceptance suite.

One test per acceptance criterion, each at its stated tolerance, each
printing one PASS/FAIL line (run with -s to stream them). The desk-scale
ablation emits its full report and logs directional observations without
asserting them.
"""

import json
import time
from contextlib import contextmanager

import numpy as np

from molfuse import autodiff as ad
from molfuse import cli, datasets, report, training
from molfuse.encoder import EncoderConfig, EncoderParams, encode
from molfuse.fusion import FusionConfig, FusionParams, fuse, predict
from molfuse.graphs import RbfConfig, build_graph
from molfuse.qm9 import TargetId
from molfuse.synthetic import leak_dataset, synthetic_corpus, synthetic_descriptors, write_corpus
from molfuse.textfeat import EMBED_DIM, ProjectionHead, project
from molfuse.training import TrainConfig

from test_graphs import geom

TINY_RBF = RbfConfig(cutoff=5.0, n_centers=16, gamma=10.0)
TINY_ENC = EncoderConfig(n_hidden=16, n_rbf=16, n_iterations=1)


@contextmanager
def criterion(name):
    started = time.time()
    try:
        yield
    except BaseException:
        print(f"[FAIL] {name} ({time.time() - started:.1f}s)")
        raise
    print(f"[PASS] {name} ({time.time() - started:.1f}s)")


def _fixture_molecules(n, seed=2024, max_atoms=9):
    return synthetic_corpus(n, seed=seed, max_atoms=max_atoms)


def _pipeline(graph, text_vec, encoder_params, fusion_params, projection):
    g = encode(graph, encoder_params)
    t_p = project(ad.Tensor(text_vec), projection)
    return predict(fuse(g, t_p, fusion_params).f, fusion_params)


# ---------------------------------------------------------------- 1. gradients

def test_gradient_integrity_full_pipeline():
    with criterion("gradient integrity: graph -> encoder -> fusion -> head, rel err < 1e-4"):
        started = time.time()
        mol = geom(["C", "H", "O"], [[0.0, 0, 0], [1.1, 0, 0], [0.3, 1.4, 0]])
        rbf = RbfConfig(cutoff=5.0, n_centers=4, gamma=5.0)
        graph = build_graph(mol, rbf)
        encoder_params = EncoderParams.init(EncoderConfig(4, 4, 1), seed=1)
        fusion_params = FusionParams.init(FusionConfig(n=4, d=2), seed=2)
        projection = ProjectionHead.init(d=2, seed=3)
        rng = np.random.default_rng(4)
        text = rng.normal(size=EMBED_DIM)

        stores = [("encoder", encoder_params.tensors), ("fusion", fusion_params.tensors)]
        worst = 0.0
        for _, store in stores:
            for name in store:
                def f(x, _store=store, _name=name):
                    orig = _store[_name]
                    _store[_name] = x
                    try:
                        return _pipeline(graph, text, encoder_params, fusion_params, projection)
                    finally:
                        _store[_name] = orig
                err = ad.grad_check(f, store[name], h=1e-5)
                worst = max(worst, err)
        for attr in ("weights", "bias"):
            def f(x, _attr=attr):
                orig = getattr(projection, _attr)
                setattr(projection, _attr, x)
                try:
                    return _pipeline(graph, text, encoder_params, fusion_params, projection)
                finally:
                    setattr(projection, _attr, orig)
            worst = max(worst, ad.grad_check(f, getattr(projection, attr), h=1e-5))
        elapsed = time.time() - started
        assert worst < 1e-4, f"max rel err {worst}"
        assert elapsed < 10.0, f"took {elapsed:.1f}s (budget 10s)"


# ---------------------------------------------------------------- 2. symmetry

def test_symmetry_suite():
    with criterion("symmetry: 100 translations + 100 rotations + 100 permutations, rel diff <= 1e-9"):
        started = time.time()
        molecules = _fixture_molecules(20)
        encoder_params = EncoderParams.init(TINY_ENC, seed=5)
        fusion_params = FusionParams.init(FusionConfig(n=16, d=4), seed=6)
        projection = ProjectionHead.init(d=4, seed=7)
        rng = np.random.default_rng(8)

        def embed_and_predict(mol):
            graph = build_graph(mol, TINY_RBF)
            text = np.zeros(EMBED_DIM)
            g = encode(graph, encoder_params)
            y = predict(fuse(g, project(ad.Tensor(text), projection), fusion_params).f,
                        fusion_params)
            return g.data, y.item()

        base = [embed_and_predict(m) for m in molecules]

        def check(mol, ref):
            g, y = embed_and_predict(mol)
            g0, y0 = ref
            assert np.linalg.norm(g - g0) / np.linalg.norm(g0) <= 1e-9
            assert abs(y - y0) / max(1e-12, abs(y0)) <= 1e-9

        for i in range(100):  # translations
            mol = molecules[i % 20]
            offset = rng.uniform(-20, 20, size=3)
            check(geom(mol.elements, mol.coords + offset), base[i % 20])
        for i in range(100):  # rotations
            mol = molecules[i % 20]
            q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
            check(geom(mol.elements, mol.coords @ q.T), base[i % 20])
        for i in range(100):  # permutations
            mol = molecules[i % 20]
            perm = rng.permutation(mol.n_atoms)
            check(geom([mol.elements[k] for k in perm], mol.coords[perm]), base[i % 20])
        elapsed = time.time() - started
        assert elapsed < 60.0, f"took {elapsed:.1f}s (budget 60s)"


# ---------------------------------------------------------------- 3. additivity

def test_disconnected_additivity():
    with criterion("disconnected additivity: g(two far copies) = 2 g(single) within 1e-9, 20 fixtures"):
        params = EncoderParams.init(TINY_ENC, seed=9)
        for mol in _fixture_molecules(20, seed=31):
            single = encode(build_graph(mol, TINY_RBF), params).data
            double = geom(list(mol.elements) * 2,
                          np.vstack([mol.coords, mol.coords + np.array([80.0, 0.0, 0.0])]))
            both = encode(build_graph(double, TINY_RBF), params).data
            assert np.linalg.norm(both - 2 * single) / np.linalg.norm(both) <= 1e-9


# ---------------------------------------------------------------- 4. fusion algebra

def test_fusion_algebra():
    with criterion("fusion algebra: convexity on 1e4 inputs; saturation 1e-15; neutral gate 1e-12"):
        rng = np.random.default_rng(10)
        checked = 0
        for block in range(10):
            params = FusionParams.init(FusionConfig(n=6, d=3), seed=block)
            G = ad.Tensor(rng.normal(scale=3.0, size=(1000, 6)))
            T = ad.Tensor(rng.normal(scale=3.0, size=(1000, 3)))
            out = fuse(G, T, params)
            lo = np.minimum(out.g_tilde.data, out.t_tilde.data)
            hi = np.maximum(out.g_tilde.data, out.t_tilde.data)
            assert np.all(out.f.data >= lo - 1e-12) and np.all(out.f.data <= hi + 1e-12)
            checked += G.data.shape[0]
        assert checked == 10_000

        params = FusionParams.init(FusionConfig(n=8, d=4), seed=11)
        g = ad.Tensor(rng.normal(size=8))
        t_p = ad.Tensor(rng.normal(size=4))
        params.tensors["gate_w"].data[...] = 0.0
        params.tensors["gate_b"].data[...] = 40.0
        out = fuse(g, t_p, params)
        assert np.abs(out.f.data - out.g_tilde.data).max() <= 1e-15
        params.tensors["gate_b"].data[...] = -40.0
        out = fuse(g, t_p, params)
        assert np.abs(out.f.data - out.t_tilde.data).max() <= 1e-15
        params.tensors["gate_b"].data[...] = 0.0
        out = fuse(g, t_p, params)
        assert np.abs(out.gate.data - 0.5).max() == 0.0  # sigma(0) = 0.5 exactly
        assert np.abs(out.f.data - (out.g_tilde.data + out.t_tilde.data) / 2).max() <= 1e-12


# ---------------------------------------------------------------- 5. overfit

def test_overfit_capacity():
    with criterion("overfit: 64 molecules, homo, geometry-only tiny profile, train MAE <= 5% std"):
        started = time.time()
        mols = synthetic_corpus(64, seed=11)
        entries = datasets.entries_from_descriptors(
            [(m, synthetic_descriptors(m)) for m in mols])
        samples = datasets.make_samples(entries, TINY_RBF, "featurizer")
        std = float(np.std([s.y(TargetId.HOMO) for s in samples]))
        cfg = TrainConfig(target=TargetId.HOMO, modality="geometry_only",
                          epochs=1000, batch_size=64, folds=3, seed=0, n_runs=1,
                          encoder=TINY_ENC, rbf=TINY_RBF)
        result = training.fit(cfg, samples, run_seed=0)
        elapsed = time.time() - started
        # pinned after first run: 0.0153 std at 1000 epochs, 0.0091 at 2000
        assert result.train_mae <= 0.05 * std, f"train MAE {result.train_mae} vs std {std}"
        assert elapsed < 600.0, f"took {elapsed:.1f}s (budget 10 min)"


# ---------------------------------------------------------------- 6. text-utility oracle

def test_text_utility_oracle():
    with criterion("text-utility oracle: multimodal MAE <= 0.2 x geometry MAE on the leaked target"):
        pairs = leak_dataset(150, seed=21, noise=0.01)
        entries = datasets.entries_from_descriptors(pairs)
        samples = datasets.make_samples(entries, TINY_RBF, "featurizer")
        base = dict(target=TargetId.HOMO, epochs=200, batch_size=64, folds=3,
                    seed=0, n_runs=1, encoder=TINY_ENC, rbf=TINY_RBF)
        _, geometry_mae = training.train(TrainConfig(modality="geometry_only", **base), samples)
        _, multimodal_mae = training.train(TrainConfig(modality="multimodal", **base), samples)
        pct = training.percent_change(geometry_mae, multimodal_mae)
        print(f"  leak run: geometry {geometry_mae:.4f}, multimodal {multimodal_mae:.4f}, "
              f"change {pct:+.1f}%")
        assert multimodal_mae <= 0.2 * geometry_mae
        assert pct >= 80.0


# ---------------------------------------------------------------- 7. constant text

def test_constant_text_degeneracy():
    with criterion("constant text: equal g implies bitwise-equal multimodal prediction"):
        encoder_params = EncoderParams.init(TINY_ENC, seed=12)
        fusion_params = FusionParams.init(FusionConfig(n=16, d=4), seed=13)
        projection = ProjectionHead.init(d=4, seed=14)
        text = np.full(EMBED_DIM, 0.25)  # identical for every molecule

        mol = _fixture_molecules(1, seed=41)[0]
        twin = geom(mol.elements, mol.coords.copy())
        ys = []
        for m in (mol, twin):
            graph = build_graph(m, TINY_RBF)
            y = _pipeline(graph, text, encoder_params, fusion_params, projection)
            ys.append(y.data.tobytes())
        assert ys[0] == ys[1]


# ---------------------------------------------------------------- 8. determinism

def test_cli_determinism(tmp_path, monkeypatch):
    with criterion("determinism: repeated ablate emits byte-identical CSV"):
        from molfuse.pubchem import PubChemClient
        from test_pubchem import synthetic_transport
        from conftest import FakeClock

        corpus = synthetic_corpus(10, seed=55)
        xyz = tmp_path / "xyz"
        write_corpus(xyz, corpus)
        transport = synthetic_transport(corpus)

        def factory(cache_dir, rate):
            clock = FakeClock()
            return PubChemClient(cache_dir, rate_limit=rate, transport=transport,
                                 time_fn=clock.time, sleep_fn=clock.sleep)

        monkeypatch.setattr(cli, "client_factory", factory)
        assert cli.main(["build-dataset", "--xyz-dir", str(xyz),
                         "--cache-dir", str(tmp_path / "cache"),
                         "--out", str(tmp_path / "data")]) == 0
        config = {
            "dataset": str(tmp_path / "data" / "dataset.jsonl"),
            "targets": ["homo"], "epochs": 3, "batch_size": 8, "folds": 2, "n_runs": 1,
            "encoder": {"n_hidden": 8, "n_rbf": 8, "n_iterations": 1},
            "rbf": {"cutoff": 5.0, "n_centers": 8, "gamma": 10.0}, "text_dim": 4,
        }
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps(config), encoding="utf-8")
        assert cli.main(["ablate", "--config", str(cfg_path), "--out", str(tmp_path / "a")]) == 0
        assert cli.main(["ablate", "--config", str(cfg_path), "--out", str(tmp_path / "b")]) == 0
        csv_a = (tmp_path / "a" / "report.csv").read_bytes()
        csv_b = (tmp_path / "b" / "report.csv").read_bytes()
        assert csv_a == csv_b


# ---------------------------------------------------------------- 9. report fidelity

def test_report_fidelity():
    with criterion('report fidelity: renders "+20.36% ↑" and "−14.60% ↓" exactly'):
        up = training.percent_change(1.0, 0.7964)
        down = training.percent_change(1.0, 1.1460)
        assert report.format_percent_change(up) == "+20.36% ↑"
        assert report.format_percent_change(down) == "−14.60% ↓"
        rows = [
            training.AblationRow("homo", "geometry_only", 0, 0, 1.0),
            training.AblationRow("homo", "multimodal", 0, 0, 0.7964),
            training.AblationRow("alpha", "geometry_only", 0, 0, 1.0),
            training.AblationRow("alpha", "multimodal", 0, 0, 1.1460),
        ]
        summaries = report.summaries_from_rows(rows)
        table = report.render_summary_table(summaries)
        assert "+20.36% ↑" in table and "−14.60% ↓" in table


# ---------------------------------------------------------------- 10. desk-scale ablation

def test_desk_scale_directional_ablation(tmp_path):
    with criterion("desk-scale ablation: 1000 molecules, homo+gap, 3 seeds, both modalities"):
        mols = synthetic_corpus(1000, seed=77, max_atoms=9)
        entries = datasets.entries_from_descriptors(
            [(m, synthetic_descriptors(m)) for m in mols])
        samples = datasets.make_samples(entries, TINY_RBF, "featurizer")
        cfg = TrainConfig(target=TargetId.HOMO, epochs=4, batch_size=64, folds=3,
                          seed=0, n_runs=3, encoder=TINY_ENC, rbf=TINY_RBF)
        result = training.run_ablation(samples, [TargetId.HOMO, TargetId.GAP], cfg)

        csv_path = tmp_path / "desk_report.csv"
        training.write_rows_csv(csv_path, result.rows)
        assert csv_path.exists()
        # full report: 2 targets x 2 modalities x 3 seeds x 3 folds
        assert len(result.rows) == 2 * 2 * 3 * 3
        assert report.verify_summaries(result.rows, result.summaries) == []

        # directional observation only: subset scale does not guarantee the
        # published signs (both were improvements there), so log, not assert
        published_direction = {"homo": "+", "gap": "+"}
        for name, summary in result.summaries.items():
            sign = "+" if summary.percent_change > 0 else "-"
            agrees = "agrees with" if sign == published_direction[name] else "differs from"
            print(f"  observation: {name} change {summary.percent_change:+.2f}% "
                  f"({agrees} the published direction)")
