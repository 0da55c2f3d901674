import json

import numpy as np
import pytest
from PIL import Image

from lvx_extract.cli import main
from lvx_extract.extract import (ExtractionError, ExtractionSpec, ImageInput,
                                 extract, extract_support)
from lvx_extract.perturb import (Perturbation, apply_perturbation,
                                 parse_perturbation)

# interchange consumer: validates the file contract end to end
from lvx.embeddings import load_embeddings

MODEL_ARGS = dict(model="resnet18", weights="none")


@pytest.fixture(scope="module")
def images(tmp_path_factory):
    """Ten small random RGB images."""
    root = tmp_path_factory.mktemp("imgs")
    rng = np.random.default_rng(3)
    paths = []
    for i in range(10):
        arr = rng.integers(0, 256, (32, 32, 3), dtype=np.uint8)
        p = root / f"img{i}.png"
        Image.fromarray(arr).save(p)
        paths.append(str(p))
    return paths


def _inputs(paths, label=None):
    return [ImageInput(path=p, id=f"im{i}", label=label)
            for i, p in enumerate(paths)]


class TestPerturbationParsing:
    def test_kinds(self):
        assert parse_perturbation("none") == Perturbation()
        assert parse_perturbation("gaussian:0.1") == \
            Perturbation(kind="gaussian", sigma=0.1)
        assert parse_perturbation("cutout:1") == \
            Perturbation(kind="cutout", n_holes=1)

    def test_zero_sigma_is_none(self):
        assert parse_perturbation("gaussian:0") == Perturbation()
        assert parse_perturbation("cutout:0") == Perturbation()

    def test_malformed(self):
        with pytest.raises(ValueError):
            parse_perturbation("blur:3")
        with pytest.raises(ValueError):
            parse_perturbation("gaussian")


class TestApplyPerturbation:
    def test_none_returns_input_object(self):
        img = np.zeros((8, 8, 3))
        rng = np.random.default_rng(0)
        assert apply_perturbation(img, Perturbation(), rng) is img

    def test_gaussian_stays_in_range(self):
        img = np.full((8, 8, 3), 0.5)
        out = apply_perturbation(img, Perturbation(kind="gaussian", sigma=0.5),
                                 np.random.default_rng(1))
        assert out.min() >= 0.0 and out.max() <= 1.0
        assert not np.array_equal(out, img)

    def test_cutout_zeroes_a_square(self):
        img = np.ones((16, 16, 3))
        out = apply_perturbation(img, Perturbation(kind="cutout", n_holes=1),
                                 np.random.default_rng(2))
        assert (out == 0).any()
        assert (out == 1).any()


class TestExtract:
    def test_loads_through_engine_store(self, images, tmp_path):
        out = tmp_path / "emb.jsonl"
        spec = ExtractionSpec(**MODEL_ARGS, inputs=_inputs(images, "dog"),
                              seed=5, out=str(out))
        assert extract(spec) == 10
        store = load_embeddings(str(out))
        assert len(store) == 10
        dims = {len(e.vector) for e in store.items()}
        assert dims == {512}
        assert all(e.label == "dog" for e in store.items())

    def test_meta_header(self, images, tmp_path):
        out = tmp_path / "emb.jsonl"
        extract(ExtractionSpec(**MODEL_ARGS, inputs=_inputs(images[:2]),
                               seed=5, out=str(out)))
        first = json.loads(out.read_text().splitlines()[0])
        assert first["id"] == "__meta__"
        assert first["model"] == "resnet18"
        assert first["perturbation"] == "none"
        assert first["seed"] == 5
        assert first["dim"] == 512

    def test_sigma_zero_byte_identical_to_none(self, images, tmp_path):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        extract(ExtractionSpec(**MODEL_ARGS, inputs=_inputs(images), seed=5,
                               perturbation=parse_perturbation("none"),
                               out=str(a)))
        extract(ExtractionSpec(**MODEL_ARGS, inputs=_inputs(images), seed=5,
                               perturbation=parse_perturbation("gaussian:0"),
                               out=str(b)))
        assert a.read_bytes() == b.read_bytes()

    def test_seeded_gaussian_reproducible(self, images, tmp_path):
        outs = []
        for name in ("a.jsonl", "b.jsonl"):
            out = tmp_path / name
            extract(ExtractionSpec(
                **MODEL_ARGS, inputs=_inputs(images), seed=5,
                perturbation=parse_perturbation("gaussian:0.1"),
                out=str(out)))
            outs.append(out.read_bytes())
        assert outs[0] == outs[1]

    def test_gaussian_changes_output(self, images, tmp_path):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        extract(ExtractionSpec(**MODEL_ARGS, inputs=_inputs(images[:2]),
                               seed=5, out=str(a)))
        extract(ExtractionSpec(**MODEL_ARGS, inputs=_inputs(images[:2]),
                               seed=5,
                               perturbation=parse_perturbation("gaussian:0.1"),
                               out=str(b)))
        assert a.read_bytes() != b.read_bytes()

    def test_unreadable_image_skipped(self, images, tmp_path):
        bad = tmp_path / "bad.png"
        bad.write_text("not an image")
        inputs = _inputs(images[:2]) + [ImageInput(str(bad), "bad")]
        out = tmp_path / "emb.jsonl"
        n = extract(ExtractionSpec(**MODEL_ARGS, inputs=inputs, seed=5,
                                   out=str(out)))
        assert n == 2
        assert len(load_embeddings(str(out))) == 2

    def test_zero_images(self, tmp_path):
        out = tmp_path / "emb.jsonl"
        n = extract(ExtractionSpec(**MODEL_ARGS, inputs=[], seed=5,
                                   out=str(out)))
        assert n == 0
        assert len(load_embeddings(str(out))) == 0

    def test_unknown_model_aborts(self, tmp_path):
        with pytest.raises(ExtractionError, match="unknown torchvision"):
            extract(ExtractionSpec(model="not_a_model", weights="none",
                                   out=str(tmp_path / "x.jsonl")))


class TestExtractSupport:
    def _tree(self, tmp_path):
        tree = {"name": "dog", "kind": "root", "children": [
            {"name": "ear"}, {"name": "tail"}]}
        p = tmp_path / "tree.json"
        p.write_text(json.dumps(tree))
        return p

    def test_fills_support_arrays(self, images, tmp_path):
        tree_path = self._tree(tmp_path)
        manifest = tmp_path / "manifest.json"
        manifest.write_text(json.dumps(
            {"ear": images[:5], "tail": images[5:]}))
        out = tmp_path / "support.jsonl"
        tree_out = tmp_path / "tree-out.json"
        spec = ExtractionSpec(**MODEL_ARGS, seed=5, out=str(out))
        count, warnings = extract_support(str(tree_path), str(manifest),
                                          spec, str(tree_out))
        assert count == 10 and warnings == []
        tree = json.loads(tree_out.read_text())
        assert tree["children"][0]["support"] == \
            [f"ear:{k}" for k in range(5)]
        assert tree["children"][1]["support"] == \
            [f"tail:{k}" for k in range(5)]
        store = load_embeddings(str(out))
        assert {e.label for e in store.items()} == {"ear", "tail"}

    def test_missing_node_warns(self, images, tmp_path):
        tree_path = self._tree(tmp_path)
        manifest = tmp_path / "manifest.json"
        manifest.write_text(json.dumps({"ear": images[:2]}))
        spec = ExtractionSpec(**MODEL_ARGS, seed=5,
                              out=str(tmp_path / "s.jsonl"))
        count, warnings = extract_support(str(tree_path), str(manifest),
                                          spec, str(tmp_path / "t.json"))
        assert count == 2
        assert any("'tail'" in w for w in warnings)

    def test_oversized_node_warns(self, images, tmp_path):
        tree_path = self._tree(tmp_path)
        manifest = tmp_path / "manifest.json"
        manifest.write_text(json.dumps(
            {"ear": (images * 4)[:31], "tail": images[:1]}))
        spec = ExtractionSpec(**MODEL_ARGS, seed=5,
                              out=str(tmp_path / "s.jsonl"))
        count, warnings = extract_support(str(tree_path), str(manifest),
                                          spec, str(tmp_path / "t.json"))
        assert count == 32
        assert any("advisory bound" in w for w in warnings)


class TestCli:
    def test_extract_via_cli(self, images, tmp_path):
        manifest = tmp_path / "inputs.json"
        manifest.write_text(json.dumps(
            [{"path": p, "id": f"im{i}", "label": "dog"}
             for i, p in enumerate(images)]))
        out = tmp_path / "emb.jsonl"
        assert main(["--model", "resnet18", "--weights", "none",
                     "--inputs", str(manifest), "--perturb", "gaussian:0.1",
                     "--seed", "7", "--out", str(out)]) == 0
        assert len(load_embeddings(str(out))) == 10

    def test_missing_inputs_is_error(self, tmp_path):
        assert main(["--out", str(tmp_path / "x.jsonl")]) == 2
