"""Model/dataset persistence, checksums, and fixture generation."""

import json

import numpy as np
import pytest

from mixedquant import (
    BadMagicError,
    BlobSizeError,
    FixtureSpec,
    LabeledSet,
    MiniFloatFormat,
    MissingBlobError,
    Model,
    ModelIOError,
    REFERENCE,
    UnknownLayerKindError,
    evaluate,
    forward,
    fully_connected,
    generate_fixture,
    load_dataset,
    load_model,
    quantize_tensor,
    save_dataset,
    save_model,
    verify_checksums,
    write_checksums,
)


# ── datasets ─────────────────────────────────────────────────────────────────


def test_dataset_round_trip_is_exact(tmp_path, dataset):
    path = tmp_path / "data.bin"
    save_dataset(dataset, path)
    loaded = load_dataset(path)
    assert np.array_equal(loaded.inputs, dataset.inputs)  # float32-representable
    assert np.array_equal(loaded.labels, dataset.labels)
    assert loaded.class_count == dataset.class_count
    assert len(loaded) == len(dataset)


def test_dataset_round_trip_narrows_to_float32(tmp_path):
    wide = LabeledSet(np.array([[1 / 3]]), np.array([0]), 2)
    path = tmp_path / "data.bin"
    save_dataset(wide, path)
    loaded = load_dataset(path)
    assert loaded.inputs[0, 0] == float(np.float32(1 / 3))


def test_labeled_set_validation():
    with pytest.raises(ModelIOError):
        LabeledSet(np.zeros((2, 3)), np.array([0]), 4)
    with pytest.raises(ModelIOError):
        LabeledSet(np.zeros((2, 3)), np.array([0, 4]), 4)
    with pytest.raises(ModelIOError):
        LabeledSet(np.zeros((2, 3)), np.array([0, -1]), 4)


def test_dataset_rejects_bad_magic(tmp_path, dataset):
    path = tmp_path / "data.bin"
    save_dataset(dataset, path)
    raw = bytearray(path.read_bytes())
    raw[:4] = b"NOPE"
    path.write_bytes(bytes(raw))
    with pytest.raises(BadMagicError):
        load_dataset(path)


def test_dataset_rejects_truncation(tmp_path, dataset):
    path = tmp_path / "data.bin"
    save_dataset(dataset, path)
    raw = path.read_bytes()
    path.write_bytes(raw[:-8])
    with pytest.raises(BlobSizeError):
        load_dataset(path)


# ── models ───────────────────────────────────────────────────────────────────


def assert_models_equal(a: Model, b: Model) -> None:
    assert a.input_shape == b.input_shape
    assert [l.kind for l in a.layers] == [l.kind for l in b.layers]
    for la, lb in zip(a.layers, b.layers):
        for attr in ("stride", "pad", "window"):
            assert getattr(la, attr) == getattr(lb, attr)
        for field in ("weights", "bias"):
            ta, tb = getattr(la, field), getattr(lb, field)
            assert (ta is None) == (tb is None)
            if ta is not None:
                assert np.array_equal(ta, tb)


def test_model_round_trip_is_exact(tmp_path, model):
    save_model(model, tmp_path / "m")
    assert_models_equal(load_model(tmp_path / "m"), model)


def test_quantized_model_round_trip_dequantizes(tmp_path, model):
    fmt = MiniFloatFormat(3, 4)
    quantized = {i: quantize_tensor(l.weights, fmt) for i, l in model.weighted_layers()}
    save_model(model, tmp_path / "q", quantized=quantized, metadata={"note": "x"})
    loaded = load_model(tmp_path / "q")
    for idx, q in quantized.items():
        from mixedquant import dequantize

        assert np.array_equal(loaded.layers[idx].weights, dequantize(q))
    manifest = json.loads((tmp_path / "q" / "manifest.json").read_text())
    entry = manifest["layers"][0]
    assert entry["encoding"] == "codes"
    assert entry["weight_format"] == fmt.descriptor()
    assert manifest["metadata"]["note"] == "x"


def test_missing_blob_is_reported(tmp_path, model):
    save_model(model, tmp_path / "m")
    (tmp_path / "m" / "layer0_weights.bin").unlink()
    with pytest.raises(MissingBlobError):
        load_model(tmp_path / "m")


def test_truncated_blob_is_reported(tmp_path, model):
    save_model(model, tmp_path / "m")
    blob = tmp_path / "m" / "layer0_weights.bin"
    blob.write_bytes(blob.read_bytes()[:-4])
    with pytest.raises(BlobSizeError):
        load_model(tmp_path / "m")


def test_unknown_layer_kind_is_reported(tmp_path, model):
    save_model(model, tmp_path / "m")
    manifest_path = tmp_path / "m" / "manifest.json"
    manifest = json.loads(manifest_path.read_text())
    manifest["layers"][1]["kind"] = "batchnorm"
    manifest_path.write_text(json.dumps(manifest))
    with pytest.raises(UnknownLayerKindError):
        load_model(tmp_path / "m")


def test_bad_manifest_is_reported(tmp_path, model):
    save_model(model, tmp_path / "m")
    manifest_path = tmp_path / "m" / "manifest.json"
    manifest = json.loads(manifest_path.read_text())
    manifest["format"] = "something-else"
    manifest_path.write_text(json.dumps(manifest))
    with pytest.raises(BadMagicError):
        load_model(tmp_path / "m")
    manifest_path.write_text("{not json")
    with pytest.raises(ModelIOError):
        load_model(tmp_path / "m")
    with pytest.raises(MissingBlobError):
        load_model(tmp_path / "missing-dir")


# ── checksums ────────────────────────────────────────────────────────────────


def test_checksums_verify_and_catch_tampering(tmp_path, model, dataset):
    save_model(model, tmp_path / "m")
    save_dataset(dataset, tmp_path / "data.bin")
    write_checksums(tmp_path)
    verify_checksums(tmp_path)

    blob = tmp_path / "m" / "layer0_weights.bin"
    raw = bytearray(blob.read_bytes())
    raw[0] ^= 0xFF
    blob.write_bytes(bytes(raw))
    with pytest.raises(ModelIOError, match="mismatch"):
        verify_checksums(tmp_path)

    blob.unlink()
    with pytest.raises(MissingBlobError):
        verify_checksums(tmp_path)


# ── fixture generation ───────────────────────────────────────────────────────


def test_fixture_is_deterministic():
    model_a, data_a = generate_fixture(7)
    model_b, data_b = generate_fixture(7)
    assert_models_equal(model_a, model_b)
    assert np.array_equal(data_a.inputs, data_b.inputs)
    assert np.array_equal(data_a.labels, data_b.labels)

    model_c, data_c = generate_fixture(8)
    assert not np.array_equal(model_a.layers[0].weights, model_c.layers[0].weights)
    assert not np.array_equal(data_a.inputs, data_c.inputs)


def test_fixture_labels_come_from_the_model(model, dataset):
    assert evaluate(model, dataset, REFERENCE) == 1.0
    logits = forward(model, dataset.inputs)
    assert np.array_equal(np.argmax(logits, axis=1), dataset.labels)


def test_fixture_classes_are_balanced(dataset):
    counts = np.bincount(dataset.labels, minlength=dataset.class_count)
    assert counts.min() >= 25
    assert counts.sum() == 256


def test_fixture_shape_is_pinned(model, dataset):
    assert model.input_shape == (1, 16, 16)
    kinds = [l.kind for l in model.layers]
    assert kinds == ["conv2d", "relu", "maxpool", "flatten", "fc", "fc"]
    assert model.layers[0].weights.shape == (8, 1, 5, 5)
    assert model.output_shape == (10,)
    assert dataset.inputs.shape == (256, 1, 16, 16)


def test_fixture_rejects_degenerate_specs():
    with pytest.raises(ValueError):
        generate_fixture(1, FixtureSpec(classes=1))
    with pytest.raises(ValueError):
        generate_fixture(1, FixtureSpec(samples=0))
    with pytest.raises(ValueError):
        generate_fixture(1, FixtureSpec(input_hw=18))  # not a multiple of the cell


def test_fixture_tensors_survive_float32_narrowing(model, dataset):
    for _, layer in model.weighted_layers():
        assert np.array_equal(layer.weights.astype(np.float32), layer.weights)
    assert np.array_equal(dataset.inputs.astype(np.float32), dataset.inputs)
