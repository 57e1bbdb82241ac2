import hashlib

import numpy as np
import pytest

from textsr.priors import (CaptionSet, HashingTextEncoder, PatchFeatureEncoder,
                           PriorBundle, ReplayImageEncoder, ReplayTextEncoder,
                           collate_bundles, empty_bundle, encode_caption_set,
                           encode_global, encode_hf, encode_lf,
                           encode_lr_features, record_image_tokens,
                           record_text_embedding, write_replay_records)


def independent_hash_embedding(text: str, dim: int) -> np.ndarray:
    """Re-derivation of the documented bag-of-token hashing rule."""
    v = np.zeros(dim)
    for token in text.split():
        digest = hashlib.sha256(token.encode("utf-8")).digest()
        idx = int.from_bytes(digest[:8], "little") % dim
        sign_digest = hashlib.sha256(b"sign" + token.encode("utf-8")).digest()
        sign = 1.0 if int.from_bytes(sign_digest[:8], "little") & 1 else -1.0
        v[idx] += sign
    norm = np.linalg.norm(v)
    return v / norm if norm > 0 else v


def test_empty_caption_is_zero_vector():
    enc = HashingTextEncoder(dim=16)
    np.testing.assert_array_equal(enc.encode(""), np.zeros(16))


def test_encoder_deterministic():
    enc = HashingTextEncoder()
    a = encode_global("a large red upright circle", enc)
    b = encode_global("a large red upright circle", enc)
    np.testing.assert_array_equal(a, b)


def test_encoder_matches_independent_hash_rule():
    enc = HashingTextEncoder(dim=64)
    for text in ("red circle", "red circle.", "striped texture of crisp lines",
                 "None None None"):
        np.testing.assert_allclose(enc.encode(text),
                                   independent_hash_embedding(text, 64),
                                   rtol=0, atol=1e-15)
    # punctuation changes the token, hence the vector
    assert np.any(enc.encode("red circle") != enc.encode("red circle."))


def test_encoder_order_insensitive():
    enc = HashingTextEncoder()
    np.testing.assert_array_equal(enc.encode("red circle"), enc.encode("circle red"))


def test_encode_lf_rowwise_and_empty():
    enc = HashingTextEncoder(dim=32)
    assert encode_lf([], enc).shape == (0, 32)
    mat = encode_lf(["a", "b"], enc)
    np.testing.assert_array_equal(mat[0], encode_global("a", enc))
    np.testing.assert_array_equal(mat[1], encode_global("b", enc))
    corrupted = encode_lf(["a", "None"], enc)
    np.testing.assert_array_equal(corrupted[1], encode_global("None", enc))


def test_encode_hf_mirrors_lf():
    enc = HashingTextEncoder(dim=32)
    assert encode_hf([], enc).shape == (0, 32)
    mat = encode_hf(["x y", "z"], enc)
    np.testing.assert_array_equal(mat[0], encode_global("x y", enc))
    corrupted = encode_hf(["None", "z"], enc)
    np.testing.assert_array_equal(corrupted[0], encode_global("None", enc))


def test_caption_set_requires_aligned_lists():
    with pytest.raises(ValueError):
        CaptionSet(global_caption="g", lf_captions=["a"], hf_captions=[])


def test_bundle_validation_and_padding():
    enc = HashingTextEncoder(dim=8)
    caps = CaptionSet("global", ["one", "two"], ["t one", "t two"])
    bundle = encode_caption_set(caps, enc)
    assert bundle.n == 2
    padded = bundle.padded(5)
    padded.validate()
    assert padded.n == 5
    assert not padded.mask[2:].any()
    np.testing.assert_array_equal(padded.E_lf[2:], 0.0)
    with pytest.raises(ValueError):
        PriorBundle(e_g=np.zeros(4), E_lf=np.ones((1, 4)), E_hf=np.ones((1, 4)),
                    mask=np.zeros(1, dtype=bool)).validate()


def test_collate_pads_to_max():
    enc = HashingTextEncoder(dim=8)
    b1 = encode_caption_set(CaptionSet("g", ["a"], ["b"]), enc)
    b2 = empty_bundle(8)
    e_g, E_lf, E_hf, mask = collate_bundles([b1, b2])
    assert e_g.shape == (2, 8)
    assert E_lf.shape == (2, 1, 8) and E_hf.shape == (2, 1, 8)
    assert mask.tolist() == [[True], [False]]


def test_patch_encoder_token_count_and_determinism():
    enc = PatchFeatureEncoder(patch_size=4, dim=12, seed=3)
    img = np.random.default_rng(0).random((16, 16, 3))
    tokens = encode_lr_features(img, enc)
    assert tokens.tokens.shape == (16, 12)
    np.testing.assert_array_equal(tokens.tokens, enc.encode(img).tokens)


def test_patch_encoder_zero_image_zero_tokens():
    enc = PatchFeatureEncoder(patch_size=4, dim=8)
    tokens = enc.encode(np.zeros((8, 8, 3)))
    np.testing.assert_array_equal(tokens.tokens, 0.0)


def test_patch_encoder_size_checks():
    enc = PatchFeatureEncoder(patch_size=4, dim=8, expected_size=(16, 16))
    with pytest.raises(ValueError):
        enc.encode(np.zeros((12, 12, 3)))
    with pytest.raises(ValueError):
        PatchFeatureEncoder(patch_size=5, dim=8).encode(np.zeros((16, 16, 3)))


def test_replay_encoders_round_trip(tmp_path):
    text_enc = HashingTextEncoder(dim=16)
    img_enc = PatchFeatureEncoder(patch_size=4, dim=6, seed=1)
    img = np.random.default_rng(5).random((8, 8, 3))
    texts = [("a scene", "global"), ("a red circle", "lf"), ("smooth surface", "hf")]
    records = [record_text_embedding(text, kind, text_enc) for text, kind in texts]
    records.append(record_image_tokens(img, img_enc))
    path = tmp_path / "replay.jsonl"
    write_replay_records(path, records)

    replay_text = ReplayTextEncoder(path, dim=16)
    for text, _ in texts:
        np.testing.assert_allclose(replay_text.encode(text), text_enc.encode(text))
    replay_img = ReplayImageEncoder(path)
    np.testing.assert_allclose(replay_img.encode(img).tokens, img_enc.encode(img).tokens)
    with pytest.raises(KeyError):
        replay_text.encode("never recorded")


def test_replay_encoder_substitutable_in_bundle_encoding(tmp_path):
    reference = HashingTextEncoder(dim=16)
    caps = CaptionSet("a plain gray background with 1 object near the center",
                      ["a small red upright circle"],
                      ["smooth solid surface finish and soft even edges"])
    records = [record_text_embedding(caps.global_caption, "global", reference)]
    records += [record_text_embedding(c, "lf", reference) for c in caps.lf_captions]
    records += [record_text_embedding(c, "hf", reference) for c in caps.hf_captions]
    path = tmp_path / "replay.jsonl"
    write_replay_records(path, records)

    direct = encode_caption_set(caps, reference)
    replayed = encode_caption_set(caps, ReplayTextEncoder(path, dim=16))
    np.testing.assert_array_equal(direct.e_g, replayed.e_g)
    np.testing.assert_array_equal(direct.E_lf, replayed.E_lf)
    np.testing.assert_array_equal(direct.E_hf, replayed.E_hf)
