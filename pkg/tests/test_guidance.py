import numpy as np
import pytest

from textsr.guidance import (DEFAULT_LAMBDA_S, GuidanceSpec, build_negative_bundle,
                             guided_noise, negative_captions)
from textsr.priors import HashingTextEncoder, PriorBundle, empty_bundle


class CountingDenoiser:
    """Returns a fixed response per bundle identity; counts evaluations."""

    def __init__(self, responses):
        self.responses = responses
        self.calls = 0

    def __call__(self, z_t, lr_latent, t, priors, f_lr=None):
        self.calls += 1
        return self.responses[id(priors)]


def make_pair(shape=(2, 3, 3), seed=0):
    rng = np.random.default_rng(seed)
    pos = empty_bundle(4)
    neg = empty_bundle(4)
    eps_pos = rng.standard_normal(shape)
    eps_neg = rng.standard_normal(shape)
    return pos, neg, eps_pos, eps_neg


def test_default_guidance_scale_is_seven():
    assert GuidanceSpec().lambda_s == 7.0
    assert DEFAULT_LAMBDA_S == 7.0


def test_lambda_zero_returns_positive_prediction_exactly():
    pos, neg, eps_pos, eps_neg = make_pair()
    d = CountingDenoiser({id(pos): eps_pos, id(neg): eps_neg})
    spec = GuidanceSpec(mode="multi", lambda_s=0.0)
    out = guided_noise(d, None, None, 0, pos, spec, neg=neg)
    np.testing.assert_array_equal(out, eps_pos)


def test_identical_negative_bundle_collapses():
    pos, _, eps_pos, _ = make_pair(seed=1)
    d = CountingDenoiser({id(pos): eps_pos})
    spec = GuidanceSpec(mode="multi", lambda_s=7.0)
    out = guided_noise(d, None, None, 0, pos, spec, neg=pos)
    np.testing.assert_array_equal(out, eps_pos)


def test_scalar_case_matches_paper_arithmetic():
    # eps_hat 1.0, eps_neg 0.5, lambda 7 -> 1.0 + 7 * 0.5 = 4.5
    pos, neg, _, _ = make_pair(seed=2)
    d = CountingDenoiser({id(pos): np.array([[1.0]]), id(neg): np.array([[0.5]])})
    spec = GuidanceSpec(mode="multi", lambda_s=7.0)
    out = guided_noise(d, None, None, 0, pos, spec, neg=neg)
    assert out.item() == pytest.approx(4.5, rel=1e-15)


def test_affine_identity_against_scalar_loop():
    # eps_tilde must equal (1 + lambda) * pos - lambda * neg elementwise
    rng = np.random.default_rng(3)
    for lam in (0.0, 1.0, 7.0, 3.7):
        pos, neg, eps_pos, eps_neg = make_pair(seed=int(lam * 10) + 5)
        d = CountingDenoiser({id(pos): eps_pos, id(neg): eps_neg})
        out = guided_noise(d, None, None, 0, pos,
                           GuidanceSpec(mode="multi", lambda_s=lam), neg=neg)
        expected = np.empty_like(eps_pos)
        flat_p, flat_n, flat_e = eps_pos.ravel(), eps_neg.ravel(), expected.ravel()
        for i in range(flat_p.size):
            flat_e[i] = (1.0 + lam) * flat_p[i] - lam * flat_n[i]
        np.testing.assert_allclose(out, expected, rtol=1e-12)


def test_call_count_contract():
    pos, neg, eps_pos, eps_neg = make_pair(seed=4)
    for mode, expected_calls in (("none", 1), ("single", 2), ("multi", 2)):
        d = CountingDenoiser({id(pos): eps_pos, id(neg): eps_neg})
        spec = GuidanceSpec(mode=mode, lambda_s=2.0)
        guided_noise(d, None, None, 0, pos, spec, neg=None if mode == "none" else neg)
        assert d.calls == expected_calls, mode


def test_mode_none_ignores_negative_bundle():
    pos, neg, eps_pos, eps_neg = make_pair(seed=5)
    d = CountingDenoiser({id(pos): eps_pos, id(neg): eps_neg})
    out = guided_noise(d, None, None, 0, pos, GuidanceSpec(mode="none"), neg=neg)
    np.testing.assert_array_equal(out, eps_pos)
    assert d.calls == 1


def test_missing_negative_bundle_raises():
    pos, _, eps_pos, _ = make_pair(seed=6)
    d = CountingDenoiser({id(pos): eps_pos})
    with pytest.raises(ValueError):
        guided_noise(d, None, None, 0, pos, GuidanceSpec(mode="multi"))


def test_single_mode_equals_multi_with_same_text(tiny_model):
    cfg = tiny_model.config
    from helpers import activate_model
    activate_model(tiny_model, seed=60)
    enc = HashingTextEncoder(dim=cfg.text_dim)
    text = "generic artefact suppression prompt"
    single = GuidanceSpec(mode="single", lambda_s=3.0, neg_global=text)
    multi = GuidanceSpec(mode="multi", lambda_s=3.0, neg_global=text,
                         neg_lf=[text], neg_hf=[text])
    rng = np.random.default_rng(7)
    z = rng.standard_normal((cfg.latent_channels, 4, 4))
    lr = rng.standard_normal(z.shape)
    pos = empty_bundle(cfg.text_dim)
    out_single = guided_noise(tiny_model, z, lr, 0, pos, single,
                              neg=build_negative_bundle(single, enc))
    out_multi = guided_noise(tiny_model, z, lr, 0, pos, multi,
                             neg=build_negative_bundle(multi, enc))
    np.testing.assert_array_equal(out_single, out_multi)


def test_negative_captions_structure():
    assert negative_captions(GuidanceSpec(mode="none")) is None
    single = negative_captions(GuidanceSpec(mode="single", neg_global="oops"))
    assert single.global_caption == "oops"
    assert single.lf_captions == ["oops"] and single.hf_captions == ["oops"]
    multi = negative_captions(GuidanceSpec(mode="multi", neg_global="g",
                                           neg_lf=["a", "b"], neg_hf=["c"]))
    assert multi.lf_captions == ["a", "b"]
    assert multi.hf_captions == ["c", ""]  # padded to equal length


def test_spec_validation():
    with pytest.raises(ValueError):
        GuidanceSpec(mode="both")
    with pytest.raises(ValueError):
        GuidanceSpec(lambda_s=-1.0)
    with pytest.raises(ValueError):
        GuidanceSpec(lambda_s=float("nan"))


def test_non_finite_denoiser_output_rejected():
    pos = empty_bundle(4)
    d = CountingDenoiser({id(pos): np.array([np.inf])})
    with pytest.raises(FloatingPointError):
        guided_noise(d, None, None, 0, pos, GuidanceSpec(mode="none"))
