import math

import numpy as np
import pytest

from src import aggregator, client, group
from src.client import AttributeSpec, FeatureVector, Profile
from src.errors import ArgumentError, RangeError, ValidationError
from src.group import GroupElement, Scalar


def _zero_noise(specs):
    return client.attribute_noise_params(specs, 1.0, 1e-6, 1, enabled=False)


class TestAttributeSpec:
    def test_rejects_empty_domain(self):
        with pytest.raises(ArgumentError):
            AttributeSpec(1, "x", 5, 5)

    def test_rejects_negative_price(self):
        with pytest.raises(ArgumentError):
            AttributeSpec(1, "x", 1, 5, price=-1.0)

    def test_sensitivities(self):
        spec = AttributeSpec(1, "income", 1, 100)
        assert spec.sensitivity_first == 99
        assert spec.sensitivity_second == 9999
        assert spec.support_size == 100

    def test_square_bounds_across_zero(self):
        assert AttributeSpec(1, "delta", -3, 2).square_bounds == (0, 9)


class TestExtractFeatures:
    def test_squares(self):
        specs = [AttributeSpec(1, "a", 1, 10), AttributeSpec(2, "b", 1, 10)]
        fv = client.extract_features(Profile(1, (3, 7)), specs)
        assert fv.first_moments == (3, 7)
        assert fv.second_moments == (9, 49)
        assert fv.dimension == 4

    def test_lower_bound_accepted(self, small_spec):
        assert client.extract_features(Profile(1, (1,)), [small_spec]).first_moments == (1,)

    def test_above_domain_names_attribute(self, small_spec):
        with pytest.raises(ValidationError) as err:
            client.extract_features(Profile(1, (11,)), [small_spec])
        assert err.value.attribute == "score"

    def test_wrong_arity(self, small_spec):
        with pytest.raises(ValidationError):
            client.extract_features(Profile(1, (1, 2)), [small_spec])

    def test_sensitivity_out_of_range(self, small_spec):
        with pytest.raises(ValidationError):
            client.validate_profile(Profile(1, (4,), (1.5,)), [small_spec])


class TestObfuscate:
    def test_disabled_noise_is_plain_encoding(self, params64, specs):
        fv = client.extract_features(Profile(1, (40, 12, 33)), specs)
        nf, ns = _zero_noise(specs)
        nfv = client.obfuscate(params64, fv, nf, ns, np.random.default_rng(0))
        assert nfv.first_moments == tuple(Scalar(x) for x in (40, 12, 33))
        assert nfv.second_moments == tuple(Scalar(x * x) for x in (40, 12, 33))

    def test_negative_noisy_value_wraps(self, toy_params):
        nfv = client.apply_noise(toy_params, FeatureVector((5,), (25 % 11,)), (-7,), (0,))
        assert nfv.first_moments == (Scalar(toy_params.order_q - 2),)

    def test_group_too_small(self, toy_params):
        with pytest.raises(RangeError):
            client.apply_noise(toy_params, FeatureVector((5,), (25,)), (0,), (0,))

    def test_needs_params_per_attribute(self, params64, specs):
        fv = client.extract_features(Profile(1, (40, 12, 33)), specs)
        nf, ns = _zero_noise(specs[:1])
        with pytest.raises(ArgumentError):
            client.obfuscate(params64, fv, nf, ns, np.random.default_rng(0))

    def test_noise_is_unbiased(self, params64, small_spec):
        nf, ns = client.attribute_noise_params([small_spec], 1.0, 1e-6, 1)
        fv = client.extract_features(Profile(1, (10,)), [small_spec])
        rng = np.random.default_rng(77)
        decoded = np.array([
            group.decode_signed(params64, client.obfuscate(params64, fv, nf, ns, rng).first_moments[0])
            for _ in range(10_000)
        ])
        standard_error = decoded.std() / math.sqrt(len(decoded))
        assert abs(decoded.mean() - 10) < 5 * standard_error

    def test_epsilon_split_over_channels(self, small_spec):
        nf, ns = client.attribute_noise_params([small_spec], 1.0, 1e-6, 10)
        assert nf[0].alpha == pytest.approx(math.exp(0.5 / 9))
        assert ns[0].alpha == pytest.approx(math.exp(0.5 / 99))


class TestEncrypt:
    def test_zero_share_leaves_plain_power(self, params64):
        nfv = client.NoisyFeatureVector((Scalar(17),), (Scalar(289),))
        pairs = client.encrypt(params64, Scalar(0), b"t", nfv)
        assert pairs[0].c == group.group_pow(params64, params64.generator_g, Scalar(17))
        assert pairs[0].b == group.group_pow(params64, params64.generator_g, Scalar(289))

    def test_toy_ciphertext(self, toy_params, monkeypatch):
        monkeypatch.setattr(client, "hash_to_group", lambda params, tag: GroupElement(8))
        nfv = client.NoisyFeatureVector((Scalar(3),), (Scalar(9),))
        pairs = client.encrypt(toy_params, Scalar(2), b"t", nfv)
        # 4^3 * 8^2 mod 23
        assert pairs[0].c == GroupElement(2)

    def test_tags_change_ciphertexts(self, params64):
        nfv = client.NoisyFeatureVector((Scalar(5),), (Scalar(25),))
        a = client.encrypt(params64, Scalar(12345), b"round-1", nfv)
        b = client.encrypt(params64, Scalar(12345), b"round-2", nfv)
        assert a[0].c != b[0].c

    def test_keys_change_ciphertexts(self, params64):
        nfv = client.NoisyFeatureVector((Scalar(5),), (Scalar(25),))
        a = client.encrypt(params64, Scalar(111), b"round-1", nfv)
        b = client.encrypt(params64, Scalar(222), b"round-1", nfv)
        assert a[0].c != b[0].c

    def test_ciphertexts_are_members(self, params64):
        nfv = client.NoisyFeatureVector((Scalar(5), Scalar(6)), (Scalar(25), Scalar(36)))
        for pair in client.encrypt(params64, Scalar(999), b"r", nfv):
            assert group.is_member(params64, pair.c.value)
            assert group.is_member(params64, pair.b.value)


def test_single_user_round_trip(params64, small_spec):
    ring = group.keygen(params64, 1, np.random.default_rng(4))
    nf, ns = client.attribute_noise_params([small_spec], 1.0, 1e-6, 1)
    sub = client.run_user_pipeline(
        params64, Profile(1, (6,)), [small_spec], ring.user_share(1), b"tag", nf, ns,
        np.random.default_rng(5),
    )
    agg = aggregator.combine(params64, ring.aggregator_share, b"tag", [sub.pairs], 1)
    window = aggregator.DlogWindow(-nf[0].truncation_B, 10 + nf[0].truncation_B)
    assert aggregator.discrete_log(params64, agg.V[0], window) == 6 + sub.noise_first[0]


def test_pipeline_timings(params64, specs):
    ring = group.keygen(params64, 1, np.random.default_rng(4))
    nf, ns = _zero_noise(specs)
    sub = client.run_user_pipeline(
        params64, Profile(9, (50, 8, 40)), specs, ring.user_share(1), b"t", nf, ns,
        np.random.default_rng(0),
    )
    assert sub.user_id == 9
    assert len(sub.pairs) == 3
    assert set(sub.timings) == {"extract", "noise", "encrypt"}
    assert all(t >= 0 for t in sub.timings.values())
    assert sub.noise_first == (0, 0, 0)
