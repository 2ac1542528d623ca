import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from agdh.errors import BadLength, ConfigError, NotInSubgroup, ZeroScalar
from agdh.group_arith import (
    PROD,
    TOY,
    ExpCounter,
    GroupParams,
    decode_element,
    encode_element,
    exp,
    is_element,
    load_params,
    mul,
    parse_params_text,
    random_scalar,
    scalar_inverse,
)

# Independent oracles: exponentiation by repeated multiplication, inversion
# by brute-force search.  Only usable on the tiny group, which is the point.


def slow_exp(base: int, e: int, params: GroupParams) -> int:
    result = 1
    for _ in range(e % params.order):
        result = result * base % params.modulus
    return result


def brute_inverse(s: int, params: GroupParams) -> int:
    for candidate in range(1, params.order):
        if s * candidate % params.order == 1:
            return candidate
    raise AssertionError(f"no inverse for {s}")


TOY_SUBGROUP = sorted(slow_exp(TOY.generator, i, TOY) for i in range(TOY.order))


class TestParams:
    def test_toy_constants(self):
        assert (TOY.modulus, TOY.order, TOY.generator) == (23, 11, 2)
        assert TOY.element_width == 1

    def test_toy_generator_has_order_q(self):
        assert slow_exp(TOY.generator, TOY.order, TOY) == 1
        for d in range(1, TOY.order):
            assert slow_exp(TOY.generator, d, TOY) != 1

    def test_prod_scale(self):
        assert PROD.order.bit_length() >= 160
        assert pow(PROD.generator, PROD.order, PROD.modulus) == 1

    def test_validate_rejects_composite_order(self):
        with pytest.raises(ConfigError):
            GroupParams(23, 10, 2, "bad").validate()

    def test_validate_rejects_wrong_generator_order(self):
        # 5 is not in the order-11 subgroup of Z_23*
        with pytest.raises(ConfigError):
            GroupParams(23, 11, 5, "bad").validate()

    def test_parse_params_roundtrip(self, tmp_path):
        path = tmp_path / "g.params"
        path.write_text("# comment\nname=tiny\np=11\nq=2\ng=10\n")
        params = load_params(str(path))
        assert params == GroupParams(0x11, 2, 0x10, "tiny")

    def test_parse_params_missing_field(self):
        with pytest.raises(ConfigError):
            parse_params_text("p=17\nq=2\n")


class TestRandomScalar:
    def test_deterministic_under_fixed_seed(self):
        a = random_scalar(random.Random(7), TOY)
        b = random_scalar(random.Random(7), TOY)
        assert a == b
        assert 1 <= a <= 10

    def test_exhaustive_range(self):
        rng = random.Random(0)
        seen = {random_scalar(rng, TOY) for _ in range(10_000)}
        assert seen == set(range(1, 11))

    def test_q3_boundary(self):
        tiny = GroupParams(7, 3, 2, "q3").validate()
        rng = random.Random(1)
        assert {random_scalar(rng, tiny) for _ in range(200)} == {1, 2}


class TestExpMul:
    def test_exp_frozen_values(self):
        assert exp(2, 3, TOY) == slow_exp(2, 3, TOY) == 8
        assert exp(2, 5, TOY) == slow_exp(2, 5, TOY) == 9

    def test_exp_zero_exponent(self):
        for x in TOY_SUBGROUP:
            assert exp(x, 0, TOY) == 1

    def test_mul_frozen_values(self):
        assert mul(8, 2, TOY) == 16
        assert mul(16, 16, TOY) == slow_exp(16, 2, TOY) == 3

    def test_mul_identity(self):
        for x in TOY_SUBGROUP:
            assert mul(x, 1, TOY) == x

    def test_counter_counts_only_exp(self):
        counter = ExpCounter()
        exp(2, 3, TOY, counter)
        mul(8, 2, TOY)
        encode_element(9, TOY)
        decode_element(b"\x09", TOY)
        exp(2, 5, TOY, counter)
        assert counter.count == 2

    @given(st.sampled_from(TOY_SUBGROUP),
           st.integers(0, 10), st.integers(0, 10))
    def test_exponent_law(self, x, a, b):
        assert exp(exp(x, a, TOY), b, TOY) == exp(x, a * b % TOY.order, TOY)

    @given(st.sampled_from(TOY_SUBGROUP), st.sampled_from(TOY_SUBGROUP))
    def test_closure(self, x, y):
        assert is_element(mul(x, y, TOY), TOY)


class TestInverse:
    def test_frozen_values(self):
        assert scalar_inverse(4, TOY) == brute_inverse(4, TOY) == 3
        assert scalar_inverse(10, TOY) == brute_inverse(10, TOY) == 10
        assert scalar_inverse(1, TOY) == 1

    def test_zero_rejected(self):
        with pytest.raises(ZeroScalar):
            scalar_inverse(0, TOY)

    def test_exhaustive_against_oracle(self):
        for s in range(1, TOY.order):
            assert scalar_inverse(s, TOY) == brute_inverse(s, TOY)

    def test_inverse_undoes_exp(self):
        g = TOY.generator
        for s in range(1, TOY.order):
            assert exp(exp(g, s, TOY), scalar_inverse(s, TOY), TOY) == g


class TestEncoding:
    def test_roundtrip_toy(self):
        assert encode_element(9, TOY) == b"\x09"
        assert decode_element(b"\x09", TOY) == 9

    def test_zero_not_an_element(self):
        with pytest.raises(NotInSubgroup):
            decode_element(b"\x00", TOY)

    def test_non_subgroup_value_rejected(self):
        # subgroup is exactly {1,2,3,4,6,8,9,12,13,16,18}
        assert TOY_SUBGROUP == [1, 2, 3, 4, 6, 8, 9, 12, 13, 16, 18]
        with pytest.raises(NotInSubgroup):
            decode_element(b"\x05", TOY)

    def test_bad_length(self):
        with pytest.raises(BadLength):
            decode_element(b"\x00\x09", TOY)

    @given(st.sampled_from(TOY_SUBGROUP))
    def test_roundtrip_exhaustive(self, x):
        assert decode_element(encode_element(x, TOY), TOY) == x

    @settings(max_examples=20)
    @given(st.integers(1, 2**159))
    def test_roundtrip_prod(self, e):
        element = pow(PROD.generator, e, PROD.modulus)
        data = encode_element(element, PROD)
        assert len(data) == PROD.element_width == 128
        assert decode_element(data, PROD) == element
