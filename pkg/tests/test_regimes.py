import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from regimeterm.regimes import (
    CtmcGenerator,
    GeneratorError,
    ReducibleChain,
    kronecker_sum,
    stationary_distribution,
    transition_matrix,
)


def gen2(a, b, labels=("L", "H")):
    return CtmcGenerator(q=[[-a, a], [b, -b]], labels=labels)


class TestTransitionMatrix:
    def test_zero_horizon_is_identity(self):
        tm = transition_matrix(gen2(0.7, 0.3), 0.0)
        assert np.array_equal(tm.p, np.eye(2))

    def test_symmetric_two_state_closed_form(self):
        # unit intensities over one year: P = [[(1+e^-2)/2, (1-e^-2)/2], ...]
        tm = transition_matrix(gen2(1.0, 1.0), 1.0)
        stay = (1 + np.exp(-2.0)) / 2
        move = (1 - np.exp(-2.0)) / 2
        assert np.allclose(tm.p, [[stay, move], [move, stay]], atol=1e-14)

    def test_semigroup_property(self):
        g = gen2(0.9, 0.4)
        p1 = transition_matrix(g, 0.3).p
        p2 = transition_matrix(g, 1.1).p
        p12 = transition_matrix(g, 1.4).p
        assert np.abs(p1 @ p2 - p12).max() < 1e-10

    def test_negative_horizon_rejected(self):
        with pytest.raises(GeneratorError):
            transition_matrix(gen2(1.0, 1.0), -0.1)


class TestKroneckerSum:
    def test_zero_generators(self):
        z = CtmcGenerator(q=np.zeros((2, 2)), labels=("a", "b"))
        joint = kronecker_sum(z, z)
        assert np.array_equal(joint.q, np.zeros((4, 4)))

    def test_exponential_factorizes(self):
        qr = gen2(0.4, 0.6)
        qc = gen2(0.3, 0.9, labels=("E", "C"))
        joint = kronecker_sum(qr, qc)
        for delta in (0.1, 0.7, 3.0):
            lhs = transition_matrix(joint, delta).p
            rhs = np.kron(transition_matrix(qr, delta).p, transition_matrix(qc, delta).p)
            assert np.abs(lhs - rhs).max() < 1e-10

    def test_result_is_valid_generator(self):
        joint = kronecker_sum(gen2(0.5, 0.8), gen2(0.2, 0.9, labels=("E", "C")))
        assert joint.q.shape == (4, 4)
        assert np.abs(joint.q.sum(axis=1)).max() < 1e-12
        assert joint.labels == ("L:E", "L:C", "H:E", "H:C")


class TestStationaryDistribution:
    def test_symmetric_chain(self):
        pi = stationary_distribution(gen2(0.7, 0.7))
        assert np.allclose(pi, [0.5, 0.5], atol=1e-12)

    def test_hand_solved_two_state(self):
        pi = stationary_distribution(CtmcGenerator(q=[[-1.0, 1.0], [2.0, -2.0]], labels=("a", "b")))
        assert np.allclose(pi, [2 / 3, 1 / 3], atol=1e-12)

    def test_invariant_under_transition(self):
        g = gen2(0.4, 1.3)
        pi = stationary_distribution(g)
        assert np.abs(pi @ transition_matrix(g, 1.0).p - pi).max() < 1e-10

    def test_reducible_chain_rejected(self):
        g = CtmcGenerator(q=[[0.0, 0.0], [1.0, -1.0]], labels=("a", "b"))
        with pytest.raises(ReducibleChain):
            stationary_distribution(g)


class TestValidation:
    def test_negative_off_diagonal_rejected(self):
        with pytest.raises(GeneratorError):
            CtmcGenerator(q=[[0.5, -0.5], [1.0, -1.0]], labels=("a", "b"))

    def test_nonzero_row_sum_rejected(self):
        with pytest.raises(GeneratorError):
            CtmcGenerator(q=[[-1.0, 0.5], [1.0, -1.0]], labels=("a", "b"))

    def test_label_count_must_match(self):
        with pytest.raises(GeneratorError):
            CtmcGenerator(q=np.zeros((2, 2)), labels=("a",))


@settings(max_examples=40, deadline=None)
@given(
    a=st.floats(0.0, 5.0),
    b=st.floats(0.0, 5.0),
    c=st.floats(0.0, 5.0),
    delta=st.floats(0.0, 4.0),
)
def test_transition_matrices_are_stochastic(a, b, c, delta):
    q = np.array([[-(a + b), a, b], [c, -c, 0.0], [a, 0.0, -a]])
    g = CtmcGenerator(q=q, labels=("1", "2", "3"))
    tm = transition_matrix(g, delta)
    assert np.all(tm.p >= 0.0)
    assert np.abs(tm.p.sum(axis=1) - 1.0).max() < 1e-12
