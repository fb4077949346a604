"""Linear-chain scoring against brute-force path enumeration, collapsed-role
expansion, and prototype-derived transitions."""

import random

import numpy as np
import pytest
import torch

from protoed import (
    COLLAPSED_ROLES,
    CollapsedTransitions,
    Schema,
    TransitionTable,
    ValidationError,
    bio_tags,
    cdt_decode,
    crf_log_partition,
    crf_nll,
    crf_path_score,
    crf_viterbi,
    emissions_from_type_logits,
    expand_collapsed,
    pa_transitions,
    zero_table,
)

from conftest import oracle_best_path, oracle_log_partition, oracle_path_score


def random_instance(rng, n_max=5, t_max=4, integer=False):
    n = rng.randint(1, n_max)
    t = rng.randint(1, t_max)

    def draw(*shape):
        if integer:
            vals = [float(rng.randint(-2, 2)) for _ in range(int(np.prod(shape)))]
        else:
            vals = [rng.gauss(0, 2) for _ in range(int(np.prod(shape)))]
        return torch.tensor(vals, dtype=torch.float64).reshape(shape)

    emissions = draw(n, t)
    table = TransitionTable(
        tuple(f"tag{i}" for i in range(t)), draw(t, t), draw(t), draw(t)
    )
    return emissions, table


class TestPartitionAndScore:
    def test_partition_matches_enumeration(self):
        rng = random.Random(0)
        for _ in range(150):
            emissions, table = random_instance(rng)
            got = float(crf_log_partition(emissions, table))
            want = oracle_log_partition(emissions, table)
            assert got == pytest.approx(want, abs=1e-8)

    def test_partition_with_forbidden_transitions(self):
        rng = random.Random(1)
        for _ in range(50):
            emissions, table = random_instance(rng, n_max=4, t_max=3)
            trans = table.trans.clone()
            trans[0, 0] = float("-inf")
            table = TransitionTable(table.tags, trans, table.start, table.stop)
            got = float(crf_log_partition(emissions, table))
            want = oracle_log_partition(emissions, table)
            assert got == pytest.approx(want, abs=1e-8)

    def test_path_score_matches_manual_sum(self):
        rng = random.Random(2)
        for _ in range(100):
            emissions, table = random_instance(rng)
            n, t = emissions.shape
            path = [rng.randrange(t) for _ in range(n)]
            got = float(crf_path_score(emissions, table, path))
            assert got == pytest.approx(oracle_path_score(emissions, table, path), abs=1e-10)

    def test_single_position(self):
        emissions = torch.tensor([[1.0, 2.0]], dtype=torch.float64)
        table = zero_table(Schema(()))  # one tag: "O"
        # Build a 2-tag table by hand instead.
        table = TransitionTable(
            ("x", "y"),
            torch.zeros(2, 2, dtype=torch.float64),
            torch.zeros(2, dtype=torch.float64),
            torch.zeros(2, dtype=torch.float64),
        )
        assert float(crf_log_partition(emissions, table)) == pytest.approx(
            float(np.logaddexp(1.0, 2.0))
        )

    def test_nll_is_partition_minus_path(self):
        rng = random.Random(3)
        for _ in range(50):
            emissions, table = random_instance(rng)
            n, t = emissions.shape
            path = [rng.randrange(t) for _ in range(n)]
            nll = float(crf_nll(emissions, table, path))
            want = float(crf_log_partition(emissions, table)) - float(
                crf_path_score(emissions, table, path)
            )
            assert nll == pytest.approx(want, abs=1e-10)
            assert nll >= -1e-10  # a single path never outweighs the total

    def test_partition_differentiable(self):
        emissions = torch.randn(
            3, 2, dtype=torch.float64, generator=torch.Generator().manual_seed(0)
        ).requires_grad_()
        trans = torch.zeros(2, 2, dtype=torch.float64, requires_grad=True)
        table = TransitionTable(
            ("x", "y"), trans, torch.zeros(2, dtype=torch.float64), torch.zeros(2, dtype=torch.float64)
        )
        z = crf_log_partition(emissions, table)
        ge, gt = torch.autograd.grad(z, (emissions, trans))
        # d log Z / d emissions sums to 1 per position (marginal probabilities).
        assert torch.allclose(ge.sum(dim=1), torch.ones(3, dtype=torch.float64))
        assert float(gt.sum()) == pytest.approx(2.0)  # one transition per adjacent pair

    def test_shape_validation(self):
        emissions, table = random_instance(random.Random(4))
        with pytest.raises(ValidationError):
            crf_log_partition(emissions[:, :-1] if emissions.shape[1] > 1 else emissions[:0], table)
        with pytest.raises(ValidationError):
            crf_path_score(emissions, table, [0] * (emissions.shape[0] + 1))


class TestViterbi:
    def test_matches_enumeration_random(self):
        rng = random.Random(5)
        for _ in range(150):
            emissions, table = random_instance(rng)
            assert crf_viterbi(emissions, table) == oracle_best_path(emissions, table)

    def test_matches_enumeration_with_ties(self):
        """Integer scores collide constantly; the lexicographic rule decides."""
        rng = random.Random(6)
        for _ in range(200):
            emissions, table = random_instance(rng, integer=True)
            assert crf_viterbi(emissions, table) == oracle_best_path(emissions, table)

    def test_all_zero_scores_yield_first_tag(self):
        emissions = torch.zeros(4, 3, dtype=torch.float64)
        table = TransitionTable(
            ("a", "b", "c"),
            torch.zeros(3, 3, dtype=torch.float64),
            torch.zeros(3, dtype=torch.float64),
            torch.zeros(3, dtype=torch.float64),
        )
        assert crf_viterbi(emissions, table) == [0, 0, 0, 0]

    def test_respects_forbidden_transition(self):
        # Emissions prefer tag 1 everywhere, but 1 -> 1 is forbidden, so the
        # best path alternates starting from the highest-reward arrangement.
        emissions = torch.tensor([[0.0, 10.0], [0.0, 10.0]], dtype=torch.float64)
        trans = torch.tensor([[0.0, 0.0], [0.0, float("-inf")]], dtype=torch.float64)
        table = TransitionTable(
            ("x", "y"), trans, torch.zeros(2, dtype=torch.float64), torch.zeros(2, dtype=torch.float64)
        )
        path = crf_viterbi(emissions, table)
        assert path in ([0, 1], [1, 0])
        assert path == oracle_best_path(emissions, table)


class TestTransitionTable:
    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValidationError):
            TransitionTable(
                ("a", "b"),
                torch.zeros(3, 3, dtype=torch.float64),
                torch.zeros(2, dtype=torch.float64),
                torch.zeros(2, dtype=torch.float64),
            )

    def test_nan_and_posinf_rejected(self):
        for bad in (float("nan"), float("inf")):
            trans = torch.zeros(2, 2, dtype=torch.float64)
            trans[0, 0] = bad
            with pytest.raises(ValidationError):
                TransitionTable(
                    ("a", "b"), trans,
                    torch.zeros(2, dtype=torch.float64), torch.zeros(2, dtype=torch.float64),
                )

    def test_neginf_allowed(self):
        trans = torch.zeros(2, 2, dtype=torch.float64)
        trans[0, 0] = float("-inf")
        TransitionTable(
            ("a", "b"), trans, torch.zeros(2, dtype=torch.float64), torch.zeros(2, dtype=torch.float64)
        )

    def test_zero_table_aligned_with_bio_tags(self):
        schema = Schema(("t1", "t2"))
        table = zero_table(schema)
        assert table.tags == bio_tags(schema) == ("O", "B-t1", "I-t1", "B-t2", "I-t2")
        assert float(table.trans.abs().sum()) == 0.0


class TestCollapsedTransitions:
    schema = Schema(("a", "b"))

    def test_needs_nine_values(self):
        with pytest.raises(ValidationError):
            CollapsedTransitions(torch.zeros(8, dtype=torch.float64))

    def test_expansion_role_map(self):
        """Every tag-pair cell must carry exactly its role's score. The role
        grid below is written out by hand for the two-type alphabet."""
        values = torch.arange(9, dtype=torch.float64) + 1.0  # distinct per role
        ct = CollapsedTransitions(values)
        table = expand_collapsed(ct, self.schema)
        tags = table.tags
        assert tags == ("O", "B-a", "I-a", "B-b", "I-b")
        # Expected roles. A dangling I behaves like B when entered from O
        # (lenient decoding opens a mention there).
        expected = {
            ("O", "O"): "O>O",
            ("O", "B-a"): "O>B", ("O", "I-a"): "O>B",
            ("O", "B-b"): "O>B", ("O", "I-b"): "O>B",
            ("B-a", "O"): "B>O", ("B-b", "O"): "B>O",
            ("I-a", "O"): "I>O", ("I-b", "O"): "I>O",
            ("B-a", "B-a"): "B>B", ("B-a", "B-b"): "B>B",
            ("B-b", "B-a"): "B>B", ("B-b", "B-b"): "B>B",
            ("I-a", "B-a"): "I>B", ("I-a", "B-b"): "I>B",
            ("I-b", "B-a"): "I>B", ("I-b", "B-b"): "I>B",
            ("B-a", "I-a"): "B>I-same", ("B-b", "I-b"): "B>I-same",
            ("I-a", "I-a"): "I>I-same", ("I-b", "I-b"): "I>I-same",
            ("B-a", "I-b"): ">I-diff", ("B-b", "I-a"): ">I-diff",
            ("I-a", "I-b"): ">I-diff", ("I-b", "I-a"): ">I-diff",
        }
        assert len(expected) == 25
        for (a, b), role in expected.items():
            i, j = tags.index(a), tags.index(b)
            assert float(table.trans[i, j]) == float(ct.value(role)), (a, b, role)
        assert float(table.start.abs().sum()) == 0.0
        assert float(table.stop.abs().sum()) == 0.0

    def test_role_accessor(self):
        ct = CollapsedTransitions.zeros()
        assert float(ct.value("O>B")) == 0.0
        assert len(COLLAPSED_ROLES) == 9

    def test_zero_ct_decode_is_positionwise_argmax(self):
        rng = random.Random(7)
        for _ in range(50):
            n = rng.randint(1, 6)
            logits = torch.tensor(
                [[rng.gauss(0, 1) for _ in range(3)] for _ in range(n)], dtype=torch.float64
            )
            tags = cdt_decode(logits, CollapsedTransitions.zeros(), self.schema)
            emissions = emissions_from_type_logits(logits, self.schema)
            want = [("O", "B-a", "I-a", "B-b", "I-b")[int(np.argmax(row))] for row in emissions.numpy()]
            assert tags == want


class TestEmissionMapping:
    def test_column_layout(self):
        schema = Schema(("a", "b"))
        logits = torch.tensor([[1.0, 2.0, 3.0]], dtype=torch.float64)  # a, b, non-event
        em = emissions_from_type_logits(logits, schema)
        # Layout follows the tag alphabet: O, B-a, I-a, B-b, I-b.
        assert em.tolist() == [[3.0, 1.0, 1.0, 2.0, 2.0]]

    def test_width_validated(self):
        with pytest.raises(ValidationError):
            emissions_from_type_logits(torch.zeros(1, 2, dtype=torch.float64), Schema(("a", "b")))


class TestPaTransitions:
    schema = Schema(("a", "b"))

    def protos(self):
        g = torch.Generator().manual_seed(8)
        return {
            t: torch.randn(4, dtype=torch.float64, generator=g)
            for t in ("a", "b", "N.A.")
        }

    def test_bilinear_values_and_type_blocks(self):
        protos = self.protos()
        g = torch.Generator().manual_seed(9)
        w = torch.randn(4, 4, dtype=torch.float64, generator=g)
        table = pa_transitions(protos, w, self.schema)
        tags = table.tags
        score_ab = float(protos["a"] @ w @ protos["b"])
        score_na_a = float(protos["N.A."] @ w @ protos["a"])
        assert float(table.trans[tags.index("B-a"), tags.index("I-b")]) == pytest.approx(score_ab)
        assert float(table.trans[tags.index("O"), tags.index("B-a")]) == pytest.approx(score_na_a)
        # B and I variants of one type share the type's row and column.
        ia, ba = tags.index("I-a"), tags.index("B-a")
        assert torch.equal(table.trans[ia], table.trans[ba])
        assert torch.equal(table.trans[:, ia], table.trans[:, ba])
        assert float(table.start.abs().sum()) == 0.0

    def test_differentiable_in_both_inputs(self):
        protos = {k: v.requires_grad_() for k, v in self.protos().items()}
        w = torch.zeros(4, 4, dtype=torch.float64, requires_grad=True)
        table = pa_transitions(protos, w, self.schema)
        total = table.trans.sum()
        grads = torch.autograd.grad(total, [w, protos["a"]])
        assert all(g is not None for g in grads)

    def test_missing_prototype_rejected(self):
        protos = self.protos()
        del protos["b"]
        with pytest.raises(ValidationError, match="'b'"):
            pa_transitions(protos, torch.zeros(4, 4, dtype=torch.float64), self.schema)

    def test_bilinear_shape_rejected(self):
        with pytest.raises(ValidationError):
            pa_transitions(self.protos(), torch.zeros(3, 4, dtype=torch.float64), self.schema)
