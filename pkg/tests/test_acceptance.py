"""One test per acceptance criterion, each printing a single PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines; the same
checks back ``tempoly reproduce-paper``.
"""
import time

import pytest

from tempoly.acceptance import CRITERIA, format_line


def _run(number):
    t = time.perf_counter()
    r = CRITERIA[number](seed=0)
    r.runtime = time.perf_counter() - t
    print(format_line(r))
    return r


def _check(number):
    r = _run(number)
    assert r.passed, format_line(r) + (f" {r.detail}" if r.detail else "")


def test_c01_quotient_dimensions():
    _check(1)


def test_c02_fixture_validity():
    _check(2)


def test_c03_rewinding_probability():
    _check(3)


def test_c04_compressed_rewinding():
    _check(4)


def test_c05_swap_probability():
    _check(5)


@pytest.mark.slow
def test_c06_fast_forward_probability():
    _check(6)


def test_c07_fast_forward_correctness():
    _check(7)


def test_c08_rewinding_construction():
    _check(8)


def test_c09_oracle_equivalence():
    _check(9)


def test_c10_planner_soundness():
    _check(10)


def test_c11_mps_fast_path():
    _check(11)


def test_c12_symmetric_projector_pipeline():
    _check(12)


def test_c13_quotient_in_permutation_span():
    _check(13)


def test_c14_dimension_bound():
    _check(14)


def test_c15_gamma_identity():
    _check(15)


def test_c16_sparsification():
    _check(16)
