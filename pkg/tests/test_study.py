"""Tests for configuration parsing, rate fitting, sweeps and verification."""

import numpy as np
import pytest

from src.coefficients import EllipticityError, GridCompatibilityError, evaluate
from src.expressions import ExpressionSyntaxError
from src.study import (
    ConfigError,
    HomogenizationStudy,
    StageError,
    bound_satisfied,
    fit_rate,
    parse_config,
    parse_eps,
    _cell_order_check,
    run_sweep,
    verify,
)

SQRT3 = np.sqrt(3.0)

COSINE_CONFIG = """
dim: 1
extents: [1.0]
N: 1025
M: 256
My: 256
eps_list: ["1/8", "1/16", "1/32", "1/64", "1/128"]
coefficient: {kind: catalog, id: cosine1d, base: 2.0, amp: 1.0, freq: 1}
source: {kind: constant, value: 1.0}
cg_tol: 1e-10
"""

CONSTANT_CONFIG = """
{"dim": 1, "extents": [1.0], "N": 129, "M": 16, "My": 16,
 "eps_list": ["1/8", "1/16"],
 "coefficient": {"kind": "catalog", "id": "constant", "value": 3.0},
 "source": {"kind": "constant", "value": 1.0}}
"""

LAMINATE_CONFIG = """
dim: 2
extents: [1.0, 1.0]
N: 129
M: 32
My: 32
eps_list: ["1/4", "1/8", "1/16"]
coefficient: {kind: catalog, id: laminate2d, base: 2.0, amp: 1.0, freq: 1}
source: {kind: sine_product, amplitude: 1.0}
cg_tol: 1e-10
"""


def _config(**overrides):
    data = {
        'dim': 1, 'extents': [1.0], 'N': 65, 'M': 16,
        'eps_list': ['1/4', '1/8'],
        'coefficient': '2 + cos(2*pi*y1)',
        'source': {'kind': 'constant', 'value': 1.0},
    }
    data.update(overrides)
    return data


@pytest.fixture(scope='module')
def cosine_report():
    """Run the 1D cosine sweep once."""
    return run_sweep(parse_config(COSINE_CONFIG), workers=2)


class TestParseConfig:
    """Test cases for configuration parsing."""

    def test_expression_coefficient(self):
        """Test that a coefficient string becomes an evaluator with A(., 0) = 3."""
        spec = parse_config(_config())

        assert spec.coefficient.catalog_id == 'expr'
        assert evaluate(spec.coefficient, [0.0], [0.0])[0, 0] == pytest.approx(3.0)
        assert spec.eps_list == (0.25, 0.125)
        assert spec.My == spec.M

    def test_json_text(self):
        """Test that JSON documents parse."""
        spec = parse_config(CONSTANT_CONFIG)

        assert spec.coefficient.catalog_id == 'constant'
        assert spec.N == 129

    def test_deterministic(self):
        """Test that identical text gives identical specs."""
        assert parse_config(COSINE_CONFIG).echo() == parse_config(COSINE_CONFIG).echo()

    def test_incompatible_eps(self):
        """Test eps = 1/7 with N - 1 = 256, M = 16."""
        with pytest.raises(GridCompatibilityError, match="epsilon not grid-compatible"):
            parse_config(_config(N=257, eps_list=['1/7']))

    def test_not_elliptic(self):
        """Test cos(2 pi y1) as a coefficient."""
        with pytest.raises(EllipticityError, match="not uniformly elliptic"):
            parse_config(_config(coefficient='cos(2*pi*y1)'))

    def test_syntax_error_position(self):
        """Test that expression errors keep line and column."""
        with pytest.raises(ExpressionSyntaxError) as info:
            parse_config(_config(coefficient='2 + * y1'))

        assert info.value.column == 5

    def test_missing_keys(self):
        """Test that required keys are enforced."""
        data = _config()
        del data['source']

        with pytest.raises(ConfigError, match="source"):
            parse_config(data)

    def test_translation_count_must_match(self):
        """Test My = M."""
        with pytest.raises(ConfigError, match="My must equal M"):
            parse_config(_config(My=8))

    def test_eps_must_decrease(self):
        """Test that eps_list is strictly decreasing."""
        with pytest.raises(ConfigError, match="strictly decreasing"):
            parse_config(_config(eps_list=['1/8', '1/4']))

    def test_unknown_catalog_id(self):
        """Test that unknown catalog entries are rejected."""
        with pytest.raises(ConfigError, match="Unknown catalog id"):
            parse_config(_config(coefficient={'kind': 'catalog', 'id': 'marble'}))

    def test_bad_format(self):
        """Test that only csv and json formats are allowed."""
        with pytest.raises(ConfigError, match="format"):
            parse_config(_config(format='xlsx'))

    @pytest.mark.parametrize("value,expected", [("1/8", 0.125), (0.5, 0.5), ("2.5e-1", 0.25)])
    def test_parse_eps(self, value, expected):
        """Test numeric and fractional eps."""
        assert parse_eps(value) == expected

    @pytest.mark.parametrize("value", ["0", "-1/4", "abc", True])
    def test_parse_eps_rejects(self, value):
        """Test that non-positive or non-numeric eps are rejected."""
        with pytest.raises(ConfigError):
            parse_eps(value)


class TestFitRate:
    """Test cases for log-log rate fitting."""

    def test_first_order(self):
        """Test slope 1."""
        assert fit_rate([(0.1, 0.2), (0.05, 0.1)]).slope == pytest.approx(1.0, abs=1e-12)

    def test_second_order(self):
        """Test slope 2."""
        assert fit_rate([(0.1, 0.01), (0.01, 0.0001)]).slope == pytest.approx(2.0, abs=1e-12)

    def test_insufficient_points(self):
        """Test that one pair is not enough."""
        with pytest.raises(ValueError, match="insufficient points"):
            fit_rate([(0.1, 0.2)])

    def test_noise_floor_excluded(self):
        """Test that errors below the floor are dropped and recorded."""
        fit = fit_rate([(0.1, 0.2), (0.05, 0.1), (0.025, 1e-16)])

        assert fit.n_points == 2
        assert fit.excluded == (0.025,)

    def test_scale_equivariance(self):
        """Test that scaling errors moves only the intercept."""
        pairs = [(0.1, 0.3), (0.05, 0.11), (0.025, 0.06)]
        scaled = [(e, 7.0 * err) for e, err in pairs]

        a, b = fit_rate(pairs), fit_rate(scaled)

        assert b.slope == pytest.approx(a.slope, abs=1e-12)
        assert b.intercept == pytest.approx(a.intercept + np.log(7.0), abs=1e-12)

    def test_bound_slack(self):
        """Test the 1% bound slack."""
        assert bound_satisfied(1.005, 1.0)
        assert not bound_satisfied(1.02, 1.0)
        assert bound_satisfied(0.0, 0.0)


class TestSweep:
    """Test cases for the sweep orchestration."""

    def test_constant_coefficient(self):
        """Test that constant a gives vanishing errors and passing bounds."""
        report = run_sweep(parse_config(CONSTANT_CONFIG), workers=1)

        assert [row['eps'] for row in report.rows] == [0.125, 0.0625]
        for row in report.rows:
            assert row['h1_gap'] <= 1e-10
            assert row['avg_grad_error'] <= 1e-10
            assert row['bl_corrected_error'] <= 1e-10
            assert row['e_grad_norm'] <= 1e-10
            assert row['bound_ok'] is True
        assert report.a_hom == [[pytest.approx(3.0, abs=1e-14)]]

    def test_cosine_a_hom(self, cosine_report):
        """Test reported a_hom = sqrt 3."""
        assert abs(cosine_report.a_hom[0][0] - SQRT3) <= 1e-10

    def test_cosine_bound_and_slope(self, cosine_report):
        """Test every bound row and a first-order slope."""
        assert all(row['bound_ok'] for row in cosine_report.rows)
        assert 0.9 <= cosine_report.fitted_rates['avg_grad_error']['slope'] <= 1.1

    def test_cosine_corrector_gap(self, cosine_report):
        """Test that the corrector gap decreases to under 10% of its first value."""
        gaps = [row['h1_gap'] for row in cosine_report.rows]

        assert all(b < a for a, b in zip(gaps, gaps[1:]))
        assert gaps[-1] < 0.1 * gaps[0]

    def test_cosine_secondary_bounds(self, cosine_report):
        """Test the error-function, boundary-layer and stability bounds."""
        for row in cosine_report.rows:
            assert bound_satisfied(row['e_grad_norm'], row['e_bound'])
            assert bound_satisfied(row['v_grad_norm'], row['v_bound'])
            assert row['grad_norm'] <= row['stability_bound']
            assert row['harmonic_mean_max'] == pytest.approx(SQRT3, abs=1e-3)

    def test_cosine_pairing_gap_decreases(self, cosine_report):
        """Test the weak gradient gap shrinks at least linearly."""
        assert cosine_report.fitted_rates['pairing_gap']['slope'] >= 0.9

    def test_report_bookkeeping(self, cosine_report):
        """Test solve counts, timings and echoed spec."""
        assert cosine_report.solves == 1 + 1 + 5 * 256
        assert set(cosine_report.timings) >= {'cell', 'homogenized', 'oscillating', 'metrics'}
        assert cosine_report.spec['eps_list'] == [1 / 8, 1 / 16, 1 / 32, 1 / 64, 1 / 128]

    def test_reproducible(self):
        """Test that identical specs give identical rows."""
        first = run_sweep(parse_config(CONSTANT_CONFIG), workers=1)
        second = run_sweep(parse_config(CONSTANT_CONFIG), workers=2)

        assert first.rows == second.rows

    def test_rejects_x_dependent_coefficient(self):
        """Test that sweeps need an x-independent coefficient."""
        spec = parse_config(_config(coefficient='2 + x1 + cos(2*pi*y1)'))

        with pytest.raises(ConfigError, match="independent of x"):
            HomogenizationStudy(spec, workers=1)

    def test_stage_failure_is_named(self, mocker):
        """Test that a failing stage reports its name and eps."""
        spec = parse_config(CONSTANT_CONFIG)
        mocker.patch('src.study.solve_oscillating_family', side_effect=RuntimeError("solver down"))

        with pytest.raises(StageError, match="oscillating") as info:
            run_sweep(spec, workers=1)

        assert info.value.eps == 0.125

    @pytest.mark.slow
    def test_laminate_trend(self):
        """Test that ||<grad e>|| / eps grows at most 1.5x on the laminate."""
        report = run_sweep(parse_config(LAMINATE_CONFIG))
        ratios = [row['nd_ratio'] for row in report.rows]

        assert ratios[-1] <= 1.5 * ratios[0]
        assert all(row['bound_ok'] is None for row in report.rows)
        assert all(row['boundary_gap'] == 0.0 for row in report.rows)
        assert all(0.0 < row['v_max'] < np.inf for row in report.rows)


class TestVerify:
    """Test cases for the acceptance checks."""

    def test_constant_coefficient_passes(self):
        """Test that every check passes for a constant coefficient."""
        results = verify(parse_config(CONSTANT_CONFIG), workers=1)

        assert all(r.passed for r in results), [r for r in results if not r.passed]
        names = {r.name for r in results}
        assert {'shift_isometry', 'shift_adjoint_inverse', 'bound_1d', 'corrector_h1_gap'} <= names

    def test_cosine_passes(self):
        """Test the 1D cosine acceptance run."""
        results = verify(parse_config(COSINE_CONFIG), workers=2)

        assert all(r.passed for r in results), [r for r in results if not r.passed]
        assert {'pairing_gap_order', 'avg_grad_error_slope'} <= {r.name for r in results}

    @pytest.mark.parametrize("catalog_id,detail", [("laminate2d", "observed order"), ("constant", "resolved")])
    def test_cell_mesh_order(self, catalog_id, detail):
        """Test the a_hom mesh-refinement check on 2D cells starting at M = 16."""
        spec = parse_config(_config(
            dim=2, extents=[1.0, 1.0], N=17, M=16, eps_list=['1/2'],
            coefficient={'kind': 'catalog', 'id': catalog_id, 'base': 2.0, 'amp': 1.0, 'value': 2.0},
            source={'kind': 'sine_product', 'amplitude': 1.0},
        ))

        result = _cell_order_check(spec)

        assert result.name == 'cell_mesh_order'
        assert result.passed
        assert detail in result.detail
