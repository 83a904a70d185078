"""
Tests para la curva de entropía, la regresión segmentada y la elección de K
"""
import numpy as np
import pytest
from pydantic import ValidationError

from app.core.errors import InsufficientPointsError, InvalidInputError
from app.models.schemas import EntropyCurve, KPolicy
from app.services.geodesics import neighbour_table
from app.services.k_selection import (
    choose_k,
    entropy_curve,
    entropy_curve_from_table,
    fit_segmented,
    select_k,
)


def broken_line(ks, psi, slope, level=1.0):
    x = np.asarray(ks, dtype=float)
    return EntropyCurve(ks=list(ks), entropies=(level + slope * (x - psi) * (x < psi)).tolist())


class TestFitSegmented:
    """Tests para fit_segmented"""

    def test_exact_change_point(self):
        """Debe recuperar ψ, β y γ de una curva sin ruido"""
        fit = fit_segmented(broken_line(range(1, 21), psi=8.0, slope=-0.5))
        assert fit.psi == pytest.approx(8.0)
        assert fit.gamma == pytest.approx(-0.5)
        assert fit.beta == pytest.approx(1.0)
        assert fit.rss == pytest.approx(0.0, abs=1e-12)
        assert fit.k_hat == 8
        assert not fit.flat
        assert not fit.suspicious
        assert len(fit.fitted) == 20

    def test_half_rounds_up(self):
        """ψ = 8.5 debe dar K̂ = 9"""
        fit = fit_segmented(broken_line(range(1, 21), psi=8.5, slope=-1.0, level=0.0))
        assert fit.psi == pytest.approx(8.5)
        assert fit.k_hat == 9

    def test_flat_curve(self):
        """Una curva constante da ψ en el extremo inferior"""
        fit = fit_segmented(EntropyCurve(ks=[2, 3, 4, 5, 6], entropies=[1.0] * 5))
        assert fit.flat
        assert fit.psi == 2.0
        assert fit.k_hat == 2
        assert fit.gamma == 0.0

    def test_positive_slope_is_suspicious(self):
        """Una pendiente positiva antes del cambio se marca como sospechosa"""
        fit = fit_segmented(broken_line(range(1, 16), psi=6.0, slope=0.3))
        assert fit.gamma > 0
        assert fit.suspicious

    def test_k_hat_within_range(self):
        rng = np.random.default_rng(1)
        curve = EntropyCurve(ks=list(range(3, 13)), entropies=rng.uniform(0, 5, 10).tolist())
        fit = fit_segmented(curve)
        assert 3 <= fit.k_hat <= 12
        assert 3.0 <= fit.psi <= 12.0

    @pytest.mark.parametrize("seed", range(10))
    def test_shift_invariance(self, seed):
        """Sumar una constante a la entropía solo mueve β"""
        rng = np.random.default_rng(seed)
        curve = broken_line(range(1, 31), psi=float(rng.uniform(5, 20)), slope=-0.2)
        noisy = np.asarray(curve.entropies) + rng.normal(scale=0.05, size=30)
        base = fit_segmented(EntropyCurve(ks=curve.ks, entropies=noisy.tolist()))
        shifted = fit_segmented(EntropyCurve(ks=curve.ks, entropies=(noisy + 3.7).tolist()))
        assert shifted.psi == pytest.approx(base.psi, abs=1e-9)
        assert shifted.gamma == pytest.approx(base.gamma, abs=1e-9)
        assert shifted.beta == pytest.approx(base.beta + 3.7, abs=1e-9)

    @pytest.mark.parametrize("seed", range(10))
    def test_rss_not_above_flat_model(self, seed):
        """El modelo segmentado contiene al modelo constante"""
        rng = np.random.default_rng(seed)
        y = rng.uniform(0, 5, size=20)
        fit = fit_segmented(EntropyCurve(ks=list(range(1, 21)), entropies=y.tolist()))
        assert fit.rss <= float(np.sum((y - y.mean()) ** 2)) + 1e-12

    def test_noiseless_recovery_is_exact(self):
        fit = fit_segmented(broken_line(range(1, 36), psi=12.3, slope=-0.4, level=2.0))
        assert fit.psi == pytest.approx(12.3, abs=1e-9)
        assert fit.rss <= 1e-18

    def test_noisy_recovery(self):
        """Con ruido de desvío 0.05, ψ̂ queda a ±1 del verdadero en al menos 95 de 100 réplicas"""
        rng = np.random.default_rng(11)
        hits = 0
        for _ in range(100):
            psi = float(rng.uniform(6, 25))
            curve = broken_line(range(1, 36), psi=psi, slope=-0.3, level=2.0)
            noisy = np.asarray(curve.entropies) + rng.normal(scale=0.05, size=35)
            fit = fit_segmented(EntropyCurve(ks=curve.ks, entropies=noisy.tolist()))
            hits += abs(fit.psi - psi) <= 1.0
        assert hits >= 95

    def test_too_few_points(self):
        """Debe exigir al menos cuatro puntos en la curva"""
        with pytest.raises(InvalidInputError):
            fit_segmented(EntropyCurve(ks=[1, 2, 3], entropies=[3.0, 2.0, 1.0]))

    def test_curve_validation(self):
        """La curva debe tener ks crecientes y longitudes iguales"""
        with pytest.raises(ValidationError):
            EntropyCurve(ks=[1, 2], entropies=[1.0])
        with pytest.raises(ValidationError):
            EntropyCurve(ks=[2, 1], entropies=[1.0, 1.0])


class TestEntropyCurve:
    """Tests para entropy_curve y choose_k sobre un patrón simulado"""

    def test_curve_from_table(self, clustered):
        net, points, _ = clustered
        table = neighbour_table(net, points.arrays(), k_max=10)
        curve = entropy_curve_from_table(table, 10)
        assert len(curve.ks) + len(curve.skipped) == 10
        assert all(e >= 0 for e in curve.entropies)
        assert curve.ks == sorted(curve.ks)

    def test_table_shared_with_direct_computation(self, clustered):
        """La curva con tabla compartida debe coincidir con la calculada desde cero"""
        net, points, _ = clustered
        table = neighbour_table(net, points.arrays(), k_max=12)
        shared = entropy_curve_from_table(table, 8)
        direct = entropy_curve(net, points.arrays(), 8)
        assert shared.ks == direct.ks
        np.testing.assert_allclose(shared.entropies, direct.entropies, rtol=1e-5, atol=1e-6)

    def test_insufficient_points(self, unit_line):
        segment_ids, offsets = np.zeros(5, dtype=np.int64), np.linspace(0.1, 0.9, 5)
        with pytest.raises(InsufficientPointsError):
            entropy_curve(unit_line, (segment_ids, offsets), 10)

    def test_choose_k_auto(self, clustered):
        """En modo automático K̂ está en 1..k_max y se devuelven curva y ajuste"""
        net, points, _ = clustered
        selection = choose_k(net, points.arrays(), "auto:10")
        assert selection.mode == "auto"
        assert 1 <= selection.K <= 10
        assert selection.curve is not None
        assert selection.fit.k_hat == selection.K

    def test_choose_k_fixed(self, clustered):
        """Con K fijo no se calcula la curva"""
        net, points, _ = clustered
        selection = choose_k(net, points.arrays(), KPolicy(mode="fixed", k=7))
        assert selection.K == 7
        assert selection.curve is None
        assert select_k(net, points.arrays(), mode=7) == 7
