import numpy as np
import pytest

from fedspoof import fusion, labels
from fedspoof.domain import GeoPos, PlatformSample, SignalProps, Trace, offset_geopos
from fedspoof.fusion import FusedEstimate

ANCHOR = GeoPos(48.0, 11.0)


def _trace_and_fused(residuals, scale=1.0):
    """p_gnss pinned at the anchor; fused mu displaced north by each residual."""
    samples = [
        PlatformSample(
            platform_id=1,
            trace_id=1,
            t=float(k),
            p_true=ANCHOR,
            p_gnss=ANCHOR,
            p_net=ANCHOR,
            v=0.0,
            a=np.zeros(3),
            omega=np.zeros(3),
            signal=SignalProps.empty(),
            attacked=False,
        )
        for k in range(len(residuals))
    ]
    trace = Trace(1, 1, samples)
    fused = [
        FusedEstimate(mu=offset_geopos(ANCHOR, float(r) * scale, 0.0), sigma=(1.0, 1.0))
        for r in residuals
    ]
    return trace, fused


class TestGenerate:
    def test_zero_deviation_gives_zero_labels(self):
        trace, fused = _trace_and_fused([0.0] * 12)
        series = labels.generate(trace, fused)
        assert np.array_equal(series.values, np.zeros(12))

    def test_single_spike_in_twenty_samples(self):
        # deviations 0 x19 plus one 100 m spike: p95 = 0 + 0.05*100 = 5;
        # after cap and min-max the spike is exactly 1, the rest exactly 0
        trace, fused = _trace_and_fused([0.0] * 19 + [100.0])
        series = labels.generate(trace, fused)
        assert series.values[-1] == pytest.approx(1.0, abs=1e-12)
        np.testing.assert_allclose(series.values[:-1], np.zeros(19), atol=1e-12)
        assert series.cap_value == pytest.approx(5.0, rel=1e-9)

    def test_invariant_under_uniform_scaling(self):
        devs = [3.0, 9.0, 1.0, 14.0, 6.0, 2.0, 11.0, 8.0, 5.0, 7.0]
        a = labels.generate(*_trace_and_fused(devs))
        b = labels.generate(*_trace_and_fused(devs, scale=4.2))
        np.testing.assert_allclose(a.values, b.values, atol=1e-9)

    def test_monotone_below_cap(self, rng):
        devs = rng.uniform(0.0, 200.0, 50)
        trace, fused = _trace_and_fused(devs)
        series = labels.generate(trace, fused)
        cap = series.cap_value
        below = np.nonzero(devs < cap)[0]
        order = below[np.argsort(devs[below])]
        assert np.all(np.diff(series.values[order]) >= -1e-12)

    def test_values_always_unit_interval(self, rng):
        for _ in range(10):
            devs = rng.uniform(0.0, 500.0, int(rng.integers(2, 60)))
            series = labels.generate(*_trace_and_fused(devs))
            assert series.values.min() >= 0.0 and series.values.max() <= 1.0


class TestGroundTruthIndependence:
    def test_mutating_oracle_fields_leaves_labels_unchanged(self, tiny_corpus):
        _, traces = tiny_corpus
        trace = traces[0]
        cfg = fusion.FusionConfig()
        fused = fusion.fuse_trace(trace, cfg)
        baseline = labels.generate(trace, fused)

        tampered_samples = [
            PlatformSample(
                platform_id=s.platform_id,
                trace_id=s.trace_id,
                t=s.t,
                p_true=offset_geopos(s.p_true, 5000.0, -5000.0),
                p_gnss=s.p_gnss,
                p_net=s.p_net,
                v=s.v,
                a=s.a,
                omega=s.omega,
                signal=s.signal,
                attacked=not s.attacked,
            )
            for s in trace.samples
        ]
        tampered = Trace(trace.trace_id, trace.platform_id, tampered_samples)
        fused_t = fusion.fuse_trace(tampered, cfg)
        series = labels.generate(tampered, fused_t)
        assert np.array_equal(series.values, baseline.values)


class TestPooledNorm:
    def test_pooled_fit_applies_across_traces(self):
        t1, f1 = _trace_and_fused([0.0, 10.0, 20.0])
        t2, f2 = _trace_and_fused([30.0, 40.0, 200.0])
        norm = labels.fit_label_norm(
            [labels.raw_deviations(t1, f1), labels.raw_deviations(t2, f2)]
        )
        s1 = labels.generate(t1, f1, norm)
        s2 = labels.generate(t2, f2, norm)
        # shared scaling keeps cross-trace ordering comparable
        assert s1.values[2] < s2.values[0]
        assert s1.cap_value == s2.cap_value == norm.cap

    def test_empty_fit_rejected(self):
        with pytest.raises(ValueError):
            labels.fit_label_norm([np.empty(0)])
