use proptest::prelude::*;

use fracbayes::divergence::{self, Density, Estimator};
use fracbayes::drvs::{self, DrvsHyper};
use fracbayes::identifiability::{DiscrepancyBuffer, GaussianLocation};
use fracbayes::kernels;
use fracbayes::model_space::{self, ModelEntry, ModelIndex, ModelPosterior, PosteriorKind};

fn normal() -> impl Strategy<Value = (f64, f64)> {
    (-3.0..3.0f64, 0.3..3.0f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn divergences_are_nonnegative_and_bounded((m1, s1) in normal(), (m2, s2) in normal(), a in 0.05..0.95f64) {
        let est = Estimator::default();
        let (p, q) = (Density::normal(m1, s1), Density::normal(m2, s2));
        let kl = divergence::kl(&p, &q, &est).unwrap().expect_finite();
        let v = divergence::v_discrepancy(&p, &q, &est).unwrap().expect_finite();
        let h2 = divergence::hellinger(&p, &q, &est).unwrap().expect_finite().powi(2);
        let aff = divergence::affinity(&p, &q, a, &est).unwrap().expect_finite();
        let ren = divergence::renyi(&p, &q, a, &est).unwrap().expect_finite();
        prop_assert!(kl >= -1e-9);
        prop_assert!(v >= -1e-9);
        prop_assert!((-1e-9..=2.0 + 1e-9).contains(&h2));
        prop_assert!(aff > 0.0 && aff <= 1.0 + 1e-9);
        prop_assert!(ren >= -1e-9);
    }

    #[test]
    fn renyi_is_nondecreasing_in_order((m1, s1) in normal(), (m2, s2) in normal(), a in 0.05..0.9f64, step in 0.01..0.09f64) {
        let est = Estimator::default();
        let (p, q) = (Density::normal(m1, s1), Density::normal(m2, s2));
        let lo = divergence::renyi(&p, &q, a, &est).unwrap().expect_finite();
        let hi = divergence::renyi(&p, &q, a + step, &est).unwrap().expect_finite();
        prop_assert!(hi >= lo - 1e-8, "{lo} {hi}");
    }

    #[test]
    fn half_order_affinity_is_hellinger_affinity((m1, s1) in normal(), (m2, s2) in normal()) {
        let est = Estimator::default();
        let (p, q) = (Density::normal(m1, s1), Density::normal(m2, s2));
        let aff = divergence::affinity(&p, &q, 0.5, &est).unwrap().expect_finite();
        let h2 = divergence::hellinger(&p, &q, &est).unwrap().expect_finite().powi(2);
        prop_assert!((h2 - 2.0 * (1.0 - aff)).abs() < 1e-8);
    }

    #[test]
    fn posterior_normalizes(scores in prop::collection::vec(-500.0..50.0f64, 1..20)) {
        let entries: Vec<ModelEntry> = scores
            .iter()
            .enumerate()
            .map(|(i, s)| ModelEntry {
                model: ModelIndex::new(&[i + 1]).unwrap(),
                log_prior: 0.0,
                log_evidence: *s,
                log_evidence_se: None,
                probability: 0.0,
                ess: None,
            })
            .collect();
        let post = ModelPosterior::from_evidence(1.0, PosteriorKind::Exact, entries);
        prop_assert!((post.total_probability() - 1.0).abs() < 1e-12);
        prop_assert!(post.total_variation(&post) == 0.0);
    }

    #[test]
    fn gpvs_prior_is_nonincreasing_in_size(p in 2usize..9) {
        let weights = model_space::gpvs_log_prior(p, p);
        for k in 1..p {
            let size = |s: usize| weights.iter().find(|(m, _)| m.len() == s).unwrap().1;
            prop_assert!(size(k + 1) <= size(k) + 1e-12);
        }
    }

    #[test]
    fn ball_mass_is_monotone_in_radius(seed in any::<u64>(), n in 10usize..5000, e1 in 0.001..1.0f64, e2 in 0.001..1.0f64) {
        let model = GaussianLocation::default();
        let buf = DiscrepancyBuffer::new(|r| model.draw_discrepancy(n, r), model.noise_sd, n, 2000, seed).unwrap();
        let (lo, hi) = if e1 <= e2 { (e1, e2) } else { (e2, e1) };
        let (a, b) = (buf.estimate(lo), buf.estimate(hi));
        prop_assert!(a.mass <= b.mass);
        prop_assert!(a.complexity >= b.complexity);
        prop_assert!(a.complexity >= 0.0);
        prop_assert!(a.mass_ci.0 <= a.mass && a.mass <= a.mass_ci.1);
    }

    #[test]
    fn entropy_bound_decreases_in_radius(a in 2.0..10.0f64, d in 1usize..4, u in 0.01..0.99f64, v in 0.01..0.99f64) {
        let ceiling = a.powf(-(d as f64) / 2.0);
        let (lo, hi) = if u <= v { (u, v) } else { (v, u) };
        let big = kernels::entropy_lower_bound(a, d, lo * ceiling, 1.0).unwrap();
        let small = kernels::entropy_lower_bound(a, d, hi * ceiling, 1.0).unwrap();
        prop_assert!(big >= small);
    }

    #[test]
    fn mixture_weights_respect_floor(seed in any::<u64>(), m in 1usize..6, dim in 0usize..3) {
        let h = DrvsHyper::default();
        let theta = drvs::drvs_prior_sample(m, dim, 0.3, &h, seed).unwrap();
        let floor = h.weight_floor_b / m as f64;
        prop_assert!(theta.weights.iter().all(|w| *w > floor || m == 1));
        prop_assert!(theta.mu_x.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!((theta.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }
}
