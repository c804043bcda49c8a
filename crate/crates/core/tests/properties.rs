mod common;

use proptest::prelude::*;
use r2audit_core::prob::{binom_pmf, convolve_direct, convolve_fft};
use r2audit_core::stopping::{athena_kmin, ln_sigma, minerva_kmin, sigma, tail_ratio};
use r2audit_core::{AuditConfig, Hypothesis, PairedDistribution, Rule, TailRatio, TallyPmf};

fn schedule_strategy(max_total: u64, max_rounds: usize) -> impl Strategy<Value = Vec<u64>> {
    prop::collection::btree_set(1..=max_total, 1..=max_rounds).prop_map(|s| s.into_iter().collect())
}

fn tail_rule() -> impl Strategy<Value = Rule> {
    prop_oneof![Just(Rule::Minerva), Just(Rule::Athena)]
}

fn config(rule: Rule, p: f64, alpha: f64, delta: f64) -> AuditConfig {
    let mut cfg = AuditConfig::new(rule, p, alpha).unwrap();
    cfg.allow_small_delta = true;
    cfg.with_delta(delta).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn mass_is_conserved(p in 0.51f64..0.95, sched in schedule_strategy(300, 5), rule in tail_rule()) {
        let cfg = config(rule, p, 0.1, 1.0);
        for (_, _, _, d) in common::engine_rounds(&sched, &cfg) {
            prop_assert!((d.ha.total_mass() + d.ha.removed_total() - 1.0).abs() < 1e-12);
            prop_assert!((d.h0.total_mass() + d.h0.removed_total() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn upper_tails_never_increase(p in 0.51f64..0.95, sched in schedule_strategy(200, 4)) {
        let cfg = config(Rule::Minerva, p, 0.1, 1.0);
        for (_, _, _, d) in common::engine_rounds(&sched, &cfg) {
            for t in [d.ha.upper_tails(), d.h0.upper_tails()] {
                prop_assert!(t.windows(2).all(|w| w[1] <= w[0]));
            }
        }
    }

    #[test]
    fn sigma_strictly_increases_in_k(p in 0.51f64..0.99, n in 1u64..2000) {
        let mut prev = ln_sigma(0, p, n).unwrap();
        for k in 1..=n {
            let cur = ln_sigma(k, p, n).unwrap();
            prop_assert!(cur > prev);
            prev = cur;
        }
    }

    #[test]
    fn tail_ratio_dominates_sigma(p in 0.51f64..0.9, sched in schedule_strategy(120, 3)) {
        let cfg = config(Rule::Minerva, p, 0.1, 1.0);
        let mut dist = PairedDistribution::new(p).unwrap();
        for &n in &sched {
            let round = dist.advance(n).unwrap();
            let top = round.ha.support_max();
            for k in 0..=top {
                if round.h0.at(k) < 1e-250 {
                    continue;
                }
                let s = sigma(k, p, n).unwrap();
                if let TailRatio::Value(t) = tail_ratio(&round.h0, &round.ha, k).unwrap() {
                    prop_assert!(t >= s * (1.0 - 1e-9), "k={k} tau={t} sigma={s}");
                    if k == top {
                        prop_assert!((t / s - 1.0).abs() < 1e-9);
                    }
                }
            }
            let kmin = round.kmin(&cfg).unwrap();
            dist = round.truncate(kmin).unwrap().0;
        }
    }

    #[test]
    fn likelihood_ratio_identity_holds(p in 0.51f64..0.95, sched in schedule_strategy(400, 5), rule in tail_rule()) {
        let cfg = config(rule, p, 0.1, 1.0);
        for (_, _, _, d) in common::engine_rounds(&sched, &cfg) {
            prop_assert!(d.likelihood_ratio_residual() < 1e-9);
        }
    }

    #[test]
    fn per_round_risk_is_bounded(
        p in 0.51f64..0.95,
        alpha in 0.01f64..0.3,
        sched in schedule_strategy(400, 5),
        rule in tail_rule(),
    ) {
        let cfg = config(rule, p, alpha, 1.0);
        let mut cum_risk = 0.0;
        for (_, s, r, _) in common::engine_rounds(&sched, &cfg) {
            prop_assert!(r <= alpha * s * (1.0 + 1e-9) + 1e-300);
            cum_risk += r;
        }
        prop_assert!(cum_risk <= alpha);
    }

    #[test]
    fn athena_accepts_only_strong_evidence(
        p in 0.51f64..0.95,
        alpha in 0.01f64..0.3,
        delta in 0.05f64..2.0,
        sched in schedule_strategy(300, 4),
    ) {
        let cfg = config(Rule::Athena, p, alpha, delta);
        for (kmin, _, _, d) in common::engine_rounds(&sched, &cfg) {
            let n = d.draws_total();
            if kmin <= n {
                prop_assert!(ln_sigma(kmin, p, n).unwrap() >= (1.0 / delta).ln() - 1e-12);
            }
        }
    }

    #[test]
    fn truncate_then_convolve_matches_direct_sum(
        p in 0.51f64..0.95,
        n1 in 1u64..80,
        d in 1u64..80,
        frac in 0.3f64..1.0,
    ) {
        let kmin = ((n1 as f64 * frac).ceil() as u64).max(1);
        let h = Hypothesis::Alt { p };
        let (trunc, _) = TallyPmf::fresh(h, n1).unwrap().truncate_above(kmin).unwrap();
        let next = trunc.convolve_round(d).unwrap();
        for k in 0..=n1 + d {
            let mut want = 0.0;
            for i in 0..kmin.min(n1 + 1) {
                if k >= i && k - i <= d {
                    want += binom_pmf(i, n1, p).unwrap() * binom_pmf(k - i, d, p).unwrap();
                }
            }
            prop_assert!((next.at(k) - want).abs() < 1e-14);
        }
    }

    #[test]
    fn fft_matches_direct_convolution(p in 0.3f64..0.9, n1 in 1u64..500, d in 1u64..500) {
        let a = TallyPmf::fresh(Hypothesis::Alt { p }, n1).unwrap();
        let b = TallyPmf::fresh(Hypothesis::Alt { p }, d).unwrap();
        let direct = convolve_direct(a.mass(), b.mass());
        let fft = convolve_fft(a.mass(), b.mass());
        let peak = direct.iter().cloned().fold(0.0, f64::max);
        for (x, y) in direct.iter().zip(&fft) {
            prop_assert!((x - y).abs() <= 1e-9 * peak);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn engine_matches_enumeration(
        p in 0.55f64..0.9,
        alpha in 0.05f64..0.4,
        sched in schedule_strategy(14, 4),
        rule in prop_oneof![Just(Rule::Minerva), Just(Rule::Athena), Just(Rule::EoRBravo)],
        delta in 0.2f64..1.5,
    ) {
        let cfg = config(rule, p, alpha, delta);
        let (gap, kmins_agree) = common::oracle_gap(&sched, &cfg);
        prop_assert!(gap < 1e-10, "gap {gap}");
        prop_assert!(kmins_agree);
    }

    #[test]
    fn kmin_dominance_holds(p in 0.51f64..0.95, alpha in 0.01f64..0.3, dmul in 1.0f64..20.0, n in 1u64..=200) {
        let delta = alpha * dmul;
        let h0 = TallyPmf::fresh(Hypothesis::Null, n).unwrap();
        let ha = TallyPmf::fresh(Hypothesis::Alt { p }, n).unwrap();
        let minerva = minerva_kmin(&h0, &ha, alpha).unwrap();
        let athena = athena_kmin(&h0, &ha, &config(Rule::Athena, p, alpha, delta)).unwrap();
        let bravo = AuditConfig::new(Rule::EoRBravo, p, alpha).unwrap().line().kmin(n).min(n + 1);
        prop_assert!(minerva <= athena, "minerva {minerva} athena {athena}");
        prop_assert!(athena <= bravo, "athena {athena} bravo {bravo}");
    }

    #[test]
    fn every_ballot_rounds_reduce_to_ballot_by_ballot(
        p in prop_oneof![Just(0.6), Just(0.7), Just(0.75), 0.55f64..0.9],
        alpha in prop_oneof![Just(0.05), Just(0.1), 0.02f64..0.3],
        rule in tail_rule(),
    ) {
        let cfg = config(rule, p, alpha, 1.0);
        let b2 = AuditConfig::new(Rule::B2Bravo, p, alpha).unwrap();
        let mut dist = PairedDistribution::new(p).unwrap();
        let mut step = PairedDistribution::new(p).unwrap();
        for n in 1..=200u64 {
            let round = dist.advance(n).unwrap();
            let kmin = round.kmin(&cfg).unwrap();
            let (next, s, r) = round.truncate(kmin).unwrap();
            let (bnext, bs, br) = step.advance_ballot_by_ballot(n, &b2).unwrap();
            prop_assert!((s - bs).abs() <= 1e-12 && (r - br).abs() <= 1e-12, "n={n}: {s} vs {bs}, {r} vs {br}");
            if s > 0.0 {
                prop_assert_eq!(kmin, b2.line().kmin(n));
            }
            dist = next;
            step = bnext;
        }
    }
}
