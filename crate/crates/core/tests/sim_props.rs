mod common;

use common::*;
use kedge::sim::{sweep, CostModel, EventKind};
use kedge::{run, DecompMode, EdgeLimit, PolicyConfig, Trace};
use proptest::prelude::*;

fn config(k: EdgeLimit, mode: DecompMode, cap: Option<u64>) -> PolicyConfig {
    PolicyConfig {
        k_compress: k,
        decomp_mode: mode,
        cap,
        ..PolicyConfig::default()
    }
}

fn mode_strategy() -> impl Strategy<Value = DecompMode> {
    prop_oneof![
        Just(DecompMode::OnDemand),
        Just(DecompMode::PreAll),
        Just(DecompMode::PreSingle)
    ]
}

fn k_strategy() -> impl Strategy<Value = EdgeLimit> {
    prop_oneof![
        (1u32..5).prop_map(EdgeLimit::Finite),
        Just(EdgeLimit::Infinite)
    ]
}

#[test]
fn zero_cost_on_demand_never_stalls() {
    let cfg = cfg(FIG1);
    for seed in 0..50 {
        let t = kedge::generate_trace(&cfg, seed, 200).unwrap();
        let r = run(&cfg, &t, &PolicyConfig::default(), &CostModel::default()).unwrap();
        assert_eq!(r.metrics.stall_cycles, 0);
        assert_eq!(r.metrics.total_cycles, r.metrics.baseline_cycles);
    }
}

#[test]
fn cap_below_largest_block_is_infeasible() {
    let cfg = cfg(FIG2);
    let cap = cfg.total_compressed_size() + cfg.max_uncompressed_size() - 1;
    let t = kedge::generate_trace(&cfg, 3, 50).unwrap();
    let err = run(
        &cfg,
        &t,
        &config(EdgeLimit::Finite(2), DecompMode::OnDemand, Some(cap)),
        &CostModel::default(),
    )
    .unwrap_err();
    assert!(err.is_infeasible(), "{err}");
}

#[test]
fn mismatched_trace_is_rejected() {
    let cfg = cfg(FIG5);
    let err = run(
        &cfg,
        &Trace::replayed(ids(&[0, 3])),
        &PolicyConfig::default(),
        &CostModel::default(),
    )
    .unwrap_err();
    assert!(!err.is_infeasible());
}

#[test]
fn sweep_on_demand_costs_fall_with_k() {
    let cfg = cfg(FIG1);
    let t = kedge::generate_trace(&cfg, 9, 400).unwrap();
    let cost = CostModel {
        decomp_base: 20,
        decomp_per_byte: 1,
        exception_cycles: 5,
        ..CostModel::default()
    };
    let ks = [1, 2, 3, 4, 8]
        .map(EdgeLimit::Finite)
        .into_iter()
        .chain([EdgeLimit::Infinite])
        .collect::<Vec<_>>();
    let rows = sweep(
        &cfg,
        &t,
        &PolicyConfig::default(),
        &cost,
        &ks,
        &[DecompMode::OnDemand],
    )
    .unwrap();
    assert_eq!(rows.len(), ks.len());
    for w in rows.windows(2) {
        let (a, b) = (&w[0].metrics, &w[1].metrics);
        assert!(b.demand_misses <= a.demand_misses);
        assert!(b.stall_cycles <= a.stall_cycles);
        assert!(b.peak_footprint >= a.peak_footprint);
    }
    let last = &rows.last().unwrap().metrics;
    let distinct: std::collections::BTreeSet<_> = t.steps.iter().collect();
    assert_eq!(last.demand_misses, distinct.len() as u64);
    assert_eq!(last.deletions, 0);
}

#[test]
fn sweep_rejects_zero_k() {
    let cfg = cfg(FIG5);
    let t = Trace::replayed(ids(&[0, 1, 3]));
    let r = sweep(
        &cfg,
        &t,
        &PolicyConfig::default(),
        &CostModel::default(),
        &[EdgeLimit::Finite(0)],
        &[DecompMode::OnDemand],
    );
    assert!(r.is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn run_invariants(
        seed in any::<u64>(),
        n in 1usize..16,
        steps in 1usize..200,
        mode in mode_strategy(),
        k in k_strategy(),
        k_pre in 1u32..4,
        capped in any::<bool>(),
        costs in (0u64..40, 0u64..3, 0u64..20, 0u64..5, 0u64..10),
    ) {
        let mut rng = SeededRng::new(seed);
        let cfg = random_cfg(&mut rng, n, 3);
        let t = kedge::generate_trace(&cfg, seed, steps).unwrap();
        let floor = cfg.total_compressed_size();
        let cap = capped.then(|| floor + cfg.max_uncompressed_size() + rng.below(200));
        let policy = PolicyConfig { k_pre, ..config(k, mode, cap) };
        let cost = CostModel {
            decomp_base: costs.0,
            decomp_per_byte: costs.1,
            exception_cycles: costs.2,
            patch_cycles: costs.3,
            compress_cycles: costs.4,
        };
        let r = run(&cfg, &t, &policy, &cost).unwrap();
        let m = &r.metrics;

        prop_assert_eq!(executions_of_compressed(&r.timeline), 0);
        prop_assert!(r.timeline.windows(2).all(|w| w[0].cycle <= w[1].cycle));
        prop_assert!(r.timeline.iter().all(|e| e.footprint_after >= floor));
        if let Some(cap) = cap {
            prop_assert!(r.timeline.iter().all(|e| e.footprint_after <= cap));
        }
        prop_assert!(m.peak_footprint >= floor);
        prop_assert!(m.avg_footprint >= floor as f64 && m.avg_footprint <= m.peak_footprint as f64);
        prop_assert_eq!(m.total_cycles, m.baseline_cycles + m.stall_cycles + cost.exception_cycles * m.demand_misses);
        prop_assert_eq!(m.baseline_uncompressed_footprint, cfg.total_uncompressed_size());

        let count = |kind| r.timeline.iter().filter(|e| e.kind == kind).count() as u64;
        prop_assert_eq!(count(EventKind::ExecStart), t.steps.len() as u64);
        prop_assert_eq!(count(EventKind::DemandMiss), m.demand_misses);
        prop_assert_eq!(count(EventKind::DecompEnd), m.decompressions());
        // a speculative job may still be running when the trace ends
        prop_assert!(count(EventKind::DecompStart) >= m.decompressions());
        prop_assert_eq!(count(EventKind::Delete), m.deletions);
        prop_assert_eq!(count(EventKind::Evict), m.evictions);
        prop_assert_eq!(count(EventKind::Patch), m.patches);
        prop_assert_eq!(
            m.background_cycles,
            cost.compress_cycles * (m.deletions + m.evictions) + cost.patch_cycles * m.patches
        );
        if mode == DecompMode::OnDemand {
            prop_assert_eq!(m.pre_decompressions, 0);
            prop_assert_eq!(m.demand_decompressions, m.demand_misses);
        }
        if cap.is_none() {
            prop_assert_eq!(m.evictions, 0);
        }
        if k == EdgeLimit::Infinite {
            prop_assert_eq!(m.deletions, 0);
        }
    }
}
