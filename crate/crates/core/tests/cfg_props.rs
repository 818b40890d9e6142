mod common;

use common::*;
use kedge::{parse_cfg, serialize_cfg, validate_cfg};
use proptest::prelude::*;

#[test]
fn k_reach_matches_walk_enumeration() {
    let mut rng = SeededRng::new(11);
    for _ in 0..300 {
        let n = rng.range(1, 8) as usize;
        let cfg = random_cfg(&mut rng, n, 3);
        for u in cfg.blocks().iter().map(|bb| bb.id) {
            for k in 0..=5 {
                let got: Vec<_> = cfg.k_reach(u, k).unwrap();
                let mut want: Vec<_> = brute_k_reach(&cfg, u, k).into_iter().collect();
                want.sort_by_key(|&(id, d)| (d, id));
                assert_eq!(got, want, "u={u} k={k}\n{}", serialize_cfg(&cfg));
            }
        }
    }
}

#[test]
fn k_reach_grows_with_k() {
    let mut rng = SeededRng::new(12);
    for _ in 0..200 {
        let cfg = random_cfg(&mut rng, 12, 3);
        let u = cfg.entry();
        for k in 0..8 {
            let small = cfg.k_reach(u, k).unwrap();
            let big = cfg.k_reach(u, k + 1).unwrap();
            assert!(small.iter().all(|x| big.contains(x)));
        }
    }
}

#[test]
fn hit_probability_matches_enumeration() {
    let mut rng = SeededRng::new(13);
    for _ in 0..200 {
        let n = rng.range(1, 6) as usize;
        let cfg = random_cfg(&mut rng, n, 3);
        for u in cfg.blocks().iter().map(|bb| bb.id) {
            for t in cfg.blocks().iter().map(|bb| bb.id) {
                let mut last = 0.0;
                for k in 0..=4 {
                    let p = cfg.hit_probability(u, t, k).unwrap();
                    let want = brute_hit_probability(&cfg, u, t, k);
                    assert!((p - want).abs() < 1e-12, "u={u} t={t} k={k}: {p} vs {want}");
                    assert!((0.0..=1.0 + 1e-12).contains(&p));
                    assert!(p >= last - 1e-12, "not monotone in k");
                    last = p;
                }
            }
        }
    }
}

#[test]
fn hit_probability_agrees_with_monte_carlo() {
    let cfg = cfg(FIG2);
    let exact = cfg.hit_probability(b(0), b(7), 3).unwrap();
    let walks = 1_000_000u64;
    let mut rng = SeededRng::new(14);
    let mut hits = 0u64;
    for _ in 0..walks {
        let mut at = b(0);
        for _ in 0..3 {
            let out = cfg.successors(at).unwrap();
            let draw = (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64;
            let mut acc = 0.0;
            at = out.last().unwrap().0;
            for (id, p) in out {
                acc += p;
                if draw < acc {
                    at = id;
                    break;
                }
            }
            if at == b(7) {
                hits += 1;
                break;
            }
        }
    }
    let est = hits as f64 / walks as f64;
    let sigma = (exact * (1.0 - exact) / walks as f64).sqrt();
    assert!(
        (est - exact).abs() <= 3.0 * sigma,
        "estimate {est}, exact {exact}"
    );
}

#[test]
fn fixtures_are_valid() {
    for text in [CHAIN3, DIAMOND, FIG1, FIG2, FIG5, CHAIN10] {
        let cfg = cfg(text);
        assert!(validate_cfg(&cfg).is_ok(), "{}", validate_cfg(&cfg));
    }
}

#[test]
fn branching_fixture_distances() {
    let cfg = cfg(FIG2);
    let reach = cfg.k_reach(b(0), 2).unwrap();
    assert_eq!(
        reach,
        vec![
            (b(1), 1),
            (b(2), 1),
            (b(4), 2),
            (b(5), 2),
            (b(8), 2),
            (b(9), 2)
        ]
    );
    assert!(cfg.k_reach(b(1), 3).unwrap().contains(&(b(7), 3)));
    assert!(!cfg
        .k_reach(b(1), 2)
        .unwrap()
        .iter()
        .any(|&(id, _)| id == b(7)));
}

proptest! {
    #[test]
    fn serialize_round_trips(seed in any::<u64>(), n in 1usize..15) {
        let mut rng = SeededRng::new(seed);
        let cfg = random_cfg(&mut rng, n, 3);
        let text = serialize_cfg(&cfg);
        let back = parse_cfg(&text).unwrap();
        prop_assert_eq!(serialize_cfg(&back), text);
        prop_assert_eq!(back.entry(), cfg.entry());
        prop_assert_eq!(back.blocks(), cfg.blocks());
        prop_assert!(validate_cfg(&back).is_ok());
    }
}
