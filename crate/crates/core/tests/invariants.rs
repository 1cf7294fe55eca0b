use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sbs_core::cache::flipped;
use sbs_core::io::checkpoint::parse_checkpoint;
use sbs_core::io::{checkpoint_to_string, Checkpoint};
use sbs_core::optimizer::Progress;
use sbs_core::pattern::named_pattern;
use sbs_core::{AmplitudeCache, Boundary, Lattice, ParamMode, StringBondState, C64};

const PATTERNS: [&[&str]; 3] = [&["lines"], &["lines", "loops"], &["snake"]];

fn random_state(lx: usize, ly: usize, periodic: bool, pat: usize, d: usize, seed: u64) -> StringBondState {
    // Periodic extents of 2 would double every bond.
    let (boundary, lx, ly) = if periodic { (Boundary::Periodic, lx.max(3), ly.max(3)) } else { (Boundary::Open, lx, ly) };
    let l = Lattice::new(lx, ly, boundary, 2).unwrap();
    let p = named_pattern(&l, PATTERNS[pat]).unwrap();
    StringBondState::random(l, p, d, ParamMode::Complex, 0.5, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
}

fn close(a: C64, b: C64, tol: f64) -> bool {
    (a - b).norm() <= tol * a.norm().max(b.norm()).max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    // Every string is a trace or a boundary-vector contraction; both are
    // linear in each matrix, so scaling one site tensor scales the amplitude
    // by the number of strings through that site.
    #[test]
    fn amplitude_is_multilinear(lx in 2usize..4, ly in 2usize..4, periodic: bool, pat in 0usize..3,
                                d in 1usize..4, seed: u64, bits: u16, site_pick: usize, c_re in 0.5f64..2.0) {
        let mut st = random_state(lx, ly, periodic, pat, d, seed);
        let n = st.n_sites();
        let config: Vec<u8> = (0..n).map(|i| (bits >> i & 1) as u8).collect();
        let site = site_pick % n;
        let before = st.amplitude(&config).to_complex();
        let slots: Vec<_> = st.slots().filter(|&s| st.slot_site(s) == site).collect();
        for &slot in &slots {
            st.tensor_mut(slot).iter_mut().for_each(|z| *z *= c_re);
        }
        let after = st.amplitude(&config).to_complex();
        prop_assert!(close(after, before * c_re.powi(slots.len() as i32), 1e-10));
    }

    // After an arbitrary walk of single and double flips the incremental
    // ratios and the cached amplitude agree with from-scratch products.
    #[test]
    fn cached_walk_matches_scratch(lx in 2usize..4, ly in 2usize..4, periodic: bool, pat in 0usize..3,
                                   d in 1usize..4, seed: u64, bits: u16,
                                   moves in prop::collection::vec((any::<usize>(), any::<usize>(), any::<bool>()), 1..30)) {
        let st = random_state(lx, ly, periodic, pat, d, seed);
        let n = st.n_sites();
        let mut config: Vec<u8> = (0..n).map(|i| (bits >> i & 1) as u8).collect();
        let mut cache = AmplitudeCache::new(&st, &config).unwrap();
        for (a, b, pair) in moves {
            let (a, b) = (a % n, b % n);
            let mut changes = vec![(a, flipped(config[a], 2))];
            if pair && b != a {
                changes.push((b, flipped(config[b], 2)));
            }
            let mut next = config.clone();
            for &(s, v) in &changes {
                next[s] = v;
            }
            let old = st.amplitude(&config).to_complex();
            let new = st.amplitude(&next).to_complex();
            let r = cache.ratio(&st, &changes).unwrap();
            prop_assert!(close(r * old, new, 1e-9), "ratio {r} vs {}", new / old);
            cache.apply(&st, &changes);
            config = next;
            prop_assert_eq!(cache.config(), &config[..]);
            prop_assert!(close(cache.amplitude().to_complex(), new, 1e-9));
        }
    }

    #[test]
    fn checkpoint_round_trip_is_exact(lx in 2usize..4, ly in 2usize..4, periodic: bool, pat in 0usize..3,
                                      d in 1usize..4, seed: u64, with_progress: bool,
                                      iter in 0usize..10_000, eta in 1e-6f64..10.0, samples in 1usize..100_000) {
        let st = random_state(lx, ly, periodic, pat, d, seed);
        let progress = with_progress.then_some(Progress { iter, eta, samples });
        let ck = Checkpoint { state: st, seed, progress };
        let text = checkpoint_to_string(&ck);
        let back = parse_checkpoint(&text).unwrap();
        prop_assert_eq!(back.seed, ck.seed);
        prop_assert_eq!(&back.progress, &ck.progress);
        prop_assert_eq!(back.state.params(), ck.state.params());
        prop_assert_eq!(back.state.pattern().to_descriptor(), ck.state.pattern().to_descriptor());
        prop_assert_eq!(checkpoint_to_string(&back), text);
    }
}
