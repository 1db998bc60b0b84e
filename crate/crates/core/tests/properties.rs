use polyorder::envlat::{apply_elementary_shift, sample_tree_env, ConfigEnumeration, EnvSpec, Mark, MarkSet, Node};
use polyorder::pam_ct::ct_partition_exact;
use polyorder::stats::substream;
use proptest::prelude::*;

fn env_spec() -> impl Strategy<Value = EnvSpec> {
    prop::collection::vec((-1.0f64..2.0, 0.05f64..1.0), 1..=3).prop_map(|atoms| {
        let total: f64 = atoms.iter().map(|a| a.1).sum();
        EnvSpec::new(atoms.into_iter().map(|(v, p)| (v, p / total)).collect()).unwrap()
    })
}

fn permutation(k: usize) -> impl Strategy<Value = Vec<usize>> {
    Just((1..=k).collect::<Vec<_>>()).prop_shuffle()
}

proptest! {
    #[test]
    fn enumeration_is_complete(spec in env_spec(), cells in 1usize..=6) {
        let en = ConfigEnumeration::new(&spec, cells, 1_000_000).unwrap();
        let mut count = 0u64;
        let mut mass = 0.0;
        en.for_each(|values, p| {
            assert_eq!(values.len(), cells);
            count += 1;
            mass += p;
        });
        prop_assert_eq!(count, (spec.atoms().len() as u64).pow(cells as u32));
        prop_assert_eq!(count, en.n_configurations());
        prop_assert!((mass - 1.0).abs() < 1e-12);
    }

    #[test]
    fn elementary_shifts_keep_level_multisets(
        spec in env_spec(),
        (k, perm) in (2usize..=3).prop_flat_map(|k| (Just(k), permutation(k))),
        t in 1usize..=3,
        path in prop::collection::vec(1usize..=3, 0..3),
        seed in any::<u64>(),
    ) {
        let depth = path.len().min(t - 1);
        let v = Node(path[..depth].iter().map(|&a| a.min(k)).collect());
        let env = sample_tree_env(&spec, k, t, &mut substream(seed, 0)).unwrap();
        let out = apply_elementary_shift(&env, &v, &perm).unwrap();
        for d in 1..=t {
            let mut a = env.level(d).to_vec();
            let mut b = out.level(d).to_vec();
            a.sort_by(f64::total_cmp);
            b.sort_by(f64::total_cmp);
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn certified_interval_is_ordered_and_narrow(
        raw in prop::collection::vec((0.0f64..1.0, -2i64..=2, -1.0f64..2.0), 0..5),
        kappa in 0.0f64..3.0,
        t in 0.05f64..1.5,
        log_eps in -9.0f64..-3.0,
    ) {
        let mut marks: Vec<Mark> = Vec::new();
        for (u, x, r) in raw {
            let time = u * t;
            if marks.iter().all(|m| (m.time - time).abs() > 1e-9) {
                marks.push(Mark { time, site: vec![x], r });
            }
        }
        let set = MarkSet::new(1, t, 2, marks).unwrap();
        let eps = 10f64.powf(log_eps);
        let iv = ct_partition_exact(&set, kappa, t, eps).unwrap();
        prop_assert!(0.0 <= iv.lo && iv.lo <= iv.hi);
        prop_assert!(iv.hi - iv.lo <= eps);
    }
}
