use std::collections::HashSet;
use std::sync::Arc;

use proptest::prelude::*;

use popcal::ingest::{
    map_user_counts, split_train_test, train_quota, CountMapping, IdIndex, Interaction, RatingDataset, RatingScale,
};
use popcal::metrics::{agg_div, arp, gini, gini_of_counts, upd};
use popcal::popularity::{
    partition_items, ItemGroup, ItemPopularity, PopularityDistribution, PopularityPartition, UserGroup,
    UserGroupAssignment,
};
use popcal::rerank::{js_divergence, RecommendationList};

fn distribution() -> impl Strategy<Value = PopularityDistribution> {
    prop::array::uniform3(0u32..20)
        .prop_filter("some mass", |m| m.iter().sum::<u32>() > 0)
        .prop_map(|m| PopularityDistribution::from_mass(m.map(f64::from)).unwrap())
}

proptest! {
    #[test]
    fn partition_matches_brute_force(counts in prop::collection::vec(0u32..60, 3..40)) {
        prop_assume!(counts.iter().filter(|&&c| c > 0).count() >= 3);
        let pop = ItemPopularity::from_counts(counts.clone(), 100);
        let part = partition_items(&pop, 0.2, 0.2).unwrap();

        let mut order: Vec<usize> = (0..counts.len()).filter(|&i| counts[i] > 0).collect();
        order.sort_by_key(|&i| (std::cmp::Reverse(counts[i]), i));
        let total: u64 = counts.iter().map(|&c| c as u64).sum();
        let mass = |idx: &[usize]| idx.iter().map(|&i| counts[i] as u64).sum::<u64>();
        // exact rational comparisons against a share of 1/5
        let h = (1..=order.len()).find(|&h| 5 * mass(&order[..h]) >= total).unwrap();
        let rest = &order[h..];
        let t = (0..=rest.len()).rev().find(|&t| 5 * mass(&rest[rest.len() - t..]) <= total).unwrap();
        for (rank, &i) in order.iter().enumerate() {
            let want = if rank < h {
                ItemGroup::Head
            } else if rank < order.len() - t {
                ItemGroup::Mid
            } else {
                ItemGroup::Tail
            };
            prop_assert_eq!(part.group(i as u32), Some(want));
        }
        for (i, &c) in counts.iter().enumerate() {
            if c == 0 {
                prop_assert_eq!(part.group(i as u32), None);
            }
        }
    }

    #[test]
    fn jsd_is_symmetric_and_bounded(p in distribution(), q in distribution()) {
        let a = js_divergence(&p, &q);
        let b = js_divergence(&q, &p);
        prop_assert!((a - b).abs() < 1e-15);
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(js_divergence(&p, &p).abs() < 1e-15);
    }

    #[test]
    fn gini_is_scale_invariant_and_bounded(counts in prop::collection::vec(0u64..50, 2..30), k in 1u64..20) {
        prop_assume!(counts.iter().any(|&c| c > 0));
        let g = gini_of_counts(&counts);
        prop_assert!((0.0..=1.0).contains(&g));
        let scaled: Vec<u64> = counts.iter().map(|&c| c * k).collect();
        prop_assert!((gini_of_counts(&scaled) - g).abs() < 1e-12);
    }

    #[test]
    fn gini_is_zero_on_uniform_exposure(n in 2usize..40, c in 1u64..100) {
        prop_assert_eq!(gini_of_counts(&vec![c; n]), 0.0);
    }

    #[test]
    fn adding_an_unrecommended_item_never_lowers_agg_div(
        lists in prop::collection::vec(prop::collection::btree_set(0u32..12, 1..5), 1..5),
        who in any::<prop::sample::Index>(),
    ) {
        let catalog = 12;
        let mut ls: Vec<RecommendationList> = lists
            .iter()
            .enumerate()
            .map(|(u, s)| RecommendationList::new(u as u32, s.iter().copied().collect()))
            .collect();
        let before = agg_div(&ls, catalog).unwrap();
        let seen: HashSet<u32> = ls.iter().flat_map(|l| l.items.clone()).collect();
        if let Some(fresh) = (0..catalog as u32).find(|i| !seen.contains(i)) {
            let u = who.index(ls.len());
            ls[u].items.push(fresh);
            prop_assert!(agg_div(&ls, catalog).unwrap() >= before);
        }
    }

    #[test]
    fn upd_is_the_mean_of_its_groups(
        lists in prop::collection::vec(prop::collection::btree_set(0u32..9, 1..4), 3..8),
        profiles in prop::collection::vec(distribution(), 8),
    ) {
        let groups = (0..9).map(|i| Some(ItemGroup::ALL[i % 3])).collect();
        let part = PopularityPartition::from_groups(groups, &[5; 9]).unwrap();
        let n = lists.len();
        let assign = UserGroupAssignment::from_parts(
            (0..n).map(|u| UserGroup::ALL[u * 3 / n]).collect(),
            vec![0.0; n],
        ).unwrap();
        let ls: Vec<RecommendationList> = lists
            .iter()
            .enumerate()
            .map(|(u, s)| RecommendationList::new(u as u32, s.iter().copied().collect()))
            .collect();
        let r = upd(&ls, &profiles, &part, &assign).unwrap();
        let mean = (r.per_group[0] + r.per_group[1] + r.per_group[2]) / 3.0;
        prop_assert!((r.overall - mean).abs() < 1e-15);
    }

    #[test]
    fn metrics_ignore_list_order(
        lists in prop::collection::vec(prop::collection::btree_set(0u32..10, 1..5), 2..6),
        seed in any::<u64>(),
    ) {
        let counts: Vec<u32> = (0..10).map(|i| 3 + (i * 7) % 11).collect();
        let pop = ItemPopularity::from_counts(counts, 40);
        let mut ls: Vec<RecommendationList> = lists
            .iter()
            .enumerate()
            .map(|(u, s)| RecommendationList::new(u as u32, s.iter().copied().collect()))
            .collect();
        let before = (arp(&ls, &pop, true).unwrap(), gini(&ls, &pop), agg_div(&ls, 10).unwrap());
        let k = (seed as usize) % ls.len();
        ls.rotate_left(k);
        ls.reverse();
        let after = (arp(&ls, &pop, true).unwrap(), gini(&ls, &pop), agg_div(&ls, 10).unwrap());
        prop_assert_eq!(before, after);
    }

    #[test]
    fn split_partitions_every_profile(
        sizes in prop::collection::vec(1usize..15, 1..8),
        ratio in 0.5f64..0.95,
        seed in any::<u64>(),
    ) {
        let n_items = 15;
        let users: IdIndex = (0..sizes.len()).map(|u| format!("u{u}")).collect();
        let items: IdIndex = (0..n_items).map(|i| format!("i{i}")).collect();
        let xs: Vec<Interaction> = sizes
            .iter()
            .enumerate()
            .flat_map(|(u, &k)| (0..k).map(move |i| Interaction {
                user: u as u32,
                item: ((i * 4 + u) % n_items) as u32,
                rating: 1.0 + (i % 5) as f64,
                timestamp: None,
            }))
            .collect();
        let ds = RatingDataset::new(xs, Arc::new(users), Arc::new(items), RatingScale::default()).unwrap();
        let sp = split_train_test(&ds, ratio, seed).unwrap();
        prop_assert_eq!(sp.train.len() + sp.test.len(), ds.len());
        for u in 0..ds.n_users() as u32 {
            let train: HashSet<u32> = sp.train.profile(u).iter().map(|x| x.item).collect();
            let test: HashSet<u32> = sp.test.profile(u).iter().map(|x| x.item).collect();
            let all: HashSet<u32> = ds.profile(u).iter().map(|x| x.item).collect();
            prop_assert!(train.is_disjoint(&test));
            prop_assert_eq!(&train.union(&test).copied().collect::<HashSet<_>>(), &all);
            prop_assert_eq!(train.len(), train_quota(all.len(), ratio));
        }
        prop_assert_eq!(split_train_test(&ds, ratio, seed).unwrap().test, sp.test);
    }

    #[test]
    fn count_mappings_are_monotone(counts in prop::collection::vec(1u64..5000, 1..40)) {
        let scale = RatingScale::default();
        for mapping in [CountMapping::quantile_for(scale), CountMapping::LogLinear] {
            let r = map_user_counts(&counts, scale, mapping);
            for i in 0..counts.len() {
                prop_assert!(scale.contains(r[i]));
                for j in 0..counts.len() {
                    if counts[i] < counts[j] {
                        prop_assert!(r[i] <= r[j]);
                    }
                }
            }
        }
    }
}
