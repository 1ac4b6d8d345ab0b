#![allow(clippy::needless_range_loop)]

mod common;

use std::collections::{BTreeSet, HashMap};

use common::{adversarial_instance, brute_force_ap, random_features, refine_oracle};

use proptest::prelude::*;
use sft_core::manifest::SampleTag;
use sft_core::retrieval::{
    evaluate, k_reciprocal_distances, k_reciprocal_rerank, rank, sft_refine, ConfigEcho, KReciprocalParams, RankedItem,
    RankingList,
};
use sft_core::{FeatureMatrix, PortableRng};

fn tag(identity: u32, camera: u32) -> SampleTag {
    SampleTag { identity, camera }
}

#[test]
fn ap_matches_brute_force_on_every_pattern() {
    for n in 1..=10usize {
        for mask in 1u32..(1 << n) {
            let relevant: Vec<bool> = (0..n).map(|k| mask >> k & 1 == 1).collect();
            let gallery: Vec<SampleTag> = relevant
                .iter()
                .enumerate()
                .map(|(k, &r)| if r { tag(0, 1) } else { tag(k as u32 + 1, 1) })
                .collect();
            let ranking = RankingList {
                queries: vec![(0..n).map(|g| RankedItem { gallery: g, score: 0.0 }).collect()],
            };
            let report = evaluate(&ranking, &[tag(0, 0)], &gallery, ConfigEcho::default()).unwrap();
            let expect = brute_force_ap(&relevant);
            assert!((report.map - expect).abs() < 1e-15, "n={n} mask={mask:b}");
            assert_eq!(report.cmc_at(1), if relevant[0] { 1.0 } else { 0.0 });
        }
    }
}

#[test]
fn hand_example_and_perfect_ranking() {
    let gallery = [tag(0, 1), tag(1, 1), tag(0, 2)];
    let ranking = RankingList {
        queries: vec![(0..3).map(|g| RankedItem { gallery: g, score: 0.0 }).collect()],
    };
    let r = evaluate(&ranking, &[tag(0, 0)], &gallery, ConfigEcho::default()).unwrap();
    assert_eq!(r.map, (1.0 + 2.0 / 3.0) / 2.0);

    let perfect = RankingList {
        queries: vec![[0, 2, 1]
            .iter()
            .map(|&g| RankedItem { gallery: g, score: 0.0 })
            .collect()],
    };
    let r = evaluate(&perfect, &[tag(0, 0)], &gallery, ConfigEcho::default()).unwrap();
    assert_eq!((r.map, r.cmc_at(1)), (1.0, 1.0));
}

#[test]
fn rank_matches_brute_force_cosine_sort() {
    let mut rng = PortableRng::seed_from_u64(21);
    let q = random_features(&mut rng, 3, 4);
    let g = random_features(&mut rng, 6, 4);
    let qt = [tag(0, 0), tag(1, 0), tag(2, 0)];
    let gt: Vec<SampleTag> = (0..6).map(|i| tag(i % 3, 1)).collect();
    let r = rank(&q, &g, &qt, &gt).unwrap();
    for qi in 0..3 {
        let mut expect: Vec<(f64, usize)> = (0..6)
            .map(|gi| {
                let (a, b) = (q.row(qi), g.row(gi));
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                (dot / (na * nb), gi)
            })
            .collect();
        expect.sort_by(|x, y| y.0.partial_cmp(&x.0).unwrap().then(x.1.cmp(&y.1)));
        let got: Vec<usize> = r.queries[qi].iter().map(|i| i.gallery).collect();
        assert_eq!(got, expect.iter().map(|e| e.1).collect::<Vec<_>>());
    }
}

/// Independent evaluation of the refinement: explicit affinity, degree
/// normalization and product.
#[test]
fn refinement_promotes_the_same_cluster_item() {
    let (query, gallery) = adversarial_instance();
    let qf = FeatureMatrix::from_rows(&[query]).unwrap();
    let tags: Vec<SampleTag> = (0..5).map(|i| tag(i + 1, 1)).collect();
    let initial = rank(&qf, &gallery, &[tag(0, 0)], &tags).unwrap().queries.remove(0);
    let order: Vec<usize> = initial.iter().map(|i| i.gallery).collect();
    assert_eq!(order, vec![0, 1, 2, 4, 3]);

    let refined = sft_refine(&query, &initial, &gallery, 3, 0.5).unwrap();
    let head: Vec<usize> = refined[..3].iter().map(|i| i.gallery).collect();
    assert_eq!(head, vec![2, 0, 1]);
    assert_eq!(&refined[3..], &initial[3..]);

    let rows: Vec<&[f64]> = (0..3).map(|g| gallery.row(g)).collect();
    assert_eq!(refine_oracle(&query, &rows, 0.5), head);
}

/// Set-based k-reciprocal oracle: explicit neighbour sets and sparse
/// encodings.
fn kr_oracle(q: &FeatureMatrix, g: &FeatureMatrix, k1: usize, k2: usize) -> Vec<Vec<f64>> {
    let pts: Vec<Vec<f64>> = (0..q.n())
        .map(|i| q.row(i).to_vec())
        .chain((0..g.n()).map(|i| g.row(i).to_vec()))
        .collect();
    let n = pts.len();
    let cos = |a: &[f64], b: &[f64]| {
        let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        d / (a.iter().map(|x| x * x).sum::<f64>().sqrt() * b.iter().map(|x| x * x).sum::<f64>().sqrt())
    };
    let mut dist = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            dist[i][j] = (1.0 - cos(&pts[i], &pts[j])).max(0.0);
        }
        let m = dist[i].iter().cloned().fold(0.0, f64::max);
        for j in 0..n {
            dist[i][j] /= m;
        }
    }
    let neighbours = |i: usize, k: usize| -> Vec<usize> {
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| dist[i][a].partial_cmp(&dist[i][b]).unwrap().then(a.cmp(&b)));
        idx.truncate(k + 1);
        idx
    };
    let reciprocal = |i: usize, k: usize| -> BTreeSet<usize> {
        neighbours(i, k)
            .into_iter()
            .filter(|&j| neighbours(j, k).contains(&i))
            .collect()
    };
    let half = k1 / 2;
    let encodings: Vec<HashMap<usize, f64>> = (0..n)
        .map(|i| {
            let base = reciprocal(i, k1);
            let mut set = base.clone();
            for &c in &base {
                let cand = reciprocal(c, half);
                if 3 * cand.intersection(&base).count() > 2 * cand.len() {
                    set.extend(cand);
                }
            }
            let z: f64 = set.iter().map(|&j| (-dist[i][j]).exp()).sum();
            set.iter().map(|&j| (j, (-dist[i][j]).exp() / z)).collect()
        })
        .collect();
    let expanded: Vec<HashMap<usize, f64>> = (0..n)
        .map(|i| {
            let nb: Vec<usize> = neighbours(i, k2 - 1);
            let mut acc: HashMap<usize, f64> = HashMap::new();
            for &j in &nb {
                for (&key, &v) in &encodings[j] {
                    *acc.entry(key).or_default() += v / nb.len() as f64;
                }
            }
            acc
        })
        .collect();
    (0..q.n())
        .map(|qi| {
            (0..g.n())
                .map(|gi| {
                    let (a, b) = (&expanded[qi], &expanded[q.n() + gi]);
                    let inter: f64 = a.iter().map(|(k, &v)| v.min(*b.get(k).unwrap_or(&0.0))).sum();
                    1.0 - inter / (2.0 - inter)
                })
                .collect()
        })
        .collect()
}

#[test]
fn jaccard_distances_match_set_oracle() {
    let mut rng = PortableRng::seed_from_u64(8);
    let q = random_features(&mut rng, 2, 3);
    let g = random_features(&mut rng, 6, 3);
    let params = KReciprocalParams {
        k1: 4,
        k2: 2,
        lambda: 0.3,
    };
    let d = k_reciprocal_distances(&q, &g, &params).unwrap();
    let oracle = kr_oracle(&q, &g, 4, 2);
    for qi in 0..2 {
        for gi in 0..6 {
            assert!((d.jaccard[(qi, gi)] - oracle[qi][gi]).abs() < 1e-12, "{qi},{gi}");
        }
    }
}

#[test]
fn duplicate_gallery_items_get_equal_jaccard() {
    let mut rng = PortableRng::seed_from_u64(9);
    let mut rows: Vec<Vec<f64>> = (0..7).map(|_| (0..4).map(|_| rng.normal()).collect()).collect();
    rows[5] = rows[2].clone();
    let g = FeatureMatrix::from_rows(&rows).unwrap();
    let q = random_features(&mut rng, 3, 4);
    let d = k_reciprocal_distances(
        &q,
        &g,
        &KReciprocalParams {
            k1: 5,
            k2: 2,
            lambda: 0.3,
        },
    )
    .unwrap();
    for qi in 0..3 {
        assert_eq!(d.jaccard[(qi, 2)], d.jaccard[(qi, 5)]);
    }
}

fn instance(
    seed: u64,
    nq: usize,
    ng: usize,
    d: usize,
) -> (FeatureMatrix, FeatureMatrix, Vec<SampleTag>, Vec<SampleTag>) {
    let mut rng = PortableRng::seed_from_u64(seed);
    let q = random_features(&mut rng, nq, d);
    let g = random_features(&mut rng, ng, d);
    let qt = (0..nq).map(|_| tag(rng.below(3) as u32, rng.below(2) as u32)).collect();
    let gt = (0..ng).map(|_| tag(rng.below(3) as u32, rng.below(2) as u32)).collect();
    (q, g, qt, gt)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn refinement_never_touches_the_suffix(seed in any::<u64>(), ng in 2usize..14, top_n in 1usize..16, sigma in 0.05f64..2.0) {
        let (q, g, _, _) = instance(seed, 1, ng, 3);
        let gt: Vec<SampleTag> = (0..ng).map(|i| tag(i as u32 + 1, 1)).collect();
        let list = rank(&q, &g, &[tag(0, 0)], &gt).unwrap().queries.remove(0);
        let out = sft_refine(q.row(0), &list, &g, top_n, sigma).unwrap();
        let n = top_n.min(ng);
        prop_assert_eq!(&out[n..], &list[n..]);
        let mut head: Vec<usize> = out[..n].iter().map(|i| i.gallery).collect();
        let mut before: Vec<usize> = list[..n].iter().map(|i| i.gallery).collect();
        head.sort_unstable();
        before.sort_unstable();
        prop_assert_eq!(head, before);
        prop_assert!(out[..n].windows(2).all(|w| w[0].score >= w[1].score));
    }

    #[test]
    fn junk_never_ranked(seed in any::<u64>(), nq in 1usize..5, ng in 1usize..12) {
        let (q, g, qt, gt) = instance(seed, nq, ng, 3);
        match rank(&q, &g, &qt, &gt) {
            Ok(r) => {
                for (items, t) in r.queries.iter().zip(&qt) {
                    prop_assert!(items.iter().all(|i| !gt[i.gallery].is_junk_for(t)));
                    prop_assert!(items.windows(2).all(|w| w[0].score >= w[1].score));
                    let uniq: BTreeSet<usize> = items.iter().map(|i| i.gallery).collect();
                    prop_assert_eq!(uniq.len(), items.len());
                }
            }
            Err(e) => prop_assert!(matches!(e, sft_core::SftError::NoValidGallery(_))),
        }
    }

    #[test]
    fn lambda_one_reproduces_rank(seed in any::<u64>(), nq in 1usize..4, ng in 4usize..12) {
        let (q, g, qt, _) = instance(seed, nq, ng, 4);
        let gt: Vec<SampleTag> = (0..ng).map(|i| tag(10 + i as u32, 1)).collect();
        let params = KReciprocalParams { k1: 3, k2: 2, lambda: 1.0 };
        let plain = rank(&q, &g, &qt, &gt).unwrap();
        let kr = k_reciprocal_rerank(&q, &g, &qt, &gt, &params).unwrap();
        for (a, b) in plain.queries.iter().zip(&kr.queries) {
            let oa: Vec<usize> = a.iter().map(|i| i.gallery).collect();
            let ob: Vec<usize> = b.iter().map(|i| i.gallery).collect();
            prop_assert_eq!(oa, ob);
        }
    }

    #[test]
    fn evaluation_invariants(seed in any::<u64>(), nq in 1usize..5, ng in 4usize..12) {
        let mut rng = PortableRng::seed_from_u64(seed);
        let q = random_features(&mut rng, nq, 3);
        let g = random_features(&mut rng, ng, 3);
        let qt: Vec<SampleTag> = (0..nq).map(|i| tag(i as u32 % 2, 0)).collect();
        let gt: Vec<SampleTag> = (0..ng).map(|i| tag(i as u32 % 2, 1 + i as u32 % 2)).collect();
        let r = rank(&q, &g, &qt, &gt).unwrap();
        let rep = evaluate(&r, &qt, &gt, ConfigEcho::default()).unwrap();
        let mean = rep.per_query_ap.iter().sum::<f64>() / nq as f64;
        prop_assert!((rep.map - mean).abs() < 1e-15);
        prop_assert!(rep.cmc_at(1) <= rep.cmc_at(5) && rep.cmc_at(5) <= rep.cmc_at(10));
        prop_assert!((0.0..=1.0).contains(&rep.map));
    }
}
