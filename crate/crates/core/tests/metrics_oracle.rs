mod common;

use common::{oracle_clear_mot, random_scene, rec};
use dualtrack::imaging::iou;
use dualtrack::metrics::{clear_mot, evaluate, id_metrics};
use dualtrack::motio::FrameRecord;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn clear_mot_matches_exhaustive_matcher() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut switches, mut frags) = (0, 0);
    for _ in 0..300 {
        let (gt, res) = random_scene(&mut rng, 6);
        let got = clear_mot(&gt, &res, 0.5);
        let want = oracle_clear_mot(&gt, &res, 0.5);
        assert_eq!(
            (got.fp, got.fn_, got.ids, got.frag, got.matches, &got.coverage),
            (want.fp, want.fn_, want.ids, want.frag, want.matches, &want.coverage)
        );
        assert!((got.iou_sum - want.iou_sum).abs() < 1e-9);
        switches += got.ids;
        frags += got.frag;
    }
    // the random scenes must exercise the identity bookkeeping
    assert!(switches > 0 && frags > 0, "{switches} {frags}");
}

#[test]
fn single_switch_scenario() {
    let gt: Vec<_> = (1..=10).map(|f| rec(f, 1, 0.0, 0.0)).collect();
    let res: Vec<_> = (1..=10).map(|f| rec(f, if f <= 5 { 7 } else { 8 }, 0.0, 0.0)).collect();
    let r = evaluate("s", &gt, &res, 0.5);
    assert_eq!(r.clear.ids, 1);
    assert!((r.mota() - 0.9).abs() < 1e-12);
    assert_eq!((r.id.idtp, r.id.idfp, r.id.idfn), (5, 5, 5));
    assert_eq!(r.id.idf(), 0.5);
}

#[test]
fn empty_results() {
    let gt: Vec<_> = (1..=4).map(|f| rec(f, 1, 0.0, 0.0)).collect();
    let r = evaluate("s", &gt, &[], 0.5);
    assert_eq!(r.mota(), 0.0);
    assert_eq!((r.clear.fn_, r.clear.fp, r.clear.ids), (4, 0, 0));
    assert_eq!((r.id.idf(), r.id.idp(), r.id.idr()), (0.0, 0.0, 0.0));
}

#[test]
fn relabeling_predictions_changes_nothing() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..50 {
        let (gt, res) = random_scene(&mut rng, 8);
        let relabeled: Vec<_> = res.iter().map(|r| FrameRecord { id: 1000 - r.id, ..*r }).collect();
        let a = evaluate("a", &gt, &res, 0.5);
        let b = evaluate("a", &gt, &relabeled, 0.5);
        assert_eq!(
            (a.clear.ids, a.clear.fp, a.clear.fn_),
            (b.clear.ids, b.clear.fp, b.clear.fn_)
        );
        assert_eq!(a.mota(), b.mota());
        assert!((a.motp() - b.motp()).abs() < 1e-12);
        assert_eq!(a.id, b.id);
    }
}

#[test]
fn idf_is_harmonic_mean_of_idp_and_idr() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for _ in 0..50 {
        let (gt, res) = random_scene(&mut rng, 8);
        let c = id_metrics(&gt, &res, 0.5);
        let (p, r) = (c.idp(), c.idr());
        if p + r > 0.0 {
            assert!((c.idf() - 2.0 * p * r / (p + r)).abs() < 1e-9);
        }
    }
}

#[test]
fn id_matching_is_optimal_on_small_cases() {
    // brute force over all injective gt -> prediction maps
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..60 {
        let (gt, res) = random_scene(&mut rng, 5);
        let gids: Vec<i64> = gt
            .iter()
            .map(|r| r.id)
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        let pids: Vec<i64> = res
            .iter()
            .map(|r| r.id)
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        let overlap = |g: i64, p: i64| {
            gt.iter()
                .filter(|a| a.id == g)
                .filter(|a| {
                    res.iter()
                        .any(|b| b.id == p && b.frame == a.frame && iou(&a.bbox, &b.bbox) >= 0.5)
                })
                .count()
        };
        fn best(i: usize, g: &[i64], p: &[i64], used: &mut Vec<bool>, f: &dyn Fn(i64, i64) -> usize) -> usize {
            if i == g.len() {
                return 0;
            }
            let mut b = best(i + 1, g, p, used, f);
            for j in 0..p.len() {
                if !used[j] {
                    used[j] = true;
                    b = b.max(f(g[i], p[j]) + best(i + 1, g, p, used, f));
                    used[j] = false;
                }
            }
            b
        }
        let want = best(0, &gids, &pids, &mut vec![false; pids.len()], &overlap);
        assert_eq!(id_metrics(&gt, &res, 0.5).idtp, want);
    }
}
