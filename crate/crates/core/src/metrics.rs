//! CLEAR-MOT and identity (IDF1) metrics over MOTChallenge records.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use pathfinding::kuhn_munkres::{kuhn_munkres, kuhn_munkres_min};
use pathfinding::matrix::Matrix;

use crate::imaging::iou;
use crate::motio::{by_frame, FrameRecord};

/// Maximum-weight assignment of rows to columns; `None` for unassigned rows.
/// Works for any rectangular shape.
pub fn max_weight_assignment(weights: &[Vec<i64>]) -> Vec<Option<usize>> {
    let rows = weights.len();
    let cols = weights.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return vec![None; rows];
    }
    if rows <= cols {
        let m = Matrix::from_rows(weights.iter().cloned()).expect("rectangular weights");
        let (_, assign) = kuhn_munkres(&m);
        assign.into_iter().map(Some).collect()
    } else {
        let m = Matrix::from_fn(cols, rows, |(c, r)| weights[r][c]);
        let (_, assign) = kuhn_munkres(&m);
        let mut out = vec![None; rows];
        for (c, r) in assign.into_iter().enumerate() {
            out[r] = Some(c);
        }
        out
    }
}

const MATCH_BONUS: i64 = 1_000_000_000_000;
const IOU_SCALE: f64 = 1e9;

/// Matches as many pairs with IoU at or above `threshold` as possible and,
/// among those, maximizes the summed IoU. Returns (row, col) pairs.
pub fn match_by_iou(rows: &[FrameRecord], cols: &[FrameRecord], threshold: f64) -> Vec<(usize, usize)> {
    let weights: Vec<Vec<i64>> = rows
        .iter()
        .map(|a| {
            cols.iter()
                .map(|b| {
                    let o = iou(&a.bbox, &b.bbox);
                    if o >= threshold {
                        MATCH_BONUS + (o * IOU_SCALE).round() as i64
                    } else {
                        0
                    }
                })
                .collect()
        })
        .collect();
    max_weight_assignment(&weights)
        .into_iter()
        .enumerate()
        .filter_map(|(r, c)| c.filter(|&c| weights[r][c] > 0).map(|c| (r, c)))
        .collect()
}

/// Raw counts of a CLEAR-MOT evaluation.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ClearMot {
    pub gt_total: usize,
    pub fp: usize,
    pub fn_: usize,
    pub ids: usize,
    pub frag: usize,
    pub matches: usize,
    pub iou_sum: f64,
    /// Per ground-truth id: (frames matched, frames present).
    pub coverage: BTreeMap<i64, (usize, usize)>,
}

impl ClearMot {
    pub fn mota(&self) -> f64 {
        1.0 - (self.fn_ + self.fp + self.ids) as f64 / self.gt_total.max(1) as f64
    }

    pub fn motp(&self) -> f64 {
        if self.matches == 0 {
            0.0
        } else {
            self.iou_sum / self.matches as f64
        }
    }
}

/// Frame-by-frame CLEAR-MOT: previous matches persist while their IoU stays
/// at or above the threshold, the rest are matched by maximum cardinality
/// and minimum `1 - IoU`.
pub fn clear_mot(gt: &[FrameRecord], results: &[FrameRecord], iou_threshold: f64) -> ClearMot {
    clear_mot_with(gt, results, iou_threshold, match_by_iou)
}

/// [`clear_mot`] with a pluggable per-frame matcher for the free pairs.
pub fn clear_mot_with(
    gt: &[FrameRecord],
    results: &[FrameRecord],
    iou_threshold: f64,
    mut matcher: impl FnMut(&[FrameRecord], &[FrameRecord], f64) -> Vec<(usize, usize)>,
) -> ClearMot {
    let gt_frames = by_frame(gt);
    let res_frames = by_frame(results);
    let frames: BTreeSet<u32> = gt_frames.keys().chain(res_frames.keys()).copied().collect();
    let mut out = ClearMot::default();
    // gt id -> hypothesis id matched in the previous frame
    let mut active: BTreeMap<i64, i64> = BTreeMap::new();
    // gt id -> last hypothesis id ever matched
    let mut last_match: BTreeMap<i64, i64> = BTreeMap::new();
    // gt id -> matched in its previous appearance
    let mut was_matched: BTreeMap<i64, bool> = BTreeMap::new();
    let empty = Vec::new();
    for f in frames {
        let g = gt_frames.get(&f).unwrap_or(&empty);
        let h = res_frames.get(&f).unwrap_or(&empty);
        out.gt_total += g.len();
        let mut g_used = vec![false; g.len()];
        let mut h_used = vec![false; h.len()];
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        for (gi, gr) in g.iter().enumerate() {
            let Some(&hid) = active.get(&gr.id) else { continue };
            if let Some(hi) = h.iter().position(|hr| hr.id == hid) {
                if !h_used[hi] && iou(&gr.bbox, &h[hi].bbox) >= iou_threshold {
                    g_used[gi] = true;
                    h_used[hi] = true;
                    pairs.push((gi, hi));
                }
            }
        }
        let g_free: Vec<usize> = (0..g.len()).filter(|&i| !g_used[i]).collect();
        let h_free: Vec<usize> = (0..h.len()).filter(|&i| !h_used[i]).collect();
        let g_sub: Vec<FrameRecord> = g_free.iter().map(|&i| g[i]).collect();
        let h_sub: Vec<FrameRecord> = h_free.iter().map(|&i| h[i]).collect();
        for (a, b) in matcher(&g_sub, &h_sub, iou_threshold) {
            pairs.push((g_free[a], h_free[b]));
        }
        active.clear();
        let mut matched_now = vec![false; g.len()];
        for &(gi, hi) in &pairs {
            let (gid, hid) = (g[gi].id, h[hi].id);
            matched_now[gi] = true;
            out.matches += 1;
            out.iou_sum += iou(&g[gi].bbox, &h[hi].bbox);
            if last_match.get(&gid).is_some_and(|&prev| prev != hid) {
                out.ids += 1;
            }
            if last_match.contains_key(&gid) && was_matched.get(&gid) == Some(&false) {
                out.frag += 1;
            }
            last_match.insert(gid, hid);
            active.insert(gid, hid);
        }
        for (gi, gr) in g.iter().enumerate() {
            let cov = out.coverage.entry(gr.id).or_insert((0, 0));
            cov.1 += 1;
            if matched_now[gi] {
                cov.0 += 1;
            }
            was_matched.insert(gr.id, matched_now[gi]);
        }
        out.fn_ += g.len() - pairs.len();
        out.fp += h.len() - pairs.len();
    }
    out
}

/// Identity-level counts from a global one-to-one trajectory matching.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IdCounts {
    pub idtp: usize,
    pub idfp: usize,
    pub idfn: usize,
}

impl IdCounts {
    pub fn idp(&self) -> f64 {
        ratio(self.idtp, self.idtp + self.idfp)
    }

    pub fn idr(&self) -> f64 {
        ratio(self.idtp, self.idtp + self.idfn)
    }

    pub fn idf(&self) -> f64 {
        ratio(2 * self.idtp, 2 * self.idtp + self.idfp + self.idfn)
    }
}

/// 0 when the denominator is 0.
fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Global minimum-cost matching between ground-truth and predicted
/// identities, with one dummy node per trajectory for "unmatched".
pub fn id_metrics(gt: &[FrameRecord], results: &[FrameRecord], iou_threshold: f64) -> IdCounts {
    let gt_ids: Vec<i64> = gt.iter().map(|r| r.id).collect::<BTreeSet<_>>().into_iter().collect();
    let res_ids: Vec<i64> = results
        .iter()
        .map(|r| r.id)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let (ng, np) = (gt_ids.len(), res_ids.len());
    let gidx: BTreeMap<i64, usize> = gt_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let pidx: BTreeMap<i64, usize> = res_ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let mut glen = vec![0usize; ng];
    let mut plen = vec![0usize; np];
    for r in gt {
        glen[gidx[&r.id]] += 1;
    }
    for r in results {
        plen[pidx[&r.id]] += 1;
    }
    let mut overlap = vec![vec![0usize; np]; ng];
    let res_frames = by_frame(results);
    for (f, g) in by_frame(gt) {
        let Some(h) = res_frames.get(&f) else { continue };
        for gr in &g {
            for hr in h {
                if iou(&gr.bbox, &hr.bbox) >= iou_threshold {
                    overlap[gidx[&gr.id]][pidx[&hr.id]] += 1;
                }
            }
        }
    }
    let total_g: usize = glen.iter().sum();
    let total_p: usize = plen.iter().sum();
    if ng == 0 || np == 0 {
        return IdCounts {
            idtp: 0,
            idfp: total_p,
            idfn: total_g,
        };
    }
    let n = ng + np;
    let inf = (total_g + total_p + 1) as i64 * 4;
    let cost = Matrix::from_fn(n, n, |(r, c)| match (r < ng, c < np) {
        (true, true) => (glen[r] + plen[c] - 2 * overlap[r][c]) as i64,
        (true, false) => {
            if c - np == r {
                glen[r] as i64
            } else {
                inf
            }
        }
        (false, true) => {
            if r - ng == c {
                plen[c] as i64
            } else {
                inf
            }
        }
        (false, false) => 0,
    });
    let (_, assign) = kuhn_munkres_min(&cost);
    let idtp: usize = assign
        .iter()
        .enumerate()
        .filter(|&(r, &c)| r < ng && c < np)
        .map(|(r, &c)| overlap[r][c])
        .sum();
    IdCounts {
        idtp,
        idfp: total_p - idtp,
        idfn: total_g - idtp,
    }
}

/// Counts of mostly tracked (coverage >= 80%) and mostly lost (<= 20%)
/// ground-truth trajectories.
pub fn mt_ml(coverage: &BTreeMap<i64, (usize, usize)>) -> (usize, usize) {
    let mut mt = 0;
    let mut ml = 0;
    for &(hit, total) in coverage.values() {
        // integer comparisons keep the 80% and 20% bounds exact
        if 5 * hit >= 4 * total {
            mt += 1;
        } else if 5 * hit <= total {
            ml += 1;
        }
    }
    (mt, ml)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricReport {
    pub name: String,
    pub clear: ClearMot,
    pub id: IdCounts,
    pub mt: usize,
    pub ml: usize,
    pub gt_tracks: usize,
}

impl MetricReport {
    pub fn mota(&self) -> f64 {
        self.clear.mota()
    }

    pub fn motp(&self) -> f64 {
        self.clear.motp()
    }

    pub fn mt_ratio(&self) -> f64 {
        ratio(self.mt, self.gt_tracks)
    }

    pub fn ml_ratio(&self) -> f64 {
        ratio(self.ml, self.gt_tracks)
    }

    /// Pools raw counts of several sequences.
    pub fn aggregate(name: &str, parts: &[MetricReport]) -> MetricReport {
        let mut out = MetricReport {
            name: name.to_string(),
            ..Default::default()
        };
        for p in parts {
            let c = &mut out.clear;
            c.gt_total += p.clear.gt_total;
            c.fp += p.clear.fp;
            c.fn_ += p.clear.fn_;
            c.ids += p.clear.ids;
            c.frag += p.clear.frag;
            c.matches += p.clear.matches;
            c.iou_sum += p.clear.iou_sum;
            out.id.idtp += p.id.idtp;
            out.id.idfp += p.id.idfp;
            out.id.idfn += p.id.idfn;
            out.mt += p.mt;
            out.ml += p.ml;
            out.gt_tracks += p.gt_tracks;
        }
        out
    }

    /// `key = value` lines.
    pub fn to_key_values(&self) -> String {
        let mut s = String::new();
        let p = |s: &mut String, k: &str, v: String| {
            let _ = writeln!(s, "{}.{k} = {v}", self.name);
        };
        p(&mut s, "mota", format!("{}", self.mota()));
        p(&mut s, "motp", format!("{}", self.motp()));
        p(&mut s, "idf", format!("{}", self.id.idf()));
        p(&mut s, "idp", format!("{}", self.id.idp()));
        p(&mut s, "idr", format!("{}", self.id.idr()));
        p(&mut s, "mt", format!("{}", self.mt_ratio()));
        p(&mut s, "ml", format!("{}", self.ml_ratio()));
        p(&mut s, "fp", self.clear.fp.to_string());
        p(&mut s, "fn", self.clear.fn_.to_string());
        p(&mut s, "ids", self.clear.ids.to_string());
        p(&mut s, "frag", self.clear.frag.to_string());
        p(&mut s, "gt", self.clear.gt_total.to_string());
        p(&mut s, "idtp", self.id.idtp.to_string());
        p(&mut s, "idfp", self.id.idfp.to_string());
        p(&mut s, "idfn", self.id.idfn.to_string());
        s
    }
}

pub fn evaluate(name: &str, gt: &[FrameRecord], results: &[FrameRecord], iou_threshold: f64) -> MetricReport {
    let clear = clear_mot(gt, results, iou_threshold);
    let (mt, ml) = mt_ml(&clear.coverage);
    MetricReport {
        name: name.to_string(),
        gt_tracks: clear.coverage.len(),
        id: id_metrics(gt, results, iou_threshold),
        clear,
        mt,
        ml,
    }
}

/// Aligned plain-text table, one row per report.
pub fn format_table(reports: &[MetricReport]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<12} {:>7} {:>7} {:>7} {:>7} {:>7} {:>6} {:>6} {:>6} {:>6} {:>5} {:>5}",
        "sequence", "MOTA", "MOTP", "IDF", "IDP", "IDR", "MT%", "ML%", "FP", "FN", "IDS", "Frag"
    );
    for r in reports {
        let _ = writeln!(
            s,
            "{:<12} {:>7.3} {:>7.3} {:>7.3} {:>7.3} {:>7.3} {:>6.1} {:>6.1} {:>6} {:>6} {:>5} {:>5}",
            r.name,
            r.mota(),
            r.motp(),
            r.id.idf(),
            r.id.idp(),
            r.id.idr(),
            100.0 * r.mt_ratio(),
            100.0 * r.ml_ratio(),
            r.clear.fp,
            r.clear.fn_,
            r.clear.ids,
            r.clear.frag
        );
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::BoundingBox;

    fn rec(frame: u32, id: i64, x: f64) -> FrameRecord {
        FrameRecord::track(frame, id, BoundingBox::new(x, 0.0, 10.0, 10.0).unwrap())
    }

    #[test]
    fn assignment_handles_tall_and_wide_matrices() {
        let tall = vec![vec![1, 5], vec![4, 2], vec![3, 3]];
        assert_eq!(max_weight_assignment(&tall), vec![Some(1), Some(0), None]);
        let wide = vec![vec![1, 9, 3]];
        assert_eq!(max_weight_assignment(&wide), vec![Some(1)]);
        assert!(max_weight_assignment(&[]).is_empty());
    }

    #[test]
    fn identical_results_are_perfect() {
        let gt: Vec<_> = (1..=5).flat_map(|f| [rec(f, 1, 0.0), rec(f, 2, 50.0)]).collect();
        let r = evaluate("seq", &gt, &gt, 0.5);
        assert_eq!((r.mota(), r.motp(), r.id.idf()), (1.0, 1.0, 1.0));
        assert_eq!((r.clear.fp, r.clear.fn_, r.clear.ids, r.clear.frag), (0, 0, 0, 0));
        assert_eq!((r.mt, r.ml), (2, 0));
    }

    #[test]
    fn coverage_bounds_are_inclusive() {
        let mut cov = BTreeMap::new();
        cov.insert(1, (8, 10));
        cov.insert(2, (5, 10));
        cov.insert(3, (2, 10));
        assert_eq!(mt_ml(&cov), (1, 1));
    }

    #[test]
    fn interrupted_match_counts_a_fragment() {
        let gt: Vec<_> = (1..=6).map(|f| rec(f, 1, 0.0)).collect();
        let res: Vec<_> = [1, 2, 5, 6].iter().map(|&f| rec(f, 9, 0.0)).collect();
        let c = clear_mot(&gt, &res, 0.5);
        assert_eq!((c.frag, c.ids, c.fn_), (1, 0, 2));
    }
}
