//! Online multi-object tracking: one correlation-filter tracker per target,
//! a tracked/lost state machine, and appearance-based re-association of lost
//! targets with new detections.

use std::collections::VecDeque;

use rayon::prelude::*;

use crate::config::Config;
use crate::dman::{prepare_input, Dman, DmanMode, NetInput, SanMode, TanMode};
use crate::error::{invalid, Error, Result};
use crate::imaging::{crop_box, iou, BoundingBox, ImageBuffer};
use crate::motio::FrameRecord;
use crate::sot::{init_tracker, track, update_model, TrackerConfig, TrackerHandle};

/// Which component the run replaces, if any.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub enum Mode {
    #[default]
    Full,
    /// Associate by the lost target's filter score instead of the networks.
    TrackerScore,
    /// Uniform spatial attention.
    NoSpatialAttention,
    /// Average temporal pooling.
    NoTemporalAttention,
    /// Plain (not cost-sensitive) filter loss.
    NoCostSensitive,
}

impl Mode {
    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "full" => Ok(Self::Full),
            "b1" => Ok(Self::TrackerScore),
            "b2" => Ok(Self::NoSpatialAttention),
            "b3" => Ok(Self::NoTemporalAttention),
            "b4" => Ok(Self::NoCostSensitive),
            other => Err(Error::Config(format!(
                "unknown mode {other:?}; expected full, b1, b2, b3 or b4"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::TrackerScore => "b1",
            Self::NoSpatialAttention => "b2",
            Self::NoTemporalAttention => "b3",
            Self::NoCostSensitive => "b4",
        }
    }

    pub fn needs_networks(self) -> bool {
        self != Self::TrackerScore
    }

    pub fn dman_mode(self) -> DmanMode {
        DmanMode {
            san: SanMode {
                uniform_attention: self == Self::NoSpatialAttention,
            },
            tan: TanMode {
                average: self == Self::NoTemporalAttention,
            },
        }
    }

    /// Tracker settings for this mode.
    pub fn tracker_config(self, base: &TrackerConfig) -> TrackerConfig {
        let mut cfg = base.clone();
        if self == Self::NoCostSensitive {
            cfg.cost_sensitive = false;
        }
        cfg
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub tau_s: f64,
    pub tau_a: f64,
    pub tau_o: f64,
    /// Gating radius in predicted box diagonals.
    pub tau_d: f64,
    /// L, tracked frames averaged for the overlap mean.
    pub overlap_window: usize,
    /// K, frame interval of the velocity estimate.
    pub velocity_frames: usize,
    /// tau_i, frames a new track must stay tracked and covered.
    pub init_frames: usize,
    /// tau_t, lost frames after which a track is terminated.
    pub terminate_frames: usize,
    /// T, observations fed to the temporal network.
    pub tracklet_len: usize,
    /// M, most recent observations kept per target.
    pub gallery_size: usize,
    pub mode: Mode,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::from_config(&Config::default()).expect("defaults are valid")
    }
}

impl PipelineConfig {
    /// Reads `pipeline.*`; frame counts given in units of the frame rate are
    /// rounded to whole frames (at least one).
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let f = cfg.positive("pipeline.frame_rate")?;
        let frames = |key: &str| -> Result<usize> { Ok(((cfg.positive(key)? * f).round() as usize).max(1)) };
        let out = Self {
            tau_s: cfg.positive("pipeline.tau_s")?,
            tau_a: cfg.positive("pipeline.tau_a")?,
            tau_o: cfg.positive("pipeline.tau_o")?,
            tau_d: cfg.positive("pipeline.tau_d")?,
            overlap_window: cfg.usize("pipeline.overlap_window")?,
            velocity_frames: frames("pipeline.velocity_interval")?,
            init_frames: frames("pipeline.init_frames")?,
            terminate_frames: frames("pipeline.terminate_frames")?,
            tracklet_len: cfg.usize("pipeline.tracklet_len")?,
            gallery_size: cfg.usize("pipeline.gallery_size")?,
            mode: Mode::parse(cfg.get("pipeline.mode")?)?,
        };
        out.validate().map_err(|e| Error::Config(e.to_string()))?;
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [self.tau_s, self.tau_a, self.tau_o, self.tau_d];
        if positive.iter().any(|&v| !(v > 0.0)) {
            return Err(invalid("pipeline thresholds must be positive"));
        }
        if self.overlap_window == 0 || self.velocity_frames == 0 || self.tracklet_len == 0 {
            return Err(invalid("pipeline windows must be positive"));
        }
        if self.tracklet_len > self.gallery_size {
            return Err(invalid("tracklet length cannot exceed the gallery size"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackState {
    Tracked,
    Lost,
}

/// True when some detection overlaps `bbox` by more than one half.
pub fn overlap_flag(bbox: &BoundingBox, detections: &[BoundingBox]) -> bool {
    detections.iter().any(|d| iou(bbox, d) > 0.5)
}

/// Tracked iff the score and the mean overlap both strictly exceed their
/// thresholds.
pub fn update_state(s: f64, o_mean: f64, cfg: &PipelineConfig) -> TrackState {
    if s > cfg.tau_s && o_mean > cfg.tau_o {
        TrackState::Tracked
    } else {
        TrackState::Lost
    }
}

/// Constant-velocity prediction `steps` frames after the last center.
///
/// `centers` holds one center per consecutive tracked frame, oldest first.
/// The velocity is `(c[n-1] - c[n-K]) / K`; shorter histories use the
/// oldest center over its actual spacing, and a single center gives zero
/// velocity.
pub fn predict_location(centers: &[[f64; 2]], k: usize, steps: usize) -> Option<[f64; 2]> {
    let last = *centers.last()?;
    let n = centers.len();
    let v = if k >= 1 && n >= k {
        let old = centers[n - k];
        [(last[0] - old[0]) / k as f64, (last[1] - old[1]) / k as f64]
    } else if n >= 2 {
        let old = centers[0];
        let gap = (n - 1) as f64;
        [(last[0] - old[0]) / gap, (last[1] - old[1]) / gap]
    } else {
        [0.0, 0.0]
    };
    let s = steps as f64;
    Some([last[0] + v[0] * s, last[1] + v[1] * s])
}

/// Indices of detections within `tau_d` diagonals of the predicted box that
/// no tracked target covers (IoU above one half).
pub fn gate_candidates(
    predicted: &BoundingBox,
    detections: &[BoundingBox],
    tracked: &[BoundingBox],
    tau_d: f64,
) -> Vec<usize> {
    let [px, py] = predicted.center();
    let radius = tau_d * predicted.diagonal();
    detections
        .iter()
        .enumerate()
        .filter(|(_, d)| {
            let [dx, dy] = d.center();
            ((dx - px).powi(2) + (dy - py).powi(2)).sqrt() < radius && tracked.iter().all(|t| iou(t, d) <= 0.5)
        })
        .map(|(i, _)| i)
        .collect()
}

/// Zero-based gallery indices of a T-sample tracklet, in chronological order.
///
/// For a gallery of G >= T entries the 1-based indices are
/// `round(1 + (i-1)(G-1)/(T-1))`; smaller galleries repeat entries as
/// `ceil(i G / T)`. A single sample is the most recent entry.
pub fn sample_tracklet(gallery_len: usize, t: usize) -> Result<Vec<usize>> {
    if gallery_len == 0 {
        return Err(invalid("cannot sample a tracklet from an empty gallery"));
    }
    if t == 0 {
        return Err(invalid("tracklet length must be positive"));
    }
    if t == 1 {
        return Ok(vec![gallery_len - 1]);
    }
    let g = gallery_len;
    Ok((1..=t)
        .map(|i| {
            let one_based = if g >= t {
                (1.0 + ((i - 1) * (g - 1)) as f64 / (t - 1) as f64).round() as usize
            } else {
                (i * g).div_ceil(t)
            };
            one_based - 1
        })
        .collect())
}

/// Global greedy one-to-one assignment. `affinity[r][c]` is `None` for
/// pairs that were not gated; rows must be ordered by track id. Highest
/// affinity first; ties go to the lower row, then the lower column.
pub fn associate(affinity: &[Vec<Option<f64>>], tau_a: f64) -> Vec<(usize, usize)> {
    let mut pairs: Vec<(f64, usize, usize)> = affinity
        .iter()
        .enumerate()
        .flat_map(|(r, row)| {
            row.iter()
                .enumerate()
                .filter_map(move |(c, a)| a.filter(|&a| a >= tau_a).map(|a| (a, r, c)))
        })
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let rows = affinity.len();
    let cols = affinity.iter().map(Vec::len).max().unwrap_or(0);
    let (mut row_used, mut col_used) = (vec![false; rows], vec![false; cols]);
    let mut out = Vec::new();
    for (_, r, c) in pairs {
        if !row_used[r] && !col_used[c] {
            row_used[r] = true;
            col_used[c] = true;
            out.push((r, c));
        }
    }
    out
}

/// One target: its tracker, state and observation history.
#[derive(Debug, Clone)]
pub struct TargetTrack {
    pub id: i64,
    pub state: TrackState,
    tracker: TrackerHandle,
    pub trajectory: Vec<(u32, BoundingBox)>,
    gallery: VecDeque<(u32, NetInput)>,
    scores: VecDeque<f64>,
    overlaps: VecDeque<bool>,
    /// Centers of consecutive tracked frames since the last (re)start.
    centers: VecDeque<[f64; 2]>,
    pub lost_frames: usize,
    /// Frames since the track was spawned, including the spawn frame.
    pub age: usize,
    last_box: BoundingBox,
}

impl TargetTrack {
    pub fn gallery_len(&self) -> usize {
        self.gallery.len()
    }

    pub fn gallery_frames(&self) -> Vec<u32> {
        self.gallery.iter().map(|(f, _)| *f).collect()
    }

    pub fn last_box(&self) -> BoundingBox {
        self.last_box
    }

    pub fn tracker(&self) -> &TrackerHandle {
        &self.tracker
    }

    pub fn overlap_mean(&self) -> f64 {
        if self.overlaps.is_empty() {
            return 0.0;
        }
        self.overlaps.iter().filter(|&&o| o).count() as f64 / self.overlaps.len() as f64
    }

    pub fn recent_scores(&self) -> impl Iterator<Item = f64> + '_ {
        self.scores.iter().copied()
    }

    /// Box expected in the current frame while lost.
    pub fn predicted_box(&self, k: usize) -> BoundingBox {
        let centers: Vec<[f64; 2]> = self.centers.iter().copied().collect();
        let c = predict_location(&centers, k, self.lost_frames).unwrap_or(self.last_box.center());
        BoundingBox::from_center(c, self.last_box.w, self.last_box.h)
    }

    fn push_capped<T>(q: &mut VecDeque<T>, v: T, cap: usize) {
        q.push_back(v);
        while q.len() > cap {
            q.pop_front();
        }
    }
}

/// The online tracker: owns every target and steps through frames.
#[derive(Debug)]
pub struct Pipeline {
    cfg: PipelineConfig,
    tracker_cfg: TrackerConfig,
    dman: Option<Dman>,
    tracks: Vec<TargetTrack>,
    next_id: i64,
    last_frame: Option<u32>,
}

impl Pipeline {
    /// `dman` may be omitted only for the tracker-score mode.
    pub fn new(cfg: PipelineConfig, tracker_cfg: &TrackerConfig, dman: Option<Dman>) -> Result<Self> {
        cfg.validate()?;
        let dman = match (cfg.mode.needs_networks(), dman) {
            (true, None) => {
                return Err(Error::Config(format!(
                    "mode {} needs a trained network checkpoint",
                    cfg.mode.name()
                )))
            }
            (true, Some(mut d)) => {
                d.mode = cfg.mode.dman_mode();
                Some(d)
            }
            (false, _) => None,
        };
        Ok(Self {
            tracker_cfg: cfg.mode.tracker_config(tracker_cfg),
            cfg,
            dman,
            tracks: Vec::new(),
            next_id: 1,
            last_frame: None,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.cfg
    }

    pub fn tracker_config(&self) -> &TrackerConfig {
        &self.tracker_cfg
    }

    pub fn tracks(&self) -> &[TargetTrack] {
        &self.tracks
    }

    fn crop(&self, frame: &ImageBuffer, b: &BoundingBox) -> Result<Option<NetInput>> {
        match &self.dman {
            Some(d) => {
                let s = d.san.config().input_size;
                Ok(Some(prepare_input(&crop_box(frame, b, [s, s])?, s)?))
            }
            None => Ok(None),
        }
    }

    fn affinity(
        &self,
        t: &TargetTrack,
        frame: &ImageBuffer,
        det: &BoundingBox,
        det_input: Option<&NetInput>,
    ) -> Result<f64> {
        match (&self.dman, det_input) {
            (Some(d), Some(input)) => {
                let idx = sample_tracklet(t.gallery.len(), self.cfg.tracklet_len)?;
                let obs: Vec<NetInput> = idx.into_iter().map(|i| t.gallery[i].1.clone()).collect();
                d.affinity(input, &obs)
            }
            _ => t.tracker.score_box(frame, det),
        }
    }

    fn restart(&self, t: &mut TargetTrack, frame_index: u32, frame: &ImageBuffer, b: BoundingBox) -> Result<()> {
        t.tracker = init_tracker(frame, b, &self.tracker_cfg)?;
        t.state = TrackState::Tracked;
        t.lost_frames = 0;
        t.scores.clear();
        t.overlaps.clear();
        t.overlaps.push_back(true);
        t.centers.clear();
        t.centers.push_back(b.center());
        t.last_box = b;
        t.trajectory.push((frame_index, b));
        Ok(())
    }

    /// Processes one frame and returns the boxes of confirmed tracked targets.
    /// A new target's boxes are held back until it has survived its first
    /// `init_frames` frames and are then returned all at once, so the result
    /// may include earlier frames.
    pub fn step(
        &mut self,
        frame_index: u32,
        frame: &ImageBuffer,
        detections: &[BoundingBox],
    ) -> Result<Vec<FrameRecord>> {
        if self.last_frame.is_some_and(|f| frame_index <= f) {
            return Err(invalid(format!(
                "frame {frame_index} does not follow frame {}",
                self.last_frame.unwrap_or(0)
            )));
        }
        self.last_frame = Some(frame_index);
        let cfg = self.cfg.clone();
        let (width, height) = (frame.width() as f64, frame.height() as f64);

        // 1-2: single-object tracking and state update, one worker per target
        self.tracks
            .par_iter_mut()
            .filter(|t| t.state == TrackState::Tracked)
            .try_for_each(|t| -> Result<()> {
                let (b, s) = track(&mut t.tracker, frame)?;
                TargetTrack::push_capped(&mut t.scores, s, cfg.overlap_window);
                TargetTrack::push_capped(&mut t.overlaps, overlap_flag(&b, detections), cfg.overlap_window);
                t.state = update_state(s, t.overlap_mean(), &cfg);
                if t.state == TrackState::Lost {
                    log::debug!(
                        "frame {frame_index}: track {} lost (s {s:.3}, o_mean {:.2})",
                        t.id,
                        t.overlap_mean()
                    );
                }
                if t.state == TrackState::Tracked {
                    update_model(&mut t.tracker, frame)?;
                    TargetTrack::push_capped(&mut t.centers, b.center(), cfg.velocity_frames.max(2));
                    t.last_box = b;
                    t.trajectory.push((frame_index, b));
                }
                Ok(())
            })?;
        for t in self.tracks.iter_mut() {
            t.age += 1;
            if t.state == TrackState::Lost {
                t.lost_frames += 1;
            }
        }

        // 4a: tentative tracks must stay tracked and covered
        self.tracks.retain(|t| {
            t.age > cfg.init_frames || (t.state == TrackState::Tracked && t.overlaps.back() == Some(&true))
        });

        // 3: re-associate lost targets
        let tracked: Vec<BoundingBox> = self
            .tracks
            .iter()
            .filter(|t| t.state == TrackState::Tracked)
            .map(|t| t.last_box)
            .collect();
        let lost: Vec<usize> = (0..self.tracks.len())
            .filter(|&i| self.tracks[i].state == TrackState::Lost)
            .collect();
        let mut gated: Vec<Vec<usize>> = Vec::with_capacity(lost.len());
        for &i in &lost {
            let pred = self.tracks[i].predicted_box(cfg.velocity_frames);
            gated.push(gate_candidates(&pred, detections, &tracked, cfg.tau_d));
        }
        let mut needed: Vec<usize> = gated.iter().flatten().copied().collect();
        needed.sort_unstable();
        needed.dedup();
        let det_inputs: Vec<(usize, Option<NetInput>)> = needed
            .par_iter()
            .map(|&d| Ok((d, self.crop(frame, &detections[d])?)))
            .collect::<Result<_>>()?;
        let input_of = |d: usize| det_inputs.iter().find(|(k, _)| *k == d).and_then(|(_, x)| x.as_ref());
        let jobs: Vec<(usize, usize)> = gated
            .iter()
            .enumerate()
            .flat_map(|(r, ds)| ds.iter().map(move |&d| (r, d)))
            .collect();
        let scores: Vec<f64> = jobs
            .par_iter()
            .map(|&(r, d)| self.affinity(&self.tracks[lost[r]], frame, &detections[d], input_of(d)))
            .collect::<Result<_>>()?;
        let mut matrix = vec![vec![None; detections.len()]; lost.len()];
        for (&(r, d), &a) in jobs.iter().zip(&scores) {
            log::debug!(
                "frame {frame_index}: track {} vs detection {d}: affinity {a:.3}",
                self.tracks[lost[r]].id
            );
            matrix[r][d] = Some(a);
        }
        // rows are already in id order: tracks are kept sorted by id
        let assignments = associate(&matrix, cfg.tau_a);
        let mut used = vec![false; detections.len()];
        for &(r, d) in &assignments {
            used[d] = true;
            let mut t = self.tracks[lost[r]].clone();
            self.restart(&mut t, frame_index, frame, detections[d])?;
            log::debug!("frame {frame_index}: track {} restored at detection {d}", t.id);
            self.tracks[lost[r]] = t;
        }

        // 4b: terminate long-lost targets and targets that left the view
        self.tracks.retain(|t| {
            let [cx, cy] = t.predicted_box(cfg.velocity_frames).center();
            let inside = cx >= 0.0 && cy >= 0.0 && cx < width && cy < height;
            t.lost_frames <= cfg.terminate_frames && inside
        });

        // 5: spawn tracks from unused detections that no current box covers
        let mut current: Vec<BoundingBox> = self
            .tracks
            .iter()
            .filter(|t| t.state == TrackState::Tracked)
            .map(|t| t.last_box)
            .collect();
        for (d, b) in detections.iter().enumerate() {
            if used[d] || current.iter().any(|c| iou(c, b) > 0.5) || !b.is_valid() {
                continue;
            }
            log::debug!("frame {frame_index}: new track {} at detection {d}", self.next_id);
            let tracker = init_tracker(frame, *b, &self.tracker_cfg)?;
            let mut t = TargetTrack {
                id: self.next_id,
                state: TrackState::Tracked,
                tracker,
                trajectory: Vec::new(),
                gallery: VecDeque::new(),
                scores: VecDeque::new(),
                overlaps: VecDeque::new(),
                centers: VecDeque::new(),
                lost_frames: 0,
                age: 1,
                last_box: *b,
            };
            t.overlaps.push_back(true);
            t.centers.push_back(b.center());
            t.trajectory.push((frame_index, *b));
            self.next_id += 1;
            current.push(*b);
            self.tracks.push(t);
        }

        // 6: gallery update and output
        let crops: Vec<Option<NetInput>> = self
            .tracks
            .par_iter()
            .map(|t| {
                if t.state == TrackState::Tracked {
                    self.crop(frame, &t.last_box)
                } else {
                    Ok(None)
                }
            })
            .collect::<Result<_>>()?;
        let mut out = Vec::new();
        for (t, crop) in self.tracks.iter_mut().zip(crops) {
            if t.age == cfg.init_frames + 1 {
                // just confirmed: release the boxes held back so far
                out.extend(t.trajectory.iter().map(|&(f, b)| FrameRecord::track(f, t.id, b)));
            }
            if t.state != TrackState::Tracked {
                continue;
            }
            if let Some(c) = crop {
                TargetTrack::push_capped(&mut t.gallery, (frame_index, c), cfg.gallery_size);
            }
            if t.age > cfg.init_frames + 1 {
                out.push(FrameRecord::track(frame_index, t.id, t.last_box));
            }
        }
        Ok(out)
    }

    /// Boxes of tracks that are still unconfirmed when the sequence ends.
    pub fn finish(&mut self) -> Vec<FrameRecord> {
        let init = self.cfg.init_frames;
        self.tracks
            .iter()
            .filter(|t| t.age <= init)
            .flat_map(|t| t.trajectory.iter().map(|&(f, b)| FrameRecord::track(f, t.id, b)))
            .collect()
    }
}

/// Runs the pipeline over a whole sequence; `detections` may list frames in
/// any order. Frame `k` of the result uses `frames[k - 1]`.
pub fn run_sequence(
    pipeline: &mut Pipeline,
    frames: &[ImageBuffer],
    detections: &[FrameRecord],
) -> Result<Vec<FrameRecord>> {
    let by_frame = crate::motio::by_frame(detections);
    let mut out = Vec::new();
    for (k, frame) in frames.iter().enumerate() {
        let index = k as u32 + 1;
        let dets: Vec<BoundingBox> = by_frame
            .get(&index)
            .map(|v| v.iter().map(|r| r.bbox).collect())
            .unwrap_or_default();
        let rows = pipeline.step(index, frame, &dets).map_err(|e| match e {
            Error::NumericFailure { context, .. } => Error::NumericFailure {
                iteration: index as usize,
                context: format!("frame {index}: {context}"),
            },
            other => other,
        })?;
        out.extend(rows);
    }
    out.extend(pipeline.finish());
    out.sort_by_key(|r| (r.frame, r.id));
    Ok(out)
}
