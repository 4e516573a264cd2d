//! Single-object tracker built on the cost-sensitive correlation filter.

use std::path::Path;
use std::sync::Arc;

use crate::config::Config;
use crate::error::{invalid, Error, Result};
use crate::features::{assemble_features, ColorNameTable, FeatureConfig, FeatureStack};
use crate::filter::{
    apply_filter, solve_filter, CgConfig, ConfidenceMap, FourierFilter, GridFft, LabelFunction, NormalSystem,
    RegularizationWindow, SampleMemory,
};
use crate::imaging::{extract_patch, BoundingBox, ImageBuffer};

#[derive(Debug, Clone)]
pub struct TrackerConfig {
    pub features: FeatureConfig,
    /// Search region side length as a multiple of the target side length.
    pub search_scale: f64,
    /// Pixel area the search region is resampled to before feature extraction.
    pub template_area: f64,
    pub scales: Vec<f64>,
    pub cost_sensitive: bool,
    pub learning_rate: f64,
    pub memory_size: usize,
    pub init_cg: CgConfig,
    pub update_cg: CgConfig,
    pub w_min: f64,
    pub w_eta: f64,
    /// Label width relative to the square root of the target area in cells.
    pub label_sigma_factor: f64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            features: FeatureConfig::default(),
            search_scale: 2.0,
            template_area: 64.0 * 64.0,
            scales: vec![0.98, 1.0, 1.02],
            cost_sensitive: true,
            learning_rate: 0.0125,
            memory_size: 20,
            init_cg: CgConfig {
                max_iter: 100,
                tol: 1e-5,
            },
            update_cg: CgConfig { max_iter: 5, tol: 1e-5 },
            w_min: 1e-3,
            w_eta: 10.0,
            label_sigma_factor: 0.1,
        }
    }
}

impl TrackerConfig {
    /// Reads the `tracker.*` keys.
    pub fn from_config(cfg: &Config) -> Result<Self> {
        let color_table = match cfg.get("tracker.color_table")? {
            "prototype" => Some(Arc::new(ColorNameTable::prototype())),
            "none" => None,
            path => Some(Arc::new(
                ColorNameTable::load(Path::new(path))
                    .map_err(|e| Error::Config(format!("tracker.color_table: {e}")))?,
            )),
        };
        let scales = cfg.f64_list("tracker.scales")?;
        if scales.iter().any(|&s| s <= 0.0) {
            return Err(Error::Config("tracker.scales must be positive".into()));
        }
        let cell_size = cfg.usize("tracker.cell_size")?;
        let hog_bins = cfg.usize("tracker.hog_bins")?;
        if cell_size == 0 || hog_bins == 0 {
            return Err(Error::Config(
                "tracker.cell_size and tracker.hog_bins must be positive".into(),
            ));
        }
        let tol = cfg.positive("tracker.cg_tol")?;
        Ok(Self {
            features: FeatureConfig {
                cell_size,
                hog_bins,
                color_table,
                ..FeatureConfig::default()
            },
            search_scale: cfg.positive("tracker.search_scale")?,
            template_area: cfg.positive("tracker.template_area")?,
            scales,
            cost_sensitive: cfg.bool("tracker.cost_sensitive")?,
            learning_rate: cfg.positive("tracker.learning_rate")?,
            memory_size: cfg.usize("tracker.memory_size")?.max(1),
            init_cg: CgConfig {
                max_iter: cfg.usize("tracker.init_cg_iter")?,
                tol,
            },
            update_cg: CgConfig {
                max_iter: cfg.usize("tracker.update_cg_iter")?,
                tol,
            },
            w_min: cfg.positive("tracker.w_min")?,
            w_eta: cfg.f64("tracker.w_eta")?,
            label_sigma_factor: cfg.positive("tracker.label_sigma")?,
        })
    }
}

/// State of one correlation-filter tracker.
#[derive(Debug, Clone)]
pub struct TrackerHandle {
    cfg: TrackerConfig,
    fft: GridFft,
    label: LabelFunction,
    reg: RegularizationWindow,
    memory: SampleMemory,
    filter: FourierFilter,
    prev_filter: Option<FourierFilter>,
    bbox: BoundingBox,
    base_size: [f64; 2],
    scale: f64,
    /// Output patch size in pixels (multiple of the cell size).
    patch_px: [usize; 2],
    score: f64,
    init_score: f64,
    /// Feature gain fixed on the initial patch.
    gain: f64,
}

impl TrackerHandle {
    pub fn bbox(&self) -> BoundingBox {
        self.bbox
    }

    /// Highest value of the last confidence map.
    pub fn score(&self) -> f64 {
        self.score
    }

    /// Peak response on the initialization sample.
    pub fn init_score(&self) -> f64 {
        self.init_score
    }

    pub fn filter(&self) -> &FourierFilter {
        &self.filter
    }

    pub fn previous_filter(&self) -> Option<&FourierFilter> {
        self.prev_filter.as_ref()
    }

    pub fn memory(&self) -> &SampleMemory {
        &self.memory
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.cfg
    }

    pub fn grid(&self) -> &GridFft {
        &self.fft
    }

    pub fn label(&self) -> &LabelFunction {
        &self.label
    }

    pub fn system(&self) -> NormalSystem<'_> {
        NormalSystem {
            fft: &self.fft,
            memory: &self.memory,
            label: &self.label,
            reg: &self.reg,
            cost_sensitive: self.cfg.cost_sensitive,
        }
    }

    /// Search region size in image pixels at the current scale.
    pub fn search_size(&self) -> [f64; 2] {
        [self.base_size[0] * self.scale, self.base_size[1] * self.scale]
    }

    fn features_at(&self, frame: &ImageBuffer, center: [f64; 2], size: [f64; 2]) -> Result<FeatureStack> {
        let patch = extract_patch(frame, center, size, self.patch_px)?;
        let mut x = assemble_features(&patch, &self.cfg.features)?;
        x.scale(self.gain);
        Ok(x)
    }

    /// Confidence map of the current filter on a search region centered at
    /// `center` (index coordinates) with the given size in pixels.
    pub fn confidence_at(&self, frame: &ImageBuffer, center: [f64; 2], size: [f64; 2]) -> Result<ConfidenceMap> {
        let x = self.features_at(frame, center, size)?;
        apply_filter(&self.fft, &self.filter, &x)
    }

    /// Maximum response of this tracker's filter on a candidate box.
    pub fn score_box(&self, frame: &ImageBuffer, candidate: &BoundingBox) -> Result<f64> {
        let [cx, cy] = candidate.center();
        let size = [candidate.w * self.cfg.search_scale, candidate.h * self.cfg.search_scale];
        Ok(self.confidence_at(frame, [cx - 0.5, cy - 0.5], size)?.max())
    }

    fn check_frame(&self, frame: &ImageBuffer) -> Result<()> {
        if frame.width() < self.patch_px[0] || frame.height() < self.patch_px[1] {
            return Err(invalid(format!(
                "frame {}x{} is smaller than the {}x{} search patch",
                frame.width(),
                frame.height(),
                self.patch_px[0],
                self.patch_px[1]
            )));
        }
        Ok(())
    }
}

fn patch_geometry(bbox: &BoundingBox, cfg: &TrackerConfig) -> Result<([f64; 2], [usize; 2])> {
    let search = [bbox.w * cfg.search_scale, bbox.h * cfg.search_scale];
    let cell = cfg.features.cell_size;
    if cell == 0 {
        return Err(invalid("feature cell size must be positive"));
    }
    let factor = (cfg.template_area / (search[0] * search[1])).sqrt();
    let snap = |v: f64| (((v * factor) / cell as f64).round() as usize).max(2) * cell;
    Ok((search, [snap(search[0]), snap(search[1])]))
}

/// Learns the initial filter for `bbox` in `frame`: a baseline solve with a
/// uniform modulating factor, then one cost-sensitive refinement.
pub fn init_tracker(frame: &ImageBuffer, bbox: BoundingBox, cfg: &TrackerConfig) -> Result<TrackerHandle> {
    if !bbox.is_valid() {
        return Err(invalid(format!("degenerate box {bbox:?}")));
    }
    if cfg.scales.is_empty() || cfg.scales.iter().any(|&s| !(s > 0.0)) {
        return Err(invalid("tracker scales must be positive and nonempty"));
    }
    let (base_size, patch_px) = patch_geometry(&bbox, cfg)?;
    let cell = cfg.features.cell_size;
    let (rows, cols) = (patch_px[1] / cell, patch_px[0] / cell);
    let fft = GridFft::new(rows, cols);
    let target_cells = (rows * cols) as f64 / (cfg.search_scale * cfg.search_scale);
    let sigma = cfg.label_sigma_factor * target_cells.sqrt();
    let label = LabelFunction::gaussian(&fft, sigma)?;
    let reg = RegularizationWindow::quadratic(rows, cols, cfg.w_min, cfg.w_eta)?;
    let memory = SampleMemory::new(
        rows,
        cols,
        cfg.features.num_channels(),
        cfg.memory_size,
        cfg.learning_rate,
    )?;
    let mut handle = TrackerHandle {
        cfg: cfg.clone(),
        filter: FourierFilter::zeros(rows, cols, cfg.features.num_channels()),
        fft,
        label,
        reg,
        memory,
        prev_filter: None,
        bbox,
        base_size,
        scale: 1.0,
        patch_px,
        score: 0.0,
        init_score: 0.0,
        gain: 1.0,
    };
    handle.check_frame(frame)?;
    let [cx, cy] = bbox.center();
    let mut x = handle.features_at(frame, [cx - 0.5, cy - 0.5], base_size)?;
    handle.gain = x.unit_gain();
    x.scale(handle.gain);
    handle.memory.push_features(&handle.fft, &x)?;
    handle.memory.refresh_factors(&handle.fft, None, &handle.label)?;
    let baseline = {
        let mut sys = handle.system();
        sys.cost_sensitive = false;
        solve_filter(&sys, cfg.init_cg, None)?.filter
    };
    if cfg.cost_sensitive {
        handle
            .memory
            .refresh_factors(&handle.fft, Some(&baseline), &handle.label)?;
        let refined = solve_filter(&handle.system(), cfg.init_cg, Some(&baseline))?.filter;
        handle.prev_filter = Some(baseline);
        handle.filter = refined;
    } else {
        handle.filter = baseline;
    }
    handle.init_score = apply_filter(&handle.fft, &handle.filter, &x)?.max();
    handle.score = handle.init_score;
    Ok(handle)
}

/// Three-point parabolic offset of a peak, in `[-0.5, 0.5]`. The parabola is
/// fitted to log responses when all three are positive, which is exact for a
/// Gaussian-shaped peak.
fn parabolic_offset(left: f64, mid: f64, right: f64) -> f64 {
    let (left, mid, right) = if left > 0.0 && mid > 0.0 && right > 0.0 {
        (left.ln(), mid.ln(), right.ln())
    } else {
        (left, mid, right)
    };
    let denom = left - 2.0 * mid + right;
    if denom >= 0.0 {
        return 0.0;
    }
    (0.5 * (left - right) / denom).clamp(-0.5, 0.5)
}

/// Locates the target in `frame` over the configured scales and moves the
/// handle there. Returns the new box and the tracking score.
pub fn track(handle: &mut TrackerHandle, frame: &ImageBuffer) -> Result<(BoundingBox, f64)> {
    handle.check_frame(frame)?;
    let [cx, cy] = handle.bbox.center();
    let center = [cx - 0.5, cy - 0.5];
    let mut best: Option<(f64, f64, ConfidenceMap)> = None;
    for &s in &handle.cfg.scales {
        let size = handle.search_size().map(|v| v * s);
        let map = handle.confidence_at(frame, center, size)?;
        let peak = map.max();
        if best.as_ref().is_none_or(|(_, p, _)| peak > *p) {
            best = Some((s, peak, map));
        }
    }
    let (s, peak, map) = best.expect("at least one scale");
    let (r, c, _) = map.peak();
    let (rows, cols) = (map.rows, map.cols);
    let dr = if rows >= 3 {
        parabolic_offset(
            map.at((r + rows - 1) % rows, c),
            map.at(r, c),
            map.at((r + 1) % rows, c),
        )
    } else {
        0.0
    };
    let dc = if cols >= 3 {
        parabolic_offset(
            map.at(r, (c + cols - 1) % cols),
            map.at(r, c),
            map.at(r, (c + 1) % cols),
        )
    } else {
        0.0
    };
    let wrap = |p: f64, n: usize| {
        let half = n as f64 / 2.0;
        let mut v = p - (n / 2) as f64;
        if v >= half {
            v -= n as f64;
        } else if v < -half {
            v += n as f64;
        }
        v
    };
    let shift_r = wrap(r as f64 + dr, rows);
    let shift_c = wrap(c as f64 + dc, cols);
    let size = handle.search_size().map(|v| v * s);
    let px_per_cell_x = size[0] / cols as f64;
    let px_per_cell_y = size[1] / rows as f64;
    let new_center = [cx + shift_c * px_per_cell_x, cy + shift_r * px_per_cell_y];
    handle.scale *= s;
    let w = handle.base_size[0] / handle.cfg.search_scale * handle.scale;
    let h = handle.base_size[1] / handle.cfg.search_scale * handle.scale;
    handle.bbox = BoundingBox::from_center(new_center, w, h);
    handle.score = peak;
    Ok((handle.bbox, peak))
}

/// Adds the sample at the current position and refines the filter by a
/// warm-started solve, with modulating factors from the filter in use so far.
pub fn update_model(handle: &mut TrackerHandle, frame: &ImageBuffer) -> Result<()> {
    handle.check_frame(frame)?;
    let [cx, cy] = handle.bbox.center();
    let x = handle.features_at(frame, [cx - 0.5, cy - 0.5], handle.search_size())?;
    handle.memory.push_features(&handle.fft, &x)?;
    let current = handle.filter.clone();
    if handle.cfg.cost_sensitive {
        handle
            .memory
            .refresh_factors(&handle.fft, Some(&current), &handle.label)?;
    }
    let next = solve_filter(&handle.system(), handle.cfg.update_cg, Some(&current))?.filter;
    handle.prev_filter = Some(current);
    handle.filter = next;
    Ok(())
}
