//! Image buffers, boxes, sub-pixel patch sampling and frame file I/O.
//!
//! Images are stored as row-major interleaved reals in `[0, 1]`. Pixel
//! coordinates follow the index convention: the pixel at column `i` has its
//! center at `x = i`.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{invalid, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(invalid(format!("unsupported channel count {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(invalid(format!(
                "data length {} does not match {width}x{height}x{channels}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(invalid(format!("pixel value {v} outside [0,1]")));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        assert!(channels == 1 || channels == 3);
        let value = value.clamp(0.0, 1.0);
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    /// Builds an image from 8-bit samples, dividing by 255.
    pub fn from_u8(width: usize, height: usize, channels: usize, bytes: &[u8]) -> Result<Self> {
        Self::new(
            width,
            height,
            channels,
            bytes.iter().map(|&b| f64::from(b) / 255.0).collect(),
        )
    }

    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .map(|v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect()
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    /// Writes a value, clamped into `[0, 1]`.
    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v.clamp(0.0, 1.0);
    }

    pub fn to_gray(&self) -> ImageBuffer {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| (0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]).clamp(0.0, 1.0))
            .collect();
        ImageBuffer {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    pub fn to_rgb(&self) -> ImageBuffer {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        ImageBuffer {
            width: self.width,
            height: self.height,
            channels: 3,
            data,
        }
    }

    /// Bilinear sample at index coordinates with replicate-border padding.
    pub fn sample(&self, x: f64, y: f64, c: usize) -> f64 {
        let xc = x.clamp(0.0, (self.width - 1) as f64);
        let yc = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = xc.floor() as usize;
        let y0 = yc.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = xc - x0 as f64;
        let fy = yc - y0 as f64;
        let top = self.get(x0, y0, c) * (1.0 - fx) + self.get(x1, y0, c) * fx;
        let bottom = self.get(x0, y1, c) * (1.0 - fx) + self.get(x1, y1, c) * fx;
        top * (1.0 - fy) + bottom * fy
    }
}

/// Axis-aligned box with real-valued top-left corner and size in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        if !(w > 0.0 && h > 0.0) || !x.is_finite() || !y.is_finite() {
            return Err(invalid(format!("degenerate box ({x}, {y}, {w}, {h})")));
        }
        Ok(Self { x, y, w, h })
    }

    pub fn from_center(center: [f64; 2], w: f64, h: f64) -> Self {
        Self {
            x: center[0] - w / 2.0,
            y: center[1] - h / 2.0,
            w,
            h,
        }
    }

    pub fn center(&self) -> [f64; 2] {
        [self.x + self.w / 2.0, self.y + self.h / 2.0]
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn diagonal(&self) -> f64 {
        self.w.hypot(self.h)
    }

    pub fn is_valid(&self) -> bool {
        self.w > 0.0 && self.h > 0.0 && self.x.is_finite() && self.y.is_finite()
    }
}

/// Intersection over union of two boxes.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let ix = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let iy = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

/// Samples a `size` region around `center` (index coordinates) into an
/// `out_size` image with bilinear interpolation.
pub fn extract_patch(img: &ImageBuffer, center: [f64; 2], size: [f64; 2], out_size: [usize; 2]) -> Result<ImageBuffer> {
    if !(size[0] > 0.0 && size[1] > 0.0) || out_size[0] == 0 || out_size[1] == 0 {
        return Err(invalid(format!(
            "patch size {size:?} / output size {out_size:?} must be positive"
        )));
    }
    let [ow, oh] = out_size;
    let step_x = size[0] / ow as f64;
    let step_y = size[1] / oh as f64;
    let half_x = (ow as f64 - 1.0) / 2.0;
    let half_y = (oh as f64 - 1.0) / 2.0;
    let c = img.channels;
    let mut data = Vec::with_capacity(ow * oh * c);
    for v in 0..oh {
        let sy = center[1] + (v as f64 - half_y) * step_y;
        for u in 0..ow {
            let sx = center[0] + (u as f64 - half_x) * step_x;
            for ch in 0..c {
                data.push(img.sample(sx, sy, ch));
            }
        }
    }
    Ok(ImageBuffer {
        width: ow,
        height: oh,
        channels: c,
        data,
    })
}

/// Crops `bbox` out of `img` and resamples it to `out_size`.
pub fn crop_box(img: &ImageBuffer, bbox: &BoundingBox, out_size: [usize; 2]) -> Result<ImageBuffer> {
    let [cx, cy] = bbox.center();
    extract_patch(img, [cx - 0.5, cy - 0.5], [bbox.w, bbox.h], out_size)
}

pub fn resize(img: &ImageBuffer, width: usize, height: usize) -> Result<ImageBuffer> {
    let center = [(img.width as f64 - 1.0) / 2.0, (img.height as f64 - 1.0) / 2.0];
    extract_patch(img, center, [img.width as f64, img.height as f64], [width, height])
}

fn next_token(bytes: &[u8], pos: &mut usize) -> Option<String> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    (start < *pos).then(|| String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

/// Decodes binary PPM (P6) or PGM (P5) with maxval up to 255.
pub fn decode_pnm(bytes: &[u8]) -> Result<ImageBuffer> {
    let mut pos = 0;
    let magic = next_token(bytes, &mut pos).ok_or_else(|| invalid("empty image file"))?;
    let channels = match magic.as_str() {
        "P6" => 3,
        "P5" => 1,
        other => return Err(invalid(format!("unsupported PNM magic {other}"))),
    };
    let mut header = [0usize; 3];
    for slot in header.iter_mut() {
        let tok = next_token(bytes, &mut pos).ok_or_else(|| invalid("truncated PNM header"))?;
        *slot = tok
            .parse()
            .map_err(|_| invalid(format!("bad PNM header field {tok}")))?;
    }
    let [width, height, maxval] = header;
    if maxval == 0 || maxval > 255 {
        return Err(invalid(format!("unsupported PNM maxval {maxval}")));
    }
    pos += 1;
    let n = width * height * channels;
    if bytes.len() < pos + n {
        return Err(invalid("truncated PNM pixel data"));
    }
    let scale = maxval as f64;
    let data = bytes[pos..pos + n]
        .iter()
        .map(|&b| (f64::from(b) / scale).min(1.0))
        .collect();
    ImageBuffer::new(width, height, channels, data)
}

pub fn encode_pnm(img: &ImageBuffer) -> Vec<u8> {
    let magic = if img.channels == 3 { "P6" } else { "P5" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.to_u8());
    out
}

pub fn write_pnm(img: &ImageBuffer, path: &Path) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_pnm(img))?;
    Ok(())
}

/// Loads a frame from disk. PPM/PGM are always supported; PNG and JPEG
/// require the `codecs` feature.
pub fn load_image(path: &Path) -> Result<ImageBuffer> {
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    match ext.as_str() {
        "ppm" | "pgm" | "pnm" => decode_pnm(&fs::read(path)?),
        #[cfg(feature = "codecs")]
        "png" | "jpg" | "jpeg" => {
            let img = image::open(path)
                .map_err(|e| Error::InvalidArgument(format!("{}: {e}", path.display())))?
                .to_rgb8();
            let (w, h) = img.dimensions();
            ImageBuffer::from_u8(w as usize, h as usize, 3, img.as_raw())
        }
        _ => Err(Error::InvalidArgument(format!(
            "unsupported image format: {}",
            path.display()
        ))),
    }
}
