use dualtrack::imaging::{BoundingBox, ImageBuffer};
use dualtrack::Result;

/// Grayscale image of a row-major map, scaled so `lo` is black and `hi`
/// white, each cell drawn as a `zoom x zoom` block.
pub fn heat_image(values: &[f64], rows: usize, cols: usize, lo: f64, hi: f64, zoom: usize) -> Result<ImageBuffer> {
    let span = if hi > lo { hi - lo } else { 1.0 };
    let (w, h) = (cols * zoom, rows * zoom);
    let mut data = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..w {
            data[y * w + x] = ((values[(y / zoom) * cols + x / zoom] - lo) / span).clamp(0.0, 1.0);
        }
    }
    ImageBuffer::new(w, h, 1, data)
}

/// Fixed, well-separated color for a track id.
pub fn id_color(id: i64) -> [f64; 3] {
    let hue = (id.unsigned_abs() as f64 * 0.618_033_988_75).fract() * 6.0;
    let x = 1.0 - (hue % 2.0 - 1.0).abs();
    match hue as usize {
        0 => [1.0, x, 0.0],
        1 => [x, 1.0, 0.0],
        2 => [0.0, 1.0, x],
        3 => [0.0, x, 1.0],
        4 => [x, 0.0, 1.0],
        _ => [1.0, 0.0, x],
    }
}

/// Draws a two-pixel box outline, clipped to the image.
pub fn draw_box(img: &mut ImageBuffer, b: &BoundingBox, color: [f64; 3]) {
    let (w, h) = (img.width() as i64, img.height() as i64);
    let x0 = b.x.round() as i64;
    let y0 = b.y.round() as i64;
    let x1 = (b.x + b.w).round() as i64 - 1;
    let y1 = (b.y + b.h).round() as i64 - 1;
    let mut put = |x: i64, y: i64| {
        if x >= 0 && y >= 0 && x < w && y < h {
            for (c, v) in color.iter().enumerate() {
                img.set(x as usize, y as usize, c, *v);
            }
        }
    };
    for t in 0..2 {
        for x in x0..=x1 {
            put(x, y0 + t);
            put(x, y1 - t);
        }
        for y in y0..=y1 {
            put(x0 + t, y);
            put(x1 - t, y);
        }
    }
}

/// One line per weight: index, value and a bar of up to `width` marks.
pub fn bar_chart(weights: &[f64], width: usize) -> String {
    let mut out = String::new();
    for (t, w) in weights.iter().enumerate() {
        let n = (w.clamp(0.0, 1.0) * width as f64).round() as usize;
        out.push_str(&format!("t={:<3} {:.4} |{}\n", t + 1, w, "#".repeat(n)));
    }
    out
}
