//! Minimal deterministic rasterizers: scatter plots and image contact sheets.

use std::path::Path;

use crate::data::Image;
use crate::error::Result;

/// Class palette shared with the toy renderer's hue walk.
fn class_color(class: usize) -> [f32; 3] {
    crate::data::toy_class_color(class)
}

/// Render labeled 2-d points to a square scatter PNG with 3×3 dots.
pub fn scatter_png(
    points: &[(f64, f64, usize)],
    size: usize,
    path: &Path,
) -> Result<()> {
    let mut img = Image::new(size, size);
    img.data.iter_mut().for_each(|v| *v = 1.0);
    if points.is_empty() {
        return img.save_png(path);
    }
    let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y, _) in points {
        min_x = min_x.min(x);
        max_x = max_x.max(x);
        min_y = min_y.min(y);
        max_y = max_y.max(y);
    }
    let pad_x = ((max_x - min_x) * 0.05).max(1e-12);
    let pad_y = ((max_y - min_y) * 0.05).max(1e-12);
    min_x -= pad_x;
    max_x += pad_x;
    min_y -= pad_y;
    max_y += pad_y;
    let margin = 4usize;
    let span = (size - 2 * margin) as f64;
    for &(x, y, class) in points {
        let px = margin as f64 + (x - min_x) / (max_x - min_x) * span;
        let py = margin as f64 + (1.0 - (y - min_y) / (max_y - min_y)) * span;
        let (cx, cy) = (px.round() as isize, py.round() as isize);
        let color = class_color(class);
        for dy in -1..=1isize {
            for dx in -1..=1isize {
                let (ix, iy) = (cx + dx, cy + dy);
                if ix >= 0 && iy >= 0 && (ix as usize) < size && (iy as usize) < size {
                    img.set_px(iy as usize, ix as usize, color);
                }
            }
        }
    }
    img.save_png(path)
}

/// Tile images into a contact sheet with 1px separators.
pub fn image_grid(images: &[Image], cols: usize) -> Image {
    assert!(!images.is_empty() && cols >= 1);
    let (h, w) = (images[0].h, images[0].w);
    let rows = images.len().div_ceil(cols);
    let mut grid = Image::new(rows * (h + 1) + 1, cols * (w + 1) + 1);
    grid.data.iter_mut().for_each(|v| *v = 0.12);
    for (i, img) in images.iter().enumerate() {
        let (r, c) = (i / cols, i % cols);
        let (oy, ox) = (r * (h + 1) + 1, c * (w + 1) + 1);
        for y in 0..img.h.min(h) {
            for x in 0..img.w.min(w) {
                grid.set_px(oy + y, ox + x, img.px(y, x));
            }
        }
    }
    grid
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn scatter_and_grid_smoke() {
        let dir = tempfile::tempdir().unwrap();
        let pts = vec![(0.0, 0.0, 0), (1.0, 1.0, 1), (-0.5, 0.3, 2)];
        let p = dir.path().join("scatter.png");
        scatter_png(&pts, 64, &p).unwrap();
        assert!(p.exists());

        let imgs = vec![Image::new(8, 8); 5];
        let grid = image_grid(&imgs, 3);
        assert_eq!(grid.w, 3 * 9 + 1);
        assert_eq!(grid.h, 2 * 9 + 1);
    }
}
