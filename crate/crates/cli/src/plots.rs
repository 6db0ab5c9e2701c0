//! Static PNG renderings of evaluation CSVs.

use std::path::Path;

use image::{Rgb, RgbImage};
use mixgan_core::evalsuite::{CorrelationMatrix, DimwiseRow};

const SIZE: u32 = 480;
const MARGIN: u32 = 24;

fn put_square(img: &mut RgbImage, x: i64, y: i64, r: i64, c: Rgb<u8>) {
    for dy in -r..=r {
        for dx in -r..=r {
            let (px, py) = (x + dx, y + dy);
            if px >= 0 && py >= 0 && (px as u32) < img.width() && (py as u32) < img.height() {
                img.put_pixel(px as u32, py as u32, c);
            }
        }
    }
}

/// Real versus synthetic success probability, one point per (channel, hour).
pub fn dimwise_scatter(rows: &[DimwiseRow], path: &Path) -> image::ImageResult<()> {
    let mut img = RgbImage::from_pixel(SIZE, SIZE, Rgb([255, 255, 255]));
    let span = (SIZE - 2 * MARGIN) as f64;
    let to_px = |p: f64| (MARGIN as f64 + p.clamp(0.0, 1.0) * span).round() as i64;
    for i in 0..=(SIZE - 2 * MARGIN) {
        let x = (MARGIN + i) as i64;
        let y = (SIZE - MARGIN - i) as i64;
        put_square(&mut img, x, y, 0, Rgb([190, 190, 190]));
        put_square(&mut img, x, (SIZE - MARGIN) as i64, 0, Rgb([0, 0, 0]));
        put_square(&mut img, MARGIN as i64, y, 0, Rgb([0, 0, 0]));
    }
    for r in rows {
        let x = to_px(r.p_real);
        let y = SIZE as i64 - to_px(r.p_syn);
        put_square(&mut img, x, y, 2, Rgb([31, 119, 180]));
    }
    img.save(path)
}

fn diverging(v: f64) -> Rgb<u8> {
    let v = v.clamp(-1.0, 1.0);
    let fade = |a: f64| (255.0 * (1.0 - a)).round() as u8;
    if v >= 0.0 {
        Rgb([255, fade(v), fade(v)])
    } else {
        Rgb([fade(-v), fade(-v), 255])
    }
}

/// Correlation heatmap, red for positive and blue for negative.
pub fn correlation_heatmap(m: &CorrelationMatrix, path: &Path) -> image::ImageResult<()> {
    let n = m.values.len().max(1) as u32;
    let cell = ((SIZE - 2 * MARGIN) / n).max(1);
    let side = 2 * MARGIN + cell * n;
    let mut img = RgbImage::from_pixel(side, side, Rgb([255, 255, 255]));
    for (i, row) in m.values.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let c = diverging(v);
            for dy in 0..cell {
                for dx in 0..cell {
                    img.put_pixel(MARGIN + j as u32 * cell + dx, MARGIN + i as u32 * cell + dy, c);
                }
            }
        }
    }
    img.save(path)
}
