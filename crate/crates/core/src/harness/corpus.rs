use std::path::Path;

use image::{ColorType, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// `[3, H, W]` in `[0, 1]` from interleaved 8-bit RGB.
pub fn image_from_rgb8(width: usize, height: usize, rgb: &[u8]) -> Result<Tensor> {
    if rgb.len() != width * height * 3 {
        return Err(Error::Shape(format!(
            "{} bytes for a {width}x{height} RGB image",
            rgb.len()
        )));
    }
    let plane = width * height;
    Tensor::from_fn(&[3, height, width], |i| {
        let (c, p) = (i / plane, i % plane);
        rgb[p * 3 + c] as f32 / 255.0
    })
}

/// Clamp to `[0, 1]` and quantize with round-half-away-from-zero.
pub fn image_to_rgb8(img: &Tensor) -> Result<(usize, usize, Vec<u8>)> {
    let (c, h, w) = img.dims3()?;
    if c != 3 {
        return Err(Error::Shape(format!("expected 3 channels, got {c}")));
    }
    let plane = h * w;
    let mut out = vec![0u8; plane * 3];
    for (i, &v) in img.data().iter().enumerate() {
        let (ch, p) = (i / plane, i % plane);
        out[p * 3 + ch] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    }
    Ok((w, h, out))
}

pub fn read_png(path: &Path) -> Result<Tensor> {
    let wrap = |source| Error::Image {
        path: path.to_path_buf(),
        source,
    };
    let img = image::ImageReader::open(path)?
        .with_guessed_format()?
        .decode()
        .map_err(wrap)?;
    if !matches!(
        img.color(),
        ColorType::Rgb8 | ColorType::Rgba8 | ColorType::L8 | ColorType::La8
    ) {
        return Err(Error::InvalidArgument(format!(
            "{}: only 8-bit images are supported, got {:?}",
            path.display(),
            img.color()
        )));
    }
    let rgb = img.to_rgb8();
    image_from_rgb8(rgb.width() as usize, rgb.height() as usize, rgb.as_raw())
}

pub fn write_png(path: &Path, img: &Tensor) -> Result<()> {
    let (w, h, bytes) = image_to_rgb8(img)?;
    let buf = RgbImage::from_raw(w as u32, h as u32, bytes).expect("buffer sized for image");
    buf.save_with_format(path, image::ImageFormat::Png)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// All `*.png` files in a directory, sorted by file name.
pub fn load_png_dir(dir: &Path) -> Result<Vec<Tensor>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::EmptyCorpus(format!(
            "no PNG files in {}",
            dir.display()
        )));
    }
    paths.iter().map(|p| read_png(p)).collect()
}

fn random_colour(rng: &mut ChaCha8Rng) -> [f32; 3] {
    [
        rng.random_range(0.05..1.0),
        rng.random_range(0.05..1.0),
        rng.random_range(0.05..1.0),
    ]
}

/// Procedural scenes: a colour gradient, a few filled shapes and a stripe
/// texture, quantized to 8 bits so they match what a PNG round trip yields.
pub fn synthetic_corpus(count: usize, size: usize, seed: u64) -> Vec<Tensor> {
    (0..count)
        .map(|i| {
            let mut rng =
                ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9).wrapping_add(i as u64));
            synthetic_image(size, &mut rng)
        })
        .collect()
}

fn synthetic_image(size: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let n = size as f32;
    let (c0, c1) = (random_colour(rng), random_colour(rng));
    let angle: f32 = rng.random_range(0.0..std::f32::consts::TAU);
    let (dx, dy) = (angle.cos(), angle.sin());

    let mut shapes = Vec::new();
    for _ in 0..rng.random_range(2..6) {
        let circle = rng.random_bool(0.5);
        let (cx, cy) = (rng.random_range(0.0..n), rng.random_range(0.0..n));
        let r = rng.random_range(0.08 * n..0.3 * n);
        shapes.push((circle, cx, cy, r, random_colour(rng)));
    }
    let freq = rng.random_range(0.15..0.8);
    let amp = rng.random_range(0.02..0.12);
    let stripe_angle: f32 = rng.random_range(0.0..std::f32::consts::PI);
    let (sx, sy) = (stripe_angle.cos(), stripe_angle.sin());

    let plane = size * size;
    let mut data = vec![0f32; 3 * plane];
    for y in 0..size {
        for x in 0..size {
            let (xf, yf) = (x as f32, y as f32);
            let t = (((xf - n / 2.0) * dx + (yf - n / 2.0) * dy) / n + 0.5).clamp(0.0, 1.0);
            let mut px = [0f32; 3];
            for c in 0..3 {
                px[c] = c0[c] * (1.0 - t) + c1[c] * t;
            }
            for &(circle, cx, cy, r, col) in &shapes {
                let inside = if circle {
                    (xf - cx).powi(2) + (yf - cy).powi(2) <= r * r
                } else {
                    (xf - cx).abs() <= r && (yf - cy).abs() <= 0.6 * r
                };
                if inside {
                    px = col;
                }
            }
            let stripe = amp * (freq * (xf * sx + yf * sy)).sin();
            for c in 0..3 {
                let v = (px[c] + stripe).clamp(0.0, 1.0);
                data[c * plane + y * size + x] = (v * 255.0).round() / 255.0;
            }
        }
    }
    Tensor::new(&[3, size, size], data).expect("sized buffer")
}
