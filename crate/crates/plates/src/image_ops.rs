//! Raster helpers on top of `image::RgbImage`.

use std::io::{BufRead, BufReader, Seek, Write};
use std::path::Path;

use image::codecs::pnm::{PnmDecoder, PnmEncoder, PnmSubtype, SampleEncoding};
use image::imageops::{self, FilterType};
use image::{ExtendedColorType, ImageEncoder, Rgb, RgbImage};

pub type Image = RgbImage;
pub type Color = [u8; 3];

/// Binary PPM (P6).
pub fn write_ppm<W: Write>(out: W, img: &Image) -> image::ImageResult<()> {
    PnmEncoder::new(out)
        .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
        .write_image(img.as_raw(), img.width(), img.height(), ExtendedColorType::Rgb8)
}

pub fn read_ppm<R: BufRead + Seek>(input: R) -> image::ImageResult<Image> {
    let decoder = PnmDecoder::new(input)?;
    Ok(image::DynamicImage::from_decoder(decoder)?.to_rgb8())
}

pub fn save_ppm(path: &Path, img: &Image) -> image::ImageResult<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_ppm(&mut f, img)?;
    f.flush()?;
    Ok(())
}

pub fn load_ppm(path: &Path) -> image::ImageResult<Image> {
    read_ppm(BufReader::new(std::fs::File::open(path)?))
}

pub fn luminance(p: &Rgb<u8>) -> f64 {
    0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64
}

/// Bilinear resize; returns a copy when the size is unchanged.
pub fn resize(img: &Image, width: u32, height: u32) -> Image {
    imageops::resize(img, width.max(1), height.max(1), FilterType::Triangle)
}

/// Gaussian blur; `sigma <= 0` is a no-op.
pub fn gaussian_blur(img: &Image, sigma: f64) -> Image {
    if sigma <= 0.0 {
        img.clone()
    } else {
        imageops::blur(img, sigma as f32)
    }
}

/// Rotates by `deg` (counter-clockwise) about the image center with bilinear
/// sampling; uncovered pixels take `fill`.
pub fn rotate(img: &Image, deg: f64, fill: Color) -> Image {
    if deg == 0.0 {
        return img.clone();
    }
    let (w, h) = img.dimensions();
    let (cx, cy) = (w as f64 / 2.0, h as f64 / 2.0);
    let (sin, cos) = deg.to_radians().sin_cos();
    let sample = |x: i64, y: i64| -> [f64; 3] {
        if x < 0 || y < 0 || x >= w as i64 || y >= h as i64 {
            fill.map(f64::from)
        } else {
            img.get_pixel(x as u32, y as u32).0.map(f64::from)
        }
    };
    RgbImage::from_fn(w, h, |x, y| {
        let dx = x as f64 + 0.5 - cx;
        let dy = y as f64 + 0.5 - cy;
        // inverse rotation (image y axis points down)
        let sx = cos * dx - sin * dy + cx - 0.5;
        let sy = sin * dx + cos * dy + cy - 0.5;
        let (x0, y0) = (sx.floor(), sy.floor());
        let (fx, fy) = (sx - x0, sy - y0);
        let (x0, y0) = (x0 as i64, y0 as i64);
        let p00 = sample(x0, y0);
        let p10 = sample(x0 + 1, y0);
        let p01 = sample(x0, y0 + 1);
        let p11 = sample(x0 + 1, y0 + 1);
        let mut out = [0u8; 3];
        for c in 0..3 {
            let top = p00[c] * (1.0 - fx) + p10[c] * fx;
            let bottom = p01[c] * (1.0 - fx) + p11[c] * fx;
            out[c] = (top * (1.0 - fy) + bottom * fy).round().clamp(0.0, 255.0) as u8;
        }
        Rgb(out)
    })
}

/// Down- then up-samples to drop effective resolution; `factor >= 1` is a
/// no-op.
pub fn degrade_resolution(img: &Image, factor: f64) -> Image {
    if factor >= 1.0 {
        return img.clone();
    }
    let (w, h) = img.dimensions();
    let small = resize(
        img,
        ((w as f64 * factor).round() as u32).max(1),
        ((h as f64 * factor).round() as u32).max(1),
    );
    resize(&small, w, h)
}

/// Per-channel variance over all pixels, averaged across channels.
pub fn pixel_variance(img: &Image) -> f64 {
    let n = (img.width() * img.height()) as f64;
    let mut total = 0.0;
    for c in 0..3 {
        let mean = img.pixels().map(|p| p[c] as f64).sum::<f64>() / n;
        total += img.pixels().map(|p| (p[c] as f64 - mean).powi(2)).sum::<f64>() / n;
    }
    total / 3.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_round_trip_is_p6() {
        let img = RgbImage::from_fn(3, 2, |x, y| Rgb([x as u8 * 10, y as u8 * 20, 7]));
        let mut buf = Vec::new();
        write_ppm(&mut buf, &img).unwrap();
        assert!(buf.starts_with(b"P6"));
        let back = read_ppm(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back, img);
    }

    #[test]
    fn identity_transforms() {
        let img = RgbImage::from_fn(9, 5, |x, y| Rgb([(x * 20) as u8, (y * 40) as u8, 3]));
        assert_eq!(resize(&img, 9, 5), img);
        assert_eq!(rotate(&img, 0.0, [0, 0, 0]), img);
        assert_eq!(gaussian_blur(&img, 0.0), img);
        assert_eq!(degrade_resolution(&img, 1.0), img);
    }

    #[test]
    fn half_turn_flips_image() {
        let img = RgbImage::from_fn(4, 3, |x, y| Rgb([(x * 50) as u8, (y * 80) as u8, 0]));
        let r = rotate(&img, 180.0, [0, 0, 0]);
        for (x, y, p) in r.enumerate_pixels() {
            assert_eq!(*p, *img.get_pixel(3 - x, 2 - y));
        }
    }
}
