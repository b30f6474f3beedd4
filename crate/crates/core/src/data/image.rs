//! 8-bit RGB image files: PNG through the `image` crate and binary PPM
//! (`P6`, maxval 255) read and written directly.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Image tensors are `(1, 3, h, w)` with values in `[0, 1]`.
pub fn load_image<T: Element>(path: &Path) -> Result<Tensor<T>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"P6") {
        let (w, h, pixels) = parse_ppm(&bytes).ok_or_else(|| Error::TruncatedImage(path.to_path_buf()))?;
        return Ok(from_interleaved(w, h, pixels));
    }
    let format = image::guess_format(&bytes).map_err(|_| Error::UnsupportedFormat(path.to_path_buf()))?;
    if format != image::ImageFormat::Png {
        return Err(Error::UnsupportedFormat(path.to_path_buf()));
    }
    let img = image::load_from_memory_with_format(&bytes, format).map_err(|e| match e {
        image::ImageError::Unsupported(_) => Error::UnsupportedFormat(path.to_path_buf()),
        _ => Error::TruncatedImage(path.to_path_buf()),
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = rgb.dimensions();
    Ok(from_interleaved(w as usize, h as usize, rgb.as_raw()))
}

/// Writes PNG, or PPM when the extension is `.ppm`.
pub fn save_image<T: Element>(image: &Tensor<T>, path: &Path) -> Result<()> {
    let s = image.shape();
    if s.n != 1 || s.c != 3 {
        return Err(Error::invalid("save_image", format!("expected (1, 3, h, w), got {s}")));
    }
    let pixels = to_interleaved(image);
    let is_ppm = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm"));
    if is_ppm {
        let mut out = format!("P6\n{} {}\n255\n", s.w, s.h).into_bytes();
        out.extend_from_slice(&pixels);
        fs::write(path, out).map_err(|e| Error::io(path, e))
    } else {
        image::save_buffer_with_format(
            path,
            &pixels,
            s.w as u32,
            s.h as u32,
            image::ColorType::Rgb8,
            image::ImageFormat::Png,
        )
        .map_err(Error::from)
    }
}

/// `round(clamp(v, 0, 1) * 255)`.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn from_interleaved<T: Element>(w: usize, h: usize, pixels: &[u8]) -> Tensor<T> {
    Tensor::from_fn([1, 3, h, w], |[_, c, y, x]| {
        T::lit(f64::from(pixels[(y * w + x) * 3 + c]) / 255.0)
    })
}

fn to_interleaved<T: Element>(image: &Tensor<T>) -> Vec<u8> {
    let s = image.shape();
    let mut out = vec![0; s.h * s.w * 3];
    for c in 0..3 {
        for (i, v) in image.plane(0, c).iter().enumerate() {
            out[i * 3 + c] = quantize(v.to_f64_lossy());
        }
    }
    out
}

/// Header tokens are separated by whitespace, `#` comments run to the end
/// of the line, and one whitespace byte precedes the raster.
fn parse_ppm(bytes: &[u8]) -> Option<(usize, usize, &[u8])> {
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in &mut fields {
        loop {
            match bytes.get(pos)? {
                b'#' => {
                    while *bytes.get(pos)? != b'\n' {
                        pos += 1;
                    }
                }
                b if b.is_ascii_whitespace() => pos += 1,
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos)?.is_ascii_digit() {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos]).ok()?.parse().ok()?;
    }
    let [w, h, maxval] = fields;
    if maxval != 255 || w == 0 || h == 0 || !bytes.get(pos)?.is_ascii_whitespace() {
        return None;
    }
    let raster = bytes.get(pos + 1..pos + 1 + w * h * 3)?;
    Some((w, h, raster))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ppm_header_with_comment() {
        let mut bytes = b"P6 # made by hand\n1 1\n255\n".to_vec();
        bytes.extend_from_slice(&[0, 128, 255]);
        let (w, h, px) = parse_ppm(&bytes).unwrap();
        assert_eq!((w, h, px), (1, 1, &[0u8, 128, 255][..]));
    }

    #[test]
    fn short_raster_is_rejected() {
        assert!(parse_ppm(b"P6\n2 2\n255\n\x00\x01").is_none());
        assert!(parse_ppm(b"P6\n2 2\n65535\n").is_none());
    }

    #[test]
    fn quantize_rounds_and_clamps() {
        assert_eq!(quantize(-0.5), 0);
        assert_eq!(quantize(2.0), 255);
        assert_eq!(quantize(0.5), 128);
        assert_eq!(quantize(1.0 / 255.0), 1);
    }
}
